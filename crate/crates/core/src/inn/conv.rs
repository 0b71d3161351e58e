//! 3x3 same-padding convolutions and the two-layer residual sub-networks
//! used inside coupling blocks, with hand-rolled backward passes.

use ndarray::{Array1, Array3, Array4};

use super::Real;

pub const LEAKY_SLOPE: f64 = 0.2;

/// 3x3 convolution, stride 1, zero padding 1 (spatial shape preserved).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// `[out_ch x in_ch x 3 x 3]`
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

/// Gradient of one convolution's parameters.
#[derive(Debug, Clone)]
pub struct Conv2dGrad<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Self {
            weight: Array4::zeros((out_ch, in_ch, 3, 3)),
            bias: Array1::zeros(out_ch),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (ic, h, w) = x.dim();
        debug_assert_eq!(ic, self.in_channels());
        let oc = self.out_channels();
        let mut y = Array3::zeros((oc, h, w));
        {
            let xs = x.as_slice().expect("standard layout");
            let ys = y.as_slice_mut().expect("standard layout");
            for o in 0..oc {
                let plane = &mut ys[o * h * w..(o + 1) * h * w];
                let b = self.bias[o];
                for v in plane.iter_mut() {
                    *v = b;
                }
                for i in 0..ic {
                    let src = &xs[i * h * w..(i + 1) * h * w];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = self.weight[(o, i, ky, kx)];
                            if wv != F::zero() {
                                acc_shifted(src, plane, h, w, wv, ky as isize - 1, kx as isize - 1);
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Returns the input gradient and parameter gradients for upstream
    /// gradient `gy`.
    pub fn backward(&self, x: &Array3<F>, gy: &Array3<F>) -> (Array3<F>, Conv2dGrad<F>) {
        let (ic, h, w) = x.dim();
        let oc = self.out_channels();
        debug_assert_eq!(gy.dim(), (oc, h, w));
        let mut gx = Array3::zeros((ic, h, w));
        let mut gw = Array4::zeros((oc, ic, 3, 3));
        let mut gb = Array1::zeros(oc);
        {
            let xs = x.as_slice().expect("standard layout");
            let gys = gy.as_slice().expect("standard layout");
            let gxs = gx.as_slice_mut().expect("standard layout");
            for o in 0..oc {
                let gy_plane = &gys[o * h * w..(o + 1) * h * w];
                gb[o] = gy_plane.iter().fold(F::zero(), |a, &v| a + v);
                for i in 0..ic {
                    let x_plane = &xs[i * h * w..(i + 1) * h * w];
                    let gx_plane = &mut gxs[i * h * w..(i + 1) * h * w];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (oy, ox) = (ky as isize - 1, kx as isize - 1);
                            gw[(o, i, ky, kx)] = dot_shifted(gy_plane, x_plane, h, w, oy, ox);
                            let wv = self.weight[(o, i, ky, kx)];
                            if wv != F::zero() {
                                acc_shifted(gy_plane, gx_plane, h, w, wv, -oy, -ox);
                            }
                        }
                    }
                }
            }
        }
        (gx, Conv2dGrad { weight: gw, bias: gb })
    }
}

/// `dst[y, x] += wv * src[y + oy, x + ox]` over valid indices.
fn acc_shifted<F: Real>(src: &[F], dst: &mut [F], h: usize, w: usize, wv: F, oy: isize, ox: isize) {
    let y0 = (-oy).max(0) as usize;
    let y1 = (h as isize - oy.max(0)) as usize;
    let x0 = (-ox).max(0) as usize;
    let x1 = (w as isize - ox.max(0)) as usize;
    if y1 <= y0 || x1 <= x0 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let sx0 = (x0 as isize + ox) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv = *dv + wv * *sv;
        }
    }
}

/// `sum_yx a[y, x] * b[y + oy, x + ox]` over valid indices. The reduction
/// runs over eight independent lanes (fixed order, so results stay
/// deterministic) to break the serial dependency chain.
fn dot_shifted<F: Real>(a: &[F], b: &[F], h: usize, w: usize, oy: isize, ox: isize) -> F {
    let y0 = (-oy).max(0) as usize;
    let y1 = (h as isize - oy.max(0)) as usize;
    let x0 = (-ox).max(0) as usize;
    let x1 = (w as isize - ox.max(0)) as usize;
    if y1 <= y0 || x1 <= x0 {
        return F::zero();
    }
    let mut lanes = [F::zero(); 8];
    let mut tail = F::zero();
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let sx0 = (x0 as isize + ox) as usize;
        let av = &a[y * w + x0..y * w + x1];
        let bv = &b[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        let mut chunks_a = av.chunks_exact(8);
        let mut chunks_b = bv.chunks_exact(8);
        for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
            for k in 0..8 {
                lanes[k] = lanes[k] + ca[k] * cb[k];
            }
        }
        for (x, y_) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
            tail = tail + *x * *y_;
        }
    }
    let mut acc = tail;
    for lane in lanes {
        acc = acc + lane;
    }
    acc
}

fn leaky<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::from_f64(LEAKY_SLOPE).unwrap() * x
    }
}

fn leaky_grad<F: Real>(pre: F) -> F {
    if pre > F::zero() {
        F::one()
    } else {
        F::from_f64(LEAKY_SLOPE).unwrap()
    }
}

/// Residual-style sub-network: conv3x3 -> leaky ReLU (0.2) -> conv3x3.
/// The final convolution is zero-initialized so a fresh stack is the
/// identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet<F> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
}

/// Saved pre-activation of the hidden layer; the input itself is kept by
/// the caller.
#[derive(Debug, Clone)]
pub struct SubnetTape<F> {
    pre: Array3<F>,
}

#[derive(Debug, Clone)]
pub struct SubnetGrads<F> {
    pub conv1: Conv2dGrad<F>,
    pub conv2: Conv2dGrad<F>,
}

impl<F: Real> Subnet<F> {
    pub fn zeros(in_ch: usize, out_ch: usize, hidden: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(hidden, in_ch),
            conv2: Conv2d::zeros(out_ch, hidden),
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let hidden = self.conv1.forward(x).mapv(leaky);
        self.conv2.forward(&hidden)
    }

    pub fn forward_tape(&self, x: &Array3<F>) -> (Array3<F>, SubnetTape<F>) {
        let pre = self.conv1.forward(x);
        let out = self.conv2.forward(&pre.mapv(leaky));
        (out, SubnetTape { pre })
    }

    pub fn backward(
        &self,
        x: &Array3<F>,
        tape: &SubnetTape<F>,
        gy: &Array3<F>,
    ) -> (Array3<F>, SubnetGrads<F>) {
        let hidden = tape.pre.mapv(leaky);
        let (gh, g2) = self.conv2.backward(&hidden, gy);
        let gpre = &gh * &tape.pre.mapv(leaky_grad);
        let (gx, g1) = self.conv1.backward(x, &gpre);
        (gx, SubnetGrads { conv1: g1, conv2: g2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_conv(oc: usize, ic: usize, seed: u64) -> Conv2d<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Conv2d::zeros(oc, ic);
        for v in c.weight.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in c.bias.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        c
    }

    fn random_input(ch: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((ch, h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut c = Conv2d::<f64>::zeros(2, 2);
        c.weight[(0, 0, 1, 1)] = 1.0;
        c.weight[(1, 1, 1, 1)] = 1.0;
        let x = random_input(2, 5, 7, 3);
        let y = c.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let c = random_conv(3, 2, 1);
        let x = random_input(2, 4, 4, 2);
        let y = c.forward(&x);
        // Direct quadruple loop as an oracle.
        for o in 0..3 {
            for yy in 0..4usize {
                for xx in 0..4usize {
                    let mut acc = c.bias[o];
                    for i in 0..2 {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy >= 0 && sy < 4 && sx >= 0 && sx < 4 {
                                    acc += c.weight[(o, i, ky, kx)]
                                        * x[(i, sy as usize, sx as usize)];
                                }
                            }
                        }
                    }
                    assert!((acc - y[(o, yy, xx)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut c = random_conv(2, 3, 7);
        let x = random_input(3, 4, 4, 8);
        let probe = random_input(2, 4, 4, 9);
        let loss = |c: &Conv2d<f64>, x: &Array3<f64>| (&c.forward(x) * &probe).sum();

        let (gx, gp) = c.backward(&x, &probe);
        let h = 1e-6;
        // Weight gradients.
        for idx in [(0, 0, 0, 0), (1, 2, 1, 1), (0, 1, 2, 2), (1, 0, 0, 2)] {
            let orig = c.weight[idx];
            c.weight[idx] = orig + h;
            let up = loss(&c, &x);
            c.weight[idx] = orig - h;
            let down = loss(&c, &x);
            c.weight[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gp.weight[idx]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        // Input gradients.
        let mut x2 = x.clone();
        for idx in [(0, 0, 0), (2, 3, 3), (1, 2, 1)] {
            let orig = x2[idx];
            x2[idx] = orig + h;
            let up = loss(&c, &x2);
            x2[idx] = orig - h;
            let down = loss(&c, &x2);
            x2[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gx[idx]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        // Bias gradient equals the probe plane sum.
        assert!((gp.bias[0] - probe.index_axis(ndarray::Axis(0), 0).sum()).abs() < 1e-12);
    }

    #[test]
    fn subnet_gradients_match_finite_differences() {
        let mut net = Subnet {
            conv1: random_conv(4, 2, 11),
            conv2: random_conv(3, 4, 12),
        };
        let x = random_input(2, 4, 4, 13);
        let probe = random_input(3, 4, 4, 14);
        let loss = |n: &Subnet<f64>, x: &Array3<f64>| (&n.forward(x) * &probe).sum();

        let (out, tape) = net.forward_tape(&x);
        assert_eq!(out, net.forward(&x));
        let (gx, grads) = net.backward(&x, &tape, &probe);

        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (3, 1, 2, 1)] {
            let orig = net.conv1.weight[idx];
            net.conv1.weight[idx] = orig + h;
            let up = loss(&net, &x);
            net.conv1.weight[idx] = orig - h;
            let down = loss(&net, &x);
            net.conv1.weight[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads.conv1.weight[idx]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        for idx in [(2, 3, 0, 1), (0, 0, 1, 1)] {
            let orig = net.conv2.weight[idx];
            net.conv2.weight[idx] = orig + h;
            let up = loss(&net, &x);
            net.conv2.weight[idx] = orig - h;
            let down = loss(&net, &x);
            net.conv2.weight[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads.conv2.weight[idx]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        let mut x2 = x.clone();
        for idx in [(1, 1, 2), (0, 3, 0)] {
            let orig = x2[idx];
            x2[idx] = orig + h;
            let up = loss(&net, &x2);
            x2[idx] = orig - h;
            let down = loss(&net, &x2);
            x2[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gx[idx]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }
}
