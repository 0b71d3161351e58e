//! Taped forward passes and hand-derived backpropagation through the
//! embedding and revealing directions. Both directions share the same
//! weights, so training accumulates gradients from each into one
//! [`StackGrads`].

use ndarray::Array3;

use super::conv::{SubnetGrads, SubnetTape};
use super::{es_gate, sigmoid, InnError, InnStack, Real, StackGrads, Subnet};

struct EmbedBlockTape<F> {
    /// Secret branch entering the block (`A_i`).
    secret_in: Array3<F>,
    /// Cover branch after the additive update (`I_{i+1}`).
    cover_mid: Array3<F>,
    /// Pre-gate activations (`E3(I_{i+1})`).
    gate_pre: Array3<F>,
    e1: SubnetTape<F>,
    e2: SubnetTape<F>,
    e3: SubnetTape<F>,
}

/// Saved intermediates of one embedding pass.
pub struct EmbedTape<F> {
    blocks: Vec<EmbedBlockTape<F>>,
}

/// Forward embed that records everything needed for backprop.
pub fn embed_with_tape<F: Real>(
    stack: &InnStack<F>,
    cover: &Array3<F>,
    secret: &Array3<F>,
) -> Result<(Array3<F>, Array3<F>, EmbedTape<F>), InnError> {
    stack.check_pair(cover, secret)?;
    let mut c = cover.clone();
    let mut s = secret.clone();
    let mut blocks = Vec::with_capacity(stack.block_count());
    for block in &stack.blocks {
        let (t1, e1_tape) = block.e1.forward_tape(&s);
        let cover_mid = &c + &t1;
        let (gate_pre, e3_tape) = block.e3.forward_tape(&cover_mid);
        let (add, e2_tape) = block.e2.forward_tape(&cover_mid);
        let gate = gate_pre.mapv(es_gate);
        let secret_out = &s * &gate + add;
        blocks.push(EmbedBlockTape {
            secret_in: s,
            cover_mid: cover_mid.clone(),
            gate_pre,
            e1: e1_tape,
            e2: e2_tape,
            e3: e3_tape,
        });
        c = cover_mid;
        s = secret_out;
    }
    Ok((c, s, EmbedTape { blocks }))
}

/// Backpropagates through an embedding pass. Returns gradients with
/// respect to the original cover and secret; parameter gradients are
/// accumulated into `grads`.
pub fn embed_backprop<F: Real>(
    stack: &InnStack<F>,
    tape: &EmbedTape<F>,
    d_container: &Array3<F>,
    d_latent: &Array3<F>,
    grads: &mut StackGrads<F>,
) -> (Array3<F>, Array3<F>) {
    let mut d_cover = d_container.clone();
    let mut d_secret = d_latent.clone();
    for i in (0..stack.block_count()).rev() {
        let block = &stack.blocks[i];
        let bt = &tape.blocks[i];

        let gate = bt.gate_pre.mapv(es_gate);
        let sig = bt.gate_pre.mapv(sigmoid);
        // secret_out = secret_in * gate + e2(cover_mid)
        let d_add = d_secret.clone();
        let d_gate = &d_secret * &bt.secret_in;
        let d_gate_pre = d_gate * &gate * &sig * &sig.mapv(|s| F::one() - s);
        let d_secret_scaled = &d_secret * &gate;

        let (g2x, g2) = block.e2.backward(&bt.cover_mid, &bt.e2, &d_add);
        let (g3x, g3) = block.e3.backward(&bt.cover_mid, &bt.e3, &d_gate_pre);
        // cover_mid = cover_in + e1(secret_in), and cover_mid also feeds
        // e2/e3, so their input gradients join the stream here.
        let d_cover_mid = &d_cover + &g2x + &g3x;
        let (g1x, g1) = block.e1.backward(&bt.secret_in, &bt.e1, &d_cover_mid);

        let gb = &mut grads.blocks[i];
        gb.e1.accumulate(&g1);
        gb.e2.accumulate(&g2);
        gb.e3.accumulate(&g3);
        d_cover = d_cover_mid;
        d_secret = d_secret_scaled + g1x;
    }
    (d_cover, d_secret)
}

struct RevealBlockTape<F> {
    /// Cover branch entering the reversed block (`I_{i+1}`).
    cover_in: Array3<F>,
    /// Recovered secret branch (`A_i`).
    secret_out: Array3<F>,
    gate_pre: Array3<F>,
    e1: SubnetTape<F>,
    e2: SubnetTape<F>,
    e3: SubnetTape<F>,
}

/// Saved intermediates of one reveal pass. Blocks are stored in execution
/// order, i.e. reverse stack order.
pub struct RevealTape<F> {
    blocks: Vec<RevealBlockTape<F>>,
}

/// Reveal pass that records everything needed for backprop.
pub fn reveal_with_tape<F: Real>(
    stack: &InnStack<F>,
    container: &Array3<F>,
    latent_seed: &Array3<F>,
) -> Result<(Array3<F>, Array3<F>, RevealTape<F>), InnError> {
    stack.check_pair(container, latent_seed)?;
    let mut c = container.clone();
    let mut s = latent_seed.clone();
    let mut blocks = Vec::with_capacity(stack.block_count());
    for block in stack.blocks.iter().rev() {
        let (gate_pre, e3_tape) = block.e3.forward_tape(&c);
        let (add, e2_tape) = block.e2.forward_tape(&c);
        let gate = gate_pre.mapv(es_gate);
        let secret_prev = (&s - &add) / &gate;
        let (t1, e1_tape) = block.e1.forward_tape(&secret_prev);
        let cover_prev = &c - &t1;
        blocks.push(RevealBlockTape {
            cover_in: c,
            secret_out: secret_prev.clone(),
            gate_pre,
            e1: e1_tape,
            e2: e2_tape,
            e3: e3_tape,
        });
        c = cover_prev;
        s = secret_prev;
    }
    Ok((s, c, RevealTape { blocks }))
}

/// Backpropagates through a reveal pass. Returns gradients with respect
/// to the container and the latent seed.
pub fn reveal_backprop<F: Real>(
    stack: &InnStack<F>,
    tape: &RevealTape<F>,
    d_secret_est: &Array3<F>,
    d_cover_est: &Array3<F>,
    grads: &mut StackGrads<F>,
) -> (Array3<F>, Array3<F>) {
    let mut d_cover = d_cover_est.clone();
    let mut d_secret = d_secret_est.clone();
    // Reveal executed blocks in reverse stack order, so backprop walks
    // them in forward stack order.
    let n = stack.block_count();
    for i in 0..n {
        let block = &stack.blocks[i];
        let bt = &tape.blocks[n - 1 - i];

        let gate = bt.gate_pre.mapv(es_gate);
        let sig = bt.gate_pre.mapv(sigmoid);

        // cover_prev = cover_in - e1(secret_out)
        let d_t1 = d_cover.mapv(|v| -v);
        let (g1x, g1) = block.e1.backward(&bt.secret_out, &bt.e1, &d_t1);
        let d_secret_total = &d_secret + &g1x;

        // secret_out = (latent - e2(cover_in)) / gate
        let d_latent_next = &d_secret_total / &gate;
        let d_add = d_latent_next.mapv(|v| -v);
        let d_gate = -(&d_latent_next * &bt.secret_out);
        let d_gate_pre = d_gate * &gate * &sig * &sig.mapv(|s| F::one() - s);

        let (g2x, g2) = block.e2.backward(&bt.cover_in, &bt.e2, &d_add);
        let (g3x, g3) = block.e3.backward(&bt.cover_in, &bt.e3, &d_gate_pre);

        let gb = &mut grads.blocks[i];
        gb.e1.accumulate(&g1);
        gb.e2.accumulate(&g2);
        gb.e3.accumulate(&g3);
        d_cover = &d_cover + &g2x + &g3x;
        d_secret = d_latent_next;
    }
    (d_cover, d_secret)
}

impl<F: Real> Subnet<F> {
    fn accumulate(&mut self, g: &SubnetGrads<F>) {
        self.conv1
            .weight
            .zip_mut_with(&g.conv1.weight, |a, b| *a = *a + *b);
        self.conv1.bias.zip_mut_with(&g.conv1.bias, |a, b| *a = *a + *b);
        self.conv2
            .weight
            .zip_mut_with(&g.conv2.weight, |a, b| *a = *a + *b);
        self.conv2.bias.zip_mut_with(&g.conv2.bias, |a, b| *a = *a + *b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(ch: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((ch, h, w), |_| rng.random_range(0.0..1.0))
    }

    fn toy_stack(blocks: usize, seed: u64) -> InnStack<f64> {
        let mut stack = InnStack::<f64>::with_shape(2, 3, 4, blocks);
        stack.init_weights(seed);
        // Perturb the zero-initialized final convs so gradients flow
        // through non-trivial gates during the check.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for b in &mut stack.blocks {
            for net in [&mut b.e1, &mut b.e2, &mut b.e3] {
                for v in net.conv2.weight.iter_mut() {
                    *v = rng.random_range(-0.2..0.2);
                }
                for v in net.conv2.bias.iter_mut() {
                    *v = rng.random_range(-0.05..0.05);
                }
            }
        }
        stack
    }

    /// Linear probe loss over both outputs of the embedding pass.
    fn embed_loss(stack: &InnStack<f64>, cover: &Array3<f64>, secret: &Array3<f64>, p1: &Array3<f64>, p2: &Array3<f64>) -> f64 {
        let out = stack.forward_embed(cover, secret).unwrap();
        (&out.container * p1).sum() + (&out.latent * p2).sum()
    }

    fn reveal_loss(stack: &InnStack<f64>, container: &Array3<f64>, seed: &Array3<f64>, p1: &Array3<f64>, p2: &Array3<f64>) -> f64 {
        let (secret_est, cover_est) = stack.backward_reveal(container, seed).unwrap();
        (&secret_est * p1).sum() + (&cover_est * p2).sum()
    }

    #[test]
    fn taped_embed_matches_plain_forward() {
        let stack = toy_stack(2, 5);
        let cover = random_tensor(2, 4, 4, 6);
        let secret = random_tensor(3, 4, 4, 7);
        let plain = stack.forward_embed(&cover, &secret).unwrap();
        let (container, latent, _) = embed_with_tape(&stack, &cover, &secret).unwrap();
        assert_eq!(container, plain.container);
        assert_eq!(latent, plain.latent);
    }

    #[test]
    fn taped_reveal_matches_plain_reveal() {
        let stack = toy_stack(2, 15);
        let container = random_tensor(2, 4, 4, 16);
        let seed = random_tensor(3, 4, 4, 17);
        let plain = stack.backward_reveal(&container, &seed).unwrap();
        let (secret_est, cover_est, _) = reveal_with_tape(&stack, &container, &seed).unwrap();
        assert_eq!(secret_est, plain.0);
        assert_eq!(cover_est, plain.1);
    }

    #[test]
    fn embed_gradients_match_central_differences() {
        let mut stack = toy_stack(2, 21);
        let cover = random_tensor(2, 4, 4, 22);
        let secret = random_tensor(3, 4, 4, 23);
        let p1 = random_tensor(2, 4, 4, 24);
        let p2 = random_tensor(3, 4, 4, 25);

        let (_, _, tape) = embed_with_tape(&stack, &cover, &secret).unwrap();
        let mut grads = stack.zeros_like();
        let (d_cover, d_secret) = embed_backprop(&stack, &tape, &p1, &p2, &mut grads);

        let h = 1e-6;
        // A sample of parameters across blocks and subnet roles.
        let picks = [
            (0usize, 0usize, 0usize, 17usize),
            (0, 1, 1, 3),
            (1, 2, 0, 40),
            (1, 0, 1, 0),
        ];
        for &(bi, ni, ci, flat) in &picks {
            let read = |s: &InnStack<f64>| -> f64 {
                let net = [&s.blocks[bi].e1, &s.blocks[bi].e2, &s.blocks[bi].e3][ni];
                let conv = [&net.conv1, &net.conv2][ci];
                conv.weight.as_slice().unwrap()[flat]
            };
            let write = |s: &mut InnStack<f64>, v: f64| {
                let b = &mut s.blocks[bi];
                let net = [&mut b.e1, &mut b.e2, &mut b.e3].into_iter().nth(ni).unwrap();
                let conv = [&mut net.conv1, &mut net.conv2].into_iter().nth(ci).unwrap();
                conv.weight.as_slice_mut().unwrap()[flat] = v;
            };
            let orig = read(&stack);
            write(&mut stack, orig + h);
            let up = embed_loss(&stack, &cover, &secret, &p1, &p2);
            write(&mut stack, orig - h);
            let down = embed_loss(&stack, &cover, &secret, &p1, &p2);
            write(&mut stack, orig);
            let fd = (up - down) / (2.0 * h);

            let gnet = [&grads.blocks[bi].e1, &grads.blocks[bi].e2, &grads.blocks[bi].e3][ni];
            let gconv = [&gnet.conv1, &gnet.conv2][ci];
            let analytic = gconv.weight.as_slice().unwrap()[flat];
            let rel = (fd - analytic).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3, "({bi},{ni},{ci},{flat}): fd {fd} vs {analytic}");
        }

        // Input gradients.
        let mut cover2 = cover.clone();
        let orig = cover2[(1, 2, 3)];
        cover2[(1, 2, 3)] = orig + h;
        let up = embed_loss(&stack, &cover2, &secret, &p1, &p2);
        cover2[(1, 2, 3)] = orig - h;
        let down = embed_loss(&stack, &cover2, &secret, &p1, &p2);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - d_cover[(1, 2, 3)]).abs() / fd.abs().max(1e-6);
        assert!(rel < 1e-3, "cover grad: {fd} vs {}", d_cover[(1, 2, 3)]);

        let mut secret2 = secret.clone();
        let orig = secret2[(2, 0, 1)];
        secret2[(2, 0, 1)] = orig + h;
        let up = embed_loss(&stack, &cover, &secret2, &p1, &p2);
        secret2[(2, 0, 1)] = orig - h;
        let down = embed_loss(&stack, &cover, &secret2, &p1, &p2);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - d_secret[(2, 0, 1)]).abs() / fd.abs().max(1e-6);
        assert!(rel < 1e-3, "secret grad: {fd} vs {}", d_secret[(2, 0, 1)]);
    }

    #[test]
    fn reveal_gradients_match_central_differences() {
        let mut stack = toy_stack(2, 31);
        let container = random_tensor(2, 4, 4, 32);
        let seed = random_tensor(3, 4, 4, 33);
        let p1 = random_tensor(3, 4, 4, 34);
        let p2 = random_tensor(2, 4, 4, 35);

        let (_, _, tape) = reveal_with_tape(&stack, &container, &seed).unwrap();
        let mut grads = stack.zeros_like();
        let (d_container, d_seed) = reveal_backprop(&stack, &tape, &p1, &p2, &mut grads);

        let h = 1e-6;
        let picks = [(0usize, 2usize, 1usize, 5usize), (1, 0, 0, 11), (1, 1, 1, 20)];
        for &(bi, ni, ci, flat) in &picks {
            let read = |s: &InnStack<f64>| -> f64 {
                let net = [&s.blocks[bi].e1, &s.blocks[bi].e2, &s.blocks[bi].e3][ni];
                let conv = [&net.conv1, &net.conv2][ci];
                conv.weight.as_slice().unwrap()[flat]
            };
            let write = |s: &mut InnStack<f64>, v: f64| {
                let b = &mut s.blocks[bi];
                let net = [&mut b.e1, &mut b.e2, &mut b.e3].into_iter().nth(ni).unwrap();
                let conv = [&mut net.conv1, &mut net.conv2].into_iter().nth(ci).unwrap();
                conv.weight.as_slice_mut().unwrap()[flat] = v;
            };
            let orig = read(&stack);
            write(&mut stack, orig + h);
            let up = reveal_loss(&stack, &container, &seed, &p1, &p2);
            write(&mut stack, orig - h);
            let down = reveal_loss(&stack, &container, &seed, &p1, &p2);
            write(&mut stack, orig);
            let fd = (up - down) / (2.0 * h);

            let gnet = [&grads.blocks[bi].e1, &grads.blocks[bi].e2, &grads.blocks[bi].e3][ni];
            let gconv = [&gnet.conv1, &gnet.conv2][ci];
            let analytic = gconv.weight.as_slice().unwrap()[flat];
            let rel = (fd - analytic).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3, "({bi},{ni},{ci},{flat}): fd {fd} vs {analytic}");
        }

        let mut c2 = container.clone();
        let orig = c2[(0, 3, 2)];
        c2[(0, 3, 2)] = orig + h;
        let up = reveal_loss(&stack, &c2, &seed, &p1, &p2);
        c2[(0, 3, 2)] = orig - h;
        let down = reveal_loss(&stack, &c2, &seed, &p1, &p2);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - d_container[(0, 3, 2)]).abs() / fd.abs().max(1e-6);
        assert!(rel < 1e-3, "container grad: {fd} vs {}", d_container[(0, 3, 2)]);

        let mut s2 = seed.clone();
        let orig = s2[(1, 1, 1)];
        s2[(1, 1, 1)] = orig + h;
        let up = reveal_loss(&stack, &container, &s2, &p1, &p2);
        s2[(1, 1, 1)] = orig - h;
        let down = reveal_loss(&stack, &container, &s2, &p1, &p2);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - d_seed[(1, 1, 1)]).abs() / fd.abs().max(1e-6);
        assert!(rel < 1e-3, "seed grad: {fd} vs {}", d_seed[(1, 1, 1)]);
    }
}
