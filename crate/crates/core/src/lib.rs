//! Core library for hiding long audio clips inside still images.
//!
//! The pipeline compresses a waveform into a mel-spectrogram, reshapes it
//! into an image-sized tensor, and embeds that tensor into a cover image
//! with a stack of invertible coupling blocks. Revealing runs the same
//! stack backwards. Stacks can be cascaded so that several clips hide in
//! one image and holders of different layer weights decode to different
//! depths.

pub mod audio;
pub mod data;




pub mod inn;
pub mod metrics;
pub mod nested;
pub mod pack;
pub mod train;

