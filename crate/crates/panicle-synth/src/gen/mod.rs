//! The two conditional generators that turn a binary label map into an
//! RGB tile.
//!
//! [`Pix2PixHDGenerator`] is a coarse-to-fine pair: a global network (G1)
//! paints at half resolution and a local enhancer (G2) refines at full
//! resolution, with G1's last feature map summed into G2's stream.
//! [`SpadeGenerator`] upsamples a latent-seeded tensor through residual
//! blocks whose normalization is spatially modulated by the label map at
//! every resolution.
//!
//! Both output 3-channel images in `[-1, 1]` via a final tanh; both are
//! deterministic given parameters, mask, and (for SPADE) latent.

mod pix2pixhd;
mod spade;

pub use pix2pixhd::{Pix2PixHDGenConfig, Pix2PixHDGenerator, Pix2PixHDMode};
pub use spade::{EncoderOutput, SpadeGenConfig, SpadeGenerator, StyleEncoder};

use ndarray::ArrayD;

use crate::data::LabelMap;

/// Lifts a label map into the `[1, 1, H, W]` tensor the generators and
/// discriminators consume. Foreground stays 1, background 0.
pub fn labelmap_tensor(mask: &LabelMap) -> ArrayD<f64> {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let flat: Vec<f64> = mask.to_f64().into_iter().collect();
    ArrayD::from_shape_vec(vec![1, 1, h, w], flat).expect("dims match by construction")
}
