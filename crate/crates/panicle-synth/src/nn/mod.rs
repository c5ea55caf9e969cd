//! A small reverse-mode automatic-differentiation engine and the neural
//! building blocks the generators and discriminators are made of.
//!
//! Everything runs on `f64` CPU tensors (`ndarray::ArrayD`). Computations
//! happen on a [`Tape`]: each operation records its inputs and a closure
//! that maps the output gradient to input gradients, and
//! [`Tape::backward`] walks the records in reverse. Learnable tensors live
//! outside the tape in a [`Params`] store, so one set of weights serves
//! many single-step tapes and the Adam optimizer updates them in place.
//!
//! Low-level tensor ops treat shape mismatches as programming errors and
//! panic; the model-level entry points (generators, discriminators,
//! objectives) validate their inputs and return [`NnError`] instead.

mod adam;
mod conv;
pub mod gradcheck;
mod init;
mod layers;
mod ops;
mod params;
mod tape;

pub mod discriminator;

pub use adam::{Adam, AdamConfig};
pub use conv::{avg_pool2_chw, resize_nearest_nchw};
pub use init::{normal_init, zeros_init};
pub use layers::{
    Activation, Conv2d, ConvBlock, ConvTranspose2d, InstanceNorm, Linear, ResidualBlock,
    SpadeLayer, SpadeLayerConfig,
};
pub use params::{ParamId, Params};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

/// Asserts element-wise closeness of two tensors (test support).
#[cfg(test)]
pub(crate) fn assert_close(a: &ndarray::ArrayD<f64>, b: &ndarray::ArrayD<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let worst = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= tol, "max abs diff {worst} > {tol}");
}

/// Errors surfaced by model-level network code.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("input is {got_h}x{got_w} but this network needs at least {min}x{min}")]
    InputTooSmall { got_h: usize, got_w: usize, min: usize },

    #[error("input is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    WrongInputSize {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("input has {got} channels, expected {want}")]
    WrongChannelCount { got: usize, want: usize },

    #[error("latent has dimension {got}, expected {want}")]
    LatentDimMismatch { got: usize, want: usize },

    #[error("style encoding requested but the image encoder is disabled")]
    EncoderDisabled,

    #[error("feature lists differ: {got} entries vs {want}")]
    MismatchedFeatureLists { got: usize, want: usize },

    #[error("feature shapes differ at layer {layer}: {a:?} vs {b:?}")]
    MismatchedFeatureShapes {
        layer: usize,
        a: Vec<usize>,
        b: Vec<usize>,
    },

    #[error("{what} must be {requirement}, got {got}")]
    BadConfig {
        what: &'static str,
        requirement: &'static str,
        got: String,
    },

    #[error("non-finite loss ({context}): gan_g={gan_g} gan_d={gan_d} fm={fm}")]
    NonFiniteLoss {
        context: String,
        gan_g: f64,
        gan_d: f64,
        fm: f64,
    },
}
