//! Patch-based discriminators: a fully convolutional classifier emitting a
//! grid of real/fake logits, and a multi-scale wrapper that runs copies of
//! it on an average-pooled image pyramid.
//!
//! Both GANs condition the discriminator on the label map, so the input is
//! the channel concatenation image ⊕ mask. Every block taps its activation
//! as a feature map for the feature-matching objective.
//!
//! Default architecture (`layers_per_disc = 4`, `base_channels = 64`):
//!
//! | block | conv            | stride | norm | act            |
//! |-------|-----------------|--------|------|----------------|
//! | 0     | 4 → 64, k4 p1   | 2      | —    | LeakyReLU(0.2) |
//! | 1     | 64 → 128, k4 p1 | 2      | IN   | LeakyReLU(0.2) |
//! | 2     | 128 → 256, k4 p1| 2      | IN   | LeakyReLU(0.2) |
//! | 3     | 256 → 512, k4 p1| 1      | IN   | LeakyReLU(0.2) |
//! | out   | 512 → 1, k4 p1  | 1      | —    | —              |
//!
//! which maps a 256×256 input to a 30×30 logit grid (70×70 receptive field
//! per logit).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, ConvBlock};
use super::params::Params;
use super::tape::{Tape, Var};
use super::{Conv2d, NnError};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Multi-scale discriminator hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiScaleDiscConfig {
    /// Number of image-pyramid scales, each half the previous resolution.
    pub num_scales: usize,
    /// Feature blocks per per-scale discriminator (the logit conv is extra).
    pub layers_per_disc: usize,
    /// Channels of the first block; later blocks double up to an 8× cap.
    pub base_channels: usize,
}

impl Default for MultiScaleDiscConfig {
    fn default() -> Self {
        MultiScaleDiscConfig {
            num_scales: 3,
            layers_per_disc: 4,
            base_channels: 64,
        }
    }
}

impl MultiScaleDiscConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.num_scales == 0 {
            return Err(NnError::BadConfig {
                what: "num_scales",
                requirement: "at least 1",
                got: self.num_scales.to_string(),
            });
        }
        if self.layers_per_disc == 0 {
            return Err(NnError::BadConfig {
                what: "layers_per_disc",
                requirement: "at least 1",
                got: self.layers_per_disc.to_string(),
            });
        }
        if self.base_channels == 0 {
            return Err(NnError::BadConfig {
                what: "base_channels",
                requirement: "at least 1",
                got: self.base_channels.to_string(),
            });
        }
        Ok(())
    }
}

/// Logit grid plus the per-block feature taps of one discriminator scale.
#[derive(Debug, Clone)]
pub struct ScaleOutput {
    pub logits: Var,
    /// One activation per feature block, ordered input → output.
    pub features: Vec<Var>,
}

/// One fully convolutional patch classifier.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    blocks: Vec<ConvBlock>,
    out: Conv2d,
    in_channels: usize,
}

impl PatchDiscriminator {
    /// All blocks use 4×4 kernels with padding 1 and stride 2, except the
    /// last feature block and the logit conv, which use stride 1.
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        base_channels: usize,
        layers: usize,
    ) -> Self {
        assert!(layers >= 1 && in_channels >= 1 && base_channels >= 1);
        let mut blocks = Vec::with_capacity(layers);
        let mut ch_in = in_channels;
        let mut ch_out = base_channels;
        for i in 0..layers {
            let stride = if i + 1 == layers { 1 } else { 2 };
            blocks.push(ConvBlock::new(
                params,
                rng,
                &format!("{name}.block{i}"),
                ch_in,
                ch_out,
                4,
                stride,
                1,
                i > 0,
                Activation::LeakyReLU(LEAKY_SLOPE),
            ));
            ch_in = ch_out;
            ch_out = (ch_out * 2).min(base_channels * 8);
        }
        let out = Conv2d::new(params, rng, &format!("{name}.out"), ch_in, 1, 4, 1, 1);
        PatchDiscriminator {
            blocks,
            out,
            in_channels,
        }
    }

    /// Smallest square input that still yields a 2×2-or-larger logit grid
    /// (a patch map rather than a single scalar).
    pub fn min_input(&self) -> usize {
        // Walk the conv chain backwards from a 2-wide logit map: a k4 s1 p1
        // conv needs out+1 input pixels, a k4 s2 p1 conv needs 2*out.
        let mut n = 2 + 1; // logit conv, stride 1
        for block in self.blocks.iter().rev() {
            n = match block.conv.stride {
                1 => n + 1,
                2 => n * 2,
                s => unreachable!("unsupported stride {s}"),
            };
        }
        n
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Result<ScaleOutput, NnError> {
        let shape = t.shape(x);
        if shape[1] != self.in_channels {
            return Err(NnError::WrongChannelCount {
                got: shape[1],
                want: self.in_channels,
            });
        }
        let min = self.min_input();
        if shape[2] < min || shape[3] < min {
            return Err(NnError::InputTooSmall {
                got_h: shape[2],
                got_w: shape[3],
                min,
            });
        }
        let mut features = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(t, p, h);
            features.push(h);
        }
        let logits = self.out.forward(t, p, h);
        Ok(ScaleOutput { logits, features })
    }
}

/// Runs one [`PatchDiscriminator`] per pyramid scale; scale k sees the
/// input average-pooled k times by factor 2.
#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator {
    scales: Vec<PatchDiscriminator>,
    image_channels: usize,
}

impl MultiScaleDiscriminator {
    /// `image_channels` counts the image alone; each scale consumes
    /// image ⊕ mask, i.e. `image_channels + 1` input channels. Parameters
    /// are registered under `"{name}.d{k}"` prefixes.
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        image_channels: usize,
        cfg: MultiScaleDiscConfig,
    ) -> Result<Self, NnError> {
        cfg.validate()?;
        let scales = (0..cfg.num_scales)
            .map(|k| {
                PatchDiscriminator::new(
                    params,
                    rng,
                    &format!("{name}.d{k}"),
                    image_channels + 1,
                    cfg.base_channels,
                    cfg.layers_per_disc,
                )
            })
            .collect();
        Ok(MultiScaleDiscriminator {
            scales,
            image_channels,
        })
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Smallest full-resolution input under which every scale still sees
    /// enough pixels (the coarsest scale is the binding constraint).
    pub fn min_input(&self) -> usize {
        self.scales
            .iter()
            .enumerate()
            .map(|(k, d)| d.min_input() << k)
            .max()
            .expect("at least one scale")
    }

    /// Classifies `image` (`[N, image_channels, H, W]`) conditioned on
    /// `mask` (`[N, 1, H, W]`), returning one output per scale, finest
    /// first.
    pub fn forward(
        &self,
        t: &Tape,
        p: &Params,
        image: Var,
        mask: Var,
    ) -> Result<Vec<ScaleOutput>, NnError> {
        let is = t.shape(image);
        let ms = t.shape(mask);
        if is[1] != self.image_channels {
            return Err(NnError::WrongChannelCount {
                got: is[1],
                want: self.image_channels,
            });
        }
        if ms[1] != 1 {
            return Err(NnError::WrongChannelCount { got: ms[1], want: 1 });
        }
        if is[2] != ms[2] || is[3] != ms[3] {
            return Err(NnError::WrongInputSize {
                got_h: ms[2],
                got_w: ms[3],
                want_h: is[2],
                want_w: is[3],
            });
        }
        let min = self.min_input();
        if is[2] < min || is[3] < min {
            return Err(NnError::InputTooSmall {
                got_h: is[2],
                got_w: is[3],
                min,
            });
        }
        let pool_steps = self.scales.len() - 1;
        let divisor = 1usize << pool_steps;
        if is[2] % divisor != 0 || is[3] % divisor != 0 {
            return Err(NnError::BadConfig {
                what: "discriminator input size",
                requirement: "divisible by 2^(num_scales-1)",
                got: format!("{}x{} with {} scales", is[2], is[3], self.scales.len()),
            });
        }

        let mut x = t.concat_channels(&[image, mask]);
        let mut outputs = Vec::with_capacity(self.scales.len());
        for (k, disc) in self.scales.iter().enumerate() {
            outputs.push(disc.forward(t, p, x)?);
            if k + 1 < self.scales.len() {
                x = t.avg_pool2(x);
            }
        }
        Ok(outputs)
    }
}
