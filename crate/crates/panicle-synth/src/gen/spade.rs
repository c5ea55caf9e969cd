//! Spatially-adaptive generator: a latent vector seeds a coarse tensor
//! that residual blocks upsample to full resolution, with the label map
//! modulating every normalization on the way up.

use ndarray::{Array3, ArrayD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::nn::{
    resize_nearest_nchw, Activation, Conv2d, ConvBlock, Linear, NnError, Params, SpadeLayer,
    SpadeLayerConfig, Tape, Var,
};

use super::labelmap_tensor;

/// Channel width never grows past this, matching common practice for
/// image-synthesis backbones.
const MAX_CHANNELS: usize = 1024;

const LEAKY: f64 = 0.2;

/// Hyperparameters of the spatially-adaptive generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpadeGenConfig {
    /// Residual blocks in the upsampling stack; every block but the first
    /// is preceded by a ×2 nearest upsample, so the stack starts at
    /// `output_resolution / 2^(num_spade_blocks-1)`.
    pub num_spade_blocks: usize,
    /// Width of the last block's output; earlier blocks double per step
    /// down, capped at 1024.
    pub base_channels: usize,
    pub latent_dim: usize,
    /// When on, a style encoder maps a real image to the latent
    /// (reparameterized); when off, latents are standard-normal draws and
    /// the initial tensor's learned bias acts as a start constant.
    pub use_image_encoder: bool,
    pub output_resolution: usize,
}

impl Default for SpadeGenConfig {
    fn default() -> Self {
        SpadeGenConfig {
            num_spade_blocks: 7,
            base_channels: 64,
            latent_dim: 256,
            use_image_encoder: false,
            output_resolution: 1024,
        }
    }
}

impl SpadeGenConfig {
    /// Resolution of the initial latent-seeded tensor.
    pub fn initial_size(&self) -> usize {
        self.output_resolution >> (self.num_spade_blocks - 1)
    }

    /// Output width of block `i` (blocks narrow toward the output).
    fn width(&self, i: usize) -> usize {
        (self.base_channels << (self.num_spade_blocks - 1 - i)).min(MAX_CHANNELS)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.num_spade_blocks == 0 {
            return Err(NnError::BadConfig {
                what: "num_spade_blocks",
                requirement: "at least 1",
                got: "0".into(),
            });
        }
        if self.base_channels == 0 || self.latent_dim == 0 {
            return Err(NnError::BadConfig {
                what: "base_channels/latent_dim",
                requirement: "positive",
                got: format!("{}/{}", self.base_channels, self.latent_dim),
            });
        }
        let div = 1usize << (self.num_spade_blocks - 1);
        if self.output_resolution == 0 || self.output_resolution % div != 0 {
            return Err(NnError::BadConfig {
                what: "output_resolution",
                requirement: "initial_size × 2^(num_spade_blocks-1) for an integer initial size",
                got: format!(
                    "{} with {} blocks",
                    self.output_resolution, self.num_spade_blocks
                ),
            });
        }
        if self.use_image_encoder {
            let r = self.output_resolution;
            if r < 8 || r % 4 != 0 || !(r / 4).is_power_of_two() {
                return Err(NnError::BadConfig {
                    what: "output_resolution",
                    requirement: "4 × a power of two when the image encoder is on",
                    got: r.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Mean and log-variance produced by the style encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub mean: Var,
    pub log_variance: Var,
}

/// Residual block whose normalizations are all mask-modulated; channel
/// changes go through a modulated 1×1 skip.
#[derive(Debug, Clone)]
struct SpadeResBlock {
    norm0: SpadeLayer,
    conv0: Conv2d,
    norm1: SpadeLayer,
    conv1: Conv2d,
    skip: Option<(SpadeLayer, Conv2d)>,
}

impl SpadeResBlock {
    fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        hidden: usize,
    ) -> Self {
        let mid = in_ch.min(out_ch);
        let spade_cfg = |c: usize| SpadeLayerConfig {
            hidden,
            ..SpadeLayerConfig::new(c)
        };
        let norm0 = SpadeLayer::new(params, rng, &format!("{name}.norm0"), spade_cfg(in_ch));
        let conv0 = Conv2d::new(params, rng, &format!("{name}.conv0"), in_ch, mid, 3, 1, 1);
        let norm1 = SpadeLayer::new(params, rng, &format!("{name}.norm1"), spade_cfg(mid));
        let conv1 = Conv2d::new(params, rng, &format!("{name}.conv1"), mid, out_ch, 3, 1, 1);
        let skip = (in_ch != out_ch).then(|| {
            (
                SpadeLayer::new(params, rng, &format!("{name}.norm_s"), spade_cfg(in_ch)),
                Conv2d::new(params, rng, &format!("{name}.conv_s"), in_ch, out_ch, 1, 1, 0),
            )
        });
        SpadeResBlock {
            norm0,
            conv0,
            norm1,
            conv1,
            skip,
        }
    }

    fn forward(&self, t: &Tape, p: &Params, x: Var, mask: Var) -> Result<Var, NnError> {
        let dx = self.norm0.forward(t, p, x, mask)?;
        let dx = t.leaky_relu(dx, LEAKY);
        let dx = self.conv0.forward(t, p, dx);
        let dx = self.norm1.forward(t, p, dx, mask)?;
        let dx = t.leaky_relu(dx, LEAKY);
        let dx = self.conv1.forward(t, p, dx);
        let shortcut = match &self.skip {
            Some((norm, conv)) => {
                let s = norm.forward(t, p, x, mask)?;
                conv.forward(t, p, s)
            }
            None => x,
        };
        Ok(t.add(shortcut, dx))
    }
}

/// Convolutional encoder mapping a real image to a latent distribution,
/// for style-conditioned generation.
#[derive(Debug, Clone)]
pub struct StyleEncoder {
    blocks: Vec<ConvBlock>,
    mu: Linear,
    logvar: Linear,
    input_resolution: usize,
    flat: usize,
}

impl StyleEncoder {
    /// Downsamples `input_resolution → 4` by stride-2 convs, then two
    /// sibling dense heads produce mean and log-variance.
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_resolution: usize,
        base_channels: usize,
        latent_dim: usize,
    ) -> Result<Self, NnError> {
        if input_resolution < 8
            || input_resolution % 4 != 0
            || !(input_resolution / 4).is_power_of_two()
        {
            return Err(NnError::BadConfig {
                what: "encoder input_resolution",
                requirement: "4 × a power of two",
                got: input_resolution.to_string(),
            });
        }
        let levels = (input_resolution / 4).trailing_zeros() as usize;
        let mut blocks = Vec::with_capacity(levels);
        let mut ch_in = 3;
        let mut ch_out = base_channels;
        for i in 0..levels {
            blocks.push(ConvBlock::new(
                params,
                rng,
                &format!("{name}.down{i}"),
                ch_in,
                ch_out,
                3,
                2,
                1,
                i > 0,
                Activation::LeakyReLU(LEAKY),
            ));
            ch_in = ch_out;
            ch_out = (ch_out * 2).min(512);
        }
        let flat = ch_in * 4 * 4;
        let mu = Linear::new(params, rng, &format!("{name}.mu"), flat, latent_dim);
        let logvar = Linear::new(params, rng, &format!("{name}.logvar"), flat, latent_dim);
        Ok(StyleEncoder {
            blocks,
            mu,
            logvar,
            input_resolution,
            flat,
        })
    }

    pub fn forward(&self, t: &Tape, p: &Params, image: Var) -> Result<EncoderOutput, NnError> {
        let s = t.shape(image);
        if s[1] != 3 {
            return Err(NnError::WrongChannelCount { got: s[1], want: 3 });
        }
        if s[2] != self.input_resolution || s[3] != self.input_resolution {
            return Err(NnError::WrongInputSize {
                got_h: s[2],
                got_w: s[3],
                want_h: self.input_resolution,
                want_w: self.input_resolution,
            });
        }
        let mut x = image;
        for block in &self.blocks {
            x = block.forward(t, p, x);
        }
        let x = t.reshape(x, vec![s[0], self.flat]);
        Ok(EncoderOutput {
            mean: self.mu.forward(t, p, x),
            log_variance: self.logvar.forward(t, p, x),
        })
    }
}

/// Reparameterized sample: `mean + exp(0.5·log_variance) ⊙ eps`, keeping
/// the draw differentiable through both heads.
pub fn reparameterize(t: &Tape, out: &EncoderOutput, eps: ArrayD<f64>) -> Var {
    let std = t.exp(t.scale(out.log_variance, 0.5));
    let scaled = t.mul(std, t.constant(eps));
    t.add(out.mean, scaled)
}

/// The spatially-adaptive generator. Parameters live under `g.*` (and
/// `enc.*` when the style encoder is on).
#[derive(Debug, Clone)]
pub struct SpadeGenerator {
    cfg: SpadeGenConfig,
    fc: Linear,
    blocks: Vec<SpadeResBlock>,
    out: Conv2d,
    encoder: Option<StyleEncoder>,
}

impl SpadeGenerator {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        cfg: SpadeGenConfig,
    ) -> Result<Self, NnError> {
        cfg.validate()?;
        let h0 = cfg.initial_size();
        let b = cfg.num_spade_blocks;
        // Keep mask-embedding width proportional at desk scale: the usual
        // 128 would dwarf toy configs.
        let hidden = (cfg.base_channels * 2).min(128);

        let fc = Linear::new(params, rng, "g.fc", cfg.latent_dim, cfg.width(0) * h0 * h0);
        let blocks = (0..b)
            .map(|i| {
                let in_ch = cfg.width(i.saturating_sub(1));
                let out_ch = cfg.width(i);
                SpadeResBlock::new(params, rng, &format!("g.blk{i}"), in_ch, out_ch, hidden)
            })
            .collect();
        let out = Conv2d::new(params, rng, "g.out", cfg.width(b - 1), 3, 3, 1, 1);
        let encoder = if cfg.use_image_encoder {
            Some(StyleEncoder::new(
                params,
                rng,
                "enc",
                cfg.output_resolution,
                cfg.base_channels,
                cfg.latent_dim,
            )?)
        } else {
            None
        };
        Ok(SpadeGenerator {
            cfg,
            fc,
            blocks,
            out,
            encoder,
        })
    }

    pub fn config(&self) -> &SpadeGenConfig {
        &self.cfg
    }

    /// Standard-normal latent batch `[n, latent_dim]`.
    pub fn sample_latent(&self, n: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        crate::nn::normal_init(&[n, self.cfg.latent_dim], 1.0, rng)
    }

    /// Encodes a real image into a latent distribution and returns its
    /// reparameterized sample. Errors when the encoder is configured off.
    pub fn encode_style(
        &self,
        t: &Tape,
        p: &Params,
        image: Var,
        rng: &mut ChaCha8Rng,
    ) -> Result<(EncoderOutput, Var), NnError> {
        let n = t.shape(image)[0];
        let eps = crate::nn::normal_init(&[n, self.cfg.latent_dim], 1.0, rng);
        self.encode_style_with(t, p, image, eps)
    }

    /// [`SpadeGenerator::encode_style`] with a caller-supplied noise draw,
    /// so one draw can be replayed across several tapes.
    pub fn encode_style_with(
        &self,
        t: &Tape,
        p: &Params,
        image: Var,
        eps: ArrayD<f64>,
    ) -> Result<(EncoderOutput, Var), NnError> {
        let encoder = self.encoder.as_ref().ok_or(NnError::EncoderDisabled)?;
        let out = encoder.forward(t, p, image)?;
        let z = reparameterize(t, &out, eps);
        Ok((out, z))
    }

    /// Runs the generator on a mask batch `[N, 1, R, R]` and latent batch
    /// `[N, latent_dim]`, producing `[N, 3, R, R]` in `[-1, 1]`. The mask
    /// is nearest-resized to every block's resolution on the way up.
    pub fn forward(&self, t: &Tape, p: &Params, mask: Var, latent: Var) -> Result<Var, NnError> {
        let ms = t.shape(mask);
        if ms[1] != 1 {
            return Err(NnError::WrongChannelCount { got: ms[1], want: 1 });
        }
        let r = self.cfg.output_resolution;
        if ms[2] != r || ms[3] != r {
            return Err(NnError::WrongInputSize {
                got_h: ms[2],
                got_w: ms[3],
                want_h: r,
                want_w: r,
            });
        }
        let ls = t.shape(latent);
        if ls.len() != 2 || ls[1] != self.cfg.latent_dim {
            return Err(NnError::LatentDimMismatch {
                got: if ls.len() == 2 { ls[1] } else { 0 },
                want: self.cfg.latent_dim,
            });
        }
        if ls[0] != ms[0] {
            return Err(NnError::BadConfig {
                what: "latent batch",
                requirement: "same batch size as the mask",
                got: format!("{} vs {}", ls[0], ms[0]),
            });
        }

        let n = ms[0];
        let h0 = self.cfg.initial_size();
        let mask_full = t.value(mask);

        let mut x = self.fc.forward(t, p, latent);
        x = t.reshape(x, vec![n, self.cfg.width(0), h0, h0]);
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = t.upsample_nearest2(x);
            }
            let res = h0 << i;
            let mask_i = if res == r {
                mask
            } else {
                t.constant(resize_nearest_nchw(&mask_full, res, res))
            };
            x = block.forward(t, p, x, mask_i)?;
        }
        let x = t.leaky_relu(x, LEAKY);
        let x = self.out.forward(t, p, x);
        Ok(t.tanh(x))
    }

    /// Inference helper: renders one label map to a `[3, R, R]` image in
    /// `[-1, 1]`, drawing the latent from `rng` when none is given.
    pub fn render(
        &self,
        p: &Params,
        mask: &LabelMap,
        latent: Option<&ArrayD<f64>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<f64>, NnError> {
        let t = Tape::new();
        let z = match latent {
            Some(z) => z.clone(),
            None => self.sample_latent(1, rng),
        };
        let m = t.constant(labelmap_tensor(mask));
        let z = t.constant(z);
        let out = self.forward(&t, p, m, z)?;
        let v = t.value(out);
        let s = v.shape().to_vec();
        let flat: Vec<f64> = v.iter().copied().collect();
        Ok(Array3::from_shape_vec((s[1], s[2], s[3]), flat).expect("batch of one"))
    }
}
