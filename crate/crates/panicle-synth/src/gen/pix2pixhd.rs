//! Coarse-to-fine conditional generator: a global network painting at
//! half resolution plus a local enhancer refining at full resolution.

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::nn::{
    Activation, ConvBlock, ConvTranspose2d, InstanceNorm, NnError, Params, ResidualBlock, Tape,
    Var,
};

use super::labelmap_tensor;

/// Hyperparameters of the coarse-to-fine generator.
///
/// `base_channels` is the global network's width at its finest
/// resolution; the enhancer runs at half that width. Each global
/// downsample doubles the width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pix2PixHDGenConfig {
    pub base_channels: usize,
    pub n_downsamples_global: usize,
    pub n_resblocks_global: usize,
    pub n_resblocks_local: usize,
    pub output_resolution: usize,
}

impl Default for Pix2PixHDGenConfig {
    fn default() -> Self {
        Pix2PixHDGenConfig {
            base_channels: 64,
            n_downsamples_global: 4,
            n_resblocks_global: 9,
            n_resblocks_local: 3,
            output_resolution: 1024,
        }
    }
}

impl Pix2PixHDGenConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(NnError::BadConfig {
                what: "base_channels",
                requirement: "an even count of at least 2",
                got: self.base_channels.to_string(),
            });
        }
        if self.n_downsamples_global == 0 {
            return Err(NnError::BadConfig {
                what: "n_downsamples_global",
                requirement: "at least 1",
                got: "0".into(),
            });
        }
        let div = 1usize << (self.n_downsamples_global + 1);
        if self.output_resolution == 0 || self.output_resolution % div != 0 {
            return Err(NnError::BadConfig {
                what: "output_resolution",
                requirement: "divisible by 2^(n_downsamples_global+1)",
                got: format!(
                    "{} with {} downsamples",
                    self.output_resolution, self.n_downsamples_global
                ),
            });
        }
        Ok(())
    }
}

/// Which stage of the coarse-to-fine pair to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pix2PixHDMode {
    /// Global network alone; output at half resolution.
    Coarse,
    /// Global + enhancer; output at full resolution.
    Full,
}

/// Transposed conv + instance norm + ReLU: the learned ×2 upsampling unit.
#[derive(Debug, Clone)]
struct UpBlock {
    conv: ConvTranspose2d,
    norm: InstanceNorm,
}

impl UpBlock {
    fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        UpBlock {
            conv: ConvTranspose2d::new(params, rng, name, in_ch, out_ch, 3, 2, 1, 1),
            norm: InstanceNorm::default(),
        }
    }

    fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let y = self.conv.forward(t, p, x);
        let y = self.norm.forward(t, y);
        t.relu(y)
    }
}

/// The coarse-to-fine generator. Parameters are registered under `g1.*`
/// (global) and `g2.*` (enhancer) so the two-phase trainer can optimize
/// them separately.
#[derive(Debug, Clone)]
pub struct Pix2PixHDGenerator {
    cfg: Pix2PixHDGenConfig,
    g1_front: ConvBlock,
    g1_down: Vec<ConvBlock>,
    g1_res: Vec<ResidualBlock>,
    g1_up: Vec<UpBlock>,
    g1_head: ConvBlock,
    g2_front: ConvBlock,
    g2_down: ConvBlock,
    g2_res: Vec<ResidualBlock>,
    g2_up: UpBlock,
    g2_head: ConvBlock,
}

impl Pix2PixHDGenerator {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        cfg: Pix2PixHDGenConfig,
    ) -> Result<Self, NnError> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let d = cfg.n_downsamples_global;

        let g1_front = ConvBlock::new(params, rng, "g1.front", 1, c, 7, 1, 3, true, Activation::ReLU);
        let g1_down = (0..d)
            .map(|i| {
                ConvBlock::new(
                    params,
                    rng,
                    &format!("g1.down{i}"),
                    c << i,
                    c << (i + 1),
                    3,
                    2,
                    1,
                    true,
                    Activation::ReLU,
                )
            })
            .collect();
        let g1_res = (0..cfg.n_resblocks_global)
            .map(|i| ResidualBlock::new(params, rng, &format!("g1.res{i}"), c << d))
            .collect();
        let g1_up = (0..d)
            .map(|i| {
                UpBlock::new(
                    params,
                    rng,
                    &format!("g1.up{i}"),
                    c << (d - i),
                    c << (d - i - 1),
                )
            })
            .collect();
        let g1_head = ConvBlock::new(params, rng, "g1.head", c, 3, 7, 1, 3, false, Activation::Tanh);

        let g2_front =
            ConvBlock::new(params, rng, "g2.front", 1, c / 2, 7, 1, 3, true, Activation::ReLU);
        let g2_down =
            ConvBlock::new(params, rng, "g2.down", c / 2, c, 3, 2, 1, true, Activation::ReLU);
        let g2_res = (0..cfg.n_resblocks_local)
            .map(|i| ResidualBlock::new(params, rng, &format!("g2.res{i}"), c))
            .collect();
        let g2_up = UpBlock::new(params, rng, "g2.up", c, c / 2);
        let g2_head = ConvBlock::new(params, rng, "g2.head", c / 2, 3, 7, 1, 3, false, Activation::Tanh);

        Ok(Pix2PixHDGenerator {
            cfg,
            g1_front,
            g1_down,
            g1_res,
            g1_up,
            g1_head,
            g2_front,
            g2_down,
            g2_res,
            g2_up,
            g2_head,
        })
    }

    pub fn config(&self) -> &Pix2PixHDGenConfig {
        &self.cfg
    }

    /// Global network up to (and including) its last feature map, at half
    /// resolution; this is the tensor the enhancer consumes.
    fn g1_feature(&self, t: &Tape, p: &Params, half_mask: Var) -> Var {
        let mut x = self.g1_front.forward(t, p, half_mask);
        for block in &self.g1_down {
            x = block.forward(t, p, x);
        }
        for block in &self.g1_res {
            x = block.forward(t, p, x);
        }
        for block in &self.g1_up {
            x = block.forward(t, p, x);
        }
        x
    }

    /// Runs the generator on a mask batch `[N, 1, R, R]` at the configured
    /// resolution. Coarse mode returns `[N, 3, R/2, R/2]`, full mode
    /// `[N, 3, R, R]`; values lie in `[-1, 1]`.
    pub fn forward(
        &self,
        t: &Tape,
        p: &Params,
        mask: Var,
        mode: Pix2PixHDMode,
    ) -> Result<Var, NnError> {
        let s = t.shape(mask);
        if s[1] != 1 {
            return Err(NnError::WrongChannelCount { got: s[1], want: 1 });
        }
        let r = self.cfg.output_resolution;
        if s[2] != r || s[3] != r {
            return Err(NnError::WrongInputSize {
                got_h: s[2],
                got_w: s[3],
                want_h: r,
                want_w: r,
            });
        }

        let half_mask = t.avg_pool2(mask);
        let feature = self.g1_feature(t, p, half_mask);
        match mode {
            Pix2PixHDMode::Coarse => Ok(self.g1_head.forward(t, p, feature)),
            Pix2PixHDMode::Full => {
                let mut x = self.g2_front.forward(t, p, mask);
                x = self.g2_down.forward(t, p, x);
                x = t.add(x, feature);
                for block in &self.g2_res {
                    x = block.forward(t, p, x);
                }
                x = self.g2_up.forward(t, p, x);
                Ok(self.g2_head.forward(t, p, x))
            }
        }
    }

    /// Inference helper: renders one label map to a `[3, H, W]` image in
    /// `[-1, 1]` on a throwaway tape.
    pub fn render(
        &self,
        p: &Params,
        mask: &LabelMap,
        mode: Pix2PixHDMode,
    ) -> Result<Array3<f64>, NnError> {
        let t = Tape::new();
        let m = t.constant(labelmap_tensor(mask));
        let out = self.forward(&t, p, m, mode)?;
        let v = t.value(out);
        let s = v.shape().to_vec();
        let flat: Vec<f64> = v.iter().copied().collect();
        Ok(Array3::from_shape_vec((s[1], s[2], s[3]), flat).expect("batch of one"))
    }
}
