//! Composable network layers on top of the raw tape ops.

use rand_chacha::ChaCha8Rng;

use super::init::{normal_init, zeros_init, INIT_STD};
use super::params::{ParamId, Params};
use super::tape::{Tape, Var};
use super::NnError;

/// Nonlinearity applied after a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    ReLU,
    LeakyReLU(f64),
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, t: &Tape, x: Var) -> Var {
        match self {
            Activation::ReLU => t.relu(x),
            Activation::LeakyReLU(slope) => t.leaky_relu(x, slope),
            Activation::Tanh => t.tanh(x),
            Activation::None => x,
        }
    }
}

/// A convolution with its learnable tensors registered in a store.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            normal_init(&[out_ch, in_ch, kernel, kernel], INIT_STD, rng),
        );
        let b = params.add(format!("{name}.b"), zeros_init(&[out_ch]));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let w = t.param(p, self.w);
        let b = t.param(p, self.b);
        t.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// A transposed convolution (learnable upsampling).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            normal_init(&[in_ch, out_ch, kernel, kernel], INIT_STD, rng),
        );
        let b = params.add(format!("{name}.b"), zeros_init(&[out_ch]));
        ConvTranspose2d {
            w,
            b,
            stride,
            pad,
            out_pad,
        }
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let w = t.param(p, self.w);
        let b = t.param(p, self.b);
        t.conv_transpose2d(x, w, b, self.stride, self.pad, self.out_pad)
    }
}

/// A dense layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            normal_init(&[in_features, out_features], INIT_STD, rng),
        );
        let b = params.add(format!("{name}.b"), zeros_init(&[out_features]));
        Linear { w, b }
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let w = t.param(p, self.w);
        let b = t.param(p, self.b);
        t.linear(x, w, b)
    }
}

/// Parameter-free instance normalization with a fixed epsilon.
#[derive(Debug, Clone, Copy)]
pub struct InstanceNorm {
    pub eps: f64,
}

impl Default for InstanceNorm {
    fn default() -> Self {
        InstanceNorm { eps: 1e-5 }
    }
}

impl InstanceNorm {
    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        t.instance_norm(x, self.eps)
    }
}

/// Conv, then optional instance norm, then an activation: the repeating
/// unit of both generators' encoder paths and the discriminators.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm>,
    pub act: Activation,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        norm: bool,
        act: Activation,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(params, rng, name, in_ch, out_ch, kernel, stride, pad),
            norm: norm.then(InstanceNorm::default),
            act,
        }
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let mut y = self.conv.forward(t, p, x);
        if let Some(norm) = &self.norm {
            y = norm.forward(t, y);
        }
        self.act.apply(t, y)
    }
}

/// The classic image-translation residual block:
/// conv-norm-relu-conv-norm plus the identity skip.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub norm: InstanceNorm,
}

impl ResidualBlock {
    pub fn new(params: &mut Params, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(params, rng, &format!("{name}.conv1"), channels, channels, 3, 1, 1),
            conv2: Conv2d::new(params, rng, &format!("{name}.conv2"), channels, channels, 3, 1, 1),
            norm: InstanceNorm::default(),
        }
    }

    pub fn forward(&self, t: &Tape, p: &Params, x: Var) -> Var {
        let y = self.conv1.forward(t, p, x);
        let y = self.norm.forward(t, y);
        let y = t.relu(y);
        let y = self.conv2.forward(t, p, y);
        let y = self.norm.forward(t, y);
        t.add(x, y)
    }
}

/// Configuration of one spatially-adaptive normalization layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpadeLayerConfig {
    /// Channels of the feature map being modulated.
    pub channels: usize,
    /// Hidden width of the mask-embedding conv.
    pub hidden: usize,
    /// Kernel size of all three convs.
    pub kernel: usize,
    pub eps: f64,
}

impl SpadeLayerConfig {
    pub fn new(channels: usize) -> Self {
        SpadeLayerConfig {
            channels,
            hidden: 128,
            kernel: 3,
            eps: 1e-5,
        }
    }
}

/// Spatially-adaptive denormalization: normalizes features with a
/// parameter-free instance norm, then modulates each pixel with a scale
/// and shift computed from the label map at the same resolution:
/// `out = gamma(mask) * norm(x) + beta(mask)`.
///
/// The literal `gamma *` form (not `(1 + gamma) *`) is kept; to make the
/// layer near-identity at initialization, the gamma conv's bias starts at
/// one instead.
#[derive(Debug, Clone)]
pub struct SpadeLayer {
    cfg: SpadeLayerConfig,
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
}

impl SpadeLayer {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: SpadeLayerConfig,
    ) -> Self {
        let pad = cfg.kernel / 2;
        let shared = Conv2d::new(
            params,
            rng,
            &format!("{name}.shared"),
            1,
            cfg.hidden,
            cfg.kernel,
            1,
            pad,
        );
        let gamma = {
            let w = params.add(
                format!("{name}.gamma.w"),
                normal_init(&[cfg.channels, cfg.hidden, cfg.kernel, cfg.kernel], INIT_STD, rng),
            );
            let b = params.add(
                format!("{name}.gamma.b"),
                ndarray::ArrayD::from_elem(vec![cfg.channels], 1.0),
            );
            Conv2d { w, b, stride: 1, pad }
        };
        let beta = Conv2d::new(
            params,
            rng,
            &format!("{name}.beta"),
            cfg.hidden,
            cfg.channels,
            cfg.kernel,
            1,
            pad,
        );
        SpadeLayer {
            cfg,
            shared,
            gamma,
            beta,
        }
    }

    /// Modulates `x` (`[N, C, H, W]`) by `mask` (`[N, 1, H, W]`), which
    /// must already be resampled to x's resolution.
    pub fn forward(&self, t: &Tape, p: &Params, x: Var, mask: Var) -> Result<Var, NnError> {
        let xs = t.shape(x);
        let ms = t.shape(mask);
        if ms[1] != 1 {
            return Err(NnError::WrongChannelCount {
                got: ms[1],
                want: 1,
            });
        }
        if xs[1] != self.cfg.channels {
            return Err(NnError::WrongChannelCount {
                got: xs[1],
                want: self.cfg.channels,
            });
        }
        if xs[2] != ms[2] || xs[3] != ms[3] {
            return Err(NnError::WrongInputSize {
                got_h: ms[2],
                got_w: ms[3],
                want_h: xs[2],
                want_w: xs[3],
            });
        }

        let normalized = t.instance_norm(x, self.cfg.eps);
        let embedded = t.relu(self.shared.forward(t, p, mask));
        let gamma = self.gamma.forward(t, p, embedded);
        let beta = self.beta.forward(t, p, embedded);
        let scaled = t.mul(gamma, normalized);
        Ok(t.add(scaled, beta))
    }
}
