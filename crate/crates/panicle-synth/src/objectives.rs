//! GAN and feature-matching objectives shared by both generator families.
//!
//! Probabilities never appear explicitly: every term is evaluated on raw
//! logits through numerically stable softplus forms, so saturated
//! discriminators produce large-but-finite losses instead of infinities.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::discriminator::ScaleOutput;
use crate::nn::{NnError, Tape, Var};

/// Relative weight of the feature-matching term in the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_fm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_fm: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NnError> {
        if !self.lambda_fm.is_finite() || self.lambda_fm < 0.0 {
            return Err(NnError::BadConfig {
                what: "lambda_fm",
                requirement: "a finite nonnegative scalar",
                got: self.lambda_fm.to_string(),
            });
        }
        Ok(())
    }
}

/// Which adversarial surrogate the generator minimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorGanMode {
    /// −E\[log D(fake)\]: the standard non-saturating surrogate.
    #[default]
    NonSaturating,
    /// E\[log(1 − D(fake))\]: the literal minimax term; kept for loss-value
    /// verification, its gradient vanishes once the discriminator wins.
    Literal,
}

fn mean_softplus(t: &Tape, x: Var) -> Var {
    t.mean_all(t.softplus(x))
}

fn mean_softplus_neg(t: &Tape, x: Var) -> Var {
    let neg = t.neg(x);
    t.mean_all(t.softplus(neg))
}

/// −(E[log D(real)] + E[log(1 − D(fake))]) over batch and patch locations.
pub fn discriminator_gan_loss(t: &Tape, real_logits: Var, fake_logits: Var) -> Var {
    let real_term = mean_softplus_neg(t, real_logits);
    let fake_term = mean_softplus(t, fake_logits);
    t.add(real_term, fake_term)
}

/// The generator's adversarial term on fake logits (see
/// [`GeneratorGanMode`]).
pub fn generator_gan_loss(t: &Tape, fake_logits: Var, mode: GeneratorGanMode) -> Var {
    match mode {
        GeneratorGanMode::NonSaturating => mean_softplus_neg(t, fake_logits),
        GeneratorGanMode::Literal => t.neg(mean_softplus(t, fake_logits)),
    }
}

/// Σ over layers of the mean absolute difference between real and fake
/// feature maps. Real features are detached: this term trains the
/// generator against the discriminator's current representation, never
/// the other way around.
pub fn feature_matching_loss(
    t: &Tape,
    real_features: &[Var],
    fake_features: &[Var],
) -> Result<Var, NnError> {
    if real_features.len() != fake_features.len() {
        return Err(NnError::MismatchedFeatureLists {
            got: fake_features.len(),
            want: real_features.len(),
        });
    }
    let mut total = t.constant(ArrayD::zeros(vec![1]));
    for (layer, (&real, &fake)) in real_features.iter().zip(fake_features).enumerate() {
        let (rs, fs) = (t.shape(real), t.shape(fake));
        if rs != fs {
            return Err(NnError::MismatchedFeatureShapes {
                layer,
                a: rs,
                b: fs,
            });
        }
        let diff = t.sub(t.detach(real), fake);
        total = t.add(total, t.mean_all(t.abs(diff)));
    }
    Ok(total)
}

/// Loss values of one training step, for logs and monitoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLoss {
    pub gan_g: f64,
    pub gan_d: f64,
    pub fm: f64,
}

/// Totals plus the per-scale decomposition; `total_g = gan_g + λ·fm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_g: f64,
    pub gan_d: f64,
    pub fm: f64,
    pub total_g: f64,
    pub per_scale: Vec<ScaleLoss>,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.gan_g.is_finite() && self.gan_d.is_finite() && self.fm.is_finite()
    }
}

/// Differentiable loss nodes plus their recorded values.
///
/// `generator_total` must be built from a discriminator pass on the live
/// fake image, `discriminator_total` from a pass on a detached fake;
/// sharing one pass would couple the two updates.
#[derive(Debug, Clone)]
pub struct CompositeLosses {
    pub generator_total: Var,
    pub discriminator_total: Var,
    pub breakdown: LossBreakdown,
}

/// Assembles the full objective over discriminator scales.
///
/// `real_outs` come from the discriminator on the real pair,
/// `fake_outs_d` on the detached fake (feeds the discriminator loss), and
/// `fake_outs_g` on the live fake (feeds the generator loss and feature
/// matching against `real_outs`' features).
pub fn composite_losses(
    t: &Tape,
    real_outs: &[ScaleOutput],
    fake_outs_d: &[ScaleOutput],
    fake_outs_g: &[ScaleOutput],
    weights: &LossWeights,
    mode: GeneratorGanMode,
) -> Result<CompositeLosses, NnError> {
    weights.validate()?;
    if real_outs.len() != fake_outs_d.len() || real_outs.len() != fake_outs_g.len() {
        return Err(NnError::MismatchedFeatureLists {
            got: fake_outs_d.len().min(fake_outs_g.len()),
            want: real_outs.len(),
        });
    }

    let mut gan_g_sum = t.constant(ArrayD::zeros(vec![1]));
    let mut gan_d_sum = t.constant(ArrayD::zeros(vec![1]));
    let mut fm_sum = t.constant(ArrayD::zeros(vec![1]));
    let mut per_scale = Vec::with_capacity(real_outs.len());

    for ((real, fake_d), fake_g) in real_outs.iter().zip(fake_outs_d).zip(fake_outs_g) {
        let gan_d = discriminator_gan_loss(t, real.logits, fake_d.logits);
        let gan_g = generator_gan_loss(t, fake_g.logits, mode);
        let fm = feature_matching_loss(t, &real.features, &fake_g.features)?;
        per_scale.push(ScaleLoss {
            gan_g: t.scalar(gan_g),
            gan_d: t.scalar(gan_d),
            fm: t.scalar(fm),
        });
        gan_g_sum = t.add(gan_g_sum, gan_g);
        gan_d_sum = t.add(gan_d_sum, gan_d);
        fm_sum = t.add(fm_sum, fm);
    }

    let generator_total = t.add(gan_g_sum, t.scale(fm_sum, weights.lambda_fm));
    let breakdown = LossBreakdown {
        gan_g: t.scalar(gan_g_sum),
        gan_d: t.scalar(gan_d_sum),
        fm: t.scalar(fm_sum),
        total_g: t.scalar(generator_total),
        per_scale,
    };
    Ok(CompositeLosses {
        generator_total,
        discriminator_total: gan_d_sum,
        breakdown,
    })
}
