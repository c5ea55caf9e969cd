//! Numerical gradient verification by central differences.
//!
//! Every differentiable building block is validated against
//! finite differences in 64-bit before it is trusted in training; the
//! checks live in unit tests and in the acceptance suite.

use ndarray::ArrayD;

use super::params::Params;
use super::tape::{Tape, Var};

/// Result of comparing one parameter's analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Worst relative error across the tensor's elements.
    pub max_rel_err: f64,
    /// Index of the worst element, for debugging.
    pub worst_index: usize,
}

/// Default central-difference step. With f64 and losses of order 1, a
/// step near the cube root of machine epsilon balances truncation and
/// round-off.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Default acceptance threshold on relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero gradient pairs
/// compare by absolute difference instead of exploding. The floor must sit
/// above central-difference round-off (~1e-11 for unit-scale losses at
/// step 1e-5): parameters with exactly zero analytic gradient — e.g. a
/// conv bias whose plane shift the following instance norm removes — are
/// otherwise compared against pure noise.
fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Checks analytic parameter gradients of `loss_fn` against central
/// differences, perturbing every element of every parameter.
///
/// `loss_fn` must be a pure function of the parameter store: it is called
/// once per perturbation on a fresh tape.
pub fn check_param_gradients(
    params: &mut Params,
    mut loss_fn: impl FnMut(&Tape, &Params) -> Var,
    step: f64,
) -> Vec<GradCheckReport> {
    // Analytic pass.
    let tape = Tape::new();
    let loss = loss_fn(&tape, params);
    let grads = tape.backward(loss);
    let analytic = tape.param_gradients(&grads, params);

    let mut reports = Vec::with_capacity(params.len());
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.value(id).len();
        let zero = ArrayD::zeros(params.value(id).raw_dim());
        let analytic_grad = analytic[id.index()].as_ref().unwrap_or(&zero);

        let mut max_rel_err = 0.0f64;
        let mut worst_index = 0usize;
        for j in 0..n {
            let original = params.value(id).as_slice().expect("standard layout")[j];

            params.value_mut(id).as_slice_mut().expect("standard layout")[j] =
                original + step;
            let t_plus = Tape::new();
            let plus = t_plus.scalar(loss_fn(&t_plus, params));

            params.value_mut(id).as_slice_mut().expect("standard layout")[j] =
                original - step;
            let t_minus = Tape::new();
            let minus = t_minus.scalar(loss_fn(&t_minus, params));

            params.value_mut(id).as_slice_mut().expect("standard layout")[j] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic_grad.as_slice().expect("standard layout")[j];
            let e = rel_err(a, numeric);
            if e > max_rel_err {
                max_rel_err = e;
                worst_index = j;
            }
        }
        reports.push(GradCheckReport {
            name: params.name(id).to_owned(),
            max_rel_err,
            worst_index,
        });
    }
    reports
}

/// Convenience wrapper asserting every parameter passes `tolerance`.
/// Panics with the offending parameter names; meant for tests.
pub fn assert_param_gradients(
    params: &mut Params,
    loss_fn: impl FnMut(&Tape, &Params) -> Var,
    step: f64,
    tolerance: f64,
) {
    let reports = check_param_gradients(params, loss_fn, step);
    let failures: Vec<String> = reports
        .iter()
        .filter(|r| r.max_rel_err > tolerance)
        .map(|r| {
            format!(
                "{}: rel err {:.3e} at element {}",
                r.name, r.max_rel_err, r.worst_index
            )
        })
        .collect();
    assert!(
        failures.is_empty(),
        "gradient check failed:\n{}",
        failures.join("\n")
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::arr1;

    #[test]
    fn passes_on_a_correct_composite() {
        let mut rng = seeded(1, 0);
        let mut params = Params::new();
        let w = params.add("w", super::super::normal_init(&[3, 2], 0.5, &mut rng));
        let b = params.add("b", super::super::normal_init(&[2], 0.5, &mut rng));

        let x = arr1(&[0.3, -1.2, 0.7]).into_dyn();
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let xv = t.reshape(t.constant(x.clone()), vec![1, 3]);
                let wv = t.param(p, w);
                let bv = t.param(p, b);
                let y = t.linear(xv, wv, bv);
                let y = t.tanh(y);
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // A deliberately broken op: forward x^2, backward pretends d/dx = x
        // (off by the factor 2).
        let mut params = Params::new();
        let w = params.add("w", arr1(&[1.5, -0.5]).into_dyn());
        let reports = check_param_gradients(
            &mut params,
            |t, p| {
                let wv = t.param(p, w);
                let wrong_square = {
                    let xv = t.value(wv);
                    let out = &*xv * &*xv;
                    let xv2 = xv.clone();
                    t.push_op(
                        out,
                        vec![wv],
                        Box::new(move |g| vec![g * &*xv2]),
                    )
                };
                t.mean_all(wrong_square)
            },
            DEFAULT_STEP,
        );
        assert!(
            reports[0].max_rel_err > 0.3,
            "broken gradient slipped through: {:?}",
            reports[0]
        );
    }

    // ------------------------------------------------------------------
    // Finite-difference validation of every differentiable building block,
    // with the inputs registered as parameters so d(loss)/d(input) is
    // checked alongside the weights.
    // ------------------------------------------------------------------

    use crate::nn::layers::{Activation, ConvBlock, ResidualBlock, SpadeLayer, SpadeLayerConfig};
    use crate::nn::discriminator::{
        MultiScaleDiscConfig, MultiScaleDiscriminator, PatchDiscriminator,
    };
    use ndarray::ArrayD;

    /// Fixed non-uniform weighting so means over normalized outputs keep
    /// nonzero gradients.
    fn ramp(shape: &[usize]) -> ArrayD<f64> {
        let n = shape.iter().product::<usize>();
        ArrayD::from_shape_vec(
            shape.to_vec(),
            (0..n).map(|i| 0.3 + 0.7 * (i as f64 / n as f64)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv2d_strided_padded() {
        let mut rng = seeded(31, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[2, 3, 5, 5], 0.5, &mut rng));
        let w = params.add("w", super::super::normal_init(&[2, 3, 3, 3], 0.3, &mut rng));
        let b = params.add("b", super::super::normal_init(&[2], 0.3, &mut rng));
        assert_param_gradients(
            &mut params,
            |t, p| {
                let y = t.conv2d(t.param(p, x), t.param(p, w), t.param(p, b), 2, 1);
                let y = t.tanh(y);
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn conv2d_unpadded() {
        let mut rng = seeded(33, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 2, 4, 4], 0.5, &mut rng));
        let w = params.add("w", super::super::normal_init(&[3, 2, 3, 3], 0.3, &mut rng));
        let b = params.add("b", super::super::normal_init(&[3], 0.3, &mut rng));
        assert_param_gradients(
            &mut params,
            |t, p| {
                let y = t.conv2d(t.param(p, x), t.param(p, w), t.param(p, b), 1, 0);
                let y = t.tanh(y);
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn conv_transpose2d_upsampling() {
        let mut rng = seeded(35, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 3, 3, 3], 0.5, &mut rng));
        let w = params.add("w", super::super::normal_init(&[3, 2, 3, 3], 0.3, &mut rng));
        let b = params.add("b", super::super::normal_init(&[2], 0.3, &mut rng));
        assert_param_gradients(
            &mut params,
            |t, p| {
                let y =
                    t.conv_transpose2d(t.param(p, x), t.param(p, w), t.param(p, b), 2, 1, 1);
                let y = t.tanh(y);
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn instance_norm_fused_backward() {
        let mut rng = seeded(37, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[2, 2, 4, 4], 1.0, &mut rng));
        let weight = ramp(&[2, 2, 4, 4]);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let y = t.instance_norm(t.param(p, x), 1e-5);
                let y = t.mul(y, t.constant(weight.clone()));
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn pool_and_upsample_composite() {
        let mut rng = seeded(39, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 2, 4, 4], 0.8, &mut rng));
        let weight = ramp(&[1, 2, 4, 4]);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let pooled = t.avg_pool2(t.param(p, x));
                let up = t.upsample_nearest2(pooled);
                let y = t.mul(t.tanh(up), t.constant(weight.clone()));
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn conv_block_with_norm_and_leaky_relu() {
        let mut rng = seeded(41, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 2, 6, 6], 0.7, &mut rng));
        let block = ConvBlock::new(
            &mut params,
            &mut rng,
            "blk",
            2,
            3,
            3,
            2,
            1,
            true,
            Activation::LeakyReLU(0.2),
        );
        let weight = ramp(&[1, 3, 3, 3]);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let y = block.forward(t, p, t.param(p, x));
                let y = t.mul(y, t.constant(weight.clone()));
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn residual_block_end_to_end() {
        let mut rng = seeded(43, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 3, 6, 6], 0.7, &mut rng));
        let block = ResidualBlock::new(&mut params, &mut rng, "res", 3);
        let weight = ramp(&[1, 3, 6, 6]);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let y = block.forward(t, p, t.param(p, x));
                let y = t.mul(y, t.constant(weight.clone()));
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn spade_layer_weights_and_input() {
        let mut rng = seeded(45, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 2, 5, 5], 0.7, &mut rng));
        let layer = SpadeLayer::new(
            &mut params,
            &mut rng,
            "spade",
            SpadeLayerConfig {
                channels: 2,
                hidden: 4,
                kernel: 3,
                eps: 1e-5,
            },
        );
        let mask = ArrayD::from_shape_fn(vec![1, 1, 5, 5], |ix| {
            f64::from(u8::from((ix[2] + ix[3]) % 2 == 0))
        });
        let weight = ramp(&[1, 2, 5, 5]);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let y = layer
                    .forward(t, p, t.param(p, x), t.constant(mask.clone()))
                    .expect("shapes fixed");
                let y = t.mul(y, t.constant(weight.clone()));
                t.mean_all(y)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn patch_discriminator_logits_and_features() {
        let mut rng = seeded(47, 0);
        let mut params = Params::new();
        let x = params.add("x", super::super::normal_init(&[1, 4, 8, 8], 0.6, &mut rng));
        let disc = PatchDiscriminator::new(&mut params, &mut rng, "d", 4, 4, 2);
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let out = disc.forward(t, p, t.param(p, x)).expect("sized to fit");
                // Mix the logits and every feature tap into one scalar so
                // all taps receive gradient.
                let mut loss = t.mean_all(t.tanh(out.logits));
                for &f in &out.features {
                    let sq = t.mul(f, f);
                    loss = t.add(loss, t.scale(t.mean_all(sq), 0.05));
                }
                loss
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }

    #[test]
    fn multiscale_discriminator_all_scales() {
        let mut rng = seeded(49, 0);
        let mut params = Params::new();
        let image = params.add("img", super::super::normal_init(&[1, 3, 8, 8], 0.6, &mut rng));
        let cfg = MultiScaleDiscConfig {
            num_scales: 2,
            layers_per_disc: 1,
            base_channels: 3,
        };
        let disc =
            MultiScaleDiscriminator::new(&mut params, &mut rng, "msd", 3, cfg).expect("valid");
        let mask = ArrayD::from_shape_fn(vec![1, 1, 8, 8], |ix| {
            f64::from(u8::from(ix[2] >= 4))
        });
        assert_param_gradients(
            &mut params,
            move |t, p| {
                let outs = disc
                    .forward(t, p, t.param(p, image), t.constant(mask.clone()))
                    .expect("sized to fit");
                let mut loss = t.constant(ArrayD::zeros(vec![1]));
                for out in &outs {
                    loss = t.add(loss, t.mean_all(t.tanh(out.logits)));
                    for &f in &out.features {
                        let sq = t.mul(f, f);
                        loss = t.add(loss, t.scale(t.mean_all(sq), 0.05));
                    }
                }
                loss
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
    }
}
