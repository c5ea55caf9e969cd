//! Spatial ops: convolutions (via im2col and GEMM), pooling, nearest
//! upsampling, and instance normalization. All tensors are NCHW.

use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayD, ArrayView3, ArrayViewMut3, Ix4};

use super::tape::{Tape, Var};

/// Output edge length of a convolution along one axis.
fn conv_out(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= k,
        "conv: input {input} with pad {pad} is smaller than kernel {k}"
    );
    (input + 2 * pad - k) / stride + 1
}

/// Unfolds `x` into `[C*kh*kw, Ho*Wo]` patch columns, zero-padding
/// virtually.
fn im2col(
    x: ArrayView3<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * kh * kw, ho * wo));
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let mut out_row = cols.row_mut(row);
                let mut l = 0usize;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        l += wo;
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            out_row[l] = x[(c, ii as usize, jj as usize)];
                        }
                        l += 1;
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back onto a
/// `[C, h, w]` image. `ho`/`wo` describe the patch grid.
fn col2im(
    cols: &Array2<f64>,
    mut image: ArrayViewMut3<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let (c_out, h, w) = image.dim();
    debug_assert_eq!(cols.nrows(), c_out * kh * kw);
    debug_assert_eq!(cols.ncols(), ho * wo);
    for c in 0..c_out {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let col_row = cols.row(row);
                let mut l = 0usize;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        l += wo;
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            image[(c, ii as usize, jj as usize)] += col_row[l];
                        }
                        l += 1;
                    }
                }
            }
        }
    }
}

fn as_4d(a: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    a.view()
        .into_dimensionality::<Ix4>()
        .expect("spatial ops take NCHW tensors")
}

impl Tape {
    /// 2-d convolution: `x` is `[N, C, H, W]`, `w` is `[F, C, kh, kw]`,
    /// `b` is `[F]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let x4 = as_4d(&xv);
        let w4 = as_4d(&wv);
        let (n, c_in, h, win) = x4.dim();
        let (f, wc, kh, kw) = w4.dim();
        assert_eq!(c_in, wc, "conv2d: channel mismatch");
        assert_eq!(bv.len(), f, "conv2d: bias length mismatch");
        assert!(stride >= 1, "conv2d: stride must be positive");
        let ho = conv_out(h, kh, stride, pad);
        let wo = conv_out(win, kw, stride, pad);

        let w_flat = w4
            .to_owned()
            .into_shape_with_order((f, c_in * kh * kw))
            .expect("weights are contiguous");

        let mut out = Array4::<f64>::zeros((n, f, ho, wo));
        for i in 0..n {
            let cols = im2col(x4.slice(s![i, .., .., ..]), kh, kw, stride, pad, ho, wo);
            let mut prod = Array2::<f64>::zeros((f, ho * wo));
            general_mat_mul(1.0, &w_flat, &cols, 0.0, &mut prod);
            let mut out_i = out.slice_mut(s![i, .., .., ..]);
            for ff in 0..f {
                let bias = bv[[ff]];
                let prod_row = prod.row(ff);
                let mut plane = out_i.slice_mut(s![ff, .., ..]);
                for (dst, &src) in plane.iter_mut().zip(prod_row.iter()) {
                    *dst = src + bias;
                }
            }
        }

        self.push_op(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |g| {
                let g4 = as_4d(g);
                let x4 = as_4d(&xv);
                let w4 = as_4d(&wv);
                let w_flat = w4
                    .to_owned()
                    .into_shape_with_order((f, c_in * kh * kw))
                    .expect("weights are contiguous");

                let mut gx = Array4::<f64>::zeros((n, c_in, h, win));
                let mut gw_flat = Array2::<f64>::zeros((f, c_in * kh * kw));
                let mut gb = ndarray::Array1::<f64>::zeros(f);
                for i in 0..n {
                    let g_i = g4
                        .slice(s![i, .., .., ..])
                        .to_owned()
                        .into_shape_with_order((f, ho * wo))
                        .expect("gradient is contiguous");
                    // Patch columns are recomputed rather than cached:
                    // tapes stay lean and the cost is one extra unfold.
                    let cols =
                        im2col(x4.slice(s![i, .., .., ..]), kh, kw, stride, pad, ho, wo);
                    general_mat_mul(1.0, &g_i, &cols.t(), 1.0, &mut gw_flat);

                    let mut dcols = Array2::<f64>::zeros((c_in * kh * kw, ho * wo));
                    general_mat_mul(1.0, &w_flat.t(), &g_i, 0.0, &mut dcols);
                    col2im(
                        &dcols,
                        gx.slice_mut(s![i, .., .., ..]),
                        kh,
                        kw,
                        stride,
                        pad,
                        ho,
                        wo,
                    );

                    for ff in 0..f {
                        gb[ff] += g_i.row(ff).sum();
                    }
                }
                let gw = gw_flat
                    .into_shape_with_order((f, c_in, kh, kw))
                    .expect("same element count");
                vec![gx.into_dyn(), gw.into_dyn(), gb.into_dyn()]
            }),
        )
    }

    /// Transposed 2-d convolution (the conv2d adjoint as a forward op):
    /// `x` is `[N, C_in, H, W]`, `w` is `[C_in, C_out, kh, kw]`, `b` is
    /// `[C_out]`. Output edge: `(H-1)*stride + kh - 2*pad + out_pad`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let x4 = as_4d(&xv);
        let w4 = as_4d(&wv);
        let (n, c_in, hi, wi) = x4.dim();
        let (wc, c_out, kh, kw) = w4.dim();
        assert_eq!(c_in, wc, "conv_transpose2d: channel mismatch");
        assert_eq!(bv.len(), c_out, "conv_transpose2d: bias length mismatch");
        assert!(stride >= 1, "conv_transpose2d: stride must be positive");
        assert!(
            out_pad < stride,
            "conv_transpose2d: output padding must be smaller than stride"
        );
        let ho = (hi - 1) * stride + kh + out_pad;
        let wo = (wi - 1) * stride + kw + out_pad;
        assert!(
            ho > 2 * pad && wo > 2 * pad,
            "conv_transpose2d: padding consumes the whole output"
        );
        let (ho, wo) = (ho - 2 * pad, wo - 2 * pad);

        let w_flat = w4
            .to_owned()
            .into_shape_with_order((c_in, c_out * kh * kw))
            .expect("weights are contiguous");

        let mut out = Array4::<f64>::zeros((n, c_out, ho, wo));
        for i in 0..n {
            let x_i = x4
                .slice(s![i, .., .., ..])
                .to_owned()
                .into_shape_with_order((c_in, hi * wi))
                .expect("input is contiguous");
            let mut cols = Array2::<f64>::zeros((c_out * kh * kw, hi * wi));
            general_mat_mul(1.0, &w_flat.t(), &x_i, 0.0, &mut cols);
            col2im(
                &cols,
                out.slice_mut(s![i, .., .., ..]),
                kh,
                kw,
                stride,
                pad,
                hi,
                wi,
            );
        }
        for co in 0..c_out {
            let bias = bv[[co]];
            out.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bias);
        }

        self.push_op(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |g| {
                let g4 = as_4d(g);
                let x4 = as_4d(&xv);
                let w4 = as_4d(&wv);
                let w_flat = w4
                    .to_owned()
                    .into_shape_with_order((c_in, c_out * kh * kw))
                    .expect("weights are contiguous");

                let mut gx = Array4::<f64>::zeros((n, c_in, hi, wi));
                let mut gw_flat = Array2::<f64>::zeros((c_in, c_out * kh * kw));
                let mut gb = ndarray::Array1::<f64>::zeros(c_out);
                for i in 0..n {
                    // The adjoint of col2im is im2col on the output grad.
                    let gcols =
                        im2col(g4.slice(s![i, .., .., ..]), kh, kw, stride, pad, hi, wi);
                    let mut gx_i = Array2::<f64>::zeros((c_in, hi * wi));
                    general_mat_mul(1.0, &w_flat, &gcols, 0.0, &mut gx_i);
                    gx.slice_mut(s![i, .., .., ..])
                        .assign(
                            &gx_i
                                .into_shape_with_order((c_in, hi, wi))
                                .expect("same element count"),
                        );

                    let x_i = x4
                        .slice(s![i, .., .., ..])
                        .to_owned()
                        .into_shape_with_order((c_in, hi * wi))
                        .expect("input is contiguous");
                    general_mat_mul(1.0, &x_i, &gcols.t(), 1.0, &mut gw_flat);

                    for co in 0..c_out {
                        gb[co] += g4.slice(s![i, co, .., ..]).sum();
                    }
                }
                let gw = gw_flat
                    .into_shape_with_order((c_in, c_out, kh, kw))
                    .expect("same element count");
                vec![gx.into_dyn(), gw.into_dyn(), gb.into_dyn()]
            }),
        )
    }

    /// 2x2 average pooling with stride 2. Requires even spatial dims so
    /// the pooling pyramid stays exact.
    pub fn avg_pool2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let x4 = as_4d(&xv);
        let (n, c, h, w) = x4.dim();
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "avg_pool2: spatial dims must be even, got {h}x{w}"
        );
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Array4::<f64>::zeros((n, c, ho, wo));
        for i in 0..n {
            for cc in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let s = x4[(i, cc, 2 * oi, 2 * oj)]
                            + x4[(i, cc, 2 * oi, 2 * oj + 1)]
                            + x4[(i, cc, 2 * oi + 1, 2 * oj)]
                            + x4[(i, cc, 2 * oi + 1, 2 * oj + 1)];
                        out[(i, cc, oi, oj)] = s / 4.0;
                    }
                }
            }
        }
        self.push_op(
            out.into_dyn(),
            vec![x],
            Box::new(move |g| {
                let g4 = as_4d(g);
                let mut gx = Array4::<f64>::zeros((n, c, h, w));
                for i in 0..n {
                    for cc in 0..c {
                        for oi in 0..ho {
                            for oj in 0..wo {
                                let v = g4[(i, cc, oi, oj)] / 4.0;
                                gx[(i, cc, 2 * oi, 2 * oj)] = v;
                                gx[(i, cc, 2 * oi, 2 * oj + 1)] = v;
                                gx[(i, cc, 2 * oi + 1, 2 * oj)] = v;
                                gx[(i, cc, 2 * oi + 1, 2 * oj + 1)] = v;
                            }
                        }
                    }
                }
                vec![gx.into_dyn()]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let x4 = as_4d(&xv);
        let (n, c, h, w) = x4.dim();
        let mut out = Array4::<f64>::zeros((n, c, 2 * h, 2 * w));
        for i in 0..n {
            for cc in 0..c {
                for r in 0..h {
                    for col in 0..w {
                        let v = x4[(i, cc, r, col)];
                        out[(i, cc, 2 * r, 2 * col)] = v;
                        out[(i, cc, 2 * r, 2 * col + 1)] = v;
                        out[(i, cc, 2 * r + 1, 2 * col)] = v;
                        out[(i, cc, 2 * r + 1, 2 * col + 1)] = v;
                    }
                }
            }
        }
        self.push_op(
            out.into_dyn(),
            vec![x],
            Box::new(move |g| {
                let g4 = as_4d(g);
                let mut gx = Array4::<f64>::zeros((n, c, h, w));
                for i in 0..n {
                    for cc in 0..c {
                        for r in 0..h {
                            for col in 0..w {
                                gx[(i, cc, r, col)] = g4[(i, cc, 2 * r, 2 * col)]
                                    + g4[(i, cc, 2 * r, 2 * col + 1)]
                                    + g4[(i, cc, 2 * r + 1, 2 * col)]
                                    + g4[(i, cc, 2 * r + 1, 2 * col + 1)];
                            }
                        }
                    }
                }
                vec![gx.into_dyn()]
            }),
        )
    }

    /// Instance normalization: each `(sample, channel)` plane is
    /// standardized to zero mean and unit variance (no learned affine).
    pub fn instance_norm(&self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let x4 = as_4d(&xv);
        let (n, c, h, w) = x4.dim();
        let plane = (h * w) as f64;
        assert!(h * w > 1, "instance_norm needs more than one pixel per plane");

        let mut y = Array4::<f64>::zeros((n, c, h, w));
        let mut sigma = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            for cc in 0..c {
                let xp = x4.slice(s![i, cc, .., ..]);
                let mean = xp.sum() / plane;
                let var = xp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane;
                let sd = (var + eps).sqrt();
                sigma[(i, cc)] = sd;
                let mut yp = y.slice_mut(s![i, cc, .., ..]);
                for (dst, &src) in yp.iter_mut().zip(xp.iter()) {
                    *dst = (src - mean) / sd;
                }
            }
        }

        let y_rc = Rc::new(y.into_dyn());
        let y_for_grad = Rc::clone(&y_rc);
        self.push(
            y_rc,
            vec![x.id],
            Some(Box::new(move |g| {
                let g4 = as_4d(g);
                let y4 = as_4d(&y_for_grad);
                let mut gx = Array4::<f64>::zeros((n, c, h, w));
                for i in 0..n {
                    for cc in 0..c {
                        let gp = g4.slice(s![i, cc, .., ..]);
                        let yp = y4.slice(s![i, cc, .., ..]);
                        let mean_g = gp.sum() / plane;
                        let mean_gy = gp
                            .iter()
                            .zip(yp.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / plane;
                        let sd = sigma[(i, cc)];
                        let mut gxp = gx.slice_mut(s![i, cc, .., ..]);
                        for ((dst, &gv), &yv) in
                            gxp.iter_mut().zip(gp.iter()).zip(yp.iter())
                        {
                            *dst = (gv - mean_g - yv * mean_gy) / sd;
                        }
                    }
                }
                vec![gx.into_dyn()]
            })),
        )
    }
}

/// Plain-array 2x2 average pooling over `[C, H, W]`, for preparing
/// half-resolution training targets (no gradient involved).
pub fn avg_pool2_chw(a: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = a.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2_chw: dims must be even");
    Array3::from_shape_fn((c, h / 2, w / 2), |(cc, i, j)| {
        (a[(cc, 2 * i, 2 * j)]
            + a[(cc, 2 * i, 2 * j + 1)]
            + a[(cc, 2 * i + 1, 2 * j)]
            + a[(cc, 2 * i + 1, 2 * j + 1)])
            / 4.0
    })
}

/// Plain-array nearest resize over `[N, C, H, W]`, for feeding masks to
/// stages that run below full resolution.
pub fn resize_nearest_nchw(a: &ArrayD<f64>, oh: usize, ow: usize) -> ArrayD<f64> {
    let a4 = as_4d(a);
    let (n, c, h, w) = a4.dim();
    Array4::from_shape_fn((n, c, oh, ow), |(i, cc, r, col)| {
        a4[(i, cc, (r * h) / oh, (col * w) / ow)]
    })
    .into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, ArrayD};

    #[test]
    fn conv2d_hand_example() {
        // 1x1x3x3 input, 1x1x2x2 kernel of ones, stride 1, no padding:
        // each output is the sum of a 2x2 window.
        let t = Tape::new();
        let x = t.constant(
            ArrayD::from_shape_vec(
                vec![1, 1, 3, 3],
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            )
            .unwrap(),
        );
        let w = t.constant(ArrayD::from_elem(vec![1, 1, 2, 2], 1.0));
        let b = t.constant(arr1(&[0.5]).into_dyn());
        let y = t.conv2d(x, w, b, 1, 0);
        let yv = t.value(y);
        let expect =
            ArrayD::from_shape_vec(vec![1, 1, 2, 2], vec![12.5, 16.5, 24.5, 28.5]).unwrap();
        crate::nn::assert_close(&yv, &expect, 1e-12);
    }

    #[test]
    fn conv2d_stride_and_padding_shapes() {
        let t = Tape::new();
        let x = t.constant(ArrayD::zeros(vec![2, 3, 8, 8]));
        let w = t.constant(ArrayD::zeros(vec![5, 3, 3, 3]));
        let b = t.constant(ArrayD::zeros(vec![5]));
        assert_eq!(t.shape(t.conv2d(x, w, b, 2, 1)), vec![2, 5, 4, 4]);

        let w7 = t.constant(ArrayD::zeros(vec![4, 3, 7, 7]));
        let b7 = t.constant(ArrayD::zeros(vec![4]));
        assert_eq!(t.shape(t.conv2d(x, w7, b7, 1, 3)), vec![2, 4, 8, 8]);
    }

    #[test]
    fn conv_transpose_inverts_conv_shape() {
        let t = Tape::new();
        let x = t.constant(ArrayD::zeros(vec![1, 6, 5, 5]));
        let w = t.constant(ArrayD::zeros(vec![6, 3, 3, 3]));
        let b = t.constant(ArrayD::zeros(vec![3]));
        // k3 s2 p1 op1 exactly doubles: 5 -> 10.
        let y = t.conv_transpose2d(x, w, b, 2, 1, 1);
        assert_eq!(t.shape(y), vec![1, 3, 10, 10]);
    }

    #[test]
    fn conv_transpose_matches_adjoint_identity() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias:
        // the defining property of the transpose.
        use rand::Rng;
        let mut rng = crate::rng::seeded(4, 0);
        let mut rand_arr = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            ArrayD::from_shape_vec(
                shape,
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
            )
            .unwrap()
        };
        let (stride, pad) = (2, 1);
        let xa = rand_arr(vec![1, 2, 6, 6]);
        let wa = rand_arr(vec![3, 2, 3, 3]); // conv layout [F, C, kh, kw]
        let ya = rand_arr(vec![1, 3, 3, 3]); // conv output shape for 6x6,k3,s2,p1

        let t = Tape::new();
        let x = t.constant(xa.clone());
        let w = t.constant(wa.clone());
        let zero_f = t.constant(ArrayD::zeros(vec![3]));
        let zero_c = t.constant(ArrayD::zeros(vec![2]));
        let y = t.constant(ya.clone());

        let cx = t.conv2d(x, w, zero_f, stride, pad);
        let lhs: f64 = (&*t.value(cx) * &ya).sum();

        // The transpose uses the same weight memory, with the leading axes
        // read as [C_in=3, C_out=2]; out_pad 1 restores the even size 6.
        let wt = t.constant(wa.clone());
        let cty = t.conv_transpose2d(y, wt, zero_c, stride, pad, 1);
        let rhs: f64 = (&*t.value(cty) * &xa).sum();
        assert!(
            (lhs - rhs).abs() < 1e-10,
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn pool_and_upsample_are_adjoint_up_to_scale() {
        let t = Tape::new();
        let x = t.constant(
            ArrayD::from_shape_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let up = t.upsample_nearest2(x);
        assert_eq!(t.shape(up), vec![1, 1, 4, 4]);
        let down = t.avg_pool2(up);
        // Nearest-up then average-down is the identity.
        crate::nn::assert_close(&t.value(down), &t.value(x), 1e-12);
    }

    #[test]
    fn instance_norm_standardizes_each_plane() {
        let t = Tape::new();
        let x = t.constant(
            ArrayD::from_shape_vec(
                vec![1, 2, 2, 2],
                vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 20.0, 20.0],
            )
            .unwrap(),
        );
        let y = t.instance_norm(x, 1e-5);
        let yv = t.value(y);
        for cc in 0..2 {
            let plane = yv.slice(s![0, cc, .., ..]);
            assert!(plane.sum().abs() < 1e-9, "mean not removed");
            let var = plane.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-3, "variance {var} not unit");
        }
    }

    #[test]
    fn plain_helpers_match_tape_ops() {
        let a = Array3::from_shape_fn((2, 4, 4), |(c, r, col)| (c * 16 + r * 4 + col) as f64);
        let pooled = avg_pool2_chw(&a);
        assert_eq!(pooled.dim(), (2, 2, 2));
        assert!((pooled[(0, 0, 0)] - (0.0 + 1.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);

        let m = ArrayD::from_shape_fn(vec![1, 1, 4, 4], |ix| {
            f64::from(u8::from(ix[2] >= 2))
        });
        let half = resize_nearest_nchw(&m, 2, 2);
        assert_eq!(half.shape(), &[1, 1, 2, 2]);
        assert_eq!(half[[0, 0, 0, 0]], 0.0);
        assert_eq!(half[[0, 0, 1, 0]], 1.0);
    }
}
