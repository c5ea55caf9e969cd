//! Pointwise ops, reductions, and dense linear algebra on the tape.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, Axis, Ix2, Slice};

use super::tape::{Tape, Var};

/// Numerically stable softplus: `ln(1 + e^x)` without overflow.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid evaluated without overflow on either tail.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn binary_same_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        forward: impl Fn(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64>,
        backward: impl Fn(&ArrayD<f64>, &ArrayD<f64>, &ArrayD<f64>) -> (ArrayD<f64>, ArrayD<f64>)
            + 'static,
    ) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(
            av.shape(),
            bv.shape(),
            "{op}: operand shapes must match"
        );
        let out = forward(&av, &bv);
        self.push_op(
            out,
            vec![a, b],
            Box::new(move |g| {
                let (ga, gb) = backward(g, &av, &bv);
                vec![ga, gb]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary_same_shape(
            "add",
            a,
            b,
            |x, y| x + y,
            |g, _, _| (g.clone(), g.clone()),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary_same_shape(
            "sub",
            a,
            b,
            |x, y| x - y,
            |g, _, _| (g.clone(), -g),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary_same_shape(
            "mul",
            a,
            b,
            |x, y| x * y,
            |g, x, y| (g * y, g * x),
        )
    }

    fn unary(
        &self,
        x: Var,
        forward: impl Fn(&ArrayD<f64>) -> ArrayD<f64>,
        backward: impl Fn(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64> + 'static,
    ) -> Var {
        let xv = self.value(x);
        let out = forward(&xv);
        self.push_op(
            out,
            vec![x],
            Box::new(move |g| vec![backward(g, &xv)]),
        )
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, move |g, _| g * c)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.mapv(|e| e.max(0.0)),
            |g, xv| g * &xv.mapv(|e| f64::from(e > 0.0)),
        )
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| v.mapv(|e| if e > 0.0 { e } else { slope * e }),
            move |g, xv| g * &xv.mapv(|e| if e > 0.0 { 1.0 } else { slope }),
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        let xv = self.value(x);
        let y = xv.mapv(f64::tanh);
        let y_for_grad = y.clone();
        self.push_op(
            y,
            vec![x],
            Box::new(move |g| vec![g * &y_for_grad.mapv(|t| 1.0 - t * t)]),
        )
    }

    pub fn exp(&self, x: Var) -> Var {
        let xv = self.value(x);
        let y = xv.mapv(f64::exp);
        let y_for_grad = y.clone();
        self.push_op(y, vec![x], Box::new(move |g| vec![g * &y_for_grad]))
    }

    pub fn abs(&self, x: Var) -> Var {
        // Subgradient 0 at the kink, the usual convention for L1 losses.
        self.unary(
            x,
            |v| v.mapv(f64::abs),
            |g, xv| g * &xv.mapv(|e| if e == 0.0 { 0.0 } else { e.signum() }),
        )
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.mapv(softplus_scalar),
            |g, xv| g * &xv.mapv(sigmoid_scalar),
        )
    }

    /// Mean over every element, yielding a scalar (shape `[1]`) node.
    pub fn mean_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let mean = xv.sum() / n;
        let shape = xv.raw_dim();
        self.push_op(
            ArrayD::from_elem(vec![1], mean),
            vec![x],
            Box::new(move |g| vec![ArrayD::from_elem(shape.clone(), g[[0]] / n)]),
        )
    }

    /// Sum over every element, yielding a scalar (shape `[1]`) node.
    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.raw_dim();
        self.push_op(
            ArrayD::from_elem(vec![1], xv.sum()),
            vec![x],
            Box::new(move |g| vec![ArrayD::from_elem(shape.clone(), g[[0]])]),
        )
    }

    /// Reshape preserving element order (row-major).
    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Var {
        let xv = self.value(x);
        assert_eq!(
            xv.len(),
            shape.iter().product::<usize>(),
            "reshape: element count must be preserved"
        );
        let old_shape = xv.shape().to_vec();
        let out = to_shape(&xv, &shape);
        self.push_op(
            out,
            vec![x],
            Box::new(move |g| vec![to_shape(g, &old_shape)]),
        )
    }

    /// `x @ w` for 2-d operands `[n, k] x [k, m]`.
    pub fn matmul(&self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let x2 = as_2d(&xv);
        let w2 = as_2d(&wv);
        assert_eq!(x2.ncols(), w2.nrows(), "matmul: inner dimensions differ");

        let mut out = Array2::<f64>::zeros((x2.nrows(), w2.ncols()));
        general_mat_mul(1.0, &x2, &w2, 0.0, &mut out);
        self.push_op(
            out.into_dyn(),
            vec![x, w],
            Box::new(move |g| {
                let g2 = as_2d(g);
                let x2 = as_2d(&xv);
                let w2 = as_2d(&wv);
                let mut gx = Array2::<f64>::zeros(x2.raw_dim());
                let mut gw = Array2::<f64>::zeros(w2.raw_dim());
                general_mat_mul(1.0, &g2, &w2.t().to_owned(), 0.0, &mut gx);
                general_mat_mul(1.0, &x2.t().to_owned(), &g2, 0.0, &mut gw);
                vec![gx.into_dyn(), gw.into_dyn()]
            }),
        )
    }

    /// Fused affine layer: `x @ w + b`, broadcasting `b` over rows.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let bv = self.value(b);
        let prod = self.matmul(x, w);
        let pv = self.value(prod);
        let p2 = as_2d(&pv);
        assert_eq!(bv.len(), p2.ncols(), "linear: bias length must match columns");
        let out = &p2 + &as_1d_row(&bv);
        self.push_op(
            out.into_dyn(),
            vec![prod, b],
            Box::new(move |g| {
                let g2 = as_2d(g);
                let gb = g2.sum_axis(Axis(0));
                vec![g2.to_owned().into_dyn(), gb.into_dyn()]
            }),
        )
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_channels: need at least one input");
        let values: Vec<_> = xs.iter().map(|&x| self.value(x)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .expect("concat_channels: shapes must agree outside axis 1");
        let channels: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        self.push_op(
            out,
            xs.to_vec(),
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(channels.len());
                let mut start = 0isize;
                for &c in &channels {
                    let end = start + c as isize;
                    grads.push(
                        g.slice_axis(Axis(1), Slice::new(start, Some(end), 1))
                            .to_owned(),
                    );
                    start = end;
                }
                grads
            }),
        )
    }
}

/// Row-major reshape of a (possibly non-contiguous) array.
fn to_shape(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let standard = a.as_standard_layout();
    standard
        .to_owned()
        .into_shape_with_order(shape.to_vec())
        .expect("element count checked by caller")
}

fn as_2d(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("operand must be 2-d")
}

fn as_1d_row(a: &ArrayD<f64>) -> Array2<f64> {
    a.view()
        .to_owned()
        .into_shape_with_order((1, a.len()))
        .expect("bias is 1-d")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn softplus_is_stable_and_correct() {
        assert!((softplus_scalar(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus_scalar(700.0) - 700.0).abs() < 1e-12);
        assert!(softplus_scalar(-700.0) >= 0.0);
        assert!(softplus_scalar(-700.0) < 1e-300);
        assert!((sigmoid_scalar(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid_scalar(40.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid_scalar(-40.0) > 0.0);
    }

    #[test]
    fn matmul_matches_hand_product() {
        let t = Tape::new();
        let x = t.constant(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let w = t.constant(arr2(&[[5.0, 6.0], [7.0, 8.0]]).into_dyn());
        let y = t.matmul(x, w);
        let yv = t.value(y);
        crate::nn::assert_close(&yv, &arr2(&[[19.0, 22.0], [43.0, 50.0]]).into_dyn(), 1e-12);
    }

    #[test]
    fn linear_bias_gradient_sums_rows() {
        let t = Tape::new();
        let x = t.constant(arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).into_dyn());
        let w = t.constant(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = t.constant(arr1(&[0.5, -0.5]).into_dyn());
        let y = t.linear(x, w, b);
        let loss = t.sum_all(y);
        let grads = t.backward(loss);
        // d(sum)/db = number of rows, per column.
        crate::nn::assert_close(
            grads.wrt(b).unwrap(),
            &arr1(&[3.0, 3.0]).into_dyn(),
            1e-12,
        );
    }

    #[test]
    fn concat_channels_splits_gradient() {
        let t = Tape::new();
        let a = t.constant(ArrayD::from_elem(vec![1, 2, 2, 2], 1.0));
        let b = t.constant(ArrayD::from_elem(vec![1, 3, 2, 2], 2.0));
        let y = t.concat_channels(&[a, b]);
        assert_eq!(t.shape(y), vec![1, 5, 2, 2]);
        let loss = t.sum_all(y);
        let grads = t.backward(loss);
        assert_eq!(grads.wrt(a).unwrap().shape(), &[1, 2, 2, 2]);
        assert_eq!(grads.wrt(b).unwrap().shape(), &[1, 3, 2, 2]);
    }

    #[test]
    fn reshape_round_trips_gradient() {
        let t = Tape::new();
        let x = t.constant(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let flat = t.reshape(x, vec![4]);
        let loss = t.mean_all(flat);
        let grads = t.backward(loss);
        assert_eq!(grads.wrt(x).unwrap().shape(), &[2, 2]);
    }
}
