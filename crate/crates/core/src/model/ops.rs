//! Row-wise building blocks and their derivatives.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Saved state of a row-wise layer norm.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, NormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let is = *s;
        row.mapv_inplace(|v| v * is);
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, inv_std })
}

/// Returns dL/dx and accumulates the gain/bias gradients.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    Zip::from(dx.rows_mut())
        .and(dxhat.rows())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut out, g, xh, &is| {
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = is / n * (n * gi - sum_g - xi * sum_gx));
        });
    dx
}

/// `x · w + b`.
pub fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates weight/bias gradients of `y = x · w + b` and returns dL/dx.
pub fn linear_backward(
    dy: &Array2<f64>,
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// In-place numerically stable softmax of each row.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Backward through row softmax given the forward output `p`.
pub fn softmax_rows_backward(dp: &Array2<f64>, p: &Array2<f64>) -> Array2<f64> {
    let mut ds = dp * p;
    for (mut row, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
        let s = row.sum();
        Zip::from(&mut row).and(&prow).for_each(|d, &pv| *d -= pv * s);
    }
    ds
}

/// Cross-entropy of one logit row against a target; returns (loss, softmax).
pub fn cross_entropy_row(logits: ArrayView1<f64>, target: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut p = logits.mapv(|v| (v - max).exp());
    let z = p.sum();
    p /= z;
    let loss = -(logits[target] - max - z.ln());
    (loss, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, f64::NEG_INFINITY]];
        softmax_rows(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(x[[1, 2]], 0.0);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let (y, _) = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        assert!(y.sum().abs() < 1e-12);
        let var = y.mapv(|v| v * v).sum() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_of_uniform_row() {
        let (loss, p) = cross_entropy_row(Array1::zeros(7).view(), 3);
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }
}
