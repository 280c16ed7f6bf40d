//! Small dense kernels shared by the encoder, projector and losses.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

/// GELU with the exact erf form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity; `None` when either vector is numerically zero.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        None
    } else {
        Some(a.dot(&b) / (na * nb))
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalization.
pub fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    gain: &Array1<f64>,
    cache: &LayerNormCache,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut dxh, xh, &s| {
            let mean_d = dxh.sum() / d;
            let mean_dx = dxh.dot(&xh) / d;
            Zip::from(&mut dxh)
                .and(&xh)
                .for_each(|g, &h| *g = s * (*g - mean_d - h * mean_dx));
        });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_identities() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(12.0) - 12.0).abs() < 1e-12);
        assert!(gelu(-12.0).abs() < 1e-12);
        // exact-erf constant, not the tanh approximation
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_central_difference() {
        let x = Array2::from_shape_fn((3, 5), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let gain = Array1::from_shape_fn(5, |j| 1.0 + 0.1 * j as f64);
        let bias = Array1::from_shape_fn(5, |j| 0.05 * j as f64);
        let probe = Array2::from_shape_fn((3, 5), |(i, j)| ((i + 2 * j) as f64).cos());
        let f = |x: &Array2<f64>| (layer_norm(x, &gain, &bias).0 * &probe).sum();
        let (_, cache) = layer_norm(&x, &gain, &bias);
        let (mut dg, mut db) = (Array1::zeros(5), Array1::zeros(5));
        let dx = layer_norm_backward(&probe, &gain, &cache, &mut dg, &mut db);
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let mut xm = x.clone();
                xm[[i, j]] -= eps;
                let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
                assert!((fd - dx[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((log_sum_exp(&[0.0; 20]) - 20f64.ln()).abs() < 1e-15);
    }
}
