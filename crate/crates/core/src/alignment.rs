//! Strength-weighted cosine alignment toward rating anchors, and the
//! anchor-softmax rating readout.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorBank;
use crate::dataset::Rating;
use crate::error::{Error, Result};
use crate::math::{norm, softmax};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub gamma: f64,
    pub lambda_align: f64,
    /// Readout temperature.
    pub tau: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            gamma: 0.5,
            lambda_align: 0.5,
            tau: 0.1,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda_align.is_finite() && self.lambda_align >= 0.0) {
            return Err(Error::Config(format!("lambda_align must be >= 0, got {}", self.lambda_align)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

static DEGENERATE: AtomicU64 = AtomicU64::new(0);

/// How many near-zero vectors the loss and readout have seen in this process.
pub fn degenerate_count() -> u64 {
    DEGENERATE.load(Ordering::Relaxed)
}

/// `w(r) = 1 + gamma * |r - 3|`.
pub fn strength_weight(r: Rating, gamma: f64) -> f64 {
    1.0 + gamma * (i32::from(r.value()) - 3).abs() as f64
}

const MIN_NORM: f64 = 1e-12;

/// `(1 - cos(v, anchor)) * weight` and its gradient with respect to `v`.
/// A near-zero `v` counts as `cos = 0` with zero gradient.
pub(crate) fn weighted_cosine_term(v: ArrayView1<f64>, anchor: ArrayView1<f64>, weight: f64) -> (f64, Array1<f64>) {
    let nv = norm(v);
    if nv < MIN_NORM {
        DEGENERATE.fetch_add(1, Ordering::Relaxed);
        return (weight, Array1::zeros(v.len()));
    }
    let na = norm(anchor);
    let cos = v.dot(&anchor) / (nv * na);
    let grad = (&anchor / (nv * na) - &v * (cos / (nv * nv))) * (-weight);
    ((1.0 - cos) * weight, grad)
}

pub fn alignment_loss(v: ArrayView1<f64>, r: Rating, bank: &AnchorBank, gamma: f64) -> f64 {
    weighted_cosine_term(v, bank.anchor(r), strength_weight(r, gamma)).0
}

/// Mean loss over the batch and the gradient of that mean for each `v`.
pub fn alignment_loss_batch(
    batch: &[(ArrayView1<f64>, Rating)],
    bank: &AnchorBank,
    gamma: f64,
) -> Result<(f64, Vec<Array1<f64>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (v, r) in batch {
        let (loss, g) = weighted_cosine_term(v.view(), bank.anchor(*r), strength_weight(*r, gamma));
        total += loss;
        grads.push(g / n);
    }
    Ok((total / n, grads))
}

/// Expected rating under `softmax_r(cos(v, a_r) / tau)`.
pub fn rating_readout(v: ArrayView1<f64>, bank: &AnchorBank, tau: f64) -> f64 {
    let Some(cos) = bank.cosines(v) else {
        DEGENERATE.fetch_add(1, Ordering::Relaxed);
        return 3.0;
    };
    let logits: Vec<f64> = cos.iter().map(|c| c / tau).collect();
    softmax(&logits)
        .iter()
        .enumerate()
        .map(|(r, p)| (r + 1) as f64 * p)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{synth_anchors, AnchorProvenance};
    use ndarray::Array2;

    fn r(v: i64) -> Rating {
        Rating::new(v).unwrap()
    }

    fn orthonormal(d: usize) -> AnchorBank {
        let mut m = Array2::zeros((5, d));
        for i in 0..5 {
            m[[i, i]] = 1.0;
        }
        AnchorBank::new(m, AnchorProvenance::Random { seed: 0 }).unwrap()
    }

    #[test]
    fn weights_at_default_gamma() {
        assert_eq!(strength_weight(r(3), 0.5), 1.0);
        assert_eq!(strength_weight(r(3), 7.0), 1.0);
        assert_eq!(strength_weight(r(5), 0.5), 2.0);
        assert_eq!(strength_weight(r(2), 0.5), 1.5);
        for k in 0..=2 {
            assert_eq!(strength_weight(r(3 - k), 0.8), strength_weight(r(3 + k), 0.8));
        }
    }

    #[test]
    fn loss_special_cases() {
        let bank = orthonormal(8);
        let a5 = bank.anchor(r(5)).to_owned();
        assert_eq!(alignment_loss((&a5 * 2.0).view(), r(5), &bank, 0.5), 0.0);
        let perp = bank.anchor(r(1)).to_owned();
        assert_eq!(alignment_loss(perp.view(), r(4), &bank, 0.5), 1.5);
        let anti = -&bank.anchor(r(1)).to_owned();
        assert_eq!(alignment_loss(anti.view(), r(1), &bank, 0.5), 4.0);
        // zero vector: cos treated as 0
        let before = degenerate_count();
        assert_eq!(alignment_loss(Array1::zeros(8).view(), r(5), &bank, 0.5), 2.0);
        assert!(degenerate_count() > before);
    }

    #[test]
    fn batch_gradient_and_mean() {
        let bank = synth_anchors(6, 20.0, 0.1, 3).unwrap();
        let a2 = bank.anchor(r(2)).to_owned();
        let (loss, grads) = alignment_loss_batch(&[(a2.view(), r(2))], &bank, 0.5).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grads[0].iter().all(|g| g.abs() < 1e-15));
        assert!(matches!(alignment_loss_batch(&[], &bank, 0.5), Err(Error::EmptyBatch)));

        let vs: Vec<Array1<f64>> = (0..4)
            .map(|k| Array1::from_shape_fn(6, |j| ((k * 6 + j) as f64 * 0.61).sin()))
            .collect();
        let ratings = [r(1), r(3), r(4), r(5)];
        let batch: Vec<_> = vs.iter().zip(ratings).map(|(v, r)| (v.view(), r)).collect();
        let (loss, grads) = alignment_loss_batch(&batch, &bank, 0.5).unwrap();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        assert!((alignment_loss_batch(&doubled, &bank, 0.5).unwrap().0 - loss).abs() < 1e-15);

        let eps = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            for j in 0..6 {
                let eval = |delta: f64| {
                    let mut vs2 = vs.clone();
                    vs2[k][j] += delta;
                    let b: Vec<_> = vs2.iter().zip(ratings).map(|(v, r)| (v.view(), r)).collect();
                    alignment_loss_batch(&b, &bank, 0.5).unwrap().0
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-7);
                assert!(rel < 1e-4, "v{k}[{j}]: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn readout_cases() {
        let bank = orthonormal(8);
        let v = bank.anchor(r(4)).to_owned();
        assert!((rating_readout(v.view(), &bank, 0.1) - 4.0).abs() < 0.01);
        assert_eq!(rating_readout(Array1::zeros(8).view(), &bank, 0.1), 3.0);
        assert!((rating_readout(v.view(), &bank, 1e9) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn readout_monotone_along_geodesic() {
        let bank = synth_anchors(16, 20.0, 0.0, 0).unwrap();
        let (a1, a5) = (bank.anchor(r(1)).to_owned(), bank.anchor(r(5)).to_owned());
        let omega = a1.dot(&a5).acos();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let t = k as f64 / 49.0;
            let v = &a1 * (((1.0 - t) * omega).sin() / omega.sin()) + &a5 * ((t * omega).sin() / omega.sin());
            let rhat = rating_readout(v.view(), &bank, 0.1);
            assert!(rhat >= prev - 1e-12, "step {k}: {rhat} < {prev}");
            assert!(rhat > 1.0 && rhat < 5.0);
            prev = rhat;
        }
    }
}
