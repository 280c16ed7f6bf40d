//! Exact t-SNE for small point sets (a few hundred rows).

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    })
}

/// Symmetrized affinities with per-point bandwidths found by bisection.
fn affinities(dist: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        let mut row = vec![0.0; n];
        for _ in 0..64 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if i == j { 0.0 } else { (-beta * dist[[i, j]]).exp() };
                sum += row[j];
            }
            let sum = sum.max(1e-300);
            let entropy = sum.ln() + beta * (0..n).map(|j| dist[[i, j]] * row[j]).sum::<f64>() / sum;
            row.iter_mut().for_each(|v| *v /= sum);
            if (entropy - target).abs() < 1e-6 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(1e-12))
}

pub fn tsne_2d(x: &Array2<f64>, config: &TsneConfig, seed: u64) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {n}")));
    }
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = affinities(&squared_distances(x), perplexity);
    let mut rng = seed::rng(seed);
    let mut y = Array2::from_shape_simple_fn((n, 2), || 1e-4 * rng.sample::<f64, _>(StandardNormal));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let num = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                1.0 / (1.0 + dx * dx + dy * dy)
            }
        });
        let z = num.sum().max(1e-300);
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                let w = 4.0 * (exag * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                grad[[i, 0]] += w * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += w * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for k in 0..n * 2 {
            let (i, c) = (k / 2, k % 2);
            let same = (grad[[i, c]] > 0.0) == (velocity[[i, c]] > 0.0);
            gains[[i, c]] = if same { (gains[[i, c]] * 0.8).max(0.01) } else { gains[[i, c]] + 0.2 };
            velocity[[i, c]] = momentum * velocity[[i, c]] - config.learning_rate * gains[[i, c]] * grad[[i, c]];
            y[[i, c]] += velocity[[i, c]];
        }
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean.view().insert_axis(ndarray::Axis(0));
    }
    Ok(y)
}
