use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{strength_weight, weighted_cosine_term};
use crate::dataset::{ItemId, Rating, UserId};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, norm, softmax};
use crate::model::{ModelGrads, ModelState};
use crate::seed;

/// `-log softmax(scores)[target]` and its gradient `softmax - onehot`.
pub fn next_item_loss(scores: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= scores.len() {
        return Err(Error::TargetOutOfRange {
            index: target,
            len: scores.len(),
        });
    }
    let loss = log_sum_exp(scores) - scores[target];
    let mut grad = softmax(scores);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// One user's training window: chronological items with their ratings, and
/// for every position the 19 negatives scored against it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub ratings: Vec<Rating>,
    pub negatives: Vec<Vec<ItemId>>,
}

impl TrainExample {
    pub fn positions(&self) -> usize {
        self.items.len()
    }
}

/// Multipliers on the two mean losses. `joint(lambda)` is the training
/// objective; the others isolate one term for gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub next_item: f64,
    pub alignment: f64,
}

impl LossWeights {
    pub fn joint(lambda_align: f64) -> Self {
        LossWeights {
            next_item: 1.0,
            alignment: lambda_align,
        }
    }

    pub fn next_item_only() -> Self {
        LossWeights {
            next_item: 1.0,
            alignment: 0.0,
        }
    }

    pub fn alignment_only() -> Self {
        LossWeights {
            next_item: 0.0,
            alignment: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointLoss {
    pub total: f64,
    pub next_item: f64,
    pub alignment: f64,
    pub grads: ModelGrads,
}

struct ExampleOutput {
    next_sum: f64,
    align_sum: f64,
    grads: ModelGrads,
}

/// Forward and backward for one example. Gradients are of
/// `w_next * next_sum * next_scale + w_align * align_sum * align_scale`.
fn example_pass(
    model: &ModelState,
    ex: &TrainExample,
    weights: LossWeights,
    scale: f64,
    dropout_seed: Option<u64>,
) -> Result<ExampleOutput> {
    let m = ex.items.len();
    if m == 0 || ex.ratings.len() != m || ex.negatives.len() != m {
        return Err(Error::Config(format!(
            "malformed training example for user {}",
            ex.user.0
        )));
    }
    let params = &model.params;
    let enc = &params.encoder;
    let d = enc.d_model();
    let mut dropout_rng = dropout_seed.map(|s| seed::rng(seed::derive_indexed(s, u64::from(ex.user.0))));
    let (states, cache) = enc.forward(
        &ex.items[..m - 1],
        dropout_rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
    )?;
    let users = if model.config.item_only {
        Array2::zeros((m, d))
    } else {
        states
    };

    let per = 1 + ex.negatives[0].len();
    let mut item_ids = Vec::with_capacity(m * per);
    let mut owner = Vec::with_capacity(m * per);
    for t in 0..m {
        if ex.negatives[t].len() + 1 != per {
            return Err(Error::Config("inconsistent candidate counts".into()));
        }
        item_ids.push(ex.items[t]);
        item_ids.extend_from_slice(&ex.negatives[t]);
        owner.extend(std::iter::repeat_n(t, per));
    }
    let mut item_rows = Array2::zeros((item_ids.len(), d));
    for (mut row, &item) in item_rows.rows_mut().into_iter().zip(&item_ids) {
        row.assign(&enc.embed_item(item)?);
    }
    let (v, pcache) = params.projector.forward_pairs(users.view(), item_rows.view(), &owner);

    let head = &params.head;
    let mean_anchor = model.anchors.mean_anchor();
    let beta = head.anchor_bias[0];
    let use_bias = model.config.head_anchor_bias;
    let mut dv = Array2::zeros(v.raw_dim());
    let mut grads = params.zero_grads();
    let mut next_sum = 0.0;
    let mut align_sum = 0.0;
    let gamma = model.config.alignment.gamma;

    for t in 0..m {
        let rows = t * per..(t + 1) * per;
        let scores: Vec<f64> = rows
            .clone()
            .map(|n| {
                let row = v.row(n);
                let mut s = row.dot(&head.direction);
                if use_bias {
                    s += beta * bias_cos(row, mean_anchor.view()).0;
                }
                s
            })
            .collect();
        let (loss, dscore) = next_item_loss(&scores, 0)?;
        next_sum += loss;
        if weights.next_item != 0.0 {
            for (k, n) in rows.clone().enumerate() {
                let g = dscore[k] * weights.next_item * scale;
                let row = v.row(n);
                let mut drow = dv.row_mut(n);
                drow.scaled_add(g, &head.direction);
                grads.head.direction.scaled_add(g, &row);
                if use_bias {
                    let (c, dc) = bias_cos(row, mean_anchor.view());
                    grads.head.anchor_bias[0] += g * c;
                    drow.scaled_add(g * beta, &dc);
                }
            }
        }

        let target_row = t * per;
        let r = ex.ratings[t];
        let (loss, g) = weighted_cosine_term(v.row(target_row), model.anchors.anchor(r), strength_weight(r, gamma));
        align_sum += loss;
        if weights.alignment != 0.0 {
            dv.row_mut(target_row).scaled_add(weights.alignment * scale, &g);
        }
    }

    let (d_users, d_items) = params.projector.backward_pairs(&pcache, &dv, &mut grads.projector);
    for (row, &item) in d_items.rows().into_iter().zip(&item_ids) {
        grads.encoder.items.add_row(item, row);
    }
    if !model.config.item_only {
        enc.backward(&cache, &d_users, &mut grads.encoder);
    }
    Ok(ExampleOutput {
        next_sum,
        align_sum,
        grads,
    })
}

/// Cosine to the mean anchor and its gradient; zero for a zero row.
fn bias_cos(v: ndarray::ArrayView1<f64>, a: ndarray::ArrayView1<f64>) -> (f64, Array1<f64>) {
    let (nv, na) = (norm(v), norm(a));
    if nv < 1e-12 || na < 1e-12 {
        return (0.0, Array1::zeros(v.len()));
    }
    let c = v.dot(&a) / (nv * na);
    (c, &a / (nv * na) - &v * (c / (nv * nv)))
}

/// Mean next-item loss plus weighted mean alignment loss over every
/// position in the batch, with gradients for all trainable parameters.
/// Per-example work runs in parallel; the reduction is sequential in batch
/// order, so results do not depend on the thread count.
pub fn joint_loss(
    model: &ModelState,
    batch: &[TrainExample],
    weights: LossWeights,
    dropout_seed: Option<u64>,
) -> Result<JointLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let positions: usize = batch.iter().map(TrainExample::positions).sum();
    let scale = 1.0 / positions as f64;
    let seed = dropout_seed.filter(|_| model.config.encoder.dropout > 0.0);
    let outputs: Vec<ExampleOutput> = batch
        .par_iter()
        .map(|ex| example_pass(model, ex, weights, scale, seed))
        .collect::<Result<_>>()?;
    let mut iter = outputs.into_iter();
    let first = iter.next().expect("non-empty batch");
    let (mut next_sum, mut align_sum, mut grads) = (first.next_sum, first.align_sum, first.grads);
    for out in iter {
        next_sum += out.next_sum;
        align_sum += out.align_sum;
        grads.merge(&out.grads);
    }
    let next_item = next_sum * scale;
    let alignment = align_sum * scale;
    Ok(JointLoss {
        total: weights.next_item * next_item + weights.alignment * alignment,
        next_item,
        alignment,
        grads,
    })
}

/// Loss value only, for finite-difference probes.
pub(crate) fn loss_value(model: &ModelState, batch: &[TrainExample], weights: LossWeights) -> Result<f64> {
    joint_loss(model, batch, weights, None).map(|l| l.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_twenty() {
        let (loss, _) = next_item_loss(&[0.3; 20], 4).unwrap();
        assert!((loss - 20f64.ln()).abs() < 1e-12);
        assert!((loss - 2.9957).abs() < 1e-4);
    }

    #[test]
    fn dominant_target_drives_loss_to_zero() {
        let mut s = vec![0.0; 20];
        s[3] = 60.0;
        assert!(next_item_loss(&s, 3).unwrap().0 < 1e-20);
        assert!(matches!(next_item_loss(&s, 20), Err(Error::TargetOutOfRange { .. })));
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let scores: Vec<f64> = (0..20).map(|i| (i as f64 * 0.77).sin() * 2.0).collect();
        let (_, grad) = next_item_loss(&scores, 7).unwrap();
        let eps = 1e-6;
        for i in 0..20 {
            let mut p = scores.clone();
            p[i] += eps;
            let mut m = scores.clone();
            m[i] -= eps;
            let fd = (next_item_loss(&p, 7).unwrap().0 - next_item_loss(&m, 7).unwrap().0) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            assert!(rel < 1e-6, "{i}: {} vs {fd}", grad[i]);
        }
    }
}
