//! Joint optimization of encoder, projector and head under next-item
//! cross-entropy plus the weighted alignment loss.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::{grad_check, relative_error, toy_problem, GradCheckOptions, GradCheckReport, TensorCheck, GRAD_CHECK_TOLERANCE};
pub use loss::{joint_loss, next_item_loss, JointLoss, LossWeights, TrainExample};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionLog, ItemId, SplitDataset, Stage, UserSplit, NUM_NEGATIVES};
use crate::error::{Error, Result};
use crate::evaluation::hit_at_1;
use crate::model::ModelState;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub candidate_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            candidate_count: NUM_NEGATIVES + 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.candidate_count != NUM_NEGATIVES + 1 {
            return Err(Error::Config(format!(
                "candidate_count is fixed at {} (1 target + {NUM_NEGATIVES} negatives)",
                NUM_NEGATIVES + 1
            )));
        }
        Ok(())
    }
}

/// Training windows for one epoch. Each user contributes the most recent
/// `max_len + 1` training interactions; every position is a next-item target
/// with freshly sampled negatives drawn from items outside the user's
/// training history.
pub fn build_examples(split: &SplitDataset, n_items: usize, max_len: usize, seed: u64) -> Result<Vec<TrainExample>> {
    split
        .users
        .iter()
        .map(|us| build_example(us, n_items, max_len, seed::derive_indexed(seed, u64::from(us.user.0))))
        .collect()
}

fn build_example(us: &UserSplit, n_items: usize, max_len: usize, seed: u64) -> Result<TrainExample> {
    let mut seen: Vec<u32> = us.train.iter().map(|i| i.item.0).collect();
    seen.sort_unstable();
    seen.dedup();
    let available = n_items.saturating_sub(seen.len());
    if available < NUM_NEGATIVES {
        return Err(Error::InsufficientNegatives {
            user: us.user.0.to_string(),
            available,
        });
    }
    let window = &us.train[us.train.len().saturating_sub(max_len + 1)..];
    let mut rng = seed::rng(seed);
    let negatives = window
        .iter()
        .map(|_| sample_outside(&mut rng, n_items, &seen, available))
        .collect();
    Ok(TrainExample {
        user: us.user,
        items: window.iter().map(|i| i.item).collect(),
        ratings: window.iter().map(|i| i.rating).collect(),
        negatives,
    })
}

/// `NUM_NEGATIVES` distinct items not in the sorted `seen` list. Rejection
/// sampling when the pool is large, otherwise an explicit pool.
fn sample_outside<R: Rng>(rng: &mut R, n_items: usize, seen: &[u32], available: usize) -> Vec<ItemId> {
    if available >= 4 * NUM_NEGATIVES {
        let mut out: Vec<ItemId> = Vec::with_capacity(NUM_NEGATIVES);
        while out.len() < NUM_NEGATIVES {
            let cand = rng.random_range(0..n_items as u32);
            if seen.binary_search(&cand).is_err() && !out.contains(&ItemId(cand)) {
                out.push(ItemId(cand));
            }
        }
        out
    } else {
        let pool: Vec<u32> = (0..n_items as u32).filter(|i| seen.binary_search(i).is_err()).collect();
        rand::seq::index::sample(rng, pool.len(), NUM_NEGATIVES)
            .into_iter()
            .map(|k| ItemId(pool[k]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub next_item_loss: f64,
    pub alignment_loss: f64,
    pub val_hit_at_1: Option<f64>,
    pub val_hits: usize,
    pub val_users: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Diagnostics when training stopped on a non-finite value.
    pub aborted: Option<String>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn record(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }
}

pub struct TrainOutcome {
    /// Checkpoint with the best validation Hit@1 (earliest on ties).
    pub model: ModelState,
    /// Parameters after the last completed epoch.
    pub last: ModelState,
    pub log: TrainingLog,
}

struct EpochLosses {
    total: f64,
    next_item: f64,
    alignment: f64,
}

/// Train `model` on the training prefixes of `split`. Validation Hit@1 uses
/// the fixed candidate sets derived from `candidate_seed`.
pub fn train(
    mut model: ModelState,
    split: &SplitDataset,
    log: &InteractionLog,
    config: &TrainConfig,
    candidate_seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.n_items() != log.num_items() {
        return Err(Error::Incompatible(format!(
            "model has {} items, log has {}",
            model.n_items(),
            log.num_items()
        )));
    }
    let anchor_checksum = model.anchors.checksum();
    let weights = LossWeights::joint(model.config.alignment.lambda_align);
    let max_len = model.config.encoder.max_len;
    let negative_seed = seed::derive(config.seed, seed::PURPOSE_TRAIN_NEGATIVES);
    let shuffle_seed = seed::derive(config.seed, seed::PURPOSE_SHUFFLE);
    let dropout_seed = seed::derive(config.seed, seed::PURPOSE_DROPOUT);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.weight_decay, &model.params);
    let mut training_log = TrainingLog::default();

    let validate = |m: &ModelState| -> Result<(Option<f64>, usize, usize)> {
        if split.users.is_empty() {
            return Ok((None, 0, 0));
        }
        let report = hit_at_1(m, split, log, Stage::Validation, candidate_seed)?;
        Ok((Some(report.value), report.hits, report.users))
    };

    let initial = build_examples(split, model.n_items(), max_len, seed::derive_indexed(negative_seed, 0))?;
    let init_losses = if initial.is_empty() {
        EpochLosses {
            total: f64::NAN,
            next_item: f64::NAN,
            alignment: f64::NAN,
        }
    } else {
        let l = joint_loss(&model, &initial, weights, None)?;
        EpochLosses {
            total: l.total,
            next_item: l.next_item,
            alignment: l.alignment,
        }
    };
    let (val, hits, users) = validate(&model)?;
    training_log.records.push(epoch_record(0, &init_losses, val, hits, users));
    let mut best = model.clone();
    let mut best_hit = val.unwrap_or(f64::NEG_INFINITY);
    let mut step = 0usize;

    'epochs: for epoch in 1..=config.epochs {
        let mut examples = build_examples(
            split,
            model.n_items(),
            max_len,
            seed::derive_indexed(negative_seed, epoch as u64),
        )?;
        if examples.is_empty() {
            break;
        }
        examples.shuffle(&mut seed::rng(seed::derive_indexed(shuffle_seed, epoch as u64)));
        let mut sums = EpochLosses {
            total: 0.0,
            next_item: 0.0,
            alignment: 0.0,
        };
        let mut positions = 0usize;
        for batch in examples.chunks(config.batch_size) {
            step += 1;
            let l = joint_loss(&model, batch, weights, Some(seed::derive_indexed(dropout_seed, step as u64)))?;
            if !l.total.is_finite() {
                training_log.aborted = Some(
                    Error::NonFinite {
                        epoch,
                        step,
                        detail: format!("loss = {} (next-item {}, alignment {})", l.total, l.next_item, l.alignment),
                    }
                    .to_string(),
                );
                break 'epochs;
            }
            let n: usize = batch.iter().map(TrainExample::positions).sum();
            positions += n;
            sums.total += l.total * n as f64;
            sums.next_item += l.next_item * n as f64;
            sums.alignment += l.alignment * n as f64;
            let previous = model.params.clone();
            optimizer.apply(&mut model.params, &l.grads, model.config.freeze_encoder);
            if let Some(name) = model.params.first_non_finite() {
                model.params = previous;
                training_log.aborted = Some(
                    Error::NonFinite {
                        epoch,
                        step,
                        detail: format!("tensor {name} became non-finite after the update"),
                    }
                    .to_string(),
                );
                break 'epochs;
            }
        }
        debug_assert_eq!(model.anchors.checksum(), anchor_checksum);
        let p = positions as f64;
        let means = EpochLosses {
            total: sums.total / p,
            next_item: sums.next_item / p,
            alignment: sums.alignment / p,
        };
        let (val, hits, users) = validate(&model)?;
        log::info!(
            "epoch {epoch}: loss {:.5} (next {:.5}, align {:.5}) val Hit@1 {}",
            means.total,
            means.next_item,
            means.alignment,
            val.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
        training_log.records.push(epoch_record(epoch, &means, val, hits, users));
        if let Some(v) = val {
            if v > best_hit {
                best_hit = v;
                best = model.clone();
                training_log.best_epoch = epoch;
            }
        } else {
            best = model.clone();
            training_log.best_epoch = epoch;
        }
    }
    if let Some(msg) = &training_log.aborted {
        log::error!("training aborted: {msg}");
    }
    Ok(TrainOutcome {
        model: best,
        last: model,
        log: training_log,
    })
}

fn epoch_record(epoch: usize, l: &EpochLosses, val: Option<f64>, hits: usize, users: usize) -> EpochRecord {
    EpochRecord {
        epoch,
        train_loss: l.total,
        next_item_loss: l.next_item,
        alignment_loss: l.alignment,
        val_hit_at_1: val,
        val_hits: hits,
        val_users: users,
    }
}
