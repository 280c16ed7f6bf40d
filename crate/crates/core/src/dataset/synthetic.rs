use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, ItemId, RawRow, Rating, UserId};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the planted-preference corpus.
///
/// Affinity of user `u` for item `i` is
/// `item_bias_scale * b_i + taste_scale * <p_u, q_i> / sqrt(latent_dim)`
/// with standard normal `b`, `p`, `q`. Each user consumes its
/// `interactions_per_user` highest-affinity items in random order. Ratings
/// quantize `affinity + noise * N(0, 1)` at the 20/40/60/80% quantiles of the
/// noise-free consumed affinities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions_per_user: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub item_bias_scale: f64,
    pub taste_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 100,
            interactions_per_user: 20,
            latent_dim: 8,
            noise: 0.0,
            item_bias_scale: 1.0,
            taste_scale: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be positive");
        }
        if self.interactions_per_user < 3 {
            return bad("interactions_per_user must be at least 3");
        }
        if self.interactions_per_user > self.n_items {
            return bad("interactions_per_user exceeds n_items");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("item_bias_scale", self.item_bias_scale),
            ("taste_scale", self.taste_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// A generated log together with its latent ground truth. User and item ids
/// are `1..=n`, so log index `k` is generator index `k`.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub log: InteractionLog,
    pub item_bias: Array1<f64>,
    pub item_factors: Array2<f64>,
    pub user_factors: Array2<f64>,
    pub thresholds: [f64; 4],
    config: SynthConfig,
}

impl SyntheticCorpus {
    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Noise-free latent affinity.
    pub fn affinity(&self, user: UserId, item: ItemId) -> f64 {
        let p = self.user_factors.row(user.index());
        let q = self.item_factors.row(item.index());
        self.config.item_bias_scale * self.item_bias[item.index()]
            + self.config.taste_scale * p.dot(&q) / (self.config.latent_dim as f64).sqrt()
    }
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn quantize(value: f64, thresholds: &[f64; 4]) -> Rating {
    let level = 1 + thresholds.iter().filter(|&&t| value > t).count();
    Rating::new(level as i64).expect("level in 1..=5")
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let item_bias = Array1::from_shape_simple_fn(config.n_items, || rng.sample(StandardNormal));
    let item_factors = normal_matrix(&mut rng, config.n_items, config.latent_dim);
    let user_factors = normal_matrix(&mut rng, config.n_users, config.latent_dim);

    let mut corpus = SyntheticCorpus {
        log: InteractionLog::empty(),
        item_bias,
        item_factors,
        user_factors,
        thresholds: [0.0; 4],
        config: config.clone(),
    };

    // per user: consumed items in consumption order with their affinity
    let mut consumed: Vec<Vec<(usize, f64)>> = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let mut scored: Vec<(usize, f64)> = (0..config.n_items)
            .map(|i| (i, corpus.affinity(UserId(u as u32), ItemId(i as u32))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(config.interactions_per_user);
        scored.shuffle(&mut rng);
        consumed.push(scored);
    }

    let mut all: Vec<f64> = consumed.iter().flatten().map(|&(_, a)| a).collect();
    all.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (all.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        all[lo] + (all[hi] - all[lo]) * (pos - lo as f64)
    };
    corpus.thresholds = [quantile(0.2), quantile(0.4), quantile(0.6), quantile(0.8)];

    let mut rows = Vec::with_capacity(config.n_users * config.interactions_per_user);
    for (u, items) in consumed.iter().enumerate() {
        for (k, &(i, affinity)) in items.iter().enumerate() {
            let observed = if config.noise > 0.0 {
                affinity + config.noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                affinity
            };
            rows.push(RawRow {
                line: rows.len() + 1,
                user: (u + 1).to_string(),
                item: (i + 1).to_string(),
                rating: quantize(observed, &corpus.thresholds),
                timestamp: 1_000_000 + k as i64,
            });
        }
    }
    // items nobody consumed still belong to the catalog
    let catalog: Vec<String> = (1..=config.n_items).map(|i| i.to_string()).collect();
    corpus.log = InteractionLog::from_rows(rows, Path::new("<synthetic>"), &catalog)?;
    Ok(corpus)
}
