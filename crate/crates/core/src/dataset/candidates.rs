use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, ItemId, UserId};
use super::split::SplitDataset;
use crate::error::{Error, Result};
use crate::seed;

pub const NUM_NEGATIVES: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validation,
    Test,
}

impl Stage {
    fn stream(self) -> u64 {
        match self {
            Stage::Validation => 1,
            Stage::Test => 2,
        }
    }
}

/// One ground-truth item plus 19 negatives the user never interacted with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: UserId,
    pub target: ItemId,
    pub negatives: Vec<ItemId>,
    pub seed: u64,
}

impl CandidateSet {
    /// Target first, then negatives in sampled order.
    pub fn items(&self) -> Vec<ItemId> {
        let mut items = Vec::with_capacity(1 + self.negatives.len());
        items.push(self.target);
        items.extend_from_slice(&self.negatives);
        items
    }
}

/// Items a user has never interacted with, ascending.
#[derive(Clone, Debug)]
pub struct NegativePool {
    items: Vec<ItemId>,
}

impl NegativePool {
    pub fn new(log: &InteractionLog, user: UserId) -> Self {
        let history = log.user_item_set(user);
        let mut h = history.iter().peekable();
        let mut items = Vec::with_capacity(log.num_items().saturating_sub(history.len()));
        for i in 0..log.num_items() as u32 {
            let item = ItemId(i);
            if h.peek() == Some(&&item) {
                h.next();
            } else {
                items.push(item);
            }
        }
        NegativePool { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Uniformly sample `count` distinct items.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Option<Vec<ItemId>> {
        if self.items.len() < count {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), count)
                .into_iter()
                .map(|i| self.items[i])
                .collect(),
        )
    }
}

/// Deterministic evaluation candidates for `user` at `stage`.
pub fn sample_candidates(
    split: &SplitDataset,
    log: &InteractionLog,
    user: UserId,
    stage: Stage,
    seed: u64,
) -> Result<CandidateSet> {
    let entry = split
        .get(user)
        .ok_or_else(|| Error::UserNotInSplit(log.user_name(user).to_string()))?;
    let target = match stage {
        Stage::Validation => entry.validation.item,
        Stage::Test => entry.test.item,
    };
    let pool = NegativePool::new(log, user);
    let stream = seed::derive_indexed(seed::derive_indexed(seed, stage.stream()), u64::from(user.0));
    let mut rng = seed::rng(stream);
    let negatives = pool
        .sample(&mut rng, NUM_NEGATIVES)
        .ok_or_else(|| Error::InsufficientNegatives {
            user: log.user_name(user).to_string(),
            available: pool.len(),
        })?;
    Ok(CandidateSet {
        user,
        target,
        negatives,
        seed,
    })
}

/// `min(1000, floor(0.05 * |U|))` distinct users, ascending.
pub fn sample_eval_users(log: &InteractionLog, seed: u64) -> Vec<UserId> {
    let n_users = log.num_users();
    let count = (n_users * 5 / 100).min(1000);
    if count == 0 {
        log::warn!("corpus has {n_users} users; no pairwise evaluation users sampled");
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    let mut users: Vec<UserId> = index::sample(&mut rng, n_users, count)
        .into_iter()
        .map(|i| UserId(i as u32))
        .collect();
    users.sort_unstable();
    users
}
