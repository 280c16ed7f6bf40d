use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, ItemId, Rating, UserId};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairCategory {
    /// 1 vs 2 and 4 vs 5.
    Strong,
    /// 2 vs 3 and 3 vs 4.
    Subtle,
}

impl PairCategory {
    pub fn of(lower: Rating) -> PairCategory {
        match lower.value() {
            1 | 4 => PairCategory::Strong,
            _ => PairCategory::Subtle,
        }
    }
}

/// Two items one user rated exactly one level apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTask {
    pub user: UserId,
    pub item_hi: ItemId,
    pub item_lo: ItemId,
    pub rating_hi: Rating,
    pub rating_lo: Rating,
    pub category: PairCategory,
}

impl PairTask {
    /// The same task with the two items exchanged. Used to probe
    /// anti-symmetry; the result no longer satisfies `rating_hi > rating_lo`.
    pub fn swapped(&self) -> PairTask {
        PairTask {
            item_hi: self.item_lo,
            item_lo: self.item_hi,
            rating_hi: self.rating_lo,
            rating_lo: self.rating_hi,
            ..self.clone()
        }
    }
}

/// One task per `(user, adjacent level pair)`, representatives drawn with a
/// per-user stream of `seed`.
pub fn build_pair_tasks(log: &InteractionLog, users: &[UserId], seed: u64) -> Vec<PairTask> {
    let mut tasks = Vec::new();
    for &user in users {
        let mut levels: [Vec<ItemId>; 5] = Default::default();
        for it in log.history(user) {
            let bucket = &mut levels[it.rating.slot()];
            if !bucket.contains(&it.item) {
                bucket.push(it.item);
            }
        }
        let mut rng = seed::rng(seed::derive_indexed(seed, u64::from(user.0)));
        for lo in 0..4 {
            let (lo_items, hi_items) = (&levels[lo], &levels[lo + 1]);
            let Some(&item_hi) = hi_items.choose(&mut rng) else {
                continue;
            };
            // the same item rated twice at different levels cannot pair with itself
            let lo_choices: Vec<ItemId> = lo_items.iter().copied().filter(|&i| i != item_hi).collect();
            let Some(&item_lo) = lo_choices.choose(&mut rng) else {
                continue;
            };
            let rating_lo = Rating::ALL[lo];
            tasks.push(PairTask {
                user,
                item_hi,
                item_lo,
                rating_hi: Rating::ALL[lo + 1],
                rating_lo,
                category: PairCategory::of(rating_lo),
            });
        }
    }
    tasks
}
