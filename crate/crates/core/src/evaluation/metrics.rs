use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    sample_candidates, InteractionLog, ItemId, PairCategory, PairTask, SplitDataset, Stage, SyntheticCorpus, UserId,
};
use crate::error::Result;
use crate::model::ModelState;

/// Anything that can rank candidate items for a user given their history.
pub trait CandidateScorer: Sync {
    fn score(&self, user: UserId, history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>>;
}

/// Anything that can assign a continuous rating to (user, item) pairs.
pub trait RatingPredictor: Sync {
    fn predict(&self, user: UserId, history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>>;
}

impl CandidateScorer for ModelState {
    fn score(&self, _user: UserId, history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        let context = self.context(history)?;
        self.score_items(&context, items)
    }
}

impl RatingPredictor for ModelState {
    fn predict(&self, _user: UserId, history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        let context = self.context(history)?;
        self.readout_items(&context, items)
    }
}

/// Reads the planted affinity of a synthetic corpus; an upper bound for
/// every metric on noise-free data.
pub struct AffinityOracle<'a>(pub &'a SyntheticCorpus);

impl CandidateScorer for AffinityOracle<'_> {
    fn score(&self, user: UserId, _history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|&i| self.0.affinity(user, i)).collect())
    }
}

impl RatingPredictor for AffinityOracle<'_> {
    fn predict(&self, user: UserId, _history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|&i| self.0.affinity(user, i)).collect())
    }
}

/// Same value for every item.
pub struct ConstantScorer(pub f64);

impl CandidateScorer for ConstantScorer {
    fn score(&self, _user: UserId, _history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(vec![self.0; items.len()])
    }
}

impl RatingPredictor for ConstantScorer {
    fn predict(&self, _user: UserId, _history: &[ItemId], items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(vec![self.0; items.len()])
    }
}

/// A numerator over a denominator. Pairwise numerators may be half-integers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub value: f64,
    pub numerator: f64,
    pub denominator: usize,
}

impl Fraction {
    pub fn new(numerator: f64, denominator: usize) -> Option<Fraction> {
        (denominator > 0).then(|| Fraction {
            value: numerator / denominator as f64,
            numerator,
            denominator,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub stage: Stage,
    pub seed: u64,
    pub value: f64,
    pub hits: usize,
    pub users: usize,
    /// Users whose top score was shared by several candidates.
    pub tied_users: Vec<UserId>,
}

/// Index of the winning candidate: highest score, ties to the lowest item id.
pub fn top_candidate(items: &[ItemId], scores: &[f64]) -> (usize, bool) {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] == best).collect();
    let winner = *tied.iter().min_by_key(|&&k| items[k]).expect("non-empty candidate set");
    (winner, tied.len() > 1)
}

/// Fraction of split users whose ground-truth item wins their fixed
/// 20-candidate set. Validation uses the training prefix as history; test
/// appends the validation item.
pub fn hit_at_1<S: CandidateScorer + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    log: &InteractionLog,
    stage: Stage,
    seed: u64,
) -> Result<HitReport> {
    let outcomes: Vec<(bool, bool)> = split
        .users
        .par_iter()
        .map(|us| {
            let mut history: Vec<ItemId> = us.train.iter().map(|i| i.item).collect();
            if stage == Stage::Test {
                history.push(us.validation.item);
            }
            let candidates = sample_candidates(split, log, us.user, stage, seed)?;
            let items = candidates.items();
            let scores = scorer.score(us.user, &history, &items)?;
            let (winner, tied) = top_candidate(&items, &scores);
            Ok((winner == 0, tied))
        })
        .collect::<Result<_>>()?;
    let hits = outcomes.iter().filter(|o| o.0).count();
    let users = outcomes.len();
    Ok(HitReport {
        stage,
        seed,
        value: if users == 0 { 0.0 } else { hits as f64 / users as f64 },
        hits,
        users,
        tied_users: split
            .users
            .iter()
            .zip(&outcomes)
            .filter(|(_, o)| o.1)
            .map(|(us, _)| us.user)
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub task: PairTask,
    pub readout_hi: f64,
    pub readout_lo: f64,
    pub credit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    /// `None` when no task of the category exists.
    pub strong: Option<Fraction>,
    pub subtle: Option<Fraction>,
    pub overall: Option<Fraction>,
    pub ties: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub outcomes: Vec<PairOutcome>,
}

/// The user's chronological history without the two compared items.
pub fn pair_history(log: &InteractionLog, task: &PairTask) -> Vec<ItemId> {
    log.history(task.user)
        .map(|i| i.item)
        .filter(|&i| i != task.item_hi && i != task.item_lo)
        .collect()
}

/// Credit 1 when the higher-rated item reads out higher, 0.5 on an exact
/// tie, else 0; accuracies per category.
pub fn pairwise_eval<P: RatingPredictor + ?Sized>(
    predictor: &P,
    log: &InteractionLog,
    tasks: &[PairTask],
) -> Result<PairwiseReport> {
    let outcomes: Vec<PairOutcome> = tasks
        .par_iter()
        .map(|task| {
            let history = pair_history(log, task);
            let r = predictor.predict(task.user, &history, &[task.item_hi, task.item_lo])?;
            let credit = if r[0] > r[1] {
                1.0
            } else if r[0] == r[1] {
                0.5
            } else {
                0.0
            };
            Ok(PairOutcome {
                task: task.clone(),
                readout_hi: r[0],
                readout_lo: r[1],
                credit,
            })
        })
        .collect::<Result<_>>()?;
    let tally = |cat: Option<PairCategory>| {
        let (num, den) = outcomes
            .iter()
            .filter(|o| cat.is_none_or(|c| o.task.category == c))
            .fold((0.0, 0usize), |(n, d), o| (n + o.credit, d + 1));
        Fraction::new(num, den)
    };
    Ok(PairwiseReport {
        strong: tally(Some(PairCategory::Strong)),
        subtle: tally(Some(PairCategory::Subtle)),
        overall: tally(None),
        ties: outcomes.iter().filter(|o| o.credit == 0.5).count(),
        outcomes,
    })
}

impl PairwiseReport {
    /// Drop per-task outcomes, keeping only the tallies.
    pub fn summary(mut self) -> Self {
        self.outcomes.clear();
        self
    }
}
