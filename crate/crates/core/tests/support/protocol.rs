//! Randomized protocol checks: leave-one-out split, candidate sets and pair
//! tasks over many small generated rating files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use osa_core::dataset::{
    build_pair_tasks, ingest, leave_one_out_split, leave_one_out_split_holding_out, sample_candidates,
    sample_eval_users, Format, InteractionLog, PairCategory, Stage, NUM_NEGATIVES,
};
use osa_core::Error;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[derive(Debug, Default)]
pub struct ProtocolStats {
    pub corpora: usize,
    pub split_users: usize,
    pub candidate_sets: usize,
    pub pair_tasks: usize,
    pub violations: Vec<String>,
}

/// A rating file with timestamp ties, repeated items and users too short
/// to split. A filler user rates every item so the catalog is large enough.
fn random_file(rng: &mut ChaCha8Rng, path: &Path) {
    let n_users = rng.random_range(1..16);
    let n_items = rng.random_range(45..80);
    let mut text = String::from("user\titem\trating\ttimestamp\n");
    for u in 0..n_users {
        let k = rng.random_range(0..13);
        let mut seen = BTreeSet::new();
        for _ in 0..k {
            let item = rng.random_range(0..n_items);
            let ts = rng.random_range(0..6);
            if seen.insert((ts, item)) {
                writeln!(text, "u{u}\ti{item}\t{}\t{ts}", rng.random_range(1..=5)).unwrap();
            }
        }
    }
    for item in 0..n_items {
        writeln!(text, "filler\ti{item}\t3\t{item}").unwrap();
    }
    std::fs::write(path, text).unwrap();
}

fn check_log(log: &InteractionLog, seed: u64, stats: &mut ProtocolStats) {
    let mut fail = |msg: String| stats.violations.push(msg);
    let split = leave_one_out_split(log);
    for user in log.users() {
        let history: Vec<_> = log.history(user).copied().collect();
        let entry = split.get(user);
        match (history.len() < 3, entry) {
            (true, Some(_)) => fail(format!("user {} with {} interactions was split", user.0, history.len())),
            (true, None) if !split.excluded_users.contains(&user) => fail(format!("short user {} not excluded", user.0)),
            (false, None) => fail(format!("user {} missing from split", user.0)),
            (false, Some(s)) => {
                let mut joined = s.train.clone();
                joined.push(s.validation);
                joined.push(s.test);
                if joined != history {
                    fail(format!("user {}: partition is not the chronological history", user.0));
                }
                let max_train = s.train.iter().map(|i| i.timestamp).max().unwrap();
                if !(max_train <= s.validation.timestamp && s.validation.timestamp <= s.test.timestamp) {
                    fail(format!("user {}: timestamps out of order", user.0));
                }
                if s.train.len() != history.len() - 2 {
                    fail(format!("user {}: train size", user.0));
                }
            }
            _ => {}
        }
    }
    stats.split_users += split.users.len();

    let held = sample_eval_users(log, seed);
    let held_split = leave_one_out_split_holding_out(log, &held);
    if held.iter().any(|u| held_split.get(*u).is_some()) {
        fail("held-out user present in split".into());
    }

    for s in &split.users {
        let history: BTreeSet<_> = log.history(s.user).map(|i| i.item).collect();
        let pool = log.num_items() - history.len();
        for stage in [Stage::Validation, Stage::Test] {
            let result = sample_candidates(&split, log, s.user, stage, seed);
            if pool < NUM_NEGATIVES {
                if !matches!(result, Err(Error::InsufficientNegatives { .. })) {
                    fail(format!("user {}: expected insufficient negatives", s.user.0));
                }
                continue;
            }
            let c = result.unwrap();
            stats.candidate_sets += 1;
            let distinct: BTreeSet<_> = c.negatives.iter().collect();
            if c.negatives.len() != NUM_NEGATIVES || distinct.len() != NUM_NEGATIVES {
                fail(format!("user {}: negatives not 19 distinct items", s.user.0));
            }
            if c.negatives.iter().any(|n| *n == c.target || history.contains(n)) {
                fail(format!("user {}: negative overlaps target or history", s.user.0));
            }
            let expected = if stage == Stage::Test { s.test.item } else { s.validation.item };
            if c.target != expected {
                fail(format!("user {}: wrong target", s.user.0));
            }
            if sample_candidates(&split, log, s.user, stage, seed).unwrap() != c {
                fail(format!("user {}: candidate sampling not deterministic", s.user.0));
            }
        }
    }

    let users: Vec<_> = log.users().collect();
    let tasks = build_pair_tasks(log, &users, seed);
    stats.pair_tasks += tasks.len();
    let mut seen = BTreeSet::new();
    for t in &tasks {
        let lo = t.rating_lo.value();
        if t.rating_hi.value() != lo + 1 {
            fail(format!("task {t:?}: levels not adjacent"));
        }
        let expected = if lo == 1 || lo == 4 { PairCategory::Strong } else { PairCategory::Subtle };
        if t.category != expected {
            fail(format!("task {t:?}: wrong category"));
        }
        if t.item_hi == t.item_lo {
            fail(format!("task {t:?}: identical items"));
        }
        let rated = |item, r| log.history(t.user).any(|i| i.item == item && i.rating == r);
        if !rated(t.item_hi, t.rating_hi) || !rated(t.item_lo, t.rating_lo) {
            fail(format!("task {t:?}: items not rated at the stated levels"));
        }
        if !seen.insert((t.user, lo)) {
            fail(format!("task {t:?}: duplicate (user, level pair)"));
        }
    }
    for &user in &users {
        for lo in 1..=4u8 {
            let at = |r: u8| -> BTreeSet<_> {
                log.history(user).filter(|i| i.rating.value() == r).map(|i| i.item).collect()
            };
            let (l, h) = (at(lo), at(lo + 1));
            // Whatever representative is drawn from the upper level, a
            // distinct lower item remains.
            let guaranteed = !h.is_empty() && (l.len() >= 2 || l.iter().any(|x| !h.contains(x)));
            if guaranteed && !seen.contains(&(user, lo)) {
                fail(format!("user {}: levels {lo}/{} have a pair but no task", user.0, lo + 1));
            }
        }
    }
}

pub fn run(n_corpora: usize, seed: u64) -> ProtocolStats {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = ProtocolStats::default();
    for k in 0..n_corpora {
        let path = dir.path().join(format!("corpus{k}.tsv"));
        random_file(&mut rng, &path);
        let log = ingest(&path, &Format::Tsv).unwrap();
        check_log(&log, rng.random(), &mut stats);
        stats.corpora += 1;
    }
    stats
}
