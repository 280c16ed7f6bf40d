use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use osa_core::alignment::rating_readout;
use osa_core::anchors::{AnchorBank, AnchorProvenance};
use osa_core::checkpoint::Checkpoint;
use osa_core::config::RunConfig;
use osa_core::dataset::{sample_candidates, Stage};
use osa_core::evaluation::{hit_at_1, pairwise_eval, AffinityOracle, ConstantScorer};
use osa_core::pipeline::{evaluate, init_model, load_data, prepare, run_training};

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.synth_users = 60;
    c.synth_items = 50;
    c.synth_interactions = 8;
    c.d_rec = 8;
    c.d_llm = 8;
    c.blocks = 1;
    c.heads = 1;
    c.max_len = 6;
    c.batch_size = 16;
    c.epochs = 2;
    c
}

#[test]
fn held_out_users_never_reach_the_split() {
    let c = RunConfig::default();
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    assert_eq!(prep.eval_users.len(), 10);
    let split_users: BTreeSet<_> = prep.split.users.iter().map(|u| u.user).collect();
    assert!(prep.eval_users.iter().all(|u| !split_users.contains(u)));
    assert_eq!(split_users.len(), 190);
    let task_users: BTreeSet<_> = prep.pair_tasks.iter().map(|t| t.user).collect();
    assert!(task_users.iter().all(|u| prep.eval_users.contains(u)));
    assert_eq!(prepare(&data.log, c.seed).unwrap().manifest_hash, prep.manifest_hash);
    assert_ne!(prepare(&data.log, c.seed + 1).unwrap().manifest_hash, prep.manifest_hash);
}

#[test]
fn planted_affinity_is_a_perfect_scorer() {
    let c = RunConfig::default();
    let data = load_data(&c).unwrap();
    let corpus = data.synthetic.as_ref().unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let hit = hit_at_1(&AffinityOracle(corpus), &prep.split, &data.log, Stage::Test, prep.candidate_seed).unwrap();
    assert_eq!(hit.value, 1.0);
    let pw = pairwise_eval(&AffinityOracle(corpus), &data.log, &prep.pair_tasks).unwrap();
    assert_eq!(pw.overall.unwrap().value, 1.0);
}

#[test]
fn constant_scores_break_ties_toward_the_lowest_item() {
    let c = RunConfig::default();
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let expected = prep
        .split
        .users
        .iter()
        .filter(|s| {
            let set = sample_candidates(&prep.split, &data.log, s.user, Stage::Test, prep.candidate_seed).unwrap();
            set.negatives.iter().all(|n| set.target < *n)
        })
        .count();
    let hit = hit_at_1(&ConstantScorer(0.0), &prep.split, &data.log, Stage::Test, prep.candidate_seed).unwrap();
    assert_eq!(hit.hits, expected);
    assert_eq!(hit.tied_users.len(), prep.split.users.len());
    let pw = pairwise_eval(&ConstantScorer(3.0), &data.log, &prep.pair_tasks).unwrap();
    assert_eq!(pw.overall.unwrap().value, 0.5);
    assert_eq!(pw.ties, prep.pair_tasks.len());
}

#[test]
fn readout_matches_closed_form_on_orthonormal_anchors() {
    let mut m = Array2::zeros((5, 7));
    for i in 0..5 {
        m[[i, i + 1]] = 1.0;
    }
    let bank = AnchorBank::new(m.clone(), AnchorProvenance::Random { seed: 0 }).unwrap();
    for r in 1..=5i64 {
        let v = m.row((r - 1) as usize).to_owned() * 2.5;
        // cos is 1 against a_r and 0 elsewhere
        let big = (1.0f64 / 0.1).exp();
        let expected = (r as f64 * big + (15 - r) as f64) / (big + 4.0);
        let got = rating_readout(v.view(), &bank, 0.1);
        assert!((got - expected).abs() < 1e-12, "r={r}: {got} vs {expected}");
    }
    assert_eq!(rating_readout(Array1::zeros(7).view(), &bank, 0.1), 3.0);
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let mut c = small_config();
    c.epochs = 0;
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let out = run_training(&c, &data.log, &prep).unwrap();
    assert_eq!(out.log.records.len(), 1);
    assert_eq!(out.log.records[0].epoch, 0);
    assert_eq!(out.log.best_epoch, 0);
    assert_eq!(out.checkpoint.model, init_model(&c, &data.log).unwrap());
}

#[test]
fn checkpoint_round_trips_and_guards_its_hash() {
    let c = small_config();
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let out = run_training(&c, &data.log, &prep).unwrap();
    assert_eq!(out.log.records.len(), 3);
    assert!(out.log.aborted.is_none());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    back.check_compatible(&data.log, &prep.manifest_hash).unwrap();
    assert!(back.check_compatible(&data.log, "0000").is_err());

    let a = evaluate(&back.model, &c, &data.log, &prep, true, true).unwrap();
    let b = evaluate(&out.checkpoint.model, &c, &data.log, &prep, true, true).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let mut tampered = out.checkpoint.clone();
    tampered.config.gamma = 0.0;
    tampered.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn training_is_reproducible() {
    let c = small_config();
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let a = run_training(&c, &data.log, &prep).unwrap();
    let b = run_training(&c, &data.log, &prep).unwrap();
    assert_eq!(
        serde_json::to_string(&a.checkpoint).unwrap(),
        serde_json::to_string(&b.checkpoint).unwrap()
    );
}
