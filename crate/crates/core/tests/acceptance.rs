//! Acceptance gate. Prints one PASS/FAIL line per criterion. With
//! `OSA_ACCEPTANCE_STRICT=1` any failure makes the process exit nonzero;
//! otherwise failures are reported but do not fail `cargo test`.

mod support;

use std::time::{Duration, Instant};

use ndarray::Array1;
use osa_core::alignment::{alignment_loss, strength_weight};
use osa_core::anchors::{synth_anchors, AnchorBank, AnchorProvenance};
use osa_core::config::RunConfig;
use osa_core::dataset::{Rating, Stage};
use osa_core::evaluation::{
    ablation_suite, all_interactions, anchor_affinity, export_geometry, hit_at_1, pairwise_eval, sample_interactions,
    AblationArm, GeometryMethod, GeometrySample,
};
use osa_core::model::ModelState;
use osa_core::pipeline::{evaluate, init_model, load_data, prepare, run_training, DataSource, Prepared};
use osa_core::training::{grad_check, toy_problem, GradCheckOptions, LossWeights};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Training settings for the learning criteria. The library defaults take
/// three steps per epoch on a 200-user corpus and leave the alignment term
/// too weak to shape the projected space within 30 epochs.
fn tuned(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.batch_size = 16;
    c.learning_rate = 5e-3;
    c.weight_decay = 0.1;
    c.lambda_align = 5.0;
    c.epochs = 30;
    c
}

fn rating(r: i64) -> Rating {
    Rating::new(r).unwrap()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let (model, batch) = toy_problem(8, 2, 0).unwrap();
    let lambda = model.config.alignment.lambda_align;
    let mut worst = 0.0f64;
    let mut all = true;
    for weights in [LossWeights::alignment_only(), LossWeights::next_item_only(), LossWeights::joint(lambda)] {
        let report = grad_check(&model, &batch, &GradCheckOptions::new(1e-4, weights)).unwrap();
        all &= report.pass && report.tolerance == 1e-4;
        worst = worst.max(report.worst().map_or(0.0, |t| t.max_rel_error));
    }
    let elapsed = start.elapsed();
    verdict(
        all && elapsed < Duration::from_secs(60),
        format!("max rel err {worst:.2e} < 1e-4 over three objectives, {elapsed:.1?} < 60s"),
    )
}

fn strength_weights() -> Verdict {
    let expected = [2.0, 1.5, 1.0, 1.5, 2.0];
    let got: Vec<f64> = (1..=5).map(|r| strength_weight(rating(r), 0.5)).collect();
    verdict(got == expected, format!("w = {got:?}, expected {expected:?} exactly"))
}

fn alignment_identities() -> Verdict {
    const TOL: f64 = 1e-10;
    let d = 6;
    let bank = synth_anchors(d, 20.0, 0.05, 3).unwrap();
    let mut worst = 0.0f64;
    let mut strict = true;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());
    // a direction orthogonal to every anchor: the last axis after
    // Gram-Schmidt against the bank
    let mut ortho = Array1::from_shape_fn(d, |i| ((i * 7 + 3) % 5) as f64 - 1.7);
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for r in 0..5 {
        let mut b = bank.vectors().row(r).to_owned();
        for q in &basis {
            b = &b - &(q * q.dot(&b));
        }
        let n = b.dot(&b).sqrt();
        if n > 1e-9 {
            basis.push(b / n);
        }
    }
    for q in &basis {
        ortho = &ortho - &(q * q.dot(&ortho));
    }
    for r in 1..=5 {
        let a = bank.anchor(rating(r)).to_owned();
        let w = strength_weight(rating(r), 0.5);
        for c in [0.5, 1.0, 3.0] {
            check(alignment_loss((&a * c).view(), rating(r), &bank, 0.5), 0.0);
            // scale invariance in both arguments
            let v = &a * 0.3 + &ortho;
            let base = alignment_loss(v.view(), rating(r), &bank, 0.5);
            check(alignment_loss((&v * c).view(), rating(r), &bank, 0.5), base);
            let scaled = AnchorBank::new(bank.vectors() * c, AnchorProvenance::Random { seed: 0 }).unwrap();
            check(alignment_loss(v.view(), rating(r), &scaled, 0.5), base);
        }
        check(alignment_loss(ortho.view(), rating(r), &bank, 0.5), w);
        check(alignment_loss((-&a).view(), rating(r), &bank, 0.5), 2.0 * w);
        // not parallel means strictly positive loss
        let tilted = &a + &(&ortho * 0.01);
        strict &= alignment_loss(tilted.view(), rating(r), &bank, 0.5) > 0.0;
    }
    verdict(
        worst < TOL && strict,
        format!("max deviation {worst:.1e} < {TOL:.0e}; tilted vectors have positive loss: {strict}"),
    )
}

fn random_baselines() -> Verdict {
    let start = Instant::now();
    let mut c = RunConfig::default();
    c.synth_users = 4000;
    c.synth_items = 200;
    c.synth_item_bias = 0.0;
    c.seed = 11;
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let model = init_model(&c, &data.log).unwrap();
    let hit = hit_at_1(&model, &prep.split, &data.log, Stage::Test, prep.candidate_seed).unwrap();
    let pw = pairwise_eval(&model, &data.log, &prep.pair_tasks).unwrap();
    let pw = pw.overall.unwrap();
    let elapsed = start.elapsed();
    verdict(
        (0.03..=0.07).contains(&hit.value)
            && hit.users >= 1000
            && (0.45..=0.55).contains(&pw.value)
            && pw.denominator >= 400
            && elapsed < Duration::from_secs(120),
        format!(
            "Hit@1 {:.4} over {} users in [0.03, 0.07]; pairwise {:.4} over {} tasks in [0.45, 0.55]; {elapsed:.1?} < 120s",
            hit.value, hit.users, pw.value, pw.denominator
        ),
    )
}

struct Trained {
    data: DataSource,
    prep: Prepared,
    before: ModelState,
    after: ModelState,
    best_epoch: usize,
    elapsed: Duration,
}

fn train_reference() -> Trained {
    let start = Instant::now();
    let c = tuned(42);
    let data = load_data(&c).unwrap();
    let prep = prepare(&data.log, c.seed).unwrap();
    let before = init_model(&c, &data.log).unwrap();
    let run = run_training(&c, &data.log, &prep).unwrap();
    Trained {
        data,
        prep,
        before,
        after: run.checkpoint.model,
        best_epoch: run.log.best_epoch,
        elapsed: start.elapsed(),
    }
}

fn planted_structure(t: &Trained) -> Verdict {
    let start = Instant::now();
    let hit = hit_at_1(&t.after, &t.prep.split, &t.data.log, Stage::Test, t.prep.candidate_seed).unwrap();
    let pw = pairwise_eval(&t.after, &t.data.log, &t.prep.pair_tasks).unwrap().overall.unwrap();
    let elapsed = t.elapsed + start.elapsed();
    verdict(
        hit.value >= 0.25 && pw.value >= 0.75 && elapsed < Duration::from_secs(600),
        format!(
            "test Hit@1 {:.4} >= 0.25; pairwise {:.4} >= 0.75 over {} tasks; checkpoint from epoch {}; {elapsed:.1?} < 600s",
            hit.value, pw.value, pw.denominator, t.best_epoch
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn ablation_direction() -> Verdict {
    let arms = [
        AblationArm::Full,
        AblationArm::NoAlignment,
        AblationArm::PermutedAnchors,
        AblationArm::RandomAnchors,
    ];
    let mut subtle: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    for seed in 1..=5 {
        let base = tuned(seed);
        let data = load_data(&base).unwrap();
        let prep = prepare(&data.log, base.seed).unwrap();
        let report = ablation_suite(&base, &data.log, &prep, &arms).unwrap();
        for (k, arm) in arms.iter().enumerate() {
            let r = report.arm(*arm).unwrap();
            subtle[k].push(r.report.pairwise.as_ref().unwrap().subtle.as_ref().unwrap().value);
        }
    }
    let med: Vec<f64> = subtle.iter().cloned().map(median).collect();
    let pass = med[1..].iter().all(|&m| med[0] >= m) && med[0] - med[2] >= 0.03;
    verdict(
        pass,
        format!(
            "median subtle accuracy: full {:.3}, no alignment {:.3}, permuted {:.3}, random {:.3}; margin over permuted {:.3} >= 0.03",
            med[0],
            med[1],
            med[2],
            med[3],
            med[0] - med[2]
        ),
    )
}

/// The training interactions of split users, each with its prefix.
fn training_samples(t: &Trained) -> Vec<GeometrySample> {
    let mut out = Vec::new();
    for s in &t.prep.split.users {
        out.extend(all_interactions(&t.data.log, &[s.user]).into_iter().take(s.train.len()));
    }
    out
}

fn geometry(t: &Trained) -> Verdict {
    let samples = training_samples(t);
    let before = anchor_affinity(&t.before, &samples).unwrap().levels_at_own_anchor();
    let after = anchor_affinity(&t.after, &samples).unwrap().levels_at_own_anchor();
    verdict(
        after >= 4 && before <= 2,
        format!(
            "levels closest to their own anchor over {} interactions: {after} >= 4 after training (epoch {}), {before} <= 2 before",
            samples.len(),
            t.best_epoch
        ),
    )
}

fn protocol() -> Verdict {
    let start = Instant::now();
    let stats = support::protocol::run(1000, 2024);
    let elapsed = start.elapsed();
    verdict(
        stats.violations.is_empty() && stats.corpora == 1000 && elapsed < Duration::from_secs(60),
        format!(
            "{} corpora, {} split users, {} candidate sets, {} pair tasks, {} violations; {elapsed:.1?} < 60s",
            stats.corpora,
            stats.split_users,
            stats.candidate_sets,
            stats.pair_tasks,
            stats.violations.len()
        ),
    )
}

fn artifacts(threads: usize) -> (String, String, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut c = RunConfig::default();
        c.synth_users = 80;
        c.synth_items = 60;
        c.synth_interactions = 10;
        c.d_rec = 16;
        c.d_llm = 16;
        c.epochs = 3;
        c.batch_size = 16;
        c.seed = 5;
        let data = load_data(&c).unwrap();
        let prep = prepare(&data.log, c.seed).unwrap();
        let run = run_training(&c, &data.log, &prep).unwrap();
        let report = evaluate(&run.checkpoint.model, &c, &data.log, &prep, true, true).unwrap();
        let users: Vec<_> = data.log.users().collect();
        let samples = sample_interactions(&data.log, &users, 100, 9);
        let export = export_geometry(&run.checkpoint.model, &data.log, &samples, GeometryMethod::Pca, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, a) = (dir.path().join("p.csv"), dir.path().join("a.csv"));
        export.write_csv(&p, &a, &c.hash()).unwrap();
        let mut csv = std::fs::read(&p).unwrap();
        csv.extend(std::fs::read(&a).unwrap());
        (
            serde_json::to_string(&run.checkpoint).unwrap(),
            serde_json::to_string(&report).unwrap(),
            csv,
        )
    })
}

fn determinism() -> Verdict {
    let one = artifacts(1);
    let again = artifacts(1);
    let four = artifacts(4);
    let same = |x: &(String, String, Vec<u8>), y: &(String, String, Vec<u8>)| [x.0 == y.0, x.1 == y.1, x.2 == y.2];
    let repeat = same(&one, &again);
    let pools = same(&one, &four);
    verdict(
        repeat.iter().chain(&pools).all(|&b| b),
        format!("checkpoint/report/csv identical on rerun {repeat:?}, across 1 and 4 threads {pools:?}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n} {name}: {}", v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "gradient check", gradients());
    report(2, "strength weights", strength_weights());
    report(3, "alignment identities", alignment_identities());
    report(4, "random baselines", random_baselines());
    let trained = train_reference();
    report(5, "planted structure", planted_structure(&trained));
    report(6, "ablation direction", ablation_direction());
    report(7, "anchor geometry", geometry(&trained));
    report(8, "protocol properties", protocol());
    report(9, "determinism", determinism());
    if failed == 0 {
        println!("all criteria passed");
        return;
    }
    println!("{failed} criteria failed");
    if std::env::var("OSA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
