use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand};
use osa_core::anchors::{load_anchors, permute_anchors, randomize_anchors, synth_anchors, validate_ordinality};
use osa_core::checkpoint::{short, Checkpoint};
use osa_core::config::RunConfig;
use osa_core::dataset::{generate_synthetic, ingest as ingest_file, write_normalized, write_tsv, Format, Stage, SynthConfig};
use osa_core::evaluation::{
    ablation_suite, anchor_affinity, export_geometry, hit_at_1, pairwise_eval, sample_interactions, AblationArm,
    GeometryMethod,
};
use osa_core::pipeline::{load_data, prepare, run_training, write_json, DataSource, EvalReport, Prepared};
use osa_core::seed;
use osa_core::training::{grad_check, toy_problem, GradCheckOptions, LossWeights};
use serde_json::json;

use crate::run_args::RunArgs;

pub struct Outputs {
    root: Option<PathBuf>,
}

impl Outputs {
    pub fn new(root: Option<PathBuf>) -> Self {
        Outputs { root }
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Create `dir`, refusing a non-empty one unless `force`.
    fn fresh_dir(&self, dir: &Path, force: bool) -> Result<PathBuf> {
        let dir = self.path(dir);
        if dir.exists() && std::fs::read_dir(&dir)?.next().is_some() && !force {
            bail!("output directory {} is not empty (use --force to overwrite)", dir.display());
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn file(&self, p: &Path) -> Result<PathBuf> {
        let p = self.path(p);
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(p)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// tsv, csv or delimited (with --delimiter).
    #[arg(long, default_value = "tsv")]
    format: String,
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

pub fn ingest(out: &Outputs, args: IngestArgs) -> Result<()> {
    let format = Format::parse(&args.format, args.delimiter.as_deref())?;
    let log = ingest_file(&args.input, &format).with_context(|| format!("ingesting {}", args.input.display()))?;
    let dir = out.fresh_dir(&args.out, true)?;
    write_normalized(&log, &dir.join("log.bin"))?;
    let stats = log.stats();
    write_json(&dir.join("stats.json"), &stats)?;
    print_json(&stats)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().n_users)]
    users: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_items)]
    items: usize,
    #[arg(long, default_value_t = SynthConfig::default().interactions_per_user)]
    interactions: usize,
    #[arg(long, default_value_t = SynthConfig::default().latent_dim)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().item_bias_scale)]
    item_bias: f64,
    #[arg(long, default_value_t = SynthConfig::default().taste_scale)]
    taste: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn synth_data(out: &Outputs, args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_users: args.users,
        n_items: args.items,
        interactions_per_user: args.interactions,
        latent_dim: args.latent_dim,
        noise: args.noise,
        item_bias_scale: args.item_bias,
        taste_scale: args.taste,
    };
    let corpus = generate_synthetic(&config, args.seed)?;
    let dir = out.fresh_dir(&args.out, true)?;
    write_tsv(&corpus.log, &dir.join("ratings.tsv"))?;
    write_normalized(&corpus.log, &dir.join("log.bin"))?;
    write_json(
        &dir.join("synthetic.json"),
        &json!({ "config": config, "seed": args.seed, "thresholds": corpus.thresholds }),
    )?;
    let stats = corpus.log.stats();
    write_json(&dir.join("stats.json"), &stats)?;
    print_json(&stats)
}

fn write_snapshot(dir: &Path, config: &RunConfig) -> Result<()> {
    let text = format!("# config_hash = \"{}\"\n{}", config.hash(), config.to_toml()?);
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn load_prepared(config: &RunConfig) -> Result<(DataSource, Prepared)> {
    let data = load_data(config).context("loading data")?;
    let prepared = prepare(&data.log, config.seed)?;
    Ok((data, prepared))
}

pub fn train(out: &Outputs, run: RunArgs, dir: &Path, force: bool) -> Result<()> {
    let config = run.resolve()?;
    let dir = out.fresh_dir(dir, force)?;
    write_snapshot(&dir, &config)?;
    let (data, prepared) = load_prepared(&config)?;
    log::info!(
        "{} training users, {} held-out users, {} pair tasks, manifest {}",
        prepared.split.users.len(),
        prepared.eval_users.len(),
        prepared.pair_tasks.len(),
        short(&prepared.manifest_hash)
    );
    let outcome = run_training(&config, &data.log, &prepared)?;
    outcome.checkpoint.save(&dir.join("checkpoint.json"))?;
    let hash = config.hash();
    let mut jsonl = String::new();
    for record in &outcome.log.records {
        let mut v = serde_json::to_value(record)?;
        v["config_hash"] = json!(hash);
        jsonl.push_str(&v.to_string());
        jsonl.push('\n');
    }
    std::fs::write(dir.join("training_log.jsonl"), jsonl)?;
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "config_hash": hash,
            "manifest_hash": prepared.manifest_hash,
            "training_users": prepared.split.users.len(),
            "held_out_users": prepared.eval_users,
            "excluded_users": prepared.split.excluded_users,
            "pair_tasks": prepared.pair_tasks.len(),
            "candidate_seed": prepared.candidate_seed,
            "best_epoch": outcome.log.best_epoch,
        }),
    )?;
    if let Some(reason) = &outcome.log.aborted {
        bail!("training aborted ({reason}); last good checkpoint written to {}", dir.display());
    }
    println!(
        "best epoch {} of {}; checkpoint {}",
        outcome.log.best_epoch,
        config.epochs,
        dir.join("checkpoint.json").display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Read the data from here instead of the path in the checkpoint config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reject the checkpoint unless its config hash matches this file's.
    #[arg(long)]
    expect_config: Option<PathBuf>,
}

struct Loaded {
    checkpoint: Checkpoint,
    data: DataSource,
    prepared: Prepared,
}

fn load_checkpoint(args: &CheckpointArgs) -> Result<Loaded> {
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if let Some(path) = &args.expect_config {
        let expected = RunConfig::load(path)?.hash();
        ensure!(
            expected == checkpoint.config_hash,
            "config hash mismatch: {} has {}, checkpoint has {}",
            path.display(),
            short(&expected),
            short(&checkpoint.config_hash)
        );
    }
    let mut config = checkpoint.config.clone();
    if let Some(data) = &args.data {
        config.data = Some(data.clone());
    }
    let (data, prepared) = load_prepared(&config)?;
    checkpoint.check_compatible(&data.log, &prepared.manifest_hash)?;
    Ok(Loaded {
        checkpoint,
        data,
        prepared,
    })
}

fn report(loaded: &Loaded, hit: Option<osa_core::evaluation::HitReport>, pairwise: Option<osa_core::evaluation::PairwiseReport>) -> EvalReport {
    EvalReport {
        config_hash: loaded.checkpoint.config_hash.clone(),
        manifest_hash: loaded.prepared.manifest_hash.clone(),
        master_seed: loaded.checkpoint.config.seed,
        candidate_seed: loaded.prepared.candidate_seed,
        pair_seed: loaded.prepared.pair_seed,
        hit_at_1: hit,
        pairwise,
    }
}

fn emit(out: &Outputs, path: Option<&Path>, value: &EvalReport) -> Result<()> {
    if let Some(p) = path {
        write_json(&out.file(p)?, value)?;
    }
    print_json(value)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    #[arg(long, default_value = "test")]
    stage: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(out: &Outputs, args: EvalArgs) -> Result<()> {
    let stage = match args.stage.as_str() {
        "test" => Stage::Test,
        "validation" => Stage::Validation,
        other => bail!("unknown stage {other:?} (expected test or validation)"),
    };
    let loaded = load_checkpoint(&args.source)?;
    let hit = hit_at_1(
        &loaded.checkpoint.model,
        &loaded.prepared.split,
        &loaded.data.log,
        stage,
        loaded.prepared.candidate_seed,
    )?;
    emit(out, args.out.as_deref(), &report(&loaded, Some(hit), None))
}

#[derive(Args, Debug)]
pub struct PairwiseArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    /// Keep per-task readouts in the report.
    #[arg(long)]
    outcomes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pairwise(out: &Outputs, args: PairwiseArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.source)?;
    let mut pw = pairwise_eval(&loaded.checkpoint.model, &loaded.data.log, &loaded.prepared.pair_tasks)?;
    if !args.outcomes {
        pw = pw.summary();
    }
    emit(out, args.out.as_deref(), &report(&loaded, None, Some(pw)))
}

pub fn ablate(
    out: &Outputs,
    run: RunArgs,
    arms: Vec<AblationArm>,
    dir: &Path,
    force: bool,
) -> Result<()> {
    let config = run.resolve()?;
    let dir = out.fresh_dir(dir, force)?;
    write_snapshot(&dir, &config)?;
    let arms = if arms.is_empty() { AblationArm::ALL.to_vec() } else { arms };
    let (data, prepared) = load_prepared(&config)?;
    let report = ablation_suite(&config, &data.log, &prepared, &arms)?;
    write_json(&dir.join("ablation.json"), &report)?;
    let table = format!(
        "# config_hash={} manifest_hash={}\n{}",
        report.base_config_hash,
        report.manifest_hash,
        report.render_table()
    );
    std::fs::write(dir.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    d_rec: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// joint, next-item, alignment or all.
    #[arg(long, default_value = "all")]
    objective: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gradcheck(out: &Outputs, args: GradcheckArgs) -> Result<()> {
    let (model, batch) = toy_problem(args.d_rec, args.blocks, args.seed)?;
    let lambda = model.config.alignment.lambda_align;
    let objectives: Vec<(&str, LossWeights)> = match args.objective.as_str() {
        "joint" => vec![("joint", LossWeights::joint(lambda))],
        "next-item" => vec![("next-item", LossWeights::next_item_only())],
        "alignment" => vec![("alignment", LossWeights::alignment_only())],
        "all" => vec![
            ("alignment", LossWeights::alignment_only()),
            ("next-item", LossWeights::next_item_only()),
            ("joint", LossWeights::joint(lambda)),
        ],
        other => bail!("unknown objective {other:?}"),
    };
    let mut reports = serde_json::Map::new();
    let mut failed = Vec::new();
    for (name, weights) in objectives {
        let r = grad_check(&model, &batch, &GradCheckOptions::new(args.epsilon, weights))?;
        let worst = r.worst().map_or(0.0, |t| t.max_rel_error);
        println!("{name:<10} {} (max rel err {worst:.2e})", if r.pass { "pass" } else { "FAIL" });
        if !r.pass {
            failed.push(format!("{name}: {}", r.failing().join(", ")));
        }
        reports.insert(name.to_string(), serde_json::to_value(&r)?);
    }
    if let Some(p) = &args.out {
        write_json(&out.file(p)?, &reports)?;
    }
    ensure!(failed.is_empty(), "gradient check failed for {}", failed.join("; "));
    Ok(())
}

#[derive(Args, Debug)]
pub struct GeometryArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    /// Interactions to sample; the config's `geometry_samples` by default.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "pca")]
    method: GeometryMethod,
    #[arg(long)]
    out: PathBuf,
}

pub fn geometry(out: &Outputs, args: GeometryArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.source)?;
    let config = &loaded.checkpoint.config;
    let n = args.samples.unwrap_or(config.geometry_samples);
    ensure!(n >= 3, "need at least 3 samples, got {n}");
    let users: Vec<_> = loaded.data.log.users().collect();
    let geo_seed = seed::derive(config.seed, seed::PURPOSE_GEOMETRY);
    let samples = sample_interactions(&loaded.data.log, &users, n, geo_seed);
    let export = export_geometry(&loaded.checkpoint.model, &loaded.data.log, &samples, args.method, geo_seed)?;
    let dir = out.fresh_dir(&args.out, true)?;
    export.write_csv(
        &dir.join("geometry_points.csv"),
        &dir.join("geometry_anchors.csv"),
        &loaded.checkpoint.config_hash,
    )?;
    let affinity = anchor_affinity(&loaded.checkpoint.model, &samples)?;
    write_json(
        &dir.join("anchor_affinity.json"),
        &json!({ "config_hash": loaded.checkpoint.config_hash, "affinity": affinity }),
    )?;
    println!(
        "{} points written to {}; {} of 5 rating levels closest to their own anchor",
        export.points.len(),
        dir.display(),
        affinity.levels_at_own_anchor()
    );
    Ok(())
}

#[derive(Subcommand, Debug)]
pub enum AnchorCommand {
    /// Ordinal bank: consecutive anchors separated by `phi` degrees.
    Synth {
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 20.0)]
        phi: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Five independent random unit vectors.
    Random {
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rating r takes the input anchor at position perm[r-1].
    Permute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,2,3,4,1")]
        perm: Vec<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the cosine matrix; fails unless similarity falls off
    /// monotonically with rating distance.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
}

pub fn anchors(out: &Outputs, cmd: AnchorCommand) -> Result<()> {
    let (bank, path) = match cmd {
        AnchorCommand::Synth {
            dim,
            phi,
            sigma,
            seed,
            out: p,
        } => (synth_anchors(dim, phi, sigma, seed)?, p),
        AnchorCommand::Random { dim, seed, out: p } => (randomize_anchors(dim, seed)?, p),
        AnchorCommand::Permute { input, perm, out: p } => (permute_anchors(&load_anchors(&input)?, &perm)?, p),
        AnchorCommand::Validate { input } => {
            let report = validate_ordinality(&load_anchors(&input)?);
            for row in report.cosine {
                println!("{}", row.map(|c| format!("{c:>7.4}")).join(" "));
            }
            println!("monotone: {}", report.monotone);
            ensure!(report.monotone, "anchor similarities are not ordinal");
            return Ok(());
        }
    };
    let path = out.file(&path)?;
    bank.save(&path)?;
    println!("{} ({}) checksum {}", path.display(), bank.provenance, short(&bank.checksum()));
    Ok(())
}
