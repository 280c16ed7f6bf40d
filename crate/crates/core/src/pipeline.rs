//! End-to-end wiring from a [`RunConfig`]: data, anchors, protocol
//! artifacts, training and evaluation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchors::{load_anchors, permute_anchors, randomize_anchors, synth_anchors, AnchorBank};
use crate::checkpoint::Checkpoint;
use crate::config::{AnchorSource, RunConfig};
use crate::dataset::{
    build_pair_tasks, generate_synthetic, ingest, leave_one_out_split_holding_out, read_normalized, sample_eval_users,
    Format, InteractionLog, PairTask, SplitDataset, Stage, SyntheticCorpus, UserId,
};
use crate::error::Result;
use crate::evaluation::{hit_at_1, pairwise_eval, HitReport, PairwiseReport};
use crate::model::ModelState;
use crate::seed;
use crate::training::{train, TrainingLog};

pub const NORMALIZED_MAGIC: &[u8; 8] = b"OSALOG01";

pub struct DataSource {
    pub log: InteractionLog,
    /// Present when the log was generated; enables oracle baselines.
    pub synthetic: Option<SyntheticCorpus>,
}

/// Read `config.data` (normalized or delimited) or generate the synthetic
/// corpus.
pub fn load_data(config: &RunConfig) -> Result<DataSource> {
    match &config.data {
        Some(path) => {
            let log = if is_normalized(path)? {
                read_normalized(path)?
            } else {
                ingest(path, &Format::parse(&config.format, config.delimiter.as_deref())?)?
            };
            Ok(DataSource { log, synthetic: None })
        }
        None => {
            let corpus = generate_synthetic(&config.synth_config(), seed::derive(config.seed, "synthetic"))?;
            Ok(DataSource {
                log: corpus.log.clone(),
                synthetic: Some(corpus),
            })
        }
    }
}

fn is_normalized(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 8];
    let mut f = std::fs::File::open(path)?;
    let n = f.read(&mut head)?;
    Ok(n == 8 && &head == NORMALIZED_MAGIC)
}

pub fn build_anchors(config: &RunConfig) -> Result<AnchorBank> {
    let anchor_seed = seed::derive(config.seed, seed::PURPOSE_ANCHORS);
    let base = |source: AnchorSource| -> Result<AnchorBank> {
        match source {
            AnchorSource::File => load_anchors(config.anchor_path.as_deref().expect("validated")),
            _ => synth_anchors(config.d_llm, config.anchor_phi, config.anchor_sigma, anchor_seed),
        }
    };
    match config.anchor_source {
        AnchorSource::File | AnchorSource::Synthetic => base(config.anchor_source),
        AnchorSource::Random => randomize_anchors(config.d_llm, seed::derive_indexed(anchor_seed, 1)),
        AnchorSource::Permuted => permute_anchors(&base(config.anchor_base)?, &config.anchor_permutation),
    }
}

/// Protocol artifacts shared by every run on the same data and seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub eval_users: Vec<UserId>,
    pub split: SplitDataset,
    pub pair_tasks: Vec<PairTask>,
    pub candidate_seed: u64,
    pub pair_seed: u64,
    pub manifest_hash: String,
}

/// Hold out the sampled evaluation users, split the rest leave-one-out and
/// build pair tasks for the held-out users.
pub fn prepare(log: &InteractionLog, master_seed: u64) -> Result<Prepared> {
    let eval_users = sample_eval_users(log, seed::derive(master_seed, seed::PURPOSE_EVAL_USERS));
    let split = leave_one_out_split_holding_out(log, &eval_users);
    let pair_seed = seed::derive(master_seed, seed::PURPOSE_PAIRS);
    let pair_tasks = build_pair_tasks(log, &eval_users, pair_seed);
    let candidate_seed = seed::derive(master_seed, seed::PURPOSE_CANDIDATES);
    let manifest_hash = manifest_hash(log, &eval_users, &split, &pair_tasks, candidate_seed)?;
    Ok(Prepared {
        eval_users,
        split,
        pair_tasks,
        candidate_seed,
        pair_seed,
        manifest_hash,
    })
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn manifest_hash(
    log: &InteractionLog,
    eval_users: &[UserId],
    split: &SplitDataset,
    tasks: &[PairTask],
    candidate_seed: u64,
) -> Result<String> {
    let mut w = HashWriter(Sha256::new());
    serde_json::to_writer(&mut w, &log.stats())?;
    serde_json::to_writer(&mut w, eval_users)?;
    serde_json::to_writer(&mut w, split)?;
    serde_json::to_writer(&mut w, tasks)?;
    serde_json::to_writer(&mut w, &candidate_seed)?;
    Ok(hex::encode(w.0.finalize()))
}

pub fn init_model(config: &RunConfig, log: &InteractionLog) -> Result<ModelState> {
    let anchors = build_anchors(config)?;
    ModelState::init(
        config.model_config(log.num_items())?,
        anchors,
        seed::derive(config.seed, seed::PURPOSE_INIT),
    )
}

pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

pub fn run_training(config: &RunConfig, log: &InteractionLog, prepared: &Prepared) -> Result<RunOutcome> {
    let model = init_model(config, log)?;
    let outcome = train(model, &prepared.split, log, &config.train_config(), prepared.candidate_seed)?;
    let checkpoint = Checkpoint::new(
        config,
        &prepared.manifest_hash,
        outcome.model,
        outcome.log.best_epoch,
        Some(outcome.log.clone()),
    );
    Ok(RunOutcome {
        checkpoint,
        log: outcome.log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub manifest_hash: String,
    pub master_seed: u64,
    pub candidate_seed: u64,
    pub pair_seed: u64,
    pub hit_at_1: Option<HitReport>,
    pub pairwise: Option<PairwiseReport>,
}

/// Test-stage Hit@1 on split users and pairwise accuracy on the held-out
/// users' tasks.
pub fn evaluate(
    model: &ModelState,
    config: &RunConfig,
    log: &InteractionLog,
    prepared: &Prepared,
    with_hit: bool,
    with_pairwise: bool,
) -> Result<EvalReport> {
    let hit = if with_hit {
        Some(hit_at_1(model, &prepared.split, log, Stage::Test, prepared.candidate_seed)?)
    } else {
        None
    };
    let pairwise = if with_pairwise {
        Some(pairwise_eval(model, log, &prepared.pair_tasks)?.summary())
    } else {
        None
    };
    Ok(EvalReport {
        config_hash: config.hash(),
        manifest_hash: prepared.manifest_hash.clone(),
        master_seed: config.seed,
        candidate_seed: prepared.candidate_seed,
        pair_seed: prepared.pair_seed,
        hit_at_1: hit,
        pairwise,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
