//! Interaction logs, leave-one-out splits, candidate sets, pairwise tasks and
//! the synthetic corpus generator.

mod candidates;
mod ingest;
mod log;
mod pairs;
mod split;
mod synthetic;

pub use candidates::{sample_candidates, sample_eval_users, CandidateSet, NegativePool, Stage, NUM_NEGATIVES};
pub use ingest::{ingest, read_normalized, write_normalized, write_tsv, Format};
pub use log::{Interaction, InteractionLog, ItemId, LogStats, Rating, UserId};
pub use pairs::{build_pair_tasks, PairCategory, PairTask};
pub use split::{leave_one_out_split, leave_one_out_split_holding_out, SplitDataset, UserSplit};
pub use synthetic::{generate_synthetic, SynthConfig, SyntheticCorpus};
