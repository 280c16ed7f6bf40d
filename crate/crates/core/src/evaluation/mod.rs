//! Hit@1, pairwise preference accuracy, the ablation suite and geometry
//! export.

mod ablation;
mod geometry;
mod metrics;
mod tsne;

pub use ablation::{ablation_suite, AblationArm, AblationReport, ArmResult, ConfigChange};
pub use geometry::{
    all_interactions, anchor_affinity, export_geometry, pca_2d, project_samples, sample_interactions, AnchorAffinity,
    AnchorPoint, GeometryExport, GeometryMethod, GeometryPoint, GeometrySample, Pca, DEFAULT_GEOMETRY_SAMPLES,
};
pub use metrics::{
    hit_at_1, pair_history, pairwise_eval, top_candidate, AffinityOracle, CandidateScorer, ConstantScorer, Fraction,
    HitReport, PairOutcome, PairwiseReport, RatingPredictor,
};
pub use tsne::{tsne_2d, TsneConfig};
