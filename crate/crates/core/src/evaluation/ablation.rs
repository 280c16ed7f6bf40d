use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{AnchorSource, RunConfig};
use crate::dataset::InteractionLog;
use crate::error::Result;
use crate::pipeline::{evaluate, run_training, EvalReport, Prepared};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    Full,
    NoAlignment,
    NoGamma,
    ItemOnly,
    PermutedAnchors,
    RandomAnchors,
}

impl AblationArm {
    pub const ALL: [AblationArm; 6] = [
        AblationArm::Full,
        AblationArm::NoAlignment,
        AblationArm::NoGamma,
        AblationArm::ItemOnly,
        AblationArm::PermutedAnchors,
        AblationArm::RandomAnchors,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::NoAlignment => "w/o alignment loss",
            AblationArm::NoGamma => "w/o gamma",
            AblationArm::ItemOnly => "item-only rep",
            AblationArm::PermutedAnchors => "w/o ordinal structure",
            AblationArm::RandomAnchors => "w/o semantics",
        }
    }

    /// The arm's configuration: `base` with exactly the arm's fields changed.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            AblationArm::Full => {}
            AblationArm::NoAlignment => c.lambda_align = 0.0,
            AblationArm::NoGamma => c.gamma = 0.0,
            AblationArm::ItemOnly => c.item_only = true,
            AblationArm::PermutedAnchors => {
                c.anchor_base = match base.anchor_source {
                    AnchorSource::File => AnchorSource::File,
                    _ => AnchorSource::Synthetic,
                };
                c.anchor_source = AnchorSource::Permuted;
            }
            AblationArm::RandomAnchors => c.anchor_source = AnchorSource::Random,
        }
        c
    }
}

impl std::str::FromStr for AblationArm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
            format!("unknown arm {s:?} (expected full, no_alignment, no_gamma, item_only, permuted_anchors or random_anchors)")
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigChange {
    pub key: String,
    pub base: Value,
    pub arm: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: AblationArm,
    pub label: String,
    pub config_hash: String,
    pub changes: Vec<ConfigChange>,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub manifest_hash: String,
    pub base_config_hash: String,
    pub arms: Vec<ArmResult>,
}

/// Train and evaluate each arm on the same prepared split, candidate sets
/// and pair tasks.
pub fn ablation_suite(
    base: &RunConfig,
    log: &InteractionLog,
    prepared: &Prepared,
    arms: &[AblationArm],
) -> Result<AblationReport> {
    let mut results = Vec::with_capacity(arms.len());
    for &arm in arms {
        let config = arm.apply(base);
        log::info!("ablation arm: {}", arm.label());
        let run = run_training(&config, log, prepared)?;
        let report = evaluate(&run.checkpoint.model, &config, log, prepared, true, true)?;
        results.push(ArmResult {
            arm,
            label: arm.label().to_string(),
            config_hash: config.hash(),
            changes: base
                .diff(&config)
                .into_iter()
                .map(|(key, base, arm)| ConfigChange { key, base, arm })
                .collect(),
            best_epoch: run.log.best_epoch,
            report,
        });
    }
    Ok(AblationReport {
        manifest_hash: prepared.manifest_hash.clone(),
        base_config_hash: base.hash(),
        arms: results,
    })
}

impl AblationReport {
    pub fn arm(&self, arm: AblationArm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    /// Aligned text table, one row per arm.
    pub fn render_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let header = ["arm", "Hit@1", "strong", "subtle", "overall", "changes"];
        let rows: Vec<[String; 6]> = self
            .arms
            .iter()
            .map(|a| {
                let pw = a.report.pairwise.as_ref();
                [
                    a.label.clone(),
                    fmt(a.report.hit_at_1.as_ref().map(|h| h.value)),
                    fmt(pw.and_then(|p| p.strong).map(|f| f.value)),
                    fmt(pw.and_then(|p| p.subtle).map(|f| f.value)),
                    fmt(pw.and_then(|p| p.overall).map(|f| f.value)),
                    a.changes
                        .iter()
                        .map(|c| format!("{}={}", c.key, c.arm))
                        .collect::<Vec<_>>()
                        .join(" "),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(k, (c, w))| if k == 0 || k == 5 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header.map(String::from));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}
