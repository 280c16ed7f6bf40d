use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use osa_core::config::{AnchorSource, RunConfig};

/// Run configuration: defaults, then `--config`, then the named flags,
/// then `--set` overrides in order.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set tau=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda_align: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub d_rec: Option<usize>,
    #[arg(long)]
    pub d_llm: Option<usize>,
    #[arg(long)]
    pub anchors: Option<AnchorSource>,
    #[arg(long)]
    pub anchor_path: Option<PathBuf>,
    #[arg(long)]
    pub item_only: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $( if let Some(v) = &self.$field { c.$field = v.clone().into(); } )*
            };
        }
        take!(seed, epochs, batch_size, learning_rate, lambda_align, gamma, tau, d_rec, d_llm, format);
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.delimiter {
            c.delimiter = Some(v.clone());
        }
        if let Some(v) = self.anchors {
            c.anchor_source = v;
        }
        if let Some(v) = &self.anchor_path {
            c.anchor_path = Some(v.clone());
        }
        if self.item_only {
            c.item_only = true;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override {kv:?} is not KEY=VALUE"))?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }
}
