//! Flat run configuration: TOML or JSON files, `key=value` overrides, and a
//! stable content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::alignment::AlignmentConfig;
use crate::dataset::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSource {
    /// Load from `anchor_path`.
    File,
    /// Ordinal bank from `anchor_phi` and `anchor_sigma`.
    Synthetic,
    /// Independent random unit vectors.
    Random,
    /// The file or synthetic bank reordered by `anchor_permutation`.
    Permuted,
}

impl std::str::FromStr for AnchorSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| {
            format!("unknown anchor source {s:?} (expected file, synthetic, random or permuted)")
        })
    }
}

/// Everything needed to reproduce a run. Keys are flat so every field can
/// be overridden as `key=value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    /// Rating file or normalized log; a synthetic corpus when absent.
    pub data: Option<PathBuf>,
    pub format: String,
    pub delimiter: Option<String>,

    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_interactions: usize,
    pub synth_latent_dim: usize,
    pub synth_noise: f64,
    pub synth_item_bias: f64,
    pub synth_taste: f64,

    pub anchor_source: AnchorSource,
    pub anchor_path: Option<PathBuf>,
    pub anchor_phi: f64,
    pub anchor_sigma: f64,
    /// When permuting, rating `r` takes the base anchor `anchor_permutation[r-1]`.
    pub anchor_permutation: Vec<u8>,
    /// Base bank for the permuted source: `file` or `synthetic`.
    pub anchor_base: AnchorSource,

    pub d_rec: usize,
    pub d_llm: usize,
    /// Projector hidden width; `2 * d_llm` when absent.
    pub d_hidden: Option<usize>,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ff_mult: usize,
    pub dropout: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,

    pub gamma: f64,
    pub lambda_align: f64,
    pub tau: f64,
    pub item_only: bool,
    pub freeze_encoder: bool,
    pub head_anchor_bias: bool,

    pub geometry_samples: usize,

    /// Not part of the hash.
    pub output_dir: Option<PathBuf>,
    /// Not part of the hash; results do not depend on it.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        RunConfig {
            seed: 42,
            data: None,
            format: "tsv".into(),
            delimiter: None,
            synth_users: synth.n_users,
            synth_items: synth.n_items,
            synth_interactions: synth.interactions_per_user,
            synth_latent_dim: synth.latent_dim,
            synth_noise: synth.noise,
            synth_item_bias: synth.item_bias_scale,
            synth_taste: synth.taste_scale,
            anchor_source: AnchorSource::Synthetic,
            anchor_path: None,
            anchor_phi: 20.0,
            anchor_sigma: 0.05,
            anchor_permutation: vec![5, 2, 3, 4, 1],
            anchor_base: AnchorSource::Synthetic,
            d_rec: 64,
            d_llm: 64,
            d_hidden: None,
            blocks: 2,
            heads: 2,
            max_len: 20,
            ff_mult: 4,
            dropout: 0.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            optimizer: OptimizerKind::Adam,
            gamma: 0.5,
            lambda_align: 0.5,
            tau: 0.1,
            item_only: false,
            freeze_encoder: false,
            head_anchor_bias: false,
            geometry_samples: 100,
            output_dir: None,
            threads: None,
        }
    }
}

const UNHASHED: [&str; 2] = ["output_dir", "threads"];

impl RunConfig {
    /// `.json` files parse as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config: RunConfig = if is_json {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Set one field from its textual form, typed by the field's current
    /// value (arrays accept JSON or comma-separated lists).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes as an object"),
        };
        let current = map
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let bad = |what: &str| Error::Config(format!("{key}: cannot parse {raw:?} as {what}"));
        let value = match current {
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("a boolean"))?),
            Value::Number(_) => serde_json::from_str::<Value>(raw)
                .ok()
                .filter(Value::is_number)
                .ok_or_else(|| bad("a number"))?,
            Value::Array(_) => serde_json::from_str::<Value>(raw).ok().filter(Value::is_array).unwrap_or_else(|| {
                Value::Array(
                    raw.split(',')
                        .map(|s| serde_json::from_str(s.trim()).unwrap_or(Value::String(s.trim().into())))
                        .collect(),
                )
            }),
            Value::Null if raw.is_empty() || raw == "none" => Value::Null,
            Value::Null => serde_json::from_str::<Value>(raw)
                .ok()
                .filter(Value::is_number)
                .unwrap_or_else(|| Value::String(raw.into())),
            _ => Value::String(raw.into()),
        };
        map.insert(key.to_string(), value);
        let updated: RunConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(1)?.validate()?;
        self.train_config().validate()?;
        if self.data.is_none() {
            self.synth_config().validate()?;
        }
        if self.anchor_source == AnchorSource::Permuted {
            crate::anchors::invert_permutation(&self.anchor_permutation)?;
            if !matches!(self.anchor_base, AnchorSource::File | AnchorSource::Synthetic) {
                return Err(Error::Config("anchor_base must be file or synthetic".into()));
            }
        }
        let needs_file = self.anchor_source == AnchorSource::File
            || (self.anchor_source == AnchorSource::Permuted && self.anchor_base == AnchorSource::File);
        if needs_file && self.anchor_path.is_none() {
            return Err(Error::Config("anchor_path is required for file anchors".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding output location and
    /// thread count.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            for key in UNHASHED {
                map.remove(key);
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Fields whose values differ, as `(key, self, other)`.
    pub fn diff(&self, other: &RunConfig) -> Vec<(String, Value, Value)> {
        let (Value::Object(a), Value::Object(b)) = (
            serde_json::to_value(self).expect("config serializes"),
            serde_json::to_value(other).expect("config serializes"),
        ) else {
            unreachable!("config serializes as an object")
        };
        a.into_iter()
            .filter_map(|(k, va)| {
                let vb = b.get(&k).cloned().unwrap_or(Value::Null);
                (va != vb).then_some((k, va, vb))
            })
            .collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.synth_users,
            n_items: self.synth_items,
            interactions_per_user: self.synth_interactions,
            latent_dim: self.synth_latent_dim,
            noise: self.synth_noise,
            item_bias_scale: self.synth_item_bias,
            taste_scale: self.synth_taste,
        }
    }

    pub fn model_config(&self, n_items: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            encoder: EncoderConfig {
                n_items,
                d_model: self.d_rec,
                n_heads: self.heads,
                n_blocks: self.blocks,
                max_len: self.max_len,
                ff_mult: self.ff_mult,
                dropout: self.dropout,
            },
            d_llm: self.d_llm,
            d_hidden: self.d_hidden.unwrap_or(2 * self.d_llm),
            alignment: AlignmentConfig {
                gamma: self.gamma,
                lambda_align: self.lambda_align,
                tau: self.tau,
            },
            item_only: self.item_only,
            freeze_encoder: self.freeze_encoder,
            head_anchor_bias: self.head_anchor_bias,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
            optimizer: self.optimizer,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml_and_json() {
        let c = RunConfig::default();
        let toml_text = c.to_toml().unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&toml_text).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn overrides_are_typed() {
        let mut c = RunConfig::default();
        c.set("lambda_align", "0").unwrap();
        c.set("item_only", "true").unwrap();
        c.set("anchor_permutation", "2,1,3,4,5").unwrap();
        c.set("d_hidden", "32").unwrap();
        c.set("data", "ratings.dat").unwrap();
        c.set("optimizer", "sgd").unwrap();
        assert_eq!(c.lambda_align, 0.0);
        assert!(c.item_only);
        assert_eq!(c.anchor_permutation, vec![2, 1, 3, 4, 5]);
        assert_eq!(c.d_hidden, Some(32));
        assert_eq!(c.data, Some(PathBuf::from("ratings.dat")));
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
        assert!(c.set("no_such_key", "1").is_err());
        assert!(c.set("epochs", "many").is_err());
        assert!(c.set("tau", "0").is_err());
    }

    #[test]
    fn hash_ignores_output_and_threads_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = Some("/tmp/x".into());
        b.threads = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.gamma = 0.0;
        assert_ne!(a.hash(), b.hash());
        let diff = a.diff(&b);
        let keys: Vec<_> = diff.iter().map(|d| d.0.as_str()).filter(|k| !UNHASHED.contains(k)).collect();
        assert_eq!(keys, vec!["gamma"]);
    }
}
