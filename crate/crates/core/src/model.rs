//! Model state: encoder, projector, scoring head and the frozen anchors.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::{rating_readout, AlignmentConfig};
use crate::anchors::AnchorBank;
use crate::dataset::{CandidateSet, ItemId};
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderParams, UserState};
use crate::error::{Error, Result};
use crate::math::cosine;
use crate::projector::ProjectorParams;
use crate::seed;
use crate::tensor::{tensor_fields, Tensors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub d_llm: usize,
    pub d_hidden: usize,
    pub alignment: AlignmentConfig,
    /// Replace the user half of every interaction representation with zeros.
    pub item_only: bool,
    /// Keep the encoder (item table included) at its initialization.
    pub freeze_encoder: bool,
    /// Add `beta * cos(v, mean anchor)` to candidate scores.
    pub head_anchor_bias: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.alignment.validate()?;
        if self.d_llm == 0 || self.d_hidden == 0 {
            return Err(Error::Config("d_llm and d_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate score `<v, direction> + anchor_bias * cos(v, mean anchor)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub direction: Array1<f64>,
    pub anchor_bias: Array1<f64>,
}

tensor_fields!(HeadParams { direction, anchor_bias });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub projector: ProjectorParams,
    pub head: HeadParams,
}

/// Gradients mirror [`ModelParams`]; item rows are kept sparse.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub projector: ProjectorParams,
    pub head: HeadParams,
}

impl ModelGrads {
    pub fn merge(&mut self, other: &ModelGrads) {
        self.encoder.merge(&other.encoder);
        crate::tensor::add_assign(&mut self.projector, &other.projector);
        crate::tensor::add_assign(&mut self.head, &other.head);
    }

    /// Every gradient tensor by name, item table densified. Names and order
    /// match [`ModelParams::named_tensors`].
    pub fn named_dense(&self, n_items: usize) -> Vec<(String, Vec<f64>)> {
        let d = self.encoder.layers.positional.ncols();
        let mut out = vec![(
            "encoder.item_embeddings".to_string(),
            self.encoder.items.to_dense(n_items, d).into_raw_vec_and_offset().0,
        )];
        out.extend(self.dense_tensors().into_iter().map(|(n, t)| (n, t.to_vec())));
        out
    }

    pub(crate) fn dense_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.encoder.layers.tensors("encoder.layers", &mut out);
        self.projector.tensors("projector", &mut out);
        self.head.tensors("head", &mut out);
        out
    }

}

impl ModelParams {
    pub fn zero_grads(&self) -> ModelGrads {
        let mut projector = self.projector.clone();
        crate::tensor::zero(&mut projector);
        let mut head = self.head.clone();
        crate::tensor::zero(&mut head);
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            projector,
            head,
        }
    }

    /// Item table first, then encoder layers, projector and head.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![(
            "encoder.item_embeddings".to_string(),
            self.encoder.item_embeddings.as_slice().expect("standard layout"),
        )];
        out.extend(self.dense_tensors());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let ModelParams {
            encoder,
            projector,
            head,
        } = self;
        let mut out = vec![(
            "encoder.item_embeddings".to_string(),
            encoder.item_embeddings.as_slice_mut().expect("standard layout"),
        )];
        encoder.layers.tensors_mut("encoder.layers", &mut out);
        projector.tensors_mut("projector", &mut out);
        head.tensors_mut("head", &mut out);
        out
    }

    pub(crate) fn dense_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.encoder.layers.tensors("encoder.layers", &mut out);
        self.projector.tensors("projector", &mut out);
        self.head.tensors("head", &mut out);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub anchors: AnchorBank,
}

impl ModelState {
    pub fn init(config: ModelConfig, anchors: AnchorBank, seed: u64) -> Result<Self> {
        config.validate()?;
        if anchors.dim() != config.d_llm {
            return Err(Error::Incompatible(format!(
                "anchor dimension {} differs from d_llm {}",
                anchors.dim(),
                config.d_llm
            )));
        }
        let mut rng = seed::rng(seed);
        let encoder = EncoderParams::init(config.encoder.clone(), &mut rng)?;
        let projector = ProjectorParams::init(config.encoder.d_model, config.d_hidden, config.d_llm, &mut rng);
        let sd = 1.0 / (config.d_llm as f64).sqrt();
        let direction = Array1::from_shape_simple_fn(config.d_llm, || sd * rng.sample::<f64, _>(StandardNormal));
        Ok(ModelState {
            params: ModelParams {
                encoder,
                projector,
                head: HeadParams {
                    direction,
                    anchor_bias: Array1::zeros(1),
                },
            },
            config,
            anchors,
        })
    }

    pub fn n_items(&self) -> usize {
        self.config.encoder.n_items
    }

    pub fn d_rec(&self) -> usize {
        self.config.encoder.d_model
    }

    /// The encoder state used as the user half of `z`: zeros for the
    /// item-only variant.
    pub fn context(&self, history: &[ItemId]) -> Result<UserState> {
        let state = self.params.encoder.encode_history(history)?;
        if self.config.item_only {
            Ok(UserState {
                vector: Array1::zeros(self.d_rec()),
                as_of: state.as_of,
            })
        } else {
            Ok(state)
        }
    }

    /// Projected vectors `v` for `[context ; e_item]`, one row per item.
    pub fn project_items(&self, context: &UserState, items: &[ItemId]) -> Result<Array2<f64>> {
        let d = self.d_rec();
        if context.vector.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: context.vector.len(),
            });
        }
        let mut rows = Array2::zeros((items.len(), d));
        for (mut row, &item) in rows.rows_mut().into_iter().zip(items) {
            row.assign(&self.params.encoder.embed_item(item)?);
        }
        let users = context.vector.view().insert_axis(Axis(0));
        let (v, _) = self
            .params
            .projector
            .forward_pairs(users, rows.view(), &vec![0; items.len()]);
        Ok(v)
    }

    pub(crate) fn score_rows(&self, v: &Array2<f64>) -> Vec<f64> {
        let mean = self.anchors.mean_anchor();
        let beta = self.params.head.anchor_bias[0];
        v.rows()
            .into_iter()
            .map(|row| {
                let mut s = row.dot(&self.params.head.direction);
                if self.config.head_anchor_bias {
                    s += beta * cosine(row, mean.view()).unwrap_or(0.0);
                }
                s
            })
            .collect()
    }

    /// Score each candidate item for a user in `context`; higher is better.
    pub fn score_items(&self, context: &UserState, items: &[ItemId]) -> Result<Vec<f64>> {
        let v = self.project_items(context, items)?;
        Ok(self.score_rows(&v))
    }

    /// Scores in [`CandidateSet::items`] order (target first).
    pub fn score_candidates(&self, context: &UserState, candidates: &CandidateSet) -> Result<Vec<f64>> {
        self.score_items(context, &candidates.items())
    }

    /// Anchor readout of each item's projected interaction representation.
    pub fn readout_items(&self, context: &UserState, items: &[ItemId]) -> Result<Vec<f64>> {
        let v = self.project_items(context, items)?;
        Ok(v.rows()
            .into_iter()
            .map(|row| rating_readout(row, &self.anchors, self.config.alignment.tau))
            .collect())
    }
}
