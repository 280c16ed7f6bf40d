use serde::{Deserialize, Serialize};

use super::loss::{joint_loss, loss_value, LossWeights, TrainExample};
use crate::error::Result;
use crate::model::ModelState;

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Entries whose analytic and numeric gradients are both below this are
/// compared absolutely rather than relatively.
const GRAD_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub weights: LossWeights,
    /// Probe at most this many evenly spaced entries per tensor.
    pub max_entries_per_tensor: Option<usize>,
    /// Fault injection: negate the analytic gradient of this tensor.
    pub flip_sign_of: Option<String>,
}

impl GradCheckOptions {
    pub fn new(epsilon: f64, weights: LossWeights) -> Self {
        GradCheckOptions {
            epsilon,
            weights,
            max_entries_per_tensor: None,
            flip_sign_of: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error.is_nan() || t.max_rel_error >= self.tolerance)
            .map(|t| t.name.as_str())
            .collect()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compare analytic gradients with central differences for every trainable
/// tensor. Anchors are not parameters and are never perturbed.
pub fn grad_check(model: &ModelState, batch: &[TrainExample], options: &GradCheckOptions) -> Result<GradCheckReport> {
    let analytic = joint_loss(model, batch, options.weights, None)?
        .grads
        .named_dense(model.n_items());
    let mut probe = model.clone();
    let eps = options.epsilon;
    let mut tensors = Vec::with_capacity(analytic.len());
    for (k, (name, mut grad)) in analytic.into_iter().enumerate() {
        if options.flip_sign_of.as_deref() == Some(name.as_str()) {
            grad.iter_mut().for_each(|g| *g = -*g);
        }
        let indices: Vec<usize> = match options.max_entries_per_tensor {
            Some(cap) if cap < grad.len() => (0..cap).map(|j| j * grad.len() / cap).collect(),
            _ => (0..grad.len()).collect(),
        };
        let mut max_rel: f64 = 0.0;
        for &i in &indices {
            let original = probe.params.named_tensors_mut()[k].1[i];
            probe.params.named_tensors_mut()[k].1[i] = original + eps;
            let plus = loss_value(&probe, batch, options.weights)?;
            probe.params.named_tensors_mut()[k].1[i] = original - eps;
            let minus = loss_value(&probe, batch, options.weights)?;
            probe.params.named_tensors_mut()[k].1[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(grad[i], numeric);
            max_rel = if rel.is_nan() { f64::NAN } else { max_rel.max(rel) };
        }
        tensors.push(TensorCheck {
            name,
            entries_checked: indices.len(),
            max_rel_error: max_rel,
            max_abs_analytic: grad.iter().fold(0.0, |m, g| m.max(g.abs())),
        });
    }
    let pass = tensors
        .iter()
        .all(|t| t.max_rel_error.is_finite() && t.max_rel_error < GRAD_CHECK_TOLERANCE);
    Ok(GradCheckReport {
        epsilon: eps,
        tolerance: GRAD_CHECK_TOLERANCE,
        tensors,
        pass,
    })
}

/// A small model and batch for gradient checks: a synthetic corpus of 24
/// users and 40 items, `d_rec = d_llm`, short windows, and the anchor-bias
/// head enabled so every parameter receives gradient.
pub fn toy_problem(d_rec: usize, n_blocks: usize, seed: u64) -> Result<(ModelState, Vec<TrainExample>)> {
    use crate::alignment::AlignmentConfig;
    use crate::anchors::synth_anchors;
    use crate::dataset::{generate_synthetic, leave_one_out_split, SynthConfig};
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;

    let corpus = generate_synthetic(
        &SynthConfig {
            n_users: 24,
            n_items: 40,
            interactions_per_user: 9,
            ..SynthConfig::default()
        },
        seed,
    )?;
    let split = leave_one_out_split(&corpus.log);
    let config = ModelConfig {
        encoder: EncoderConfig {
            n_items: corpus.log.num_items(),
            d_model: d_rec,
            n_heads: 2,
            n_blocks,
            max_len: 5,
            ff_mult: 4,
            dropout: 0.0,
        },
        d_llm: d_rec,
        d_hidden: 2 * d_rec,
        alignment: AlignmentConfig::default(),
        item_only: false,
        freeze_encoder: false,
        head_anchor_bias: true,
    };
    let anchors = synth_anchors(d_rec, 20.0, 0.1, seed)?;
    let mut model = ModelState::init(config, anchors, seed)?;
    model.params.head.anchor_bias[0] = 0.5;
    let examples = super::build_examples(&split, model.n_items(), 5, seed)?;
    Ok((model, examples.into_iter().take(3).collect()))
}
