use serde::{Deserialize, Serialize};

use crate::model::{ModelGrads, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer with per-tensor moment buffers laid out like
/// [`ModelParams::named_tensors`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Decoupled decay applied as `p -= lr * weight_decay * p` each step.
    #[serde(default)]
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64, params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.len()).collect();
        let buffers = |on: bool| {
            if on {
                shapes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        let adam = kind == OptimizerKind::Adam;
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first: buffers(adam),
            second: buffers(adam),
        }
    }

    /// One update. Tensors under `encoder.` are skipped when `freeze_encoder`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelGrads, freeze_encoder: bool) {
        self.step += 1;
        let n_items = params.encoder.item_embeddings.nrows();
        let d = params.encoder.item_embeddings.ncols();
        let item_grad = grads.encoder.items.to_dense(n_items, d);
        let mut grad_slices: Vec<&[f64]> = vec![item_grad.as_slice().expect("standard layout")];
        let dense = grads.dense_tensors();
        grad_slices.extend(dense.iter().map(|(_, g)| *g));

        let lr = self.learning_rate;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (k, ((name, p), g)) in params.named_tensors_mut().into_iter().zip(grad_slices).enumerate() {
            if freeze_encoder && name.starts_with("encoder.") {
                continue;
            }
            if self.weight_decay > 0.0 {
                let shrink = 1.0 - lr * self.weight_decay;
                p.iter_mut().for_each(|x| *x *= shrink);
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
