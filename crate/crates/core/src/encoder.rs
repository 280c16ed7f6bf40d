//! Causal self-attention sequence encoder with hand-written backward pass.
//!
//! Layout per block (pre-normalization):
//!
//! ```text
//! x1 = x + drop(MHA(LN1(x)))
//! x2 = x1 + drop(FFN(LN2(x1)))        FFN(b) = GELU(b W1 + c1) W2 + c2
//! ```
//!
//! followed by a final layer norm. Row 0 of the input is a zero item row plus
//! positional slot 0, so row `k` of the output is the user state after the
//! first `k` history items.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::ItemId;
use crate::error::{Error, Result};
use crate::math::{gelu, gelu_grad, layer_norm, layer_norm_backward, LayerNormCache};
use crate::tensor::tensor_fields;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_items: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Longest history consumed; older items are truncated.
    pub max_len: usize,
    pub ff_mult: usize,
    /// Inverted dropout on the embedding input and both residual branches.
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_rec ({}) must be a positive multiple of heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len == 0 || self.ff_mult == 0 {
            return Err(Error::Config("max history and ff multiplier must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array1<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array1<f64>,
}

tensor_fields!(BlockParams {
    ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, ff_w1, ff_b1, ff_w2, ff_b2
});

/// Everything in the encoder except the item table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayers {
    /// `(max_len + 1) x d`; slot 0 belongs to the start row.
    pub positional: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
}

tensor_fields!(EncoderLayers { positional, blocks, final_gain, final_bias });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub item_embeddings: Array2<f64>,
    pub layers: EncoderLayers,
}

/// Gradient rows for the item table, keyed by item index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub rows: BTreeMap<u32, Array1<f64>>,
}

impl SparseRows {
    pub fn add_row(&mut self, item: ItemId, grad: ArrayView1<f64>) {
        match self.rows.get_mut(&item.0) {
            Some(row) => *row += &grad,
            None => {
                self.rows.insert(item.0, grad.to_owned());
            }
        }
    }

    pub fn merge(&mut self, other: &SparseRows) {
        for (&k, v) in &other.rows {
            self.add_row(ItemId(k), v.view());
        }
    }

    pub fn to_dense(&self, n_items: usize, d: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n_items, d));
        for (&k, v) in &self.rows {
            out.row_mut(k as usize).assign(v);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub items: SparseRows,
    pub layers: EncoderLayers,
}

impl EncoderGrads {
    pub fn merge(&mut self, other: &EncoderGrads) {
        self.items.merge(&other.items);
        crate::tensor::add_assign(&mut self.layers, &other.layers);
    }
}

/// User state after consuming the first `as_of` items of a history.
#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub vector: Array1<f64>,
    pub as_of: usize,
}

fn normal<R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || std * rng.sample::<f64, _>(StandardNormal))
}

impl EncoderParams {
    /// Normal initialization with standard deviation `1/sqrt(fan_in)`
    /// (`1/sqrt(d)` for embeddings); gains one, offsets zero.
    pub fn init<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = d * config.ff_mult;
        let sd = 1.0 / (d as f64).sqrt();
        let item_embeddings = normal(rng, (config.n_items, d), sd);
        let positional = normal(rng, (config.max_len + 1, d), sd);
        let blocks = (0..config.n_blocks)
            .map(|_| BlockParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                wq: normal(rng, (d, d), sd),
                wk: normal(rng, (d, d), sd),
                wv: normal(rng, (d, d), sd),
                wo: normal(rng, (d, d), sd),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                ff_w1: normal(rng, (d, f), sd),
                ff_b1: Array1::zeros(f),
                ff_w2: normal(rng, (f, d), 1.0 / (f as f64).sqrt()),
                ff_b2: Array1::zeros(d),
            })
            .collect();
        Ok(EncoderParams {
            config,
            item_embeddings,
            layers: EncoderLayers {
                positional,
                blocks,
                final_gain: Array1::ones(d),
                final_bias: Array1::zeros(d),
            },
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        let mut layers = self.layers.clone();
        crate::tensor::zero(&mut layers);
        EncoderGrads {
            items: SparseRows::default(),
            layers,
        }
    }

    pub fn check_item(&self, item: ItemId) -> Result<()> {
        if item.index() < self.config.n_items {
            Ok(())
        } else {
            Err(Error::UnknownItem(item.0.to_string()))
        }
    }

    pub fn embed_item(&self, item: ItemId) -> Result<ArrayView1<'_, f64>> {
        self.check_item(item)?;
        Ok(self.item_embeddings.row(item.index()))
    }

    /// State after the most recent `max_len` items of `history`.
    pub fn encode_history(&self, history: &[ItemId]) -> Result<UserState> {
        let start = history.len().saturating_sub(self.config.max_len);
        let window = &history[start..];
        let (out, _) = self.forward(window, None)?;
        Ok(UserState {
            vector: out.row(window.len()).to_owned(),
            as_of: history.len(),
        })
    }

    /// States for every prefix `history[..k]`, `k = 0..=len`. Prefixes within
    /// `max_len` share one causal pass; longer prefixes are encoded on their
    /// own truncated window so element `k` always equals
    /// `encode_history(&history[..k])`.
    pub fn encode_prefixes(&self, history: &[ItemId]) -> Result<Vec<UserState>> {
        let head = history.len().min(self.config.max_len);
        let (out, _) = self.forward(&history[..head], None)?;
        let mut states: Vec<UserState> = out
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(k, row)| UserState {
                vector: row.to_owned(),
                as_of: k,
            })
            .collect();
        for k in head + 1..=history.len() {
            states.push(self.encode_history(&history[..k])?);
        }
        Ok(states)
    }

    /// Forward pass over at most `max_len` items. Returns `(len + 1) x d`
    /// states. `dropout` supplies an RNG when training with dropout.
    pub fn forward(
        &self,
        items: &[ItemId],
        dropout: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Array2<f64>, EncoderCache)> {
        if items.len() > self.config.max_len {
            return Err(Error::DimensionMismatch {
                expected: self.config.max_len,
                actual: items.len(),
            });
        }
        for &item in items {
            self.check_item(item)?;
        }
        let d = self.d_model();
        let t = items.len() + 1;
        let p = self.config.dropout;
        let mut rng = dropout.filter(|_| p > 0.0);
        let mut mask = |shape: (usize, usize)| -> Option<Array2<f64>> {
            rng.as_mut().map(|r| {
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_simple_fn(shape, || if r.random::<f64>() < p { 0.0 } else { keep })
            })
        };

        let mut x = self.layers.positional.slice(s![..t, ..]).to_owned();
        for (k, &item) in items.iter().enumerate() {
            let mut row = x.row_mut(k + 1);
            row += &self.item_embeddings.row(item.index());
        }
        let input_mask = mask((t, d));
        if let Some(m) = &input_mask {
            x *= m;
        }

        let mut blocks = Vec::with_capacity(self.layers.blocks.len());
        for bp in &self.layers.blocks {
            let (a, ln1) = layer_norm(&x, &bp.ln1_gain, &bp.ln1_bias);
            let q = a.dot(&bp.wq);
            let k = a.dot(&bp.wk);
            let v = a.dot(&bp.wv);
            let (o, probs) = self.attention(&q, &k, &v);
            let mut attn = o.dot(&bp.wo);
            let attn_mask = mask((t, d));
            if let Some(m) = &attn_mask {
                attn *= m;
            }
            let x1 = &x + &attn;
            let (b, ln2) = layer_norm(&x1, &bp.ln2_gain, &bp.ln2_bias);
            let f1 = b.dot(&bp.ff_w1) + &bp.ff_b1;
            let g = f1.mapv(gelu);
            let mut f2 = g.dot(&bp.ff_w2) + &bp.ff_b2;
            let ffn_mask = mask((t, d));
            if let Some(m) = &ffn_mask {
                f2 *= m;
            }
            let x2 = &x1 + &f2;
            blocks.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                attn_mask,
                ln2,
                b,
                f1,
                g,
                ffn_mask,
            });
            x = x2;
        }
        let (out, final_ln) = layer_norm(&x, &self.layers.final_gain, &self.layers.final_bias);
        Ok((
            out,
            EncoderCache {
                items: items.to_vec(),
                input_mask,
                blocks,
                final_ln,
            },
        ))
    }

    fn attention(&self, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let t = q.nrows();
        let dh = self.d_model() / self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut o = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
            let mut p = qh.dot(&kh.t()) * scale;
            for i in 0..t {
                let mut row = p.row_mut(i);
                let max = row.iter().take(i + 1).copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..t {
                    if j <= i {
                        row[j] = (row[j] - max).exp();
                        sum += row[j];
                    } else {
                        row[j] = 0.0;
                    }
                }
                row.mapv_inplace(|e| e / sum);
            }
            o.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        (o, probs)
    }

    /// Accumulate parameter gradients for upstream `d_out` (same shape as
    /// the forward output) into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>, grads: &mut EncoderGrads) {
        let dh = self.d_model() / self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let g = &mut grads.layers;
        let mut dx = layer_norm_backward(
            d_out,
            &self.layers.final_gain,
            &cache.final_ln,
            &mut g.final_gain,
            &mut g.final_bias,
        );

        for (bi, (bp, bc)) in self.layers.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let gb = &mut g.blocks[bi];
            // feed-forward branch; dx is d(x2)
            let mut df2 = dx.clone();
            if let Some(m) = &bc.ffn_mask {
                df2 *= m;
            }
            gb.ff_w2 += &bc.g.t().dot(&df2);
            gb.ff_b2 += &df2.sum_axis(Axis(0));
            let dg = df2.dot(&bp.ff_w2.t());
            let df1 = dg * &bc.f1.mapv(gelu_grad);
            gb.ff_w1 += &bc.b.t().dot(&df1);
            gb.ff_b1 += &df1.sum_axis(Axis(0));
            let db = df1.dot(&bp.ff_w1.t());
            let dx1 = dx + layer_norm_backward(&db, &bp.ln2_gain, &bc.ln2, &mut gb.ln2_gain, &mut gb.ln2_bias);

            // attention branch
            let mut dattn = dx1.clone();
            if let Some(m) = &bc.attn_mask {
                dattn *= m;
            }
            gb.wo += &bc.o.t().dot(&dattn);
            let d_o = dattn.dot(&bp.wo.t());
            let mut dq = Array2::zeros(bc.q.raw_dim());
            let mut dk = Array2::zeros(bc.k.raw_dim());
            let mut dv = Array2::zeros(bc.v.raw_dim());
            for (h, p) in bc.probs.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let d_oh = d_o.slice(cols);
                let dp = d_oh.dot(&bc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&d_oh));
                // softmax backward, row-wise
                let mut ds = &dp * p;
                for (mut row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let total = row.sum();
                    row.zip_mut_with(&p_row, |v, &pv| *v -= pv * total);
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
            }
            gb.wq += &bc.a.t().dot(&dq);
            gb.wk += &bc.a.t().dot(&dk);
            gb.wv += &bc.a.t().dot(&dv);
            let da = dq.dot(&bp.wq.t()) + dk.dot(&bp.wk.t()) + dv.dot(&bp.wv.t());
            dx = dx1 + layer_norm_backward(&da, &bp.ln1_gain, &bc.ln1, &mut gb.ln1_gain, &mut gb.ln1_bias);
        }

        if let Some(m) = &cache.input_mask {
            dx *= m;
        }
        let t = dx.nrows();
        let mut dpos = g.positional.slice_mut(s![..t, ..]);
        dpos += &dx;
        for (k, &item) in cache.items.iter().enumerate() {
            grads.items.add_row(item, dx.row(k + 1));
        }
    }
}

/// Intermediates retained for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    items: Vec<ItemId>,
    input_mask: Option<Array2<f64>>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
    b: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}
