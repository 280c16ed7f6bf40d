use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::tsne::{tsne_2d, TsneConfig};
use crate::dataset::{InteractionLog, ItemId, Rating, UserId};
use crate::error::{Error, Result};
use crate::math::cosine;
use crate::model::ModelState;
use crate::seed;

pub const DEFAULT_GEOMETRY_SAMPLES: usize = 100;

/// One interaction with the history that preceded it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySample {
    pub user: UserId,
    pub item: ItemId,
    pub rating: Rating,
    pub history: Vec<ItemId>,
}

/// Every interaction of `users`, each with its chronological prefix.
pub fn all_interactions(log: &InteractionLog, users: &[UserId]) -> Vec<GeometrySample> {
    let mut out = Vec::new();
    for &user in users {
        let items: Vec<_> = log.history(user).collect();
        for (k, it) in items.iter().enumerate() {
            out.push(GeometrySample {
                user,
                item: it.item,
                rating: it.rating,
                history: items[..k].iter().map(|i| i.item).collect(),
            });
        }
    }
    out
}

/// `n` interactions of `users` sampled uniformly without replacement, in
/// log order.
pub fn sample_interactions(log: &InteractionLog, users: &[UserId], n: usize, seed: u64) -> Vec<GeometrySample> {
    let all = all_interactions(log, users);
    let n = n.min(all.len());
    let mut picks = rand::seq::index::sample(&mut seed::rng(seed), all.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| all[k].clone()).collect()
}

/// Projected interaction vectors, one row per sample.
pub fn project_samples(model: &ModelState, samples: &[GeometrySample]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((samples.len(), model.config.d_llm));
    for (mut row, s) in out.rows_mut().into_iter().zip(samples) {
        let context = model.context(&s.history)?;
        row.assign(&model.project_items(&context, &[s.item])?.row(0));
    }
    Ok(out)
}

/// Mean cosine between interactions of each rating level (rows) and each
/// anchor (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorAffinity {
    pub mean_cos: [[f64; 5]; 5],
    pub counts: [usize; 5],
    /// Levels whose own anchor has the highest mean cosine.
    pub own_anchor_max: [bool; 5],
}

impl AnchorAffinity {
    pub fn levels_at_own_anchor(&self) -> usize {
        self.own_anchor_max.iter().filter(|&&b| b).count()
    }
}

pub fn anchor_affinity(model: &ModelState, samples: &[GeometrySample]) -> Result<AnchorAffinity> {
    let v = project_samples(model, samples)?;
    let mut sums = [[0.0; 5]; 5];
    let mut counts = [0usize; 5];
    for (row, s) in v.rows().into_iter().zip(samples) {
        let level = s.rating.slot();
        counts[level] += 1;
        for r in Rating::ALL {
            sums[level][r.slot()] += cosine(row, model.anchors.anchor(r)).unwrap_or(0.0);
        }
    }
    let mut mean_cos = [[f64::NAN; 5]; 5];
    let mut own_anchor_max = [false; 5];
    for level in 0..5 {
        if counts[level] == 0 {
            continue;
        }
        for a in 0..5 {
            mean_cos[level][a] = sums[level][a] / counts[level] as f64;
        }
        own_anchor_max[level] = (0..5).all(|a| a == level || mean_cos[level][level] > mean_cos[level][a]);
    }
    Ok(AnchorAffinity {
        mean_cos,
        counts,
        own_anchor_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// Two unit rows; each row's largest-magnitude loading is positive.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn project(&self, points: &Array2<f64>) -> Array2<f64> {
        (points - &self.mean.view().insert_axis(Axis(0))).dot(&self.components.t())
    }
}

/// Top-two principal components of the rows of `points`.
pub fn pca_2d(points: &Array2<f64>) -> Result<Pca> {
    let (n, d) = points.dim();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {n}")));
    }
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let centered = points - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&l| top > 1e-300 && l > 1e-10 * top).count();
    if rank < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "covariance has rank {rank}; two components need at least two independent directions of variation"
        )));
    }
    let mut components = Array2::zeros((2, d));
    for (c, &k) in order.iter().take(2).enumerate() {
        let col = eig.eigenvectors.column(k);
        let lead = (0..d).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[c, i]] = sign * col[i];
        }
    }
    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryMethod {
    Pca,
    Tsne,
}

impl std::str::FromStr for GeometryMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(GeometryMethod::Pca),
            "tsne" | "t-sne" => Ok(GeometryMethod::Tsne),
            other => Err(format!("unknown geometry method {other:?} (expected pca or tsne)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryPoint {
    pub x: f64,
    pub y: f64,
    pub rating: u8,
    pub user_id: String,
    pub item_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub rating: u8,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryExport {
    pub method: GeometryMethod,
    pub points: Vec<GeometryPoint>,
    pub anchors: Vec<AnchorPoint>,
}

/// 2-D coordinates for the projected samples and the five anchors. PCA fits
/// on the samples and maps anchors into the same basis; t-SNE embeds samples
/// and anchors jointly.
pub fn export_geometry(
    model: &ModelState,
    log: &InteractionLog,
    samples: &[GeometrySample],
    method: GeometryMethod,
    seed: u64,
) -> Result<GeometryExport> {
    let v = project_samples(model, samples)?;
    let anchors = model.anchors.vectors();
    let (xy, axy) = match method {
        GeometryMethod::Pca => {
            let pca = pca_2d(&v)?;
            (pca.project(&v), pca.project(anchors))
        }
        GeometryMethod::Tsne => {
            if samples.len() < 3 {
                return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {}", samples.len())));
            }
            let joint = ndarray::concatenate(Axis(0), &[v.view(), anchors.view()]).expect("same width");
            let emb = tsne_2d(&joint, &TsneConfig::default(), seed)?;
            let n = samples.len();
            (emb.slice(ndarray::s![..n, ..]).to_owned(), emb.slice(ndarray::s![n.., ..]).to_owned())
        }
    };
    Ok(GeometryExport {
        method,
        points: samples
            .iter()
            .zip(xy.rows())
            .map(|(s, p)| GeometryPoint {
                x: p[0],
                y: p[1],
                rating: s.rating.value(),
                user_id: log.user_name(s.user).to_string(),
                item_id: log.item_name(s.item).to_string(),
            })
            .collect(),
        anchors: Rating::ALL
            .iter()
            .zip(axy.rows())
            .map(|(r, p)| AnchorPoint {
                rating: r.value(),
                x: p[0],
                y: p[1],
            })
            .collect(),
    })
}

impl GeometryExport {
    /// Point and anchor CSVs, each led by a `# config_hash=` comment line.
    pub fn write_csv(&self, points_path: &Path, anchors_path: &Path, config_hash: &str) -> Result<()> {
        let mut out = std::fs::File::create(points_path)?;
        writeln!(out, "# config_hash={config_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "rating", "user_id", "item_id"])?;
        for p in &self.points {
            w.write_record([
                format!("{:?}", p.x),
                format!("{:?}", p.y),
                p.rating.to_string(),
                p.user_id.clone(),
                p.item_id.clone(),
            ])?;
        }
        w.flush()?;
        let mut out = std::fs::File::create(anchors_path)?;
        writeln!(out, "# config_hash={config_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rating", "x", "y"])?;
        for a in &self.anchors {
            w.write_record([a.rating.to_string(), format!("{:?}", a.x), format!("{:?}", a.y)])?;
        }
        w.flush()?;
        Ok(())
    }
}
