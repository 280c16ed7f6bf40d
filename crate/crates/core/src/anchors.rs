//! The five frozen rating anchors and their loaded, synthetic, permuted and
//! random variants.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Rating;
use crate::error::{Error, Result};
use crate::math::{cosine, norm};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnchorProvenance {
    Loaded { path: String },
    Synthetic { phi_deg: f64, sigma: f64, seed: u64 },
    Permuted { base: Box<AnchorProvenance>, permutation: [u8; 5] },
    Random { seed: u64 },
}

impl AnchorProvenance {
    pub fn kind(&self) -> &'static str {
        match self {
            AnchorProvenance::Loaded { .. } => "loaded",
            AnchorProvenance::Synthetic { .. } => "synthetic",
            AnchorProvenance::Permuted { .. } => "permuted",
            AnchorProvenance::Random { .. } => "random",
        }
    }
}

impl fmt::Display for AnchorProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorProvenance::Loaded { path } => write!(f, "loaded({path})"),
            AnchorProvenance::Synthetic { phi_deg, sigma, seed } => {
                write!(f, "synthetic(phi={phi_deg}, sigma={sigma}, seed={seed})")
            }
            AnchorProvenance::Permuted { base, permutation } => write!(f, "permuted({base}, {permutation:?})"),
            AnchorProvenance::Random { seed } => write!(f, "random(seed={seed})"),
        }
    }
}

/// Anchor vectors indexed by rating. Stored exactly as given; every consumer
/// goes through cosine similarity, so magnitudes never matter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorBank {
    vectors: Array2<f64>,
    pub provenance: AnchorProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalityReport {
    pub cosine: [[f64; 5]; 5],
    /// Along every row, cosine never increases as `|r - s|` grows.
    pub monotone: bool,
}

#[derive(Serialize, Deserialize)]
struct AnchorFile {
    dim: usize,
    anchors: Vec<AnchorEntry>,
}

#[derive(Serialize, Deserialize)]
struct AnchorEntry {
    label: String,
    values: Vec<f64>,
}

impl AnchorBank {
    pub fn new(vectors: Array2<f64>, provenance: AnchorProvenance) -> Result<Self> {
        if vectors.nrows() != 5 {
            return Err(Error::AnchorCount(vectors.nrows()));
        }
        for (r, row) in vectors.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::AnchorFormat(format!("anchor {} is not finite", r + 1)));
            }
            if norm(row) < 1e-12 {
                return Err(Error::ZeroAnchor(r as u8 + 1));
            }
        }
        Ok(AnchorBank {
            vectors: vectors.as_standard_layout().to_owned(),
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn anchor(&self, rating: Rating) -> ArrayView1<'_, f64> {
        self.vectors.row(rating.slot())
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Elementwise mean of the five anchors.
    pub fn mean_anchor(&self) -> Array1<f64> {
        self.vectors.mean_axis(ndarray::Axis(0)).expect("five rows")
    }

    /// SHA-256 over the raw f64 bits, for frozen-anchor checks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.vectors.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Cosine of `v` against each anchor, `None` for a numerically zero `v`.
    pub fn cosines(&self, v: ArrayView1<f64>) -> Option<[f64; 5]> {
        let mut out = [0.0; 5];
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = cosine(v, self.vectors.row(r))?;
        }
        Some(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = AnchorFile {
            dim: self.dim(),
            anchors: Rating::ALL
                .iter()
                .map(|r| AnchorEntry {
                    label: r.to_string(),
                    values: self.anchor(*r).to_vec(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

/// Read `{dim, anchors: [{label, values}]}` with labels `"1"`..`"5"`.
pub fn load_anchors(path: &Path) -> Result<AnchorBank> {
    let file: AnchorFile = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.anchors.len() != 5 {
        return Err(Error::AnchorCount(file.anchors.len()));
    }
    let mut vectors = Array2::zeros((5, file.dim));
    let mut seen = [false; 5];
    for entry in &file.anchors {
        let rating = entry
            .label
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|v| Rating::new(v).ok())
            .ok_or_else(|| Error::AnchorFormat(format!("label {:?} is not a rating 1..5", entry.label)))?;
        if std::mem::replace(&mut seen[rating.slot()], true) {
            return Err(Error::AnchorFormat(format!("label {rating} appears twice")));
        }
        if entry.values.len() != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                actual: entry.values.len(),
            });
        }
        vectors.row_mut(rating.slot()).assign(&ArrayView1::from(&entry.values));
    }
    AnchorBank::new(
        vectors,
        AnchorProvenance::Loaded {
            path: path.display().to_string(),
        },
    )
}

/// Anchor `r` is `e1` rotated by `(r - 1) * phi` toward `e2`, plus Gaussian
/// noise of total expected norm `sigma`, then unit-normalized.
pub fn synth_anchors(d_llm: usize, phi_deg: f64, sigma: f64, seed: u64) -> Result<AnchorBank> {
    if d_llm < 2 {
        return Err(Error::Config("synthetic anchors need d_llm >= 2".into()));
    }
    if !(phi_deg > 0.0 && phi_deg <= 45.0) {
        return Err(Error::Config(format!("angle step {phi_deg} outside (0, 45]")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("noise {sigma} must be non-negative")));
    }
    let mut rng = seed::rng(seed);
    let coord_sd = sigma / (d_llm as f64).sqrt();
    let mut vectors = Array2::zeros((5, d_llm));
    for (r, mut row) in vectors.rows_mut().into_iter().enumerate() {
        let angle = (r as f64 * phi_deg).to_radians();
        row[0] = angle.cos();
        row[1] = angle.sin();
        if sigma > 0.0 {
            for x in row.iter_mut() {
                *x += coord_sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let n = norm(row.view());
        row.mapv_inplace(|x| x / n);
    }
    AnchorBank::new(vectors, AnchorProvenance::Synthetic { phi_deg, sigma, seed })
}

fn check_permutation(perm: &[u8]) -> Result<[u8; 5]> {
    let mut seen = [false; 5];
    if perm.len() != 5 {
        return Err(Error::NotAPermutation(perm.to_vec()));
    }
    for &p in perm {
        if !(1..=5).contains(&p) || std::mem::replace(&mut seen[p as usize - 1], true) {
            return Err(Error::NotAPermutation(perm.to_vec()));
        }
    }
    let mut out = [0u8; 5];
    out.copy_from_slice(perm);
    Ok(out)
}

/// Inverse of a permutation of `1..=5`.
pub fn invert_permutation(perm: &[u8]) -> Result<[u8; 5]> {
    let perm = check_permutation(perm)?;
    let mut inv = [0u8; 5];
    for (r, &p) in perm.iter().enumerate() {
        inv[p as usize - 1] = r as u8 + 1;
    }
    Ok(inv)
}

/// Rating `r` receives the original anchor for `perm[r - 1]`.
pub fn permute_anchors(bank: &AnchorBank, perm: &[u8]) -> Result<AnchorBank> {
    let perm = check_permutation(perm)?;
    let mut vectors = Array2::zeros(bank.vectors.raw_dim());
    for (r, &p) in perm.iter().enumerate() {
        vectors.row_mut(r).assign(&bank.vectors.row(p as usize - 1));
    }
    AnchorBank::new(
        vectors,
        AnchorProvenance::Permuted {
            base: Box::new(bank.provenance.clone()),
            permutation: perm,
        },
    )
}

/// Five independent uniformly random unit vectors.
pub fn randomize_anchors(d_llm: usize, seed: u64) -> Result<AnchorBank> {
    if d_llm == 0 {
        return Err(Error::Config("d_llm must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let mut vectors = Array2::zeros((5, d_llm));
    for mut row in vectors.rows_mut() {
        loop {
            row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
            let n = norm(row.view());
            if n > 1e-6 {
                row.mapv_inplace(|x| x / n);
                break;
            }
        }
    }
    AnchorBank::new(vectors, AnchorProvenance::Random { seed })
}

pub fn validate_ordinality(bank: &AnchorBank) -> OrdinalityReport {
    let mut cos = [[0.0; 5]; 5];
    for (r, row) in cos.iter_mut().enumerate() {
        for (s, c) in row.iter_mut().enumerate() {
            *c = if r == s {
                1.0
            } else {
                cosine(bank.vectors.row(r), bank.vectors.row(s)).expect("anchors are nonzero")
            };
        }
    }
    let monotone = (0..5).all(|r| {
        let right = (r..4).all(|s| cos[r][s] >= cos[r][s + 1]);
        let left = (1..=r).all(|s| cos[r][s] >= cos[r][s - 1]);
        right && left
    });
    OrdinalityReport { cosine: cos, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn entries(n: usize, dim: usize, zero_at: Option<usize>) -> String {
        let anchors: Vec<String> = (0..n)
            .map(|r| {
                let vals: Vec<String> = (0..dim)
                    .map(|j| if Some(r) == zero_at { "0.0".into() } else { format!("{}", ((r * dim + j) as f64 * 0.37).sin()) })
                    .collect();
                format!(r#"{{"label": "{}", "values": [{}]}}"#, r + 1, vals.join(","))
            })
            .collect();
        format!(r#"{{"dim": {dim}, "anchors": [{}]}}"#, anchors.join(","))
    }

    #[test]
    fn load_valid_file() {
        let f = write(&entries(5, 64, None));
        let bank = load_anchors(f.path()).unwrap();
        assert_eq!(bank.dim(), 64);
        assert_eq!(bank.provenance.kind(), "loaded");
    }

    #[test]
    fn load_rejects_wrong_count_and_zero_vectors() {
        let f = write(&entries(4, 8, None));
        let err = load_anchors(f.path()).unwrap_err();
        assert!(err.to_string().contains("expected 5 anchors"), "{err}");
        let f = write(&entries(5, 8, Some(2)));
        let err = load_anchors(f.path()).unwrap_err();
        assert!(err.to_string().contains("anchor must be nonzero"), "{err}");
        let f = write(r#"{"dim": 2, "anchors": [{"label":"1","values":[1,0]},{"label":"2","values":[1,0]},{"label":"3","values":[1,0]},{"label":"4","values":[1,0]},{"label":"5","values":[1,0,0]}]}"#);
        assert!(matches!(load_anchors(f.path()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let bank = synth_anchors(16, 20.0, 0.05, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        bank.save(&path).unwrap();
        let loaded = load_anchors(&path).unwrap();
        assert_eq!(loaded.vectors(), bank.vectors());
    }

    #[test]
    fn synthetic_cosines_follow_planted_angles() {
        let bank = synth_anchors(64, 20.0, 0.0, 1).unwrap();
        let rep = validate_ordinality(&bank);
        assert!((rep.cosine[0][4] - 80f64.to_radians().cos()).abs() < 1e-12);
        assert!((rep.cosine[0][4] - 0.1736).abs() < 1e-4);
        for r in 0..4 {
            assert!((rep.cosine[r][r + 1] - 0.9397).abs() < 1e-4);
        }
        for r in 0..5 {
            assert_eq!(rep.cosine[r][r], 1.0);
        }
        assert!(rep.monotone);
        assert!(synth_anchors(64, 0.0, 0.0, 1).is_err());
        assert!(synth_anchors(64, 50.0, 0.0, 1).is_err());
        assert!(synth_anchors(1, 20.0, 0.0, 1).is_err());
    }

    #[test]
    fn permutations() {
        let bank = synth_anchors(8, 20.0, 0.05, 2).unwrap();
        assert_eq!(permute_anchors(&bank, &[1, 2, 3, 4, 5]).unwrap().vectors(), bank.vectors());
        let swapped = permute_anchors(&bank, &[5, 2, 3, 4, 1]).unwrap();
        assert_eq!(swapped.vectors().row(0), bank.vectors().row(4));
        assert_eq!(swapped.vectors().row(4), bank.vectors().row(0));
        assert!(!validate_ordinality(&swapped).monotone);
        let perm = [3, 1, 5, 2, 4];
        let inv = invert_permutation(&perm).unwrap();
        let back = permute_anchors(&permute_anchors(&bank, &perm).unwrap(), &inv).unwrap();
        assert_eq!(back.vectors(), bank.vectors());
        assert!(matches!(permute_anchors(&bank, &[1, 1, 3, 4, 5]), Err(Error::NotAPermutation(_))));
        assert!(permute_anchors(&bank, &[1, 2, 3, 4]).is_err());
    }

    #[test]
    fn random_anchors_are_unit_and_near_orthogonal() {
        assert_eq!(randomize_anchors(64, 9).unwrap(), randomize_anchors(64, 9).unwrap());
        let mut total = 0.0;
        let mut count = 0.0;
        for s in 0..100 {
            let bank = randomize_anchors(64, s).unwrap();
            for row in bank.vectors().rows() {
                assert!((norm(row) - 1.0).abs() < 1e-12);
            }
            let rep = validate_ordinality(&bank);
            for r in 0..5 {
                for t in 0..5 {
                    if r != t {
                        total += rep.cosine[r][t].abs();
                        count += 1.0;
                    }
                }
            }
        }
        assert!(total / count < 0.25, "mean |cos| {}", total / count);
    }
}
