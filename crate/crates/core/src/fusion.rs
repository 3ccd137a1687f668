//! Combining per-stream feature vectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// The three feature streams, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Pers,
    Group,
    Prox,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Pers, Stream::Group, Stream::Prox];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Pers => "pers",
            Stream::Group => "group",
            Stream::Prox => "prox",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pers" | "person" => Some(Stream::Pers),
            "group" => Some(Stream::Group),
            "prox" => Some(Stream::Prox),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub subject_id: i64,
    pub clip_id: usize,
    /// Indexed by [`Stream::index`].
    pub streams: [Option<Vec<f64>>; 3],
}

impl FeatureBundle {
    pub fn get(&self, s: Stream) -> Option<&[f64]> {
        self.streams[s.index()].as_deref()
    }

    /// Copy keeping only the listed streams.
    pub fn select(&self, keep: &[Stream]) -> FeatureBundle {
        let mut out = self.clone();
        for s in Stream::ALL {
            if !keep.contains(&s) {
                out.streams[s.index()] = None;
            }
        }
        out
    }

    pub fn present(&self) -> Vec<Stream> {
        Stream::ALL.into_iter().filter(|s| self.get(*s).is_some()).collect()
    }
}

/// Present streams concatenated as pers, group, prox.
pub fn fuse_concat(bundle: &FeatureBundle) -> Result<Vec<f64>> {
    let mut len = None;
    let mut out = Vec::new();
    for v in bundle.streams.iter().flatten() {
        if *len.get_or_insert(v.len()) != v.len() {
            return Err(Error::Shape("bundle streams of unequal length".into()));
        }
        out.extend_from_slice(v);
    }
    if len.is_none() {
        return Err(Error::Empty("bundle has no streams"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// One unit-norm component per row.
    pub components: DMatrix<f64>,
    pub explained: Vec<f64>,
    pub retained: f64,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    /// Map a projected vector back to input space.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(Error::Shape(format!("{} vs {} components", y.len(), self.output_dim())));
        }
        let back = self.components.transpose() * DMatrix::from_column_slice(y.len(), 1, y);
        Ok(back.iter().zip(&self.mean).map(|(v, m)| v + m).collect())
    }
}

/// Principal components of the rows of `vectors`, keeping the fewest that
/// explain at least `target` of the variance.
pub fn pca_fit(vectors: &[Vec<f64>], target: f64) -> Result<PcaTransform> {
    if vectors.len() < 2 {
        return Err(Error::Invalid("PCA needs at least two samples".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!("variance target {target} outside (0, 1]")));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("PCA rows of unequal length".into()));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let scale = values.first().copied().unwrap_or(0.0).max(1.0);
    if total <= 1e-12 * scale {
        return Err(Error::Invalid("PCA input has zero variance".into()));
    }

    let mut keep = 0;
    let mut acc = 0.0;
    // relative slack so a target of 1.0 is reachable through rounding
    while keep < d && acc < target * total * (1.0 - 1e-12) {
        acc += values[keep];
        keep += 1;
    }
    let components = DMatrix::from_fn(keep, d, |r, c| eig.eigenvectors[(c, order[r])]);
    Ok(PcaTransform {
        mean,
        components,
        explained: values[..keep].iter().map(|v| v / total).collect(),
        retained: (acc / total).min(1.0),
    })
}

/// Centered projection onto the retained components.
pub fn pca_transform(x: &[f64], t: &PcaTransform) -> Result<Vec<f64>> {
    if x.len() != t.input_dim() {
        return Err(Error::Shape(format!("{} vs PCA input {}", x.len(), t.input_dim())));
    }
    let centered: Vec<f64> = x.iter().zip(&t.mean).map(|(a, m)| a - m).collect();
    let y = &t.components * DMatrix::from_column_slice(centered.len(), 1, &centered);
    Ok(y.iter().copied().collect())
}

/// Sum-rule late fusion of per-stream class probabilities.
pub fn decision_fuse_sum(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = probs.first().ok_or(Error::Empty("no probability vectors"))?;
    if probs.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Shape("probability vectors of unequal length".into()));
    }
    let mut sum = vec![0.0; first.len()];
    for p in probs {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let total: f64 = sum.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Invalid("probabilities sum to zero".into()));
    }
    Ok(sum.into_iter().map(|s| s / total).collect())
}

/// How stream features become the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Concat,
    /// PCA on each stream, then concatenation.
    PcaPerStream,
    /// Concatenation, then PCA.
    PcaConcat,
    /// One classifier per stream, sum-rule on the outputs.
    DecisionSum,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "concat" => FusionMode::Concat,
            "pca_stream" => FusionMode::PcaPerStream,
            "pca_concat" => FusionMode::PcaConcat,
            "decision_sum" => FusionMode::DecisionSum,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::PcaPerStream => "pca_stream",
            FusionMode::PcaConcat => "pca_concat",
            FusionMode::DecisionSum => "decision_sum",
        }
    }
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("no rows to standardize"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}
