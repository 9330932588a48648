//! Frame-window embeddings and perceptual distance.
//!
//! Two embedders are available. The reference embedder summarizes each
//! frame by grid-cell intensity statistics and needs no learned weights.
//! The external embedder serves vectors computed offline by any encoder,
//! looked up by an [`EmbedKey`].
//!
//! External index format (JSON), next to one or more little-endian `f32`
//! blobs:
//!
//! ```json
//! {"traj-0/c0/f0-6": {"dim": 512, "file": "vectors.bin", "offset": 0}}
//! ```
//!
//! `offset` is in bytes; `file` is relative to the index.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::Frame;

pub const DEFAULT_GRID: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("no frames to embed")]
    NoFrames,
    #[error("frame dimensions differ: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("embedding dimensions differ: {0} vs {1}")]
    VectorDimMismatch(usize, usize),
    #[error("reference embedder grid must be at least 1")]
    ZeroGrid,
    #[error("no external embedding for key `{0}`")]
    MissingKey(String),
    #[error("external embedding store {path}: {message}")]
    Store { path: PathBuf, message: String },
}

/// L2-normalized (or all-zero) feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length; a zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    /// Wraps values as-is.
    pub fn raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which embedder to use. Serialized into configs and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    Reference { grid: usize },
    ExternalFile { source: PathBuf },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Reference { grid: DEFAULT_GRID }
    }
}

/// Identifies the frames being embedded, for external lookup.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EmbedKey {
    /// Frames `[start, end)` of chunk `chunk` (0-based).
    Frames { trajectory: String, chunk: usize, start: usize, end: usize },
    /// The cropped window around phase switch `boundary` (1-based, between
    /// chunks `boundary` and `boundary + 1`).
    SwitchWindow { trajectory: String, boundary: usize },
}

impl fmt::Display for EmbedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedKey::Frames { trajectory, chunk, start, end } => write!(f, "{trajectory}/c{chunk}/f{start}-{end}"),
            EmbedKey::SwitchWindow { trajectory, boundary } => write!(f, "{trajectory}/switch{boundary}"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct IndexEntry {
    dim: usize,
    file: PathBuf,
    offset: usize,
}

/// Precomputed vectors, loaded once and then only read.
#[derive(Debug, Clone, Default)]
pub struct ExternalStore {
    vectors: HashMap<String, EmbeddingVector>,
}

impl ExternalStore {
    pub fn load(index_path: &Path) -> Result<Self, FeatureError> {
        let err = |message: String| FeatureError::Store { path: index_path.to_owned(), message };
        let text = fs::read_to_string(index_path).map_err(|e| err(e.to_string()))?;
        let index: HashMap<String, IndexEntry> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = index_path.parent().unwrap_or(Path::new("."));
        let mut blobs: HashMap<PathBuf, Vec<u8>> = HashMap::new();
        let mut vectors = HashMap::with_capacity(index.len());
        for (key, entry) in index {
            let path = base.join(&entry.file);
            if !blobs.contains_key(&path) {
                let bytes = fs::read(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
                blobs.insert(path.clone(), bytes);
            }
            let blob = &blobs[&path];
            let end = entry.offset + 4 * entry.dim;
            if entry.dim == 0 || end > blob.len() {
                return Err(err(format!("entry `{key}` out of bounds of {}", path.display())));
            }
            let values: Vec<f64> = blob[entry.offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("entry `{key}` has non-finite values")));
            }
            vectors.insert(key, EmbeddingVector::normalized(values));
        }
        Ok(Self { vectors })
    }

    pub fn insert(&mut self, key: impl Into<String>, values: Vec<f64>) {
        self.vectors.insert(key.into(), EmbeddingVector::normalized(values));
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(key)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A ready-to-use embedder built from an [`EmbedderSpec`].
#[derive(Debug, Clone)]
pub enum Featurizer {
    Reference { grid: usize },
    External(ExternalStore),
}

impl Featurizer {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self, FeatureError> {
        match spec {
            EmbedderSpec::Reference { grid: 0 } => Err(FeatureError::ZeroGrid),
            EmbedderSpec::Reference { grid } => Ok(Featurizer::Reference { grid: *grid }),
            EmbedderSpec::ExternalFile { source } => Ok(Featurizer::External(ExternalStore::load(source)?)),
        }
    }

    pub fn embed(&self, frames: &[&Frame], key: &EmbedKey) -> Result<EmbeddingVector, FeatureError> {
        match self {
            Featurizer::Reference { grid } => embed_frames(frames, *grid),
            Featurizer::External(store) => {
                if frames.is_empty() {
                    return Err(FeatureError::NoFrames);
                }
                let key = key.to_string();
                store.get(&key).cloned().ok_or(FeatureError::MissingKey(key))
            }
        }
    }
}

/// Reference embedding: per grid cell the mean and standard deviation of
/// grayscale intensity, averaged over frames, as `[means..., stds...]`,
/// then L2-normalized.
pub fn embed_frames(frames: &[&Frame], grid: usize) -> Result<EmbeddingVector, FeatureError> {
    if grid == 0 {
        return Err(FeatureError::ZeroGrid);
    }
    let first = frames.first().ok_or(FeatureError::NoFrames)?;
    let (w, h) = first.dims();
    let cells = grid * grid;
    let mut acc = vec![0.0f64; 2 * cells];
    for frame in frames {
        if frame.dims() != (w, h) {
            return Err(FeatureError::DimMismatch((w, h), frame.dims()));
        }
        for cy in 0..grid {
            let (y0, y1) = (cy * h / grid, (cy + 1) * h / grid);
            for cx in 0..grid {
                let (x0, x1) = (cx * w / grid, (cx + 1) * w / grid);
                let n = (y1 - y0) * (x1 - x0);
                if n == 0 {
                    continue;
                }
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += frame.gray(x, y);
                    }
                }
                let mean = s / n as f64;
                let mut ss = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = frame.gray(x, y) - mean;
                        ss += d * d;
                    }
                }
                let var = ss / n as f64;
                acc[cy * grid + cx] += mean;
                acc[cells + cy * grid + cx] += var.sqrt();
            }
        }
    }
    let k = frames.len() as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    Ok(EmbeddingVector::normalized(acc))
}

/// `⟨a, b⟩ / (‖a‖‖b‖)`, 0 when either norm is 0, clamped to `[-1, 1]`.
/// Identical nonzero vectors give exactly 1.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FeatureError> {
    if a.dim() != b.dim() {
        return Err(FeatureError::VectorDimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − cos` between two embeddings, in `[0, 2]`; two zero embeddings are
/// at distance 0.
pub fn embedding_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FeatureError> {
    if a.dim() == b.dim() && a.norm() == 0.0 && b.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - cosine_similarity(a, b)?).clamp(0.0, 2.0))
}

/// Perceptual distance between two single frames under the reference
/// embedder with `grid` cells per side.
pub fn perceptual_distance(a: &Frame, b: &Frame, grid: usize) -> Result<f64, FeatureError> {
    if a.dims() != b.dims() {
        return Err(FeatureError::DimMismatch(a.dims(), b.dims()));
    }
    embedding_distance(&embed_frames(&[a], grid)?, &embed_frames(&[b], grid)?)
}
