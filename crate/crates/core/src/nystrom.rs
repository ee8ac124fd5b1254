//! Nyström feature map built from a landmark dictionary.
//!
//! With `K_mm = U diag(lambda) U^T` the landmark Gram matrix, a point `x` is
//! mapped to `diag(lambda)^{-1/2} U^T [k(l_1, x), ..., k(l_m, x)]`. Inner
//! products of embedded points equal `K_xm K_mm^+ K_my`, i.e. the kernel
//! restricted to the span of the landmarks, and `k(x, x) - ||embed(x)||^2`
//! is the squared distance of `phi(x)` to that span.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KkmError, Result};
use crate::kernel::{gram, gram_square, Dataset, GramMatrix, KernelSpec};
use crate::linalg::{asymmetry, require_square, sorted_eigen, symmetrize, symmetry_tol};

/// Default relative eigenvalue cut-off for `K_mm`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Uniform,
    Rls,
    Explicit,
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampler::Uniform => "uniform",
            Sampler::Rls => "rls",
            Sampler::Explicit => "explicit",
        })
    }
}

/// Ordered multiset of landmark indices. Duplicates are allowed since
/// samplers draw with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub indices: Vec<usize>,
    pub sampler: Sampler,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
}

impl Dictionary {
    /// A hand-picked dictionary over a dataset of `n` points.
    pub fn explicit(indices: Vec<usize>, n: usize) -> Result<Self> {
        let dict = Self {
            indices,
            sampler: Sampler::Explicit,
            gamma: None,
            epsilon: None,
            delta: None,
            seed: None,
        };
        dict.validate(n)?;
        Ok(dict)
    }

    /// Every point exactly once.
    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            sampler: Sampler::Explicit,
            gamma: None,
            epsilon: None,
            delta: None,
            seed: None,
        }
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(KkmError::invalid(
                "dictionary must hold at least one landmark",
            ));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(KkmError::invalid(format!(
                "landmark index {bad} out of range for {n} points"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| KkmError::invalid(format!("bad dictionary JSON: {e}")))
    }
}

/// Truncated eigendecomposition of a PSD matrix.
#[derive(Debug, Clone)]
pub struct PsdEigen {
    /// `m x m'` with orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Descending, all `> rank_tol * lambda_max`.
    pub values: DVector<f64>,
}

/// Eigendecomposition of a symmetric PSD matrix, discarding eigenpairs with
/// `lambda <= rank_tol * lambda_max`.
pub fn eig_psd(k: &DMatrix<f64>, rank_tol: f64) -> Result<PsdEigen> {
    let m = require_square(k, "eig_psd input")?;
    if !(rank_tol >= 0.0 && rank_tol.is_finite()) {
        return Err(KkmError::invalid(format!(
            "rank_tol must be >= 0, got {rank_tol}"
        )));
    }
    if m == 0 {
        return Err(KkmError::invalid("empty matrix"));
    }
    let asym = asymmetry(k);
    if asym > symmetry_tol(k) {
        return Err(KkmError::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let (values, vectors) = sorted_eigen(&symmetrize(k));
    let lambda_max = values[0];
    if !(lambda_max > 0.0) {
        return Err(KkmError::DegenerateMatrix(format!(
            "largest eigenvalue is {lambda_max:e}"
        )));
    }
    let lambda_min = values[m - 1];
    if lambda_min < -1e-8 * lambda_max {
        return Err(KkmError::invalid(format!(
            "matrix is not PSD (eigenvalue {lambda_min:e} vs max {lambda_max:e})"
        )));
    }
    let cut = rank_tol * lambda_max;
    let kept = values.iter().take_while(|&&v| v > cut && v > 0.0).count();
    Ok(PsdEigen {
        vectors: vectors.columns(0, kept).into_owned(),
        values: values.rows(0, kept).into_owned(),
    })
}

/// Frozen Nyström map. Landmarks are stored by value so the embedder does
/// not borrow the dataset it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub landmarks: Dataset,
    /// `m' x m`, equal to `diag(lambda)^{-1/2} U^T`.
    pub transform: DMatrix<f64>,
    pub kept_eigenvalues: Vec<f64>,
    pub rank_tol: f64,
    pub kernel: KernelSpec,
}

/// Embedded coordinates together with the per-point projection residuals.
#[derive(Debug, Clone)]
pub struct EmbeddedSet {
    /// `n x m'`.
    pub coords: DMatrix<f64>,
    pub self_kernel: Vec<f64>,
    /// `k(x_i, x_i) - ||coords_i||^2`. Not clamped, so tiny negative values
    /// from rounding are visible.
    pub residuals: Vec<f64>,
}

impl EmbeddedSet {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn mean_residual(&self) -> f64 {
        self.residuals.iter().sum::<f64>() / self.residuals.len() as f64
    }
}

pub fn build_embedder(
    data: &Dataset,
    dict: &Dictionary,
    kernel: &KernelSpec,
    rank_tol: f64,
) -> Result<Embedder> {
    dict.validate(data.n())?;
    let landmarks = data.select(&dict.indices)?;
    Embedder::from_landmarks(landmarks, kernel, rank_tol)
}

impl Embedder {
    pub fn from_landmarks(landmarks: Dataset, kernel: &KernelSpec, rank_tol: f64) -> Result<Self> {
        let kmm = gram_square(kernel, &landmarks);
        let eig = eig_psd(&kmm.values, rank_tol)?;
        let scale = eig.values.map(|l| 1.0 / l.sqrt());
        let transform = DMatrix::from_diagonal(&scale) * eig.vectors.transpose();
        Ok(Self {
            landmarks,
            transform,
            kept_eigenvalues: eig.values.iter().copied().collect(),
            rank_tol,
            kernel: *kernel,
        })
    }

    /// Number of landmarks `m`.
    pub fn m(&self) -> usize {
        self.landmarks.n()
    }

    /// Embedding dimension `m'` after truncation.
    pub fn dim(&self) -> usize {
        self.transform.nrows()
    }

    pub fn landmark_gram(&self) -> GramMatrix {
        gram_square(&self.kernel, &self.landmarks)
    }

    pub fn embed(&self, pts: &Dataset) -> Result<EmbeddedSet> {
        if pts.d() != self.landmarks.d() {
            return Err(KkmError::invalid(format!(
                "points have dimension {}, landmarks {}",
                pts.d(),
                self.landmarks.d()
            )));
        }
        let cross = gram(&self.kernel, pts, &self.landmarks)?;
        let coords = &cross.values * self.transform.transpose();
        let self_kernel: Vec<f64> = pts
            .rows()
            .map(|x| self.kernel.eval_unchecked(x, x))
            .collect();
        let residuals = self_kernel
            .iter()
            .enumerate()
            .map(|(i, &kii)| kii - coords.row(i).norm_squared())
            .collect();
        Ok(EmbeddedSet {
            coords,
            self_kernel,
            residuals,
        })
    }

    /// Maps embedded centroids (`k x m'`) to landmark coefficients (`k x m`):
    /// centroid `j` in feature space is `sum_s A[j][s] phi(landmark_s)`.
    pub fn lift_centroids(&self, centroids: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if centroids.ncols() != self.dim() {
            return Err(KkmError::invalid(format!(
                "centroids have {} columns, embedding dimension is {}",
                centroids.ncols(),
                self.dim()
            )));
        }
        Ok(centroids * &self.transform)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(&EmbedderArtifact::from(self)).expect("embedder serializes");
        fs::write(path, text).map_err(|e| KkmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KkmError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            KkmError::InvalidArgument(msg) => KkmError::format(path, "artifact", msg),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&EmbedderArtifact::from(self)).expect("embedder serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: EmbedderArtifact = serde_json::from_str(text)
            .map_err(|e| KkmError::invalid(format!("bad embedder artifact: {e}")))?;
        art.into_embedder()
    }
}

pub const EMBEDDER_MAGIC: &str = "KKM-NYSTROM-EMBEDDER";
pub const EMBEDDER_VERSION: u32 = 1;

/// On-disk form of an [`Embedder`].
#[derive(Debug, Serialize, Deserialize)]
struct EmbedderArtifact {
    magic: String,
    version: u32,
    kernel: KernelSpec,
    rank_tol: f64,
    landmark_dim: usize,
    landmarks: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    transform: Vec<Vec<f64>>,
}

impl From<&Embedder> for EmbedderArtifact {
    fn from(e: &Embedder) -> Self {
        Self {
            magic: EMBEDDER_MAGIC.to_string(),
            version: EMBEDDER_VERSION,
            kernel: e.kernel,
            rank_tol: e.rank_tol,
            landmark_dim: e.landmarks.d(),
            landmarks: e.landmarks.rows().map(<[f64]>::to_vec).collect(),
            eigenvalues: e.kept_eigenvalues.clone(),
            transform: e
                .transform
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl EmbedderArtifact {
    fn into_embedder(self) -> Result<Embedder> {
        if self.magic != EMBEDDER_MAGIC {
            return Err(KkmError::invalid(format!(
                "unexpected magic {:?}",
                self.magic
            )));
        }
        if self.version != EMBEDDER_VERSION {
            return Err(KkmError::invalid(format!(
                "unsupported artifact version {}",
                self.version
            )));
        }
        let landmarks = Dataset::from_rows(&self.landmarks)?;
        if landmarks.d() != self.landmark_dim {
            return Err(KkmError::invalid("landmark dimension mismatch"));
        }
        let rows = self.transform.len();
        if rows != self.eigenvalues.len() {
            return Err(KkmError::invalid(
                "transform rows do not match eigenvalue count",
            ));
        }
        let m = landmarks.n();
        if self.transform.iter().any(|r| r.len() != m) {
            return Err(KkmError::invalid(
                "transform columns do not match landmark count",
            ));
        }
        let transform = DMatrix::from_row_slice(rows, m, &self.transform.concat());
        Ok(Embedder {
            landmarks,
            transform,
            kept_eigenvalues: self.eigenvalues,
            rank_tol: self.rank_tol,
            kernel: self.kernel,
        })
    }
}
