//! Kernel functions, datasets and Gram-matrix assembly.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KkmError, Result};
use crate::seed::rng_from;

/// Default cap on the number of ordered pairs visited by [`pairwise_bandwidth`].
pub const DEFAULT_MAX_PAIRS: u64 = 1_000_000;

/// Row-major collection of `n` points in `d` dimensions, with optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, values: Vec<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(KkmError::invalid(format!(
                "dataset needs n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if values.len() != n * d {
            return Err(KkmError::invalid(format!(
                "expected {} values for a {n}x{d} dataset, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(KkmError::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(KkmError::invalid(format!(
                    "{} labels for {n} points",
                    l.len()
                )));
            }
        }
        Ok(Self {
            n,
            d,
            values,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(KkmError::invalid(format!(
                "row {bad} has {} columns, expected {d}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), d, rows.concat(), None)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(KkmError::invalid(format!(
                "{} labels for {} points",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// Copies the selected rows (and their labels) into a new dataset.
    /// Repeated indices produce repeated rows.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.n) {
            return Err(KkmError::invalid(format!(
                "index {bad} out of range for {} points",
                self.n
            )));
        }
        let mut values = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            values.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| ids.iter().map(|&i| l[i]).collect());
        Self::new(ids.len(), self.d, values, labels)
    }

    pub fn max_sq_norm(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Divides every coordinate by 255.
    pub fn scaled_255(mut self) -> Self {
        for v in &mut self.values {
            *v /= 255.0;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian { sigma: f64 },
    Linear,
}

/// A kernel together with an upper bound `kappa_sq` on `k(x, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub kappa_sq: f64,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(KkmError::invalid(format!(
                "gaussian bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Gaussian { sigma },
            kappa_sq: 1.0,
        })
    }

    pub fn linear(kappa_sq: f64) -> Result<Self> {
        if !(kappa_sq.is_finite() && kappa_sq > 0.0) {
            return Err(KkmError::invalid(format!(
                "kappa_sq must be positive and finite, got {kappa_sq}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Linear,
            kappa_sq,
        })
    }

    /// Linear kernel whose bound is the largest squared norm in `data`
    /// (or 1 for an all-zero dataset).
    pub fn linear_for(data: &Dataset) -> Self {
        let m = data.max_sq_norm();
        Self {
            family: KernelFamily::Linear,
            kappa_sq: if m > 0.0 { m } else { 1.0 },
        }
    }

    /// Checks that `kappa_sq` really bounds `k(x, x)` over `data`.
    pub fn check_bound(&self, data: &Dataset) -> Result<()> {
        if let KernelFamily::Linear = self.family {
            let m = data.max_sq_norm();
            if m > self.kappa_sq * (1.0 + 1e-12) {
                return Err(KkmError::invalid(format!(
                    "kappa_sq = {} does not bound max squared norm {m}",
                    self.kappa_sq
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
            KernelFamily::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

fn check_point(p: &[f64], what: &str) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KkmError::invalid(format!("{what} has non-finite entries")))
    }
}

/// Evaluates `k(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KkmError::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    check_point(x, "x")?;
    check_point(y, "y")?;
    Ok(spec.eval_unchecked(x, y))
}

/// Kernel matrix between two point sets, tagged with the source indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

impl GramMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    /// Wraps a precomputed square matrix, with ids `0..n` on both sides.
    pub fn from_square(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(KkmError::invalid(format!(
                "expected a square matrix, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KkmError::invalid("matrix has non-finite entries"));
        }
        let ids: Vec<usize> = (0..values.nrows()).collect();
        Ok(Self {
            values,
            row_ids: ids.clone(),
            col_ids: ids,
        })
    }
}

/// `values[i][j] = k(rows[i], cols[j])`. Evaluation goes through the same
/// routine as [`kernel_eval`], so entries match it bit for bit.
pub fn gram(spec: &KernelSpec, rows: &Dataset, cols: &Dataset) -> Result<GramMatrix> {
    if rows.d() != cols.d() {
        return Err(KkmError::invalid(format!(
            "dimension mismatch: {} vs {}",
            rows.d(),
            cols.d()
        )));
    }
    let (p, q) = (rows.n(), cols.n());
    let row_major: Vec<f64> = (0..p)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = rows.row(i);
            (0..q).map(move |j| spec.eval_unchecked(x, cols.row(j)))
        })
        .collect();
    Ok(GramMatrix {
        values: DMatrix::from_row_slice(p, q, &row_major),
        row_ids: (0..p).collect(),
        col_ids: (0..q).collect(),
    })
}

/// Square Gram matrix of `data` against itself. Only the upper triangle is
/// evaluated and mirrored, so the result is exactly symmetric.
pub fn gram_square(spec: &KernelSpec, data: &Dataset) -> GramMatrix {
    let n = data.n();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            (i..n)
                .map(|j| spec.eval_unchecked(x, data.row(j)))
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            values[(i, i + off)] = v;
            values[(i + off, i)] = v;
        }
    }
    let ids: Vec<usize> = (0..n).collect();
    GramMatrix {
        values,
        row_ids: ids.clone(),
        col_ids: ids,
    }
}

/// Gram matrix between selected rows of one dataset.
pub fn gram_indexed(
    spec: &KernelSpec,
    data: &Dataset,
    row_ids: &[usize],
    col_ids: &[usize],
) -> Result<GramMatrix> {
    let rows = data.select(row_ids)?;
    let cols = data.select(col_ids)?;
    let mut g = gram(spec, &rows, &cols)?;
    g.row_ids = row_ids.to_vec();
    g.col_ids = col_ids.to_vec();
    Ok(g)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Bandwidth `sigma = (1/n^2) * sqrt(sum_{i,j} ||x_i - x_j||^2)` over all
/// ordered pairs.
///
/// When `n^2 > max_pairs` the double sum is replaced by `max_pairs`
/// uniformly drawn ordered pairs rescaled by `n^2 / s`, which keeps the
/// radicand unbiased. The exact path never touches the seed.
pub fn pairwise_bandwidth(data: &Dataset, max_pairs: u64, seed: u64) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(KkmError::invalid(format!(
            "bandwidth needs at least 2 points, got {n}"
        )));
    }
    if max_pairs == 0 {
        return Err(KkmError::invalid("max_pairs must be positive"));
    }
    let n_sq = (n as f64) * (n as f64);
    let total = if (n as u128) * (n as u128) <= max_pairs as u128 {
        // Each unordered pair appears twice among the ordered pairs.
        let half: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = data.row(i);
                (i + 1..n).map(|j| sq_dist(x, data.row(j))).sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        2.0 * half
    } else {
        let mut rng = rng_from(seed);
        let s = max_pairs;
        let mut acc = 0.0;
        for _ in 0..s {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            acc += sq_dist(data.row(i), data.row(j));
        }
        acc * n_sq / s as f64
    };
    if total <= 0.0 {
        return Err(KkmError::DegenerateBandwidth);
    }
    Ok(total.sqrt() / n_sq)
}
