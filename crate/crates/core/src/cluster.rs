//! k-means++ seeding and Lloyd iterations on embedded coordinates, plus
//! exact kernel-space costs and an exhaustive ERM oracle for small inputs.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KkmError, Result};
use crate::kernel::{gram, Dataset, GramMatrix};
use crate::nystrom::{EmbeddedSet, Embedder};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_MOVE_TOL: f64 = 1e-9;

/// Largest instance [`brute_force_kmeans`] accepts.
pub const BRUTE_FORCE_MAX_N: usize = 14;
pub const BRUTE_FORCE_MAX_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub move_tol: f64,
}

impl Default for LloydOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            move_tol: DEFAULT_MOVE_TOL,
        }
    }
}

/// Row-major copy of a matrix, one point per `dim`-chunk.
struct Rows {
    dim: usize,
    values: Vec<f64>,
}

impl Rows {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            values.extend(r.iter());
        }
        Self {
            dim: m.ncols(),
            values,
        }
    }

    fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn to_matrix(&self, nrows: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(nrows, self.dim, &self.values)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
/// A zero-dimensional embedding puts every point at distance 0 from
/// centroid 0.
fn nearest(x: &[f64], centroids: &Rows, k: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..k {
        let d = sq_dist(
            x,
            &centroids.values[j * centroids.dim..(j + 1) * centroids.dim],
        );
        if d < best.1 {
            best = (j, d);
        }
    }
    if best.1.is_infinite() {
        best.1 = 0.0;
    }
    best
}

fn assign(points: &Rows, n: usize, centroids: &Rows, k: usize) -> Vec<(usize, f64)> {
    (0..n)
        .into_par_iter()
        .map(|i| nearest(points.row(i), centroids, k))
        .collect()
}

/// D^2-weighted seeding: the first centroid is a uniform point, each next
/// one is drawn with probability proportional to the squared distance to
/// the closest centroid chosen so far.
pub fn kmeanspp_seed<R: Rng + ?Sized>(
    coords: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = coords.nrows();
    if k < 1 {
        return Err(KkmError::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(KkmError::invalid(format!("k = {k} exceeds n = {n}")));
    }
    let pts = Rows::from_matrix(coords);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(pts.row(i), pts.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&d2)
                .expect("non-negative weights with positive sum")
                .sample(rng)
        } else {
            // Every point already coincides with a centroid.
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pts.row(i), pts.row(next)));
        }
    }
    Ok(DMatrix::from_fn(k, coords.ncols(), |j, c| {
        coords[(chosen[j], c)]
    }))
}

/// Hard clustering of embedded points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// `k x m'`, in embedded coordinates.
    pub centroids: DMatrix<f64>,
    /// `k x m` landmark coefficients, once lifted.
    pub lifted: Option<DMatrix<f64>>,
    pub assignments: Vec<usize>,
    pub k: usize,
    pub iterations_run: usize,
    pub converged: bool,
    pub embedded_cost: f64,
    pub residual_cost: f64,
    pub total_cost: f64,
    /// Embedded cost after each Lloyd iteration.
    pub cost_history: Vec<f64>,
    pub options: LloydOptions,
    pub seed: Option<u64>,
}

impl ClusterModel {
    /// Adds the mean projection residual of the training points, turning
    /// the embedded cost into the feature-space cost of centroids that lie
    /// in the landmark span.
    pub fn with_residuals(mut self, emb: &EmbeddedSet) -> Self {
        self.residual_cost = emb.mean_residual().max(0.0);
        self.total_cost = self.embedded_cost + self.residual_cost;
        self
    }

    pub fn lift(&mut self, embedder: &Embedder) -> Result<()> {
        self.lifted = Some(embedder.lift_centroids(&self.centroids)?);
        Ok(())
    }

    pub fn partition(&self) -> Partition {
        Partition {
            labels: self.assignments.clone(),
            k: self.k,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelArtifact::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: ModelArtifact = serde_json::from_str(text)
            .map_err(|e| KkmError::invalid(format!("bad model JSON: {e}")))?;
        art.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| KkmError::io(path, e))
    }

    /// Writes `index,cluster` rows.
    pub fn write_assignments_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,cluster\n");
        for (i, c) in self.assignments.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        let mut f = fs::File::create(path).map_err(|e| KkmError::io(path, e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| KkmError::io(path, e))
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], ncols_hint: usize) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_hint, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(KkmError::invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &rows.concat()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelArtifact {
    k: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lifted: Option<Vec<Vec<f64>>>,
    assignments: Vec<usize>,
    iterations_run: usize,
    converged: bool,
    embedded_cost: f64,
    residual_cost: f64,
    total_cost: f64,
    cost_history: Vec<f64>,
    options: LloydOptions,
    seed: Option<u64>,
}

impl From<&ClusterModel> for ModelArtifact {
    fn from(m: &ClusterModel) -> Self {
        Self {
            k: m.k,
            dim: m.centroids.ncols(),
            centroids: matrix_rows(&m.centroids),
            lifted: m.lifted.as_ref().map(matrix_rows),
            assignments: m.assignments.clone(),
            iterations_run: m.iterations_run,
            converged: m.converged,
            embedded_cost: m.embedded_cost,
            residual_cost: m.residual_cost,
            total_cost: m.total_cost,
            cost_history: m.cost_history.clone(),
            options: m.options,
            seed: m.seed,
        }
    }
}

impl ModelArtifact {
    fn into_model(self) -> Result<ClusterModel> {
        let centroids = rows_matrix(&self.centroids, self.dim)?;
        if centroids.nrows() != self.k || centroids.ncols() != self.dim {
            return Err(KkmError::invalid("centroid shape does not match k x dim"));
        }
        if self.assignments.iter().any(|&a| a >= self.k) {
            return Err(KkmError::invalid("assignment out of range"));
        }
        let lifted = self
            .lifted
            .as_deref()
            .map(|r| rows_matrix(r, 0))
            .transpose()?;
        Ok(ClusterModel {
            centroids,
            lifted,
            assignments: self.assignments,
            k: self.k,
            iterations_run: self.iterations_run,
            converged: self.converged,
            embedded_cost: self.embedded_cost,
            residual_cost: self.residual_cost,
            total_cost: self.total_cost,
            cost_history: self.cost_history,
            options: self.options,
            seed: self.seed,
        })
    }
}

/// Lloyd's algorithm from the given initial centroids.
///
/// Each iteration assigns every point to its nearest centroid (ties to the
/// lowest index), refills empty clusters with the point farthest from its
/// centroid, and moves each centroid to its cluster mean. Cluster sums are
/// accumulated sequentially in point order, so the result does not depend
/// on the number of worker threads.
pub fn lloyd(
    coords: &DMatrix<f64>,
    init: &DMatrix<f64>,
    opts: &LloydOptions,
) -> Result<ClusterModel> {
    let n = coords.nrows();
    let dim = coords.ncols();
    let k = init.nrows();
    if opts.max_iter < 1 {
        return Err(KkmError::invalid("max_iter must be at least 1"));
    }
    if !(opts.move_tol >= 0.0) {
        return Err(KkmError::invalid("move_tol must be non-negative"));
    }
    if init.ncols() != dim {
        return Err(KkmError::invalid(format!(
            "initial centroids have {} columns, points have {dim}",
            init.ncols()
        )));
    }
    if k < 1 || k > n {
        return Err(KkmError::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let pts = Rows::from_matrix(coords);
    let mut cent = Rows::from_matrix(init);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut nearest_of = assign(&pts, n, &cent, k);
        repair_empty(&mut nearest_of, &pts, &cent, k);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in nearest_of.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(pts.row(i)) {
                *s += x;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let mut shift = 0.0;
            for c in 0..dim {
                let new = sums[j * dim + c] * inv;
                let old = &mut cent.values[j * dim + c];
                shift += (new - *old) * (new - *old);
                *old = new;
            }
            moved = moved.max(shift.sqrt());
        }
        history.push(cost_of(&assign(&pts, n, &cent, k)));
        if moved <= opts.move_tol {
            converged = true;
            break;
        }
    }

    let final_assign = assign(&pts, n, &cent, k);
    let embedded_cost = cost_of(&final_assign);
    Ok(ClusterModel {
        centroids: cent.to_matrix(k),
        lifted: None,
        assignments: final_assign.iter().map(|&(c, _)| c).collect(),
        k,
        iterations_run: iterations,
        converged,
        embedded_cost,
        residual_cost: 0.0,
        total_cost: embedded_cost,
        cost_history: history,
        options: *opts,
        seed: None,
    })
}

fn cost_of(assignment: &[(usize, f64)]) -> f64 {
    assignment.iter().map(|&(_, d)| d).sum::<f64>() / assignment.len() as f64
}

/// Moves the farthest point (from its own centroid) into each empty
/// cluster. A point that was already moved is not picked again.
fn repair_empty(assignment: &mut [(usize, f64)], pts: &Rows, cent: &Rows, k: usize) {
    let mut counts = vec![0usize; k];
    for &(c, _) in assignment.iter() {
        counts[c] += 1;
    }
    let mut taken = vec![false; assignment.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let candidate = assignment
            .iter()
            .enumerate()
            .filter(|&(i, &(c, _))| !taken[i] && counts[c] > 1)
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let Some(i) = candidate else { break };
        let old = assignment[i].0;
        counts[old] -= 1;
        counts[j] += 1;
        taken[i] = true;
        let d = sq_dist(pts.row(i), &cent.values[j * cent.dim..(j + 1) * cent.dim]);
        assignment[i] = (j, d);
    }
}

/// `(1/n) sum_i min_j ||coords_i - centroid_j||^2`.
pub fn empirical_cost(coords: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Result<f64> {
    if coords.ncols() != centroids.ncols() {
        return Err(KkmError::invalid(
            "coordinate and centroid dimensions differ",
        ));
    }
    if coords.nrows() == 0 || centroids.nrows() == 0 {
        return Err(KkmError::invalid("empty points or centroids"));
    }
    let pts = Rows::from_matrix(coords);
    let cent = Rows::from_matrix(centroids);
    Ok(cost_of(&assign(&pts, pts.len(), &cent, centroids.nrows())))
}

/// Cluster labels for `n` points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(KkmError::invalid("partition of zero points"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(KkmError::invalid(format!(
                "label {bad} out of range for k = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Exact feature-space cost of a partition with mean centroids, from the
/// kernel matrix alone:
/// `(1/n) sum_j sum_{i in C_j} [k_ii - (2/|C_j|) sum_s k_is + (1/|C_j|^2) sum_{s,s'} k_ss']`.
pub fn kernel_cost_exact(kn: &GramMatrix, part: &Partition) -> Result<f64> {
    let n = kn.nrows();
    if !kn.is_square() {
        return Err(KkmError::invalid("kernel matrix must be square"));
    }
    if part.n() != n {
        return Err(KkmError::invalid(format!(
            "partition covers {} points, kernel matrix has {n}",
            part.n()
        )));
    }
    if let Some(&bad) = part.labels.iter().find(|&&l| l >= part.k) {
        return Err(KkmError::invalid(format!("label {bad} out of range")));
    }
    let k = &kn.values;
    let mut total = 0.0;
    for members in part.members() {
        if members.is_empty() {
            continue;
        }
        let size = members.len() as f64;
        let block: f64 = members
            .iter()
            .map(|&s| members.iter().map(|&t| k[(s, t)]).sum::<f64>())
            .sum();
        for &i in &members {
            let cross: f64 = members.iter().map(|&s| k[(i, s)]).sum();
            total += k[(i, i)] - 2.0 * cross / size + block / (size * size);
        }
    }
    Ok(total / n as f64)
}

/// Feature-space cost of a partition when centroids are restricted to the
/// landmark span: embedded cost of the embedded cluster means plus the mean
/// projection residual.
pub fn embedded_partition_cost(emb: &EmbeddedSet, part: &Partition) -> Result<f64> {
    let n = emb.n();
    if part.n() != n {
        return Err(KkmError::invalid(
            "partition size does not match embedded set",
        ));
    }
    let dim = emb.coords.ncols();
    let mut total = 0.0;
    for members in part.members() {
        if members.is_empty() {
            continue;
        }
        let size = members.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|c| members.iter().map(|&i| emb.coords[(i, c)]).sum::<f64>() / size)
            .collect();
        for &i in &members {
            total += (0..dim)
                .map(|c| (emb.coords[(i, c)] - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    Ok(total / n as f64 + emb.mean_residual())
}

/// Feature-space cost of lifted centroids `c_j = sum_s A[j][s] phi(l_s)`
/// under the given assignment, evaluated with kernel evaluations only:
/// `||phi(x) - c_j||^2 = k(x,x) - 2 A_j K_mx + A_j K_mm A_j^T`.
pub fn lifted_cost_exact(
    embedder: &Embedder,
    lifted: &DMatrix<f64>,
    data: &Dataset,
    assignments: &[usize],
) -> Result<f64> {
    if lifted.ncols() != embedder.m() {
        return Err(KkmError::invalid(
            "lifted coefficients do not match landmark count",
        ));
    }
    if assignments.len() != data.n() {
        return Err(KkmError::invalid("assignment length does not match data"));
    }
    let kxm = gram(&embedder.kernel, data, &embedder.landmarks)?.values;
    let kmm = embedder.landmark_gram().values;
    let quad: Vec<f64> = lifted
        .row_iter()
        .map(|a| (a * &kmm * a.transpose())[(0, 0)])
        .collect();
    let mut total = 0.0;
    for (i, &j) in assignments.iter().enumerate() {
        if j >= lifted.nrows() {
            return Err(KkmError::invalid(format!("assignment {j} out of range")));
        }
        let x = data.row(i);
        let kxx = embedder.kernel.eval_unchecked(x, x);
        let cross = lifted.row(j).dot(&kxm.row(i));
        total += kxx - 2.0 * cross + quad[j];
    }
    Ok(total / data.n() as f64)
}

/// Exhaustive minimisation of `cost` over every partition of `n` points
/// into at most `k` labelled-up-to-permutation blocks.
///
/// Partitions are enumerated as restricted growth strings, which visits
/// each set partition exactly once. Refused beyond `n <= 14`, `k <= 3`.
pub fn brute_force_kmeans<F>(cost: F, n: usize, k: usize) -> Result<(Partition, f64)>
where
    F: Fn(&Partition) -> f64,
{
    if n == 0 || k == 0 {
        return Err(KkmError::invalid("brute force needs n >= 1 and k >= 1"));
    }
    if n > BRUTE_FORCE_MAX_N || k > BRUTE_FORCE_MAX_K {
        return Err(KkmError::Refused(format!(
            "n = {n}, k = {k} exceeds the limit n <= {BRUTE_FORCE_MAX_N}, k <= {BRUTE_FORCE_MAX_K}"
        )));
    }
    let mut labels = vec![0usize; n];
    // prefix_max[i] = max(labels[..=i])
    let mut prefix_max = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let part = Partition {
            labels: labels.clone(),
            k,
        };
        let c = cost(&part);
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((labels.clone(), c));
        }
        // Advance to the next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                let (labels, c) = best.expect("at least one partition visited");
                return Ok((Partition { labels, k }, c));
            }
            let cap = (prefix_max[i - 1] + 1).min(k - 1);
            if labels[i] < cap {
                labels[i] += 1;
                prefix_max[i] = prefix_max[i - 1].max(labels[i]);
                for t in i + 1..n {
                    labels[t] = 0;
                    prefix_max[t] = prefix_max[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// k-means++ seeding followed by Lloyd, with residual costs attached.
pub fn fit<R: Rng + ?Sized>(
    emb: &EmbeddedSet,
    k: usize,
    opts: &LloydOptions,
    rng: &mut R,
) -> Result<ClusterModel> {
    let init = kmeanspp_seed(&emb.coords, k, rng)?;
    Ok(lloyd(&emb.coords, &init, opts)?.with_residuals(emb))
}

/// Nearest-centroid labels for unseen points, with each point's
/// feature-space distance to its centroid (embedded distance plus projection
/// residual).
pub fn predict(
    embedder: &Embedder,
    model: &ClusterModel,
    pts: &Dataset,
) -> Result<Vec<(usize, f64)>> {
    if model.centroids.ncols() != embedder.dim() {
        return Err(KkmError::invalid(
            "model centroids do not live in this embedding",
        ));
    }
    let emb = embedder.embed(pts)?;
    let rows = Rows::from_matrix(&emb.coords);
    let cent = Rows::from_matrix(&model.centroids);
    Ok(assign(&rows, emb.n(), &cent, model.k)
        .into_iter()
        .zip(&emb.residuals)
        .map(|((j, d), &r)| (j, d + r))
        .collect())
}

/// Mean feature-space distance of unseen points to centroids in the
/// landmark span.
pub fn test_cost(embedder: &Embedder, model: &ClusterModel, test: &Dataset) -> Result<f64> {
    let scored = predict(embedder, model, test)?;
    let total: f64 = scored.iter().map(|&(_, d)| d).sum();
    Ok((total / scored.len() as f64).max(0.0))
}
