//! Landmark dictionaries: uniform and ridge-leverage-score sampling,
//! effective dimension, and numerical certificates for a dictionary.
//!
//! Both certificates are evaluated in Gram form. Every operator involved
//! acts on the span of the data, so conjugating by the data map turns each
//! operator inequality into an `n x n` matrix inequality that can be
//! checked with a dense eigensolve, whatever the kernel.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KkmError, Result};
use crate::kernel::GramMatrix;
use crate::linalg::{
    asymmetry, eigen_extremes, require_square, sorted_eigen, symmetrize, symmetry_tol,
};
use crate::nystrom::{eig_psd, Dictionary, Sampler, DEFAULT_RANK_TOL};

/// Relative eigenvalue floor for the certificate matrix.
pub const CERT_TOL: f64 = 1e-8;

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(KkmError::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(KkmError::invalid(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// `min(n, ceil(12 kappa^2 * scale * ln(n / delta) / epsilon^2))`.
fn capped_size(n: usize, scale: f64, epsilon: f64, delta: f64, kappa_sq: f64) -> usize {
    let raw = 12.0 * kappa_sq * scale * (n as f64 / delta).ln() / (epsilon * epsilon);
    let m = raw.ceil();
    if m >= n as f64 {
        n
    } else {
        (m as usize).max(1)
    }
}

/// Number of uniform landmarks that makes a dictionary `gamma`-preserving
/// with probability `1 - delta`, capped at `n`. Natural logarithm.
pub fn uniform_size(
    n: usize,
    gamma: f64,
    epsilon: f64,
    delta: f64,
    kappa_sq: f64,
) -> Result<usize> {
    if n == 0 {
        return Err(KkmError::invalid("n must be positive"));
    }
    check_positive("gamma", gamma)?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    check_positive("kappa_sq", kappa_sq)?;
    Ok(capped_size(n, n as f64 / gamma, epsilon, delta, kappa_sq))
}

/// RLS dictionary size: the uniform formula with `n / gamma` replaced by
/// `d_eff`.
pub fn rls_size(n: usize, d_eff: f64, epsilon: f64, delta: f64, kappa_sq: f64) -> Result<usize> {
    if n == 0 {
        return Err(KkmError::invalid("n must be positive"));
    }
    check_positive("d_eff", d_eff)?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    check_positive("kappa_sq", kappa_sq)?;
    Ok(capped_size(n, d_eff, epsilon, delta, kappa_sq))
}

/// `m` i.i.d. uniform draws from `0..n`, with replacement.
pub fn sample_uniform<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Dictionary> {
    if m < 1 {
        return Err(KkmError::invalid("dictionary size must be at least 1"));
    }
    if n < 1 {
        return Err(KkmError::invalid("cannot sample from an empty dataset"));
    }
    let indices = (0..m).map(|_| rng.random_range(0..n)).collect();
    Ok(Dictionary {
        indices,
        sampler: Sampler::Uniform,
        gamma: None,
        epsilon: None,
        delta: None,
        seed: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageScores {
    pub gamma: f64,
    pub tau: Vec<f64>,
    pub d_eff: f64,
}

impl LeverageScores {
    pub fn n(&self) -> usize {
        self.tau.len()
    }
}

fn check_kernel_matrix(k: &DMatrix<f64>) -> Result<(usize, f64)> {
    let n = require_square(k, "kernel matrix")?;
    if n == 0 {
        return Err(KkmError::invalid("empty kernel matrix"));
    }
    let asym = asymmetry(k);
    if asym > symmetry_tol(k) {
        return Err(KkmError::invalid(format!(
            "kernel matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let (lo, hi) = eigen_extremes(&symmetrize(k));
    if lo < -CERT_TOL * hi.max(0.0) {
        return Err(KkmError::invalid(format!(
            "kernel matrix is not PSD (eigenvalue {lo:e} vs max {hi:e})"
        )));
    }
    Ok((n, hi))
}

/// Exact ridge leverage scores `tau_i = [K (K + gamma I)^{-1}]_ii`, from a
/// Cholesky solve of `(K + gamma I) X = K`.
pub fn rls_exact(kn: &GramMatrix, gamma: f64) -> Result<LeverageScores> {
    check_positive("gamma", gamma)?;
    let k = symmetrize(&kn.values);
    let (n, _) = check_kernel_matrix(&k)?;
    let shifted = &k + DMatrix::identity(n, n) * gamma;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| KkmError::invalid("K + gamma I is not positive definite"))?;
    let x = chol.solve(&k);
    let tau: Vec<f64> = (0..n).map(|i| x[(i, i)].clamp(0.0, 1.0)).collect();
    let d_eff = tau.iter().sum();
    Ok(LeverageScores { gamma, tau, d_eff })
}

/// `d_eff(gamma) = sum_i tau_i = Tr(K (K + gamma I)^{-1})`.
pub fn effective_dimension(scores: &LeverageScores) -> f64 {
    scores.tau.iter().sum()
}

/// `m` i.i.d. draws with `P(i) = tau_i / sum(tau)`.
pub fn sample_rls_sized<R: Rng + ?Sized>(
    scores: &LeverageScores,
    m: usize,
    rng: &mut R,
) -> Result<Dictionary> {
    if m < 1 {
        return Err(KkmError::invalid("dictionary size must be at least 1"));
    }
    let dist = WeightedIndex::new(&scores.tau)
        .map_err(|e| KkmError::invalid(format!("leverage scores cannot be sampled: {e}")))?;
    let indices = (0..m).map(|_| dist.sample(rng)).collect();
    Ok(Dictionary {
        indices,
        sampler: Sampler::Rls,
        gamma: Some(scores.gamma),
        epsilon: None,
        delta: None,
        seed: None,
    })
}

/// RLS dictionary with size set by [`rls_size`].
pub fn sample_rls<R: Rng + ?Sized>(
    scores: &LeverageScores,
    epsilon: f64,
    delta: f64,
    kappa_sq: f64,
    rng: &mut R,
) -> Result<Dictionary> {
    let total: f64 = scores.tau.iter().sum();
    if !(total > 0.0) {
        return Err(KkmError::invalid("all leverage scores are zero"));
    }
    let m = rls_size(scores.n(), total, epsilon, delta, kappa_sq)?;
    let mut dict = sample_rls_sized(scores, m, rng)?;
    dict.epsilon = Some(epsilon);
    dict.delta = Some(delta);
    Ok(dict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub gamma: f64,
    pub epsilon: f64,
    pub m: usize,
    pub passed: bool,
    /// `lambda_min` of the certificate matrix over `lambda_max(K_n)`.
    pub slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich_passed: Option<bool>,
    /// Smallest `epsilon` for which the two-sided spectral bound holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich_norm: Option<f64>,
}

/// `K_nS K_SS^+ K_Sn` for landmark columns `S` of `K_n`.
fn projected_gram(k: &DMatrix<f64>, ids: &[usize]) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let m = ids.len();
    let kns = DMatrix::from_fn(n, m, |i, s| k[(i, ids[s])]);
    let kss = DMatrix::from_fn(m, m, |s, t| k[(ids[s], ids[t])]);
    match eig_psd(&kss, DEFAULT_RANK_TOL) {
        Ok(eig) => {
            let scale = eig.values.map(|l| 1.0 / l.sqrt());
            let c = kns * eig.vectors * DMatrix::from_diagonal(&scale);
            Ok(&c * c.transpose())
        }
        // Landmarks with zero feature norm span nothing.
        Err(KkmError::DegenerateMatrix(_)) => Ok(DMatrix::zeros(n, n)),
        Err(e) => Err(e),
    }
}

/// Checks `Pi_n - Pi_m <= gamma / (1 - epsilon) * (Phi Phi^T + gamma Pi_n)^{-1}`
/// through its Gram form
/// `gamma / (1 - epsilon) * K (K + gamma I)^{-1} - (K - K_nm K_mm^+ K_mn) >= 0`.
pub fn certify_gamma_preserving(
    kn: &GramMatrix,
    dict: &Dictionary,
    gamma: f64,
    epsilon: f64,
) -> Result<CertificationReport> {
    check_positive("gamma", gamma)?;
    check_unit_interval("epsilon", epsilon)?;
    let k = symmetrize(&kn.values);
    let (n, lambda_max) = check_kernel_matrix(&k)?;
    dict.validate(n)?;
    if !(lambda_max > 0.0) {
        return Err(KkmError::DegenerateMatrix("kernel matrix is zero".into()));
    }
    let shifted = &k + DMatrix::identity(n, n) * gamma;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| KkmError::invalid("K + gamma I is not positive definite"))?;
    let ridge = symmetrize(&chol.solve(&k));
    let residual = &k - projected_gram(&k, &dict.indices)?;
    let cert = symmetrize(&(ridge * (gamma / (1.0 - epsilon)) - residual));
    let (lo, _) = eigen_extremes(&cert);
    let slack = lo / lambda_max;
    Ok(CertificationReport {
        gamma,
        epsilon,
        m: dict.m(),
        passed: slack >= -CERT_TOL,
        slack,
        sandwich_passed: None,
        sandwich_norm: None,
    })
}

/// Smallest `eps` with
/// `(1 - eps) Phi Phi^T - eps gamma Pi_n <= (n/m) Phi_m Phi_m^T <= (1 + eps) Phi Phi^T + eps gamma Pi_n`,
/// i.e. the largest generalized eigenvalue magnitude of
/// `K^2 - (n/m) K_nS K_Sn` against `K^2 + gamma K`, with `S` counted with
/// multiplicity.
///
/// Both forms vanish on the null space of `K`, so the pencil is reduced to
/// the range of `K` through its eigendecomposition `K = V diag(s) V^T`,
/// where `K e_s = V diag(s) V[s, :]^T` makes the reduced matrix exact.
pub fn certify_sandwich(kn: &GramMatrix, dict: &Dictionary, gamma: f64) -> Result<f64> {
    check_positive("gamma", gamma)?;
    let k = symmetrize(&kn.values);
    let n = require_square(&k, "kernel matrix")?;
    dict.validate(n)?;
    let (vals, vecs) = sorted_eigen(&k);
    let top = vals[0];
    if !(top > 0.0) {
        return Err(KkmError::DegenerateMatrix(
            "K^2 + gamma K vanishes: kernel matrix is zero".into(),
        ));
    }
    if vals[n - 1] < -CERT_TOL * top {
        return Err(KkmError::invalid("kernel matrix is not PSD"));
    }
    let r = vals.iter().take_while(|&&s| s > 1e-12 * top).count();
    let scale = n as f64 / dict.m() as f64;

    // sum_{s in S} V[s, i] V[s, j] over the retained columns.
    let mut gram_s = DMatrix::<f64>::zeros(r, r);
    for &s in &dict.indices {
        let row = vecs.row(s);
        for i in 0..r {
            let vi = row[i];
            for j in i..r {
                gram_s[(i, j)] += vi * row[j];
            }
        }
    }
    let norm: Vec<f64> = (0..r)
        .map(|i| vals[i] / (vals[i] * vals[i] + gamma * vals[i]).sqrt())
        .collect();
    let w = DMatrix::from_fn(r, r, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let delta = if i == j { 1.0 } else { 0.0 };
        norm[i] * norm[j] * (delta - scale * gram_s[(a, b)])
    });
    let (lo, hi) = eigen_extremes(&w);
    Ok(lo.abs().max(hi.abs()))
}

/// Both certificates in one report.
pub fn certify(
    kn: &GramMatrix,
    dict: &Dictionary,
    gamma: f64,
    epsilon: f64,
) -> Result<CertificationReport> {
    let mut report = certify_gamma_preserving(kn, dict, gamma, epsilon)?;
    let eps_hat = certify_sandwich(kn, dict, gamma)?;
    report.sandwich_norm = Some(eps_hat);
    report.sandwich_passed = Some(eps_hat <= epsilon);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram_square, Dataset, KernelSpec};
    use crate::seed::rng_from;

    fn gm(values: DMatrix<f64>) -> GramMatrix {
        GramMatrix::from_square(values).unwrap()
    }

    fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        let a = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    fn gauss_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        let v = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        Dataset::new(n, 2, v, None).unwrap()
    }

    #[test]
    fn uniform_size_examples() {
        assert!(uniform_size(100, 100.0, 1.0, 0.1, 1.0).is_err());
        assert!(uniform_size(100, 0.0, 0.5, 0.1, 1.0).is_err());
        assert!(uniform_size(100, 1.0, 0.5, 1.0, 1.0).is_err());
        assert_eq!(
            uniform_size(1000, 1000f64.sqrt(), 0.5, 0.1, 1.0).unwrap(),
            1000
        );
        // 12 * 1000 * ln(1e7) / 0.25 = 773,668.6
        assert_eq!(
            uniform_size(1_000_000, 1000.0, 0.5, 0.1, 1.0).unwrap(),
            773_669
        );
    }

    #[test]
    fn uniform_sampling() {
        let d = sample_uniform(1, 3, &mut rng_from(0)).unwrap();
        assert_eq!(d.indices, vec![0, 0, 0]);
        assert_eq!(d.sampler, Sampler::Uniform);
        let a = sample_uniform(100, 10, &mut rng_from(9)).unwrap();
        let b = sample_uniform(100, 10, &mut rng_from(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_uniform(10, 0, &mut rng_from(0)).is_err());
    }

    #[test]
    fn uniform_frequencies_within_binomial_bands() {
        let (n, m) = (100_000usize, 10_000usize);
        let d = sample_uniform(n, m, &mut rng_from(3)).unwrap();
        // Bucket into 100 bins of 1000 indices so each bin expects 100 hits.
        let mut bins = vec![0usize; 100];
        for &i in &d.indices {
            bins[i / 1000] += 1;
        }
        let p = 0.01;
        let mean = m as f64 * p;
        let sd = (m as f64 * p * (1.0 - p)).sqrt();
        assert!(
            bins.iter().all(|&c| (c as f64 - mean).abs() <= 4.0 * sd),
            "{bins:?}"
        );
    }

    #[test]
    fn rls_diagonal_cases() {
        let s = rls_exact(&gm(DMatrix::identity(5, 5)), 1.0).unwrap();
        assert!(s.tau.iter().all(|&t| (t - 0.5).abs() < 1e-15));
        assert!((s.d_eff - 2.5).abs() < 1e-14);

        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let s = rls_exact(&gm(k), 1.0).unwrap();
        assert!((s.tau[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(s.tau[1].abs() < 1e-15);
        assert!((s.d_eff - 2.0 / 3.0).abs() < 1e-15);

        let s4 = rls_exact(&gm(DMatrix::identity(4, 4)), 1.0).unwrap();
        assert!((effective_dimension(&s4) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rls_matches_dense_inverse() {
        let k = random_psd(8, 8, 21);
        let gamma = 0.7;
        let s = rls_exact(&gm(k.clone()), gamma).unwrap();
        let inv = (&k + DMatrix::identity(8, 8) * gamma)
            .try_inverse()
            .unwrap();
        let oracle = &k * inv;
        for i in 0..8 {
            assert!((s.tau[i] - oracle[(i, i)]).abs() <= 1e-10);
        }
        assert!((s.d_eff - oracle.trace()).abs() <= 1e-8);
    }

    #[test]
    fn d_eff_decreases_with_gamma() {
        let k = random_psd(10, 6, 4);
        let vals: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&g| rls_exact(&gm(k.clone()), g).unwrap().d_eff)
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }

    #[test]
    fn rls_rejects_indefinite() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            rls_exact(&gm(k), 1.0),
            Err(KkmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn rls_sampling() {
        let mut tau = vec![0.0; 10];
        tau[0] = 1.0;
        let scores = LeverageScores {
            gamma: 1.0,
            tau,
            d_eff: 1.0,
        };
        let d = sample_rls(&scores, 0.5, 0.1, 1.0, &mut rng_from(0)).unwrap();
        assert!(d.indices.iter().all(|&i| i == 0));
        assert_eq!(d.sampler, Sampler::Rls);

        let again = sample_rls(&scores, 0.5, 0.1, 1.0, &mut rng_from(0)).unwrap();
        assert_eq!(d, again);

        let zero = LeverageScores {
            gamma: 1.0,
            tau: vec![0.0; 4],
            d_eff: 0.0,
        };
        assert!(sample_rls(&zero, 0.5, 0.1, 1.0, &mut rng_from(0)).is_err());
    }

    #[test]
    fn rls_uniform_scores_give_uniform_draws() {
        let n = 20;
        let scores = LeverageScores {
            gamma: 1.0,
            tau: vec![0.3; n],
            d_eff: 0.3 * n as f64,
        };
        let draws = 10_000;
        let d = sample_rls_sized(&scores, draws, &mut rng_from(17)).unwrap();
        let mut counts = vec![0usize; n];
        for &i in &d.indices {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!(
            counts.iter().all(|&c| (c as f64 - mean).abs() <= 4.0 * sd),
            "{counts:?}"
        );
    }

    #[test]
    fn full_dictionary_always_certifies() {
        let data = gauss_data(15, 2);
        let k = gram_square(&KernelSpec::gaussian(1.0).unwrap(), &data);
        for gamma in [0.01, 1.0, 50.0] {
            for eps in [0.1, 0.5, 0.9] {
                let r = certify_gamma_preserving(&k, &Dictionary::all(15), gamma, eps).unwrap();
                assert!(r.passed, "gamma {gamma} eps {eps} slack {}", r.slack);
            }
        }
    }

    #[test]
    fn single_landmark_on_orthonormal_points_fails() {
        let k = gm(DMatrix::identity(4, 4));
        let r = certify_gamma_preserving(&k, &Dictionary::explicit(vec![0], 4).unwrap(), 0.01, 0.5)
            .unwrap();
        assert!(!r.passed);
        // Left-out directions: bound 0.02/1.01 minus residual 1.
        assert!((r.slack - (0.02 / 1.01 - 1.0)).abs() < 1e-12, "{}", r.slack);
    }

    #[test]
    fn certify_rejects_bad_epsilon() {
        let k = gm(DMatrix::identity(3, 3));
        assert!(certify_gamma_preserving(&k, &Dictionary::all(3), 1.0, 1.0).is_err());
    }

    #[test]
    fn sandwich_exact_cases() {
        let data = gauss_data(10, 5);
        let k = gram_square(&KernelSpec::gaussian(1.0).unwrap(), &data);
        assert!(certify_sandwich(&k, &Dictionary::all(10), 1.0).unwrap() <= 1e-8);

        let twins = gm(DMatrix::from_element(2, 2, 1.0));
        let d = Dictionary::explicit(vec![0], 2).unwrap();
        assert!(certify_sandwich(&twins, &d, 1.0).unwrap() <= 1e-8);

        assert!(matches!(
            certify_sandwich(&gm(DMatrix::zeros(3, 3)), &Dictionary::all(3), 1.0),
            Err(KkmError::DegenerateMatrix(_))
        ));
    }

    #[test]
    fn sandwich_matches_dense_generalized_eigensolve() {
        let data = gauss_data(30, 8);
        let kg = gram_square(&KernelSpec::gaussian(1.5).unwrap(), &data);
        let k = kg.values.clone();
        let dict = sample_uniform(30, 15, &mut rng_from(1)).unwrap();
        let gamma = 1.0;
        let eps_hat = certify_sandwich(&kg, &dict, gamma).unwrap();

        let n = 30.0;
        let m = 15.0;
        let ks = DMatrix::from_fn(30, 15, |i, s| k[(i, dict.indices[s])]);
        let a = &k * &k - (&ks * ks.transpose()) * (n / m);
        let b = &k * &k + &k * gamma;

        // Dense route: the pencil is restricted to the numerically nonsingular
        // eigenspace of B, then whitened.
        let (bv, bvec) = sorted_eigen(&symmetrize(&b));
        let r = bv.iter().take_while(|&&v| v > 1e-13 * bv[0]).count();
        let q = bvec.columns(0, r).into_owned();
        let inv_sqrt = DMatrix::from_diagonal(&bv.rows(0, r).map(|v| 1.0 / v.sqrt()));
        let w = &inv_sqrt * q.transpose() * &a * &q * &inv_sqrt;
        let (lo, hi) = eigen_extremes(&symmetrize(&w));
        let dense = lo.abs().max(hi.abs());
        assert!(
            (dense - eps_hat).abs() <= 1e-6,
            "dense {dense} vs {eps_hat}"
        );

        // Random probes only ever see a lower bound.
        let mut rng = rng_from(2);
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let v = nalgebra::DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
            let num = (v.transpose() * &a * &v)[0];
            let den = (v.transpose() * &b * &v)[0];
            best = best.max((num / den).abs());
        }
        assert!(best <= eps_hat + 1e-6, "probe {best} exceeds {eps_hat}");
        assert!(best > 0.0);
    }
}
