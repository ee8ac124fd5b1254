//! Clustering quality metrics and run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{KkmError, Result};

/// How mutual information is normalised by the two entropies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
    Max,
    Min,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI with the default arithmetic-mean normalisation.
pub fn nmi(a: &[i64], b: &[i64]) -> Result<f64> {
    nmi_with(a, b, NmiNormalization::Arithmetic)
}

/// `I(A; B) / norm(H(A), H(B))` with natural-log entropies of the empirical
/// contingency table, summed in key order. Two constant labelings give 0.
pub fn nmi_with(a: &[i64], b: &[i64], norm: NmiNormalization) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KkmError::invalid(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(KkmError::invalid("empty label vectors"));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut ca: BTreeMap<i64, usize> = BTreeMap::new();
    let mut cb: BTreeMap<i64, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Max => ha.max(hb),
        NmiNormalization::Min => ha.min(hb),
    };
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Mean and Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub half_width: f64,
}

/// Mean of `values` and the half-width of the two-sided `confidence`
/// interval for it, `t_{(1+c)/2, n-1} * s / sqrt(n)`.
pub fn summarize_runs(values: &[f64], confidence: f64) -> Result<RunSummary> {
    if values.len() < 2 {
        return Err(KkmError::invalid(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(KkmError::invalid(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = students_t_quantile(0.5 * (1.0 + confidence), n - 1.0);
    Ok(RunSummary {
        mean,
        half_width: t * (var / n).sqrt(),
    })
}

/// Upper quantile of Student's t with `dof` degrees of freedom.
pub fn students_t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn nmi_examples() {
        let a = [0, 1, 2, 0, 1, 2, 2];
        assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[3, 3, 3, 3], &[0, 1, 0, 2]).unwrap(), 0.0);
        assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[1, 1], &[2, 2]).unwrap(), 0.0);
        assert!(nmi(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_normalizations_agree_on_identical_labelings() {
        let a = [0, 0, 1, 2, 2, 2];
        for norm in [
            NmiNormalization::Arithmetic,
            NmiNormalization::Geometric,
            NmiNormalization::Max,
            NmiNormalization::Min,
        ] {
            assert!((nmi_with(&a, &a, norm).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_hand_computed() {
        // a = [0,0,1,1], b = [0,1,1,1]: H(a) = ln 2,
        // H(b) = -(1/4 ln 1/4 + 3/4 ln 3/4), I = H(b) - H(b|a) = H(b) - (1/2) ln 2.
        let ha = 2f64.ln();
        let hb = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let mi = hb - 0.5 * 2f64.ln();
        let expect = mi / (0.5 * (ha + hb));
        assert!((nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn summary_examples() {
        let s = summarize_runs(&[3.0, 3.0, 3.0], 0.95).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.half_width, 0.0);

        let s = summarize_runs(&[0.0, 2.0], 0.95).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-15);
        assert!((s.half_width - 12.7062).abs() < 1e-4, "{}", s.half_width);

        assert!(summarize_runs(&[1.0], 0.95).is_err());
        assert!(summarize_runs(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn duplicating_the_sample_never_widens_the_interval() {
        let mut rng = rng_from(5);
        for _ in 0..200 {
            let half: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..5.0)).collect();
            let vals: Vec<f64> = half.iter().flat_map(|&v| [v, -v]).collect();
            let base = summarize_runs(&vals, 0.95).unwrap().half_width;
            let doubled: Vec<f64> = vals.iter().chain(&vals).copied().collect();
            let more = summarize_runs(&doubled, 0.95).unwrap().half_width;
            assert!(more <= base + 1e-12, "{more} > {base}");
        }
    }

    proptest! {
        #[test]
        fn nmi_symmetric_bounded_permutation_invariant(
            a in prop::collection::vec(0i64..4, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from(seed);
            let b: Vec<i64> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let ab = nmi(&a, &b).unwrap();
            let ba = nmi(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let relabeled: Vec<i64> = a.iter().map(|&x| [7, -2, 11, 0][x as usize]).collect();
            prop_assert!((nmi(&relabeled, &b).unwrap() - ab).abs() <= 1e-12);
        }
    }
}
