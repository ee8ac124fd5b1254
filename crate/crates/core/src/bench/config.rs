//! Experiment configuration: a flat JSON object.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::ingest::{DataFormat, IngestOptions};
use crate::cluster::{LloydOptions, DEFAULT_MAX_ITER, DEFAULT_MOVE_TOL};
use crate::error::{KkmError, Result};
use crate::kernel::DEFAULT_MAX_PAIRS;
use crate::nystrom::DEFAULT_RANK_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Gaussian,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSampler {
    Uniform,
    Rls,
}

impl std::str::FromStr for GridSampler {
    type Err = KkmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "rls" => Ok(Self::Rls),
            other => Err(KkmError::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Sweep specification. `sigma` absent means the bandwidth is estimated from
/// the training split. Exactly one of `m_grid` / `gamma_grid` must be set;
/// with `gamma_grid` each dictionary size comes from the sizing formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_path: PathBuf,
    #[serde(default = "default_format")]
    pub data_format: DataFormat,
    #[serde(default)]
    pub label_column: Option<i64>,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub scale_255: bool,

    #[serde(default = "default_kernel")]
    pub kernel: KernelName,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_max_pairs")]
    pub max_pairs: u64,

    pub k: usize,
    #[serde(default = "default_sampler")]
    pub sampler: GridSampler,
    #[serde(default)]
    pub m_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    /// Ridge for leverage scores in `m_grid` mode with the RLS sampler.
    /// Defaults to `sqrt(n_train)`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,

    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_move_tol")]
    pub move_tol: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,

    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub summary_path: Option<PathBuf>,
    /// Fill the timing columns. Off by default so output bytes depend only on
    /// the config.
    #[serde(default)]
    pub record_timings: bool,
    /// Report NMI of the held-out split instead of the training split.
    #[serde(default)]
    pub test_nmi: bool,
    /// Worker threads; absent uses the global rayon pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_format() -> DataFormat {
    DataFormat::Csv
}
fn default_kernel() -> KernelName {
    KernelName::Gaussian
}
fn default_max_pairs() -> u64 {
    DEFAULT_MAX_PAIRS
}
fn default_sampler() -> GridSampler {
    GridSampler::Uniform
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.1
}
fn default_repeats() -> usize {
    10
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_move_tol() -> f64 {
    DEFAULT_MOVE_TOL
}
fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn bad(msg: impl Into<String>) -> KkmError {
    KkmError::Config(msg.into())
}

impl ExperimentConfig {
    /// Minimal config with every optional key at its default.
    pub fn new(data_path: impl Into<PathBuf>, k: usize, m_grid: Vec<usize>) -> Self {
        Self {
            data_path: data_path.into(),
            data_format: default_format(),
            label_column: None,
            labels_path: None,
            scale_255: false,
            kernel: default_kernel(),
            sigma: None,
            max_pairs: default_max_pairs(),
            k,
            sampler: default_sampler(),
            m_grid: Some(m_grid),
            gamma_grid: None,
            gamma: None,
            epsilon: default_epsilon(),
            delta: default_delta(),
            repeats: default_repeats(),
            test_fraction: default_test_fraction(),
            seed: 0,
            max_iter: default_max_iter(),
            move_tol: default_move_tol(),
            rank_tol: default_rank_tol(),
            output_path: None,
            summary_path: None,
            record_timings: false,
            test_nmi: false,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KkmError::io(path, e))?;
        Self::from_json(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(bad("k must be at least 1"));
        }
        match (&self.m_grid, &self.gamma_grid) {
            (Some(_), Some(_)) => return Err(bad("set only one of m_grid and gamma_grid")),
            (None, None) => return Err(bad("one of m_grid or gamma_grid is required")),
            (Some(g), None) => {
                if g.is_empty() {
                    return Err(bad("m_grid is empty"));
                }
                if g.contains(&0) {
                    return Err(bad("m_grid entries must be positive"));
                }
            }
            (None, Some(g)) => {
                if g.is_empty() {
                    return Err(bad("gamma_grid is empty"));
                }
                if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(bad("gamma_grid entries must be positive"));
                }
            }
        }
        if self.repeats == 0 {
            return Err(bad("repeats must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(bad(format!("sigma must be positive, got {s}")));
            }
        }
        if self.sigma.is_some() && self.kernel == KernelName::Linear {
            return Err(bad("sigma only applies to the gaussian kernel"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(bad(format!("gamma must be positive, got {g}")));
            }
        }
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(bad(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter must be at least 1"));
        }
        if !(self.move_tol >= 0.0) {
            return Err(bad("move_tol must be non-negative"));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(bad("rank_tol must lie in (0, 1)"));
        }
        if self.max_pairs == 0 {
            return Err(bad("max_pairs must be positive"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be at least 1"));
        }
        if self.labels_path.is_some() && self.data_format != DataFormat::Idx {
            return Err(bad("labels_path only applies to idx data"));
        }
        if self.label_column.is_some() && self.data_format != DataFormat::Csv {
            return Err(bad("label_column only applies to csv data"));
        }
        Ok(())
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            scale_255: self.scale_255,
            label_column: self.label_column,
            labels_path: self.labels_path.clone(),
        }
    }

    pub fn lloyd_options(&self) -> LloydOptions {
        LloydOptions {
            max_iter: self.max_iter,
            move_tol: self.move_tol,
        }
    }
}
