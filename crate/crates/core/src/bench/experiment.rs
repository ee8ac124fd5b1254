//! Seeded sweeps over dictionary size.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::config::{ExperimentConfig, GridSampler, KernelName};
use crate::bench::ingest::ingest;
use crate::cluster::{fit, predict};
use crate::error::{KkmError, Result};
use crate::kernel::{gram_square, pairwise_bandwidth, Dataset, KernelSpec};
use crate::landmarks::{
    rls_exact, rls_size, sample_rls_sized, sample_uniform, uniform_size, LeverageScores,
};
use crate::metrics::nmi;
use crate::nystrom::{build_embedder, Dictionary, Sampler};
use crate::seed::{derive_seed, rng_from};

const SPLIT_STREAM: u64 = 1;
const SIGMA_STREAM: u64 = 2;
const CELL_STREAM: u64 = 3;

/// One `(m, repeat)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub m: usize,
    pub m_effective: usize,
    pub repeat: usize,
    pub seed: u64,
    pub w_train: f64,
    pub w_test: f64,
    pub residual_mean: f64,
    pub nmi: Option<f64>,
    pub d_eff: Option<f64>,
    pub iterations: usize,
    pub t_embed_ms: Option<f64>,
    pub t_lloyd_ms: Option<f64>,
}

/// Disjoint, exhaustive train/test index sets. The test set has
/// `round(frac * n)` points, clamped so both sides are non-empty.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(KkmError::invalid(format!("cannot split {n} points")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(KkmError::invalid("test_fraction must lie in (0, 1)"));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Reads the configured dataset and runs the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let data = ingest(&cfg.data_path, cfg.data_format, &cfg.ingest_options())?;
    run_on_dataset(cfg, &data)
}

struct Cell {
    key: u64,
    m: usize,
    repeat: usize,
    scores: Option<usize>,
}

/// Runs the sweep on an in-memory dataset; `cfg.data_path` is ignored.
/// Records come back ordered by grid position, then repeat.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| KkmError::Config(format!("thread pool: {e}")))?
            .install(|| sweep(cfg, data)),
        None => sweep(cfg, data),
    }
}

/// The train/test datasets a sweep with this config uses.
pub fn split_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Dataset, Dataset)> {
    let (train_ids, test_ids) = split_indices(
        data.n(),
        cfg.test_fraction,
        derive_seed(cfg.seed, &[SPLIT_STREAM]),
    )?;
    Ok((data.select(&train_ids)?, data.select(&test_ids)?))
}

fn sweep(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<RunRecord>> {
    let (train, test) = split_dataset(cfg, data)?;
    let n_train = train.n();
    if cfg.k > n_train {
        return Err(KkmError::invalid(format!(
            "k = {} exceeds the {n_train} training points",
            cfg.k
        )));
    }
    let kernel = match cfg.kernel {
        KernelName::Gaussian => {
            let sigma = match cfg.sigma {
                Some(s) => s,
                None => pairwise_bandwidth(
                    &train,
                    cfg.max_pairs,
                    derive_seed(cfg.seed, &[SIGMA_STREAM]),
                )?,
            };
            KernelSpec::gaussian(sigma)?
        }
        KernelName::Linear => KernelSpec::linear_for(data),
    };

    let gram = match cfg.sampler {
        GridSampler::Rls => Some(gram_square(&kernel, &train)),
        GridSampler::Uniform => None,
    };
    let mut scores: Vec<LeverageScores> = Vec::new();
    let mut grid: Vec<(u64, usize, Option<usize>)> = Vec::new();
    if let Some(ms) = &cfg.m_grid {
        let sc = match &gram {
            Some(kn) => {
                let gamma = cfg.gamma.unwrap_or((n_train as f64).sqrt());
                scores.push(rls_exact(kn, gamma)?);
                Some(0)
            }
            None => None,
        };
        grid.extend(ms.iter().map(|&m| (m as u64, m, sc)));
    } else if let Some(gs) = &cfg.gamma_grid {
        for &gamma in gs {
            let (m, sc) = match &gram {
                Some(kn) => {
                    let s = rls_exact(kn, gamma)?;
                    let m = rls_size(n_train, s.d_eff, cfg.epsilon, cfg.delta, kernel.kappa_sq)?;
                    scores.push(s);
                    (m, Some(scores.len() - 1))
                }
                None => (
                    uniform_size(n_train, gamma, cfg.epsilon, cfg.delta, kernel.kappa_sq)?,
                    None,
                ),
            };
            grid.push((gamma.to_bits(), m, sc));
        }
    }
    let cells: Vec<Cell> = grid
        .iter()
        .flat_map(|&(key, m, sc)| {
            (0..cfg.repeats).map(move |repeat| Cell {
                key,
                m,
                repeat,
                scores: sc,
            })
        })
        .collect();

    let ctx = Context {
        cfg,
        train: &train,
        test: &test,
        kernel: &kernel,
        scores: &scores,
    };
    cells.par_iter().map(|c| ctx.run_cell(c)).collect()
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    kernel: &'a KernelSpec,
    scores: &'a [LeverageScores],
}

impl Context<'_> {
    fn run_cell(&self, cell: &Cell) -> Result<RunRecord> {
        let cfg = self.cfg;
        let seed = derive_seed(cfg.seed, &[CELL_STREAM, cell.key, cell.repeat as u64]);
        let mut rng = rng_from(seed);
        let n_train = self.train.n();
        let scores = cell.scores.map(|i| &self.scores[i]);

        let started = Instant::now();
        let mut dict = match scores {
            Some(s) => sample_rls_sized(s, cell.m, &mut rng)?,
            None if cell.m >= n_train => Dictionary {
                sampler: Sampler::Uniform,
                ..Dictionary::all(n_train)
            },
            None => sample_uniform(n_train, cell.m, &mut rng)?,
        };
        dict.seed = Some(seed);
        let embedder = build_embedder(self.train, &dict, self.kernel, cfg.rank_tol)?;
        let emb = embedder.embed(self.train)?;
        let t_embed = started.elapsed();

        let started = Instant::now();
        let model = fit(&emb, cfg.k, &cfg.lloyd_options(), &mut rng)?;
        let t_lloyd = started.elapsed();

        let scored = predict(&embedder, &model, self.test)?;
        let w_test = (scored.iter().map(|&(_, d)| d).sum::<f64>() / scored.len() as f64).max(0.0);
        let nmi = if cfg.test_nmi {
            match self.test.labels() {
                Some(l) => {
                    let pred: Vec<i64> = scored.iter().map(|&(j, _)| j as i64).collect();
                    Some(nmi(l, &pred)?)
                }
                None => None,
            }
        } else {
            match self.train.labels() {
                Some(l) => {
                    let pred: Vec<i64> = model.assignments.iter().map(|&j| j as i64).collect();
                    Some(nmi(l, &pred)?)
                }
                None => None,
            }
        };
        let ms = |d: std::time::Duration| cfg.record_timings.then_some(d.as_secs_f64() * 1e3);
        Ok(RunRecord {
            m: cell.m,
            m_effective: embedder.dim(),
            repeat: cell.repeat,
            seed,
            w_train: model.total_cost.max(0.0),
            w_test,
            residual_mean: emb.mean_residual().max(0.0),
            nmi,
            d_eff: scores.map(|s| s.d_eff),
            iterations: model.iterations_run,
            t_embed_ms: ms(t_embed),
            t_lloyd_ms: ms(t_lloyd),
        })
    }
}
