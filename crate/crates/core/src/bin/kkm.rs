use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use kkm::bench::synthetic::{gaussian_mixture, MixtureSpec};
use kkm::bench::{
    emit_csv, emit_summary, ingest, records_to_csv, run_experiment, DataFormat, ExperimentConfig,
    GridSampler, IngestOptions, KernelName,
};
use kkm::cluster::{fit, LloydOptions};
use kkm::kernel::{gram_square, pairwise_bandwidth, DEFAULT_MAX_PAIRS};
use kkm::landmarks::{
    certify, rls_exact, rls_size, sample_rls_sized, sample_uniform, uniform_size,
};
use kkm::nystrom::{build_embedder, DEFAULT_RANK_TOL};
use kkm::seed::rng_from;
use kkm::{Dataset, KernelSpec, KkmError};

#[derive(Parser)]
#[command(name = "kkm", version, about = "Nystrom kernel k-means experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep dictionary sizes and write per-run CSV records.
    Run(RunArgs),
    /// Check a sampled dictionary against the gamma-preserving certificate.
    Certify(CertifyArgs),
    /// Ridge leverage scores as `index,tau` CSV.
    Rls(RlsArgs),
    /// Fit one model and write its artifacts.
    Fit(FitArgs),
    /// Write a seeded Gaussian mixture as CSV with a trailing label column.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: DataFormat,
    /// CSV label column; negative counts from the end.
    #[arg(long, allow_hyphen_values = true)]
    label_column: Option<i64>,
    /// idx label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    scale_255: bool,
}

impl DataArgs {
    fn load(&self) -> kkm::Result<Dataset> {
        ingest(
            &self.data,
            self.format,
            &IngestOptions {
                scale_255: self.scale_255,
                label_column: self.label_column,
                labels_path: self.labels.clone(),
            },
        )
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_kernel)]
    kernel: KernelName,
    /// Gaussian bandwidth; estimated from the data when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
    max_pairs: u64,
}

impl KernelArgs {
    fn build(&self, data: &Dataset, seed: u64) -> kkm::Result<KernelSpec> {
        match self.kernel {
            KernelName::Gaussian => {
                let sigma = match self.sigma {
                    Some(s) => s,
                    None => pairwise_bandwidth(data, self.max_pairs, seed)?,
                };
                KernelSpec::gaussian(sigma)
            }
            KernelName::Linear => Ok(KernelSpec::linear_for(data)),
        }
    }
}

fn parse_kernel(s: &str) -> Result<KernelName, String> {
    match s {
        "gaussian" => Ok(KernelName::Gaussian),
        "linear" => Ok(KernelName::Linear),
        _ => Err(format!("unknown kernel {s:?}")),
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<DataFormat>,
    #[arg(long, allow_hyphen_values = true)]
    label_column: Option<i64>,
    #[arg(long)]
    scale_255: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sampler: Option<GridSampler>,
    /// Dictionary sizes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    m: Option<Vec<usize>>,
    /// Ridge grid, or the RLS ridge when an m grid is set.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    record_timings: bool,
    #[arg(long)]
    test_nmi: bool,
    /// Records CSV; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-m summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Dictionary size; from the sizing formula when absent.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value = "uniform")]
    sampler: GridSampler,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RlsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value = "uniform")]
    sampler: GridSampler,
    /// RLS ridge; defaults to sqrt(n).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = kkm::cluster::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = kkm::cluster::DEFAULT_MOVE_TOL)]
    move_tol: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    components: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn exit_code(err: &KkmError) -> u8 {
    match err {
        KkmError::Config(_) | KkmError::InvalidArgument(_) | KkmError::Refused(_) => 2,
        KkmError::Format { .. }
        | KkmError::Io { .. }
        | KkmError::DegenerateBandwidth
        | KkmError::DegenerateMatrix(_) => 3,
    }
}

fn write_out(path: Option<&Path>, text: &str) -> kkm::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| KkmError::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| KkmError::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                })
        }
    }
}

fn merged_config(args: &RunArgs) -> kkm::Result<ExperimentConfig> {
    let mut map = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| KkmError::Io {
                path: path.clone(),
                source: e,
            })?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => {
                    return Err(KkmError::Config(format!(
                        "{}: expected a JSON object",
                        path.display()
                    )))
                }
                Err(e) => return Err(KkmError::Config(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, v: Value| {
        map.insert(key.to_string(), v);
    };
    if let Some(v) = &args.data {
        set("data_path", json!(v));
    }
    if let Some(v) = args.format {
        set("data_format", json!(v));
    }
    if let Some(v) = args.label_column {
        set("label_column", json!(v));
    }
    if args.scale_255 {
        set("scale_255", json!(true));
    }
    if let Some(v) = args.k {
        set("k", json!(v));
    }
    if let Some(v) = args.sampler {
        set("sampler", json!(v));
    }
    if let Some(v) = args.repeats {
        set("repeats", json!(v));
    }
    if let Some(v) = args.seed {
        set("seed", json!(v));
    }
    if let Some(v) = args.sigma {
        set("sigma", json!(v));
    }
    if let Some(v) = args.test_fraction {
        set("test_fraction", json!(v));
    }
    if let Some(v) = args.threads {
        set("threads", json!(v));
    }
    if args.record_timings {
        set("record_timings", json!(true));
    }
    if args.test_nmi {
        set("test_nmi", json!(true));
    }
    if let Some(v) = &args.output {
        set("output_path", json!(v));
    }
    if let Some(v) = &args.summary {
        set("summary_path", json!(v));
    }
    if let Some(v) = &args.m {
        set("m_grid", json!(v));
        map.remove("gamma_grid");
    }
    if let Some(g) = &args.gamma {
        if map.get("m_grid").is_some_and(|v| !v.is_null()) {
            if g.len() != 1 {
                return Err(KkmError::Config(
                    "with an m grid, --gamma takes a single value".into(),
                ));
            }
            map.insert("gamma".into(), json!(g[0]));
        } else {
            map.insert("gamma_grid".into(), json!(g));
        }
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(Value::Object(map)).map_err(|e| KkmError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> kkm::Result<()> {
    let cfg = merged_config(args)?;
    let records = run_experiment(&cfg)?;
    match &cfg.output_path {
        Some(p) => emit_csv(&records, p)?,
        None => write_out(None, &records_to_csv(&records)?)?,
    }
    if let Some(p) = &cfg.summary_path {
        emit_summary(&records, p)?;
    }
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> kkm::Result<()> {
    let data = args.data.load()?;
    let kernel = args.kernel.build(&data, args.seed)?;
    let kn = gram_square(&kernel, &data);
    let n = data.n();
    let mut rng = rng_from(args.seed);
    let dict = match args.sampler {
        GridSampler::Uniform => {
            let m = match args.m {
                Some(m) => m,
                None => uniform_size(n, args.gamma, args.epsilon, args.delta, kernel.kappa_sq)?,
            };
            sample_uniform(n, m, &mut rng)?
        }
        GridSampler::Rls => {
            let scores = rls_exact(&kn, args.gamma)?;
            let m = match args.m {
                Some(m) => m,
                None => rls_size(n, scores.d_eff, args.epsilon, args.delta, kernel.kappa_sq)?,
            };
            sample_rls_sized(&scores, m, &mut rng)?
        }
    };
    let report = certify(&kn, &dict, args.gamma, args.epsilon)?;
    let text = serde_json::to_string_pretty(&report).expect("report serialises");
    write_out(None, &format!("{text}\n"))
}

fn cmd_rls(args: &RlsArgs) -> kkm::Result<()> {
    let data = args.data.load()?;
    let kernel = args.kernel.build(&data, 0)?;
    let scores = rls_exact(&gram_square(&kernel, &data), args.gamma)?;
    let mut text = String::from("index,tau\n");
    for (i, t) in scores.tau.iter().enumerate() {
        text.push_str(&format!("{i},{t}\n"));
    }
    write_out(args.output.as_deref(), &text)?;
    eprintln!("d_eff = {}", scores.d_eff);
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> kkm::Result<()> {
    let data = args.data.load()?;
    let kernel = args.kernel.build(&data, args.seed)?;
    let n = data.n();
    let mut rng = rng_from(args.seed);
    let mut dict = match args.sampler {
        GridSampler::Uniform => sample_uniform(n, args.m, &mut rng)?,
        GridSampler::Rls => {
            let gamma = args.gamma.unwrap_or((n as f64).sqrt());
            sample_rls_sized(
                &rls_exact(&gram_square(&kernel, &data), gamma)?,
                args.m,
                &mut rng,
            )?
        }
    };
    dict.seed = Some(args.seed);
    let embedder = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL)?;
    let emb = embedder.embed(&data)?;
    let opts = LloydOptions {
        max_iter: args.max_iter,
        move_tol: args.move_tol,
    };
    let mut model = fit(&emb, args.k, &opts, &mut rng)?;
    model.seed = Some(args.seed);
    model.lift(&embedder)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| KkmError::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_out(Some(&dir.join("dictionary.json")), &dict.to_json())?;
    embedder.save(&dir.join("embedder.json"))?;
    model.save(&dir.join("model.json"))?;
    model.write_assignments_csv(&dir.join("assignments.csv"))?;
    eprintln!(
        "m' = {}, iterations = {}, cost = {}",
        embedder.dim(),
        model.iterations_run,
        model.total_cost
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> kkm::Result<()> {
    let spec = MixtureSpec {
        n: args.n,
        d: args.d,
        components: args.components,
        separation: args.separation,
        std: args.std,
    };
    let data = gaussian_mixture(&spec, args.seed)?;
    let mut text: String = (0..data.d()).map(|j| format!("x{j},")).collect();
    text.push_str("label\n");
    for (row, l) in data.rows().zip(data.labels().unwrap_or_default()) {
        for v in row {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{l}\n"));
    }
    write_out(args.output.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Rls(a) => cmd_rls(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kkm: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
