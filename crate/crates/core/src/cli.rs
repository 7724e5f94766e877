//! Command-line front end. Every command writes one artifact and, on
//! failure, a JSON error object on stderr with a nonzero exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::datagen::{make_benchmark, BenchmarkBundle, BenchmarkConfig, GraphKind, SystemKind};
use crate::discrepancy::{
    build_r_hat, skds_empirical, skds_grad, timing_bench, Estimator, LossOptions,
};
use crate::error::{invalid, Error, Result};
use crate::kernels::{Bandwidth, KernelFamily, KernelSpec};
use crate::metrics::{
    metric_report, wilcoxon_margin_test, Direction, MetricReport, WassersteinOptions,
};
use crate::models::{
    DiffusionBasis, DiffusionKind, DriftKind, FeatureBasis, Intervention, SdeModel,
};
use crate::simulator::{euler_maruyama_sample, gaussian_sample, SimConfig};
use crate::trainer::{
    calibrate_test_intervention, train, Calibration, FitResult, KernelConfig, ModelConfig,
    TrainConfig,
};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Defaults-resolved configuration echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Takes precedence over `train.kernel`.
    pub kernel: KernelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub data: BenchmarkConfig,
    /// When set, seeds data generation, training and simulation alike.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    fn finish(mut self, seed_flag: Option<u64>) -> Self {
        if seed_flag.is_some() {
            self.seed = seed_flag;
        }
        if let Some(s) = self.seed {
            self.data.seed = s;
            self.train.seed = s;
            self.sim.seed = s;
        }
        self.train.kernel = self.kernel.clone();
        self
    }

    fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub wall_time: f64,
}

#[derive(Parser, Debug)]
#[command(name = "stadion", version = VERSION, about = "Learn stationary diffusions from samples")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_json_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("invalid value {s:?}"))
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(clap::Args, Debug, Default)]
pub struct SimArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<u64>,
    #[arg(long = "thin")]
    pub thin: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
}

impl SimArgs {
    fn apply(&self, sim: &mut SimConfig) {
        if let Some(v) = self.dt {
            sim.dt = v;
        }
        if let Some(v) = self.burn_in {
            sim.burn_in_steps = v;
        }
        if let Some(v) = self.thin {
            sim.thinning = v;
        }
        if let Some(v) = self.chains {
            sim.chains = v;
        }
    }
}

#[derive(clap::Args, Debug, Default)]
pub struct KernelArgs {
    #[arg(long, value_parser = parse_from_str::<KernelFamily>)]
    pub kernel: Option<KernelFamily>,
    /// A length-scale or "median".
    #[arg(long, value_parser = parse_from_str::<Bandwidth>)]
    pub bandwidth: Option<Bandwidth>,
}

impl KernelArgs {
    fn apply(&self, k: &mut KernelConfig) {
        if let Some(f) = self.kernel {
            k.family = f;
        }
        if let Some(b) = self.bandwidth {
            k.bandwidth = b;
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a benchmark bundle directory.
    Gen {
        #[arg(long, value_parser = parse_from_str::<SystemKind>)]
        kind: Option<SystemKind>,
        #[arg(long, value_parser = parse_from_str::<GraphKind>)]
        graph: Option<GraphKind>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long = "n-per-env")]
        n_per_env: Option<usize>,
        #[arg(long = "n-train-env")]
        n_train_env: Option<usize>,
        #[arg(long = "n-test-env")]
        n_test_env: Option<usize>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long = "expected-degree")]
        expected_degree: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to the observational and training environments of a bundle.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_parser = parse_json_enum::<DriftKind>)]
        model: Option<DriftKind>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, value_parser = parse_json_enum::<DiffusionKind>)]
        diffusion: Option<DiffusionKind>,
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
        #[arg(long, value_parser = parse_from_str::<Estimator>)]
        estimator: Option<Estimator>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate, simulate and score every test environment of a bundle.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Simulated samples per environment (default: size of the test set).
        #[arg(long = "n-sim")]
        n_sim: Option<usize>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the stationary distribution of a model by Euler-Maruyama.
    Simulate {
        /// Model JSON or a fit.json from `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        intervention: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the empirical SKDS (and optionally its gradient).
    Skds {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        intervention: Option<PathBuf>,
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long, value_parser = parse_from_str::<Estimator>)]
        estimator: Option<Estimator>,
        #[arg(long)]
        grad: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time SKDS against KDS loss-and-gradient evaluations.
    BenchTiming {
        #[arg(long, value_parser = parse_from_str::<KernelFamily>)]
        kernel: Option<KernelFamily>,
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SKDS surface and partial derivatives for dX = -4(X - α)dt + σ dB on samples of N(1, 1/2).
    ExampleFig1 {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        bandwidth: f64,
        /// Defaults to the U-statistic.
        #[arg(long, value_parser = parse_from_str::<Estimator>)]
        estimator: Option<Estimator>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired Wilcoxon margin test on two result arrays.
    Sigtest {
        #[arg(long)]
        ours: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        margin: f64,
        #[arg(long, value_parser = parse_from_str::<Direction>, default_value = "ours_better")]
        direction: Direction,
        /// Field to read from eval documents.
        #[arg(long, default_value = "w2")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn write_json(out: Option<&Path>, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Accepts a bare model, a `FitResult`, or a `train` output document.
pub fn load_model(path: &Path) -> Result<SdeModel> {
    let v = read_json(path)?;
    let inner = if let Some(fit) = v.get("fit") {
        fit.get("model").cloned()
    } else if v.get("theta").is_some() {
        v.get("model").cloned()
    } else {
        Some(v)
    };
    let model: SdeModel =
        serde_json::from_value(inner.ok_or_else(|| Error::InvalidInput("no model found".into()))?)?;
    model.validate()?;
    Ok(model)
}

pub fn load_fit(path: &Path) -> Result<FitResult> {
    let v = read_json(path)?;
    let inner = v.get("fit").cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner)?)
}

fn load_intervention(path: Option<&PathBuf>) -> Result<Intervention> {
    match path {
        Some(p) => Ok(serde_json::from_value(read_json(p)?)?),
        None => Ok(Intervention::identity()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvEval {
    pub env: usize,
    pub target: usize,
    pub calibration: Calibration,
    #[serde(flatten)]
    pub report: MetricReport,
    pub n: usize,
}

/// Per-test-environment evaluation of a fitted model.
pub fn evaluate_bundle(
    bundle: &BenchmarkBundle,
    model: &SdeModel,
    sim: &SimConfig,
    n_sim: Option<usize>,
) -> Result<Vec<EnvEval>> {
    bundle
        .test_envs
        .iter()
        .enumerate()
        .map(|(k, env)| {
            let target = *env.intervention.targets.first().ok_or_else(|| {
                Error::InvalidInput(format!("test environment {k} has no target"))
            })?;
            let desired = env.data.mean()[target];
            let cfg = SimConfig {
                n_samples: n_sim.unwrap_or(env.data.n()),
                seed: sim.seed.wrapping_add(k as u64),
                ..sim.clone()
            };
            let calibration = calibrate_test_intervention(model, target, desired, &cfg)?;
            let samples = euler_maruyama_sample(model, &calibration.intervention, &cfg)?;
            let opts = WassersteinOptions {
                seed: cfg.seed,
                ..Default::default()
            };
            Ok(EnvEval {
                env: k,
                target,
                calibration,
                report: metric_report(&samples, &env.data, &opts)?,
                n: samples.n(),
            })
        })
        .collect()
}

/// Rows of the one-dimensional OU illustration: the SKDS surface over `(α, σ)` plus the
/// `α` slice at `σ = 2` and the `σ` slice at `α = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig1Row {
    pub panel: &'static str,
    pub alpha: f64,
    pub sigma: f64,
    pub skds: f64,
    pub d_alpha: f64,
    pub d_sigma: f64,
}

pub fn example_fig1(
    n: usize,
    bandwidth: f64,
    estimator: Estimator,
    grid: usize,
    seed: u64,
) -> Result<Vec<Fig1Row>> {
    if grid < 2 {
        return invalid("grid needs at least two points per axis");
    }
    let data = gaussian_sample(&[1.0], &nalgebra::DMatrix::from_element(1, 1, 0.5), n, seed)?;
    let kernel = KernelSpec::rbf(bandwidth, 1)?;
    // drift 4α - 4x and diffusion σ^2 are linear in θ = (4α, -4, σ^2)
    let opts = LossOptions {
        estimator,
        shuffle: None,
        parallel: true,
    };
    let q = build_r_hat(
        &FeatureBasis::affine(1),
        &DiffusionBasis::unit_coordinates(1),
        &kernel,
        &data,
        opts,
    )?;
    let r = &q.r_hat;
    let eval = |panel: &'static str, alpha: f64, sigma: f64| {
        let th = nalgebra::DVector::from_vec(vec![4.0 * alpha, -4.0, sigma * sigma]);
        let g = r * &th * 2.0;
        Fig1Row {
            panel,
            alpha,
            sigma,
            skds: th.dot(&(r * &th)),
            d_alpha: 4.0 * g[0],
            d_sigma: 2.0 * sigma * g[2],
        }
    };
    let axis =
        |lo: f64, hi: f64| (0..grid).map(move |i| lo + (hi - lo) * i as f64 / (grid - 1) as f64);
    let mut rows = Vec::with_capacity(grid * grid + 2 * grid);
    for a in axis(0.0, 2.0) {
        for s in axis(1.0, 3.0) {
            rows.push(eval("contour", a, s));
        }
    }
    rows.extend(axis(0.0, 2.0).map(|a| eval("alpha_slice", a, 2.0)));
    rows.extend(axis(1.0, 3.0).map(|s| eval("sigma_slice", 1.0, s)));
    Ok(rows)
}

fn sigtest_values(v: &Value, metric: &str) -> Result<Vec<f64>> {
    let arr = match v {
        Value::Array(a) => a.clone(),
        Value::Object(o) => match o.get("envs") {
            Some(Value::Array(a)) => a
                .iter()
                .map(|e| e.get(metric).cloned().unwrap_or(Value::Null))
                .collect(),
            _ => return invalid("expected a JSON array or an eval document"),
        },
        _ => return invalid("expected a JSON array or an eval document"),
    };
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::InvalidInput(format!("non-numeric entry {x}")))
        })
        .collect()
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let meta = |name: &str, cfg: &RunConfig, started: Instant| RunMeta {
        command: name.into(),
        config: cfg.clone(),
        seed: cfg.effective_seed(),
        version: VERSION.into(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    match cli.command {
        Command::Gen {
            kind,
            graph,
            d,
            n_per_env,
            n_train_env,
            n_test_env,
            shift,
            expected_degree,
            seed,
            out,
        } => {
            let mut cfg = base.finish(seed);
            let data = &mut cfg.data;
            kind.map(|v| data.kind = v);
            graph.map(|v| data.graph = v);
            d.map(|v| data.d = v);
            n_per_env.map(|v| data.n_per_env = v);
            n_train_env.map(|v| data.n_train_env = v);
            n_test_env.map(|v| data.n_test_env = v);
            shift.map(|v| data.shift_magnitude = v);
            expected_degree.map(|v| data.expected_degree = v);
            let bundle = make_benchmark(&cfg.data)?;
            bundle.save(&out)?;
            let m = meta("gen", &cfg, started);
            write_json(
                None,
                &json!({ "run": m, "out": out, "d": bundle.d(), "edges": bundle.graph.n_edges() }),
            )
        }
        Command::Train {
            bundle,
            model,
            hidden,
            diffusion,
            kernel,
            steps,
            lr,
            lambda,
            batch_size,
            estimator,
            seed,
            out,
        } => {
            let mut cfg = base;
            kernel.apply(&mut cfg.kernel);
            model.map(|v| cfg.model.kind = v);
            hidden.map(|v| cfg.model.hidden = v);
            diffusion.map(|v| cfg.model.diffusion = v);
            steps.map(|v| cfg.train.steps = v);
            lr.map(|v| cfg.train.lr = v);
            lambda.map(|v| cfg.train.lambda_sparsity = v);
            batch_size.map(|v| cfg.train.batch_size = v);
            estimator.map(|v| cfg.train.estimator = v);
            let cfg = cfg.finish(seed);
            let b = BenchmarkBundle::load(&bundle)?;
            let init = cfg.model.build(b.d())?;
            let fit = train(&b.training_data(), &init, &cfg.train)?;
            let m = meta("train", &cfg, started);
            write_json(Some(&out), &json!({ "run": m, "fit": fit }))
        }
        Command::Eval {
            bundle,
            fit,
            n_sim,
            sim,
            seed,
            out,
        } => {
            let mut cfg = base;
            sim.apply(&mut cfg.sim);
            let cfg = cfg.finish(seed);
            let b = BenchmarkBundle::load(&bundle)?;
            let model = load_model(&fit)?;
            if model.d != b.d() {
                return invalid("model and bundle dimensions differ");
            }
            let envs = evaluate_bundle(&b, &model, &cfg.sim, n_sim)?;
            let m = meta("eval", &cfg, started);
            write_json(out.as_deref(), &json!({ "run": m, "envs": envs }))
        }
        Command::Simulate {
            model,
            intervention,
            sim,
            n,
            seed,
            out,
        } => {
            let mut cfg = base;
            sim.apply(&mut cfg.sim);
            n.map(|v| cfg.sim.n_samples = v);
            let cfg = cfg.finish(seed);
            let model = load_model(&model)?;
            let phi = load_intervention(intervention.as_ref())?;
            let samples = euler_maruyama_sample(&model, &phi, &cfg.sim)?;
            samples.save_csv(&out)?;
            let m = meta("simulate", &cfg, started);
            write_json(
                None,
                &json!({ "run": m, "out": out, "n": samples.n(), "intervention": phi }),
            )
        }
        Command::Skds {
            model,
            data,
            intervention,
            kernel,
            estimator,
            grad,
            out,
        } => {
            let mut cfg = base;
            kernel.apply(&mut cfg.kernel);
            estimator.map(|v| cfg.train.estimator = v);
            let cfg = cfg.finish(None);
            let model = load_model(&model)?;
            let data = Dataset::load_csv(&data)?;
            let phi = load_intervention(intervention.as_ref())?;
            let k = cfg.kernel.build(&data)?;
            let opts = LossOptions::from(cfg.train.estimator);
            let body = if grad {
                let lg = skds_grad(&model, &phi, &k, &data, opts)?;
                json!({ "loss": lg.loss, "grad": lg.grad, "kernel": k, "n": data.n() })
            } else {
                json!({ "loss": skds_empirical(&model, &phi, &k, &data, opts)?, "kernel": k, "n": data.n() })
            };
            let mut body = body;
            body["run"] = serde_json::to_value(meta("skds", &cfg, started))?;
            write_json(out.as_deref(), &body)
        }
        Command::BenchTiming {
            kernel,
            d,
            n,
            repeats,
            seed,
            out,
        } => {
            let mut cfg = base;
            kernel.map(|f| cfg.kernel.family = f);
            let cfg = cfg.finish(seed);
            let report = timing_bench(cfg.kernel.family, d, n, repeats, cfg.effective_seed())?;
            let mut body = serde_json::to_value(&report)?;
            body["run"] = serde_json::to_value(meta("bench-timing", &cfg, started))?;
            write_json(out.as_deref(), &body)
        }
        Command::ExampleFig1 {
            n,
            bandwidth,
            estimator,
            grid,
            seed,
            out,
        } => {
            let cfg = base.finish(seed);
            let est = estimator.unwrap_or(Estimator::UStatistic);
            let rows = example_fig1(n, bandwidth, est, grid, cfg.effective_seed())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["panel", "alpha", "sigma", "skds", "d_alpha", "d_sigma"])?;
            for r in &rows {
                w.write_record([
                    r.panel.to_string(),
                    format!("{:?}", r.alpha),
                    format!("{:?}", r.sigma),
                    format!("{:?}", r.skds),
                    format!("{:?}", r.d_alpha),
                    format!("{:?}", r.d_sigma),
                ])?;
            }
            w.flush()?;
            let m = meta("example-fig1", &cfg, started);
            write_json(
                None,
                &json!({ "run": m, "out": out, "rows": rows.len(), "n": n, "bandwidth": bandwidth, "estimator": est }),
            )
        }
        Command::Sigtest {
            ours,
            baseline,
            margin,
            direction,
            metric,
            out,
        } => {
            let cfg = base.finish(None);
            let a = sigtest_values(&read_json(&ours)?, &metric)?;
            let b = sigtest_values(&read_json(&baseline)?, &metric)?;
            let r = wilcoxon_margin_test(&a, &b, margin, direction)?;
            let mut body = serde_json::to_value(&r)?;
            body["margin"] = json!(margin);
            body["run"] = serde_json::to_value(meta("sigtest", &cfg, started))?;
            write_json(out.as_deref(), &body)
        }
    }
}

/// Applies `STADION_THREADS` (0 or unset = rayon default).
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("STADION_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::InvalidInput(format!(
                "STADION_THREADS must be a nonnegative integer, got {v:?}"
            ))
        })?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", error_json("Usage", &e.to_string()));
            return 2;
        }
    };
    if let Err(e) = configure_threads().and_then(|_| run(cli)) {
        eprintln!("{}", error_json(e.kind(), &e.to_string()));
        return 1;
    }
    0
}
