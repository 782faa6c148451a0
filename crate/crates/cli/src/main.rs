use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpsvm_core::decomp::{best_final_rmse, bench_optimizers, BenchOptions, LrSchedule, OptimizerKind};
use cpsvm_core::io;
use cpsvm_core::pipeline::{compute_metrics, run_stream, train_pipeline, PipelineConfig, PipelineState, UpdatePolicy};
use cpsvm_core::synth::{generate, DriftSpec, FaultSpec, Locations, SynthSpec};
use cpsvm_core::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cpsvm", version, about = "Streaming CP decomposition with drift-aware one-class SVM scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic tensor with ground-truth labels.
    Synth(SynthArgs),
    /// Compare SGD, PSGD and NESGD from a shared starting point.
    Bench(BenchArgs),
    /// Decompose a training window and fit the one-class model.
    Train(TrainArgs),
    /// Score the slices after the training window.
    Stream(StreamArgs),
    /// Recompute metrics from a verdict file and labels.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 60×12×2000 rank-2 benchmark tensor, no drift.
    Benchmark,
    /// 60×12×1000 stream with local faults and a late global drift.
    Drift,
}

#[derive(Args)]
struct SynthArgs {
    /// Tensor CSV to write; the JSON sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Label CSV (default: `<out stem>.labels.csv`).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for the planted factor matrices A, B, C.
    #[arg(long)]
    truth_dir: Option<PathBuf>,
    /// JSON spec file; flags below override its fields.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "benchmark")]
    preset: Preset,
    #[arg(long = "i")]
    i: Option<usize>,
    #[arg(long = "j")]
    j: Option<usize>,
    #[arg(long = "k")]
    k: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Remove any drift from the preset or spec.
    #[arg(long)]
    no_drift: bool,
    #[arg(long)]
    drift_start_k: Option<usize>,
    #[arg(long)]
    drift_mu_shift: Option<f64>,
    #[arg(long)]
    drift_sigma_scale: Option<f64>,
    /// `all` or a comma-separated list of location indices.
    #[arg(long)]
    drift_locations: Option<String>,
    /// Remove any faults from the preset or spec.
    #[arg(long)]
    no_faults: bool,
    #[arg(long, value_delimiter = ',')]
    fault_times: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    fault_locations: Option<Vec<usize>>,
    #[arg(long)]
    fault_mu_shift: Option<f64>,
    #[arg(long)]
    fault_sigma_scale: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, value_delimiter = ',', default_value = "SGD,PSGD,NESGD")]
    optimizers: Vec<OptimizerKind>,
    #[arg(long, default_value_t = 6000)]
    steps: u64,
    #[arg(long, default_value_t = 100)]
    record_every: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// η(t) = eta0 / (1 + t).
    #[arg(long, default_value_t = 1.0)]
    eta0: f64,
    /// RMSE trace CSV (`step,rmse,optimizer`).
    #[arg(long)]
    out: PathBuf,
    /// JSON summary with the threshold, steps to reach it and final errors.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// Number of leading slices used for training.
    #[arg(long, default_value_t = 500)]
    window: usize,
    /// Pipeline configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<UpdatePolicy>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    gamma_change: Option<f64>,
    #[arg(long)]
    gamma_multiplier: Option<f64>,
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Bundle JSON holding factors, optimizer state, model and snapshot.
    #[arg(long)]
    model_out: PathBuf,
    /// Directory for the fitted factor matrices.
    #[arg(long)]
    factors_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    /// Bundle written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tensor: PathBuf,
    /// Ground-truth labels; required for metrics.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Overrides the policy stored in the bundle.
    #[arg(long)]
    policy: Option<UpdatePolicy>,
    #[arg(long)]
    verdicts_out: PathBuf,
    #[arg(long, requires = "labels")]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    window_size: usize,
    /// Write the pipeline state reached at the end of the stream.
    #[arg(long)]
    bundle_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "TENSOR_ADVISED")]
    policy: UpdatePolicy,
    #[arg(long, default_value_t = 100)]
    window_size: usize,
    /// Metrics JSON (stdout when absent).
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

fn parse_locations(s: &str) -> Result<Locations> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Locations::All);
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| Error::InvalidArgument(format!("location {:?}: {}", p, e))))
        .collect::<Result<Vec<_>>>()
        .map(Locations::List)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn default_labels_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("labels.csv")
}

fn synth_spec(a: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(p), _) => read_json(p)?,
        (None, Preset::Benchmark) => SynthSpec::default(),
        (None, Preset::Drift) => SynthSpec::drift_scenario(1),
    };
    spec.i = a.i.unwrap_or(spec.i);
    spec.j = a.j.unwrap_or(spec.j);
    spec.k = a.k.unwrap_or(spec.k);
    spec.rank = a.rank.unwrap_or(spec.rank);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.noise_sigma = a.noise_sigma.unwrap_or(spec.noise_sigma);
    if a.no_drift {
        spec.drift = None;
    }
    if let Some(start_k) = a.drift_start_k {
        spec.drift.get_or_insert(DriftSpec { start_k, mu_shift: 0.0, sigma_scale: 1.0, locations: Locations::All }).start_k = start_k;
    }
    if let Some(d) = spec.drift.as_mut() {
        d.mu_shift = a.drift_mu_shift.unwrap_or(d.mu_shift);
        d.sigma_scale = a.drift_sigma_scale.unwrap_or(d.sigma_scale);
        if let Some(l) = &a.drift_locations {
            d.locations = parse_locations(l)?;
        }
    } else if a.drift_mu_shift.is_some() || a.drift_sigma_scale.is_some() || a.drift_locations.is_some() {
        return Err(Error::InvalidArgument("drift options need --drift-start-k".into()));
    }
    if a.no_faults {
        spec.faults = None;
    }
    if let Some(times) = &a.fault_times {
        let f = spec.faults.get_or_insert(FaultSpec { times: vec![], locations: vec![0], mu_shift: 0.0, sigma_scale: 1.0 });
        f.times = times.clone();
    }
    if let Some(f) = spec.faults.as_mut() {
        if let Some(l) = &a.fault_locations {
            f.locations = l.clone();
        }
        f.mu_shift = a.fault_mu_shift.unwrap_or(f.mu_shift);
        f.sigma_scale = a.fault_sigma_scale.unwrap_or(f.sigma_scale);
    } else if a.fault_locations.is_some() || a.fault_mu_shift.is_some() || a.fault_sigma_scale.is_some() {
        return Err(Error::InvalidArgument("fault options need --fault-times".into()));
    }
    Ok(spec)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = synth_spec(&a)?;
    let data = generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    io::save_tensor(&data.tensor, &a.out)?;
    let labels = a.labels.clone().unwrap_or_else(|| default_labels_path(&a.out));
    io::write_labels_csv(&data.labels, create(&labels)?)?;
    if let Some(dir) = &a.truth_dir {
        write_factors(&data.truth, dir)?;
    }
    eprintln!("wrote {} ({}×{}×{}) and {}", a.out.display(), spec.i, spec.j, spec.k, labels.display());
    Ok(())
}

fn write_factors(f: &cpsvm_core::KruskalFactors, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, m) in [("A", &f.a), ("B", &f.b), ("C", &f.c)] {
        io::write_factor_csv(m, create(&dir.join(format!("{}.csv", name)))?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizerSummary {
    optimizer: OptimizerKind,
    final_rmse: f64,
    steps_to_tau: Option<u64>,
    diverged_at: Option<u64>,
}

#[derive(Serialize)]
struct BenchSummary {
    dims: (usize, usize, usize),
    rank: usize,
    steps: u64,
    seed: u64,
    eta0: f64,
    tau: f64,
    note: String,
    optimizers: Vec<OptimizerSummary>,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let t = io::load_tensor(&a.tensor)?;
    let mut opts = BenchOptions {
        rank: a.rank,
        steps: a.steps,
        record_every: a.record_every,
        seed: a.seed,
        optimizers: a.optimizers.clone(),
        ..BenchOptions::default()
    };
    opts.config.lr = LrSchedule::InverseTime { eta0: a.eta0 };
    let traces = bench_optimizers(&t, &opts)?;
    let mut out = create(&a.out)?;
    io::write_rmse_csv(&traces, &mut out)?;
    out.flush()?;
    let tau = 1.1 * best_final_rmse(&traces);
    for tr in &traces {
        match tr.diverged_at {
            Some(s) => eprintln!("{}: diverged at step {}", tr.optimizer.name(), s),
            None => eprintln!("{}: final rmse {:.6}, steps to tau {:?}", tr.optimizer.name(), tr.final_rmse(), tr.steps_to(tau)),
        }
    }
    if let Some(path) = &a.summary {
        let dims = t.dims();
        let summary = BenchSummary {
            dims,
            rank: a.rank,
            steps: a.steps,
            seed: a.seed,
            eta0: a.eta0,
            tau,
            note: format!("desk-scale benchmark: time mode K = {} (reference experiment uses K = 10000)", dims.2),
            optimizers: traces
                .iter()
                .map(|tr| OptimizerSummary {
                    optimizer: tr.optimizer,
                    final_rmse: tr.final_rmse(),
                    steps_to_tau: tr.steps_to(tau),
                    diverged_at: tr.diverged_at,
                })
                .collect(),
        };
        write_json(&summary, path)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let t = io::load_tensor(&a.tensor)?;
    let nk = t.dims().2;
    if a.window == 0 || a.window > nk {
        return Err(Error::InvalidArgument(format!("window {} outside 1..={}", a.window, nk)));
    }
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.rank = a.rank.unwrap_or(cfg.rank);
    cfg.nu = a.nu.unwrap_or(cfg.nu);
    cfg.stream.seed = a.seed.unwrap_or(cfg.stream.seed);
    let adv = &mut cfg.advisor;
    adv.update_policy = a.policy.unwrap_or(adv.update_policy);
    adv.k_neighbors = a.k_neighbors.unwrap_or(adv.k_neighbors);
    adv.gamma_change = a.gamma_change.or(adv.gamma_change);
    adv.gamma_multiplier = a.gamma_multiplier.unwrap_or(adv.gamma_multiplier);
    adv.confidence = a.confidence.unwrap_or(adv.confidence);
    adv.threshold = a.threshold.or(adv.threshold);

    let window = t.time_range(0, a.window)?;
    let state = train_pipeline(&window, &cfg)?;
    let mut out = create(&a.model_out)?;
    out.write_all(state.to_json()?.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    if let Some(dir) = &a.factors_dir {
        write_factors(&state.decomp.factors, dir)?;
    }
    let g = state.model.training_decision_values();
    let inside = g.iter().filter(|v| **v >= 0.0).count();
    eprintln!(
        "trained on {} slices: window rmse {:.6}, {} of {} training rows inside, gamma_change {:.4e}",
        a.window,
        state.decomp.epoch_rmse.last().copied().unwrap_or(f64::NAN),
        inside,
        g.len(),
        state.gamma_change
    );
    Ok(())
}

fn cmd_stream(a: StreamArgs) -> Result<()> {
    let started = Instant::now();
    let mut state = PipelineState::from_json(&std::fs::read_to_string(&a.model)?)?;
    if let Some(p) = a.policy {
        state = state.with_policy(p);
    }
    let policy = state.config.advisor.update_policy;
    let t = io::load_tensor(&a.tensor)?;
    let (verdicts, trace) = run_stream(&mut state, &t)?;
    let mut out = create(&a.verdicts_out)?;
    io::write_verdicts_csv(&verdicts, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.metrics_out {
        let labels = io::read_labels_csv(BufReader::new(File::open(a.labels.as_ref().expect("required by clap"))?))?;
        let metrics = compute_metrics(policy, &verdicts, &labels, a.window_size, trace)?;
        // runtime stays out of the file so repeated runs are byte-identical
        write_json(&metrics, path)?;
        eprintln!(
            "{}: {} events, false alarm rate {:.4}, detection rate {:?}",
            policy.name(),
            metrics.events,
            metrics.false_alarm_rate,
            metrics.detection_rate
        );
    }
    if let Some(path) = &a.bundle_out {
        std::fs::write(path, state.to_json()? + "\n")?;
    }
    eprintln!("processed {} slices in {} ms ({} batch retrains)", verdicts.len(), started.elapsed().as_millis(), state.retrains);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let verdicts = io::read_verdicts_csv(BufReader::new(File::open(&a.verdicts)?))?;
    let labels = io::read_labels_csv(BufReader::new(File::open(&a.labels)?))?;
    let metrics = compute_metrics(a.policy, &verdicts, &labels, a.window_size, vec![])?;
    match &a.metrics_out {
        Some(p) => write_json(&metrics, p),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&metrics)?)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
