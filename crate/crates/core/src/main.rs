#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use bndl::cli_io::emit::{bin_csv_rows, sweep_csv_rows, BIN_CSV_HEADER, SWEEP_CSV_HEADER};
use bndl::cli_io::{
    init_thread_pool, load_dataset, read_csv_dataset, save_dataset, write_csv, write_csv_dataset,
    write_feature_file, write_jsonl, RunMeta,
};
use bndl::data::Dataset;
use bndl::metrics::{accuracy, sweep_alpha, PredictionMode};
use bndl::synthlab::{
    bndl_identifiability_run, fit_exact_nmf, gen_blobs, gen_prop1_instance, recovery_score,
    BlobsSpec, IdentifiabilityConfig, NmfConfig, NmfSolver,
};
use bndl::training::{
    load_checkpoint, random_grad_check, save_checkpoint, train, Checkpoint, GradCheckSpec,
    OptimizerConfig, OptimizerKind, TrainConfig,
};
use bndl::uncertainty::{evaluate_uncertainty, uncertainty_bins, UncertaintyConfig};
use bndl::{BndlError, Result};

#[derive(Parser)]
#[command(
    name = "bndl",
    version,
    about = "Bayesian non-negative decision layer toolkit"
)]
struct Cli {
    /// Run single-threaded (overrides BNDL_THREADS).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a decision layer and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// MC t-test uncertainty records, PAvPU and the p-value bin curve.
    Uncertainty(UncertaintyArgs),
    /// Retrain over several sparsity thresholds.
    Sweep(SweepArgs),
    /// Window-column recovery on planted exact factorizations.
    Identifiability(IdentArgs),
    /// Finite-difference check of the analytic ELBO gradient.
    Gradcheck(GradArgs),
    /// Write a Gaussian-blobs classification dataset.
    GenBlobs(GenBlobsArgs),
    /// Export a planted factorization as feature files.
    GenFeatures(GenFeaturesArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Bin,
    Csv,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Feature file (or the whole dataset when `--format csv`).
    #[arg(long)]
    features: PathBuf,
    /// Label file; required for the binary format.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bin")]
    format: Format,
    /// Number of classes; must agree with a binary label file.
    #[arg(long)]
    classes: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_data(
            &self.features,
            self.labels.as_deref(),
            self.format,
            self.classes,
        )
    }
}

fn load_data(
    features: &Path,
    labels: Option<&Path>,
    format: Format,
    classes: Option<usize>,
) -> Result<Dataset> {
    match format {
        Format::Csv => read_csv_dataset(features, classes),
        Format::Bin => {
            let labels = labels
                .ok_or_else(|| BndlError::Config("--labels is required for --format bin".into()))?;
            let data = load_dataset(features, labels)?;
            if let Some(c) = classes {
                if c != data.n_classes {
                    return Err(BndlError::Config(format!(
                        "--classes {c} disagrees with the label file ({})",
                        data.n_classes
                    )));
                }
            }
            Ok(data)
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    mc_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    kl_scale_local: f64,
    /// `adam` or `sgd_momentum`.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
}

impl TrainFlags {
    fn config(&self) -> Result<TrainConfig> {
        let kind: OptimizerKind = self.optimizer.parse()?;
        Ok(TrainConfig {
            latent_dim: self.latent_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            alpha_sparsity: self.alpha,
            mc_samples_per_step: self.mc_samples,
            kl_scale_local: self.kl_scale_local,
            optimizer: OptimizerConfig {
                kind,
                learning_rate: self.lr,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
            ..Default::default()
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// History JSON-lines path (default: `<out>.history.jsonl`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Expected,
    Mc,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "expected")]
    mode: Mode,
    /// MC passes per sample for `--mode mc`.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON-lines report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct UncertaintyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = bndl::uncertainty::DEFAULT_MC_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = bndl::uncertainty::DEFAULT_P_THRESHOLD)]
    pvalue: f64,
    #[arg(long, default_value_t = bndl::uncertainty::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving records.jsonl, report.jsonl, bins.jsonl and bins.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out features (defaults to the training data).
    #[arg(long)]
    eval_features: Option<PathBuf>,
    #[arg(long)]
    eval_labels: Option<PathBuf>,
    /// Comma-separated sparsity thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Also compute PAvPU with the default uncertainty protocol.
    #[arg(long)]
    pavpu: bool,
    /// CSV path; a JSON-lines twin is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Engine {
    Nmf,
    Bndl,
}

#[derive(Args, Debug, Serialize)]
struct IdentArgs {
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, default_value_t = 2)]
    windows: usize,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First instance seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "nmf")]
    engine: Engine,
    /// NMF restarts per instance.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// NMF iterations per restart.
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    /// `hals` or `mu`.
    #[arg(long, default_value = "hals")]
    solver: String,
    /// Sparsity threshold for the BNDL engine.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Training epochs for the BNDL engine.
    #[arg(long, default_value_t = 3000)]
    epochs: usize,
    /// Optional JSON-lines output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GradArgs {
    #[arg(long, default_value_t = 5)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug, Serialize)]
struct GenBlobsArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "bin")]
    format: Format,
    #[arg(long)]
    features_out: PathBuf,
    /// Required for the binary format.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GenFeaturesArgs {
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, default_value_t = 2)]
    windows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives y.feat, theta_star.feat, phi_star.feat and instance.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = a.data.load()?;
    let cfg = a.flags.config()?;
    let out = train(&data, &cfg)?;
    let ckpt = Checkpoint {
        params: out.params,
        optimizer: Some(out.optimizer),
        config: cfg.clone(),
        rng_word_pos: out.rng_word_pos,
    };
    save_checkpoint(&a.out, &ckpt)?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.jsonl");
        PathBuf::from(p)
    });
    let meta = RunMeta::new("train", cfg.seed, a)?;
    write_jsonl(&history, &meta, &out.history.epochs)?;
    if let Some(last) = out.history.epochs.last() {
        print_json(last);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let data = a.data.load()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let mode = match a.mode {
        Mode::Expected => PredictionMode::Expected,
        Mode::Mc => PredictionMode::MonteCarlo(a.samples),
    };
    let acc = accuracy(&ckpt.params, &data, mode, a.seed)?;
    let report = json!({
        "accuracy": acc,
        "mode": a.mode,
        "samples": matches!(a.mode, Mode::Mc).then_some(a.samples),
        "n": data.len(),
    });
    if let Some(out) = &a.out {
        write_jsonl(out, &RunMeta::new("eval", a.seed, a)?, &[&report])?;
    }
    print_json(&report);
    Ok(())
}

fn cmd_uncertainty(a: &UncertaintyArgs) -> Result<()> {
    let data = a.data.load()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cfg = UncertaintyConfig {
        samples: a.samples,
        threshold: a.pvalue,
        seed: a.seed,
    };
    let (records, report) = evaluate_uncertainty(&ckpt.params, &data, &cfg)?;
    let curve = uncertainty_bins(&records, a.bins)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| BndlError::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    let meta = RunMeta::new("uncertainty", a.seed, a)?;
    write_jsonl(&a.out_dir.join("records.jsonl"), &meta, &records)?;
    write_jsonl(&a.out_dir.join("report.jsonl"), &meta, &[&report])?;
    write_jsonl(&a.out_dir.join("bins.jsonl"), &meta, &curve.bins)?;
    write_csv(
        &a.out_dir.join("bins.csv"),
        &meta,
        &BIN_CSV_HEADER,
        &bin_csv_rows(&curve),
    )?;
    print_json(&report);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let train_data = a.data.load()?;
    let eval_data = match &a.eval_features {
        Some(f) => load_data(f, a.eval_labels.as_deref(), a.data.format, a.data.classes)?,
        None => train_data.clone(),
    };
    let cfg = a.flags.config()?;
    let unc = UncertaintyConfig {
        seed: cfg.seed,
        ..Default::default()
    };
    let points = sweep_alpha(
        &train_data,
        &eval_data,
        &cfg,
        &a.alphas,
        a.pavpu.then_some(&unc),
    )?;
    let meta = RunMeta::new("sweep", cfg.seed, a)?;
    write_csv(&a.out, &meta, &SWEEP_CSV_HEADER, &sweep_csv_rows(&points))?;
    write_jsonl(&a.out.with_extension("jsonl"), &meta, &points)?;
    for p in &points {
        print_json(p);
    }
    Ok(())
}

#[derive(Serialize)]
struct IdentRecord {
    seed: u64,
    engine: Engine,
    #[serde(flatten)]
    report: bndl::synthlab::RecoveryReport,
}

fn cmd_identifiability(a: &IdentArgs) -> Result<()> {
    use rayon::prelude::*;
    let solver: NmfSolver = a.solver.parse()?;
    let records: Vec<IdentRecord> = (a.seed..a.seed + a.seeds)
        .into_par_iter()
        .map(|seed| {
            let inst = gen_prop1_instance(a.m, a.n, a.r, a.windows, seed)?;
            let report = match a.engine {
                Engine::Nmf => {
                    let cfg = NmfConfig {
                        restarts: a.restarts,
                        iters: a.iters,
                        seed,
                        solver,
                        ..Default::default()
                    };
                    let fit = fit_exact_nmf(&inst.y, a.r, &cfg)?;
                    let mut rep = recovery_score(&inst, &fit.theta)?;
                    rep.residual = Some(fit.residual);
                    rep
                }
                Engine::Bndl => {
                    let mut cfg = IdentifiabilityConfig::for_instance(&inst, a.alpha, seed);
                    cfg.train.epochs = a.epochs;
                    bndl_identifiability_run(&inst, &cfg)?
                }
            };
            Ok(IdentRecord {
                seed,
                engine: a.engine,
                report,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(out) = &a.out {
        write_jsonl(out, &RunMeta::new("identifiability", a.seed, a)?, &records)?;
    }
    for r in &records {
        print_json(r);
    }
    let passed = records.iter().filter(|r| r.report.pass).count();
    print_json(&json!({ "engine": a.engine, "passed": passed, "seeds": records.len() }));
    Ok(())
}

fn cmd_gradcheck(a: &GradArgs) -> Result<()> {
    let spec = GradCheckSpec {
        fd_step: a.step,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for t in 0..a.trials {
        let seed = a.seed + t;
        let r = random_grad_check(seed, spec)?;
        worst = worst.max(r.max_rel_error);
        print_json(&json!({
            "trial": t,
            "seed": seed,
            "max_rel_error": r.max_rel_error,
            "checked": r.checked,
            "skipped_kinks": r.skipped_kinks,
        }));
    }
    if worst >= a.tolerance {
        return Err(BndlError::Domain(format!(
            "gradient check failed: max relative error {worst:e} >= {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn cmd_gen_blobs(a: &GenBlobsArgs) -> Result<()> {
    let mut spec = BlobsSpec::new(a.n, a.dim, a.classes, a.overlap, a.seed);
    spec.spread = a.spread;
    let data = gen_blobs(&spec)?;
    match a.format {
        Format::Csv => write_csv_dataset(&a.features_out, &data)?,
        Format::Bin => {
            let labels = a.labels_out.as_ref().ok_or_else(|| {
                BndlError::Config("--labels-out is required for --format bin".into())
            })?;
            save_dataset(&data, &a.features_out, labels)?;
        }
    }
    print_json(&json!({ "n": data.len(), "dim": data.dim(), "classes": data.n_classes }));
    Ok(())
}

fn cmd_gen_features(a: &GenFeaturesArgs) -> Result<()> {
    let inst = gen_prop1_instance(a.m, a.n, a.r, a.windows, a.seed)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| BndlError::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    write_feature_file(&a.out_dir.join("y.feat"), &inst.y)?;
    write_feature_file(&a.out_dir.join("theta_star.feat"), &inst.theta_star)?;
    write_feature_file(&a.out_dir.join("phi_star.feat"), &inst.phi_star)?;
    let summary = json!({
        "m": inst.m(),
        "n": inst.n(),
        "rank": inst.rank,
        "window_cols": inst.window_cols,
        "window_data_cols": inst.window_data_cols,
        "zero_sets": inst.zero_sets,
    });
    write_jsonl(
        &a.out_dir.join("instance.jsonl"),
        &RunMeta::new("gen-features", a.seed, a)?,
        &[&summary],
    )?;
    print_json(&summary);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool(cli.deterministic)?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Uncertainty(a) => cmd_uncertainty(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Identifiability(a) => cmd_identifiability(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::GenBlobs(a) => cmd_gen_blobs(a),
        Command::GenFeatures(a) => cmd_gen_features(a),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
