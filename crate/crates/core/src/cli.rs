//! The `eqssm` command line.
//!
//! Model settings resolve in this order, later wins: built-in defaults, the
//! `--config` file, each `--set key=value`, then the dedicated flags
//! (`--epochs`, `--seed`, `--variant`, `--lr`).
//!
//! Argument errors exit with code 2, runtime failures (missing files, bad
//! configs, shape mismatches) with code 1.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::{load_csv, make_rotated_testset, save_csv, simulate_pendulum, split_half, Normalizer, PendulumSpec, Plane};
use crate::diff::checkpoint;
use crate::equivariant::{EquivariantBasis, Variant};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict, read_prediction_csv, write_plot_series, write_prediction_csv, write_results_csv, Table};
use crate::lie::{rep_from_signature, MatrixGroup, RepSignature};
use crate::ssm::{train, Model, ModelConfig};

#[derive(Debug, Parser)]
#[command(name = "eqssm", version, about = "SO(3)-equivariant switching state-space model for 3D motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the equivariant weight and bias bases between two representations.
    Basis(BasisArgs),
    /// Simulate a planar pendulum and write it as a trajectory CSV.
    Simulate(SimulateArgs),
    /// Fit the model to training trajectories.
    Train(TrainArgs),
    /// Rolling one-step-ahead prediction on a test trajectory.
    Predict(PredictArgs),
    /// Regular and rotated test NRMSE.
    Evaluate(EvaluateArgs),
    /// Turn a prediction CSV into per-joint plot series and SVG charts.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupName {
    So2,
    So3,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(long, value_enum, default_value = "so3")]
    pub group: GroupName,
    /// Input signature, e.g. `2x0,1x1` (count x tensor rank).
    #[arg(long)]
    pub in_sig: RepSignature,
    #[arg(long)]
    pub out_sig: RepSignature,
    /// Also write the bases as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of samples.
    #[arg(long = "T", visible_alias = "steps", default_value_t = 410, value_parser = positive_usize)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05, value_parser = positive_f64)]
    pub dt: f64,
    #[arg(long, default_value_t = 9.81, value_parser = positive_f64)]
    pub gravity: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub length: f64,
    /// Initial angle from the downward vertical, radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2, allow_negative_numbers = true)]
    pub theta0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub omega0: f64,
    #[arg(long, default_value = "yz")]
    pub plane: Plane,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 20, value_parser = positive_usize)]
    pub substeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Additionally write `<stem>_train.csv` and `<stem>_test.csv` holding
    /// the first and second half next to `--out`.
    #[arg(long, requires = "out")]
    pub split: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, value_parser = positive_f64)]
    pub lr: Option<f64>,
    /// Sampling interval recorded with CSV inputs.
    #[arg(long, default_value_t = 0.05, value_parser = positive_f64)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training trajectory CSVs.
    #[arg(required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint to write (parameters and data normalizer).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Loss trace CSV (`epoch,loss`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test trajectory CSV.
    pub data: PathBuf,
    /// Prediction CSV; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test trajectory CSV.
    pub data: PathBuf,
    /// Number of random z-rotated copies of the test set.
    #[arg(long, default_value_t = 0)]
    pub rotate: usize,
    /// Dataset label; defaults to the file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Results CSV (`dataset,variant,rotation_angle,nrmse_pct`).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Print a JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Prediction CSV written by `predict`.
    pub predictions: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Basis(a) => basis(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Predict(a) => predict_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Plot(a) => plot(a, out),
    }
}

fn write_matrix(out: &mut dyn Write, m: &DMatrix<f64>) -> Result<()> {
    if m.ncols() == 0 {
        return Ok(writeln!(out, "  (empty)")?);
    }
    for r in m.row_iter() {
        let cells: Vec<String> = r
            .iter()
            .map(|&v| if v.abs() < 1e-12 { 0.0 } else { v })
            .map(|v| format!("{v:>10.6}"))
            .collect();
        writeln!(out, "  {}", cells.join(" "))?;
    }
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn basis(a: BasisArgs, out: &mut dyn Write) -> Result<()> {
    let group = Arc::new(MatrixGroup::so(match a.group {
        GroupName::So2 => 2,
        GroupName::So3 => 3,
    })?);
    let rep_in = rep_from_signature(group.clone(), &a.in_sig);
    let rep_out = rep_from_signature(group.clone(), &a.out_sig);
    let b = EquivariantBasis::solve(&rep_in, &rep_out)?;
    writeln!(out, "group {}", group.name())?;
    writeln!(out, "in  {} (size {})", a.in_sig, rep_in.size())?;
    writeln!(out, "out {} (size {})", a.out_sig, rep_out.size())?;
    writeln!(out, "r = {}", b.rank())?;
    writeln!(out, "r_b = {}", b.bias_rank())?;
    writeln!(out, "weight basis Q ({} x {}):", b.q().nrows(), b.q().ncols())?;
    write_matrix(out, b.q())?;
    writeln!(out, "bias basis ({} x {}):", b.bias_q().nrows(), b.bias_q().ncols())?;
    write_matrix(out, b.bias_q())?;
    if let Some(path) = a.out {
        let doc = json!({
            "group": group.name(),
            "in": a.in_sig.to_string(),
            "out": a.out_sig.to_string(),
            "r": b.rank(),
            "r_b": b.bias_rank(),
            "q": rows(b.q()),
            "bias_q": rows(b.bias_q()),
        });
        fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = PendulumSpec {
        steps: a.steps,
        dt: a.dt,
        gravity: a.gravity,
        length: a.length,
        theta0: a.theta0,
        omega0: a.omega0,
        plane: a.plane,
        noise_std: a.noise_std,
        substeps: a.substeps,
    };
    let seq = simulate_pendulum(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    match &a.out {
        None => crate::data::write_csv(&mut *out, &seq)?,
        Some(path) => {
            save_csv(path, &seq)?;
            if a.split {
                let (tr, te) = split_half(&seq, ModelConfig::default().max_lag())?;
                save_csv(sibling(path, "train"), &tr)?;
                save_csv(sibling(path, "test"), &te)?;
            }
        }
    }
    Ok(())
}

fn resolve_config(a: &ModelArgs) -> Result<ModelConfig> {
    let mut cfg = match &a.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(a: &ModelArgs, checkpoint_path: &Path) -> Result<(Model, Normalizer)> {
    let cfg = resolve_config(a)?;
    let records = checkpoint::load(checkpoint_path)?;
    let mut model = Model::new(&cfg)?;
    model.load_records(&records)?;
    let norm = Normalizer::from_records(&records)?;
    Ok((model, norm))
}

fn load_sequence(path: &Path, dt: f64, cfg: &ModelConfig) -> Result<crate::data::Sequence> {
    let seq = load_csv(path, dt)?;
    if seq.joints() != cfg.joints {
        return Err(Error::Config(format!(
            "{} has {} joints but the model is configured for {} (set `joints`)",
            path.display(),
            seq.joints(),
            cfg.joints
        )));
    }
    Ok(seq)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&a.model)?;
    let seqs = a
        .data
        .iter()
        .map(|p| load_sequence(p, a.model.dt, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let norm = Normalizer::fit(&seqs);
    let normed: Vec<_> = seqs.iter().map(|s| norm.apply(s)).collect();
    let mut model = Model::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = train(&mut model, &normed, &mut rng)?;

    let mut records = model.to_records();
    records.push(norm.to_record());
    checkpoint::save(&a.checkpoint, &records)?;
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        writeln!(w, "epoch,loss")?;
        for (i, l) in result.trace.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        w.flush()?;
    }
    writeln!(
        out,
        "trained {} parameters ({}) for {} epochs on {} sequence(s)",
        model.num_parameters(),
        cfg.variant,
        cfg.epochs,
        seqs.len()
    )?;
    if let Some(last) = result.trace.last() {
        writeln!(out, "final loss {last:.6}")?;
    }
    writeln!(out, "checkpoint {}", a.checkpoint.display())?;
    Ok(())
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (model, norm) = load_model(&a.model, &a.checkpoint)?;
    let seq = load_sequence(&a.data, a.model.dt, model.config())?;
    let pred = predict(&model, &norm, &seq)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_prediction_csv(&mut w, &pred, &seq)?;
            w.flush()?;
        }
        None => write_prediction_csv(&mut *out, &pred, &seq)?,
    }
    Ok(())
}

/// FNV-1a, so rotation draws differ between datasets under one seed.
fn name_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (model, norm) = load_model(&a.model, &a.checkpoint)?;
    let seq = load_sequence(&a.data, a.model.dt, model.config())?;
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        a.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(model.config().seed ^ name_hash(&dataset));
    let rotated = make_rotated_testset(&seq, a.rotate, &mut rng);
    let report = evaluate(&model, &norm, &dataset, &seq, &rotated)?;
    let rows = report.rows();
    if let Some(path) = &a.results {
        let mut w = create(path)?;
        write_results_csv(&mut w, &rows)?;
        w.flush()?;
    }
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report.to_json()).expect("json"))?;
    } else {
        write!(out, "{}", Table(&rows))?;
    }
    Ok(())
}

fn plot(a: PlotArgs, out: &mut dyn Write) -> Result<()> {
    let rows = read_prediction_csv(File::open(&a.predictions)?)?;
    fs::create_dir_all(&a.out_dir)?;
    for p in write_plot_series(&a.out_dir, &rows)? {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main_with_args() -> i32 {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock).and_then(|_| lock.flush().map_err(Error::from)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
