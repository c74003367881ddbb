//! The `psme` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Written paths go to stdout, progress to stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use psme_core::eval::loso_folds;
use psme_core::gradsuite;
use psme_core::me::TemporalWeighting;
use psme_core::model::{train, Arm, FusionMechanism, Model, TrainState};
use psme_core::wavelet::{denoise, WaveletSpec};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, RunConfig};
use crate::synth::{self, SynthConfig};
use crate::{dataset, report, runner, IoError};

#[derive(Debug, Parser)]
#[command(name = "psme", version, about = "Multimodal micro-expression and physiological-signal recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Wavelet-denoise every channel of a signal CSV.
    Denoise(DenoiseArgs),
    /// Train on all subjects but one and save a checkpoint.
    Train(TrainArgs),
    /// Leave-one-subject-out evaluation, optionally over all ablation arms.
    EvalLoso(EvalArgs),
    /// Finite-difference check of every op, module and the full model.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub subjects: usize,
    #[arg(long, default_value_t = 6)]
    pub per_subject: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Frame height and width in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Daubechies wavelet, `db1` to `db10`.
    #[arg(long, default_value = "db4")]
    pub wavelet: String,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Noise-free reference; prints the per-channel SNR change.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hold_out_subject: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub report: PathBuf,
    /// `all` runs the ablation table; otherwise one modality arm.
    #[arg(long)]
    pub arms: Option<String>,
    /// Temporal weighting of frame features: `gaussian` or `uniform`.
    #[arg(long)]
    pub fusion: Option<String>,
    /// `guided` or `concat`.
    #[arg(long)]
    pub attn: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config { .. } => CliError::Usage(e.to_string()),
            IoError::Core(psme_core::Error::Config(_)) => CliError::Usage(e.to_string()),
            other => CliError::Run(other.into()),
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut c = match path {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        c.model.seed = s;
    }
    Ok(c)
}

fn parse_wavelet(name: &str, levels: usize) -> Result<WaveletSpec, CliError> {
    let order = name
        .strip_prefix("db")
        .and_then(|o| o.parse().ok())
        .ok_or_else(|| CliError::Usage(format!("unknown wavelet `{}`, expected dbN", name)))?;
    WaveletSpec::new(order, levels).map_err(|e| CliError::Usage(e.to_string()))
}

fn snr_db(clean: &[f64], x: &[f64]) -> f64 {
    let s: f64 = clean.iter().map(|v| v * v).sum();
    let n: f64 = clean.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
    10.0 * (s / n).log10()
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        subjects: a.subjects,
        per_subject: a.per_subject,
        classes: a.classes,
        seed: a.seed,
        size: a.size,
        ..Default::default()
    };
    let samples = synth::generate(&cfg)?;
    dataset::save_dataset(&a.out, &samples)?;
    let acc = synth::centroid_accuracy(&samples, cfg.classes, synth::CENTROID_BINS);
    println!(
        "{}: {} samples, {} subjects, {} classes, seed {}, spectral centroid accuracy {:.3}",
        a.out.display(),
        samples.len(),
        cfg.subjects,
        cfg.classes,
        cfg.seed,
        acc
    );
    Ok(())
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<(), CliError> {
    let spec = parse_wavelet(&a.wavelet, a.levels)?;
    let (t, ch) = dataset::read_signal_table(&a.input)?;
    let mut out: [Vec<f64>; 3] = Default::default();
    for (o, c) in out.iter_mut().zip(&ch) {
        *o = denoise(c, &spec).map_err(|e| CliError::Run(e.into()))?;
    }
    dataset::write_signal_table(&a.out, &t, &out)?;
    if let Some(path) = &a.clean {
        let (_, clean) = dataset::read_signal_table(path)?;
        for (i, name) in dataset::PS_HEADER[1..].iter().enumerate() {
            if clean[i].len() != ch[i].len() {
                return Err(CliError::Usage(format!("{} has a different length", path.display())));
            }
            let delta = snr_db(&clean[i], &out[i]) - snr_db(&clean[i], &ch[i]);
            println!("{} snr_delta_db = {:.3}", name, delta);
        }
    }
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let run = load_config(a.config.as_deref(), a.seed)?;
    let data = dataset::load_dataset(&a.data, &run.segment(), None)?;
    let fold = loso_folds(&data)
        .map_err(|e| CliError::Run(e.into()))?
        .into_iter()
        .find(|f| f.test_subject == a.hold_out_subject)
        .ok_or_else(|| CliError::Usage(format!("no subject `{}` in {}", a.hold_out_subject, a.data.display())))?;
    let mut run = run;
    run.model.num_classes = data.num_classes;
    run.model.ps.num_classes = data.num_classes;
    let model = Model::new(run.model.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let samples: Vec<_> = fold.train.iter().map(|&i| &data.samples[i]).collect();
    let mut state = TrainState::new(&model).map_err(|e| CliError::Run(e.into()))?;
    let t0 = Instant::now();
    let loss_log = train(&model, &mut state, &samples).map_err(|e| CliError::Run(e.into()))?;
    eprintln!("trained {} epochs on {} samples in {:.1?}", loss_log.len(), samples.len(), t0.elapsed());
    checkpoint::save(
        &a.out,
        &Checkpoint {
            config: run,
            params: state.params,
            loss_log,
        },
    )?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut run = load_config(a.config.as_deref(), a.seed)?;
    if let Some(w) = &a.fusion {
        run.model.weighting = TemporalWeighting::parse(w).ok_or_else(|| CliError::Usage(format!("unknown --fusion `{}`", w)))?;
    }
    if let Some(m) = &a.attn {
        run.model.fusion = FusionMechanism::parse(m).ok_or_else(|| CliError::Usage(format!("unknown --attn `{}`", m)))?;
    }
    let all = a.arms.as_deref() == Some("all");
    if let Some(arm) = a.arms.as_deref().filter(|_| !all) {
        run.model.arm = Arm::parse(arm).ok_or_else(|| CliError::Usage(format!("unknown --arms `{}`", arm)))?;
    }
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let data = dataset::load_dataset(&a.data, &run.segment(), None)?;
    run.model.num_classes = data.num_classes;
    run.model.ps.num_classes = data.num_classes;
    let t0 = Instant::now();
    let paths = if all {
        let rows = runner::run_ablations_parallel(&data, &run.model, a.jobs)?;
        report::write_ablations(&a.report, &rows, &run)?
    } else {
        let r = runner::run_loso_parallel(&data, &run.model, a.jobs)?;
        eprintln!("{}: uar {:.4} uf1 {:.4} acc {:.4}", run.model.arm.name(), r.metrics.uar, r.metrics.uf1, r.metrics.acc);
        report::write_report(&a.report, &r, &run)?
    };
    eprintln!("finished in {:.1?}", t0.elapsed());
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<(), CliError> {
    let cases = gradsuite::run_all().map_err(|e| CliError::Run(e.into()))?;
    let mut failed = 0;
    for c in &cases {
        let status = if c.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!c.passed());
        println!(
            "{:<48} {:>10.3e} <= {:.0e}  probes {:>3}  kinks {:>2}  {}",
            c.name, c.max_rel_err, c.tolerance, c.checked, c.skipped, status
        );
    }
    if failed > 0 {
        return Err(CliError::Run(anyhow::anyhow!("{} of {} gradient checks failed", failed, cases.len())));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Train(a) => cmd_train(a),
        Command::EvalLoso(a) => cmd_eval(a),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e);
            e.exit_code()
        }
    }
}
