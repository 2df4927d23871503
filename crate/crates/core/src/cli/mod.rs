//! Command-line front end: `synth`, `fit`, `eval` and `experiment`.

pub mod commands;
pub mod config;
pub mod experiment;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{KmglError, Result};
use config::{Axis, Config, KernelSpec};

#[derive(Debug, Parser)]
#[command(name = "kmgl", version, about = "Cluster graph signals and learn one graph per cluster")]
pub struct Cli {
    /// JSON config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthFlags),
    /// Cluster a dataset and learn its graphs.
    Fit(FitArgs),
    /// Score a fit against the dataset's ground truth.
    Eval(EvalArgs),
    /// Sweep one parameter over synthetic realizations.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub missing_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitFlags {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// dataset | identity | diffusion:<eta> | file:<path> | rbf:<bandwidth>
    #[arg(long)]
    pub kernel: Option<KernelSpec>,
    /// Node coordinates (one row per node) for rbf kernels.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Use alpha for beta as well.
    #[arg(long)]
    pub tied_alpha_beta: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory.
    pub dataset: PathBuf,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results directory written by `fit`.
    pub results: PathBuf,
    /// Dataset directory written by `synth`.
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Dataset seed per realization (overrides --realizations).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub kmeans_restarts: Option<usize>,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub fit: FitFlags,
}

fn set<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}

impl SynthFlags {
    fn apply(self, c: &mut Config) {
        set(&mut c.n, self.n);
        set(&mut c.m, self.m);
        set(&mut c.clusters, self.clusters);
        set(&mut c.p, self.p);
        set(&mut c.eta, self.eta);
        set(&mut c.snr_db, self.snr_db);
        set(&mut c.missing_rate, self.missing_rate);
    }
}

impl FitFlags {
    fn apply(self, c: &mut Config) {
        set(&mut c.alpha, self.alpha);
        set(&mut c.beta, self.beta);
        set(&mut c.gamma, self.gamma);
        set(&mut c.epsilon, self.epsilon);
        set(&mut c.restarts, self.restarts);
        set(&mut c.max_rounds, self.max_rounds);
        set(&mut c.kernel, self.kernel);
        if self.coords.is_some() {
            c.coords = self.coords;
        }
        c.tied_alpha_beta |= self.tied_alpha_beta;
    }
}

/// Config file overlaid with the flags given on the command line.
pub fn resolve_config(cli: &mut Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    set(&mut c.seed, cli.seed);
    set(&mut c.jobs, cli.jobs);
    let empty_synth = || SynthFlags {
        n: None,
        m: None,
        clusters: None,
        p: None,
        eta: None,
        snr_db: None,
        missing_rate: None,
    };
    match &mut cli.command {
        Command::Synth(flags) => std::mem::replace(flags, empty_synth()).apply(&mut c),
        Command::Fit(args) => {
            set(&mut c.clusters, args.clusters);
            take_fit(&mut args.fit).apply(&mut c);
        }
        Command::Eval(_) => {}
        Command::Experiment(args) => {
            set(&mut c.axis, args.axis.map(Some));
            set(&mut c.grid, args.grid.take());
            set(&mut c.realizations, args.realizations);
            set(&mut c.seeds, args.seeds.take().map(Some));
            set(&mut c.kmeans_restarts, args.kmeans_restarts);
            std::mem::replace(&mut args.synth, empty_synth()).apply(&mut c);
            take_fit(&mut args.fit).apply(&mut c);
        }
    }
    Ok(c)
}

fn take_fit(flags: &mut FitFlags) -> FitFlags {
    std::mem::replace(
        flags,
        FitFlags {
            alpha: None,
            beta: None,
            gamma: None,
            epsilon: None,
            restarts: None,
            max_rounds: None,
            kernel: None,
            coords: None,
            tied_alpha_beta: false,
        },
    )
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| KmglError::Config("--out is required for this command".into()))
}

fn dispatch(mut cli: Cli) -> Result<()> {
    let cfg = resolve_config(&mut cli)?;
    let out = cli.out.as_deref();
    let mut stdout = std::io::stdout().lock();
    let print = |stdout: &mut std::io::StdoutLock, bytes: &[u8]| {
        stdout.write_all(bytes).map_err(|e| KmglError::Io {
            path: "<stdout>".into(),
            message: e.to_string(),
        })
    };
    match &cli.command {
        Command::Synth(_) => {
            let dir = require_out(out)?;
            let ds = commands::with_jobs(cfg.jobs, || commands::cmd_synth(&cfg, dir))??;
            let meta = serde_json::to_string(&ds.meta).expect("serializable meta");
            print(&mut stdout, format!("{meta}\n").as_bytes())
        }
        Command::Fit(args) => {
            let dir = require_out(out)?;
            let (_, summary) =
                commands::with_jobs(cfg.jobs, || commands::cmd_fit(&cfg, &args.dataset, dir))??;
            let line = serde_json::to_string(&summary).expect("serializable summary");
            print(&mut stdout, format!("{line}\n").as_bytes())
        }
        Command::Eval(args) => {
            let rec = commands::cmd_eval(&args.results, &args.dataset, out)?;
            let csv = crate::io::csv_bytes(Some(&rec.csv_header()), &[rec.csv_row()]);
            print(&mut stdout, &csv)
        }
        Command::Experiment(_) => {
            let csv = commands::with_jobs(cfg.jobs, || experiment::cmd_experiment(&cfg, out))??;
            if out.is_none() {
                print(&mut stdout, &csv)?;
            }
            Ok(())
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
