//! Run configuration and the subcommands behind the `cfphys` binary.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{BenchError, ScenarioKind};
use crate::error::{Error, Result};
use crate::nn::NnError;

pub use commands::{split_dataset, Splits};
pub use config::{split_of, RunConfig, Split, SweepConfig};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CFPHYS_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PREREQ: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cfphys", version, about = "Counterfactual physics benchmark, de-rendering and dynamics")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long, global = true)]
    pub n_objects: Option<usize>,
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Number of experiments to generate.
    #[arg(long, short = 'n', global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Keypoints of the detector.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Shape coefficients per keypoint (detector and dynamics).
    #[arg(long, global = true)]
    pub c: Option<usize>,
    #[arg(long, global = true)]
    pub d_sigma: Option<usize>,
    #[arg(long, global = true)]
    pub frame_size: Option<usize>,
    #[arg(long, global = true)]
    pub derender_steps: Option<usize>,
    #[arg(long, global = true)]
    pub cody_steps: Option<usize>,
    /// Use simulator states as keypoints (skips the detector).
    #[arg(long, global = true)]
    pub oracle_keypoints: bool,
    /// Drop the identifiability filter during generation.
    #[arg(long, global = true)]
    pub unfiltered: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Balls,
    Collision,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and export a dataset.
    Gen {
        /// Also render PNG frames.
        #[arg(long)]
        frames: bool,
    },
    /// Run a study and write its CSV.
    Study {
        #[arg(value_enum)]
        which: StudyKind,
    },
    /// Train one stage and write its checkpoint.
    Train {
        #[arg(value_enum)]
        stage: StageArg,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Predict and score the test split.
    Eval {
        /// Write PNG rollouts for this many experiments.
        #[arg(long, default_value_t = 0)]
        png: usize,
    },
    /// Render a contact sheet varying one keypoint component.
    RenderSweep {
        #[arg(long, default_value_t = 0)]
        keypoint: usize,
        /// `x`, `y` or a coefficient index.
        #[arg(long, default_value = "x")]
        component: String,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Collect written summaries into `report.md`.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    EpsSweep,
    Fps,
    Doop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Derender,
    Cody,
}

impl Overrides {
    /// Loads the config file (or defaults) and applies the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.scenario {
            c.scenario = match s {
                ScenarioArg::Balls => ScenarioKind::Balls,
                ScenarioArg::Collision => ScenarioKind::Collision,
            };
            if s == ScenarioArg::Collision && self.n_objects.is_none() {
                c.n_objects = 2;
            }
        }
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.n_objects, c.n_objects);
        set!(self.duration, c.duration_s);
        set!(self.fps, c.fps);
        set!(self.eps, c.eps);
        set!(self.n, c.n_experiments);
        set!(self.seed, c.seed);
        set!(self.data, c.data_dir);
        set!(self.out, c.out_dir);
        set!(self.k, c.derender.k);
        if let Some(v) = self.c {
            c.derender.c = v;
            c.cody.c = v;
        }
        set!(self.d_sigma, c.cody.d_sigma);
        set!(self.frame_size, c.derender.frame_size);
        set!(self.derender_steps, c.derender.steps);
        set!(self.cody_steps, c.cody.steps);
        if self.oracle_keypoints {
            c.oracle_keypoints = true;
        }
        if self.unfiltered {
            c.filters = crate::bench::Filters::COUNTERFACTUAL_ONLY;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Invalid(_) => EXIT_USAGE,
        Error::Bench(BenchError::Threshold(_)) => EXIT_USAGE,
        Error::Prerequisite(_) => EXIT_PREREQ,
        Error::Diverged(_) | Error::Nn(NnError::NonFinite { .. }) => EXIT_NUMERIC,
        Error::Stage { source, .. } => exit_code(source),
        _ => EXIT_FAILURE,
    }
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(WORKERS_ENV, format!("expected a positive integer, got {v:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_workers()?;
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Gen { frames } => commands::gen(&cfg, *frames),
        Command::Study { which } => match which {
            StudyKind::EpsSweep => commands::eps_sweep(&cfg),
            StudyKind::Fps => commands::fps(&cfg),
            StudyKind::Doop => commands::doop(&cfg),
        },
        Command::Train { stage, resume } => match stage {
            StageArg::Derender => commands::train_derender(&cfg, *resume),
            StageArg::Cody => commands::train_cody(&cfg, *resume),
        },
        Command::Eval { png } => commands::eval(&cfg, *png).map(|_| ()),
        Command::RenderSweep {
            keypoint,
            component,
            points,
        } => commands::render_sweep(&cfg, *keypoint, component, *points),
        Command::Report => commands::report(&cfg),
    }
}

/// Parses arguments, runs, prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
