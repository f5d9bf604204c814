//! Command-line front end: dataset synthesis, training, sampling, streaming,
//! evaluation, gradient checks and BVH import.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gdiff_core::synth::Template;

use crate::commands::TrainFlags;
use crate::config::ConfigArgs;
pub use crate::error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};

pub const THREADS_ENV: &str = "GDIFF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gdiff", version, about = "Skeleton-aware flow-matching motion generation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Tip displacement of a perturbed chain under local vs global rotations.
    Fkdemo {
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// CSV output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic beat-locked dataset directory.
    Synth(ConfigArgs),
    /// Train the generator; writes model, checkpoint and loss CSV to `out`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from `out/checkpoint.gdpw`.
        #[arg(long)]
        resume: bool,
        /// Disable the joint structure loss.
        #[arg(long)]
        no_lj: bool,
        /// Disable the skeleton structure loss.
        #[arg(long)]
        no_ls: bool,
        /// Disable the temporal structure loss.
        #[arg(long)]
        no_lm: bool,
    },
    /// Sample one clip per validation condition of a dataset.
    Sample(ConfigArgs),
    /// Generate a long sequence clip by clip from seed poses.
    Stream(ConfigArgs),
    /// Compare generated clips with ground truth; prints `metric,value` rows.
    Eval(ConfigArgs),
    /// Finite-difference check of every gradient.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Convert a BVH file into a skeleton file and a motion file.
    BvhImport {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print or write a template skeleton.
    SkeletonGen {
        #[arg(long, default_value = "HUMANOID13")]
        template: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A second call in one process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(CliError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cmd: Cmd) -> Result<(), CliError> {
    configure_threads()?;
    match cmd {
        Cmd::Fkdemo { depth, epsilon, out } => {
            let rows = commands::cmd_fkdemo(depth, epsilon)?;
            print!("{}", commands::fkdemo_table(&rows));
            if let Some(p) = out {
                fs::write(p, commands::fkdemo_csv(&rows))?;
            }
        }
        Cmd::Synth(args) => {
            let m = commands::cmd_synth(&args.resolve()?)?;
            println!("{} clips", m.rows.len());
        }
        Cmd::Train { cfg, resume, no_lj, no_ls, no_lm } => {
            let r = commands::cmd_train(&cfg.resolve()?, TrainFlags { resume, no_lj, no_ls, no_lm })?;
            if let (Some(first), Some(last)) = (r.rows.first(), r.rows.last()) {
                println!("step {}: total {:.6}", first.0, first.1.total);
                println!("step {}: total {:.6}", last.0, last.1.total);
            }
            println!("model: {}", r.model.display());
        }
        Cmd::Sample(args) => {
            let names = commands::cmd_sample(&args.resolve()?)?;
            println!("{} samples", names.len());
        }
        Cmd::Stream(args) => {
            let m = commands::cmd_stream(&args.resolve()?)?;
            println!("{} frames", m.frames());
        }
        Cmd::Eval(args) => {
            let rows = commands::cmd_eval(&args.resolve()?)?;
            print!("{}", commands::metrics_csv(&rows));
        }
        Cmd::Gradcheck { cfg, inject_fault } => {
            let rows = gradcheck::run_checks(cfg.resolve()?.seed()?, inject_fault)?;
            print!("{}", gradcheck::report_table(&rows));
            if let Some(bad) = rows.iter().find(|r| !r.passed()) {
                return Err(CliError::numeric(format!("gradient check failed for {}", bad.term)));
            }
        }
        Cmd::BvhImport { input, out } => {
            let (skel, motion) = commands::cmd_bvh_import(&input, &out)?;
            println!("{} joints, {} frames", skel.len(), motion.frames());
        }
        Cmd::SkeletonGen { template, out } => {
            let t: Template = template.parse()?;
            write_or_print(out.as_ref(), &commands::cmd_skeleton_gen(t)?.to_text())?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
