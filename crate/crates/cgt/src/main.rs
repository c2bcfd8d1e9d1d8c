//! `cgt`: generate benchmark programs, fuzz them under each tracing mode and
//! measure tracing overhead.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! inconsistent input), 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgt::run::{self, Command, FuzzArgs, RunError, DEFAULT_STRIDE, DEFAULT_THRESHOLD};
use cgt_core::fuzzer::DEFAULT_HYBRID_WINDOW;
use cgt_core::gen::BenchKind;
use cgt_core::stats::DEFAULT_TRIM;
use cgt_core::vm::DEFAULT_MAX_INSTRUCTIONS;

#[derive(Parser)]
#[command(
    name = "cgt",
    version,
    about = "Coverage-guided tracing over a bytecode VM"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Out {
    /// Output directory (OFZ_OUT overrides it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModeArgs {
    /// Hybrid: coverage-increasing rate below which the oracle is used.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Hybrid: number of recent executions the rate is taken over.
    #[arg(long, default_value_t = DEFAULT_HYBRID_WINDOW)]
    window: u32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a benchmark program with its ground truth.
    Genbench {
        /// maze, checksum or parser.
        #[arg(long)]
        kind: BenchKind,
        /// Number of basic blocks.
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Recover the block table and critical edges of an image.
    Analyze {
        image: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Split every critical edge of an image.
    Split {
        image: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Run a fuzzing session.
    Fuzz {
        image: PathBuf,
        /// Directory of seed files.
        #[arg(long)]
        seeds: PathBuf,
        /// baseline, trace-all, oracle or hybrid.
        #[arg(long, default_value = "oracle")]
        mode: String,
        #[command(flatten)]
        mode_args: ModeArgs,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Instruction budget per execution.
        #[arg(long, default_value_t = DEFAULT_MAX_INSTRUCTIONS)]
        budget: u64,
        /// Number of test cases to execute.
        #[arg(long, default_value_t = 10_000)]
        stop_n: u64,
        /// Also stop after this many seconds (makes the run irreproducible).
        #[arg(long)]
        stop_secs: Option<u64>,
        #[command(flatten)]
        out: Out,
    },
    /// Record a test-case dataset from a trace-all session.
    Record {
        image: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_INSTRUCTIONS)]
        budget: u64,
        /// Number of test cases to record.
        #[arg(long, default_value_t = 100_000)]
        stop_n: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Replay a dataset with per-test-case timing.
    Replay {
        image: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Modes to replay; repeat or separate with commas. Trials of
        /// different modes are interleaved.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "baseline,trace-all,oracle"
        )]
        mode: Vec<String>,
        #[command(flatten)]
        mode_args: ModeArgs,
        #[arg(long, default_value_t = 5)]
        trials: u32,
        /// Worker threads; each replays whole trials.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: Out,
    },
    /// Aggregate timing CSVs into relative times and statistics.
    Report {
        #[arg(required = true)]
        timing: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRIM)]
        trim: f64,
        /// Sampling stride of the emitted rate curves.
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: usize,
        #[command(flatten)]
        out: Out,
    },
    /// Run a command again from its run.meta file.
    Rerun {
        meta: PathBuf,
        /// Defaults to the directory holding the metadata file.
        #[command(flatten)]
        out: Out,
    },
}

fn out_dir(out: Out) -> Result<PathBuf, RunError> {
    if let Some(dir) = std::env::var_os("OFZ_OUT").filter(|v| !v.is_empty()) {
        return Ok(dir.into());
    }
    out.out
        .ok_or_else(|| RunError::Usage("--out (or OFZ_OUT) is required".into()))
}

fn dispatch(cmd: Cmd) -> Result<String, RunError> {
    let (command, out) = match cmd {
        Cmd::Genbench {
            kind,
            size,
            rng_seed,
            out,
        } => (
            Command::GenBench {
                kind,
                size,
                rng_seed,
            },
            out,
        ),
        Cmd::Analyze { image, out } => (Command::Analyze { image }, out),
        Cmd::Split { image, out } => (Command::Split { image }, out),
        Cmd::Fuzz {
            image,
            seeds,
            mode,
            mode_args,
            rng_seed,
            budget,
            stop_n,
            stop_secs,
            out,
        } => {
            let mode = run::parse_mode(&mode, mode_args.threshold, mode_args.window)?;
            let args = FuzzArgs {
                image,
                seeds,
                mode,
                rng_seed,
                budget,
                stop_n,
                stop_secs,
            };
            (Command::Fuzz(args), out)
        }
        Cmd::Record {
            image,
            seeds,
            rng_seed,
            budget,
            stop_n,
            out,
        } => (
            Command::Record {
                image,
                seeds,
                rng_seed,
                budget,
                stop_n,
            },
            out,
        ),
        Cmd::Replay {
            image,
            dataset,
            mode,
            mode_args,
            trials,
            jobs,
            out,
        } => {
            let modes = mode
                .iter()
                .map(|m| run::parse_mode(m, mode_args.threshold, mode_args.window))
                .collect::<Result<_, _>>()?;
            let cmd = Command::Replay {
                image,
                dataset,
                modes,
                trials,
                jobs,
            };
            (cmd, out)
        }
        Cmd::Report {
            timing,
            trim,
            stride,
            out,
        } => (
            Command::Report {
                timing,
                trim,
                stride,
            },
            out,
        ),
        Cmd::Rerun { meta, out } => {
            let dir = match out_dir(out) {
                Ok(d) => d,
                Err(_) => meta.parent().map(PathBuf::from).unwrap_or_default(),
            };
            return run::rerun(&meta, &dir);
        }
    };
    run::execute(&command, &out_dir(out)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| dispatch(cli.cmd)) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("cgt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
