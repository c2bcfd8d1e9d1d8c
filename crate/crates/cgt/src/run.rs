//! Command implementations.
//!
//! Each command reads its inputs, writes its outputs and a `run.meta` file
//! into the output directory, and returns a one-line `key=value` summary.
//! `run.meta` holds everything needed to run the command again
//! ([`Command::from_meta`]); it records no output path and no timestamps, so
//! a rerun into another directory reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cgt_core::cfg::{find_critical_edges, split_critical_edges, CfgError, ControlFlowGraph};
use cgt_core::dataset::{record_dataset, ReplayError, TimingRecord};
use cgt_core::fuzzer::{FuzzConfig, FuzzError, Fuzzer, TracingMode, DEFAULT_HYBRID_WINDOW};
use cgt_core::gen::{generate, BenchKind, GenError};
use cgt_core::oracle::VerdictKind;
use cgt_core::report::{report, ReportError};
use cgt_core::rng::RNG_NAME;
use cgt_core::stats::rate_curve;
use cgt_core::vm::ExecBudget;
use thiserror::Error;

use crate::corpus::write_corpus;
use crate::formats::{self, hex, FormatError};
use crate::meta::{self, Meta};
use crate::timing::replay_timed;

/// Hybrid switching threshold used when none is given.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Sampling stride of emitted rate curves.
pub const DEFAULT_STRIDE: usize = 100;

pub const META_FILE: &str = "run.meta";

/// Bumped whenever an output format changes.
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    /// 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Data(_) => 2,
            RunError::Internal(_) => 3,
        }
    }
}

impl From<FormatError> for RunError {
    fn from(e: FormatError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<FuzzError> for RunError {
    fn from(e: FuzzError) -> Self {
        match e {
            FuzzError::InvalidMode(_) => RunError::Usage(e.to_string()),
            _ => RunError::Data(e.to_string()),
        }
    }
}

impl From<GenError> for RunError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Asm(_) => RunError::Internal(e.to_string()),
            _ => RunError::Usage(e.to_string()),
        }
    }
}

impl From<CfgError> for RunError {
    fn from(e: CfgError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<ReplayError> for RunError {
    fn from(e: ReplayError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<ReportError> for RunError {
    fn from(e: ReportError) -> Self {
        RunError::Data(e.to_string())
    }
}

/// A tracing mode by name plus the hybrid parameters, validated.
pub fn parse_mode(name: &str, threshold: f64, window: u32) -> Result<TracingMode, RunError> {
    let mode = match name {
        "hybrid" => TracingMode::Hybrid { threshold, window },
        other => formats::mode_from_name(other)
            .ok_or_else(|| RunError::Usage(format!("unknown mode {other:?}")))?,
    };
    mode.validate()?;
    Ok(mode)
}

fn hybrid_params(modes: &[TracingMode]) -> (f64, u32) {
    modes
        .iter()
        .find_map(|m| match *m {
            TracingMode::Hybrid { threshold, window } => Some((threshold, window)),
            _ => None,
        })
        .unwrap_or((DEFAULT_THRESHOLD, DEFAULT_HYBRID_WINDOW))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzArgs {
    pub image: PathBuf,
    pub seeds: PathBuf,
    pub mode: TracingMode,
    pub rng_seed: u64,
    pub budget: u64,
    pub stop_n: u64,
    /// Wall-clock cap. Runs cut short by it are not reproducible.
    pub stop_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    GenBench {
        kind: BenchKind,
        size: usize,
        rng_seed: u64,
    },
    Analyze {
        image: PathBuf,
    },
    Split {
        image: PathBuf,
    },
    Fuzz(FuzzArgs),
    Record {
        image: PathBuf,
        seeds: PathBuf,
        rng_seed: u64,
        budget: u64,
        stop_n: u64,
    },
    Replay {
        image: PathBuf,
        dataset: PathBuf,
        modes: Vec<TracingMode>,
        trials: u32,
        jobs: usize,
    },
    Report {
        timing: Vec<PathBuf>,
        trim: f64,
        stride: usize,
    },
}

fn abs(path: &Path) -> Result<PathBuf, RunError> {
    std::fs::canonicalize(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn image_checksum(path: &Path) -> Result<u64, RunError> {
    Ok(formats::read_image(path)?.checksum())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenBench { .. } => "genbench",
            Command::Analyze { .. } => "analyze",
            Command::Split { .. } => "split",
            Command::Fuzz(_) => "fuzz",
            Command::Record { .. } => "record",
            Command::Replay { .. } => "replay",
            Command::Report { .. } => "report",
        }
    }

    /// Input paths made absolute, so the metadata does not depend on the
    /// working directory.
    pub fn canonicalized(&self) -> Result<Command, RunError> {
        let mut c = self.clone();
        match &mut c {
            Command::GenBench { .. } => {}
            Command::Analyze { image } | Command::Split { image } => *image = abs(image)?,
            Command::Fuzz(a) => {
                a.image = abs(&a.image)?;
                a.seeds = abs(&a.seeds)?;
            }
            Command::Record { image, seeds, .. } => {
                *image = abs(image)?;
                *seeds = abs(seeds)?;
            }
            Command::Replay { image, dataset, .. } => {
                *image = abs(image)?;
                *dataset = abs(dataset)?;
            }
            Command::Report { timing, .. } => {
                for t in timing.iter_mut() {
                    *t = abs(t)?;
                }
            }
        }
        Ok(c)
    }

    /// Metadata describing this command. Commands that read an image also
    /// record its checksum.
    pub fn to_meta(&self) -> Result<Meta, RunError> {
        let mut m = Meta::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("command", self.name().to_string());
        put("format", FORMAT_VERSION.to_string());
        match self {
            Command::GenBench {
                kind,
                size,
                rng_seed,
            } => {
                put("kind", kind.as_str().to_string());
                put("size", size.to_string());
                put("rng", RNG_NAME.to_string());
                put("rng_seed", rng_seed.to_string());
            }
            Command::Analyze { image } | Command::Split { image } => {
                put("image", path_str(image));
                put("image_checksum", format!("{:016x}", image_checksum(image)?));
            }
            Command::Fuzz(a) => {
                let (threshold, window) = hybrid_params(&[a.mode]);
                put("image", path_str(&a.image));
                put(
                    "image_checksum",
                    format!("{:016x}", image_checksum(&a.image)?),
                );
                put("seeds", path_str(&a.seeds));
                put("mode", a.mode.as_str().to_string());
                put("threshold", threshold.to_string());
                put("window", window.to_string());
                put("rng", RNG_NAME.to_string());
                put("rng_seed", a.rng_seed.to_string());
                put("budget", a.budget.to_string());
                put("stop_n", a.stop_n.to_string());
                put(
                    "stop_secs",
                    a.stop_secs.map(|s| s.to_string()).unwrap_or_default(),
                );
            }
            Command::Record {
                image,
                seeds,
                rng_seed,
                budget,
                stop_n,
            } => {
                put("image", path_str(image));
                put("image_checksum", format!("{:016x}", image_checksum(image)?));
                put("seeds", path_str(seeds));
                put("mode", TracingMode::TraceAll.as_str().to_string());
                put("rng", RNG_NAME.to_string());
                put("rng_seed", rng_seed.to_string());
                put("budget", budget.to_string());
                put("stop_n", stop_n.to_string());
            }
            Command::Replay {
                image,
                dataset,
                modes,
                trials,
                jobs,
            } => {
                let (threshold, window) = hybrid_params(modes);
                put("image", path_str(image));
                put("image_checksum", format!("{:016x}", image_checksum(image)?));
                put("dataset", path_str(dataset));
                let names: Vec<&str> = modes.iter().map(|m| m.as_str()).collect();
                put("modes", names.join(","));
                put("threshold", threshold.to_string());
                put("window", window.to_string());
                put("trials", trials.to_string());
                put("jobs", jobs.to_string());
            }
            Command::Report {
                timing,
                trim,
                stride,
            } => {
                put("timing_files", timing.len().to_string());
                for (i, t) in timing.iter().enumerate() {
                    put(&format!("timing.{i}"), path_str(t));
                }
                put("trim", trim.to_string());
                put("stride", stride.to_string());
            }
        }
        Ok(m)
    }

    /// Rebuilds a command from its metadata. The image checksum, when
    /// recorded, must match the image currently on disk.
    pub fn from_meta(m: &Meta) -> Result<Command, RunError> {
        let get = |k: &str| {
            m.get(k)
                .map(String::as_str)
                .ok_or_else(|| RunError::Data(format!("metadata lacks {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, RunError> {
            v.parse()
                .map_err(|_| RunError::Data(format!("metadata {k}={v:?} is not a valid value")))
        }
        let field = |k: &str| -> Result<String, RunError> { get(k).map(str::to_string) };
        if get("format")? != FORMAT_VERSION {
            return Err(RunError::Data(format!(
                "unsupported metadata format {}",
                get("format")?
            )));
        }
        if let Some(rng) = m.get("rng") {
            if rng != RNG_NAME {
                return Err(RunError::Data(format!(
                    "metadata names rng {rng}, this build has {RNG_NAME}"
                )));
            }
        }
        let hybrid = || -> Result<(f64, u32), RunError> {
            Ok((
                num("threshold", get("threshold")?)?,
                num("window", get("window")?)?,
            ))
        };
        let cmd = match get("command")? {
            "genbench" => Command::GenBench {
                kind: get("kind")?
                    .parse()
                    .map_err(|e: GenError| RunError::Data(e.to_string()))?,
                size: num("size", get("size")?)?,
                rng_seed: num("rng_seed", get("rng_seed")?)?,
            },
            "analyze" => Command::Analyze {
                image: field("image")?.into(),
            },
            "split" => Command::Split {
                image: field("image")?.into(),
            },
            "fuzz" => {
                let (threshold, window) = hybrid()?;
                Command::Fuzz(FuzzArgs {
                    image: field("image")?.into(),
                    seeds: field("seeds")?.into(),
                    mode: parse_mode(get("mode")?, threshold, window)?,
                    rng_seed: num("rng_seed", get("rng_seed")?)?,
                    budget: num("budget", get("budget")?)?,
                    stop_n: num("stop_n", get("stop_n")?)?,
                    stop_secs: match get("stop_secs")? {
                        "" => None,
                        s => Some(num("stop_secs", s)?),
                    },
                })
            }
            "record" => Command::Record {
                image: field("image")?.into(),
                seeds: field("seeds")?.into(),
                rng_seed: num("rng_seed", get("rng_seed")?)?,
                budget: num("budget", get("budget")?)?,
                stop_n: num("stop_n", get("stop_n")?)?,
            },
            "replay" => {
                let (threshold, window) = hybrid()?;
                let modes = get("modes")?
                    .split(',')
                    .map(|name| parse_mode(name, threshold, window))
                    .collect::<Result<_, _>>()?;
                Command::Replay {
                    image: field("image")?.into(),
                    dataset: field("dataset")?.into(),
                    modes,
                    trials: num("trials", get("trials")?)?,
                    jobs: num("jobs", get("jobs")?)?,
                }
            }
            "report" => {
                let n: usize = num("timing_files", get("timing_files")?)?;
                let timing = (0..n)
                    .map(|i| field(&format!("timing.{i}")).map(PathBuf::from))
                    .collect::<Result<_, _>>()?;
                Command::Report {
                    timing,
                    trim: num("trim", get("trim")?)?,
                    stride: num("stride", get("stride")?)?,
                }
            }
            other => {
                return Err(RunError::Data(format!(
                    "unknown command {other:?} in metadata"
                )))
            }
        };
        if let Some(recorded) = m.get("image_checksum") {
            let image = m.get("image").map(PathBuf::from).unwrap_or_default();
            let found = format!("{:016x}", image_checksum(&image)?);
            if &found != recorded {
                return Err(RunError::Data(format!(
                    "{} has checksum {found}, metadata recorded {recorded}",
                    image.display()
                )));
            }
        }
        Ok(cmd)
    }
}

/// Runs `cmd`, writing outputs and `run.meta` into `out`.
pub fn execute(cmd: &Command, out: &Path) -> Result<String, RunError> {
    let cmd = cmd.canonicalized()?;
    validate(&cmd)?;
    formats::create_dir(out)?;
    let meta = cmd.to_meta()?;
    let summary = match &cmd {
        Command::GenBench {
            kind,
            size,
            rng_seed,
        } => genbench(*kind, *size, *rng_seed, out)?,
        Command::Analyze { image } => analyze(image, out)?,
        Command::Split { image } => split(image, out)?,
        Command::Fuzz(a) => fuzz(a, out)?,
        Command::Record {
            image,
            seeds,
            rng_seed,
            budget,
            stop_n,
        } => record(image, seeds, *rng_seed, *budget, *stop_n, out)?,
        Command::Replay {
            image,
            dataset,
            modes,
            trials,
            jobs,
        } => replay(image, dataset, modes, *trials, *jobs, out)?,
        Command::Report {
            timing,
            trim,
            stride,
        } => report_cmd(timing, *trim, *stride, out)?,
    };
    formats::write_bytes(&out.join(META_FILE), meta::render(&meta).as_bytes())?;
    Ok(summary)
}

/// Re-executes the command recorded in `meta_path`.
pub fn rerun(meta_path: &Path, out: &Path) -> Result<String, RunError> {
    let text = String::from_utf8(formats::read_bytes(meta_path)?)
        .map_err(|_| RunError::Data(format!("{}: not UTF-8", meta_path.display())))?;
    let m = meta::parse_kv(&text)
        .map_err(|e| RunError::Data(format!("{}: {e}", meta_path.display())))?;
    execute(&Command::from_meta(&m)?, out)
}

fn validate(cmd: &Command) -> Result<(), RunError> {
    let usage = |msg: &str| Err(RunError::Usage(msg.to_string()));
    match cmd {
        Command::Fuzz(a) if a.budget == 0 => usage("--budget must be positive"),
        Command::Record { budget: 0, .. } => usage("--budget must be positive"),
        Command::Record { stop_n: 0, .. } => usage("--stop-n must be at least 1"),
        Command::Replay { modes, .. } if modes.is_empty() => {
            usage("at least one --mode is required")
        }
        Command::Replay { trials: 0, .. } => usage("--trials must be at least 1"),
        Command::Replay { jobs: 0, .. } => usage("--jobs must be at least 1"),
        Command::Report { timing, .. } if timing.is_empty() => {
            usage("at least one timing file is required")
        }
        Command::Report { trim, .. } if !(0.0..0.5).contains(trim) => {
            usage("--trim must be in [0, 0.5)")
        }
        Command::Report { stride: 0, .. } => usage("--stride must be at least 1"),
        _ => Ok(()),
    }
}

fn budget(n: u64) -> Result<ExecBudget, RunError> {
    ExecBudget::new(n).map_err(|e| RunError::Usage(e.to_string()))
}

fn hex_bytes(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Seed files in `dir`, in name order.
pub fn read_seeds(dir: &Path) -> Result<Vec<Vec<u8>>, RunError> {
    let files = formats::list_files(dir)?;
    if files.is_empty() {
        return Err(RunError::Data(format!("{}: no seed files", dir.display())));
    }
    files.iter().map(|f| Ok(formats::read_bytes(f)?)).collect()
}

fn write_rate(path: &Path, flags: &[bool], stride: usize) -> Result<Option<f64>, RunError> {
    if flags.is_empty() {
        return Ok(None);
    }
    let curve = rate_curve(flags, stride);
    formats::write_rows(
        path,
        ["index", "rate"],
        curve.iter().map(|&(i, r)| [i.to_string(), r.to_string()]),
    )?;
    Ok(curve.last().map(|&(_, r)| r))
}

fn write_ids(path: &Path, ids: &[u64]) -> Result<(), RunError> {
    formats::write_rows(path, ["testcase_id"], ids.iter().map(|id| [id.to_string()]))?;
    Ok(())
}

fn genbench(kind: BenchKind, size: usize, rng_seed: u64, out: &Path) -> Result<String, RunError> {
    let bench = generate(kind, size, rng_seed)?;
    formats::write_image(&out.join("image.ofz"), &bench.image)?;
    formats::write_blocks(&out.join("blocks.csv"), &bench.blocks)?;
    formats::write_rows(
        &out.join("crash_sites.csv"),
        ["site", "witness"],
        bench
            .crash_sites
            .iter()
            .zip(&bench.witnesses)
            .map(|(&s, w)| [hex(s), hex_bytes(w)]),
    )?;
    formats::write_rows(
        &out.join("groundtruth.csv"),
        [
            "kind",
            "size",
            "rng_seed",
            "blocks",
            "reachable_blocks",
            "crash_sites",
            "image_checksum",
        ],
        [[
            kind.as_str().to_string(),
            size.to_string(),
            rng_seed.to_string(),
            bench.blocks.len().to_string(),
            bench.reachable_count().to_string(),
            bench.crash_sites.len().to_string(),
            format!("{:016x}", bench.image.checksum()),
        ]],
    )?;
    let seeds = out.join("seeds");
    formats::clear_dir(&seeds)?;
    for (i, s) in bench.seeds.iter().enumerate() {
        formats::write_bytes(&seeds.join(format!("seed_{i:03}")), s)?;
    }
    Ok(format!(
        "genbench kind={kind} size={size} blocks={} reachable={} crash_sites={} code_bytes={} checksum={:016x}",
        bench.blocks.len(),
        bench.reachable_count(),
        bench.crash_sites.len(),
        bench.image.len(),
        bench.image.checksum()
    ))
}

fn analyze(image: &Path, out: &Path) -> Result<String, RunError> {
    let img = formats::read_image(image)?;
    let cfg = ControlFlowGraph::from_image(&img)?;
    let blocks: Vec<_> = cfg.blocks().cloned().collect();
    let critical = find_critical_edges(&cfg);
    formats::write_blocks(&out.join("blocks.csv"), &blocks)?;
    formats::write_edges(
        &out.join("critical_edges.csv"),
        critical.iter().map(|&e| (None, e)),
    )?;
    Ok(format!(
        "analyze blocks={} edges={} critical_edges={} reachable={} checksum={:016x}",
        cfg.len(),
        cfg.edges().len(),
        critical.len(),
        cfg.reachable().len(),
        img.checksum()
    ))
}

fn split(image: &Path, out: &Path) -> Result<String, RunError> {
    let img = formats::read_image(image)?;
    let cfg = ControlFlowGraph::from_image(&img)?;
    let before = find_critical_edges(&cfg).len();
    let s = split_critical_edges(&img, &cfg)?;
    let after = find_critical_edges(&s.cfg).len();
    if after != 0 {
        return Err(RunError::Internal(format!(
            "{after} critical edges left after splitting"
        )));
    }
    let blocks: Vec<_> = s.cfg.blocks().cloned().collect();
    formats::write_image(&out.join("image.ofz"), &s.image)?;
    formats::write_blocks(&out.join("blocks.csv"), &blocks)?;
    formats::write_edges(
        &out.join("dummies.csv"),
        s.dummies.iter().map(|(&d, &e)| (Some(d), e)),
    )?;
    Ok(format!(
        "split blocks_before={} critical_before={before} dummies={} relocated={} blocks_after={} critical_after={after} checksum={:016x}",
        cfg.len(),
        s.dummies.len(),
        s.relocated.len(),
        s.cfg.len(),
        s.image.checksum()
    ))
}

fn stats_rows(f: &Fuzzer) -> Vec<[String; 2]> {
    let s = f.stats();
    [
        ("executed", s.executed),
        ("coverage_increasing", s.coverage_increasing),
        ("crashes_total", s.crashes_total),
        ("crashes_unique", s.crashes_unique),
        ("timeouts", s.timeouts),
        ("covered_blocks", s.covered_blocks),
        ("total_blocks", s.total_blocks),
        ("queued", s.queued),
        ("oracle_runs", s.oracle_runs),
        ("tracer_runs", s.tracer_runs),
        ("plain_runs", s.plain_runs),
    ]
    .into_iter()
    .map(|(k, v)| [k.to_string(), v.to_string()])
    .collect()
}

fn fuzz(a: &FuzzArgs, out: &Path) -> Result<String, RunError> {
    let img = formats::read_image(&a.image)?;
    let seeds = read_seeds(&a.seeds)?;
    let config = FuzzConfig {
        budget: budget(a.budget)?,
        ..FuzzConfig::new(a.mode, a.rng_seed)
    };
    let mut fuzzer = Fuzzer::new(&img, config, &seeds)?;
    let deadline = a.stop_secs.map(|s| Instant::now() + Duration::from_secs(s));
    let mut flags = Vec::new();
    while fuzzer.stats().executed < a.stop_n && deadline.is_none_or(|d| Instant::now() < d) {
        let (_, step) = fuzzer.step();
        if let Some(v) = step.verdict {
            flags.push(v == VerdictKind::CoverageIncreasing);
        }
    }
    write_corpus(out, &fuzzer)?;
    let covered: std::collections::BTreeSet<u32> = fuzzer.global().iter().collect();
    formats::write_coverage(&out.join("coverage.csv"), &covered)?;
    write_ids(&out.join("coverage_ids.csv"), fuzzer.coverage_ids())?;
    formats::write_rows(
        &out.join("stats.csv"),
        ["stat", "value"],
        stats_rows(&fuzzer),
    )?;
    let rate = write_rate(&out.join("rate.csv"), &flags, DEFAULT_STRIDE)?;
    let s = fuzzer.stats();
    Ok(format!(
        "fuzz mode={} executed={} coverage_increasing={} covered_blocks={}/{} queued={} crashes_unique={} crashes_total={} timeouts={} rate={}",
        a.mode.as_str(),
        s.executed,
        s.coverage_increasing,
        s.covered_blocks,
        s.total_blocks,
        s.queued,
        s.crashes_unique,
        s.crashes_total,
        s.timeouts,
        rate.map(|r| r.to_string()).unwrap_or_default()
    ))
}

fn record(
    image: &Path,
    seeds: &Path,
    rng_seed: u64,
    budget_n: u64,
    stop_n: u64,
    out: &Path,
) -> Result<String, RunError> {
    let img = formats::read_image(image)?;
    let seeds = read_seeds(seeds)?;
    let n = usize::try_from(stop_n).map_err(|_| RunError::Usage("--stop-n too large".into()))?;
    let (ds, ids) = record_dataset(&img, &seeds, rng_seed, n, budget(budget_n)?)?;
    formats::write_dataset(&out.join("dataset.ofds"), &ds)?;
    write_ids(&out.join("coverage_ids.csv"), &ids)?;
    let mut flags = vec![false; ds.len()];
    for &id in &ids {
        flags[id as usize] = true;
    }
    let rate = write_rate(&out.join("rate.csv"), &flags, DEFAULT_STRIDE)?;
    Ok(format!(
        "record records={} coverage_increasing={} rate={} checksum={:016x}",
        ds.len(),
        ids.len(),
        rate.unwrap_or(0.0),
        img.checksum()
    ))
}

fn replay(
    image: &Path,
    dataset: &Path,
    modes: &[TracingMode],
    trials: u32,
    jobs: usize,
    out: &Path,
) -> Result<String, RunError> {
    let img = formats::read_image(image)?;
    let ds = formats::read_dataset(dataset)?;
    let runs = replay_timed(&ds, &img, modes, trials, jobs)?;
    let parts = out.join("parts");
    formats::clear_dir(&parts)?;
    formats::create_dir(&parts)?;
    for run in &runs {
        let (trial, mode) = (
            run.first().map_or(0, |r| r.trial),
            run.first().map(|r| r.mode.as_str()),
        );
        if let Some(mode) = mode {
            formats::write_timing(&parts.join(format!("timing_{mode}_{trial:04}.csv")), run)?;
        }
    }
    // Merge the part files, trial-major, by reading them back.
    let mut merged: Vec<TimingRecord> = Vec::new();
    for run in &runs {
        if let Some(r) = run.first() {
            let p = parts.join(format!("timing_{}_{:04}.csv", r.mode.as_str(), r.trial));
            merged.extend(formats::read_timing(&p)?);
        }
    }
    formats::write_timing(&out.join("timing.csv"), &merged)?;
    let mut line = format!("replay records={} trials={trials}", ds.len());
    for (m, mode) in modes.iter().enumerate() {
        let total: u64 = runs
            .iter()
            .skip(m)
            .step_by(modes.len())
            .flatten()
            .map(|r| r.total_ns)
            .sum();
        let per_case = total as f64 / (ds.len().max(1) as f64 * trials as f64);
        let _ = write!(line, " mean_ns.{}={per_case:.1}", mode.as_str());
    }
    Ok(line)
}

fn report_cmd(
    timing: &[PathBuf],
    trim: f64,
    stride: usize,
    out: &Path,
) -> Result<String, RunError> {
    let mut groups: Vec<(&'static str, Vec<TimingRecord>)> = Vec::new();
    for path in timing {
        for r in formats::read_timing(path)? {
            let name = r.mode.as_str();
            match groups.iter_mut().find(|(n, _)| *n == name) {
                Some((_, v)) => v.push(r),
                None => groups.push((name, vec![r])),
            }
        }
    }
    let base_at = groups
        .iter()
        .position(|(n, _)| *n == "baseline")
        .ok_or_else(|| RunError::Data("no baseline records among the timing files".into()))?;
    let (_, base) = groups.remove(base_at);
    let others: Vec<&[TimingRecord]> = groups.iter().map(|(_, v)| v.as_slice()).collect();
    let rep = report(&base, &others, trim)?;
    formats::write_report(&out.join("report.csv"), &rep)?;
    formats::write_rows(
        &out.join("comparisons.csv"),
        [
            "mode",
            "u",
            "p",
            "exact",
            "a12",
            "significant",
            "large_effect",
        ],
        rep.comparisons.iter().map(|c| {
            [
                c.mode.as_str().to_string(),
                c.mann_whitney.u.to_string(),
                c.mann_whitney.p.to_string(),
                c.mann_whitney.exact.to_string(),
                c.a12.to_string(),
                c.significant.to_string(),
                c.large_effect.to_string(),
            ]
        }),
    )?;
    formats::write_rows(
        &out.join("crossover.csv"),
        ["t_base", "t_trace", "c_extra", "crossover_rate"],
        rep.crossover.iter().map(|m| {
            [
                m.t_base().to_string(),
                m.t_trace().to_string(),
                m.c_extra().to_string(),
                m.crossover_rate().to_string(),
            ]
        }),
    )?;
    // Rate curves come from the first trial of each mode that has verdicts.
    let mut curve_rows = Vec::new();
    for (name, recs) in &groups {
        let Some(first) = recs.iter().map(|r| r.trial).min() else {
            continue;
        };
        let mut trial: Vec<&TimingRecord> = recs.iter().filter(|r| r.trial == first).collect();
        trial.sort_by_key(|r| r.testcase_id);
        let flags: Vec<bool> = trial
            .iter()
            .filter_map(|r| r.verdict)
            .map(|v| v == VerdictKind::CoverageIncreasing)
            .collect();
        if flags.is_empty() {
            continue;
        }
        for (i, r) in rate_curve(&flags, stride) {
            curve_rows.push([name.to_string(), i.to_string(), r.to_string()]);
        }
    }
    formats::write_rows(&out.join("rate.csv"), ["mode", "index", "rate"], curve_rows)?;

    let mut line = format!("report testcases={} trials={}", rep.testcases, rep.trials);
    for row in &rep.rows {
        let _ = write!(line, " rel.{}={:.4}", row.mode.as_str(), row.relative_time);
    }
    if let Some(m) = rep.crossover {
        let _ = write!(line, " crossover={:.4}", m.crossover_rate());
    }
    Ok(line)
}
