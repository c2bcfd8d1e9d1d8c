//! Mutational fuzz loop with interchangeable tracing strategies.
//!
//! Seeds run first, as ordinary test cases, and always enter the queue. After
//! that each step mutates the next queue entry (round-robin), evaluates the
//! result and queues it iff it exited cleanly and added coverage. Crashes are
//! bucketed by the block set of their trace; timeouts are only counted.
//!
//! Under [`TracingMode::OracleFirst`] a step is: run on the oracle; on a trap,
//! trace, stop the oracle, unmodify the new blocks, restart it, enqueue.
//! [`TracingMode::TraceAll`] traces every test case instead. Both flag exactly
//! the same test cases for the same stream.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use thiserror::Error;

use crate::cfg::{discover_blocks, CfgError};
use crate::engine::{CoverageEngine, EngineMode, Evaluation, NoClock};
use crate::hash::fnv1a;
use crate::mutate::{mutate, Mutation};
use crate::oracle::{GlobalCoverage, OracleImage, VerdictKind};
use crate::rng::FuzzRng;
use crate::tracer::{TraceLog, TracerImage};
use crate::vm::{execute, ExecBudget, OutcomeKind, ProgramImage};

/// Test cases kept per crash bucket.
pub const MAX_CRASHES_PER_BUCKET: usize = 4;

/// Default hybrid rate window, in executions.
pub const DEFAULT_HYBRID_WINDOW: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TracingMode {
    Baseline,
    TraceAll,
    OracleFirst,
    /// Oracle-first while the rolling coverage-increasing rate is below
    /// `threshold`, trace-all otherwise.
    Hybrid {
        threshold: f64,
        window: u32,
    },
}

impl TracingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TracingMode::Baseline => "baseline",
            TracingMode::TraceAll => "trace-all",
            TracingMode::OracleFirst => "oracle",
            TracingMode::Hybrid { .. } => "hybrid",
        }
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        if let TracingMode::Hybrid { threshold, window } = *self {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(FuzzError::InvalidMode("threshold must lie in [0, 1]"));
            }
            if window == 0 {
                return Err(FuzzError::InvalidMode("window must be at least 1"));
            }
        }
        Ok(())
    }

    fn needs_oracle(&self) -> bool {
        matches!(self, TracingMode::OracleFirst | TracingMode::Hybrid { .. })
    }
}

/// Coverage-increasing rate over the last `window` test cases. Slots before
/// the first test case count as not coverage-increasing.
#[derive(Debug, Clone)]
pub struct RateWindow {
    recent: VecDeque<bool>,
    window: usize,
    hits: usize,
}

impl RateWindow {
    pub fn new(window: u32) -> Self {
        RateWindow {
            recent: VecDeque::with_capacity(window as usize),
            window: window.max(1) as usize,
            hits: 0,
        }
    }

    pub fn push(&mut self, coverage_increasing: bool) {
        if self.recent.len() == self.window && self.recent.pop_front() == Some(true) {
            self.hits -= 1;
        }
        self.recent.push_back(coverage_increasing);
        self.hits += coverage_increasing as usize;
    }

    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.window as f64
    }

    pub fn select(&self, threshold: f64) -> EngineMode {
        if self.rate() < threshold {
            EngineMode::OracleFirst
        } else {
            EngineMode::TraceAll
        }
    }
}

/// Resolves the engine mode for the next test case.
#[derive(Debug, Clone)]
pub struct ModeSelector {
    mode: TracingMode,
    window: Option<RateWindow>,
}

impl ModeSelector {
    pub fn new(mode: TracingMode) -> Self {
        let window = match mode {
            TracingMode::Hybrid { window, .. } => Some(RateWindow::new(window)),
            _ => None,
        };
        ModeSelector { mode, window }
    }

    pub fn current(&self) -> EngineMode {
        match (self.mode, &self.window) {
            (TracingMode::Baseline, _) => EngineMode::Baseline,
            (TracingMode::TraceAll, _) => EngineMode::TraceAll,
            (TracingMode::OracleFirst, _) => EngineMode::OracleFirst,
            (TracingMode::Hybrid { threshold, .. }, Some(w)) => w.select(threshold),
            (TracingMode::Hybrid { .. }, None) => unreachable!(),
        }
    }

    pub fn record(&mut self, verdict: Option<VerdictKind>) {
        if let Some(w) = self.window.as_mut() {
            w.push(verdict == Some(VerdictKind::CoverageIncreasing));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TestCase {
    pub bytes: Vec<u8>,
    pub id: u64,
    pub parent: Option<u64>,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEntry {
    pub testcase: TestCase,
    pub new_blocks: usize,
    pub cov_tag: bool,
}

impl AsRef<[u8]> for SeedEntry {
    fn as_ref(&self) -> &[u8] {
        &self.testcase.bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuzzStats {
    pub executed: u64,
    pub coverage_increasing: u64,
    pub crashes_total: u64,
    pub crashes_unique: u64,
    pub timeouts: u64,
    pub covered_blocks: u64,
    pub total_blocks: u64,
    pub queued: u64,
    pub oracle_runs: u64,
    pub tracer_runs: u64,
    pub plain_runs: u64,
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub mode: TracingMode,
    pub budget: ExecBudget,
    pub rng_seed: u64,
    pub excluded: BTreeSet<u32>,
}

impl FuzzConfig {
    pub fn new(mode: TracingMode, rng_seed: u64) -> Self {
        FuzzConfig {
            mode,
            budget: ExecBudget::default(),
            rng_seed,
            excluded: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedProblem {
    Empty,
    TooLong,
    Timeout,
    Trap,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuzzError {
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("seed {index} is unusable: {problem:?}")]
    InvalidSeed { index: usize, problem: SeedProblem },
    #[error("invalid tracing mode: {0}")]
    InvalidMode(&'static str),
    #[error("test case did not crash")]
    NotACrash,
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

/// What happened to one test case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub id: u64,
    pub engine_mode: EngineMode,
    pub verdict: Option<VerdictKind>,
    pub outcome: OutcomeKind,
    pub new_blocks: usize,
    pub oracle_instructions: Option<u64>,
    pub crash_bucket: Option<u64>,
}

/// Dedupe key of a crash: hash of its sorted block set.
pub fn crash_bucket(trace: &TraceLog) -> u64 {
    let mut blocks = trace.blocks.clone();
    blocks.sort_unstable();
    let bytes: Vec<u8> = blocks.iter().flat_map(|b| b.to_le_bytes()).collect();
    fnv1a(&[&bytes])
}

/// Traces a crashing input and returns its bucket.
pub fn triage_crash(
    tracer: &mut TracerImage,
    input: &[u8],
    budget: ExecBudget,
) -> Result<u64, FuzzError> {
    let trace = tracer.trace(input, budget);
    if trace.outcome.kind != OutcomeKind::Crash {
        return Err(FuzzError::NotACrash);
    }
    Ok(crash_bucket(&trace))
}

#[derive(Debug, Clone)]
pub struct Fuzzer {
    engine: CoverageEngine,
    selector: ModeSelector,
    rng: FuzzRng,
    pending_seeds: VecDeque<Vec<u8>>,
    queue: Vec<SeedEntry>,
    cursor: usize,
    next_id: u64,
    stats: FuzzStats,
    crashes: BTreeMap<u64, Vec<TestCase>>,
    coverage_ids: Vec<u64>,
    input_len_max: usize,
}

impl Fuzzer {
    pub fn new(
        image: &ProgramImage,
        config: FuzzConfig,
        seeds: &[Vec<u8>],
    ) -> Result<Self, FuzzError> {
        config.mode.validate()?;
        if seeds.is_empty() {
            return Err(FuzzError::NoSeeds);
        }
        for (index, seed) in seeds.iter().enumerate() {
            let problem = if seed.is_empty() {
                Some(SeedProblem::Empty)
            } else if seed.len() > image.input_len_max() {
                Some(SeedProblem::TooLong)
            } else {
                match execute(image, seed, config.budget).kind {
                    OutcomeKind::Timeout => Some(SeedProblem::Timeout),
                    OutcomeKind::Trap => Some(SeedProblem::Trap),
                    _ => None,
                }
            };
            if let Some(problem) = problem {
                return Err(FuzzError::InvalidSeed { index, problem });
            }
        }
        let blocks = discover_blocks(image)?;
        let engine = CoverageEngine::new(
            image,
            &blocks,
            &config.excluded,
            config.budget,
            config.mode.needs_oracle(),
        );
        let stats = FuzzStats {
            total_blocks: blocks.len() as u64,
            ..FuzzStats::default()
        };
        Ok(Fuzzer {
            engine,
            selector: ModeSelector::new(config.mode),
            rng: FuzzRng::new(config.rng_seed),
            pending_seeds: seeds.iter().cloned().collect(),
            queue: Vec::new(),
            cursor: 0,
            next_id: 0,
            stats,
            crashes: BTreeMap::new(),
            coverage_ids: Vec::new(),
            input_len_max: image.input_len_max(),
        })
    }

    pub fn stats(&self) -> &FuzzStats {
        &self.stats
    }

    pub fn queue(&self) -> &[SeedEntry] {
        &self.queue
    }

    /// Crash bucket → saved crashing test cases.
    pub fn crashes(&self) -> &BTreeMap<u64, Vec<TestCase>> {
        &self.crashes
    }

    /// Ids of every coverage-increasing test case, in execution order.
    pub fn coverage_ids(&self) -> &[u64] {
        &self.coverage_ids
    }

    pub fn global(&self) -> &GlobalCoverage {
        self.engine.global()
    }

    pub fn oracle(&self) -> Option<&OracleImage> {
        self.engine.oracle()
    }

    pub fn engine(&self) -> &CoverageEngine {
        &self.engine
    }

    fn next_testcase(&mut self) -> TestCase {
        let id = self.next_id;
        self.next_id += 1;
        if let Some(bytes) = self.pending_seeds.pop_front() {
            return TestCase {
                bytes,
                id,
                parent: None,
                mutation: Mutation::Seed,
            };
        }
        let parent = &self.queue[self.cursor];
        self.cursor = (self.cursor + 1) % self.queue.len();
        let (bytes, mutation) = mutate(
            &parent.testcase.bytes,
            &mut self.rng,
            &self.queue,
            self.input_len_max,
        );
        TestCase {
            bytes,
            id,
            parent: Some(parent.testcase.id),
            mutation,
        }
    }

    fn record_crash(&mut self, tc: &TestCase, eval: &Evaluation) -> u64 {
        let bucket = match &eval.trace {
            Some(trace) => crash_bucket(trace),
            None => {
                self.stats.tracer_runs += 1;
                let budget = self.engine.budget();
                triage_crash(self.engine.tracer_mut(), &tc.bytes, budget)
                    .expect("the pristine program crashed on this input")
            }
        };
        let saved = self.crashes.entry(bucket).or_default();
        if saved.len() < MAX_CRASHES_PER_BUCKET {
            saved.push(tc.clone());
        }
        self.stats.crashes_unique = self.crashes.len() as u64;
        bucket
    }

    /// Generates, evaluates and files one test case.
    pub fn step(&mut self) -> (TestCase, StepReport) {
        let tc = self.next_testcase();
        let engine_mode = self.selector.current();
        let eval = self.engine.evaluate(engine_mode, &tc.bytes, &NoClock);
        self.selector.record(eval.verdict);

        let stats = &mut self.stats;
        stats.executed += 1;
        match engine_mode {
            EngineMode::Baseline => stats.plain_runs += 1,
            EngineMode::TraceAll => stats.tracer_runs += 1,
            EngineMode::OracleFirst => {
                stats.oracle_runs += 1;
                stats.tracer_runs += eval.trace.is_some() as u64;
            }
        }
        if eval.verdict == Some(VerdictKind::CoverageIncreasing) {
            stats.coverage_increasing += 1;
            self.coverage_ids.push(tc.id);
        }
        stats.covered_blocks = self.engine.global().len() as u64;

        let mut crash_bucket = None;
        match eval.outcome {
            OutcomeKind::Timeout => self.stats.timeouts += 1,
            OutcomeKind::Crash => {
                self.stats.crashes_total += 1;
                if engine_mode != EngineMode::Baseline {
                    crash_bucket = Some(self.record_crash(&tc, &eval));
                }
            }
            _ => {}
        }

        let seed = tc.mutation == Mutation::Seed;
        let admit = seed || (eval.outcome == OutcomeKind::CleanExit && eval.new_blocks > 0);
        if admit {
            self.queue.push(SeedEntry {
                testcase: tc.clone(),
                new_blocks: eval.new_blocks,
                cov_tag: eval.new_blocks > 0,
            });
            self.stats.queued = self.queue.len() as u64;
        }

        let report = StepReport {
            id: tc.id,
            engine_mode,
            verdict: eval.verdict,
            outcome: eval.outcome,
            new_blocks: eval.new_blocks,
            oracle_instructions: eval.oracle_instructions,
            crash_bucket,
        };
        (tc, report)
    }

    /// Steps until `stop` returns true (checked before every test case).
    pub fn run_until(&mut self, mut stop: impl FnMut(&FuzzStats) -> bool) {
        while !stop(&self.stats) {
            self.step();
        }
    }

    /// Runs until `max_testcases` test cases (seeds included) have executed.
    pub fn run(&mut self, max_testcases: u64) {
        self.run_until(|s| s.executed >= max_testcases);
    }
}

/// Convenience wrapper: builds a fuzzer, runs `max_testcases` and returns it.
pub fn fuzz_loop(
    image: &ProgramImage,
    config: FuzzConfig,
    seeds: &[Vec<u8>],
    max_testcases: u64,
) -> Result<Fuzzer, FuzzError> {
    let mut fuzzer = Fuzzer::new(image, config, seeds)?;
    fuzzer.run(max_testcases);
    Ok(fuzzer)
}
