//! One test case, one tracing strategy.
//!
//! [`CoverageEngine`] owns the pristine program, the tracer, the optional
//! oracle and the global coverage set, and evaluates a single input under a
//! chosen [`EngineMode`]. The fuzz loop and the timed replay both go through
//! [`CoverageEngine::evaluate`], so the strategies they compare are literally
//! the same code. A [`Clock`] is threaded through to time the oracle-first
//! components; [`NoClock`] compiles the timing away.

use alloc::collections::BTreeSet;

use crate::cfg::BasicBlock;
use crate::oracle::{GlobalCoverage, OracleImage, VerdictKind};
use crate::tracer::{TraceLog, TracerImage};
use crate::vm::{execute, ExecBudget, OutcomeKind, ProgramImage};

/// Monotonic nanosecond source.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    #[inline(always)]
    fn now_ns(&self) -> u64 {
        0
    }
}

/// Per-component cost of handling one coverage-increasing test case under
/// oracle-first tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Components {
    pub trace_ns: u64,
    pub stop_ns: u64,
    pub unmodify_ns: u64,
    pub start_ns: u64,
}

impl Components {
    pub fn sum(&self) -> u64 {
        self.trace_ns + self.stop_ns + self.unmodify_ns + self.start_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineMode {
    /// Execute only; no coverage.
    Baseline,
    /// Trace every test case.
    TraceAll,
    /// Run on the oracle, trace only what traps.
    OracleFirst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    /// `None` under [`EngineMode::Baseline`].
    pub verdict: Option<VerdictKind>,
    /// How the program itself ended (never `Trap`).
    pub outcome: OutcomeKind,
    pub trace: Option<TraceLog>,
    pub new_blocks: usize,
    pub components: Option<Components>,
    /// Instructions the oracle executed, when it ran.
    pub oracle_instructions: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct CoverageEngine {
    pristine: ProgramImage,
    tracer: TracerImage,
    oracle: Option<OracleImage>,
    global: GlobalCoverage,
    excluded: BTreeSet<u32>,
    budget: ExecBudget,
}

fn verdict_from_outcome(outcome: OutcomeKind, new_blocks: usize) -> VerdictKind {
    if new_blocks > 0 {
        return VerdictKind::CoverageIncreasing;
    }
    match outcome {
        OutcomeKind::CleanExit => VerdictKind::NotInteresting,
        OutcomeKind::Timeout => VerdictKind::Timeout,
        OutcomeKind::Crash | OutcomeKind::Trap => VerdictKind::Crash,
    }
}

impl CoverageEngine {
    /// Builds the tracer, and the oracle when `with_oracle` is set.
    pub fn new(
        image: &ProgramImage,
        blocks: &[BasicBlock],
        excluded: &BTreeSet<u32>,
        budget: ExecBudget,
        with_oracle: bool,
    ) -> Self {
        CoverageEngine {
            pristine: image.clone(),
            tracer: TracerImage::new(image, blocks),
            oracle: with_oracle.then(|| OracleImage::new(image, blocks, excluded)),
            global: GlobalCoverage::new(image.len()),
            excluded: excluded.clone(),
            budget,
        }
    }

    pub fn pristine(&self) -> &ProgramImage {
        &self.pristine
    }

    pub fn global(&self) -> &GlobalCoverage {
        &self.global
    }

    pub fn oracle(&self) -> Option<&OracleImage> {
        self.oracle.as_ref()
    }

    pub fn tracer_mut(&mut self) -> &mut TracerImage {
        &mut self.tracer
    }

    pub fn budget(&self) -> ExecBudget {
        self.budget
    }

    pub fn block_count(&self) -> usize {
        self.tracer.block_count()
    }

    /// Folds a trace into global coverage, unmodifying the oracle if there is
    /// one. Returns (new blocks, stop, unmodify, start) with component times.
    fn absorb<C: Clock>(&mut self, trace: &TraceLog, clock: &C) -> (usize, u64, u64, u64) {
        match self.oracle.as_mut() {
            Some(oracle) => {
                let t0 = clock.now_ns();
                let mut stopped = oracle.stop_server();
                let t1 = clock.now_ns();
                let restored = stopped
                    .unmodify_blocks(&mut self.global, &trace.blocks)
                    .expect("the tracer only reports known block starts");
                let t2 = clock.now_ns();
                stopped.start_server();
                let t3 = clock.now_ns();
                (restored, t1 - t0, t2 - t1, t3 - t2)
            }
            None => {
                let mut restored = 0;
                for &b in &trace.blocks {
                    if !self.excluded.contains(&b) && self.global.insert(b) {
                        restored += 1;
                    }
                }
                (restored, 0, 0, 0)
            }
        }
    }

    pub fn evaluate<C: Clock>(&mut self, mode: EngineMode, input: &[u8], clock: &C) -> Evaluation {
        match mode {
            EngineMode::Baseline => {
                let out = execute(&self.pristine, input, self.budget);
                Evaluation {
                    verdict: None,
                    outcome: out.kind,
                    trace: None,
                    new_blocks: 0,
                    components: None,
                    oracle_instructions: None,
                }
            }
            EngineMode::TraceAll => {
                let trace = self.tracer.trace(input, self.budget);
                let (new_blocks, ..) = self.absorb(&trace, clock);
                Evaluation {
                    verdict: Some(verdict_from_outcome(trace.outcome.kind, new_blocks)),
                    outcome: trace.outcome.kind,
                    trace: Some(trace),
                    new_blocks,
                    components: None,
                    oracle_instructions: None,
                }
            }
            EngineMode::OracleFirst => {
                let oracle = self
                    .oracle
                    .as_ref()
                    .expect("oracle-first evaluation needs an engine built with an oracle");
                let verdict = oracle.check_interesting(input, self.budget);
                if verdict.kind != VerdictKind::CoverageIncreasing {
                    let outcome = match verdict.kind {
                        VerdictKind::NotInteresting => OutcomeKind::CleanExit,
                        VerdictKind::Crash => OutcomeKind::Crash,
                        _ => OutcomeKind::Timeout,
                    };
                    return Evaluation {
                        verdict: Some(verdict.kind),
                        outcome,
                        trace: None,
                        new_blocks: 0,
                        components: None,
                        oracle_instructions: Some(verdict.instructions_executed),
                    };
                }
                let t0 = clock.now_ns();
                let trace = self.tracer.trace(input, self.budget);
                let trace_ns = clock.now_ns() - t0;
                let (new_blocks, stop_ns, unmodify_ns, start_ns) = self.absorb(&trace, clock);
                debug_assert!(new_blocks > 0, "a trap always leads to a new block");
                Evaluation {
                    verdict: Some(VerdictKind::CoverageIncreasing),
                    outcome: trace.outcome.kind,
                    trace: Some(trace),
                    new_blocks,
                    components: Some(Components {
                        trace_ns,
                        stop_ns,
                        unmodify_ns,
                        start_ns,
                    }),
                    oracle_instructions: Some(verdict.instructions_executed),
                }
            }
        }
    }
}
