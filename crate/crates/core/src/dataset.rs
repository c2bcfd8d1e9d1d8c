//! Pre-generated test-case streams and their timed replay.
//!
//! A dataset is recorded once with trace-all fuzzing and then replayed under
//! every tracing mode, so all modes see exactly the same test cases in the
//! same order. Replay timing goes through a [`Clock`]; only the evaluation of
//! each test case is timed, never setup.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cfg::{discover_blocks, CfgError};
use crate::engine::{Clock, Components, CoverageEngine};
use crate::fuzzer::{FuzzConfig, FuzzError, Fuzzer, ModeSelector, TracingMode};
use crate::oracle::VerdictKind;
use crate::vm::{ExecBudget, ProgramImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub image_checksum: u64,
    pub rng_seed: u64,
    /// Tracing mode the stream was generated under.
    pub mode: &'static str,
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// Test cases in generation order, seeds first.
    pub records: Vec<Vec<u8>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Records the first `n` test cases (seeds included) of a trace-all session.
/// Also returns the ids flagged coverage-increasing during recording.
pub fn record_dataset(
    image: &ProgramImage,
    seeds: &[Vec<u8>],
    rng_seed: u64,
    n: usize,
    budget: ExecBudget,
) -> Result<(Dataset, Vec<u64>), FuzzError> {
    let config = FuzzConfig {
        budget,
        ..FuzzConfig::new(TracingMode::TraceAll, rng_seed)
    };
    let mut fuzzer = Fuzzer::new(image, config, seeds)?;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        records.push(fuzzer.step().0.bytes);
    }
    let dataset = Dataset {
        records,
        meta: DatasetMeta {
            image_checksum: image.checksum(),
            rng_seed,
            mode: TracingMode::TraceAll.as_str(),
            budget: budget.max_instructions(),
        },
    };
    Ok((dataset, fuzzer.coverage_ids().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRecord {
    pub trial: u32,
    pub testcase_id: u64,
    pub mode: TracingMode,
    /// Absent under baseline.
    pub verdict: Option<VerdictKind>,
    pub total_ns: u64,
    /// Present for coverage-increasing test cases under oracle-first.
    pub components: Option<Components>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("dataset was recorded on image {expected:016x}, not {found:016x}")]
    ChecksumMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
}

/// Replays `dataset` once under `mode` from a fresh engine.
pub fn replay_trial<C: Clock>(
    dataset: &Dataset,
    image: &ProgramImage,
    mode: TracingMode,
    trial: u32,
    clock: &C,
) -> Result<Vec<TimingRecord>, ReplayError> {
    let found = image.checksum();
    if found != dataset.meta.image_checksum {
        return Err(ReplayError::ChecksumMismatch {
            expected: dataset.meta.image_checksum,
            found,
        });
    }
    mode.validate()?;
    let budget = ExecBudget::new(dataset.meta.budget).unwrap_or_default();
    let blocks = discover_blocks(image)?;
    let with_oracle = matches!(mode, TracingMode::OracleFirst | TracingMode::Hybrid { .. });
    let mut engine = CoverageEngine::new(image, &blocks, &BTreeSet::new(), budget, with_oracle);
    let mut selector = ModeSelector::new(mode);
    let mut out = Vec::with_capacity(dataset.len());
    for (id, input) in dataset.records.iter().enumerate() {
        let engine_mode = selector.current();
        let t0 = clock.now_ns();
        let eval = engine.evaluate(engine_mode, input, clock);
        let total_ns = clock.now_ns() - t0;
        selector.record(eval.verdict);
        out.push(TimingRecord {
            trial,
            testcase_id: id as u64,
            mode,
            verdict: eval.verdict,
            total_ns,
            components: eval.components,
        });
    }
    Ok(out)
}

/// `trials` sequential replays.
pub fn replay<C: Clock>(
    dataset: &Dataset,
    image: &ProgramImage,
    mode: TracingMode,
    trials: u32,
    clock: &C,
) -> Result<Vec<Vec<TimingRecord>>, ReplayError> {
    (0..trials)
        .map(|t| replay_trial(dataset, image, mode, t, clock))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::NoClock;
    use crate::gen::{generate, BenchKind};

    #[test]
    fn n_one_is_the_first_seed() {
        let bench = generate(BenchKind::Maze, 16, 0).unwrap();
        let (ds, ids) =
            record_dataset(&bench.image, &bench.seeds, 1, 1, ExecBudget::default()).unwrap();
        assert_eq!(ds.records, bench.seeds[..1].to_vec());
        assert_eq!(ids, [0]);
        assert_eq!(ds.meta.mode, "trace-all");
    }

    #[test]
    fn recording_is_deterministic_and_replay_reproduces_verdicts() {
        let bench = generate(BenchKind::Parser, 32, 4).unwrap();
        let budget = ExecBudget::default();
        let (a, ids) = record_dataset(&bench.image, &bench.seeds, 8, 3000, budget).unwrap();
        let (b, _) = record_dataset(&bench.image, &bench.seeds, 8, 3000, budget).unwrap();
        assert_eq!(a, b);
        for mode in [TracingMode::TraceAll, TracingMode::OracleFirst] {
            let recs = replay_trial(&a, &bench.image, mode, 0, &NoClock).unwrap();
            let flagged: Vec<u64> = recs
                .iter()
                .filter(|r| r.verdict == Some(VerdictKind::CoverageIncreasing))
                .map(|r| r.testcase_id)
                .collect();
            assert_eq!(flagged, ids);
            for r in &recs {
                let ci = r.verdict == Some(VerdictKind::CoverageIncreasing);
                assert_eq!(
                    r.components.is_some(),
                    ci && mode == TracingMode::OracleFirst
                );
            }
        }
        let base = replay_trial(&a, &bench.image, TracingMode::Baseline, 0, &NoClock).unwrap();
        assert!(base
            .iter()
            .all(|r| r.verdict.is_none() && r.components.is_none()));
    }

    #[test]
    fn checksum_mismatch() {
        let bench = generate(BenchKind::Maze, 16, 0).unwrap();
        let other = generate(BenchKind::Maze, 16, 1).unwrap();
        let (ds, _) =
            record_dataset(&bench.image, &bench.seeds, 1, 10, ExecBudget::default()).unwrap();
        assert!(matches!(
            replay_trial(&ds, &other.image, TracingMode::Baseline, 0, &NoClock),
            Err(ReplayError::ChecksumMismatch { .. })
        ));
    }
}
