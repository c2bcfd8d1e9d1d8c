//! Overhead aggregation across replay modes.
//!
//! For each mode: per test case, the trimmed mean of `total_ns` across
//! trials; then the mean over test cases, divided by the same figure for the
//! baseline. Component fractions are averaged over coverage-increasing test
//! cases, each fraction being the trimmed-mean component time over the
//! trimmed-mean total. Per-trial totals feed the rank tests against baseline.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dataset::TimingRecord;
use crate::fuzzer::TracingMode;
use crate::oracle::VerdictKind;
use crate::stats::{
    mann_whitney_u, trimmed_mean, vargha_delaney_a12, CrossoverModel, MannWhitney, StatsError,
    LARGE_EFFECT_A12, SIGNIFICANCE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("no baseline records")]
    MissingBaseline,
    #[error("baseline mean time is zero")]
    ZeroBaseline,
    #[error("records for {0} cover different test cases than the baseline")]
    MismatchedDatasets(&'static str),
    #[error("records for {0} mix several modes")]
    MixedModes(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Trace, stop, unmodify and start, as fractions of total time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Breakdown {
    pub trace: f64,
    pub stop: f64,
    pub unmodify: f64,
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub mode: TracingMode,
    /// Mean over test cases of the per-test-case trimmed mean, in ns.
    pub mean_ns: f64,
    pub relative_time: f64,
    /// Fraction of test cases flagged coverage-increasing; `None` under
    /// baseline.
    pub rate: Option<f64>,
    /// `None` unless some test case carries components.
    pub breakdown: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub mode: TracingMode,
    pub mann_whitney: MannWhitney,
    /// Â12 of this mode's per-trial totals against baseline's.
    pub a12: f64,
    pub significant: bool,
    pub large_effect: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub testcases: usize,
    pub trials: usize,
    /// Baseline first, then the other modes in input order.
    pub rows: Vec<ModeRow>,
    pub comparisons: Vec<Comparison>,
    /// Fitted when baseline, trace-all and oracle-first are all present and
    /// the fitted costs are positive.
    pub crossover: Option<CrossoverModel>,
}

impl OverheadReport {
    pub fn row(&self, mode: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.mode.as_str() == mode)
    }
}

struct Summary {
    mode: TracingMode,
    per_case: BTreeMap<u64, f64>,
    verdicts: BTreeMap<u64, Option<VerdictKind>>,
    trial_totals: Vec<f64>,
    breakdown: Option<Breakdown>,
}

fn summarize(records: &[TimingRecord], trim: f64) -> Result<Summary, ReportError> {
    let mode = records[0].mode;
    if records.iter().any(|r| r.mode != mode) {
        return Err(ReportError::MixedModes(mode.as_str()));
    }
    let mut totals: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut comps: BTreeMap<u64, [Vec<f64>; 4]> = BTreeMap::new();
    let mut verdicts = BTreeMap::new();
    let mut trial_totals: BTreeMap<u32, f64> = BTreeMap::new();
    for r in records {
        totals
            .entry(r.testcase_id)
            .or_default()
            .push(r.total_ns as f64);
        verdicts.entry(r.testcase_id).or_insert(r.verdict);
        *trial_totals.entry(r.trial).or_default() += r.total_ns as f64;
        if let Some(c) = r.components {
            let slot = comps.entry(r.testcase_id).or_default();
            for (v, x) in slot
                .iter_mut()
                .zip([c.trace_ns, c.stop_ns, c.unmodify_ns, c.start_ns])
            {
                v.push(x as f64);
            }
        }
    }
    let mut per_case = BTreeMap::new();
    for (&id, samples) in &totals {
        per_case.insert(id, trimmed_mean(samples, trim)?);
    }
    let mut breakdown = None;
    if !comps.is_empty() {
        let mut acc = [0.0f64; 4];
        let mut n = 0usize;
        for (id, parts) in &comps {
            let total = per_case[id];
            if total <= 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(parts) {
                *a += trimmed_mean(v, trim)? / total;
            }
            n += 1;
        }
        if n > 0 {
            let n = n as f64;
            breakdown = Some(Breakdown {
                trace: acc[0] / n,
                stop: acc[1] / n,
                unmodify: acc[2] / n,
                start: acc[3] / n,
            });
        }
    }
    Ok(Summary {
        mode,
        per_case,
        verdicts,
        trial_totals: trial_totals.into_values().collect(),
        breakdown,
    })
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// Aggregates `baseline` and each slice of `modes` (one mode per slice, any
/// number of trials) into an [`OverheadReport`].
pub fn report(
    baseline: &[TimingRecord],
    modes: &[&[TimingRecord]],
    trim: f64,
) -> Result<OverheadReport, ReportError> {
    if baseline.is_empty() {
        return Err(ReportError::MissingBaseline);
    }
    let base = summarize(baseline, trim)?;
    let base_mean = mean(base.per_case.values().copied());
    if base_mean <= 0.0 {
        return Err(ReportError::ZeroBaseline);
    }
    let mut summaries = Vec::new();
    for records in modes {
        if records.is_empty() {
            continue;
        }
        let s = summarize(records, trim)?;
        if !s.per_case.keys().eq(base.per_case.keys()) {
            return Err(ReportError::MismatchedDatasets(s.mode.as_str()));
        }
        summaries.push(s);
    }

    let row = |s: &Summary| {
        let mean_ns = mean(s.per_case.values().copied());
        let rate = (s.mode != TracingMode::Baseline).then(|| {
            let hits = s
                .verdicts
                .values()
                .filter(|v| **v == Some(VerdictKind::CoverageIncreasing))
                .count();
            hits as f64 / s.verdicts.len() as f64
        });
        ModeRow {
            mode: s.mode,
            mean_ns,
            relative_time: mean_ns / base_mean,
            rate,
            breakdown: s.breakdown,
        }
    };
    let mut rows = vec![row(&base)];
    let mut comparisons = Vec::new();
    for s in &summaries {
        rows.push(row(s));
        if s.mode == TracingMode::Baseline {
            continue;
        }
        let mw = mann_whitney_u(&s.trial_totals, &base.trial_totals)?;
        let a12 = vargha_delaney_a12(&s.trial_totals, &base.trial_totals)?;
        comparisons.push(Comparison {
            mode: s.mode,
            mann_whitney: mw,
            a12,
            significant: mw.p < SIGNIFICANCE,
            large_effect: a12 >= LARGE_EFFECT_A12 || a12 <= 1.0 - LARGE_EFFECT_A12,
        });
    }

    let crossover = fit_crossover(&base, base_mean, &summaries);
    Ok(OverheadReport {
        testcases: base.per_case.len(),
        trials: base.trial_totals.len(),
        rows,
        comparisons,
        crossover,
    })
}

/// `t_base` and `t_trace` are per-test-case means; `c_extra` is the mean
/// oracle-first time of coverage-increasing test cases minus `t_base`.
fn fit_crossover(base: &Summary, base_mean: f64, modes: &[Summary]) -> Option<CrossoverModel> {
    let trace = modes.iter().find(|s| s.mode == TracingMode::TraceAll)?;
    let oracle = modes.iter().find(|s| s.mode == TracingMode::OracleFirst)?;
    let t_trace = mean(trace.per_case.values().copied());
    let ci: Vec<f64> = oracle
        .per_case
        .iter()
        .filter(|(id, _)| oracle.verdicts[id] == Some(VerdictKind::CoverageIncreasing))
        .map(|(_, &t)| t)
        .collect();
    if ci.is_empty() {
        return None;
    }
    let c_extra = mean(ci.iter().copied()) - base_mean;
    debug_assert!(base.per_case.len() == oracle.per_case.len());
    CrossoverModel::new(base_mean, t_trace, c_extra).ok()
}
