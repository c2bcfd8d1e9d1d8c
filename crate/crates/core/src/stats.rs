//! Denoising, rate curves, the crossover cost model and rank statistics.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Default fraction trimmed from each end of a sample.
pub const DEFAULT_TRIM: f64 = 0.33;

/// Â12 at or above this is conventionally a large effect.
pub const LARGE_EFFECT_A12: f64 = 0.71;

/// Conventional significance level for reporting.
pub const SIGNIFICANCE: f64 = 0.05;

/// Largest combined sample size for which p-values are exact.
pub const EXACT_MAX_TOTAL: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("trim fraction must lie in [0, 0.5)")]
    InvalidTrim,
    #[error("cost model inputs must be finite and strictly positive")]
    NonPositiveModel,
}

/// Mean after dropping `floor(trim * n)` samples from each end.
pub fn trimmed_mean(samples: &[f64], trim: f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(StatsError::InvalidTrim);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = libm::floor(trim * sorted.len() as f64) as usize;
    let kept = &sorted[k..sorted.len() - k];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Cumulative rate of `true` flags: points `(i, hits_in_first_i / i)` at
/// every `stride`-th index (1-based) and at the last one.
pub fn rate_curve(flags: &[bool], stride: usize) -> Vec<(usize, f64)> {
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(flags.len() / stride + 1);
    let mut hits = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        hits += f as usize;
        let n = i + 1;
        if n % stride == 0 || n == flags.len() {
            out.push((n, hits as f64 / n as f64));
        }
    }
    out
}

/// Linear expected-cost model: oracle-first costs `t_base + r * c_extra` per
/// test case at coverage-increasing rate `r`, trace-all costs `t_trace`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverModel {
    t_base: f64,
    t_trace: f64,
    c_extra: f64,
}

impl CrossoverModel {
    pub fn new(t_base: f64, t_trace: f64, c_extra: f64) -> Result<Self, StatsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(t_base) && ok(t_trace) && ok(c_extra) {
            Ok(CrossoverModel {
                t_base,
                t_trace,
                c_extra,
            })
        } else {
            Err(StatsError::NonPositiveModel)
        }
    }

    pub fn t_base(&self) -> f64 {
        self.t_base
    }

    pub fn t_trace(&self) -> f64 {
        self.t_trace
    }

    pub fn c_extra(&self) -> f64 {
        self.c_extra
    }

    /// Expected oracle-first cost per test case at rate `r`.
    pub fn oracle_cost(&self, r: f64) -> f64 {
        self.t_base + r * self.c_extra
    }

    /// The rate at which both strategies cost the same, clamped to [0, 1].
    pub fn crossover_rate(&self) -> f64 {
        ((self.t_trace - self.t_base) / self.c_extra).clamp(0.0, 1.0)
    }
}

pub fn crossover_rate(model: &CrossoverModel) -> f64 {
    model.crossover_rate()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U for the first sample: pairs where it is larger, ties counting half.
    pub u: f64,
    /// Two-sided.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, plus the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Mann–Whitney U test. Exact over all rank assignments when the
/// combined size is at most [`EXACT_MAX_TOTAL`], otherwise the normal
/// approximation with tie and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;

    if n <= EXACT_MAX_TOTAL {
        // Doubled midranks are integers, so the null distribution of the
        // doubled rank sum is counted exactly.
        let doubled: Vec<usize> = ranks.iter().map(|&r| (2.0 * r) as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        // ways[k][s]: subsets of size k with doubled rank sum s.
        let mut ways = vec![vec![0u64; max_sum + 1]; n1 + 1];
        ways[0][0] = 1;
        for &d in &doubled {
            for k in (1..=n1).rev() {
                for s in (d..=max_sum).rev() {
                    ways[k][s] += ways[k - 1][s - d];
                }
            }
        }
        let centre = (n1 * (n + 1)) as i64;
        let observed: i64 = doubled[..n1].iter().sum::<usize>() as i64;
        let dev = (observed - centre).abs();
        let (mut extreme, mut total) = (0u64, 0u64);
        for (s, &w) in ways[n1].iter().enumerate() {
            total += w;
            if (s as i64 - centre).abs() >= dev {
                extreme += w;
            }
        }
        return Ok(MannWhitney {
            u,
            p: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let mean = n1f * n2f / 2.0;
    let tie_term: f64 =
        ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / libm::sqrt(var);
        libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney { u, p, exact: false })
}

/// Vargha–Delaney Â12: probability that a draw from `a` exceeds one from
/// `b`, ties counting half.
pub fn vargha_delaney_a12(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        score += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(score / (a.len() * b.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimmed_mean_rules() {
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(trimmed_mean(&nine, 0.33).unwrap(), 5.0);
        assert_eq!(trimmed_mean(&[4.0; 7], 0.33).unwrap(), 4.0);
        assert_eq!(trimmed_mean(&[1.0, 4.0], 0.33).unwrap(), 2.5);
        assert_eq!(trimmed_mean(&[1.0, 2.0, 100.0], 0.0).unwrap(), 103.0 / 3.0);
        assert_eq!(trimmed_mean(&[], 0.1), Err(StatsError::EmptySamples));
        assert_eq!(trimmed_mean(&[1.0], 0.5), Err(StatsError::InvalidTrim));
    }

    #[test]
    fn rate_curves() {
        assert!(rate_curve(&[true; 50], 7).iter().all(|&(_, r)| r == 1.0));
        let mut flags = [false; 100];
        flags[0] = true;
        let curve = rate_curve(&flags, 10);
        assert_eq!(curve.first(), Some(&(10, 0.1)));
        assert_eq!(curve.last(), Some(&(100, 0.01)));
        assert_eq!(rate_curve(&flags[..15], 10).last(), Some(&(15, 1.0 / 15.0)));
    }

    #[test]
    fn crossover_cases() {
        let m = CrossoverModel::new(1.0, 1.36, 2.72).unwrap();
        assert!((m.crossover_rate() - 0.36 / 2.72).abs() < 1e-12);
        assert!((m.crossover_rate() - 0.1324).abs() < 1e-4);
        assert_eq!(
            CrossoverModel::new(1.0, 1.0, 3.0).unwrap().crossover_rate(),
            0.0
        );
        assert_eq!(
            CrossoverModel::new(2.0, 1.0, 3.0).unwrap().crossover_rate(),
            0.0
        );
        assert!(
            CrossoverModel::new(1.0, 2.0, 1e300)
                .unwrap()
                .crossover_rate()
                < 1e-299
        );
        assert_eq!(
            CrossoverModel::new(1.0, 9.0, 2.0).unwrap().crossover_rate(),
            1.0
        );
        assert_eq!(
            CrossoverModel::new(0.0, 1.0, 1.0),
            Err(StatsError::NonPositiveModel)
        );
        assert_eq!(
            CrossoverModel::new(1.0, f64::NAN, 1.0),
            Err(StatsError::NonPositiveModel)
        );
    }

    #[test]
    fn mann_whitney_basics() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        // Two of the twenty rank assignments are this extreme.
        assert!((r.p - 0.1).abs() < 1e-15);
        let same = mann_whitney_u(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.u, 4.5);
        assert_eq!(same.p, 1.0);
        let all_tied = mann_whitney_u(&[1.0; 15], &[1.0; 15]).unwrap();
        assert_eq!(
            (all_tied.u, all_tied.p, all_tied.exact),
            (112.5, 1.0, false)
        );
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_the_boundary() {
        // 10 + 10 is exact; 10 + 11 switches to the approximation. Both
        // should land in the same neighbourhood for a moderate shift.
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 4.5).collect();
        let exact = mann_whitney_u(&a, &b).unwrap();
        let mut b2 = b.clone();
        b2.push(14.5);
        let approx = mann_whitney_u(&a, &b2).unwrap();
        assert!(exact.exact && !approx.exact);
        assert!(
            (exact.p - approx.p).abs() < 0.05,
            "{} vs {}",
            exact.p,
            approx.p
        );
    }

    #[test]
    fn a12_cases() {
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(vargha_delaney_a12(&[5.0, 6.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(vargha_delaney_a12(&[0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(vargha_delaney_a12(&[2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(
            vargha_delaney_a12(&[], &[1.0]),
            Err(StatsError::EmptySamples)
        );
    }
}
