use cgt_core::stats::{
    crossover_rate, mann_whitney_u, trimmed_mean, vargha_delaney_a12, CrossoverModel,
};
use proptest::prelude::*;

/// Doubled U of `a` against `b` by direct pair counting.
fn doubled_u(a: &[f64], b: &[f64]) -> i64 {
    let mut u = 0;
    for x in a {
        for y in b {
            u += if x > y {
                2
            } else if x == y {
                1
            } else {
                0
            };
        }
    }
    u
}

/// Two-sided exact p-value: enumerate every way of labelling `n1` of the
/// pooled values as the first sample.
fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n1, n) = (a.len(), pooled.len());
    let centre = (a.len() * b.len()) as i64;
    let observed = (doubled_u(a, b) - centre).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                x.push(v)
            } else {
                y.push(v)
            }
        }
        total += 1;
        if (doubled_u(&x, &y) - centre).abs() >= observed {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

fn small_samples() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    // Few distinct values, so ties are common.
    let v = (0u8..6).prop_map(f64::from);
    (
        prop::collection::vec(v.clone(), 1..=8),
        prop::collection::vec(v, 1..=8),
    )
}

#[test]
fn exact_p_matches_enumeration_for_every_size_up_to_eight() {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for n1 in 1..=8 {
        for n2 in 1..=8 {
            for round in 0..4 {
                let spread = if round % 2 == 0 { 5 } else { 1000 };
                let a: Vec<f64> = (0..n1).map(|_| (next() % spread) as f64).collect();
                let b: Vec<f64> = (0..n2).map(|_| (next() % spread) as f64).collect();
                let mw = mann_whitney_u(&a, &b).unwrap();
                assert!(mw.exact);
                assert_eq!(2.0 * mw.u, doubled_u(&a, &b) as f64);
                let p = enumerated_p(&a, &b);
                assert!((mw.p - p).abs() <= 1e-9, "{a:?} {b:?}: {} vs {p}", mw.p);
            }
        }
    }
}

proptest! {
    #[test]
    fn exact_p_matches_enumeration((a, b) in small_samples()) {
        let mw = mann_whitney_u(&a, &b).unwrap();
        prop_assert!((mw.p - enumerated_p(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn a12_is_complementary_without_ties(
        mut a in prop::collection::btree_set(0u32..10_000, 1..20),
        b in prop::collection::btree_set(0u32..10_000, 1..20),
    ) {
        a.retain(|x| !b.contains(x));
        prop_assume!(!a.is_empty());
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = vargha_delaney_a12(&a, &b).unwrap();
        let ba = vargha_delaney_a12(&b, &a).unwrap();
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn a12_of_identical_samples_is_half(a in prop::collection::vec(-1e6f64..1e6, 1..30)) {
        prop_assert_eq!(vargha_delaney_a12(&a, &a).unwrap(), 0.5);
        let mw = mann_whitney_u(&a, &a).unwrap();
        prop_assert_eq!(mw.u, (a.len() * a.len()) as f64 / 2.0);
    }

    #[test]
    fn trimmed_mean_ignores_order(
        mut s in prop::collection::vec(-1e6f64..1e6, 1..40),
        trim in 0.0f64..0.49,
        seed in any::<u64>(),
    ) {
        let before = trimmed_mean(&s, trim).unwrap();
        let mut state = seed | 1;
        for i in (1..s.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            s.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(before, trimmed_mean(&s, trim).unwrap());
    }

    #[test]
    fn untrimmed_mean_is_the_mean(s in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let plain = s.iter().sum::<f64>() / s.len() as f64;
        prop_assert!((trimmed_mean(&s, 0.0).unwrap() - plain).abs() < 1e-9);
    }

    #[test]
    fn crossover_is_monotone(
        t_base in 0.1f64..10.0,
        gap in 0.0f64..10.0,
        c_extra in 0.1f64..100.0,
        more in 0.0f64..10.0,
    ) {
        let t_trace = t_base + gap;
        let m = CrossoverModel::new(t_base, t_trace, c_extra).unwrap();
        let costlier = CrossoverModel::new(t_base, t_trace, c_extra + more).unwrap();
        let slower = CrossoverModel::new(t_base, t_trace + more, c_extra).unwrap();
        prop_assert!(crossover_rate(&costlier) <= crossover_rate(&m));
        prop_assert!(crossover_rate(&slower) >= crossover_rate(&m));
        let r = crossover_rate(&m);
        prop_assert!((0.0..=1.0).contains(&r));
        if r < 1.0 {
            prop_assert!((m.oracle_cost(r) - t_trace).abs() < 1e-9 * t_trace.max(1.0));
        }
    }
}

#[test]
fn worked_values() {
    let nine: Vec<f64> = (1..=9).map(f64::from).collect();
    assert_eq!(trimmed_mean(&nine, 0.33).unwrap(), 5.0);
    let m = CrossoverModel::new(1.0, 1.36, 2.72).unwrap();
    assert!((crossover_rate(&m) - 0.36 / 2.72).abs() < 1e-12);
    assert!((crossover_rate(&m) - 0.1324).abs() < 1e-4);
    let free = CrossoverModel::new(1.0, 1.0, 2.0).unwrap();
    assert_eq!(crossover_rate(&free), 0.0);
    let huge = CrossoverModel::new(1.0, 1.36, 1e300).unwrap();
    assert!(crossover_rate(&huge) < 1e-299);
}
