use asyncrl_core::metrics::{pass_at_k_counts, select_tool_queries, tool_necessity, ToolThresholds};
use proptest::prelude::*;

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `1 - C(n-c,k)/C(n,k)` as a reduced fraction, divided once.
fn oracle(n: u64, c: u64, k: u64) -> f64 {
    let den = binomial(n, k);
    let num = den - binomial(n - c, k);
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

#[test]
fn matches_binomial_oracle_on_full_grid() {
    for n in 1..=30 {
        for c in 0..=n {
            for k in 1..=n {
                assert_eq!(pass_at_k_counts(n, c, k).unwrap(), oracle(n, c, k), "n={n} c={c} k={k}");
            }
        }
    }
}

#[test]
fn two_of_four_by_subset_enumeration() {
    let correct = [true, true, false, false];
    let (mut hit, mut total) = (0, 0);
    for i in 0..4 {
        for j in i + 1..4 {
            total += 1;
            if correct[i] || correct[j] {
                hit += 1;
            }
        }
    }
    assert_eq!((hit, total), (5, 6));
    assert_eq!(pass_at_k_counts(4, 2, 2).unwrap(), 5.0 / 6.0);
}

#[test]
fn monotone_in_k_and_c() {
    for n in 1..=30 {
        for c in 0..=n {
            for k in 1..=n {
                let p = pass_at_k_counts(n, c, k).unwrap();
                if k < n {
                    assert!(pass_at_k_counts(n, c, k + 1).unwrap() >= p);
                }
                if c < n {
                    assert!(pass_at_k_counts(n, c + 1, k).unwrap() >= p);
                }
            }
            assert_eq!(pass_at_k_counts(n, c, n).unwrap(), if c >= 1 { 1.0 } else { 0.0 });
            assert_eq!(pass_at_k_counts(n, c, 1).unwrap(), c as f64 / n as f64);
        }
    }
}

proptest! {
    #[test]
    fn large_n_stays_in_unit_interval(n in 1u64..10_000, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let c = ((n as f64) * c_frac) as u64;
        let k = 1 + ((n - 1) as f64 * k_frac) as u64;
        let p = pass_at_k_counts(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if k == 1 {
            prop_assert_eq!(p, c as f64 / n as f64);
        }
    }

    #[test]
    fn selection_ignores_input_order(
        raw in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..30),
        rot in 0usize..30,
    ) {
        let stats: Vec<_> = raw
            .iter()
            .enumerate()
            .map(|(i, &(w, wo))| (i as u64, tool_necessity(w, wo).unwrap()))
            .collect();
        let t = ToolThresholds { tau_gain: 0.2, tau_with: 0.5, tau_without: 0.5 };
        let mut shuffled = stats.clone();
        shuffled.reverse();
        if !shuffled.is_empty() {
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
        }
        prop_assert_eq!(select_tool_queries(&stats, t), select_tool_queries(&shuffled, t));
    }

    #[test]
    fn tool_gain_is_bounded(w in 0.0f64..=1.0, wo in 0.0f64..=1.0) {
        let v = tool_necessity(w, wo).unwrap().v;
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}
