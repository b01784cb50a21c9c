//! Evaluation metrics: unbiased pass@k, tool-necessity selection, pass rates,
//! and small summary statistics used by reports.

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{RewardKind, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAtKInput {
    pub n: u64,
    pub c: u64,
    pub k: u64,
}

impl PassAtKInput {
    pub fn new(n: u64, c: u64, k: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("pass@k needs at least one sample".into()));
        }
        if c > n {
            return Err(Error::InvalidArgument(format!("correct count {c} exceeds sample count {n}")));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
        }
        Ok(Self { n, c, k })
    }
}

/// `1 - C(n-c, k) / C(n, k)` evaluated as `1 - prod_{i<k} (n-c-i)/(n-i)`.
///
/// The product is kept as a reduced fraction of `u128`s and divided once, so
/// the result is the correctly rounded value whenever the reduced fraction
/// fits. Otherwise the factors are multiplied in floating point.
pub fn pass_at_k(inp: PassAtKInput) -> Result<f64> {
    let PassAtKInput { n, c, k } = PassAtKInput::new(inp.n, inp.c, inp.k)?;
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    match miss_fraction(n, c, k) {
        Some((num, den)) => Ok((den - num) as f64 / den as f64),
        None => {
            let mut miss = 1.0;
            for i in 0..k {
                miss *= (n - c - i) as f64 / (n - i) as f64;
            }
            Ok(1.0 - miss)
        }
    }
}

/// Reduced `C(n-c, k) / C(n, k)`, or `None` on overflow.
fn miss_fraction(n: u64, c: u64, k: u64) -> Option<(u128, u128)> {
    let (mut num, mut den) = (1u128, 1u128);
    for i in 0..k {
        let mut a = (n - c - i) as u128;
        let mut b = (n - i) as u128;
        let g = a.gcd(&den);
        a /= g;
        den /= g;
        let g = num.gcd(&b);
        num /= g;
        b /= g;
        num = num.checked_mul(a)?;
        den = den.checked_mul(b)?;
    }
    Some((num, den))
}

/// Convenience wrapper over [`pass_at_k`] for raw counts.
pub fn pass_at_k_counts(n: u64, c: u64, k: u64) -> Result<f64> {
    pass_at_k(PassAtKInput::new(n, c, k)?)
}

/// Mean of per-prompt pass@k over `(n, c)` pairs.
pub fn mean_pass_at_k(counts: &[(u64, u64)], k: u64) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no prompts to aggregate".into()));
    }
    let mut total = 0.0;
    for &(n, c) in counts {
        total += pass_at_k_counts(n, c, k)?;
    }
    Ok(total / counts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolNecessityStats {
    pub s_with: f64,
    pub s_without: f64,
    pub v: f64,
}

pub fn tool_necessity(s_with: f64, s_without: f64) -> Result<ToolNecessityStats> {
    for (name, x) in [("s_with", s_with), ("s_without", s_without)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("{name} must be in [0,1], got {x}")));
        }
    }
    Ok(ToolNecessityStats {
        s_with,
        s_without,
        v: s_with - s_without,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolThresholds {
    pub tau_gain: f64,
    pub tau_with: f64,
    pub tau_without: f64,
}

/// Queries with `v > tau_gain`, `s_with > tau_with` and `s_without < tau_without`.
/// Returns the selected ids in ascending order, so input order is irrelevant.
pub fn select_tool_queries(stats: &[(u64, ToolNecessityStats)], t: ToolThresholds) -> Vec<u64> {
    let mut out: Vec<u64> = stats
        .iter()
        .filter(|(_, s)| s.v > t.tau_gain && s.s_with > t.tau_with && s.s_without < t.tau_without)
        .map(|(id, _)| *id)
        .collect();
    out.sort_unstable();
    out
}

/// Fraction of graded samples that passed. Grading errors count for neither side.
pub fn pass_rate(samples: &[Sample]) -> Result<f64> {
    pass_rate_kinds(samples.iter().filter_map(|s| s.reward_kind()))
}

pub fn pass_rate_kinds(kinds: impl IntoIterator<Item = RewardKind>) -> Result<f64> {
    let (mut pass, mut graded) = (0usize, 0usize);
    for k in kinds {
        match k {
            RewardKind::Pass => {
                pass += 1;
                graded += 1;
            }
            RewardKind::Fail => graded += 1,
            RewardKind::GradeError => {}
        }
    }
    if graded == 0 {
        return Err(Error::InvalidArgument("pass rate needs at least one graded sample".into()));
    }
    Ok(pass as f64 / graded as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Nearest-rank percentile of an ascending slice, `q` in [0,1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

/// Median with the midpoint rule for even counts.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn summarize(xs: &[f64]) -> Summary {
    if xs.is_empty() {
        return Summary::default();
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v[0],
        max: v[v.len() - 1],
        p50: percentile_sorted(&v, 0.5),
        p90: percentile_sorted(&v, 0.9),
    }
}
