//! Task-vector fusion of domain experts that share a base model.
//!
//! The pipeline is fixed: magnitude normalization, dropout with rescaling,
//! minority-direction erasure, then a weighted sum added to the base.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::toy_env::ParamTable;

/// Difference between an expert and the shared base.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub delta: ParamTable,
    pub source_label: String,
    pub norm: f64,
    /// The expert parameters the delta was taken from, when known. Elements a
    /// sole full-weight expert leaves untouched are copied from here so the
    /// identity merge reproduces the expert exactly.
    endpoint: Option<ParamTable>,
}

impl TaskVector {
    pub fn from_delta(delta: ParamTable, source_label: impl Into<String>) -> Self {
        let norm = delta.l2_norm();
        Self {
            delta,
            source_label: source_label.into(),
            norm,
            endpoint: None,
        }
    }

    fn with_delta(&self, delta: ParamTable) -> Self {
        Self {
            norm: delta.l2_norm(),
            delta,
            source_label: self.source_label.clone(),
            endpoint: self.endpoint.clone(),
        }
    }
}

pub fn task_vector(theta_rl: &ParamTable, theta_sft: &ParamTable, label: impl Into<String>) -> Result<TaskVector> {
    theta_rl.check_same_shape(theta_sft)?;
    let data = theta_rl
        .as_slice()
        .iter()
        .zip(theta_sft.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let mut tv = TaskVector::from_delta(ParamTable::from_vec(theta_rl.shape(), data)?, label);
    tv.endpoint = Some(theta_rl.clone());
    Ok(tv)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Off,
    /// Rescale every non-zero vector to the mean norm of the inputs.
    MeanOfInputs,
    Target(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseMode {
    #[default]
    Off,
    /// Majority direction is the sign of the plain sum across experts.
    SumSign,
    /// Majority direction is the sign of the merge-weighted sum.
    WeightedSumSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default)]
    pub normalize: Normalization,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub erase: EraseMode,
    /// Per-expert weights; uniform when absent.
    #[serde(default)]
    pub merge_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            normalize: Normalization::Off,
            dropout_p: 0.0,
            erase: EraseMode::Off,
            merge_weights: None,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, experts: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0,1), got {}", self.dropout_p)));
        }
        if let Normalization::Target(t) = self.normalize {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("target norm must be positive, got {t}")));
            }
        }
        if let Some(w) = &self.merge_weights {
            if w.len() != experts {
                return Err(Error::Config(format!("{} merge weights for {experts} experts", w.len())));
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config("merge weights must be non-negative".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("merge weights sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn weights(&self, experts: usize) -> Vec<f64> {
        match &self.merge_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / experts as f64; experts],
        }
    }
}

fn check_shapes(taus: &[TaskVector]) -> Result<()> {
    if let Some(first) = taus.first() {
        for t in &taus[1..] {
            first.delta.check_same_shape(&t.delta)?;
        }
    }
    Ok(())
}

fn scaled(tau: &TaskVector, factor: f64) -> Result<TaskVector> {
    let data = tau.delta.as_slice().iter().map(|x| x * factor).collect();
    Ok(tau.with_delta(ParamTable::from_vec(tau.delta.shape(), data)?))
}

/// Rescales every non-zero vector to a common norm. Zero vectors pass through.
pub fn normalize_magnitudes(taus: &[TaskVector], mode: Normalization) -> Result<Vec<TaskVector>> {
    check_shapes(taus)?;
    let target = match mode {
        Normalization::Off => return Ok(taus.to_vec()),
        Normalization::Target(t) => t,
        Normalization::MeanOfInputs => {
            if taus.is_empty() || taus.iter().all(|t| t.norm == 0.0) {
                return Err(Error::InvalidArgument(
                    "mean-of-inputs target is undefined for all-zero task vectors".into(),
                ));
            }
            taus.iter().map(|t| t.norm).sum::<f64>() / taus.len() as f64
        }
    };
    taus.iter()
        .map(|t| {
            if t.norm == 0.0 || t.norm == target {
                Ok(t.clone())
            } else {
                scaled(t, target / t.norm)
            }
        })
        .collect()
}

/// Zeroes each element independently with probability `p` and rescales the
/// survivors by `1 / (1 - p)`. Consumes one uniform draw per element.
pub fn dropout_prune(tau: &TaskVector, p: f64, rng: &mut SplitRng) -> Result<TaskVector> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability must be in [0,1), got {p}")));
    }
    if p == 0.0 {
        return Ok(tau.clone());
    }
    let keep_scale = 1.0 / (1.0 - p);
    let data = tau
        .delta
        .as_slice()
        .iter()
        .map(|&x| if rng.next_f64() < p { 0.0 } else { x * keep_scale })
        .collect();
    Ok(tau.with_delta(ParamTable::from_vec(tau.delta.shape(), data)?))
}

/// Zeroes, per element, the entries whose sign opposes the majority
/// direction. Indices whose direction sums to zero are left untouched.
pub fn erase_minority(taus: &[TaskVector], mode: EraseMode, weights: &[f64]) -> Result<Vec<TaskVector>> {
    if taus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "erasure needs at least 2 task vectors, got {}",
            taus.len()
        )));
    }
    check_shapes(taus)?;
    if mode == EraseMode::Off {
        return Ok(taus.to_vec());
    }
    if weights.len() != taus.len() {
        return Err(Error::InvalidArgument("one weight per task vector required".into()));
    }
    let n = taus[0].delta.len();
    let mut out: Vec<Vec<f64>> = taus.iter().map(|t| t.delta.as_slice().to_vec()).collect();
    for e in 0..n {
        let direction: f64 = match mode {
            EraseMode::SumSign => taus.iter().map(|t| t.delta.as_slice()[e]).sum(),
            EraseMode::WeightedSumSign => taus
                .iter()
                .zip(weights)
                .map(|(t, w)| w * t.delta.as_slice()[e])
                .sum(),
            EraseMode::Off => unreachable!(),
        };
        if direction == 0.0 {
            continue;
        }
        for v in out.iter_mut() {
            if v[e] != 0.0 && (v[e] > 0.0) != (direction > 0.0) {
                v[e] = 0.0;
            }
        }
    }
    taus.iter()
        .zip(out)
        .map(|(t, data)| Ok(t.with_delta(ParamTable::from_vec(t.delta.shape(), data)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub labels: Vec<String>,
    pub norms_before: Vec<f64>,
    pub norms_after_normalize: Vec<f64>,
    pub dropped_elements: Vec<usize>,
    pub erased_elements: Vec<usize>,
    pub weights: Vec<f64>,
}

/// `theta_sft + sum_i w_i * tau'_i` with `tau'` from normalize, dropout, erase.
pub fn merge(theta_sft: &ParamTable, taus: &[TaskVector], cfg: &FusionConfig) -> Result<(ParamTable, FusionReport)> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("merge needs at least one task vector".into()));
    }
    for t in taus {
        theta_sft.check_same_shape(&t.delta)?;
    }
    cfg.validate(taus.len())?;
    let weights = cfg.weights(taus.len());

    let normalized = normalize_magnitudes(taus, cfg.normalize)?;
    let root = SplitRng::new(cfg.seed).split("dropout");
    let pruned = normalized
        .iter()
        .enumerate()
        .map(|(i, t)| dropout_prune(t, cfg.dropout_p, &mut root.split_u64(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let erased = if taus.len() >= 2 {
        erase_minority(&pruned, cfg.erase, &weights)?
    } else {
        pruned.clone()
    };

    let count_zeroed = |before: &TaskVector, after: &TaskVector| {
        before
            .delta
            .as_slice()
            .iter()
            .zip(after.delta.as_slice())
            .filter(|(b, a)| **b != 0.0 && **a == 0.0)
            .count()
    };

    // a single expert carrying all the weight reproduces its endpoint wherever
    // the pipeline left its delta untouched
    let sole = match weights.iter().filter(|&&w| w != 0.0).count() {
        1 => weights.iter().position(|&w| w == 1.0),
        _ => None,
    };

    let mut fused = theta_sft.as_slice().to_vec();
    for (e, f) in fused.iter_mut().enumerate() {
        if let Some(i) = sole {
            if let Some(end) = &taus[i].endpoint {
                if erased[i].delta.as_slice()[e] == taus[i].delta.as_slice()[e] {
                    *f = end.as_slice()[e];
                    continue;
                }
            }
        }
        let mut acc = 0.0;
        for (t, w) in erased.iter().zip(&weights) {
            acc += w * t.delta.as_slice()[e];
        }
        *f += acc;
    }

    let report = FusionReport {
        labels: taus.iter().map(|t| t.source_label.clone()).collect(),
        norms_before: taus.iter().map(|t| t.norm).collect(),
        norms_after_normalize: normalized.iter().map(|t| t.norm).collect(),
        dropped_elements: normalized.iter().zip(&pruned).map(|(b, a)| count_zeroed(b, a)).collect(),
        erased_elements: pruned.iter().zip(&erased).map(|(b, a)| count_zeroed(b, a)).collect(),
        weights,
    };
    Ok((ParamTable::from_vec(theta_sft.shape(), fused)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    fn table(v: &[f64]) -> ParamTable {
        ParamTable::from_vec([1, 1, v.len()], v.to_vec()).unwrap()
    }

    fn tv(v: &[f64]) -> TaskVector {
        TaskVector::from_delta(table(v), "t")
    }

    #[test]
    fn task_vector_examples() {
        let a = table(&[1.0, 2.0, 3.0]);
        let t = task_vector(&a, &a, "x").unwrap();
        assert!(t.delta.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(t.norm, 0.0);
        let b = table(&[1.0, 2.5, 3.0]);
        assert_eq!(task_vector(&b, &a, "x").unwrap().delta.as_slice(), &[0.0, 0.5, 0.0]);
        assert!(task_vector(&b, &table(&[1.0]), "x").is_err());
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let sft = table(&[5.0, -3.0, 1e-20, 0.1]);
        let rl = table(&[0.001, 7.0, 1.0, 0.3]);
        let t = task_vector(&rl, &sft, "x").unwrap();
        let (fused, _) = merge(&sft, &[t], &FusionConfig::default()).unwrap();
        assert_eq!(fused, rl);
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_magnitudes(&[tv(&[2.0, 0.0]), tv(&[0.0, 4.0])], Normalization::MeanOfInputs).unwrap();
        assert!((out[0].norm - 3.0).abs() < 1e-12);
        assert!((out[1].norm - 3.0).abs() < 1e-12);
        assert_eq!(out[0].delta.as_slice(), &[3.0, 0.0]);
        let one = tv(&[3.0, 4.0]);
        assert_eq!(normalize_magnitudes(std::slice::from_ref(&one), Normalization::Target(5.0)).unwrap()[0], one);
        let out = normalize_magnitudes(&[tv(&[0.0, 0.0]), tv(&[0.0, 2.0])], Normalization::Target(1.0)).unwrap();
        assert_eq!(out[0].delta.as_slice(), &[0.0, 0.0]);
        assert!(normalize_magnitudes(&[tv(&[0.0]), tv(&[0.0])], Normalization::MeanOfInputs).is_err());
    }

    #[test]
    fn dropout_examples() {
        let t = tv(&[0.4, -0.2, 1.0]);
        assert_eq!(dropout_prune(&t, 0.0, &mut make_rng(0)).unwrap(), t);
        let out = dropout_prune(&t, 0.5, &mut make_rng(3)).unwrap();
        for (o, i) in out.delta.as_slice().iter().zip(t.delta.as_slice()) {
            assert!(*o == 0.0 || *o == 2.0 * i);
        }
        assert!(dropout_prune(&t, 1.0, &mut make_rng(0)).is_err());
        assert!(dropout_prune(&t, -0.1, &mut make_rng(0)).is_err());
    }

    #[test]
    fn erase_examples() {
        let out = erase_minority(&[tv(&[0.3]), tv(&[0.1]), tv(&[-0.2])], EraseMode::SumSign, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(out.iter().map(|t| t.delta.as_slice()[0]).collect::<Vec<_>>(), vec![0.3, 0.1, 0.0]);
        let out = erase_minority(&[tv(&[0.1]), tv(&[-0.1])], EraseMode::SumSign, &[0.5; 2]).unwrap();
        assert_eq!(out[0].delta.as_slice(), &[0.1]);
        assert_eq!(out[1].delta.as_slice(), &[-0.1]);
        let same = [tv(&[0.1, -2.0]), tv(&[0.5, -1.0])];
        assert_eq!(erase_minority(&same, EraseMode::SumSign, &[0.5; 2]).unwrap(), same.to_vec());
        assert!(erase_minority(&[tv(&[1.0])], EraseMode::SumSign, &[1.0]).is_err());
    }

    #[test]
    fn weighted_erase_uses_merge_weights() {
        let taus = [tv(&[1.0]), tv(&[-0.6]), tv(&[-0.6])];
        let plain = erase_minority(&taus, EraseMode::SumSign, &[0.8, 0.1, 0.1]).unwrap();
        assert_eq!(plain[0].delta.as_slice(), &[0.0]);
        let weighted = erase_minority(&taus, EraseMode::WeightedSumSign, &[0.8, 0.1, 0.1]).unwrap();
        assert_eq!(weighted[0].delta.as_slice(), &[1.0]);
        assert_eq!(weighted[1].delta.as_slice(), &[0.0]);
    }

    #[test]
    fn merge_examples() {
        let sft = table(&[0.5, -0.5]);
        let rl = table(&[1.5, 0.25]);
        let t = task_vector(&rl, &sft, "a").unwrap();
        let cfg = FusionConfig {
            merge_weights: Some(vec![0.5, 0.5]),
            ..FusionConfig::default()
        };
        let (fused, _) = merge(&sft, &[t.clone(), t], &cfg).unwrap();
        for (f, r) in fused.as_slice().iter().zip(rl.as_slice()) {
            assert!((f - r).abs() < 1e-15);
        }
        let up = TaskVector::from_delta(table(&[1.0, 0.0]), "up");
        let down = TaskVector::from_delta(table(&[-1.0, 0.0]), "down");
        let cfg = FusionConfig {
            erase: EraseMode::SumSign,
            ..FusionConfig::default()
        };
        let (fused, report) = merge(&sft, &[up, down], &cfg).unwrap();
        assert_eq!(fused, sft);
        assert_eq!(report.erased_elements, vec![0, 0]);
    }

    #[test]
    fn merge_validation() {
        let sft = table(&[0.0, 0.0]);
        let t = tv(&[1.0, 1.0]);
        let bad_w = FusionConfig {
            merge_weights: Some(vec![0.7, 0.7]),
            ..FusionConfig::default()
        };
        assert!(merge(&sft, &[t.clone(), t.clone()], &bad_w).is_err());
        assert!(merge(&table(&[0.0]), std::slice::from_ref(&t), &FusionConfig::default()).is_err());
        assert!(merge(&sft, &[], &FusionConfig::default()).is_err());
    }

    #[test]
    fn merge_is_deterministic() {
        let sft = table(&[0.0; 6]);
        let taus = [tv(&[1.0, -2.0, 0.5, 0.3, 0.0, 1.0]), tv(&[-0.5, -1.0, 0.5, 0.2, 1.0, 2.0])];
        let cfg = FusionConfig {
            normalize: Normalization::MeanOfInputs,
            dropout_p: 0.3,
            erase: EraseMode::SumSign,
            merge_weights: None,
            seed: 11,
        };
        assert_eq!(merge(&sft, &taus, &cfg).unwrap(), merge(&sft, &taus, &cfg).unwrap());
    }
}
