//! Group-relative advantages and the triplet-clipped token-level objective.
//!
//! For a batch of groups the objective is
//!
//! ```text
//! J = mean_groups [ 1/(G * T_max) * sum_i mask_i * sum_t w_it * clip_term(r_it, A_i) ]
//! w_it      = min(pi_train_mu / pi_infer_mu, C)          (truncated importance weight)
//! r_it      = pi_theta(y_it) / pi_train_mu(y_it)
//! clip_term = max( min(r A, clip(r, 1 - eps_neg_low, 1 + eps_pos_high) A), eps_neg_high A )
//! ```
//!
//! There is no KL penalty and no reference policy. The denominator `G * T_max`
//! is fixed per batch and never depends on a response length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy_env::{detect_repetition, softmax, ParamTable, RepetitionConfig};
use crate::types::{Group, RewardKind, SampleStatus};

/// How the outer `eps_neg_high * A` floor is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// The floor applies to every advantage, exactly as the formula is written.
    /// For `A > 0` the floor dominates whenever `eps_neg_high >= 1 + eps_pos_high`.
    Literal,
    /// The floor applies only when `A < 0` (dual-clip style).
    #[default]
    Guarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub eps_neg_low: f64,
    pub eps_pos_high: f64,
    pub eps_neg_high: f64,
    pub tis_cap: f64,
    #[serde(default)]
    pub mode: ClipMode,
    /// Apply the truncated train/inference importance weight.
    #[serde(default = "default_true")]
    pub use_tis: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_neg_low: 0.2,
            eps_pos_high: 0.2,
            eps_neg_high: 3.0,
            tis_cap: 2.0,
            mode: ClipMode::Guarded,
            use_tis: true,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eps_neg_low > 0.0 && self.eps_neg_low < 1.0) {
            return bad(format!("eps_neg_low must be in (0,1), got {}", self.eps_neg_low));
        }
        if !(self.eps_pos_high > 0.0 && self.eps_pos_high.is_finite()) {
            return bad(format!("eps_pos_high must be > 0, got {}", self.eps_pos_high));
        }
        if !(self.eps_neg_high > 1.0 && self.eps_neg_high >= 1.0 + self.eps_pos_high) {
            return bad(format!(
                "eps_neg_high must be > 1 and >= 1 + eps_pos_high, got {}",
                self.eps_neg_high
            ));
        }
        if !(self.tis_cap >= 1.0) {
            return bad(format!("tis_cap must be >= 1, got {}", self.tis_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    MeanStd,
    MeanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvantageConfig {
    #[serde(default)]
    pub norm_mode: NormMode,
    #[serde(default = "AdvantageConfig::default_floor")]
    pub std_floor: f64,
}

impl AdvantageConfig {
    fn default_floor() -> f64 {
        1e-8
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_floor > 0.0) {
            return Err(Error::Config(format!("std_floor must be > 0, got {}", self.std_floor)));
        }
        Ok(())
    }
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            norm_mode: NormMode::MeanStd,
            std_floor: Self::default_floor(),
        }
    }
}

/// Group-relative advantages using the population standard deviation.
pub fn group_advantages(rewards: &[f64], cfg: &AdvantageConfig) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "advantages need a group of at least 2, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite reward".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(match cfg.norm_mode {
        NormMode::MeanOnly => rewards.iter().map(|r| r - mean).collect(),
        NormMode::MeanStd => {
            let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            let std = libm::sqrt(var).max(cfg.std_floor);
            rewards.iter().map(|r| (r - mean) / std).collect()
        }
    })
}

/// Value of the clipped term and its derivative with respect to the ratio.
///
/// At branch ties the unclipped `r * A` branch is selected, so the slope is
/// that of the branch the value was read from.
pub fn clip_term_with_slope(r_theta: f64, adv: f64, cfg: &ClipConfig) -> Result<(f64, f64)> {
    if !(r_theta > 0.0) || !r_theta.is_finite() {
        return Err(Error::InvalidArgument(format!("ratio must be positive, got {r_theta}")));
    }
    let lo = 1.0 - cfg.eps_neg_low;
    let hi = 1.0 + cfg.eps_pos_high;
    let raw = r_theta * adv;
    let clipped = r_theta.clamp(lo, hi) * adv;
    let (inner, inner_slope) = if raw <= clipped {
        (raw, adv)
    } else {
        // raw > clipped only happens with the clamp active, where the slope is zero
        (clipped, 0.0)
    };
    let floor_applies = match cfg.mode {
        ClipMode::Literal => true,
        ClipMode::Guarded => adv < 0.0,
    };
    let floor = cfg.eps_neg_high * adv;
    if floor_applies && inner < floor {
        Ok((floor, 0.0))
    } else {
        Ok((inner, inner_slope))
    }
}

pub fn triplet_clip_term(r_theta: f64, adv: f64, cfg: &ClipConfig) -> Result<f64> {
    clip_term_with_slope(r_theta, adv, cfg).map(|(v, _)| v)
}

pub fn tis_weight(logp_mu_train: f64, logp_mu_infer: f64, cap: f64) -> Result<f64> {
    if !logp_mu_train.is_finite() || !logp_mu_infer.is_finite() {
        return Err(Error::InvalidArgument("non-finite log-probability".into()));
    }
    Ok(libm::exp(logp_mu_train - logp_mu_infer).min(cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleMask {
    Use,
    MaskGradeError,
    MaskTruncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedGroup {
    pub group: Group,
    pub advantages: Vec<f64>,
    pub masks: Vec<SampleMask>,
}

/// Advantage-annotated, masked groups ready for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub groups: Vec<MaskedGroup>,
    pub t_max: usize,
}

pub type ExperienceBatch = MaskedBatch;

impl MaskedBatch {
    pub fn sample_count(&self) -> usize {
        self.groups.iter().map(|g| g.group.size()).sum()
    }

    pub fn count_mask(&self, mask: SampleMask) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.masks.iter())
            .filter(|&&m| m == mask)
            .count()
    }
}

/// Masks incomplete signals and attaches group-relative advantages.
///
/// Grading errors are always masked. Truncated samples are masked unless
/// their tail is a detected repetition. Advantages are computed over the
/// unmasked samples of each group; masked samples and groups with fewer than
/// two unmasked samples get zero advantage.
pub fn apply_masks(
    groups: Vec<Group>,
    t_max: usize,
    repetition: &RepetitionConfig,
    adv_cfg: &AdvantageConfig,
) -> Result<MaskedBatch> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be positive".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        let mut masks = Vec::with_capacity(group.size());
        let mut scores = Vec::new();
        for s in &group.samples {
            if s.tokens.len() > t_max {
                return Err(Error::InvalidArgument(format!(
                    "sample of {} tokens exceeds t_max {t_max}",
                    s.tokens.len()
                )));
            }
            let reward = s.reward.ok_or(Error::Ungraded(s.prompt_id))?;
            let mask = if reward.kind == RewardKind::GradeError {
                SampleMask::MaskGradeError
            } else if s.status == SampleStatus::Truncated
                && !detect_repetition(&s.tokens, repetition.ngram, repetition.min_repeats)
            {
                SampleMask::MaskTruncated
            } else {
                SampleMask::Use
            };
            if mask == SampleMask::Use {
                scores.push(reward.raw_score.unwrap_or(0.0));
            }
            masks.push(mask);
        }
        let mut advantages = vec![0.0; group.size()];
        if scores.len() >= 2 {
            let adv = group_advantages(&scores, adv_cfg)?;
            let mut it = adv.into_iter();
            for (a, m) in advantages.iter_mut().zip(&masks) {
                if *m == SampleMask::Use {
                    *a = it.next().unwrap_or(0.0);
                }
            }
        }
        out.push(MaskedGroup {
            group,
            advantages,
            masks,
        });
    }
    Ok(MaskedBatch { groups: out, t_max })
}

/// Shared pass over the batch. Fills `grad` when given.
fn evaluate(
    batch: &MaskedBatch,
    params: &ParamTable,
    clip: &ClipConfig,
    mut grad: Option<&mut ParamTable>,
) -> Result<f64> {
    if batch.groups.is_empty() {
        return Ok(0.0);
    }
    let n_groups = batch.groups.len() as f64;
    let mut total = 0.0;
    let vocab = params.shape()[2];
    for mg in &batch.groups {
        let g = mg.group.size() as f64;
        let scale = 1.0 / (n_groups * g * batch.t_max as f64);
        let mut group_sum = 0.0;
        for ((s, &adv), &mask) in mg.group.samples.iter().zip(&mg.advantages).zip(&mg.masks) {
            if mask != SampleMask::Use {
                continue;
            }
            let train = s.train_logps.as_ref().ok_or(Error::MissingTrainLogps(s.prompt_id))?;
            if train.len() != s.tokens.len() || s.infer_logps.len() != s.tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "log-probability lengths do not match tokens for prompt {}",
                    s.prompt_id
                )));
            }
            if adv == 0.0 {
                continue;
            }
            let temp = s.temperature;
            for (pos, &tok) in s.tokens.iter().enumerate() {
                let slot = params.slot(s.context_id, pos)?;
                let z: Vec<f64> = slot.iter().map(|x| x / temp).collect();
                let probs = softmax(&z);
                let tok = tok as usize;
                if tok >= vocab {
                    return Err(Error::IndexOutOfRange {
                        what: "token",
                        index: tok,
                        limit: vocab,
                    });
                }
                let r = libm::exp(libm::log(probs[tok]) - train[pos]);
                let w = if clip.use_tis {
                    tis_weight(train[pos], s.infer_logps[pos], clip.tis_cap)?
                } else {
                    1.0
                };
                let (term, slope) = clip_term_with_slope(r, adv, clip)?;
                group_sum += w * term;
                if let Some(grad) = grad.as_deref_mut() {
                    if slope != 0.0 {
                        // d r / d z_k = r (1[k = tok] - p_k) / temperature
                        let coef = scale * w * slope * r / temp;
                        let gslot = grad.slot_mut(s.context_id, pos)?;
                        for (k, gk) in gslot.iter_mut().enumerate() {
                            let ind = if k == tok { 1.0 } else { 0.0 };
                            *gk += coef * (ind - probs[k]);
                        }
                    }
                }
            }
        }
        total += group_sum * scale;
    }
    Ok(total)
}

pub fn objective_value(batch: &MaskedBatch, params: &ParamTable, clip: &ClipConfig) -> Result<f64> {
    evaluate(batch, params, clip, None)
}

/// Analytic gradient of [`objective_value`] with respect to the logits,
/// accumulated in group then sample order.
pub fn objective_gradient(batch: &MaskedBatch, params: &ParamTable, clip: &ClipConfig) -> Result<ParamTable> {
    let [c, p, v] = params.shape();
    let mut grad = ParamTable::zeros(c, p, v);
    evaluate(batch, params, clip, Some(&mut grad))?;
    Ok(grad)
}

/// Value and gradient in one pass.
pub fn objective_value_and_gradient(
    batch: &MaskedBatch,
    params: &ParamTable,
    clip: &ClipConfig,
) -> Result<(f64, ParamTable)> {
    let [c, p, v] = params.shape();
    let mut grad = ParamTable::zeros(c, p, v);
    let value = evaluate(batch, params, clip, Some(&mut grad))?;
    Ok((value, grad))
}

/// Central finite-difference gradient of [`objective_value`], one logit at a time.
pub fn numeric_gradient(batch: &MaskedBatch, params: &ParamTable, clip: &ClipConfig, h: f64) -> Result<ParamTable> {
    let mut probe = params.clone();
    let mut out = vec![0.0; params.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let x = params.as_slice()[i];
        probe.as_mut_slice()[i] = x + h;
        let up = objective_value(batch, &probe, clip)?;
        probe.as_mut_slice()[i] = x - h;
        let down = objective_value(batch, &probe, clip)?;
        probe.as_mut_slice()[i] = x;
        *o = (up - down) / (2.0 * h);
    }
    ParamTable::from_vec(params.shape(), out)
}

/// Plain gradient ascent: `params + lr * gradient`.
pub fn ascent_step(params: &ParamTable, gradient: &ParamTable, lr: f64) -> Result<ParamTable> {
    params.check_same_shape(gradient)?;
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    let data = params
        .as_slice()
        .iter()
        .zip(gradient.as_slice())
        .map(|(p, g)| p + lr * g)
        .collect();
    ParamTable::from_vec(params.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{RewardOutcome, Sample};

    fn cfg_example() -> ClipConfig {
        ClipConfig {
            eps_neg_low: 0.2,
            eps_pos_high: 0.2,
            eps_neg_high: 2.0,
            tis_cap: 2.0,
            mode: ClipMode::Literal,
            use_tis: true,
        }
    }

    fn sample(tokens: Vec<u32>, reward: RewardOutcome, status: SampleStatus) -> Sample {
        let n = tokens.len();
        Sample {
            prompt_id: 1,
            context_id: 0,
            version_id: 0,
            tokens,
            infer_logps: vec![-1.0; n],
            train_logps: Some(vec![-1.0; n]),
            temperature: 1.0,
            status,
            reward: Some(reward),
            t_start: 0,
            t_end: 0,
        }
    }

    #[test]
    fn advantage_examples() {
        let c = AdvantageConfig::default();
        assert_eq!(group_advantages(&[1.0, 0.0, 0.0, 1.0], &c).unwrap(), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(group_advantages(&[1.0; 4], &c).unwrap(), vec![0.0; 4]);
        let m = AdvantageConfig {
            norm_mode: NormMode::MeanOnly,
            ..c
        };
        assert_eq!(group_advantages(&[1.0, 0.0], &m).unwrap(), vec![0.5, -0.5]);
        assert!(group_advantages(&[1.0], &c).is_err());
        assert!(group_advantages(&[1.0, f64::NAN], &c).is_err());
    }

    #[test]
    fn clip_examples() {
        let c = cfg_example();
        // the literal floor dominates every positive advantage, including on-policy
        assert_eq!(triplet_clip_term(1.0, 1.0, &c).unwrap(), 2.0);
        assert_eq!(triplet_clip_term(1.5, 2.0, &c).unwrap(), 4.0);
        assert_eq!(triplet_clip_term(3.0, -1.0, &c).unwrap(), -2.0);
        let g = ClipConfig {
            mode: ClipMode::Guarded,
            ..c
        };
        assert_eq!(triplet_clip_term(1.0, 1.0, &g).unwrap(), 1.0);
        assert!((triplet_clip_term(1.5, 2.0, &g).unwrap() - 2.4).abs() < 1e-15);
        assert_eq!(triplet_clip_term(3.0, -1.0, &g).unwrap(), -2.0);
        assert!(triplet_clip_term(0.0, 1.0, &c).is_err());
        assert!(triplet_clip_term(-1.0, 1.0, &c).is_err());
    }

    #[test]
    fn tis_examples() {
        assert_eq!(tis_weight(-0.3, -0.3, 2.0).unwrap(), 1.0);
        assert_eq!(tis_weight(libm::log(1.8), 0.0, 1.5).unwrap(), 1.5);
        assert!((tis_weight(libm::log(0.9), 0.0, 1.5).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn clip_config_validation() {
        assert!(ClipConfig::default().validate().is_ok());
        for bad in [
            ClipConfig { eps_neg_low: 1.0, ..Default::default() },
            ClipConfig { eps_pos_high: 0.0, ..Default::default() },
            ClipConfig { eps_neg_high: 1.1, ..Default::default() },
            ClipConfig { tis_cap: 0.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn masking_rules() {
        let rep = RepetitionConfig {
            ngram: 1,
            min_repeats: 3,
        };
        let g = Group::new(vec![
            sample(vec![1, 5], RewardOutcome::grade_error(), SampleStatus::Complete),
            sample(vec![1, 2, 3], RewardOutcome::fail(), SampleStatus::Truncated),
            sample(vec![1, 2, 2, 2], RewardOutcome::fail(), SampleStatus::Truncated),
            sample(vec![1, 5], RewardOutcome::pass(), SampleStatus::Complete),
        ])
        .unwrap();
        let b = apply_masks(vec![g], 4, &rep, &AdvantageConfig::default()).unwrap();
        let mg = &b.groups[0];
        assert_eq!(
            mg.masks,
            vec![
                SampleMask::MaskGradeError,
                SampleMask::MaskTruncated,
                SampleMask::Use,
                SampleMask::Use
            ]
        );
        assert_eq!(mg.advantages, vec![0.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn masking_errors() {
        let mut s = sample(vec![1], RewardOutcome::pass(), SampleStatus::Complete);
        s.reward = None;
        let g = Group::new(vec![s, sample(vec![1], RewardOutcome::pass(), SampleStatus::Complete)]).unwrap();
        assert!(matches!(
            apply_masks(vec![g.clone()], 2, &RepetitionConfig::default(), &AdvantageConfig::default()),
            Err(Error::Ungraded(_))
        ));
        assert!(apply_masks(vec![g], 0, &RepetitionConfig::default(), &AdvantageConfig::default()).is_err());
    }

    #[test]
    fn on_policy_value() {
        // behavior logps equal to the current policy: r = 1, w = 1
        let params = ParamTable::zeros(1, 3, 4);
        let lp = libm::log(0.25);
        let mut s = sample(vec![0, 1, 2], RewardOutcome::pass(), SampleStatus::Complete);
        s.infer_logps = vec![lp; 3];
        s.train_logps = Some(vec![lp; 3]);
        let mut masked = s.clone();
        masked.reward = Some(RewardOutcome::grade_error());
        let g = Group::new(vec![s, masked]).unwrap();
        let a = 0.7;
        let batch = MaskedBatch {
            groups: vec![MaskedGroup {
                group: g,
                advantages: vec![a, a],
                masks: vec![SampleMask::Use, SampleMask::MaskGradeError],
            }],
            t_max: 5,
        };
        let v = objective_value(&batch, &params, &ClipConfig::default()).unwrap();
        assert!((v - a * 3.0 / (2.0 * 5.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_cases() {
        let params = ParamTable::zeros(1, 2, 4);
        let g = Group::new(vec![
            sample(vec![0, 1], RewardOutcome::pass(), SampleStatus::Complete),
            sample(vec![2], RewardOutcome::fail(), SampleStatus::Complete),
        ])
        .unwrap();
        let zero_adv = MaskedBatch {
            groups: vec![MaskedGroup {
                group: g.clone(),
                advantages: vec![0.0, 0.0],
                masks: vec![SampleMask::Use, SampleMask::Use],
            }],
            t_max: 2,
        };
        assert_eq!(objective_value(&zero_adv, &params, &ClipConfig::default()).unwrap(), 0.0);
        assert!(objective_gradient(&zero_adv, &params, &ClipConfig::default())
            .unwrap()
            .as_slice()
            .iter()
            .all(|&x| x == 0.0));
        let all_masked = MaskedBatch {
            groups: vec![MaskedGroup {
                group: g,
                advantages: vec![1.0, -1.0],
                masks: vec![SampleMask::MaskTruncated, SampleMask::MaskGradeError],
            }],
            t_max: 2,
        };
        assert_eq!(objective_value(&all_masked, &params, &ClipConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn missing_train_logps() {
        let params = ParamTable::zeros(1, 2, 4);
        let mut s = sample(vec![0], RewardOutcome::pass(), SampleStatus::Complete);
        s.train_logps = None;
        let g = Group::new(vec![s.clone(), s]).unwrap();
        let b = MaskedBatch {
            groups: vec![MaskedGroup {
                group: g,
                advantages: vec![1.0, -1.0],
                masks: vec![SampleMask::Use; 2],
            }],
            t_max: 2,
        };
        assert!(matches!(
            objective_value(&b, &params, &ClipConfig::default()),
            Err(Error::MissingTrainLogps(1))
        ));
    }

    #[test]
    fn single_token_policy_gradient_identity() {
        // on-policy, adv = 1, no clipping: gradient = grad log pi / (G * T_max)
        let mut params = ParamTable::zeros(1, 1, 3);
        params.as_mut_slice().copy_from_slice(&[0.2, -0.4, 0.9]);
        let probs = softmax(params.as_slice());
        let lp = libm::log(probs[1]);
        let mut s = sample(vec![1], RewardOutcome::pass(), SampleStatus::Complete);
        s.infer_logps = vec![lp];
        s.train_logps = Some(vec![lp]);
        let mut other = s.clone();
        other.tokens = vec![0];
        let g = Group::new(vec![s, other]).unwrap();
        let b = MaskedBatch {
            groups: vec![MaskedGroup {
                group: g,
                advantages: vec![1.0, 0.0],
                masks: vec![SampleMask::Use; 2],
            }],
            t_max: 4,
        };
        let grad = objective_gradient(&b, &params, &ClipConfig::default()).unwrap();
        for k in 0..3 {
            let ind = if k == 1 { 1.0 } else { 0.0 };
            let expect = (ind - probs[k]) / (2.0 * 4.0);
            assert!((grad.as_slice()[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn ascent_examples() {
        let p = ParamTable::from_vec([1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let mut g = ParamTable::zeros(1, 1, 3);
        assert_eq!(ascent_step(&p, &g, 0.3).unwrap(), p);
        g.as_mut_slice()[1] = 2.5;
        assert_eq!(ascent_step(&p, &g, 0.0).unwrap(), p);
        let q = ascent_step(&p, &g, 0.1).unwrap();
        assert_eq!(q.as_slice()[1], -1.0 + 0.1 * 2.5);
        assert_eq!(p.as_slice()[1], -1.0);
        assert!(matches!(
            ascent_step(&p, &ParamTable::zeros(1, 2, 3), 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
