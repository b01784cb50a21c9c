//! Toy verifiable task family and a tabular softmax policy.
//!
//! Prompts are modular-addition problems `(a + b) mod modulus^answer_len`
//! whose answer is written digit by digit in base `modulus`, most significant
//! digit first. Tokens `0..modulus` are digits. When `vocab_size > modulus` the
//! last vocabulary entry is an end-of-answer token; a correct response is the
//! digits followed by that token, and a rollout that fills every position
//! without emitting it is `Truncated`. Without an end token every rollout runs
//! to `max_len` and is `Complete`.
//!
//! The policy is a logit table indexed by `(context, position, token)`; the
//! conditional at each position depends only on the prompt context, which
//! keeps the sequence distribution enumerable and the gradient analytic.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::types::{Payload, Prompt, RewardKind, RewardOutcome, Sample, SampleStatus, Token};

/// Largest number of enumerated sequences accepted by [`enumerate_sequence_dist`].
pub const MAX_ENUMERATED: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "TaskConfig::default_vocab")]
    pub vocab_size: usize,
    /// Generation positions in the policy table; also the generation cap.
    #[serde(default = "TaskConfig::default_max_len")]
    pub max_len: usize,
    #[serde(default = "TaskConfig::default_modulus")]
    pub modulus: u32,
    /// Digits in the answer.
    #[serde(default = "TaskConfig::default_answer_len")]
    pub answer_len: usize,
    #[serde(default = "TaskConfig::default_contexts")]
    pub context_count: usize,
    /// Contexts are dealt round-robin to `domains` disjoint task domains;
    /// prompts of this task use only contexts with `id % domains == domain`.
    #[serde(default = "TaskConfig::default_domains")]
    pub domains: usize,
    #[serde(default)]
    pub domain: usize,
}

impl TaskConfig {
    fn default_vocab() -> usize {
        6
    }
    fn default_max_len() -> usize {
        2
    }
    fn default_modulus() -> u32 {
        5
    }
    fn default_answer_len() -> usize {
        1
    }
    fn default_contexts() -> usize {
        16
    }
    fn default_domains() -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1".into());
        }
        if self.modulus < 2 {
            return bad(format!("modulus must be >= 2, got {}", self.modulus));
        }
        if self.modulus as usize > self.vocab_size {
            return bad(format!(
                "modulus {} exceeds vocab_size {}",
                self.modulus, self.vocab_size
            ));
        }
        if self.answer_len < 1 || self.answer_len > self.max_len {
            return bad(format!(
                "answer_len must be in 1..={}, got {}",
                self.max_len, self.answer_len
            ));
        }
        if (self.modulus as u128).checked_pow(2 * self.answer_len as u32).is_none_or(|s| s > u64::MAX as u128) {
            return bad("modulus^(2*answer_len) overflows".into());
        }
        if self.context_count < 1 {
            return bad("context_count must be >= 1".into());
        }
        if self.domains < 1 || self.domains > self.context_count {
            return bad(format!(
                "domains must be in 1..={}, got {}",
                self.context_count, self.domains
            ));
        }
        if self.domain >= self.domains {
            return bad(format!("domain {} out of range for {} domains", self.domain, self.domains));
        }
        Ok(())
    }

    pub fn eos_token(&self) -> Option<Token> {
        (self.vocab_size > self.modulus as usize).then(|| (self.vocab_size - 1) as Token)
    }

    /// Size of the answer space, `modulus^answer_len`.
    pub fn answer_space(&self) -> u64 {
        (self.modulus as u64).pow(self.answer_len as u32)
    }

    /// Contexts owned by this task's domain, in increasing order.
    pub fn domain_contexts(&self) -> impl Iterator<Item = usize> + '_ {
        (self.domain..self.context_count).step_by(self.domains)
    }

    /// Fixed payload attached to a context (a bijective scramble of the pair index).
    pub fn payload_for_context(&self, context_id: usize) -> Payload {
        let space = self.answer_space() as u128;
        let pairs = space * space;
        let p = (context_id as u128 * 7919 + 1) % pairs;
        Payload {
            a: (p % space) as u64,
            b: (p / space) as u64,
            context_id,
        }
    }

    pub fn ground_truth(&self, payload: &Payload) -> Vec<Token> {
        let space = self.answer_space();
        let mut value = ((payload.a as u128 + payload.b as u128) % space as u128) as u64;
        let m = self.modulus as u64;
        let mut digits = vec![0; self.answer_len];
        for d in digits.iter_mut().rev() {
            *d = (value % m) as Token;
            value /= m;
        }
        digits
    }

    pub fn prompt_for_context(&self, prompt_id: u64, context_id: usize) -> Prompt {
        let payload = self.payload_for_context(context_id);
        Prompt {
            prompt_id,
            ground_truth: self.ground_truth(&payload),
            payload,
            difficulty: self.answer_len as u32,
        }
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: Self::default_vocab(),
            max_len: Self::default_max_len(),
            modulus: Self::default_modulus(),
            answer_len: Self::default_answer_len(),
            context_count: Self::default_contexts(),
            domains: Self::default_domains(),
            domain: 0,
        }
    }
}

/// Draws `count` prompts with ids `0..count`, each in a uniformly chosen
/// context of the task's domain.
pub fn make_task_set(cfg: &TaskConfig, count: usize, rng: &mut SplitRng) -> Result<Vec<Prompt>> {
    cfg.validate()?;
    if count < 1 {
        return Err(Error::InvalidArgument("task set needs count >= 1".into()));
    }
    let contexts: Vec<usize> = cfg.domain_contexts().collect();
    Ok((0..count)
        .map(|i| {
            let c = contexts[rng.below(contexts.len() as u64) as usize];
            cfg.prompt_for_context(i as u64, c)
        })
        .collect())
}

/// Logit table with shape `contexts x positions x vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    contexts: usize,
    positions: usize,
    vocab: usize,
    logits: Vec<f64>,
}

impl ParamTable {
    pub fn zeros(contexts: usize, positions: usize, vocab: usize) -> Self {
        Self {
            contexts,
            positions,
            vocab,
            logits: vec![0.0; contexts * positions * vocab],
        }
    }

    pub fn for_task(cfg: &TaskConfig) -> Self {
        Self::zeros(cfg.context_count, cfg.max_len, cfg.vocab_size)
    }

    pub fn from_vec(shape: [usize; 3], logits: Vec<f64>) -> Result<Self> {
        let [contexts, positions, vocab] = shape;
        let n = contexts
            .checked_mul(positions)
            .and_then(|x| x.checked_mul(vocab))
            .ok_or_else(|| Error::InvalidArgument(format!("shape {shape:?} overflows")))?;
        if n != logits.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {n} entries, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self {
            contexts,
            positions,
            vocab,
            logits,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.contexts, self.positions, self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn offset(&self, context: usize, position: usize) -> Result<usize> {
        if context >= self.contexts {
            return Err(Error::IndexOutOfRange {
                what: "context",
                index: context,
                limit: self.contexts,
            });
        }
        if position >= self.positions {
            return Err(Error::IndexOutOfRange {
                what: "position",
                index: position,
                limit: self.positions,
            });
        }
        Ok((context * self.positions + position) * self.vocab)
    }

    pub fn slot(&self, context: usize, position: usize) -> Result<&[f64]> {
        let o = self.offset(context, position)?;
        Ok(&self.logits[o..o + self.vocab])
    }

    pub fn slot_mut(&mut self, context: usize, position: usize) -> Result<&mut [f64]> {
        let o = self.offset(context, position)?;
        Ok(&mut self.logits[o..o + self.vocab])
    }

    pub fn check_same_shape(&self, other: &ParamTable) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.logits.iter().map(|x| x * x).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Exact softmax of the stored logits.
    Train,
    /// Softmax of logits plus `perturb_scale * N(0,1)` noise that is a pure
    /// function of `(perturb_seed, context, position, token)`.
    Infer { perturb_scale: f64, perturb_seed: u64 },
}

impl EngineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            EngineKind::Train => Ok(()),
            EngineKind::Infer { perturb_scale, .. } => {
                if perturb_scale.is_finite() && *perturb_scale >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("perturb_scale must be >= 0, got {perturb_scale}")))
                }
            }
        }
    }
}

fn engine_logits(
    params: &ParamTable,
    engine: EngineKind,
    context: usize,
    position: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    let slot = params.slot(context, position)?;
    let mut z: Vec<f64> = slot.to_vec();
    if let EngineKind::Infer {
        perturb_scale,
        perturb_seed,
    } = engine
    {
        if perturb_scale != 0.0 {
            let root = SplitRng::new(perturb_seed)
                .split_u64(context as u64)
                .split_u64(position as u64);
            for (t, zt) in z.iter_mut().enumerate() {
                *zt += perturb_scale * root.split_u64(t as u64).standard_normal();
            }
        }
    }
    if temperature != 1.0 {
        for zt in z.iter_mut() {
            *zt /= temperature;
        }
    }
    Ok(z)
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| libm::exp(x - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Next-token distribution at temperature 1.
pub fn token_dist(params: &ParamTable, engine: EngineKind, context: usize, position: usize) -> Result<Vec<f64>> {
    token_dist_tempered(params, engine, context, position, 1.0)
}

pub fn token_dist_tempered(
    params: &ParamTable,
    engine: EngineKind,
    context: usize,
    position: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(softmax(&engine_logits(params, engine, context, position, temperature)?))
}

/// Uniform draw in `[0, 1)` from the top 53 bits of a word.
#[inline]
pub fn unit_draw<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF draw: first index whose cumulative mass exceeds `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass; take the last supported token
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Autoregressive sampling of one response. Timestamps are left at zero.
pub fn rollout<R: RngCore + ?Sized>(
    params: &ParamTable,
    engine: EngineKind,
    task: &TaskConfig,
    prompt: &Prompt,
    max_len: usize,
    temperature: f64,
    version_id: u64,
    rng: &mut R,
) -> Result<Sample> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let context = prompt.payload.context_id;
    let eos = task.eos_token();
    let mut tokens = Vec::with_capacity(max_len);
    let mut logps = Vec::with_capacity(max_len);
    let mut status = if eos.is_some() {
        SampleStatus::Truncated
    } else {
        SampleStatus::Complete
    };
    for pos in 0..max_len {
        let probs = token_dist_tempered(params, engine, context, pos, temperature)?;
        let tok = sample_index(&probs, unit_draw(rng));
        tokens.push(tok as Token);
        logps.push(libm::log(probs[tok]));
        if Some(tok as Token) == eos {
            status = SampleStatus::Complete;
            break;
        }
    }
    Ok(Sample {
        prompt_id: prompt.prompt_id,
        context_id: context,
        version_id,
        tokens,
        infer_logps: logps,
        train_logps: None,
        temperature,
        status,
        reward: None,
        t_start: 0,
        t_end: 0,
    })
}

/// Per-token log-probabilities of `sample` under `engine`, at the sample's temperature.
pub fn logprob_trace(params: &ParamTable, engine: EngineKind, sample: &Sample) -> Result<Vec<f64>> {
    if sample.status == SampleStatus::InFlight {
        return Err(Error::InFlightSample(sample.prompt_id));
    }
    sample
        .tokens
        .iter()
        .enumerate()
        .map(|(pos, &tok)| {
            let probs = token_dist_tempered(params, engine, sample.context_id, pos, sample.temperature)?;
            let p = probs.get(tok as usize).ok_or(Error::IndexOutOfRange {
                what: "token",
                index: tok as usize,
                limit: probs.len(),
            })?;
            Ok(libm::log(*p))
        })
        .collect()
}

/// Noisy verifier: with probability `error_rate` the grade fails outright,
/// otherwise the true verdict is reported with probability `accuracy` and
/// flipped otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraderConfig {
    pub accuracy: f64,
    #[serde(default)]
    pub error_rate: f64,
}

impl GraderConfig {
    /// Measured accuracies of three reward models: rule-based, a
    /// non-reasoning generative judge, and a reasoning generative judge.
    pub const RULE_BASED: f64 = 0.809;
    pub const NON_REASONING_GENRM: f64 = 0.940;
    pub const REASONING_GENRM: f64 = 0.988;

    pub fn exact() -> Self {
        Self {
            accuracy: 1.0,
            error_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy > 0.0 && self.accuracy <= 1.0) {
            return Err(Error::Config(format!("accuracy must be in (0,1], got {}", self.accuracy)));
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::Config(format!("error_rate must be in [0,1], got {}", self.error_rate)));
        }
        Ok(())
    }
}

impl Default for GraderConfig {
    fn default() -> Self {
        Self {
            accuracy: Self::REASONING_GENRM,
            error_rate: 0.01,
        }
    }
}

/// Tokens before the first end token (all tokens when there is none).
pub fn answer_part<'a>(task: &TaskConfig, tokens: &'a [Token]) -> &'a [Token] {
    match task.eos_token().and_then(|e| tokens.iter().position(|&t| t == e)) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

/// Exact-match verdict without grader noise.
pub fn is_correct(task: &TaskConfig, sample: &Sample, prompt: &Prompt) -> bool {
    answer_part(task, &sample.tokens) == prompt.ground_truth.as_slice()
}

/// Grades a finished sample. Always consumes exactly two uniform draws.
pub fn grade(
    sample: &Sample,
    prompt: &Prompt,
    task: &TaskConfig,
    grader: &GraderConfig,
    rng: &mut SplitRng,
) -> Result<RewardOutcome> {
    if sample.status == SampleStatus::InFlight {
        return Err(Error::InFlightSample(sample.prompt_id));
    }
    let u_err = rng.next_f64();
    let u_flip = rng.next_f64();
    if u_err < grader.error_rate {
        return Ok(RewardOutcome::grade_error());
    }
    let truth = is_correct(task, sample, prompt);
    let verdict = if u_flip < grader.accuracy { truth } else { !truth };
    Ok(RewardOutcome::from_kind(if verdict {
        RewardKind::Pass
    } else {
        RewardKind::Fail
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepetitionConfig {
    pub ngram: usize,
    pub min_repeats: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            ngram: 1,
            min_repeats: 2,
        }
    }
}

/// True iff the last `ngram * min_repeats` tokens are one n-gram repeated
/// `min_repeats` times back to back.
pub fn detect_repetition(tokens: &[Token], ngram: usize, min_repeats: usize) -> bool {
    if ngram == 0 || min_repeats < 2 {
        return false;
    }
    let Some(need) = ngram.checked_mul(min_repeats) else {
        return false;
    };
    if tokens.len() < need {
        return false;
    }
    let tail = &tokens[tokens.len() - need..];
    let pattern = &tail[..ngram];
    tail.chunks(ngram).all(|c| c == pattern)
}

/// Exact distribution over every response the policy can produce, in
/// lexicographic token order. Sequences stop at the end token or at `max_len`.
pub fn enumerate_sequence_dist(
    params: &ParamTable,
    engine: EngineKind,
    task: &TaskConfig,
    prompt: &Prompt,
    max_len: usize,
) -> Result<Vec<(Vec<Token>, f64)>> {
    let vocab = params.shape()[2] as u128;
    let total = vocab.checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if total > MAX_ENUMERATED {
        return Err(Error::StateSpaceTooLarge(total));
    }
    let context = prompt.payload.context_id;
    let dists = (0..max_len)
        .map(|pos| token_dist(params, engine, context, pos))
        .collect::<Result<Vec<_>>>()?;
    let eos = task.eos_token();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(max_len);
    fn walk(
        dists: &[Vec<f64>],
        eos: Option<Token>,
        prefix: &mut Vec<Token>,
        prob: f64,
        out: &mut Vec<(Vec<Token>, f64)>,
    ) {
        let pos = prefix.len();
        if pos == dists.len() {
            out.push((prefix.clone(), prob));
            return;
        }
        for (t, p) in dists[pos].iter().enumerate() {
            prefix.push(t as Token);
            if Some(t as Token) == eos {
                out.push((prefix.clone(), prob * p));
            } else {
                walk(dists, eos, prefix, prob * p, out);
            }
            prefix.pop();
        }
    }
    walk(&dists, eos, &mut prefix, 1.0, &mut out);
    Ok(out)
}
