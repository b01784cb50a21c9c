use asyncrl_core::objective::{
    clip_term_with_slope, numeric_gradient, objective_gradient, ClipConfig, ClipMode, MaskedBatch, MaskedGroup,
    SampleMask,
};
use asyncrl_core::toy_env::{logprob_trace, token_dist_tempered, EngineKind};
use asyncrl_core::types::{Group, RewardOutcome, Sample, SampleStatus};
use asyncrl_core::{ParamTable, SplitRng};

const SHAPE: [usize; 3] = [3, 3, 4];

fn random_table(rng: &mut SplitRng, scale: f64) -> ParamTable {
    let n = SHAPE.iter().product();
    ParamTable::from_vec(SHAPE, (0..n).map(|_| scale * rng.standard_normal()).collect()).unwrap()
}

fn random_case(rng: &mut SplitRng) -> (MaskedBatch, ParamTable, ClipConfig) {
    let theta = random_table(rng, 1.0);
    let mut mu = theta.clone();
    for x in mu.as_mut_slice() {
        *x += 0.3 * rng.standard_normal();
    }
    let clip = ClipConfig {
        eps_neg_low: 0.1 + 0.2 * rng.next_f64(),
        eps_pos_high: 0.1 + 0.2 * rng.next_f64(),
        eps_neg_high: 1.5 + 2.0 * rng.next_f64(),
        tis_cap: 1.0 + rng.next_f64(),
        mode: if rng.below(2) == 0 { ClipMode::Guarded } else { ClipMode::Literal },
        use_tis: true,
    };
    let temperature = 0.7 + 0.6 * rng.next_f64();
    let mut groups = Vec::new();
    for g in 0..2u64 {
        let context = rng.below(SHAPE[0] as u64) as usize;
        let mut samples = Vec::new();
        let mut advantages = Vec::new();
        for _ in 0..3 {
            let len = 1 + rng.below(SHAPE[1] as u64) as usize;
            let tokens: Vec<u32> = (0..len).map(|_| rng.below(SHAPE[2] as u64) as u32).collect();
            let mut s = Sample {
                prompt_id: g,
                context_id: context,
                version_id: 0,
                infer_logps: vec![],
                tokens,
                train_logps: None,
                temperature,
                status: SampleStatus::Complete,
                reward: Some(RewardOutcome::pass()),
                t_start: 0,
                t_end: 0,
            };
            let train = logprob_trace(&mu, EngineKind::Train, &s).unwrap();
            s.infer_logps = train.iter().map(|l| l + 0.2 * rng.standard_normal()).collect();
            s.train_logps = Some(train);
            samples.push(s);
            advantages.push(rng.standard_normal());
        }
        groups.push(MaskedGroup {
            group: Group::new(samples).unwrap(),
            advantages,
            masks: vec![SampleMask::Use; 3],
        });
    }
    (MaskedBatch { groups, t_max: SHAPE[1] }, theta, clip)
}

/// True when every ratio sits at least 1e-3 (relative) away from a branch switch.
fn off_boundary(batch: &MaskedBatch, theta: &ParamTable, clip: &ClipConfig) -> bool {
    for mg in &batch.groups {
        for (s, &adv) in mg.group.samples.iter().zip(&mg.advantages) {
            let train = s.train_logps.as_ref().unwrap();
            for (pos, &tok) in s.tokens.iter().enumerate() {
                let p = token_dist_tempered(theta, EngineKind::Train, s.context_id, pos, s.temperature).unwrap();
                let r = (p[tok as usize].ln() - train[pos]).exp();
                let slope = |x: f64| clip_term_with_slope(x, adv, clip).unwrap().1;
                let here = slope(r);
                if slope(r * (1.0 - 1e-3)) != here || slope(r * (1.0 + 1e-3)) != here {
                    return false;
                }
            }
        }
    }
    true
}

fn max_relative_error(a: &ParamTable, b: &ParamTable) -> f64 {
    let scale = a
        .as_slice()
        .iter()
        .chain(b.as_slice())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-12);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = SplitRng::new(2024);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 100 {
        let (batch, theta, clip) = random_case(&mut rng);
        if !off_boundary(&batch, &theta, &clip) {
            continue;
        }
        let analytic = objective_gradient(&batch, &theta, &clip).unwrap();
        let numeric = numeric_gradient(&batch, &theta, &clip, 1e-5).unwrap();
        worst = worst.max(max_relative_error(&analytic, &numeric));
        checked += 1;
    }
    assert!(worst <= 1e-5, "max relative error {worst}");
}
