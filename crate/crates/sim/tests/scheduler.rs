use asyncrl_sim::{AbstractWorkload, SchedulerMode, SimConfig, SimReport, Simulator, StopCondition, TraceEvent};
use proptest::prelude::*;

fn run(cfg: SimConfig, batches: u64) -> (SimReport, Vec<TraceEvent>) {
    let w = AbstractWorkload::new(cfg.seed, cfg.lengths);
    let mut sim = Simulator::new(cfg, w).unwrap();
    let (report, _) = sim
        .run(StopCondition {
            horizon: None,
            target_batches: Some(batches),
        })
        .unwrap();
    (report, sim.take_trace())
}

fn cfg(mode: SchedulerMode, seed: u64) -> SimConfig {
    SimConfig {
        mode,
        seed,
        record_trace: true,
        ..SimConfig::default()
    }
}

#[test]
fn identical_seed_identical_trace_and_report() {
    for mode in [SchedulerMode::Sync, SchedulerMode::NaivePartial, SchedulerMode::Dora] {
        let a = run(cfg(mode, 11), 20);
        let b = run(cfg(mode, 11), 20);
        assert_eq!(a, b);
        assert!(!a.1.is_empty());
        let c = run(cfg(mode, 12), 20);
        assert_ne!(a.1, c.1);
    }
}

#[test]
fn horizon_zero_is_empty() {
    let c = cfg(SchedulerMode::Dora, 1);
    let w = AbstractWorkload::new(1, c.lengths);
    let mut sim = Simulator::new(c, w).unwrap();
    let (r, _) = sim
        .run(StopCondition {
            horizon: Some(0),
            target_batches: None,
        })
        .unwrap();
    assert_eq!(r, SimReport::empty(SchedulerMode::Dora, 1));
}

#[test]
fn horizon_stops_the_clock() {
    let c = cfg(SchedulerMode::Dora, 2);
    let w = AbstractWorkload::new(2, c.lengths);
    let mut sim = Simulator::new(c, w).unwrap();
    let (r, _) = sim
        .run(StopCondition {
            horizon: Some(5000),
            target_batches: None,
        })
        .unwrap();
    assert_eq!(r.end_tick, 5000);
    assert!(r.batches > 0);
    assert!(r.prompts.balanced());
    assert!(sim.trace().iter().all(|e| e.t <= 5000));
}

#[test]
fn dora_invariants_hold() {
    for seed in 0..8 {
        let (r, _) = run(cfg(SchedulerMode::Dora, seed), 60);
        let inv = r.invariants;
        assert_eq!(inv.version_consistency_violations, 0);
        assert_eq!(inv.staleness_violations, 0);
        assert_eq!(inv.live_version_cap_violations, 0);
        assert!(inv.max_live_versions <= 3);
        assert_eq!(inv.uniform_groups_emitted, 0);
        assert!(r.prompts.balanced(), "{:?}", r.prompts);
        assert_eq!(r.reprefill_tokens, r.reprefill.regenerate);
        assert_eq!(r.reprefill.interrupt + r.reprefill.migration, 0);
        assert!(r.decode_tokens >= r.trained_tokens);
        assert!(r.staleness_histogram.len() <= 3);
    }
}

#[test]
fn naive_violations_are_counted() {
    let (r, _) = run(cfg(SchedulerMode::NaivePartial, 4), 30);
    assert!(r.interruptions > 0);
    assert!(r.invariants.version_consistency_violations > 0);
    assert!(r.reprefill.interrupt > 0);
    assert_eq!(r.reprefill_tokens, r.reprefill.total());
}

#[test]
fn sync_keeps_one_version_and_never_overlaps() {
    let (r, trace) = run(cfg(SchedulerMode::Sync, 5), 15);
    assert_eq!(r.invariants.max_live_versions, 1);
    assert_eq!(r.invariants.generation_events_during_sync, 0);
    assert_eq!(r.reprefill_tokens, 0);
    assert_eq!(r.staleness_histogram, vec![r.trained_samples]);
    assert!(r.prompts.balanced());
    // every dispatch happens between a sync and the next batch
    let mut open = true;
    for e in &trace {
        match e.kind.as_str() {
            "train_done" => open = false,
            "sync_done" => open = true,
            "dispatch" => assert!(open),
            _ => {}
        }
    }
}

#[test]
fn dora_generates_on_old_versions_during_sync() {
    let (r, _) = run(cfg(SchedulerMode::Dora, 6), 20);
    assert!(r.invariants.old_version_events_during_sync > 0);
}

#[test]
fn dora_outpaces_sync_on_heavy_tails() {
    for seed in 0..4 {
        let (d, _) = run(cfg(SchedulerMode::Dora, seed), 30);
        let (s, _) = run(cfg(SchedulerMode::Sync, seed), 30);
        assert!(d.batches_per_tick > s.batches_per_tick, "seed {seed}");
    }
}

#[test]
fn dora_reprefills_less_than_naive() {
    for seed in 0..4 {
        let (d, _) = run(cfg(SchedulerMode::Dora, seed), 30);
        let (n, _) = run(cfg(SchedulerMode::NaivePartial, seed), 30);
        assert!(d.reprefill_tokens < n.reprefill_tokens, "seed {seed}");
    }
}

#[test]
fn elastic_idle_below_sync_idle_without_switch_cost() {
    for seed in 0..4 {
        let mut d = cfg(SchedulerMode::Dora, seed);
        d.devices.role_switch_ticks = 0;
        let mut s = cfg(SchedulerMode::Sync, seed);
        s.devices.role_switch_ticks = 0;
        let (d, _) = run(d, 30);
        let (s, _) = run(s, 30);
        assert!(d.idle_fraction_elastic <= s.idle_fraction_elastic, "seed {seed}");
    }
}

#[test]
fn pure_colocation_runs_in_every_mode() {
    for mode in [SchedulerMode::Sync, SchedulerMode::NaivePartial, SchedulerMode::Dora] {
        let mut c = cfg(mode, 7);
        c.devices.standalone_devices = 0;
        c.devices.elastic_devices = 3;
        c.max_outstanding_prompts = Some(12);
        let (r, _) = run(c, 10);
        assert_eq!(r.batches, 10, "{mode:?}");
        assert!(r.prompts.balanced());
    }
}

#[test]
fn prompt_limit_drains() {
    let mut c = cfg(SchedulerMode::Dora, 8);
    c.prompt_limit = Some(40);
    let (r, _) = run(c, 1000);
    assert!(r.batches < 1000);
    assert_eq!(r.prompts.distinct_prompts, 40);
    assert!(r.prompts.balanced());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_counters_are_sane(
        seed in any::<u64>(),
        mode in prop_oneof![Just(SchedulerMode::Sync), Just(SchedulerMode::NaivePartial), Just(SchedulerMode::Dora)],
        standalone in 0usize..3,
        elastic in 1usize..3,
        max_staleness in 0u64..4,
        switch in 0u64..5,
        sigma in 0.0f64..1.5,
    ) {
        let mut c = SimConfig { mode, seed, ..SimConfig::default() };
        c.devices.standalone_devices = standalone;
        c.devices.elastic_devices = elastic;
        c.devices.role_switch_ticks = switch;
        c.staleness.max_staleness = max_staleness;
        c.lengths.sigma = sigma;
        c.lengths.max_tokens = 2048;
        c.batch_groups = 4;
        c.max_outstanding_prompts = Some(8);
        let (r, _) = run(c, 8);
        prop_assert_eq!(r.batches, 8);
        prop_assert!(r.prompts.balanced());
        for f in [r.idle_fraction, r.idle_fraction_standalone, r.idle_fraction_elastic] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
        prop_assert_eq!(r.invariants.staleness_violations, 0);
        prop_assert_eq!(r.invariants.uniform_groups_emitted, 0);
        prop_assert!(r.decode_tokens >= r.trained_tokens);
        prop_assert_eq!(r.reprefill_tokens, r.reprefill.total());
        if mode == SchedulerMode::Dora {
            prop_assert_eq!(r.invariants.version_consistency_violations, 0);
            prop_assert!(r.invariants.max_live_versions <= max_staleness + 1);
            prop_assert_eq!(r.reprefill_tokens, r.reprefill.regenerate);
        }
    }
}
