//! The discrete-event core.
//!
//! Samples advance in continuous-rate segments (a prefill interval, then a
//! decode interval) and only produce events at segment ends. Any event that
//! changes a sample's placement bumps its epoch, which invalidates the
//! segment-end event already queued for it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use asyncrl_core::pipeline::{online_filter, BatchAssembler, StalenessPolicy};
use asyncrl_core::types::{Group, PromptId, RewardKind, Tick, VersionId};
use asyncrl_core::{Error, Result};

use crate::config::{SchedulerMode, SimConfig};
use crate::event::{Event, EventKind, EventQueue, Payload};
use crate::policy::{evict_versions, interrupt_policy, load_balance, migration_cost, Disposition};
use crate::report::{SimReport, TraceEvent};
use crate::workload::{SampleKey, SampleMeta, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleState {
    Prefill,
    Decode,
    /// Parked with its KV-cache on a device that left the generator role.
    Suspended,
    /// Frozen in place while its device recomputes log-probabilities.
    Paused,
    Migrating,
    Done,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cause {
    Fresh,
    Regenerate,
    Interrupt,
    Migration,
}

#[derive(Debug, Clone)]
struct SimSample {
    key: SampleKey,
    device: usize,
    version: VersionId,
    mixed: bool,
    state: SampleState,
    /// Tokens whose KV is resident (prompt plus decoded prefix once prefilled).
    kv: u64,
    decoded: u64,
    length: u64,
    seg_start: Tick,
    seg_from: u64,
    cause: Cause,
    epoch: u32,
    t_start: Tick,
    t_end: Tick,
}

#[derive(Debug, Clone, Default)]
struct PromptRec {
    attempt: u32,
    samples: Vec<usize>,
    done: usize,
    /// Highest KV position ever computed, per sample index, across attempts.
    high_water: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Device {
    standalone: bool,
    members: BTreeSet<usize>,
    running: usize,
    paused: bool,
    resident: BTreeSet<VersionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Generator,
    ToTrainer,
    Trainer,
    ToGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrainPhase {
    Idle,
    Pending,
    Switching,
    Recompute,
    Training,
}

/// Why the run loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Target,
    Horizon,
    Drained,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StopCondition {
    pub horizon: Option<Tick>,
    pub target_batches: Option<u64>,
}

pub struct Simulator<W: Workload> {
    cfg: SimConfig,
    workload: W,
    clock: Tick,
    started: bool,
    queue: EventQueue,
    devices: Vec<Device>,
    samples: Vec<SimSample>,
    prompts: Vec<PromptRec>,
    regen_queue: VecDeque<PromptId>,
    next_fresh: PromptId,
    inflight_prompts: BTreeSet<PromptId>,
    awaiting_grade: u64,
    assembler: BatchAssembler,
    latest: VersionId,
    synced: VersionId,
    syncing: bool,
    live: BTreeSet<VersionId>,
    refs: BTreeMap<VersionId, usize>,
    elastic_role: Role,
    phase: TrainPhase,
    batch: Vec<Group>,
    batch_tokens: u64,
    sync_to_dispatch: usize,
    sync_outstanding: usize,
    idle_standalone: u128,
    idle_elastic: u128,
    fresh_prefill: u64,
    report: SimReport,
    trace: Vec<TraceEvent>,
}

impl<W: Workload> Simulator<W> {
    pub fn new(cfg: SimConfig, workload: W) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.devices;
        let devices = (0..d.device_count())
            .map(|i| Device {
                standalone: i < d.standalone_devices,
                members: BTreeSet::new(),
                running: 0,
                paused: false,
                resident: [0].into_iter().collect(),
            })
            .collect();
        let assembler = BatchAssembler::new(cfg.batch_groups, cfg.staleness)?;
        let report = SimReport::empty(cfg.mode, cfg.seed);
        Ok(Self {
            workload,
            clock: 0,
            started: false,
            queue: EventQueue::default(),
            devices,
            samples: Vec::new(),
            prompts: Vec::new(),
            regen_queue: VecDeque::new(),
            next_fresh: 0,
            inflight_prompts: BTreeSet::new(),
            awaiting_grade: 0,
            assembler,
            latest: 0,
            synced: 0,
            syncing: false,
            live: [0].into_iter().collect(),
            refs: BTreeMap::new(),
            elastic_role: Role::Generator,
            phase: TrainPhase::Idle,
            batch: Vec::new(),
            batch_tokens: 0,
            sync_to_dispatch: 0,
            sync_outstanding: 0,
            idle_standalone: 0,
            idle_elastic: 0,
            fresh_prefill: 0,
            report,
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn workload(&self) -> &W {
        &self.workload
    }

    pub fn into_workload(self) -> W {
        self.workload
    }

    pub fn latest_version(&self) -> VersionId {
        self.latest
    }

    pub fn live_versions(&self) -> usize {
        self.live.len()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    fn streaming(&self) -> bool {
        self.cfg.mode != SchedulerMode::Sync
    }

    fn g(&self) -> usize {
        self.cfg.group_size
    }

    fn log(&mut self, kind: &str, prompt: Option<PromptId>, sample: Option<u32>, version: Option<VersionId>, value: Option<u64>) {
        if self.cfg.record_trace {
            self.trace.push(TraceEvent {
                t: self.clock,
                kind: kind.to_string(),
                prompt,
                sample,
                version,
                value,
            });
        }
    }

    /// Processes the next event. `Ok(None)` when the queue is empty.
    pub fn step(&mut self) -> Result<Option<Event>> {
        if !self.started {
            self.started = true;
            self.pump()?;
        }
        let Some(ev) = self.queue.pop() else {
            return Ok(None);
        };
        self.account_idle(ev.time);
        self.clock = ev.time;
        self.handle(ev)?;
        self.pump()?;
        self.observe_live();
        Ok(Some(ev))
    }

    pub fn run(&mut self, stop: StopCondition) -> Result<(SimReport, StopReason)> {
        if stop.horizon == Some(0) || stop.target_batches == Some(0) {
            let reason = if stop.horizon == Some(0) {
                StopReason::Horizon
            } else {
                StopReason::Target
            };
            return Ok((self.finalize(), reason));
        }
        if !self.started {
            self.started = true;
            self.pump()?;
        }
        let reason = loop {
            if let Some(target) = stop.target_batches {
                if self.report.batches >= target {
                    break StopReason::Target;
                }
            }
            let Some(next) = self.queue.peek_time() else {
                break StopReason::Drained;
            };
            if let Some(h) = stop.horizon {
                if next > h {
                    self.account_idle(h);
                    self.clock = h;
                    break StopReason::Horizon;
                }
            }
            self.step()?;
        };
        Ok((self.finalize(), reason))
    }

    fn account_idle(&mut self, until: Tick) {
        let dt = (until.saturating_sub(self.clock)) as u128;
        if dt == 0 {
            return;
        }
        for i in 0..self.devices.len() {
            if !self.device_busy(i) {
                if self.devices[i].standalone {
                    self.idle_standalone += dt;
                } else {
                    self.idle_elastic += dt;
                }
            }
        }
    }

    fn is_trainer(&self, d: usize) -> bool {
        !self.devices[d].standalone || !self.streaming()
    }

    fn is_recomputer(&self, d: usize) -> bool {
        if self.streaming() && self.cfg.devices.standalone_devices > 0 {
            self.devices[d].standalone
        } else {
            self.is_trainer(d)
        }
    }

    fn device_busy(&self, d: usize) -> bool {
        match self.phase {
            TrainPhase::Recompute if self.is_recomputer(d) => return true,
            TrainPhase::Training if self.is_trainer(d) => return true,
            _ => {}
        }
        self.can_generate(d) && self.devices[d].running > 0
    }

    fn can_generate(&self, d: usize) -> bool {
        let dev = &self.devices[d];
        if dev.paused {
            return false;
        }
        if dev.standalone {
            self.streaming() || matches!(self.phase, TrainPhase::Idle | TrainPhase::Pending)
        } else {
            self.elastic_role == Role::Generator
        }
    }

    fn free_slots(&self, d: usize) -> usize {
        if !self.can_generate(d) {
            return 0;
        }
        self.cfg.devices.slots_per_device.saturating_sub(self.devices[d].members.len())
    }

    fn observe_live(&mut self) {
        let n = self.live.len() as u64;
        let inv = &mut self.report.invariants;
        inv.max_live_versions = inv.max_live_versions.max(n);
        if self.cfg.mode == SchedulerMode::Dora && n > self.cfg.staleness.max_staleness + 1 {
            inv.live_version_cap_violations += 1;
        }
    }

    fn schedule(&mut self, delay: Tick, kind: EventKind, payload: Payload) {
        self.queue.push(self.clock + delay, kind, payload);
    }

    fn add_ref(&mut self, v: VersionId) {
        *self.refs.entry(v).or_insert(0) += 1;
    }

    fn drop_ref(&mut self, v: VersionId) {
        if let Some(c) = self.refs.get_mut(&v) {
            *c -= 1;
            if *c == 0 {
                self.refs.remove(&v);
            }
        }
    }

    /// Brings a running sample's progress up to the current clock.
    fn settle(&mut self, idx: usize) {
        let now = self.clock;
        let prompt_tokens = self.cfg.prompt_tokens;
        let (prefill_rate, decode_rate) = (self.cfg.devices.prefill_rate, self.cfg.devices.decode_rate);
        let s = &mut self.samples[idx];
        let elapsed = now - s.seg_start;
        match s.state {
            SampleState::Prefill => {
                let target = prompt_tokens + s.decoded;
                let done = (target - s.seg_from).min(elapsed.saturating_mul(prefill_rate));
                let from = s.seg_from;
                let to = from + done;
                s.kv = to;
                s.seg_from = to;
                s.seg_start = now;
                let cause = s.cause;
                let rec = &mut self.prompts[s.key.prompt as usize];
                let hw = &mut rec.high_water[s.key.index as usize];
                let overlap = (*hw).min(to).saturating_sub(from);
                *hw = (*hw).max(to);
                self.report.prefill_tokens += done;
                self.fresh_prefill += done - overlap;
                let ledger = &mut self.report.reprefill;
                match cause {
                    Cause::Fresh | Cause::Regenerate => ledger.regenerate += overlap,
                    Cause::Interrupt => ledger.interrupt += overlap,
                    Cause::Migration => ledger.migration += overlap,
                }
            }
            SampleState::Decode => {
                let done = (s.length - s.seg_from).min(elapsed.saturating_mul(decode_rate));
                s.decoded = s.seg_from + done;
                s.kv = prompt_tokens + s.decoded;
                s.seg_from = s.decoded;
                s.seg_start = now;
                let rec = &mut self.prompts[s.key.prompt as usize];
                let hw = &mut rec.high_water[s.key.index as usize];
                *hw = (*hw).max(s.kv);
                self.report.decode_tokens += done;
            }
            _ => {}
        }
    }

    fn is_running(state: SampleState) -> bool {
        matches!(state, SampleState::Prefill | SampleState::Decode)
    }

    /// Starts the next segment of a sample that is not running.
    fn start_running(&mut self, idx: usize) {
        let prompt_tokens = self.cfg.prompt_tokens;
        let (prefill_rate, decode_rate) = (self.cfg.devices.prefill_rate, self.cfg.devices.decode_rate);
        let now = self.clock;
        let s = &mut self.samples[idx];
        debug_assert!(!Self::is_running(s.state));
        s.epoch += 1;
        s.seg_start = now;
        let target = prompt_tokens + s.decoded;
        let (kind, delay) = if s.kv < target {
            s.state = SampleState::Prefill;
            s.seg_from = s.kv;
            (EventKind::PrefillDone, (target - s.kv).div_ceil(prefill_rate))
        } else {
            s.state = SampleState::Decode;
            s.seg_from = s.decoded;
            (EventKind::SampleDone, (s.length - s.decoded).div_ceil(decode_rate))
        };
        let payload = Payload::Sample {
            index: idx,
            epoch: s.epoch,
        };
        let device = s.device;
        self.devices[device].running += 1;
        self.schedule(delay, kind, payload);
    }

    /// Stops a running sample in place, keeping its progress and KV.
    fn halt(&mut self, idx: usize, into: SampleState) {
        if Self::is_running(self.samples[idx].state) {
            self.settle(idx);
            let d = self.samples[idx].device;
            self.devices[d].running -= 1;
        }
        let s = &mut self.samples[idx];
        s.state = into;
        s.epoch += 1;
    }

    /// Moves a stopped sample onto the newest synced version.
    fn rebase(&mut self, idx: usize) -> Result<()> {
        let newest = self.synced;
        let old = self.samples[idx].version;
        if old >= newest {
            return Ok(());
        }
        let (key, keep) = (self.samples[idx].key, self.samples[idx].decoded);
        let length = self.workload.continue_sample(key, keep, newest)?;
        self.drop_ref(old);
        self.add_ref(newest);
        let s = &mut self.samples[idx];
        s.version = newest;
        s.mixed = true;
        s.kv = 0;
        s.length = length;
        s.cause = Cause::Interrupt;
        self.report.interruptions += 1;
        self.log("interrupt", Some(key.prompt), Some(key.index), Some(newest), Some(keep));
        Ok(())
    }

    /// Restarts a stopped sample on its current device.
    fn resume(&mut self, idx: usize) -> Result<()> {
        if self.cfg.mode == SchedulerMode::NaivePartial {
            self.rebase(idx)?;
        }
        self.start_running(idx);
        Ok(())
    }

    fn detach(&mut self, idx: usize) {
        let d = self.samples[idx].device;
        if Self::is_running(self.samples[idx].state) {
            self.devices[d].running -= 1;
        }
        self.devices[d].members.remove(&idx);
    }

    fn handle(&mut self, ev: Event) -> Result<()> {
        match (ev.kind, ev.payload) {
            (EventKind::PrefillDone, Payload::Sample { index, epoch }) => {
                if self.samples[index].epoch != epoch {
                    return Ok(());
                }
                self.note_generation_event(index);
                self.settle(index);
                let d = self.samples[index].device;
                self.devices[d].running -= 1;
                self.samples[index].state = SampleState::Suspended;
                let key = self.samples[index].key;
                self.log("prefill_done", Some(key.prompt), Some(key.index), Some(self.samples[index].version), None);
                self.start_running(index);
            }
            (EventKind::SampleDone, Payload::Sample { index, epoch }) => {
                if self.samples[index].epoch != epoch {
                    return Ok(());
                }
                self.note_generation_event(index);
                self.finish_sample(index);
            }
            (EventKind::Migration, Payload::Sample { index, epoch }) => {
                if self.samples[index].epoch != epoch {
                    return Ok(());
                }
                let (d, v) = (self.samples[index].device, self.samples[index].version);
                self.devices[d].resident.insert(v);
                if self.can_generate(d) {
                    self.resume(index)?;
                } else {
                    self.samples[index].state = SampleState::Suspended;
                }
            }
            (EventKind::GroupGraded, Payload::Prompt { prompt, attempt }) => self.grade_group(prompt, attempt)?,
            (EventKind::BatchReady, _) => self.begin_batch()?,
            (EventKind::RoleSwitchDone, _) => self.role_switch_done()?,
            (EventKind::LogpRecomputeDone, _) => self.recompute_done()?,
            (EventKind::TrainDone, _) => self.train_done()?,
            (EventKind::SyncDone, Payload::Version(v)) => self.sync_done(v)?,
            (kind, payload) => {
                return Err(Error::InvalidArgument(format!("malformed event {kind:?} {payload:?}")));
            }
        }
        Ok(())
    }

    fn note_generation_event(&mut self, idx: usize) {
        if self.syncing {
            self.report.invariants.generation_events_during_sync += 1;
            if self.samples[idx].version < self.latest {
                self.report.invariants.old_version_events_during_sync += 1;
            }
        }
    }

    fn finish_sample(&mut self, idx: usize) {
        self.settle(idx);
        self.detach(idx);
        let now = self.clock;
        let s = &mut self.samples[idx];
        s.state = SampleState::Done;
        s.t_end = now;
        s.epoch += 1;
        let (key, version, mixed, length) = (s.key, s.version, s.mixed, s.length);
        if mixed {
            self.report.invariants.version_consistency_violations += 1;
        }
        self.drop_ref(version);
        self.log("sample_done", Some(key.prompt), Some(key.index), Some(version), Some(length));
        let g = self.g();
        let rec = &mut self.prompts[key.prompt as usize];
        rec.done += 1;
        if rec.done == g {
            self.inflight_prompts.remove(&key.prompt);
            self.awaiting_grade += 1;
            self.schedule(
                self.cfg.devices.grade_ticks,
                EventKind::GroupGraded,
                Payload::Prompt {
                    prompt: key.prompt,
                    attempt: key.attempt,
                },
            );
        }
    }

    fn grade_group(&mut self, prompt: PromptId, attempt: u32) -> Result<()> {
        self.awaiting_grade -= 1;
        let meta: Vec<SampleMeta> = self.prompts[prompt as usize]
            .samples
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                SampleMeta {
                    version: s.version,
                    t_start: s.t_start,
                    t_end: s.t_end,
                }
            })
            .collect();
        let group = self.workload.grade(prompt, attempt, &meta)?;
        let decision = online_filter(&group)?;
        let passes = group.samples.iter().filter(|s| s.reward_kind() == Some(RewardKind::Pass)).count();
        let kept = self.assembler.accept(group, decision);
        if !kept {
            self.report.prompts.filtered += 1;
        }
        if !self.streaming() {
            self.sync_outstanding -= 1;
        }
        self.log(
            if kept { "group_kept" } else { "group_filtered" },
            Some(prompt),
            None,
            None,
            Some(passes as u64),
        );
        Ok(())
    }

    fn requeue_expired(&mut self) {
        let expired = self.assembler.take_regenerations();
        for &p in expired.iter().rev() {
            self.report.prompts.regenerated += 1;
            self.workload.discard_attempt(p, self.prompts[p as usize].attempt);
            self.prompts[p as usize].attempt += 1;
            self.regen_queue.push_front(p);
            self.log("expired", Some(p), None, None, None);
        }
    }

    /// Starts training, migrates parked samples and dispatches prompts.
    fn pump(&mut self) -> Result<()> {
        self.try_start_batch();
        if self.streaming() {
            self.rebalance();
        }
        self.dispatch()
    }

    fn try_start_batch(&mut self) {
        if self.phase != TrainPhase::Idle {
            return;
        }
        if self.streaming() {
            if !matches!(self.elastic_role, Role::Generator | Role::Trainer) {
                return;
            }
            let batch = self.assembler.try_emit(self.latest);
            self.requeue_expired();
            if let Some(batch) = batch {
                self.batch = batch;
                self.phase = TrainPhase::Pending;
                self.schedule(0, EventKind::BatchReady, Payload::None);
            } else if self.elastic_role == Role::Trainer {
                self.switch_elastic(Role::ToGenerator);
            }
            return;
        }
        let round_open = self.sync_to_dispatch > 0 || self.sync_outstanding > 0;
        if round_open || self.elastic_role != Role::Generator || self.syncing {
            return;
        }
        if let Some(batch) = self.assembler.try_emit(self.latest) {
            self.requeue_expired();
            self.batch = batch;
            self.phase = TrainPhase::Pending;
            self.schedule(0, EventKind::BatchReady, Payload::None);
        } else {
            self.sync_to_dispatch = self.cfg.batch_groups - self.assembler.pending();
        }
    }

    fn switch_elastic(&mut self, to: Role) {
        let ticks = self.cfg.devices.role_switch_ticks;
        self.elastic_role = to;
        self.report.phases.role_switch += ticks;
        self.log("role_switch", None, None, None, Some(matches!(to, Role::ToTrainer) as u64));
        self.schedule(ticks, EventKind::RoleSwitchDone, Payload::None);
    }

    fn begin_batch(&mut self) -> Result<()> {
        let tokens: u64 = self
            .batch
            .iter()
            .flat_map(|g| {
                let rec = &self.prompts[g.prompt_id as usize];
                rec.samples.iter().map(|&i| self.cfg.prompt_tokens + self.samples[i].length)
            })
            .sum();
        self.batch_tokens = tokens;
        let uniform = self
            .batch
            .iter()
            .filter(|g| {
                let pass = g.samples.iter().filter(|s| s.reward_kind() == Some(RewardKind::Pass)).count();
                let fail = g.samples.iter().filter(|s| s.reward_kind() == Some(RewardKind::Fail)).count();
                pass == 0 || fail == 0
            })
            .count();
        self.report.invariants.uniform_groups_emitted += uniform as u64;
        self.report.prompts.consumed += self.batch.len() as u64;
        self.log("batch_ready", None, None, Some(self.latest), Some(self.batch.len() as u64));
        if self.elastic_role == Role::Trainer {
            self.begin_recompute();
            return Ok(());
        }
        self.phase = TrainPhase::Switching;
        let elastic: Vec<usize> = (0..self.devices.len()).filter(|&d| !self.devices[d].standalone).collect();
        for d in elastic {
            let members: Vec<usize> = self.devices[d].members.iter().copied().collect();
            for idx in members {
                if Self::is_running(self.samples[idx].state) {
                    self.halt(idx, SampleState::Suspended);
                }
            }
        }
        self.switch_elastic(Role::ToTrainer);
        Ok(())
    }

    fn role_switch_done(&mut self) -> Result<()> {
        match self.elastic_role {
            Role::ToTrainer => {
                self.elastic_role = Role::Trainer;
                self.begin_recompute();
            }
            Role::ToGenerator => {
                self.elastic_role = Role::Generator;
                let parked: Vec<usize> = self
                    .devices
                    .iter()
                    .filter(|d| !d.standalone)
                    .flat_map(|d| d.members.iter().copied())
                    .filter(|&i| self.samples[i].state == SampleState::Suspended)
                    .collect();
                for idx in parked {
                    self.resume(idx)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn begin_recompute(&mut self) {
        self.phase = TrainPhase::Recompute;
        let recomputers: Vec<usize> = (0..self.devices.len()).filter(|&d| self.is_recomputer(d)).collect();
        if self.streaming() {
            for &d in &recomputers {
                if !self.devices[d].standalone {
                    continue;
                }
                let members: Vec<usize> = self.devices[d].members.iter().copied().collect();
                for idx in members {
                    if Self::is_running(self.samples[idx].state) {
                        self.halt(idx, SampleState::Paused);
                    }
                }
                self.devices[d].paused = true;
            }
        }
        let rate = self.cfg.devices.logp_rate * recomputers.len() as u64;
        let ticks = self.batch_tokens.div_ceil(rate);
        self.report.phases.recompute += ticks;
        self.schedule(ticks, EventKind::LogpRecomputeDone, Payload::None);
    }

    fn recompute_done(&mut self) -> Result<()> {
        let mut paused = Vec::new();
        for dev in self.devices.iter_mut().filter(|d| d.paused) {
            dev.paused = false;
            paused.extend(dev.members.iter().copied());
        }
        for idx in paused {
            if matches!(self.samples[idx].state, SampleState::Paused | SampleState::Suspended) {
                self.resume(idx)?;
            }
        }
        self.phase = TrainPhase::Training;
        let trainers = (0..self.devices.len()).filter(|&d| self.is_trainer(d)).count() as u64;
        let ticks = self.batch_tokens.div_ceil(self.cfg.devices.train_rate * trainers);
        self.report.phases.train += ticks;
        self.log("logp_recompute_done", None, None, Some(self.latest), Some(self.batch_tokens));
        self.schedule(ticks, EventKind::TrainDone, Payload::None);
        Ok(())
    }

    fn train_done(&mut self) -> Result<()> {
        let batch = std::mem::take(&mut self.batch);
        let current = self.latest;
        self.workload.train(&batch, current, self.clock)?;
        let max = self.cfg.staleness.max_staleness;
        for g in &batch {
            for s in &g.samples {
                let st = current - s.version_id.min(current);
                if st > max {
                    self.report.invariants.staleness_violations += 1;
                }
                let h = &mut self.report.staleness_histogram;
                if h.len() <= st as usize {
                    h.resize(st as usize + 1, 0);
                }
                h[st as usize] += 1;
            }
            let rec = &self.prompts[g.prompt_id as usize];
            self.report.trained_samples += rec.samples.len() as u64;
            self.report.trained_tokens += rec.samples.iter().map(|&i| self.samples[i].length).sum::<u64>();
        }
        self.report.batches += 1;
        self.latest += 1;
        self.report.versions_created += 1;
        self.live.insert(self.latest);
        self.phase = TrainPhase::Idle;
        self.log("train_done", None, None, Some(self.latest), Some(batch.len() as u64));

        if self.cfg.mode == SchedulerMode::Dora {
            self.discard_stale()?;
        }
        self.evict();
        self.syncing = true;
        self.report.phases.sync += self.cfg.devices.weight_sync_ticks;
        self.schedule(self.cfg.devices.weight_sync_ticks, EventKind::SyncDone, Payload::Version(self.latest));
        if !self.streaming() {
            self.switch_elastic(Role::ToGenerator);
        }
        Ok(())
    }

    fn discard_stale(&mut self) -> Result<()> {
        let newest = self.latest;
        let policy = self.cfg.staleness;
        let stale: Vec<PromptId> = self
            .inflight_prompts
            .iter()
            .copied()
            .filter(|&p| {
                let rec = &self.prompts[p as usize];
                rec.samples.iter().any(|&i| {
                    let s = &self.samples[i];
                    s.state != SampleState::Done
                        && interrupt_policy(self.cfg.mode, s.version, newest, &policy, false)
                            == Disposition::DiscardRegenerate
                })
            })
            .collect();
        for &p in stale.iter().rev() {
            self.discard_attempt(p);
        }
        Ok(())
    }

    fn discard_attempt(&mut self, p: PromptId) {
        let members = self.prompts[p as usize].samples.clone();
        let mut version = None;
        for idx in members {
            let state = self.samples[idx].state;
            if Self::is_running(state) {
                self.settle(idx);
            }
            let s = &self.samples[idx];
            self.report.wasted_decode_tokens += s.decoded;
            self.report.discarded_samples += 1;
            version = Some(s.version);
            if state != SampleState::Done {
                let v = s.version;
                self.detach(idx);
                self.drop_ref(v);
            }
            let s = &mut self.samples[idx];
            s.state = SampleState::Discarded;
            s.epoch += 1;
        }
        let rec = &mut self.prompts[p as usize];
        let attempt = rec.attempt;
        rec.attempt += 1;
        rec.samples.clear();
        rec.done = 0;
        self.inflight_prompts.remove(&p);
        self.workload.discard_attempt(p, attempt);
        self.report.prompts.regenerated += 1;
        self.regen_queue.push_front(p);
        self.log("discard", Some(p), None, version, Some(attempt as u64));
    }

    fn evict(&mut self) {
        // sync trains only on the version it generated with
        let policy = match self.cfg.mode {
            SchedulerMode::Sync => StalenessPolicy { max_staleness: 0 },
            _ => self.cfg.staleness,
        };
        let evicted = evict_versions(&self.live, &self.refs, self.latest, &policy);
        for v in evicted {
            self.live.remove(&v);
            for d in &mut self.devices {
                d.resident.remove(&v);
            }
            self.workload.evict(v);
            self.report.versions_evicted += 1;
            self.log("evict", None, None, Some(v), None);
        }
    }

    fn sync_done(&mut self, v: VersionId) -> Result<()> {
        self.synced = self.synced.max(v);
        if v == self.latest {
            self.syncing = false;
        }
        for d in 0..self.devices.len() {
            let keep: BTreeSet<VersionId> = self.devices[d]
                .members
                .iter()
                .map(|&i| self.samples[i].version)
                .chain(std::iter::once(v))
                .collect();
            self.devices[d].resident = keep;
        }
        self.log("sync_done", None, None, Some(v), None);
        if self.cfg.mode == SchedulerMode::NaivePartial {
            let running: Vec<usize> = self
                .devices
                .iter()
                .flat_map(|d| d.members.iter().copied())
                .filter(|&i| Self::is_running(self.samples[i].state) && self.samples[i].version < v)
                .collect();
            for idx in running {
                self.halt(idx, SampleState::Suspended);
                self.resume(idx)?;
            }
        }
        self.evict();
        Ok(())
    }

    /// Moves samples parked on non-generating devices to devices with free slots.
    fn rebalance(&mut self) {
        let n = self.devices.len();
        let mut waiting = vec![0usize; n];
        let mut parked: Vec<Vec<usize>> = vec![Vec::new(); n];
        for d in 0..n {
            if self.can_generate(d) || self.devices[d].paused {
                continue;
            }
            parked[d] = self.devices[d]
                .members
                .iter()
                .copied()
                .filter(|&i| self.samples[i].state == SampleState::Suspended)
                .collect();
            waiting[d] = parked[d].len();
        }
        if waiting.iter().all(|&w| w == 0) {
            return;
        }
        let free: Vec<usize> = (0..n).map(|d| self.free_slots(d)).collect();
        let moves = load_balance(&waiting, &free, self.cfg.lb_threshold);
        let mut cursor = vec![0usize; n];
        for (from, to) in moves {
            let idx = parked[from][cursor[from]];
            cursor[from] += 1;
            self.migrate(idx, to);
        }
    }

    fn migrate(&mut self, idx: usize, to: usize) {
        let from = self.samples[idx].device;
        self.devices[from].members.remove(&idx);
        self.devices[to].members.insert(idx);
        let dora = self.cfg.mode == SchedulerMode::Dora;
        let s = &mut self.samples[idx];
        s.device = to;
        s.state = SampleState::Migrating;
        s.epoch += 1;
        let (kv, version, epoch, key) = (s.kv, s.version, s.epoch, s.key);
        let cost = if dora {
            let needs_weights = !self.devices[to].resident.contains(&version);
            self.report.kv_transfer_tokens += kv;
            migration_cost(
                kv,
                self.cfg.devices.kv_transfer_rate,
                needs_weights,
                self.cfg.devices.weight_transfer_ticks,
            )
        } else {
            let s = &mut self.samples[idx];
            s.kv = 0;
            s.cause = Cause::Migration;
            0
        };
        self.report.migrations += 1;
        self.log("migration", Some(key.prompt), Some(key.index), Some(version), Some(to as u64));
        self.schedule(cost, EventKind::Migration, Payload::Sample { index: idx, epoch });
    }

    fn outstanding(&self) -> usize {
        self.inflight_prompts.len() + self.awaiting_grade as usize + self.assembler.pending()
    }

    fn next_prompt(&mut self) -> Option<PromptId> {
        if let Some(p) = self.regen_queue.pop_front() {
            return Some(p);
        }
        if self.cfg.prompt_limit.is_some_and(|l| self.next_fresh >= l) {
            return None;
        }
        let p = self.next_fresh;
        self.next_fresh += 1;
        self.prompts.push(PromptRec {
            high_water: vec![0; self.cfg.group_size],
            ..PromptRec::default()
        });
        self.report.prompts.distinct_prompts += 1;
        Some(p)
    }

    fn dispatch(&mut self) -> Result<()> {
        loop {
            if self.streaming() {
                if self.cfg.max_outstanding_prompts.is_some_and(|cap| self.outstanding() >= cap) {
                    return Ok(());
                }
            } else if self.sync_to_dispatch == 0 || self.phase != TrainPhase::Idle {
                return Ok(());
            }
            let free: usize = (0..self.devices.len()).map(|d| self.free_slots(d)).sum();
            if free < self.g() {
                return Ok(());
            }
            let Some(p) = self.next_prompt() else {
                if !self.streaming() {
                    self.sync_to_dispatch = 0;
                }
                return Ok(());
            };
            if !self.streaming() {
                self.sync_to_dispatch -= 1;
                self.sync_outstanding += 1;
            }
            self.dispatch_prompt(p)?;
        }
    }

    fn dispatch_prompt(&mut self, p: PromptId) -> Result<()> {
        let version = self.synced;
        let attempt = self.prompts[p as usize].attempt;
        let cause = if attempt > 0 { Cause::Regenerate } else { Cause::Fresh };
        self.report.prompts.attempts_dispatched += 1;
        self.inflight_prompts.insert(p);
        self.log("dispatch", Some(p), None, Some(version), Some(attempt as u64));
        let mut ids = Vec::with_capacity(self.g());
        for j in 0..self.g() {
            let device = (0..self.devices.len())
                .max_by(|&a, &b| self.free_slots(a).cmp(&self.free_slots(b)).then(b.cmp(&a)))
                .filter(|&d| self.free_slots(d) > 0)
                .ok_or_else(|| Error::InvalidArgument("no free slot for dispatch".into()))?;
            let key = SampleKey {
                prompt: p,
                attempt,
                index: j as u32,
            };
            let length = self.workload.begin_sample(key, version)?;
            let idx = self.samples.len();
            self.samples.push(SimSample {
                key,
                device,
                version,
                mixed: false,
                state: SampleState::Suspended,
                kv: 0,
                decoded: 0,
                length,
                seg_start: self.clock,
                seg_from: 0,
                cause,
                epoch: 0,
                t_start: self.clock,
                t_end: self.clock,
            });
            self.devices[device].members.insert(idx);
            self.devices[device].resident.insert(version);
            self.add_ref(version);
            ids.push(idx);
            self.start_running(idx);
        }
        let rec = &mut self.prompts[p as usize];
        rec.samples = ids;
        rec.done = 0;
        Ok(())
    }

    /// Settles running samples and derives the summary fields.
    fn finalize(&mut self) -> SimReport {
        let running: Vec<usize> = self
            .devices
            .iter()
            .flat_map(|d| d.members.iter().copied())
            .filter(|&i| Self::is_running(self.samples[i].state))
            .collect();
        for idx in running {
            self.settle(idx);
        }
        let mut r = self.report.clone();
        r.end_tick = self.clock;
        r.reprefill_tokens = r.prefill_tokens - self.fresh_prefill;
        r.in_flight_samples_at_end = self.devices.iter().map(|d| d.members.len() as u64).sum();
        r.prompts.in_flight_at_end = self.inflight_prompts.len() as u64;
        r.prompts.awaiting_grade_at_end = self.awaiting_grade;
        let unconsumed = if self.phase == TrainPhase::Pending { self.batch.len() } else { 0 };
        r.prompts.awaiting_batch_at_end = (self.assembler.pending() + unconsumed) as u64;
        let span = r.end_tick as f64;
        let per_tick = |x: u64| if span == 0.0 { 0.0 } else { x as f64 / span };
        r.batches_per_tick = per_tick(r.batches);
        r.samples_per_tick = per_tick(r.trained_samples);
        r.tokens_per_tick = per_tick(r.trained_tokens);
        let d = &self.cfg.devices;
        let frac = |idle: u128, n: usize| if n == 0 || span == 0.0 { 0.0 } else { idle as f64 / (span * n as f64) };
        r.idle_fraction_standalone = frac(self.idle_standalone, d.standalone_devices);
        r.idle_fraction_elastic = frac(self.idle_elastic, d.elastic_devices);
        r.idle_fraction = frac(self.idle_standalone + self.idle_elastic, d.device_count());
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::AbstractWorkload;

    /// Every response is exactly `len` tokens.
    struct Fixed {
        inner: AbstractWorkload,
        len: u64,
    }

    impl Workload for Fixed {
        fn begin_sample(&mut self, _key: SampleKey, _version: VersionId) -> Result<u64> {
            Ok(self.len)
        }
        fn continue_sample(&mut self, _key: SampleKey, keep: u64, _version: VersionId) -> Result<u64> {
            Ok(self.len.max(keep + 1))
        }
        fn grade(&mut self, prompt: PromptId, attempt: u32, meta: &[SampleMeta]) -> Result<Group> {
            self.inner.grade(prompt, attempt, meta)
        }
        fn train(&mut self, _batch: &[Group], _current: VersionId, _at: Tick) -> Result<()> {
            Ok(())
        }
    }

    fn naive_sim() -> Simulator<Fixed> {
        let mut cfg = SimConfig {
            mode: SchedulerMode::NaivePartial,
            group_size: 2,
            batch_groups: 1,
            prompt_tokens: 100,
            ..SimConfig::default()
        };
        cfg.devices.decode_rate = 1;
        cfg.devices.prefill_rate = 1000;
        let inner = AbstractWorkload::new(0, cfg.lengths);
        Simulator::new(cfg, Fixed { inner, len: 2000 }).unwrap()
    }

    #[test]
    fn naive_rebase_charges_prompt_plus_prefix() {
        let mut sim = naive_sim();
        sim.next_prompt();
        sim.dispatch_prompt(0).unwrap();
        // prefill takes 1 tick, then 900 decode ticks
        for _ in 0..2 {
            let ev = sim.queue.pop().unwrap();
            assert_eq!((ev.time, ev.kind), (1, EventKind::PrefillDone));
            sim.clock = ev.time;
            sim.handle(ev).unwrap();
        }
        sim.clock = 901;
        sim.halt(0, SampleState::Suspended);
        assert_eq!(sim.samples[0].decoded, 900);
        sim.synced = 1;
        sim.live.insert(1);
        sim.resume(0).unwrap();
        assert_eq!(sim.samples[0].state, SampleState::Prefill);
        sim.clock = 902;
        sim.settle(0);
        assert_eq!(sim.samples[0].kv, 1000);
        assert_eq!(sim.report.reprefill.interrupt, 1000);
        assert_eq!(sim.report.prefill_tokens - sim.fresh_prefill, 1000);
        assert!(sim.samples[0].mixed);
    }

    #[test]
    fn segment_events_go_stale_when_epoch_moves() {
        let mut sim = naive_sim();
        sim.next_prompt();
        sim.dispatch_prompt(0).unwrap();
        let first = sim.queue.pop().unwrap();
        sim.halt(0, SampleState::Suspended);
        let Payload::Sample { index, epoch } = first.payload else {
            panic!("expected a sample event");
        };
        assert_eq!(index, 0);
        assert_ne!(sim.samples[0].epoch, epoch);
        sim.handle(first).unwrap();
        assert_eq!(sim.samples[0].state, SampleState::Suspended);
    }

    #[test]
    fn zero_sync_ticks_publish_immediately() {
        let mut cfg = SimConfig::default();
        cfg.devices.weight_sync_ticks = 0;
        let w = AbstractWorkload::new(3, cfg.lengths);
        let mut sim = Simulator::new(cfg, w).unwrap();
        while sim.latest == 0 {
            sim.step().unwrap().unwrap();
        }
        let trained_at = sim.clock;
        while sim.synced == 0 {
            let ev = sim.step().unwrap().unwrap();
            assert_eq!(ev.time, trained_at);
        }
    }
}
