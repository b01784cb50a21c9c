use asyncrl_core::pipeline::StalenessPolicy;
use asyncrl_core::types::Tick;
use asyncrl_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Device pools and the linear cost model. Rates are per tick; every
/// duration is `ceil(tokens / rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceGroupConfig {
    /// Devices that only ever generate.
    pub standalone_devices: usize,
    /// Devices that alternate between generating and training.
    pub elastic_devices: usize,
    /// Concurrent samples a generating device can hold.
    pub slots_per_device: usize,
    pub role_switch_ticks: Tick,
    /// Decode tokens per tick for each running sample.
    pub decode_rate: u64,
    /// Prefill tokens per tick for each running sample.
    pub prefill_rate: u64,
    /// Sample-tokens per tick for each training device.
    pub train_rate: u64,
    /// Sample-tokens per tick for each device recomputing log-probabilities.
    pub logp_rate: u64,
    pub weight_sync_ticks: Tick,
    /// Ticks to ship a version's weights to a device that lacks it.
    pub weight_transfer_ticks: Tick,
    /// KV-cache tokens moved per tick during a migration.
    pub kv_transfer_rate: u64,
    /// Latency of the grading service for one group.
    pub grade_ticks: Tick,
}

impl Default for DeviceGroupConfig {
    fn default() -> Self {
        Self {
            standalone_devices: 2,
            elastic_devices: 2,
            slots_per_device: 16,
            role_switch_ticks: 2,
            decode_rate: 4,
            prefill_rate: 512,
            train_rate: 256,
            logp_rate: 1024,
            weight_sync_ticks: 4,
            weight_transfer_ticks: 2,
            kv_transfer_rate: 1024,
            grade_ticks: 1,
        }
    }
}

impl DeviceGroupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elastic_devices == 0 {
            return Err(Error::Config("at least one elastic device is required".into()));
        }
        if self.slots_per_device == 0 {
            return Err(Error::Config("slots_per_device must be positive".into()));
        }
        for (name, rate) in [
            ("decode_rate", self.decode_rate),
            ("prefill_rate", self.prefill_rate),
            ("train_rate", self.train_rate),
            ("logp_rate", self.logp_rate),
            ("kv_transfer_rate", self.kv_transfer_rate),
        ] {
            if rate == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn device_count(&self) -> usize {
        self.standalone_devices + self.elastic_devices
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Generate a full batch, then train; one live version.
    Sync,
    /// Streaming, but every in-flight sample is re-prefilled under the newest
    /// version whenever one is published.
    NaivePartial,
    /// Streaming with multi-version serving and KV-cache reuse.
    Dora,
}

impl SchedulerMode {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerMode::Sync => "sync",
            SchedulerMode::NaivePartial => "naive",
            SchedulerMode::Dora => "dora",
        }
    }
}

/// Response lengths drawn from a clamped log-normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LengthModel {
    pub mu: f64,
    pub sigma: f64,
    pub min_tokens: u64,
    pub max_tokens: u64,
}

impl Default for LengthModel {
    fn default() -> Self {
        Self {
            mu: 5.5,
            sigma: 1.0,
            min_tokens: 1,
            max_tokens: 8192,
        }
    }
}

impl LengthModel {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config("length model needs finite mu and sigma >= 0".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::Config("length bounds must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub devices: DeviceGroupConfig,
    pub mode: SchedulerMode,
    pub staleness: StalenessPolicy,
    /// Samples per prompt.
    pub group_size: usize,
    /// Kept groups per training batch.
    pub batch_groups: usize,
    pub prompt_tokens: u64,
    pub lengths: LengthModel,
    /// Suspended samples on one device that trigger migration to free peers.
    pub lb_threshold: usize,
    /// Cap on prompts that are in flight, awaiting grade, or awaiting a batch.
    /// Unbounded when absent.
    pub max_outstanding_prompts: Option<usize>,
    /// Total fresh prompts available; unbounded when absent.
    pub prompt_limit: Option<u64>,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            devices: DeviceGroupConfig::default(),
            mode: SchedulerMode::Dora,
            staleness: StalenessPolicy::default(),
            group_size: 8,
            batch_groups: 8,
            prompt_tokens: 128,
            lengths: LengthModel::default(),
            lb_threshold: 1,
            max_outstanding_prompts: Some(24),
            prompt_limit: None,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.devices.validate()?;
        self.lengths.validate()?;
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if self.batch_groups == 0 {
            return Err(Error::Config("batch_groups must be positive".into()));
        }
        if self.lb_threshold == 0 {
            return Err(Error::Config("lb_threshold must be positive".into()));
        }
        let slots = self.devices.slots_per_device * self.devices.device_count();
        if slots < self.group_size {
            return Err(Error::Config(format!(
                "{slots} generation slots cannot hold a group of {}",
                self.group_size
            )));
        }
        if self.mode == SchedulerMode::Sync {
            return Ok(());
        }
        let stream_slots = self.devices.slots_per_device * self.devices.standalone_devices.max(self.devices.elastic_devices);
        if stream_slots < self.group_size {
            return Err(Error::Config(format!(
                "streaming modes need {} slots in one device pool, found {stream_slots}",
                self.group_size
            )));
        }
        if self.max_outstanding_prompts == Some(0) {
            return Err(Error::Config("max_outstanding_prompts must be positive".into()));
        }
        Ok(())
    }
}
