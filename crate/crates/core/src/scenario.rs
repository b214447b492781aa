//! Scenario files.
//!
//! A scenario is a TOML document. Every key except `cores`, `ring_size`,
//! `service_rate_pps` and the `[workload]` section has a default; unknown
//! keys are rejected. All invariants are checked at load time so a loaded
//! scenario never fails validation during a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::{PolicyKind, SchedulerPolicy};
use crate::nic::{RssIndirection, DEFAULT_HASH_KEY, DEFAULT_SAMPLE_RATE, MIN_KEY_LEN};
use crate::sim::ServiceTime;
use crate::workload::ArrivalKind;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

/// Ring depth, either a number or a preset named after a NIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingSize {
    Slots(usize),
    Preset(RingPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingPreset {
    /// Myricom 10GbE driver default, 512 slots.
    Myricom10g,
    /// Intel 1GbE driver default, 256 slots.
    Intel1g,
}

impl RingPreset {
    pub const ALL: [RingPreset; 2] = [RingPreset::Myricom10g, RingPreset::Intel1g];

    pub fn name(self) -> &'static str {
        match self {
            RingPreset::Myricom10g => "myricom_10g",
            RingPreset::Intel1g => "intel_1g",
        }
    }
}

impl Serialize for RingSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RingSize::Slots(n) => s.serialize_u64(*n as u64),
            RingSize::Preset(p) => s.serialize_str(p.name()),
        }
    }
}

impl<'de> Deserialize<'de> for RingSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = RingSize;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a slot count or one of \"myricom_10g\", \"intel_1g\"")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<RingSize, E> {
                usize::try_from(v)
                    .map(RingSize::Slots)
                    .map_err(|_| E::custom("ring_size out of range"))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<RingSize, E> {
                u64::try_from(v)
                    .map_err(|_| E::custom("ring_size must not be negative"))
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<RingSize, E> {
                RingPreset::ALL
                    .into_iter()
                    .find(|p| p.name() == v)
                    .map(RingSize::Preset)
                    .ok_or_else(|| E::custom(format!("unknown ring preset {v:?}")))
            }
        }
        d.deserialize_any(V)
    }
}

impl RingSize {
    pub fn slots(self) -> usize {
        match self {
            RingSize::Slots(n) => n,
            RingSize::Preset(RingPreset::Myricom10g) => 512,
            RingSize::Preset(RingPreset::Intel1g) => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default = "default_migrate_prob")]
    pub migrate_prob: f64,
    /// Start every thread on this core instead of spreading them round-robin.
    #[serde(default)]
    pub pin_core: Option<usize>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Pinned
}
fn default_interval() -> f64 {
    0.05
}
fn default_migrate_prob() -> f64 {
    0.05
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            policy: default_policy(),
            interval_s: default_interval(),
            migrate_prob: default_migrate_prob(),
            pin_core: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

fn yes() -> bool {
    true
}
fn default_sample_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

impl Default for FdSection {
    fn default() -> Self {
        FdSection {
            enabled: true,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssSection {
    #[serde(default = "default_indirection_len")]
    pub indirection_len: usize,
    /// Hex-encoded hash key.
    #[serde(default = "default_hash_key_hex")]
    pub hash_key: String,
}

fn default_indirection_len() -> usize {
    128
}
fn default_hash_key_hex() -> String {
    DEFAULT_HASH_KEY.iter().map(|b| format!("{b:02x}")).collect()
}

impl Default for RssSection {
    fn default() -> Self {
        RssSection {
            indirection_len: default_indirection_len(),
            hash_key: default_hash_key_hex(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub n_flows: usize,
    /// Per-flow arrival rate. When absent it is derived from `utilization`.
    #[serde(default)]
    pub per_flow_pps: Option<f64>,
    /// Offered load as a fraction of total service capacity, used when
    /// `per_flow_pps` is absent.
    #[serde(default = "default_utilization")]
    pub utilization: f64,
    #[serde(default = "default_arrival_kind")]
    pub arrival_kind: ArrivalKind,
    pub duration_s: f64,
    #[serde(default = "one")]
    pub tx_per_delivery: u32,
    #[serde(default = "default_base_port")]
    pub base_src_port: u16,
}

fn default_utilization() -> f64 {
    0.8
}
fn default_arrival_kind() -> ArrivalKind {
    ArrivalKind::Poisson
}
fn one() -> u32 {
    1
}
fn default_base_port() -> u16 {
    10000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_summary_path")]
    pub summary_path: PathBuf,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

fn default_summary_path() -> PathBuf {
    PathBuf::from("summary.csv")
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            summary_path: default_summary_path(),
            trace_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub cores: usize,
    pub ring_size: RingSize,
    pub service_rate_pps: f64,
    #[serde(default)]
    pub service_time: ServiceTime,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub fd: FdSection,
    #[serde(default)]
    pub rss: RssSection,
    pub workload: WorkloadSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub outputs: OutputsSection,
}

fn default_name() -> String {
    "scenario".to_string()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    let s = s.trim();
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

impl Scenario {
    /// Parses and validates scenario text.
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            ScenarioError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn ring_slots(&self) -> usize {
        self.ring_size.slots()
    }

    pub fn hash_key(&self) -> Vec<u8> {
        decode_hex(&self.rss.hash_key).expect("validated at load")
    }

    pub fn rss(&self) -> RssIndirection {
        RssIndirection::round_robin(self.hash_key(), self.rss.indirection_len, self.cores)
            .expect("validated at load")
    }

    pub fn policy(&self) -> SchedulerPolicy {
        SchedulerPolicy {
            kind: self.scheduler.policy,
            interval: self.scheduler.interval_s,
            migrate_prob: self.scheduler.migrate_prob,
        }
    }

    /// Per-flow arrival rate for `n_flows` flows.
    pub fn per_flow_pps(&self, n_flows: usize) -> f64 {
        self.workload.per_flow_pps.unwrap_or_else(|| {
            self.workload.utilization * self.cores as f64 * self.service_rate_pps / n_flows as f64
        })
    }

    /// Same scenario with a different flow count. Re-validated.
    pub fn with_flows(&self, n_flows: usize) -> Result<Scenario, ScenarioError> {
        let mut s = self.clone();
        s.workload.n_flows = n_flows;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.cores == 0 {
            return Err(invalid("cores must be at least 1"));
        }
        if self.ring_slots() == 0 {
            return Err(invalid("ring_size must be at least 1"));
        }
        if !(self.service_rate_pps.is_finite() && self.service_rate_pps > 0.0) {
            return Err(invalid("service_rate_pps must be positive"));
        }
        let sched = &self.scheduler;
        if sched.policy != PolicyKind::Pinned && !(sched.interval_s.is_finite() && sched.interval_s > 0.0) {
            return Err(invalid("scheduler.interval_s must be positive"));
        }
        if !(0.0..=1.0).contains(&sched.migrate_prob) {
            return Err(invalid("scheduler.migrate_prob must lie in [0, 1]"));
        }
        if let Some(c) = sched.pin_core {
            if c >= self.cores {
                return Err(invalid(format!(
                    "scheduler.pin_core {c} is not a core (have {})",
                    self.cores
                )));
            }
        }
        if self.fd.sample_rate == 0 {
            return Err(invalid("fd.sample_rate must be at least 1"));
        }
        let len = self.rss.indirection_len;
        if len == 0 || !len.is_power_of_two() {
            return Err(invalid(format!(
                "rss.indirection_len {len} is not a power of two"
            )));
        }
        match decode_hex(&self.rss.hash_key) {
            None => return Err(invalid("rss.hash_key is not valid hex")),
            Some(k) if k.len() < MIN_KEY_LEN => {
                return Err(invalid(format!(
                    "rss.hash_key has {} bytes, need at least {MIN_KEY_LEN}",
                    k.len()
                )))
            }
            Some(_) => {}
        }
        let w = &self.workload;
        if w.n_flows == 0 {
            return Err(invalid("workload.n_flows must be at least 1"));
        }
        if usize::from(w.base_src_port) + w.n_flows - 1 > usize::from(u16::MAX) {
            return Err(invalid(format!(
                "workload.base_src_port {} + n_flows {} overflows the port space",
                w.base_src_port, w.n_flows
            )));
        }
        if !(w.duration_s.is_finite() && w.duration_s > 0.0) {
            return Err(invalid("workload.duration_s must be positive"));
        }
        match w.per_flow_pps {
            Some(r) if !(r.is_finite() && r > 0.0) => {
                return Err(invalid("workload.per_flow_pps must be positive"))
            }
            None if !(w.utilization.is_finite() && w.utilization > 0.0) => {
                return Err(invalid("workload.utilization must be positive"))
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
cores = 8
ring_size = 512
service_rate_pps = 100000

[workload]
n_flows = 200
duration_s = 2.0
"#;

    fn with(extra: &str) -> String {
        format!("{MINIMAL}\n{extra}")
    }

    fn err_of(text: &str) -> String {
        Scenario::from_toml(text).unwrap_err().to_string()
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.fd.sample_rate, 20);
        assert!(s.fd.enabled);
        assert_eq!(s.scheduler.policy, PolicyKind::Pinned);
        assert_eq!(s.rss.indirection_len, 128);
        assert_eq!(s.hash_key(), DEFAULT_HASH_KEY.to_vec());
        assert_eq!(s.seeds, vec![1]);
        assert_eq!(s.workload.tx_per_delivery, 1);
        assert_eq!(s.workload.arrival_kind, ArrivalKind::Poisson);
        assert!((s.per_flow_pps(200) - 0.8 * 8.0 * 1e5 / 200.0).abs() < 1e-9);
        assert_eq!(s.service_time, ServiceTime::Deterministic);
    }

    #[test]
    fn ring_presets() {
        let text = MINIMAL.replace("ring_size = 512", "ring_size = \"intel_1g\"");
        assert_eq!(Scenario::from_toml(&text).unwrap().ring_slots(), 256);
        let text = MINIMAL.replace("ring_size = 512", "ring_size = \"myricom_10g\"");
        assert_eq!(Scenario::from_toml(&text).unwrap().ring_slots(), 512);
    }

    #[test]
    fn zero_ring_rejected() {
        let text = MINIMAL.replace("ring_size = 512", "ring_size = 0");
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(ScenarioError::Validation(_))
        ));
    }

    #[test]
    fn indirection_must_be_power_of_two() {
        let e = err_of(&with("[rss]\nindirection_len = 6\n"));
        assert!(e.contains("power of two"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let text = with("[fd]\nsample_rat = 3\n");
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Parse { line, message }) => {
                assert_eq!(line, text.lines().position(|l| l.starts_with("sample_rat")).unwrap() + 1);
                assert!(message.contains("sample_rat"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Scenario::from_toml(&with("bogus = 1\n")),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn other_invariants() {
        assert!(err_of(&with("[scheduler]\npin_core = 8\n")).contains("pin_core"));
        assert!(err_of(&with("[scheduler]\npolicy = \"load_balance\"\ninterval_s = 0.0\n")).contains("interval"));
        assert!(err_of(&with("[scheduler]\nmigrate_prob = 2.0\n")).contains("migrate_prob"));
        assert!(err_of(&with("[fd]\nsample_rate = 0\n")).contains("sample_rate"));
        assert!(err_of(&with("[rss]\nhash_key = \"zz\"\n")).contains("hex"));
        assert!(err_of(&with("[rss]\nhash_key = \"00112233\"\n")).contains("bytes"));
        assert!(err_of(&with("seeds = []\n")).contains("seeds"));
        assert!(err_of(&MINIMAL.replace("duration_s = 2.0", "duration_s = 0.0")).contains("duration"));
        assert!(err_of(&MINIMAL.replace("n_flows = 200", "n_flows = 0")).contains("n_flows"));
        assert!(err_of(&MINIMAL.replace("cores = 8", "cores = 0")).contains("cores"));
        assert!(err_of(&with("[workload.x]\n")).contains("line"));
    }

    #[test]
    fn port_space_checked() {
        let text = MINIMAL.replace("n_flows = 200", "n_flows = 2\nbase_src_port = 65535");
        assert!(err_of(&text).contains("port"));
    }

    #[test]
    fn toml_roundtrip() {
        let s = Scenario::from_toml(&with("[scheduler]\npolicy = \"periodic_random\"\n")).unwrap();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_scenario(Path::new("/nonexistent/scenario.toml")),
            Err(ScenarioError::Io { .. })
        ));
    }
}
