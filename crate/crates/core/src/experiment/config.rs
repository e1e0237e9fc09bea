use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::collective::CollectiveGroup;
use crate::fabric::{BackgroundTrafficConfig, ClosConfig};
use crate::timeoutctl::{AdaptiveConfig, TimeoutPolicy};
use crate::transport::{TransportConfig, TransportKind};

/// One simulation run, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub topology: ClosConfig,
    pub transport: TransportKind,
    #[serde(default)]
    pub transport_config: TransportConfig,
    #[serde(default)]
    pub collective: CollectiveSpec,
    #[serde(default)]
    pub timeout: TimeoutSpec,
    #[serde(default)]
    pub background: BackgroundTrafficConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Simulated time after which the run stops even if steps remain.
    #[serde(default = "default_cap")]
    pub duration_cap_ns: u64,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_seed() -> u64 {
    1
}

fn default_cap() -> u64 {
    2_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectiveSpec {
    pub group_id: u32,
    /// Ring order of participating hosts; all hosts when absent.
    pub members: Option<Vec<usize>>,
    pub payload_bytes: u64,
    pub rounds: u32,
}

impl Default for CollectiveSpec {
    fn default() -> Self {
        Self {
            group_id: 0,
            members: None,
            payload_bytes: 4_000_000,
            rounds: 10,
        }
    }
}

/// Where a static deadline comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticSource {
    /// A fixed value.
    TimeoutNs(u64),
    /// Median plus one standard deviation of `duration_ns` in a steps CSV.
    BaselineStepsCsv(PathBuf),
    /// Median plus one standard deviation of a baseline scenario, run first
    /// with this scenario's seed.
    BaselineConfig(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeoutSpec {
    pub policy: TimeoutPolicy,
    pub static_source: Option<StaticSource>,
    pub adaptive: AdaptiveConfig,
    /// Delay between finalizing a step and issuing the next one.
    pub coordination_latency_ns: u64,
    /// Cut steps on reliable transports too.
    pub apply_to_reliable: bool,
}

impl Default for TimeoutSpec {
    fn default() -> Self {
        Self {
            policy: TimeoutPolicy::None,
            static_source: None,
            adaptive: AdaptiveConfig::default(),
            coordination_latency_ns: 0,
            apply_to_reliable: false,
        }
    }
}

impl ScenarioConfig {
    /// Minimal scenario on the default fabric.
    pub fn new(name: &str, transport: TransportKind) -> Self {
        Self {
            name: name.to_string(),
            topology: ClosConfig::default(),
            transport,
            transport_config: TransportConfig::default(),
            collective: CollectiveSpec::default(),
            timeout: TimeoutSpec::default(),
            background: BackgroundTrafficConfig::default(),
            seed: default_seed(),
            duration_cap_ns: default_cap(),
        }
    }

    /// Reads a scenario and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: Self = super::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = super::parse_json(text, Path::new("<inline>"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(
            StaticSource::BaselineStepsCsv(p) | StaticSource::BaselineConfig(p),
        ) = &mut self.timeout.static_source
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn members(&self) -> Vec<usize> {
        self.collective
            .members
            .clone()
            .unwrap_or_else(|| (0..self.topology.hosts).collect())
    }

    pub fn group(&self) -> CollectiveGroup {
        CollectiveGroup {
            group_id: self.collective.group_id,
            members: self.members(),
            payload_bytes: self.collective.payload_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.topology.validate()?;
        self.transport_config.validate()?;
        self.background
            .validate(self.transport_config.mtu_bytes as u64)?;
        let members = self.members();
        if members.len() < 2 {
            return Err(ExperimentError::invalid(
                "collective.members",
                "a ring needs at least two members",
            ));
        }
        let mut seen = vec![false; self.topology.hosts];
        for &m in &members {
            if m >= self.topology.hosts {
                return Err(ExperimentError::invalid(
                    "collective.members",
                    format!("host {m} does not exist"),
                ));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(ExperimentError::invalid(
                    "collective.members",
                    format!("host {m} appears twice"),
                ));
            }
        }
        if self.collective.payload_bytes == 0 {
            return Err(ExperimentError::invalid(
                "collective.payload_bytes",
                "must be positive",
            ));
        }
        if self.collective.rounds == 0 {
            return Err(ExperimentError::invalid("collective.rounds", "must be positive"));
        }
        if self.duration_cap_ns == 0 {
            return Err(ExperimentError::invalid("duration_cap_ns", "must be positive"));
        }
        match self.timeout.policy {
            TimeoutPolicy::Static if self.timeout.static_source.is_none() => {
                return Err(ExperimentError::invalid(
                    "timeout.static_source",
                    "required by the STATIC policy",
                ));
            }
            TimeoutPolicy::Static => {
                if self.timeout.static_source == Some(StaticSource::TimeoutNs(0)) {
                    return Err(ExperimentError::invalid(
                        "timeout.static_source.timeout_ns",
                        "must be positive",
                    ));
                }
            }
            TimeoutPolicy::Adaptive => self.timeout.adaptive.validate()?,
            TimeoutPolicy::None => {}
        }
        Ok(())
    }
}
