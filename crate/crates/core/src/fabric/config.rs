use serde::{Deserialize, Serialize};

use super::FabricError;
use crate::simkernel::SimTime;

/// Leaf/spine fabric parameters. Defaults are conventional datacenter values
/// (100 Gb/s links, 1 µs per hop, 2 MB port buffers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosConfig {
    pub hosts: usize,
    pub leaf_count: usize,
    pub spine_count: usize,
    pub hosts_per_leaf: usize,
    pub link_bandwidth_bps: f64,
    pub link_propagation_ns: u64,
    pub queue_capacity_bytes: u64,
    pub ecn_kmin_bytes: u64,
    pub ecn_kmax_bytes: u64,
    pub ecn_pmax: f64,
    pub pfc_enabled: bool,
    pub pfc_xoff_bytes: u64,
    pub pfc_xon_bytes: u64,
}

impl Default for ClosConfig {
    fn default() -> Self {
        Self {
            hosts: 16,
            leaf_count: 4,
            spine_count: 4,
            hosts_per_leaf: 4,
            link_bandwidth_bps: 100e9,
            link_propagation_ns: 1_000,
            queue_capacity_bytes: 2_000_000,
            ecn_kmin_bytes: 100_000,
            ecn_kmax_bytes: 400_000,
            ecn_pmax: 0.2,
            pfc_enabled: false,
            pfc_xoff_bytes: 1_500_000,
            pfc_xon_bytes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcnParams {
    pub kmin: u64,
    pub kmax: u64,
    pub pmax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PfcParams {
    pub xoff: u64,
    pub xon: u64,
}

impl ClosConfig {
    /// A fabric with `leaves × hosts_per_leaf` hosts.
    pub fn with_shape(leaves: usize, hosts_per_leaf: usize, spines: usize) -> Self {
        Self {
            hosts: leaves * hosts_per_leaf,
            leaf_count: leaves,
            hosts_per_leaf,
            spine_count: spines,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if self.leaf_count == 0 {
            return Err(FabricError::invalid("leaf_count", "must be positive"));
        }
        if self.hosts_per_leaf == 0 {
            return Err(FabricError::invalid("hosts_per_leaf", "must be positive"));
        }
        if self.hosts != self.leaf_count * self.hosts_per_leaf {
            return Err(FabricError::invalid(
                "hosts",
                format!(
                    "{} != leaf_count ({}) × hosts_per_leaf ({})",
                    self.hosts, self.leaf_count, self.hosts_per_leaf
                ),
            ));
        }
        if self.leaf_count > 1 && self.spine_count == 0 {
            return Err(FabricError::invalid(
                "spine_count",
                "multiple leaves need at least one spine",
            ));
        }
        if !(self.link_bandwidth_bps.is_finite() && self.link_bandwidth_bps > 0.0) {
            return Err(FabricError::invalid("link_bandwidth_bps", "must be positive"));
        }
        if self.queue_capacity_bytes == 0 {
            return Err(FabricError::invalid("queue_capacity_bytes", "must be positive"));
        }
        if self.ecn_kmin_bytes > self.ecn_kmax_bytes {
            return Err(FabricError::invalid("ecn_kmin_bytes", "must not exceed ecn_kmax_bytes"));
        }
        if self.ecn_kmax_bytes > self.queue_capacity_bytes {
            return Err(FabricError::invalid(
                "ecn_kmax_bytes",
                "must not exceed queue_capacity_bytes",
            ));
        }
        if !(0.0..=1.0).contains(&self.ecn_pmax) {
            return Err(FabricError::invalid("ecn_pmax", "must be a probability"));
        }
        if self.pfc_xon_bytes >= self.pfc_xoff_bytes {
            return Err(FabricError::invalid("pfc_xon_bytes", "must be below pfc_xoff_bytes"));
        }
        if self.pfc_xoff_bytes > self.queue_capacity_bytes {
            return Err(FabricError::invalid(
                "pfc_xoff_bytes",
                "must not exceed queue_capacity_bytes",
            ));
        }
        Ok(())
    }

    pub fn ecn(&self) -> EcnParams {
        EcnParams {
            kmin: self.ecn_kmin_bytes,
            kmax: self.ecn_kmax_bytes,
            pmax: self.ecn_pmax,
        }
    }

    pub fn pfc(&self) -> Option<PfcParams> {
        self.pfc_enabled.then_some(PfcParams {
            xoff: self.pfc_xoff_bytes,
            xon: self.pfc_xon_bytes,
        })
    }

    pub fn propagation(&self) -> SimTime {
        SimTime(self.link_propagation_ns)
    }

    pub fn serialization(&self, bytes: u64) -> SimTime {
        SimTime::transmission(bytes, self.link_bandwidth_bps)
    }
}
