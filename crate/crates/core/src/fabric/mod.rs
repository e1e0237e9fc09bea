//! Two-tier leaf/spine fabric: topology, output queues with ECN marking and
//! PFC hysteresis, and background traffic generation.
//!
//! The time-stepping of links (serialization, propagation, pause frames) is
//! driven by [`crate::sim`]; this module holds the pieces that can be reasoned
//! about in isolation.

mod background;
mod config;
mod packet;
mod queue;
mod topology;

pub use background::{inject_background, BackgroundFlow, BackgroundTrafficConfig, BurstSize, OnOff};
pub use config::{ClosConfig, EcnParams, PfcParams};
pub use packet::{Packet, PacketKind};
pub use queue::{marking_probability, EnqueueOutcome, PfcSignal, PortQueue, QueuedPacket};
pub use topology::{build_clos, LinkSpec, NodeKind, Topology};

pub type NodeId = usize;
pub type LinkId = usize;
pub type HostId = usize;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("invalid fabric config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

impl FabricError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        FabricError::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> &'static str {
        match self {
            FabricError::InvalidConfig { field, .. } => field,
        }
    }
}
