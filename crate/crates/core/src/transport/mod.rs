//! Per-QP transport state machines.
//!
//! Four designs share one [`QueuePair`] type and the DCQCN reaction point:
//!
//! * `CELERIS`: best-effort push. Packets carry the byte offset they belong
//!   at, are placed in whatever order they arrive, and are never
//!   acknowledged or retransmitted. The sender keeps a byte counter and
//!   nothing per packet.
//! * `ROCE_GBN`: in-order delivery; out-of-order arrivals are dropped and
//!   NACKed, and the sender rewinds to the first unacknowledged PSN.
//! * `IRN`: selective repeat with a receive bitmap, SACKs and a window of one
//!   bandwidth-delay product.
//! * `SRNIC`: selective repeat whose reordering and retransmissions run on a
//!   software slow path with a fixed added latency.
//!
//! The QP is sans-I/O: callers feed it packets and time, and move the packets
//! it emits.

mod dcqcn;
mod placement;
mod qp;
mod reliable;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dcqcn::{
    dcqcn_increase_tick, dcqcn_on_cnp, DcqcnConfig, DcqcnState, IncreaseStage, TickSource,
};
pub use placement::RecvBuffer;
pub use qp::{Delivery, QpEndpoint, QpStats, QueuePair, RxOutcome, TxPoll};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransportKind {
    Celeris,
    RoceGbn,
    Irn,
    Srnic,
}

impl TransportKind {
    pub const ALL: [TransportKind; 4] = [
        TransportKind::RoceGbn,
        TransportKind::Irn,
        TransportKind::Srnic,
        TransportKind::Celeris,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransportKind::Celeris => "CELERIS",
            TransportKind::RoceGbn => "ROCE_GBN",
            TransportKind::Irn => "IRN",
            TransportKind::Srnic => "SRNIC",
        }
    }

    pub fn is_reliable(self) -> bool {
        self != TransportKind::Celeris
    }

    pub fn uses_pfc(self) -> bool {
        self == TransportKind::RoceGbn
    }
}

impl std::fmt::Display for TransportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransportKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown transport `{s}`"))
    }
}

/// Modeled NIC state per QP, in bytes.
pub const fn context_bytes(kind: TransportKind) -> u32 {
    match kind {
        TransportKind::Celeris => 52,
        TransportKind::RoceGbn => 407,
        TransportKind::Irn => 596,
        TransportKind::Srnic => 210,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextField {
    pub name: &'static str,
    pub bytes: u32,
}

const fn field(name: &'static str, bytes: u32) -> ContextField {
    ContextField { name, bytes }
}

/// Connection state of the best-effort QP: addressing and the target buffer.
pub const CELERIS_BASE_CONTEXT: [ContextField; 5] = [
    field("remote_host", 4),
    field("remote_qp", 3),
    field("local_qp", 3),
    field("buffer_base", 6),
    field("buffer_length", 4),
];

/// DCQCN reaction-point state carried by every design.
pub const DCQCN_CONTEXT: [ContextField; 6] = [
    field("current_rate", 4),
    field("target_rate", 4),
    field("alpha", 4),
    field("byte_counter", 4),
    field("timer_epoch", 8),
    field("stage_counters", 8),
];

pub fn layout_bytes(fields: &[ContextField]) -> u32 {
    fields.iter().map(|f| f.bytes).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    /// Maximum payload per DATA packet.
    pub mtu_bytes: u32,
    /// Header bytes per packet; also the size of control packets.
    pub header_bytes: u32,
    /// In-order packets per coalesced ACK.
    pub ack_every: u32,
    /// Outstanding-PSN limit for go-back-N (`None`: unbounded).
    pub gbn_window_packets: Option<u32>,
    /// Selective-repeat window (`None`: one bandwidth-delay product).
    pub sr_window_packets: Option<u32>,
    pub rto_min_ns: u64,
    pub rto_srtt_multiplier: f64,
    pub srnic_slow_path_ns: u64,
    pub srnic_context_bytes: u32,
    pub dcqcn: DcqcnConfig,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mtu_bytes: 1500,
            header_bytes: 64,
            ack_every: 8,
            gbn_window_packets: None,
            sr_window_packets: None,
            rto_min_ns: 100_000,
            rto_srtt_multiplier: 3.0,
            srnic_slow_path_ns: 20_000,
            srnic_context_bytes: context_bytes(TransportKind::Srnic),
            dcqcn: DcqcnConfig::default(),
        }
    }
}

impl TransportConfig {
    pub fn context_bytes(&self, kind: TransportKind) -> u32 {
        match kind {
            TransportKind::Srnic => self.srnic_context_bytes,
            other => context_bytes(other),
        }
    }

    /// Packets needed for a message of `len` bytes.
    pub fn packets_for(&self, len: u64) -> u64 {
        len.div_ceil(self.mtu_bytes as u64)
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |field: &'static str, reason: &str| {
            Err(TransportError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.mtu_bytes == 0 {
            return bad("transport_config.mtu_bytes", "must be positive");
        }
        if self.header_bytes < 64 {
            return bad("transport_config.header_bytes", "minimum packet is 64 bytes");
        }
        if self.ack_every == 0 {
            return bad("transport_config.ack_every", "must be positive");
        }
        if self.gbn_window_packets == Some(0) || self.sr_window_packets == Some(0) {
            return bad("transport_config.window", "windows must be positive");
        }
        if !(self.rto_srtt_multiplier > 0.0) {
            return bad("transport_config.rto_srtt_multiplier", "must be positive");
        }
        let d = &self.dcqcn;
        if !(d.g > 0.0 && d.g <= 1.0) && d.g != 0.0 {
            return bad("transport_config.dcqcn.g", "must be in [0, 1]");
        }
        if !(d.min_rate_bps > 0.0) {
            return bad("transport_config.dcqcn.min_rate_bps", "must be positive");
        }
        Ok(())
    }
}

/// A send work request: `length` bytes starting at `offset` of the
/// registered buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkRequest {
    pub offset: u64,
    pub length: u64,
    pub step_id: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("work request [{offset}, {offset}+{length}) exceeds registered buffer of {buffer} bytes")]
    OutOfBounds {
        offset: u64,
        length: u64,
        buffer: u64,
    },
    #[error("best-effort QPs have no retransmission path")]
    NoRetransmissionPath,
    #[error("expected a payload packet, got {0:?}")]
    NotData(crate::fabric::PacketKind),
    #[error("invalid transport field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_sizes() {
        assert_eq!(context_bytes(TransportKind::Celeris), 52);
        assert_eq!(context_bytes(TransportKind::RoceGbn), 407);
        assert_eq!(context_bytes(TransportKind::Irn), 596);
        assert_eq!(context_bytes(TransportKind::Srnic), 210);
    }

    #[test]
    fn best_effort_layout_sums_to_context() {
        assert_eq!(layout_bytes(&CELERIS_BASE_CONTEXT), 20);
        assert_eq!(layout_bytes(&DCQCN_CONTEXT), 32);
        assert_eq!(
            layout_bytes(&CELERIS_BASE_CONTEXT) + layout_bytes(&DCQCN_CONTEXT),
            context_bytes(TransportKind::Celeris)
        );
    }

    #[test]
    fn srnic_size_is_configurable() {
        let cfg = TransportConfig {
            srnic_context_bytes: 242,
            ..Default::default()
        };
        assert_eq!(cfg.context_bytes(TransportKind::Srnic), 242);
        assert_eq!(cfg.context_bytes(TransportKind::Irn), 596);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TransportKind::ALL {
            assert_eq!(k.name().parse::<TransportKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn packet_count_for_25mb() {
        assert_eq!(TransportConfig::default().packets_for(25_000_000), 16_667);
    }
}
