use serde::{Deserialize, Serialize};

use crate::simkernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketKind {
    Data,
    Ack,
    Nack,
    Sack,
    Cnp,
    PfcPause,
    PfcResume,
    Background,
}

impl PacketKind {
    /// Whether the packet carries application payload (and is ECN-capable).
    pub fn is_payload(self) -> bool {
        matches!(self, PacketKind::Data | PacketKind::Background)
    }
}

/// A packet on the wire.
///
/// Field meaning depends on `kind`:
///
/// | kind            | `seq`                                   | `aux`        |
/// |-----------------|-----------------------------------------|--------------|
/// | DATA (best-effort) | byte offset into the target buffer   | unused       |
/// | DATA (reliable) | packet sequence number                  | unused       |
/// | ACK             | next expected PSN (cumulative)          | unused       |
/// | NACK            | expected PSN the sender must rewind to  | unused       |
/// | SACK            | next expected PSN (cumulative)          | selectively acknowledged PSN |
///
/// `echo` carries the `send_time` of the data packet that triggered an
/// acknowledgement so the sender can sample RTT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub src: u32,
    pub dst: u32,
    /// Destination queue pair.
    pub qp: u32,
    pub kind: PacketKind,
    /// Wire size (headers + payload).
    pub size: u32,
    pub payload: u32,
    pub seq: u64,
    pub aux: u64,
    pub step_id: u64,
    pub ecn_marked: bool,
    pub send_time: SimTime,
    pub echo: SimTime,
}

impl Packet {
    pub fn control(kind: PacketKind, src: u32, dst: u32, qp: u32, size: u32, now: SimTime) -> Self {
        Packet {
            src,
            dst,
            qp,
            kind,
            size,
            payload: 0,
            seq: 0,
            aux: 0,
            step_id: 0,
            ecn_marked: false,
            send_time: now,
            echo: SimTime::ZERO,
        }
    }
}
