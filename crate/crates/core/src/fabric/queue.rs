use std::collections::VecDeque;

use super::config::{EcnParams, PfcParams};
use super::packet::Packet;
use super::LinkId;
use crate::simkernel::RngStream;

/// RED-style marking curve: 0 below `kmin`, linear to `pmax` at `kmax`, 1 above.
pub fn marking_probability(occupancy: u64, ecn: &EcnParams) -> f64 {
    if occupancy <= ecn.kmin {
        0.0
    } else if occupancy > ecn.kmax {
        1.0
    } else if ecn.kmax == ecn.kmin {
        ecn.pmax
    } else {
        ecn.pmax * (occupancy - ecn.kmin) as f64 / (ecn.kmax - ecn.kmin) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued { marked: bool },
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfcSignal {
    Pause,
    Resume,
}

#[derive(Debug, Clone)]
pub struct QueuedPacket {
    pub pkt: Packet,
    pub ingress: Option<LinkId>,
}

/// Output-port FIFO with tail drop.
///
/// `occupancy` includes the packet currently being serialized: bytes leave
/// the buffer when [`PortQueue::release`] is called at transmission end.
#[derive(Debug, Clone)]
pub struct PortQueue {
    packets: VecDeque<QueuedPacket>,
    occupancy: u64,
    capacity: u64,
    /// Transmitter held by a downstream PAUSE.
    pub paused: bool,
    /// This queue has asserted PAUSE toward its contributors.
    pub pfc_asserted: bool,
    /// Bytes buffered here per ingress link.
    contributors: Vec<(LinkId, u64)>,
    pub drop_count: u64,
    pub data_drop_count: u64,
    pub ecn_mark_count: u64,
    pub offered: u64,
    pub released: u64,
    pub pfc_pauses_emitted: u64,
}

impl PortQueue {
    pub fn new(capacity: u64) -> Self {
        Self {
            packets: VecDeque::new(),
            occupancy: 0,
            capacity,
            paused: false,
            pfc_asserted: false,
            contributors: Vec::new(),
            drop_count: 0,
            data_drop_count: 0,
            ecn_mark_count: 0,
            offered: 0,
            released: 0,
            pfc_pauses_emitted: 0,
        }
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Tail-drops when the packet does not fit; otherwise marks payload
    /// packets with the RED probability evaluated at the pre-enqueue occupancy.
    pub fn enqueue(
        &mut self,
        mut pkt: Packet,
        ingress: Option<LinkId>,
        ecn: &EcnParams,
        rng: &mut RngStream,
    ) -> EnqueueOutcome {
        self.offered += 1;
        let size = pkt.size as u64;
        if self.occupancy + size > self.capacity {
            self.drop_count += 1;
            if pkt.kind.is_payload() {
                self.data_drop_count += 1;
            }
            return EnqueueOutcome::Dropped;
        }
        let mut marked = false;
        if pkt.kind.is_payload() {
            let p = marking_probability(self.occupancy, ecn);
            if rng.bernoulli(p) {
                marked = true;
                pkt.ecn_marked = true;
                self.ecn_mark_count += 1;
            }
        }
        self.occupancy += size;
        if let Some(link) = ingress {
            match self.contributors.iter_mut().find(|(l, _)| *l == link) {
                Some(entry) => entry.1 += size,
                None => self.contributors.push((link, size)),
            }
        }
        self.packets.push_back(QueuedPacket { pkt, ingress });
        EnqueueOutcome::Enqueued { marked }
    }

    /// Takes the head packet for transmission; its bytes stay counted until
    /// [`PortQueue::release`].
    pub fn pop(&mut self) -> Option<QueuedPacket> {
        self.packets.pop_front()
    }

    pub fn release(&mut self, qp: &QueuedPacket) {
        let size = qp.pkt.size as u64;
        debug_assert!(self.occupancy >= size);
        self.occupancy -= size;
        self.released += 1;
        if let Some(link) = qp.ingress {
            if let Some(pos) = self.contributors.iter().position(|(l, _)| *l == link) {
                self.contributors[pos].1 -= size;
                if self.contributors[pos].1 == 0 {
                    self.contributors.swap_remove(pos);
                }
            }
        }
    }

    /// Ingress links with bytes currently buffered in this queue, sorted.
    pub fn contributors(&self) -> Vec<LinkId> {
        let mut v: Vec<LinkId> = self.contributors.iter().map(|(l, _)| *l).collect();
        v.sort_unstable();
        v
    }

    /// Hysteresis on occupancy: PAUSE once when rising past `xoff`, RESUME
    /// once when falling to `xon` or below.
    pub fn pfc_check(&mut self, pfc: Option<&PfcParams>) -> Option<PfcSignal> {
        let pfc = pfc?;
        if !self.pfc_asserted && self.occupancy >= pfc.xoff {
            self.pfc_asserted = true;
            self.pfc_pauses_emitted += 1;
            Some(PfcSignal::Pause)
        } else if self.pfc_asserted && self.occupancy <= pfc.xon {
            self.pfc_asserted = false;
            Some(PfcSignal::Resume)
        } else {
            None
        }
    }
}
