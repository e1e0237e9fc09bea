use std::collections::VecDeque;

use serde::Serialize;

use crate::fabric::{Packet, PacketKind};
use crate::simkernel::SimTime;

use super::reliable::{NextSend, ReliableReceiver, ReliableSender, RxVerdict};
use super::{dcqcn_on_cnp, DcqcnState, TransportConfig, TransportError, TransportKind, WorkRequest};

/// Addressing of one end of a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpEndpoint {
    pub local_host: u32,
    pub local_qp: u32,
    pub remote_host: u32,
    pub remote_qp: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxPoll {
    Packet(Packet),
    /// Nothing may be sent before this time.
    Wait(SimTime),
    /// Nothing to send until new work, an acknowledgement or a timeout.
    Idle,
}

/// Payload to be written into application memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub step_id: u64,
    pub offset: u64,
    pub len: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RxOutcome {
    pub delivery: Option<Delivery>,
    /// Set when the delivery happens later (software reordering).
    pub deliver_at: Option<SimTime>,
    /// ACK, NACK or SACK for the sender.
    pub reply: Option<Packet>,
    pub cnp: Option<Packet>,
    /// The packet fell outside the registered buffer or posted receives.
    pub discarded: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QpStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub retransmitted: u64,
    pub packets_received: u64,
    pub duplicates: u64,
    pub out_of_order_dropped: u64,
    pub protocol_errors: u64,
    pub acks_sent: u64,
    pub nacks_sent: u64,
    pub sacks_sent: u64,
    pub cnps_sent: u64,
    pub cnps_received: u64,
    pub timeouts: u64,
}

impl QpStats {
    pub fn merge(&mut self, o: &QpStats) {
        self.packets_sent += o.packets_sent;
        self.bytes_sent += o.bytes_sent;
        self.retransmitted += o.retransmitted;
        self.packets_received += o.packets_received;
        self.duplicates += o.duplicates;
        self.out_of_order_dropped += o.out_of_order_dropped;
        self.protocol_errors += o.protocol_errors;
        self.acks_sent += o.acks_sent;
        self.nacks_sent += o.nacks_sent;
        self.sacks_sent += o.sacks_sent;
        self.cnps_sent += o.cnps_sent;
        self.cnps_received += o.cnps_received;
        self.timeouts += o.timeouts;
    }
}

// Boxing the reliable state would add a pointer chase per packet.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Variant {
    BestEffort { bytes_pushed: u64 },
    Reliable {
        tx: ReliableSender,
        rx: ReliableReceiver,
    },
}

/// One queue pair: a send side toward the peer and a receive side for data
/// from the peer.
#[derive(Debug, Clone)]
pub struct QueuePair {
    kind: TransportKind,
    ep: QpEndpoint,
    buffer_len: u64,
    cfg: TransportConfig,
    data_kind: PacketKind,
    dcqcn: DcqcnState,
    pending: VecDeque<WorkRequest>,
    /// Bytes of the head work request already segmented.
    head_sent: u64,
    last_tx: Option<(SimTime, u32)>,
    last_cnp_sent: Option<SimTime>,
    variant: Variant,
    stats: QpStats,
}

impl QueuePair {
    pub fn new(
        kind: TransportKind,
        ep: QpEndpoint,
        buffer_len: u64,
        line_rate_bps: f64,
        cfg: &TransportConfig,
    ) -> Self {
        let variant = match kind {
            TransportKind::Celeris => Variant::BestEffort { bytes_pushed: 0 },
            _ => {
                let window = match kind {
                    TransportKind::RoceGbn => cfg.gbn_window_packets,
                    _ => cfg.sr_window_packets,
                };
                Variant::Reliable {
                    tx: ReliableSender::new(
                        kind,
                        window.map(u64::from),
                        SimTime(cfg.srnic_slow_path_ns),
                    ),
                    rx: ReliableReceiver::new(kind, cfg.mtu_bytes, cfg.ack_every),
                }
            }
        };
        Self {
            kind,
            ep,
            buffer_len,
            cfg: cfg.clone(),
            data_kind: PacketKind::Data,
            dcqcn: DcqcnState::new(line_rate_bps),
            pending: VecDeque::new(),
            head_sent: 0,
            last_tx: None,
            last_cnp_sent: None,
            variant,
            stats: QpStats::default(),
        }
    }

    /// Overrides the reliability window (packets).
    pub fn with_window(mut self, window: Option<u64>) -> Self {
        if let Variant::Reliable { tx, .. } = &mut self.variant {
            *tx = ReliableSender::new(self.kind, window, SimTime(self.cfg.srnic_slow_path_ns));
        }
        self
    }

    /// Marks emitted payload packets with a different kind, e.g. background.
    pub fn with_data_kind(mut self, kind: PacketKind) -> Self {
        debug_assert!(kind.is_payload());
        self.data_kind = kind;
        self
    }

    pub fn kind(&self) -> TransportKind {
        self.kind
    }

    pub fn endpoint(&self) -> QpEndpoint {
        self.ep
    }

    pub fn stats(&self) -> &QpStats {
        &self.stats
    }

    pub fn dcqcn(&self) -> &DcqcnState {
        &self.dcqcn
    }

    pub fn context_bytes(&self) -> u32 {
        self.cfg.context_bytes(self.kind)
    }

    /// Best-effort byte counter.
    pub fn bytes_pushed(&self) -> Option<u64> {
        match self.variant {
            Variant::BestEffort { bytes_pushed } => Some(bytes_pushed),
            Variant::Reliable { .. } => None,
        }
    }

    /// Entries of per-packet tracking state currently held (always zero for
    /// the best-effort design).
    pub fn per_packet_state(&self) -> usize {
        match &self.variant {
            Variant::BestEffort { .. } => 0,
            Variant::Reliable { tx, rx } => tx.state_entries() + rx.state_entries(),
        }
    }

    pub fn pending_bytes(&self) -> u64 {
        self.pending.iter().map(|w| w.length).sum::<u64>() - self.head_sent
    }

    /// No queued work and nothing awaiting acknowledgement.
    pub fn is_quiescent(&self) -> bool {
        self.pending.is_empty()
            && match &self.variant {
                Variant::BestEffort { .. } => true,
                Variant::Reliable { tx, .. } => tx.in_flight() == 0,
            }
    }

    pub fn post_send(&mut self, wr: WorkRequest) -> Result<(), TransportError> {
        let oob = TransportError::OutOfBounds {
            offset: wr.offset,
            length: wr.length,
            buffer: self.buffer_len,
        };
        match wr.offset.checked_add(wr.length) {
            Some(end) if end <= self.buffer_len => {}
            _ => return Err(oob),
        }
        if wr.length > 0 {
            self.pending.push_back(wr);
        }
        Ok(())
    }

    /// Drops queued work of steps before `step_id`, including a partly sent
    /// head. Only the best-effort design may abandon data; returns the bytes
    /// that will never be sent.
    pub fn retire_before(&mut self, step_id: u64) -> u64 {
        if !matches!(self.variant, Variant::BestEffort { .. }) {
            return 0;
        }
        let mut dropped = 0;
        while let Some(wr) = self.pending.front() {
            if wr.step_id >= step_id {
                break;
            }
            dropped += wr.length - self.head_sent;
            self.head_sent = 0;
            self.pending.pop_front();
        }
        dropped
    }

    /// Announces where the next incoming PSNs belong. Needed by the reliable
    /// designs only; best-effort packets carry their own offsets.
    pub fn post_recv(&mut self, step_id: u64, offset: u64, len: u64) -> Result<(), TransportError> {
        if offset.checked_add(len).is_none_or(|e| e > self.buffer_len) {
            return Err(TransportError::OutOfBounds {
                offset,
                length: len,
                buffer: self.buffer_len,
            });
        }
        if let Variant::Reliable { rx, .. } = &mut self.variant {
            rx.post_recv(step_id, offset, len);
        }
        Ok(())
    }

    fn pacing_eligible(&self) -> SimTime {
        match self.last_tx {
            None => SimTime::ZERO,
            Some((t, size)) => t + SimTime::transmission(size as u64, self.dcqcn.current_rate),
        }
    }

    fn has_fresh(&self) -> bool {
        !self.pending.is_empty()
            && match &self.variant {
                Variant::BestEffort { .. } => true,
                Variant::Reliable { tx, .. } => tx.window_open(),
            }
    }

    pub fn tx_pull(&mut self, now: SimTime) -> TxPoll {
        self.dcqcn.advance_to(now, &self.cfg.dcqcn);
        let choice = match &mut self.variant {
            Variant::BestEffort { .. } => NextSend::Fresh,
            Variant::Reliable { tx, .. } => tx.next_send(now),
        };
        let (retx, later) = match choice {
            NextSend::Retransmit(psn) => (Some(psn), None),
            NextSend::Fresh => (None, None),
            NextSend::RetransmitAt(t) => (None, Some(t)),
        };
        if retx.is_none() && !self.has_fresh() {
            return later.map_or(TxPoll::Idle, TxPoll::Wait);
        }
        let eligible = self.pacing_eligible();
        if now < eligible {
            let mut wake = eligible;
            if let Some(t) = self.dcqcn.next_tick(&self.cfg.dcqcn) {
                wake = wake.min(t);
            }
            return TxPoll::Wait(wake);
        }
        let pkt = match retx {
            Some(psn) => self.emit_retransmit(psn, now),
            None => self.emit_fresh(now),
        };
        self.last_tx = Some((now, pkt.size));
        self.stats.packets_sent += 1;
        self.stats.bytes_sent += pkt.size as u64;
        self.dcqcn.on_bytes_sent(pkt.size as u64, &self.cfg.dcqcn);
        TxPoll::Packet(pkt)
    }

    fn data_packet(&self, seq: u64, step_id: u64, payload: u32, now: SimTime) -> Packet {
        Packet {
            src: self.ep.local_host,
            dst: self.ep.remote_host,
            qp: self.ep.remote_qp,
            kind: self.data_kind,
            size: self.cfg.header_bytes + payload,
            payload,
            seq,
            aux: 0,
            step_id,
            ecn_marked: false,
            send_time: now,
            echo: SimTime::ZERO,
        }
    }

    fn emit_retransmit(&mut self, psn: u64, now: SimTime) -> Packet {
        let Variant::Reliable { tx, .. } = &mut self.variant else {
            unreachable!("best-effort QPs never retransmit");
        };
        let seg = tx.retransmitted(psn, now);
        self.stats.retransmitted += 1;
        self.data_packet(psn, seg.step_id, seg.payload, now)
    }

    fn emit_fresh(&mut self, now: SimTime) -> Packet {
        let wr = *self.pending.front().expect("fresh data pending");
        let offset = wr.offset + self.head_sent;
        let payload = (wr.length - self.head_sent).min(self.cfg.mtu_bytes as u64) as u32;
        self.head_sent += payload as u64;
        if self.head_sent == wr.length {
            self.pending.pop_front();
            self.head_sent = 0;
        }
        let seq = match &mut self.variant {
            Variant::BestEffort { bytes_pushed } => {
                *bytes_pushed += payload as u64;
                offset
            }
            Variant::Reliable { tx, .. } => tx.push_fresh(wr.step_id, payload, now),
        };
        self.data_packet(seq, wr.step_id, payload, now)
    }

    fn control(&self, kind: PacketKind, now: SimTime) -> Packet {
        Packet::control(
            kind,
            self.ep.local_host,
            self.ep.remote_host,
            self.ep.remote_qp,
            self.cfg.header_bytes,
            now,
        )
    }

    fn maybe_cnp(&mut self, pkt: &Packet, now: SimTime) -> Option<Packet> {
        if !pkt.ecn_marked || !self.cfg.dcqcn.enabled {
            return None;
        }
        let interval = SimTime(self.cfg.dcqcn.cnp_interval_ns);
        if self.last_cnp_sent.is_some_and(|t| now < t + interval) {
            return None;
        }
        self.last_cnp_sent = Some(now);
        self.stats.cnps_sent += 1;
        Some(self.control(PacketKind::Cnp, now))
    }

    fn ack(&mut self, kind: PacketKind, cum: u64, aux: u64, echo: SimTime, now: SimTime) -> Packet {
        match kind {
            PacketKind::Ack => self.stats.acks_sent += 1,
            PacketKind::Nack => self.stats.nacks_sent += 1,
            _ => self.stats.sacks_sent += 1,
        }
        let mut p = self.control(kind, now);
        p.seq = cum;
        p.aux = aux;
        p.echo = echo;
        p
    }

    /// Handles an arriving payload packet.
    pub fn rx_data(&mut self, pkt: &Packet, now: SimTime) -> Result<RxOutcome, TransportError> {
        if !pkt.kind.is_payload() {
            return Err(TransportError::NotData(pkt.kind));
        }
        self.stats.packets_received += 1;
        let mut out = RxOutcome {
            cnp: self.maybe_cnp(pkt, now),
            ..Default::default()
        };
        let rx = match &mut self.variant {
            Variant::BestEffort { .. } => {
                if pkt.seq.checked_add(pkt.payload as u64).is_none_or(|e| e > self.buffer_len) {
                    self.stats.protocol_errors += 1;
                    out.discarded = true;
                } else {
                    out.delivery = Some(Delivery {
                        step_id: pkt.step_id,
                        offset: pkt.seq,
                        len: pkt.payload,
                    });
                }
                return Ok(out);
            }
            Variant::Reliable { rx, .. } => rx,
        };
        let psn = pkt.seq;
        let Some(loc) = rx.locate(psn) else {
            if psn < rx.expected {
                let cum = rx.expected;
                self.stats.duplicates += 1;
                out.reply = Some(self.ack(PacketKind::Ack, cum, 0, pkt.send_time, now));
            } else {
                self.stats.protocol_errors += 1;
                out.discarded = true;
            }
            return Ok(out);
        };
        let delivery = Delivery {
            step_id: loc.step_id,
            offset: loc.offset,
            len: loc.payload,
        };
        let verdict = rx.on_data(psn, loc.last);
        let cum = rx.expected;
        match verdict {
            RxVerdict::InOrder { ack_now } => {
                out.delivery = Some(delivery);
                if ack_now {
                    out.reply = Some(self.ack(PacketKind::Ack, cum, 0, pkt.send_time, now));
                }
            }
            RxVerdict::Buffered => {
                out.delivery = Some(delivery);
                if self.kind == TransportKind::Srnic {
                    out.deliver_at = Some(now + SimTime(self.cfg.srnic_slow_path_ns));
                }
                out.reply = Some(self.ack(PacketKind::Sack, cum, psn, pkt.send_time, now));
            }
            RxVerdict::Dropped { nack } => {
                self.stats.out_of_order_dropped += 1;
                if nack {
                    out.reply = Some(self.ack(PacketKind::Nack, cum, 0, pkt.send_time, now));
                }
            }
            RxVerdict::Duplicate => {
                self.stats.duplicates += 1;
                out.reply = Some(self.ack(PacketKind::Ack, cum, 0, pkt.send_time, now));
            }
        }
        Ok(out)
    }

    /// Handles an arriving ACK, NACK, SACK or CNP. Returns the number of
    /// PSNs newly inferred lost.
    pub fn rx_control(&mut self, pkt: &Packet, now: SimTime) -> usize {
        if pkt.kind == PacketKind::Cnp {
            self.dcqcn.advance_to(now, &self.cfg.dcqcn);
            dcqcn_on_cnp(&mut self.dcqcn, &self.cfg.dcqcn, now);
            self.stats.cnps_received += 1;
            return 0;
        }
        let Variant::Reliable { tx, .. } = &mut self.variant else {
            return 0;
        };
        match pkt.kind {
            PacketKind::Ack => {
                tx.ack_to(pkt.seq, now, pkt.echo);
                0
            }
            PacketKind::Nack => {
                tx.ack_to(pkt.seq, now, pkt.echo);
                if self.kind == TransportKind::RoceGbn {
                    tx.rewind(pkt.seq);
                }
                0
            }
            PacketKind::Sack => {
                tx.ack_to(pkt.seq, now, pkt.echo);
                tx.sack(pkt.aux, now)
            }
            _ => 0,
        }
    }

    pub fn rto(&self) -> Option<SimTime> {
        match &self.variant {
            Variant::BestEffort { .. } => None,
            Variant::Reliable { tx, .. } => {
                Some(tx.rto(SimTime(self.cfg.rto_min_ns), self.cfg.rto_srtt_multiplier))
            }
        }
    }

    /// When the retransmission timer fires, if armed.
    pub fn rto_deadline(&self) -> Option<SimTime> {
        match &self.variant {
            Variant::BestEffort { .. } => None,
            Variant::Reliable { tx, .. } => tx.rto_deadline(self.rto()?),
        }
    }

    /// Retransmission timeout. Returns the number of PSNs that will be sent
    /// again.
    pub fn on_loss_timeout(&mut self, now: SimTime) -> Result<usize, TransportError> {
        let Variant::Reliable { tx, .. } = &mut self.variant else {
            return Err(TransportError::NoRetransmissionPath);
        };
        self.stats.timeouts += 1;
        Ok(tx.on_timeout(now))
    }
}
