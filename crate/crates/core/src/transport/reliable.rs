//! Sender and receiver state shared by the reliable baselines.

use std::collections::{BTreeSet, VecDeque};

use crate::simkernel::SimTime;

use super::TransportKind;

#[derive(Debug, Clone, Copy)]
pub(super) struct Segment {
    pub step_id: u64,
    pub payload: u32,
    pub sacked: bool,
    /// Waiting in the retransmission queue.
    pub queued: bool,
    /// Position in transmission order, used for SACK-based loss inference.
    pub tx_order: u64,
}

#[derive(Debug, Clone, Copy)]
struct Retx {
    psn: u64,
    eligible: SimTime,
}

/// What the sender transmits next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum NextSend {
    /// Resend `psn`.
    Retransmit(u64),
    /// A fresh PSN, if the window and the send queue allow it.
    Fresh,
    /// A retransmission becomes eligible at the given time.
    RetransmitAt(SimTime),
}

#[derive(Debug, Clone)]
pub(super) struct ReliableSender {
    kind: TransportKind,
    window: Option<u64>,
    slow_path: SimTime,
    pub snd_una: u64,
    pub next_psn: u64,
    outstanding: VecDeque<Segment>,
    /// Go-back-N rewind cursor.
    resend_from: Option<u64>,
    retx_queue: VecDeque<Retx>,
    tx_counter: u64,
    timer_base: Option<SimTime>,
    pub srtt: Option<SimTime>,
}

impl ReliableSender {
    pub fn new(kind: TransportKind, window: Option<u64>, slow_path: SimTime) -> Self {
        Self {
            kind,
            window,
            slow_path: if kind == TransportKind::Srnic {
                slow_path
            } else {
                SimTime::ZERO
            },
            snd_una: 0,
            next_psn: 0,
            outstanding: VecDeque::new(),
            resend_from: None,
            retx_queue: VecDeque::new(),
            tx_counter: 0,
            timer_base: None,
            srtt: None,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }

    pub fn state_entries(&self) -> usize {
        self.outstanding.len() + self.retx_queue.len()
    }

    fn segment_mut(&mut self, psn: u64) -> Option<&mut Segment> {
        let idx = psn.checked_sub(self.snd_una)?;
        self.outstanding.get_mut(idx as usize)
    }

    pub fn segment(&self, psn: u64) -> Option<&Segment> {
        let idx = psn.checked_sub(self.snd_una)?;
        self.outstanding.get(idx as usize)
    }

    pub fn window_open(&self) -> bool {
        self.window
            .is_none_or(|w| self.next_psn - self.snd_una < w)
    }

    pub fn next_send(&mut self, now: SimTime) -> NextSend {
        if let Some(p) = self.resend_from {
            return NextSend::Retransmit(p);
        }
        while let Some(r) = self.retx_queue.front().copied() {
            let live = self.segment(r.psn).is_some_and(|s| !s.sacked && s.queued);
            if !live {
                self.retx_queue.pop_front();
                continue;
            }
            return if r.eligible <= now {
                NextSend::Retransmit(r.psn)
            } else {
                NextSend::RetransmitAt(r.eligible)
            };
        }
        NextSend::Fresh
    }

    /// Records a retransmission of `psn` at `now`; returns the segment.
    pub fn retransmitted(&mut self, psn: u64, now: SimTime) -> Segment {
        match self.resend_from {
            Some(p) if p == psn => {
                self.resend_from = (p + 1 < self.next_psn).then_some(p + 1);
            }
            _ => {
                let front = self.retx_queue.pop_front();
                debug_assert_eq!(front.map(|r| r.psn), Some(psn));
            }
        }
        self.tx_counter += 1;
        let order = self.tx_counter;
        let seg = self.segment_mut(psn).expect("retransmitting an acknowledged PSN");
        seg.queued = false;
        seg.tx_order = order;
        let seg = *seg;
        self.arm(now);
        seg
    }

    /// Appends a fresh segment; returns its PSN.
    pub fn push_fresh(&mut self, step_id: u64, payload: u32, now: SimTime) -> u64 {
        self.tx_counter += 1;
        self.outstanding.push_back(Segment {
            step_id,
            payload,
            sacked: false,
            queued: false,
            tx_order: self.tx_counter,
        });
        let psn = self.next_psn;
        self.next_psn += 1;
        self.arm(now);
        psn
    }

    fn arm(&mut self, now: SimTime) {
        if self.timer_base.is_none() {
            self.timer_base = Some(now);
        }
    }

    pub fn rto(&self, min: SimTime, mult: f64) -> SimTime {
        match self.srtt {
            Some(s) => SimTime(((s.0 as f64 * mult) as u64).max(min.0)),
            None => min,
        }
    }

    pub fn rto_deadline(&self, rto: SimTime) -> Option<SimTime> {
        if self.outstanding.is_empty() {
            None
        } else {
            self.timer_base.map(|b| b + rto)
        }
    }

    /// Cumulative acknowledgement up to (not including) `cum`.
    pub fn ack_to(&mut self, cum: u64, now: SimTime, echo: SimTime) -> bool {
        if cum <= self.snd_una || cum > self.next_psn {
            return false;
        }
        let n = (cum - self.snd_una) as usize;
        self.outstanding.drain(..n);
        self.snd_una = cum;
        if let Some(p) = self.resend_from {
            if p < cum {
                self.resend_from = (cum < self.next_psn).then_some(cum);
            }
        }
        self.timer_base = if self.outstanding.is_empty() {
            None
        } else {
            Some(now)
        };
        if echo > SimTime::ZERO && echo <= now {
            let sample = now - echo;
            self.srtt = Some(match self.srtt {
                None => sample,
                Some(s) => SimTime((s.0 * 7 + sample.0) / 8),
            });
        }
        true
    }

    /// Go-back-N: rewind to `psn` after a NACK.
    pub fn rewind(&mut self, psn: u64) {
        if psn >= self.snd_una && psn < self.next_psn {
            self.resend_from = Some(psn);
        }
    }

    /// Selective acknowledgement of `psn`. PSNs sent before it and still
    /// unacknowledged are inferred lost and queued; returns how many.
    pub fn sack(&mut self, psn: u64, now: SimTime) -> usize {
        let Some(seg) = self.segment_mut(psn) else {
            return 0;
        };
        seg.sacked = true;
        seg.queued = false;
        let order = seg.tx_order;
        let eligible = now + self.slow_path;
        let limit = (psn - self.snd_una) as usize;
        let mut lost = 0;
        for i in 0..limit {
            let s = &mut self.outstanding[i];
            if !s.sacked && !s.queued && s.tx_order < order {
                s.queued = true;
                self.retx_queue.push_back(Retx {
                    psn: self.snd_una + i as u64,
                    eligible,
                });
                lost += 1;
            }
        }
        lost
    }

    /// Retransmission timeout; returns the number of PSNs to resend.
    pub fn on_timeout(&mut self, now: SimTime) -> usize {
        if self.outstanding.is_empty() {
            return 0;
        }
        self.timer_base = Some(now);
        match self.kind {
            TransportKind::RoceGbn => {
                self.resend_from = Some(self.snd_una);
                (self.next_psn - self.snd_una) as usize
            }
            _ => {
                let eligible = now + self.slow_path;
                let mut count = 0;
                for (i, s) in self.outstanding.iter_mut().enumerate() {
                    if s.sacked {
                        continue;
                    }
                    count += 1;
                    if !s.queued {
                        s.queued = true;
                        self.retx_queue.push_back(Retx {
                            psn: self.snd_una + i as u64,
                            eligible,
                        });
                    }
                }
                count
            }
        }
    }
}

/// A posted receive mapping a PSN range onto the registered buffer.
#[derive(Debug, Clone, Copy)]
struct RecvWr {
    first_psn: u64,
    npkts: u64,
    step_id: u64,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) struct Located {
    pub step_id: u64,
    pub offset: u64,
    pub payload: u32,
    /// Last PSN of its receive.
    pub last: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum RxVerdict {
    /// Next in order; `ack_now` when a coalesced ACK is due.
    InOrder { ack_now: bool },
    /// Out of order and buffered (selective repeat).
    Buffered,
    /// Out of order and dropped; `nack` when a NACK should be sent.
    Dropped { nack: bool },
    Duplicate,
}

#[derive(Debug, Clone)]
pub(super) struct ReliableReceiver {
    kind: TransportKind,
    mtu: u64,
    ack_every: u32,
    pub expected: u64,
    recv_wrs: VecDeque<RecvWr>,
    next_recv_psn: u64,
    ooo: BTreeSet<u64>,
    nacked: Option<u64>,
    unacked: u32,
}

impl ReliableReceiver {
    pub fn new(kind: TransportKind, mtu: u32, ack_every: u32) -> Self {
        Self {
            kind,
            mtu: mtu as u64,
            ack_every,
            expected: 0,
            recv_wrs: VecDeque::new(),
            next_recv_psn: 0,
            ooo: BTreeSet::new(),
            nacked: None,
            unacked: 0,
        }
    }

    pub fn post_recv(&mut self, step_id: u64, offset: u64, len: u64) {
        let npkts = len.div_ceil(self.mtu);
        if npkts == 0 {
            return;
        }
        self.recv_wrs.push_back(RecvWr {
            first_psn: self.next_recv_psn,
            npkts,
            step_id,
            offset,
            len,
        });
        self.next_recv_psn += npkts;
    }

    pub fn state_entries(&self) -> usize {
        self.ooo.len()
    }

    pub fn locate(&self, psn: u64) -> Option<Located> {
        let first = self.recv_wrs.front()?.first_psn;
        if psn < first || psn >= self.next_recv_psn {
            return None;
        }
        // Receives are contiguous in PSN space; binary search by first PSN.
        let idx = self.recv_wrs.partition_point(|w| w.first_psn <= psn) - 1;
        let w = &self.recv_wrs[idx];
        let k = psn - w.first_psn;
        let offset = k * self.mtu;
        Some(Located {
            step_id: w.step_id,
            offset: w.offset + offset,
            payload: (w.len - offset).min(self.mtu) as u32,
            last: k + 1 == w.npkts,
        })
    }

    fn retire(&mut self) {
        while self
            .recv_wrs
            .front()
            .is_some_and(|w| w.first_psn + w.npkts <= self.expected)
        {
            self.recv_wrs.pop_front();
        }
    }

    pub fn on_data(&mut self, psn: u64, last_of_wr: bool) -> RxVerdict {
        use std::cmp::Ordering::*;
        match psn.cmp(&self.expected) {
            Less => RxVerdict::Duplicate,
            Equal => {
                self.expected += 1;
                self.nacked = None;
                let mut filled_hole = false;
                while self.ooo.remove(&self.expected) {
                    self.expected += 1;
                    filled_hole = true;
                }
                self.unacked += 1;
                let ack_now = last_of_wr
                    || filled_hole
                    || !self.ooo.is_empty()
                    || self.unacked >= self.ack_every
                    || self.expected == self.next_recv_psn;
                if ack_now {
                    self.unacked = 0;
                }
                self.retire();
                RxVerdict::InOrder { ack_now }
            }
            Greater => match self.kind {
                TransportKind::RoceGbn => {
                    let nack = self.nacked != Some(self.expected);
                    self.nacked = Some(self.expected);
                    RxVerdict::Dropped { nack }
                }
                _ => {
                    if self.ooo.insert(psn) {
                        RxVerdict::Buffered
                    } else {
                        RxVerdict::Duplicate
                    }
                }
            },
        }
    }
}
