//! Ring AllReduce: step plans, per-node step tracking and deadline
//! finalization.
//!
//! A ring over `N` members runs `N - 1` reduce-scatter steps followed by
//! `N - 1` all-gather steps. In every step each member sends one chunk to its
//! successor. Steps are numbered globally across rounds as
//! `round * 2(N - 1) + s`.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{HostId, Packet};
use crate::simkernel::SimTime;
use crate::transport::{
    QpEndpoint, QueuePair, RecvBuffer, TransportConfig, TransportError, TransportKind, TxPoll,
    WorkRequest,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectiveError {
    #[error("a ring needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("step {next} issued while step {active} is still open")]
    StepOpen { active: u64, next: u64 },
    #[error("step {0} was already issued")]
    StepReissued(u64),
    #[error("no open step to finalize")]
    NoOpenStep,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveGroup {
    pub group_id: u32,
    pub members: Vec<HostId>,
    /// Bytes per member per round.
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    ReduceScatter,
    AllGather,
}

/// One chunk transfer between ring neighbours. `src`/`dst` are positions in
/// the ring, not host ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSend {
    pub src: usize,
    pub dst: usize,
    pub chunk: usize,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    /// Step index within a round.
    pub step: usize,
    pub phase: Phase,
    /// Indexed by sender position.
    pub sends: Vec<ChunkSend>,
}

impl StepPlan {
    /// The transfer that ring position `node` receives in this step.
    pub fn incoming(&self, node: usize) -> &ChunkSend {
        let n = self.sends.len();
        &self.sends[(node + n - 1) % n]
    }
}

/// Splits `payload` bytes into `n` contiguous chunks whose sizes differ by at
/// most one `granule`. Returns `(offset, len)` per chunk.
pub fn chunk_bounds(payload: u64, n: usize, granule: u64) -> Vec<(u64, u64)> {
    let granule = granule.max(1);
    let units = payload / granule;
    let tail = payload % granule;
    let base = units / n as u64;
    let extra = units % n as u64;
    let mut offset = 0;
    (0..n)
        .map(|k| {
            let mut len = (base + u64::from((k as u64) < extra)) * granule;
            if k == n - 1 {
                len += tail;
            }
            let c = (offset, len);
            offset += len;
            c
        })
        .collect()
}

pub fn steps_per_round(n: usize) -> usize {
    2 * (n - 1)
}

pub fn plan_ring(group: &CollectiveGroup) -> Result<Vec<StepPlan>, CollectiveError> {
    plan_ring_granular(group, 1)
}

pub fn plan_ring_granular(
    group: &CollectiveGroup,
    granule: u64,
) -> Result<Vec<StepPlan>, CollectiveError> {
    let n = group.members.len();
    if n < 2 {
        return Err(CollectiveError::TooFewMembers(n));
    }
    let chunks = chunk_bounds(group.payload_bytes, n, granule);
    Ok((0..steps_per_round(n))
        .map(|step| {
            let (phase, shift) = if step < n - 1 {
                (Phase::ReduceScatter, n - step)
            } else {
                (Phase::AllGather, n + 1 - (step - (n - 1)))
            };
            let sends = (0..n)
                .map(|i| {
                    let chunk = (i + shift) % n;
                    ChunkSend {
                        src: i,
                        dst: (i + 1) % n,
                        chunk,
                        offset: chunks[chunk].0,
                        len: chunks[chunk].1,
                    }
                })
                .collect();
            StepPlan { step, phase, sends }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FinalizedBy {
    Complete,
    Deadline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub step_id: u64,
    pub node: HostId,
    pub bytes_expected: u64,
    pub bytes_received: u64,
    pub start: SimTime,
    pub duration: SimTime,
    pub finalized_by: FinalizedBy,
}

impl StepResult {
    pub fn loss_fraction(&self) -> f64 {
        if self.bytes_expected == 0 {
            0.0
        } else {
            1.0 - self.bytes_received as f64 / self.bytes_expected as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryEffect {
    /// Counted toward the open step; `complete` once every byte is in.
    Counted { complete: bool },
    /// Counted toward a step this node has not reached yet.
    Early,
    /// The step was already finalized; the bytes are discarded.
    Late,
}

#[derive(Debug, Clone)]
struct OpenStep {
    step_id: u64,
    start: SimTime,
    base: u64,
    buf: RecvBuffer,
}

/// Receive-side step bookkeeping for one ring member.
#[derive(Debug, Clone)]
pub struct StepTracker {
    node: HostId,
    open: Option<OpenStep>,
    /// Steps `< next_step` have been issued.
    next_step: u64,
    /// Data that arrived before its step was issued, keyed by step id.
    early: FxHashMap<u64, Vec<(u64, u64)>>,
    late_packets: u64,
    late_bytes: u64,
}

impl StepTracker {
    pub fn new(node: HostId) -> Self {
        Self {
            node,
            open: None,
            next_step: 0,
            early: FxHashMap::default(),
            late_packets: 0,
            late_bytes: 0,
        }
    }

    pub fn node(&self) -> HostId {
        self.node
    }

    pub fn open_step(&self) -> Option<u64> {
        self.open.as_ref().map(|o| o.step_id)
    }

    pub fn late_packets(&self) -> u64 {
        self.late_packets
    }

    pub fn late_bytes(&self) -> u64 {
        self.late_bytes
    }

    pub fn bytes_received(&self) -> u64 {
        self.open.as_ref().map_or(0, |o| o.buf.bytes_received())
    }

    /// Opens `step_id`, expecting `[offset, offset + len)` of the buffer.
    /// Returns `true` when the step is already complete (zero-length or
    /// fully pre-delivered).
    pub fn issue_step(
        &mut self,
        step_id: u64,
        offset: u64,
        len: u64,
        now: SimTime,
    ) -> Result<bool, CollectiveError> {
        if let Some(o) = &self.open {
            return Err(CollectiveError::StepOpen {
                active: o.step_id,
                next: step_id,
            });
        }
        if step_id < self.next_step {
            return Err(CollectiveError::StepReissued(step_id));
        }
        let mut buf = RecvBuffer::new(len);
        for (off, l) in self.early.remove(&step_id).unwrap_or_default() {
            buf.place(off - offset, l, None);
        }
        let complete = buf.is_complete();
        self.open = Some(OpenStep {
            step_id,
            start: now,
            base: offset,
            buf,
        });
        self.next_step = step_id + 1;
        Ok(complete)
    }

    pub fn on_delivery(&mut self, step_id: u64, offset: u64, len: u64) -> DeliveryEffect {
        match &mut self.open {
            Some(o) if o.step_id == step_id => {
                if offset < o.base {
                    return DeliveryEffect::Counted { complete: o.buf.is_complete() };
                }
                o.buf.place(offset - o.base, len, None);
                DeliveryEffect::Counted {
                    complete: o.buf.is_complete(),
                }
            }
            _ if step_id >= self.next_step => {
                self.early.entry(step_id).or_default().push((offset, len));
                DeliveryEffect::Early
            }
            _ => {
                self.late_packets += 1;
                self.late_bytes += len;
                DeliveryEffect::Late
            }
        }
    }

    /// Closes the open step. Later deliveries for it are discarded.
    pub fn finalize(&mut self, now: SimTime, by: FinalizedBy) -> Result<StepResult, CollectiveError> {
        let o = self.open.take().ok_or(CollectiveError::NoOpenStep)?;
        Ok(StepResult {
            step_id: o.step_id,
            node: self.node,
            bytes_expected: o.buf.len(),
            bytes_received: o.buf.bytes_received(),
            start: o.start,
            duration: now - o.start,
            finalized_by: by,
        })
    }
}

/// Runs one ring AllReduce over `inputs` (one vector per member) moving
/// every chunk through real queue pairs of `kind` on an ideal wire, and
/// returns each member's final vector. With `reverse_wire` packets of each
/// transfer arrive in reverse order.
pub fn ring_allreduce_values(
    inputs: &[Vec<f64>],
    kind: TransportKind,
    cfg: &TransportConfig,
    reverse_wire: bool,
) -> Result<Vec<Vec<f64>>, CollectiveError> {
    const ELEM: u64 = 8;
    let n = inputs.len();
    let len = inputs.first().map_or(0, Vec::len);
    let group = CollectiveGroup {
        group_id: 0,
        members: (0..n).collect(),
        payload_bytes: len as u64 * ELEM,
    };
    let plan = plan_ring_granular(&group, ELEM)?;
    let mut data: Vec<Vec<f64>> = inputs.to_vec();
    let buf_len = group.payload_bytes;
    let mut ideal = cfg.clone();
    ideal.dcqcn.enabled = false;
    // Sender QP of member i talks to member i + 1.
    let mut tx: Vec<QueuePair> = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            QueuePair::new(
                kind,
                QpEndpoint {
                    local_host: i as u32,
                    local_qp: 0,
                    remote_host: j as u32,
                    remote_qp: 1,
                },
                buf_len,
                f64::INFINITY,
                &ideal,
            )
        })
        .collect();
    let mut rx: Vec<QueuePair> = (0..n)
        .map(|j| {
            let i = (j + n - 1) % n;
            QueuePair::new(
                kind,
                QpEndpoint {
                    local_host: j as u32,
                    local_qp: 1,
                    remote_host: i as u32,
                    remote_qp: 0,
                },
                buf_len,
                f64::INFINITY,
                &ideal,
            )
        })
        .collect();
    let mut clock = SimTime::ZERO;
    for (step_id, step) in plan.iter().enumerate() {
        let step_id = step_id as u64;
        let staged: Vec<Vec<u8>> = step
            .sends
            .iter()
            .map(|s| {
                data[s.src][(s.offset / ELEM) as usize..((s.offset + s.len) / ELEM) as usize]
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect()
            })
            .collect();
        for s in &step.sends {
            rx[s.dst].post_recv(step_id, s.offset, s.len)?;
            tx[s.src].post_send(WorkRequest {
                offset: s.offset,
                length: s.len,
                step_id,
            })?;
        }
        for s in &step.sends {
            let mut pkts = Vec::new();
            while let TxPoll::Packet(p) = tx[s.src].tx_pull(clock) {
                pkts.push(p);
            }
            if reverse_wire {
                pkts.reverse();
            }
            let mut landed = RecvBuffer::with_contents(s.len);
            for p in &pkts {
                carry(p, clock, &mut tx[s.src], &mut rx[s.dst], s, &staged[s.src], &mut landed)?;
            }
            // Go-back-N drops reordered packets; let it recover.
            let mut stalls = 0;
            while !landed.is_complete() {
                let before = landed.bytes_received();
                match tx[s.src].tx_pull(clock) {
                    TxPoll::Packet(p) => {
                        carry(&p, clock, &mut tx[s.src], &mut rx[s.dst], s, &staged[s.src], &mut landed)?
                    }
                    TxPoll::Wait(t) => clock = clock.max(t),
                    TxPoll::Idle => {
                        clock = clock.max(tx[s.src].rto_deadline().unwrap_or(clock));
                        tx[s.src].on_loss_timeout(clock)?;
                    }
                }
                stalls = if landed.bytes_received() > before { 0 } else { stalls + 1 };
                assert!(stalls < 100_000, "transfer made no progress");
            }
            let bytes = landed.contents().expect("buffer keeps contents");
            let lo = (s.offset / ELEM) as usize;
            for (k, c) in bytes.chunks_exact(ELEM as usize).enumerate() {
                let v = f64::from_le_bytes(c.try_into().expect("8-byte element"));
                match step.phase {
                    Phase::ReduceScatter => data[s.dst][lo + k] += v,
                    Phase::AllGather => data[s.dst][lo + k] = v,
                }
            }
        }
    }
    Ok(data)
}

/// Hands one data packet to the receiver, its reply to the sender, and
/// copies any delivered payload into `landed`.
fn carry(
    p: &Packet,
    now: SimTime,
    tx: &mut QueuePair,
    rx: &mut QueuePair,
    send: &ChunkSend,
    staged: &[u8],
    landed: &mut RecvBuffer,
) -> Result<(), CollectiveError> {
    let out = rx.rx_data(p, now)?;
    if let Some(r) = out.reply {
        tx.rx_control(&r, now);
    }
    if let Some(d) = out.delivery {
        let rel = d.offset - send.offset;
        let src = &staged[rel as usize..rel as usize + d.len as usize];
        landed.place(rel, d.len as u64, Some(src));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(n: usize, payload: u64) -> CollectiveGroup {
        CollectiveGroup {
            group_id: 0,
            members: (0..n).collect(),
            payload_bytes: payload,
        }
    }

    #[test]
    fn four_members_six_steps_quarter_chunks() {
        let plan = plan_ring(&group(4, 100_000_000)).unwrap();
        assert_eq!(plan.len(), 6);
        for step in &plan {
            assert!(step.sends.iter().all(|s| s.len == 25_000_000));
        }
    }

    #[test]
    fn two_members_two_steps() {
        assert_eq!(plan_ring(&group(2, 10)).unwrap().len(), 2);
    }

    #[test]
    fn large_ring_chunk_size() {
        let plan = plan_ring(&group(128, 3_200_000_000)).unwrap();
        assert_eq!(plan.len(), 254);
        assert_eq!(plan[0].sends[0].len, 25_000_000);
    }

    #[test]
    fn single_member_rejected() {
        assert_eq!(plan_ring(&group(1, 10)), Err(CollectiveError::TooFewMembers(1)));
    }

    #[test]
    fn reduce_scatter_chunk_rotation() {
        let n = 5;
        let plan = plan_ring(&group(n, 1000)).unwrap();
        for (s, step) in plan.iter().enumerate().take(n - 1) {
            assert_eq!(step.phase, Phase::ReduceScatter);
            for (i, send) in step.sends.iter().enumerate() {
                assert_eq!(send.chunk, (i + n - s % n) % n);
            }
        }
        assert_eq!(plan[n - 1].phase, Phase::AllGather);
    }

    #[test]
    fn chunk_sizes_differ_by_at_most_a_granule() {
        let chunks = chunk_bounds(1003, 4, 1);
        assert_eq!(chunks.iter().map(|c| c.1).sum::<u64>(), 1003);
        let lens: Vec<u64> = chunks.iter().map(|c| c.1).collect();
        assert_eq!(lens, vec![251, 251, 251, 250]);
    }

    #[test]
    fn complete_step_reports_duration() {
        let mut t = StepTracker::new(3);
        assert!(!t.issue_step(0, 0, 3000, SimTime(100)).unwrap());
        assert_eq!(t.on_delivery(0, 1500, 1500), DeliveryEffect::Counted { complete: false });
        assert_eq!(t.on_delivery(0, 0, 1500), DeliveryEffect::Counted { complete: true });
        let r = t.finalize(SimTime(600), FinalizedBy::Complete).unwrap();
        assert_eq!(r.duration, SimTime(500));
        assert_eq!(r.loss_fraction(), 0.0);
    }

    #[test]
    fn deadline_step_reports_loss() {
        let mut t = StepTracker::new(0);
        t.issue_step(0, 0, 25_000_000, SimTime::ZERO).unwrap();
        t.on_delivery(0, 0, 24_900_000);
        let r = t.finalize(SimTime(10), FinalizedBy::Deadline).unwrap();
        assert_eq!(r.finalized_by, FinalizedBy::Deadline);
        assert!((r.loss_fraction() - 0.004).abs() < 1e-12);
    }

    #[test]
    fn late_packets_are_discarded() {
        let mut t = StepTracker::new(0);
        t.issue_step(7, 0, 3000, SimTime::ZERO).unwrap();
        t.finalize(SimTime(1), FinalizedBy::Deadline).unwrap();
        assert_eq!(t.on_delivery(7, 0, 1500), DeliveryEffect::Late);
        assert_eq!(t.late_packets(), 1);
    }

    #[test]
    fn early_data_counts_when_step_opens() {
        let mut t = StepTracker::new(0);
        t.issue_step(0, 0, 10, SimTime::ZERO).unwrap();
        assert_eq!(t.on_delivery(1, 100, 50), DeliveryEffect::Early);
        t.finalize(SimTime(1), FinalizedBy::Complete).unwrap();
        assert!(t.issue_step(1, 100, 50, SimTime(1)).unwrap());
    }

    #[test]
    fn zero_byte_step_completes_immediately() {
        let mut t = StepTracker::new(0);
        assert!(t.issue_step(0, 0, 0, SimTime::ZERO).unwrap());
    }

    #[test]
    fn step_before_predecessor_finalized_is_rejected() {
        let mut t = StepTracker::new(0);
        t.issue_step(0, 0, 10, SimTime::ZERO).unwrap();
        assert_eq!(
            t.issue_step(1, 0, 10, SimTime::ZERO),
            Err(CollectiveError::StepOpen { active: 0, next: 1 })
        );
    }

    #[test]
    fn numeric_allreduce_over_every_transport() {
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..1000).map(|k| (i * 1000 + k) as f64).collect())
            .collect();
        for kind in TransportKind::ALL {
            for reverse in [false, true] {
                let out =
                    ring_allreduce_values(&inputs, kind, &TransportConfig::default(), reverse).unwrap();
                for k in 0..1000 {
                    let sum: f64 = inputs.iter().map(|v| v[k]).sum();
                    assert!(out.iter().all(|o| o[k] == sum), "{kind} reverse={reverse}");
                }
            }
        }
    }
}
