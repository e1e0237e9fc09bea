//! Packet-level simulation of hosts, switches and ring collectives on a Clos
//! fabric.
//!
//! Hosts pull packets from their queue pairs whenever their uplink is free;
//! switches are output-queued. Control packets (acknowledgements, CNPs) are
//! sent ahead of data at the host.

use std::collections::VecDeque;

use serde::Serialize;

use crate::collective::{
    plan_ring, steps_per_round, CollectiveError, CollectiveGroup, DeliveryEffect, FinalizedBy,
    StepPlan, StepResult, StepTracker,
};
use crate::fabric::{
    build_clos, EcnParams, FabricError, HostId, LinkId, LinkSpec, Packet, PacketKind, PfcParams,
    PfcSignal, PortQueue, QueuedPacket, Topology,
};
use crate::simkernel::{EventHandle, EventQueue, RngStream, SimTime};
use crate::timeoutctl::{DeadlineController, TimeoutTraceRow};
use crate::transport::{
    Delivery, QpEndpoint, QpStats, QueuePair, TransportConfig, TransportKind, TxPoll, WorkRequest,
};

/// A one-shot bulk transfer between two hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowSpec {
    pub start: SimTime,
    pub src: HostId,
    pub dst: HostId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub spec: FlowSpec,
    pub delivered: u64,
    pub finished_at: Option<SimTime>,
}

/// A ring AllReduce to run on the fabric.
#[derive(Debug, Clone)]
pub struct RingSpec {
    pub group: CollectiveGroup,
    pub kind: TransportKind,
    pub rounds: u32,
    pub deadlines: DeadlineController,
    /// Apply deadlines even when the transport is reliable.
    pub deadlines_for_reliable: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PortStats {
    pub link: LinkId,
    pub from: usize,
    pub to: usize,
    pub packets: u64,
    pub bytes: u64,
    pub drops: u64,
    pub data_drops: u64,
    pub ecn_marks: u64,
    pub pause_ns: u64,
    pub pauses_emitted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub events: u64,
    pub clock: SimTime,
    /// Every ring finished all of its steps.
    pub rings_done: bool,
}

fn push(q: &mut EventQueue<Ev>, at: SimTime, ev: Ev) -> EventHandle {
    q.schedule(at, ev).expect("events are never scheduled in the past")
}

#[derive(Debug, Clone)]
enum Ev {
    TxDone(LinkId),
    Arrive { link: LinkId, pkt: Packet },
    HostWake(HostId),
    Rto(usize),
    Deadline { ring: usize, pos: usize, step: u64 },
    Issue { ring: usize, pos: usize, step: u64 },
    FlowStart(usize),
    SoftDeliver { qp: usize, d: Delivery },
    Pfc { link: LinkId, pause: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    RingSend,
    RingRecv { ring: usize, pos: usize },
    FlowSend,
    FlowRecv(usize),
}

struct Slot {
    qp: QueuePair,
    role: Role,
    rto: Option<(SimTime, EventHandle)>,
}

struct Link {
    spec: LinkSpec,
    queue: PortQueue,
    busy: Option<QueuedPacket>,
    pause_count: u32,
    paused_since: SimTime,
    pause_ns: u64,
    packets: u64,
    bytes: u64,
    /// Ingress links this port's queue currently holds paused.
    pausing: Vec<LinkId>,
}

#[derive(Default)]
struct Host {
    ctrl: VecDeque<Packet>,
    senders: Vec<usize>,
    rr: usize,
    wake: Option<(SimTime, EventHandle)>,
}

struct RingNode {
    host: HostId,
    send_qp: usize,
    tracker: StepTracker,
    deadline: Option<EventHandle>,
    done: bool,
}

struct RingState {
    kind: TransportKind,
    plans: Vec<StepPlan>,
    total_steps: u64,
    deadlines: DeadlineController,
    use_deadlines: bool,
    nodes: Vec<RingNode>,
    results: Vec<StepResult>,
    finished: usize,
}

/// A fabric plus the workloads running on it.
pub struct World {
    topo: Topology,
    tcfg: TransportConfig,
    ecn: EcnParams,
    pfc: Option<PfcParams>,
    line_rate: f64,
    sr_window: u64,
    q: EventQueue<Ev>,
    marking: RngStream,
    links: Vec<Link>,
    hosts: Vec<Host>,
    qps: Vec<Slot>,
    rings: Vec<RingState>,
    flows: Vec<FlowRecord>,
    flow_kind: TransportKind,
    flows_congestion_controlled: bool,
}

impl World {
    pub fn new(
        topology: &crate::fabric::ClosConfig,
        transport: &TransportConfig,
        seed: u64,
    ) -> Result<Self, FabricError> {
        let topo = build_clos(topology)?;
        let links = topo
            .links()
            .iter()
            .map(|&spec| Link {
                spec,
                queue: PortQueue::new(topology.queue_capacity_bytes),
                busy: None,
                pause_count: 0,
                paused_since: SimTime::ZERO,
                pause_ns: 0,
                packets: 0,
                bytes: 0,
                pausing: Vec::new(),
            })
            .collect();
        let hosts = (0..topo.host_count()).map(|_| Host::default()).collect();
        let line_rate = topology.link_bandwidth_bps;
        let wire = (transport.mtu_bytes + transport.header_bytes) as u64;
        // One bandwidth-delay product over the longest path, in packets.
        let hops = if topology.leaf_count > 1 { 4 } else { 2 };
        let one_way = hops * (topology.link_propagation_ns + topology.serialization(wire).0);
        let bdp_bytes = (2 * one_way) as f64 * line_rate / 8e9;
        let sr_window = (bdp_bytes / wire as f64).ceil().max(1.0) as u64;
        Ok(Self {
            ecn: topology.ecn(),
            pfc: topology.pfc(),
            line_rate,
            sr_window,
            tcfg: transport.clone(),
            topo,
            q: EventQueue::new(),
            marking: RngStream::new(seed, "ecn-marking"),
            links,
            hosts,
            qps: Vec::new(),
            rings: Vec::new(),
            flows: Vec::new(),
            flow_kind: TransportKind::Celeris,
            flows_congestion_controlled: true,
        })
    }

    /// Whether bulk flows react to CNPs.
    pub fn set_flow_congestion_control(&mut self, enabled: bool) {
        self.flows_congestion_controlled = enabled;
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    /// Selective-repeat window used when none is configured.
    pub fn default_sr_window(&self) -> u64 {
        self.sr_window
    }

    fn window_for(&self, kind: TransportKind) -> Option<u64> {
        match kind {
            TransportKind::Celeris => None,
            TransportKind::RoceGbn => self.tcfg.gbn_window_packets.map(u64::from),
            TransportKind::Irn | TransportKind::Srnic => Some(
                self.tcfg
                    .sr_window_packets
                    .map_or(self.sr_window, u64::from),
            ),
        }
    }

    fn new_qp(
        &mut self,
        kind: TransportKind,
        ep: QpEndpoint,
        buffer_len: u64,
        role: Role,
        cfg: &TransportConfig,
        data_kind: PacketKind,
    ) -> usize {
        let qp = QueuePair::new(kind, ep, buffer_len, self.line_rate, cfg)
            .with_window(self.window_for(kind))
            .with_data_kind(data_kind);
        self.qps.push(Slot { qp, role, rto: None });
        self.qps.len() - 1
    }

    /// Adds a ring collective whose first step starts at time zero. Returns
    /// the ring index.
    pub fn add_ring(&mut self, spec: RingSpec) -> Result<usize, CollectiveError> {
        let plans = plan_ring(&spec.group)?;
        let n = spec.group.members.len();
        let ring = self.rings.len();
        let total_steps = spec.rounds as u64 * steps_per_round(n) as u64;
        let base = self.qps.len();
        let cfg = self.tcfg.clone();
        // Ring position p sends from qp base + 2p to base + 2((p + 1) mod n) + 1.
        for p in 0..n {
            let succ = (p + 1) % n;
            let host = spec.group.members[p] as u32;
            let next = spec.group.members[succ] as u32;
            let prev = spec.group.members[(p + n - 1) % n] as u32;
            let send = QpEndpoint {
                local_host: host,
                local_qp: (base + 2 * p) as u32,
                remote_host: next,
                remote_qp: (base + 2 * succ + 1) as u32,
            };
            let recv = QpEndpoint {
                local_host: host,
                local_qp: (base + 2 * p + 1) as u32,
                remote_host: prev,
                remote_qp: (base + 2 * ((p + n - 1) % n)) as u32,
            };
            let payload = spec.group.payload_bytes;
            self.new_qp(spec.kind, send, payload, Role::RingSend, &cfg, PacketKind::Data);
            let r = self.new_qp(
                spec.kind,
                recv,
                payload,
                Role::RingRecv { ring, pos: p },
                &cfg,
                PacketKind::Data,
            );
            for step in 0..total_steps {
                let inc = plans[(step % plans.len() as u64) as usize].incoming(p);
                self.qps[r].qp.post_recv(step, inc.offset, inc.len)?;
            }
        }
        let nodes = (0..n)
            .map(|p| {
                let host = spec.group.members[p];
                self.hosts[host].senders.push(base + 2 * p);
                RingNode {
                    host,
                    send_qp: base + 2 * p,
                    tracker: StepTracker::new(host),
                    deadline: None,
                    done: total_steps == 0,
                }
            })
            .collect();
        let use_deadlines = !spec.kind.is_reliable() || spec.deadlines_for_reliable;
        self.rings.push(RingState {
            kind: spec.kind,
            plans,
            total_steps,
            deadlines: spec.deadlines,
            use_deadlines,
            nodes,
            results: Vec::new(),
            finished: if total_steps == 0 { n } else { 0 },
        });
        if total_steps > 0 {
            for pos in 0..n {
                push(&mut self.q, SimTime::ZERO, Ev::Issue { ring, pos, step: 0 });
            }
        }
        Ok(ring)
    }

    /// Schedules a best-effort bulk flow. Returns the flow index.
    pub fn add_flow(&mut self, spec: FlowSpec) -> usize {
        assert!(spec.src != spec.dst, "flow endpoints must differ");
        let idx = self.flows.len();
        self.flows.push(FlowRecord {
            spec,
            delivered: 0,
            finished_at: None,
        });
        let at = spec.start.max(self.q.now());
        push(&mut self.q, at, Ev::FlowStart(idx));
        idx
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn step_results(&self, ring: usize) -> &[StepResult] {
        &self.rings[ring].results
    }

    pub fn timeout_trace(&self, ring: usize) -> &[TimeoutTraceRow] {
        self.rings[ring].deadlines.trace()
    }

    /// Deliveries discarded because their step had already been finalized.
    pub fn late_packets(&self, ring: usize) -> u64 {
        self.rings[ring].nodes.iter().map(|n| n.tracker.late_packets()).sum()
    }

    pub fn ring_qp_stats(&self, ring: usize) -> QpStats {
        let mut s = QpStats::default();
        for slot in &self.qps {
            match slot.role {
                Role::RingRecv { ring: r, .. } if r == ring => s.merge(slot.qp.stats()),
                _ => {}
            }
        }
        for node in &self.rings[ring].nodes {
            s.merge(self.qps[node.send_qp].qp.stats());
        }
        s
    }

    /// Sending queue pair of each ring position.
    pub fn ring_senders(&self, ring: usize) -> impl Iterator<Item = &QueuePair> + '_ {
        self.rings[ring].nodes.iter().map(|n| &self.qps[n.send_qp].qp)
    }

    pub fn port_stats(&self) -> Vec<PortStats> {
        let now = self.q.now();
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let open = if l.pause_count > 0 {
                    (now - l.paused_since).0
                } else {
                    0
                };
                PortStats {
                    link: i,
                    from: l.spec.from,
                    to: l.spec.to,
                    packets: l.packets,
                    bytes: l.bytes,
                    drops: l.queue.drop_count,
                    data_drops: l.queue.data_drop_count,
                    ecn_marks: l.queue.ecn_mark_count,
                    pause_ns: l.pause_ns + open,
                    pauses_emitted: l.queue.pfc_pauses_emitted,
                }
            })
            .collect()
    }

    /// Packets sitting in switch queues or on the wire.
    pub fn packets_in_flight(&self) -> usize {
        self.q.len()
    }

    fn rings_done(&self) -> bool {
        !self.rings.is_empty()
            && self.rings.iter().all(|r| r.finished == r.nodes.len())
    }

    /// Runs until every ring has finished, the queue drains or `limit` is
    /// reached, whichever comes first.
    pub fn run(&mut self, limit: SimTime) -> RunOutcome {
        self.run_inner(limit, true)
    }

    /// Runs every event up to `limit` regardless of ring progress.
    pub fn run_until(&mut self, limit: SimTime) -> RunOutcome {
        self.run_inner(limit, false)
    }

    fn run_inner(&mut self, limit: SimTime, stop_when_done: bool) -> RunOutcome {
        let start = self.q.events_processed();
        while let Some(t) = self.q.peek_time() {
            if t > limit || (stop_when_done && self.rings_done()) {
                break;
            }
            let ev = self.q.pop().expect("peeked event exists");
            self.handle(ev.payload, ev.fire_at);
        }
        RunOutcome {
            events: self.q.events_processed() - start,
            clock: self.q.now(),
            rings_done: self.rings_done(),
        }
    }


    fn handle(&mut self, ev: Ev, now: SimTime) {
        match ev {
            Ev::TxDone(link) => self.on_tx_done(link, now),
            Ev::Arrive { link, pkt } => self.on_arrive(link, pkt, now),
            Ev::HostWake(h) => {
                self.hosts[h].wake = None;
                self.kick(h, now);
            }
            Ev::Rto(q) => self.on_rto(q, now),
            Ev::Deadline { ring, pos, step } => {
                if self.rings[ring].nodes[pos].tracker.open_step() == Some(step) {
                    self.rings[ring].nodes[pos].deadline = None;
                    self.finalize(ring, pos, FinalizedBy::Deadline, now);
                }
            }
            Ev::Issue { ring, pos, step } => self.issue(ring, pos, step, now),
            Ev::FlowStart(f) => self.start_flow(f, now),
            Ev::SoftDeliver { qp, d } => self.deliver(qp, d, now),
            Ev::Pfc { link, pause } => self.on_pfc(link, pause, now),
        }
    }

    fn is_host(&self, node: usize) -> bool {
        node < self.topo.host_count()
    }

    fn transmit(&mut self, link: LinkId, qp: QueuedPacket, now: SimTime) {
        let ser = self.topo.config().serialization(qp.pkt.size as u64);
        let l = &mut self.links[link];
        l.packets += 1;
        l.bytes += qp.pkt.size as u64;
        l.busy = Some(qp);
        push(&mut self.q, now + ser, Ev::TxDone(link));
    }

    fn try_start(&mut self, link: LinkId, now: SimTime) {
        let l = &mut self.links[link];
        if l.busy.is_some() || l.pause_count > 0 {
            return;
        }
        if let Some(qp) = l.queue.pop() {
            self.transmit(link, qp, now);
        }
    }

    fn on_tx_done(&mut self, link: LinkId, now: SimTime) {
        let qp = self.links[link].busy.take().expect("link was transmitting");
        let from = self.links[link].spec.from;
        if !self.is_host(from) {
            let l = &mut self.links[link];
            l.queue.release(&qp);
            if let Some(PfcSignal::Resume) = l.queue.pfc_check(self.pfc.as_ref()) {
                let resumed = std::mem::take(&mut l.pausing);
                let prop = self.topo.config().propagation();
                for up in resumed {
                    push(&mut self.q, now + prop, Ev::Pfc { link: up, pause: false });
                }
            }
        }
        let prop = self.topo.config().propagation();
        push(&mut self.q, now + prop, Ev::Arrive { link, pkt: qp.pkt });
        if self.is_host(from) {
            self.kick(from, now);
        } else {
            self.try_start(link, now);
        }
    }

    fn on_pfc(&mut self, link: LinkId, pause: bool, now: SimTime) {
        let l = &mut self.links[link];
        if pause {
            if l.pause_count == 0 {
                l.paused_since = now;
                l.queue.paused = true;
            }
            l.pause_count += 1;
            return;
        }
        l.pause_count -= 1;
        if l.pause_count > 0 {
            return;
        }
        l.queue.paused = false;
        l.pause_ns += (now - l.paused_since).0;
        let from = l.spec.from;
        if self.is_host(from) {
            self.kick(from, now);
        } else {
            self.try_start(link, now);
        }
    }

    fn on_arrive(&mut self, link: LinkId, pkt: Packet, now: SimTime) {
        let node = self.links[link].spec.to;
        if self.is_host(node) {
            self.host_receive(node, pkt, now);
            return;
        }
        let out = self
            .topo
            .next_link(node, pkt.src as usize, pkt.dst as usize, pkt.qp);
        let l = &mut self.links[out];
        let outcome = l.queue.enqueue(pkt, Some(link), &self.ecn, &mut self.marking);
        if matches!(outcome, crate::fabric::EnqueueOutcome::Enqueued { .. }) {
            let mut newly = Vec::new();
            if let Some(PfcSignal::Pause) = l.queue.pfc_check(self.pfc.as_ref()) {
                newly = l.queue.contributors();
            } else if l.queue.pfc_asserted && !l.pausing.contains(&link) {
                newly.push(link);
            }
            if !newly.is_empty() {
                l.pausing.extend_from_slice(&newly);
                let prop = self.topo.config().propagation();
                for up in newly {
                    push(&mut self.q, now + prop, Ev::Pfc { link: up, pause: true });
                }
            }
        }
        self.try_start(out, now);
    }

    fn host_receive(&mut self, host: HostId, pkt: Packet, now: SimTime) {
        let q = pkt.qp as usize;
        if pkt.kind.is_payload() {
            let out = self.qps[q].qp.rx_data(&pkt, now).expect("payload packet");
            let replies = out.reply.into_iter().chain(out.cnp);
            let mut any = false;
            for r in replies {
                self.hosts[host].ctrl.push_back(r);
                any = true;
            }
            if let Some(d) = out.delivery {
                match out.deliver_at {
                    Some(t) => {
                        push(&mut self.q, t, Ev::SoftDeliver { qp: q, d });
                    }
                    None => self.deliver(q, d, now),
                }
            }
            if any {
                self.kick(host, now);
            }
        } else {
            self.qps[q].qp.rx_control(&pkt, now);
            self.arm_rto(q, now);
            self.kick(host, now);
        }
    }

    fn deliver(&mut self, q: usize, d: Delivery, now: SimTime) {
        match self.qps[q].role {
            Role::RingRecv { ring, pos } => {
                let node = &mut self.rings[ring].nodes[pos];
                let effect = node.tracker.on_delivery(d.step_id, d.offset, d.len as u64);
                if effect == (DeliveryEffect::Counted { complete: true }) {
                    if let Some(h) = node.deadline.take() {
                        self.q.cancel(h);
                    }
                    self.finalize(ring, pos, FinalizedBy::Complete, now);
                }
            }
            Role::FlowRecv(f) => {
                let rec = &mut self.flows[f];
                rec.delivered += d.len as u64;
                if rec.delivered >= rec.spec.bytes && rec.finished_at.is_none() {
                    rec.finished_at = Some(now);
                }
            }
            Role::RingSend | Role::FlowSend => {}
        }
    }

    fn arm_rto(&mut self, q: usize, now: SimTime) {
        let Some(dl) = self.qps[q].qp.rto_deadline() else {
            return;
        };
        // A pending timer that fires no later than the deadline re-checks
        // when it fires.
        if self.qps[q].rto.is_some_and(|(t, _)| t <= dl) {
            return;
        }
        if let Some((_, h)) = self.qps[q].rto.take() {
            self.q.cancel(h);
        }
        let at = dl.max(now);
        let h = push(&mut self.q, at, Ev::Rto(q));
        self.qps[q].rto = Some((at, h));
    }

    fn on_rto(&mut self, q: usize, now: SimTime) {
        self.qps[q].rto = None;
        match self.qps[q].qp.rto_deadline() {
            Some(dl) if dl <= now => {
                self.qps[q]
                    .qp
                    .on_loss_timeout(now)
                    .expect("timers are armed for reliable queue pairs only");
                let host = self.qps[q].qp.endpoint().local_host as usize;
                self.kick(host, now);
                self.arm_rto(q, now);
            }
            Some(_) => self.arm_rto(q, now),
            None => {}
        }
    }

    fn set_wake(&mut self, host: HostId, at: SimTime) {
        if let Some((t, h)) = self.hosts[host].wake {
            if t <= at {
                return;
            }
            self.q.cancel(h);
        }
        let h = push(&mut self.q, at, Ev::HostWake(host));
        self.hosts[host].wake = Some((at, h));
    }

    /// Starts the next transmission on a host's uplink if it is free.
    fn kick(&mut self, host: HostId, now: SimTime) {
        let link = self.topo.host_uplink(host);
        if self.links[link].busy.is_some() || self.links[link].pause_count > 0 {
            return;
        }
        if let Some(pkt) = self.hosts[host].ctrl.pop_front() {
            self.transmit(link, QueuedPacket { pkt, ingress: None }, now);
            return;
        }
        let n = self.hosts[host].senders.len();
        let mut wake: Option<SimTime> = None;
        let mut finished = Vec::new();
        for i in 0..n {
            let idx = (self.hosts[host].rr + i) % n;
            let q = self.hosts[host].senders[idx];
            match self.qps[q].qp.tx_pull(now) {
                TxPoll::Packet(pkt) => {
                    self.hosts[host].rr = idx + 1;
                    self.transmit(link, QueuedPacket { pkt, ingress: None }, now);
                    if self.qps[q].qp.kind().is_reliable() {
                        self.arm_rto(q, now);
                    }
                    return;
                }
                TxPoll::Wait(t) => wake = Some(wake.map_or(t, |w| w.min(t))),
                TxPoll::Idle => {
                    if self.qps[q].role == Role::FlowSend && self.qps[q].qp.is_quiescent() {
                        finished.push(q);
                    }
                }
            }
        }
        if !finished.is_empty() {
            self.hosts[host].senders.retain(|q| !finished.contains(q));
            self.hosts[host].rr = 0;
        }
        if let Some(t) = wake {
            self.set_wake(host, t.max(now + SimTime(1)));
        }
    }

    fn start_flow(&mut self, f: usize, now: SimTime) {
        let spec = self.flows[f].spec;
        let kind = self.flow_kind;
        let mut cfg = self.tcfg.clone();
        cfg.dcqcn.enabled &= self.flows_congestion_controlled;
        let base = self.qps.len();
        let send = QpEndpoint {
            local_host: spec.src as u32,
            local_qp: base as u32,
            remote_host: spec.dst as u32,
            remote_qp: (base + 1) as u32,
        };
        let recv = QpEndpoint {
            local_host: spec.dst as u32,
            local_qp: (base + 1) as u32,
            remote_host: spec.src as u32,
            remote_qp: base as u32,
        };
        let s = self.new_qp(kind, send, spec.bytes, Role::FlowSend, &cfg, PacketKind::Background);
        self.new_qp(kind, recv, spec.bytes, Role::FlowRecv(f), &cfg, PacketKind::Background);
        self.qps[s]
            .qp
            .post_send(WorkRequest {
                offset: 0,
                length: spec.bytes,
                step_id: 0,
            })
            .expect("flow fits its own buffer");
        self.hosts[spec.src].senders.push(s);
        self.kick(spec.src, now);
    }

    fn issue(&mut self, ring: usize, pos: usize, step: u64, now: SimTime) {
        let r = &mut self.rings[ring];
        let plan = &r.plans[(step % r.plans.len() as u64) as usize];
        let send = plan.sends[pos];
        let inc = *plan.incoming(pos);
        let node = &mut r.nodes[pos];
        let host = node.host;
        let sq = node.send_qp;
        let complete = node
            .tracker
            .issue_step(step, inc.offset, inc.len, now)
            .expect("steps are issued in order after finalization");
        let deadline = if r.use_deadlines {
            r.deadlines.timeout_for(pos).map(|t| now + t)
        } else {
            None
        };
        self.qps[sq]
            .qp
            .post_send(WorkRequest {
                offset: send.offset,
                length: send.len,
                step_id: step,
            })
            .expect("chunks lie inside the payload buffer");
        if complete {
            self.finalize(ring, pos, FinalizedBy::Complete, now);
        } else if let Some(at) = deadline {
            let h = push(&mut self.q, at, Ev::Deadline { ring, pos, step });
            self.rings[ring].nodes[pos].deadline = Some(h);
        }
        self.kick(host, now);
    }

    fn finalize(&mut self, ring: usize, pos: usize, by: FinalizedBy, now: SimTime) {
        let r = &mut self.rings[ring];
        let result = r.nodes[pos]
            .tracker
            .finalize(now, by)
            .expect("finalize follows an issued step");
        r.deadlines.on_step_finalized(pos, &result);
        r.results.push(result);
        if r.use_deadlines && r.kind == TransportKind::Celeris {
            // Whatever the predecessor still holds for this step is useless.
            let n = r.nodes.len();
            let pred = r.nodes[(pos + n - 1) % n].send_qp;
            self.qps[pred].qp.retire_before(result.step_id + 1);
        }
        let next = result.step_id + 1;
        if next < r.total_steps {
            let at = now + r.deadlines.coordination_latency();
            push(&mut self.q, 
                at,
                Ev::Issue {
                    ring,
                    pos,
                    step: next,
                },
            );
        } else {
            r.nodes[pos].done = true;
            r.finished += 1;
        }
    }
}
