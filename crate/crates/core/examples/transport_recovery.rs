//! Loss recovery of the reliable transports on a single link: the same
//! packets are dropped for each design and the retransmissions are counted.
//!
//! ```bash
//! cargo run --release --example transport_recovery
//! ```

use std::collections::HashSet;

use celeris_sim::simkernel::SimTime;
use celeris_sim::transport::{
    QpEndpoint, QueuePair, RecvBuffer, TransportConfig, TransportKind, TxPoll, WorkRequest,
};

const LEN: u64 = 200 * 1024;
const DROPPED: [u64; 4] = [3, 4, 40, 90];

fn main() {
    let cfg = TransportConfig::default();
    let a = QpEndpoint { local_host: 0, local_qp: 1, remote_host: 1, remote_qp: 1 };
    let b = QpEndpoint { local_host: 1, local_qp: 1, remote_host: 0, remote_qp: 1 };
    for kind in TransportKind::ALL {
        let mut tx = QueuePair::new(kind, a, LEN, 100e9, &cfg);
        let mut rx = QueuePair::new(kind, b, LEN, 100e9, &cfg);
        tx.post_send(WorkRequest { offset: 0, length: LEN, step_id: 0 }).unwrap();
        rx.post_recv(0, 0, LEN).unwrap();

        let mut mem = RecvBuffer::new(LEN);
        let mut sent = HashSet::new();
        let mut now = SimTime::ZERO;
        // Lock-step wire: every packet arrives instantly; replies likewise.
        while !tx.is_quiescent() {
            match tx.tx_pull(now) {
                TxPoll::Packet(p) => {
                    if sent.insert(p.seq) && DROPPED.contains(&p.seq) {
                        continue;
                    }
                    let out = rx.rx_data(&p, now).unwrap();
                    if let Some(d) = out.delivery {
                        mem.place(d.offset, d.len as u64, None);
                    }
                    if let Some(r) = out.reply {
                        tx.rx_control(&r, now);
                    }
                }
                TxPoll::Wait(t) => now = t,
                TxPoll::Idle => match tx.rto_deadline() {
                    Some(t) => {
                        now = now.max(t);
                        tx.on_loss_timeout(now).unwrap();
                    }
                    None => break,
                },
            }
        }
        let s = tx.stats();
        println!(
            "{:<10} delivered {:>6}/{LEN} B  sent {:>3}  retransmitted {:>3}  timeouts {}  context {} B",
            kind.name(),
            mem.bytes_received(),
            s.packets_sent,
            s.retransmitted,
            s.timeouts,
            tx.context_bytes()
        );
    }
}
