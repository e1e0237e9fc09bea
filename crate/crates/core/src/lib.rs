//! Packet-level simulator and analytic models for a best-effort RDMA
//! transport with step deadlines, compared against reliable RoCE designs.
//!
//! - [`simkernel`]: simulated clock, event queue, named seeded RNG streams.
//! - [`fabric`]: leaf-spine Clos with ECMP, RED/ECN marking, PFC and
//!   background traffic.
//! - [`transport`]: sans-IO queue pairs for go-back-N, IRN, SRNIC and the
//!   best-effort transport, with DCQCN rate control.
//! - [`collective`]: ring AllReduce planning and per-step progress.
//! - [`timeoutctl`]: static, adaptive and coordinated step deadlines.
//! - [`losstolerance`]: Hadamard and XOR coding of gradients, and training
//!   with dropped fragments.
//! - [`resmodel`]: QP context capacity and soft-error MTBF.
//! - [`sim`]: the event loop tying fabric, queue pairs and rings together.
//! - [`experiment`]: scenario configs, runs, sweeps and CSV/JSON reports.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fabric;
pub mod simkernel;
pub mod transport;
pub mod collective;
pub mod timeoutctl;
pub mod losstolerance;
pub mod resmodel;
pub mod sim;
pub mod experiment;
