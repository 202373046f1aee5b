//! Topology-aware memory benchmarking toolkit.
//!
//! The crate splits into a modeling half and a measuring half. The
//! modeling half (`topo`) descends from a machine description file to
//! datapaths and throughput bounds. The measuring half (`clock`, `alloc`,
//! `kernels`, `harness`) pins workers, places buffers, and runs access
//! kernels under a synchronized-start protocol. `analysis` and `report`
//! close the loop: measured numbers against modeled bounds, rendered as
//! CSV, JSON lines, or SVG.
//!
//! Start with the runnable examples:
//!
//! ```text
//! examples/topology_bounds.rs    model a machine, print bound matrices
//! examples/read_bandwidth.rs     multi-worker read throughput on this host
//! examples/copy_pipelining.rs    one copy stream vs four independent ones
//! examples/cache_latency_curve.rs  pointer-chase latency vs working set
//! examples/ping_pong.rs          core-to-core latency matrix
//! examples/noise_interference.rs bandwidth under a memory-hungry neighbor
//! examples/suite_end_to_end.rs   suite file in, records and charts out
//! ```
//!
//! The same capabilities are reachable through the `membench` binary for
//! scripting (`topo validate`, `topo bounds`, `run`, `analyze`, `report`,
//! `clockinfo`).

pub mod alloc;
pub mod analysis;
pub mod cli;
pub mod clock;
pub mod harness;
pub mod kernels;
pub mod report;
pub mod topo;
