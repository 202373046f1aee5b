//! Multi-worker read throughput on this host.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example read_bandwidth
//! cargo run --release --example read_bandwidth -- 256 4   # MiB, workers
//! ```
//!
//! Workers are pinned one per core and released through the start gate
//! together, each streaming through its own partition of one shared
//! buffer. On hosts with fewer cores than requested the worker count
//! drops to what the host has; MEMBENCH_NO_PIN=1 skips pinning entirely.

use membench::alloc::{host_core_count, pinning_disabled};
use membench::clock::MonotonicClock;
use membench::harness::{run_case, BenchmarkCase, BufferSpec, KernelKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mib: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(64);
    let mut workers: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(2);

    if !pinning_disabled() && workers > host_core_count() {
        println!(
            "host has {} core(s); dropping from {workers} workers (or set MEMBENCH_NO_PIN=1)",
            host_core_count()
        );
        workers = host_core_count();
    }

    let mut case = BenchmarkCase::new("read-bandwidth", KernelKind::Read, (0..workers).collect());
    case.buffer = Some(BufferSpec::new(mib << 20));
    case.repetitions = 5;
    case.warmup = 1;
    // oversubscribed machines need a long runway to the start tick
    case.start_delay_ns = 150_000_000;

    let record = run_case(&case, None, &MonotonicClock::new())?;
    println!(
        "{} MiB across {} worker(s): {:.2} {}",
        mib, record.worker_count, record.derived_value, record.unit
    );
    for it in record.iterations.iter().filter(|i| !i.warmup) {
        println!("  iteration: {} ns", it.elapsed_ns);
    }
    println!("start skew: {} ns, pinned: {}", record.start_skew_ns, record.pinned);
    Ok(())
}
