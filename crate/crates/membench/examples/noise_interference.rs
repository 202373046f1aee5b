//! Read bandwidth with and without a memory-hungry neighbor.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example noise_interference
//! cargo run --release --example noise_interference -- 128 256
//! ```
//!
//! Arguments: measured buffer MiB (default 64), noise buffer MiB
//! (default 256). The same read case runs twice, the second time next to
//! a background worker that streams through its own large buffer. The
//! throughput drop is the interference. Pinned runs need a spare core
//! for the noise worker; on a single-core host the example switches to
//! unpinned timesharing and labels the result accordingly.

use membench::alloc::{host_core_count, pinning_disabled};
use membench::clock::MonotonicClock;
use membench::harness::{run_case, BenchmarkCase, BufferSpec, KernelKind, NoiseConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mib: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(64);
    let noise_mib: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(256);

    let mut noise_core = 1usize;
    if !pinning_disabled() && host_core_count() < 2 {
        println!("one core visible: noise cannot run on its own core, going unpinned");
        std::env::set_var("MEMBENCH_NO_PIN", "1");
        noise_core = 0;
    }

    let clock = MonotonicClock::new();
    let mut quiet = BenchmarkCase::new("quiet", KernelKind::Read, vec![0]);
    quiet.buffer = Some(BufferSpec::new(mib << 20));
    quiet.repetitions = 5;
    quiet.warmup = 1;
    quiet.start_delay_ns = 150_000_000;

    let mut noisy = quiet.clone();
    noisy.id = "noisy".to_string();
    noisy.noise = Some(NoiseConfig {
        cores: vec![noise_core],
        buffer_bytes: noise_mib << 20,
        policy: membench::alloc::PlacementPolicy::Default,
    });

    let base = run_case(&quiet, None, &clock)?;
    let loaded = run_case(&noisy, None, &clock)?;

    println!("quiet: {:.2} {}", base.derived_value, base.unit);
    println!("under noise: {:.2} {}", loaded.derived_value, loaded.unit);
    println!(
        "retained {:.0}% (pinned: {})",
        100.0 * loaded.derived_value / base.derived_value,
        loaded.pinned
    );
    Ok(())
}
