//! Pointer-chase latency against working-set size, with knee detection.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example cache_latency_curve
//! cargo run --release --example cache_latency_curve -- 256 curve.svg
//! ```
//!
//! The first argument caps the working set in MiB (default 64); the
//! second, if given, writes the curve as an SVG line chart. Every load
//! depends on the one before it, so the mean access time tracks whichever
//! level of the hierarchy the working set spills into. Knees in the curve
//! approximate cache capacities.

use membench::alloc::{allocate, PlacementPolicy};
use membench::analysis::detect_breakpoints;
use membench::clock::{Clock, MonotonicClock};
use membench::kernels::{build_chase, kernel_chase};
use membench::report::{render_lines, Series, XAxis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let max_mib: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(64);
    let svg_path = args.next();

    let clock = MonotonicClock::new();
    let mut samples: Vec<(u64, f64)> = Vec::new();
    let mut size = 4 * 1024usize;
    while size <= max_mib << 20 {
        let buf = allocate(size, PlacementPolicy::Default, 4096)?;
        // stride of two cache lines sidesteps the adjacent-line prefetcher
        let chase = build_chase(buf, 128, 1)?;
        let begin = clock.now_ns();
        let r = kernel_chase(&chase, 50_000_000, 200, &clock)?;
        let elapsed = clock.now_ns() - begin;
        let ns = elapsed as f64 / r.accesses.unwrap_or(1) as f64;
        println!("{:>10} B  {ns:6.2} ns/access", size);
        samples.push((size as u64, ns));
        size *= 2;
    }

    match detect_breakpoints(&samples, 0.3, 2) {
        Ok(knees) if knees.is_empty() => println!("no knees found"),
        Ok(knees) => {
            for k in knees {
                println!("knee near {} KiB", k / 1024);
            }
        }
        Err(e) => println!("knee detection skipped: {e}"),
    }

    if let Some(path) = svg_path {
        let series = [Series {
            label: "chase [ns/access]".to_string(),
            points: samples.iter().map(|&(s, v)| (s as f64, v)).collect(),
        }];
        let svg = render_lines("dependent-load latency", &series, XAxis::Log2, &[])?;
        std::fs::write(&path, svg)?;
        println!("wrote {path}");
    }
    Ok(())
}
