//! Core-to-core exchange latency matrix.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example ping_pong
//! cargo run --release --example ping_pong -- 0,1 0,2 1,2
//! ```
//!
//! Each argument is a core pair; without arguments the example pairs
//! core 0 with every other core, up to four pairs. Two pinned workers
//! bounce a one-byte flag via compare-and-swap; the cell is the mean
//! round trip in ns. Hosts with one core cannot pin two distinct cores,
//! so the example falls back to a single unpinned pair and says so.

use membench::alloc::{host_core_count, pinning_disabled, PlacementPolicy};
use membench::clock::MonotonicClock;
use membench::harness::{pingpong_matrix, HarnessError};

fn parse_pairs() -> Vec<(usize, usize)> {
    let from_args: Vec<(usize, usize)> = std::env::args()
        .skip(1)
        .filter_map(|a| {
            let (x, y) = a.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect();
    if !from_args.is_empty() {
        return from_args;
    }
    (1..host_core_count().min(5)).map(|c| (0, c)).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = parse_pairs();
    if pairs.is_empty() {
        println!("one core visible; ping-pong needs two distinct cores to pin");
        println!("rerun under MEMBENCH_NO_PIN=1 to timeshare a pair on one core:");
        println!("  MEMBENCH_NO_PIN=1 cargo run --release --example ping_pong -- 0,1");
        return Ok(());
    }

    let clock = MonotonicClock::new();
    let placements = [PlacementPolicy::Default];
    match pingpong_matrix(&pairs, &placements, 2000, &clock) {
        Ok(matrix) => {
            println!("{} [{}]", matrix.title, matrix.unit);
            for (i, row) in matrix.cells.iter().enumerate() {
                let v = row[0].as_ref().map(|c| c.value).unwrap_or(f64::NAN);
                println!("  {:>8}  {v:8.1}", matrix.row_labels[i]);
            }
        }
        Err(HarnessError::CoresExceedHost { requested, available }) => {
            println!("pair wants core {requested} but the host stops at {available} cores;");
            println!("pick pairs within 0..{available} or set MEMBENCH_NO_PIN=1");
            if pinning_disabled() {
                unreachable!("unpinned runs accept any core id");
            }
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
