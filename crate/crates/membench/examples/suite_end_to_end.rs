//! Suite file in, records and charts out.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example suite_end_to_end
//! cargo run --release --example suite_end_to_end -- my-suite.json out-dir
//! ```
//!
//! Without arguments a small built-in suite runs and the artifacts land
//! in ./membench-out: the records as JSON lines, a CSV flattening, and
//! an SVG throughput heatmap. This is the same path the `membench run`,
//! `report`, and `analyze` subcommands drive.

use std::io::Write;
use std::path::PathBuf;

use membench::analysis::summarize;
use membench::clock::MonotonicClock;
use membench::harness::{parse_suite, run_suite, CaseOutcome, MeasurementRecord};
use membench::report::{export_csv, render_heatmap, Cell, ColorScale, Matrix};

const BUILTIN_SUITE: &str = r#"[
    {
        "id": "stream-read",
        "kernel": "read",
        "initiator_cores": [0],
        "buffer": { "length": 33554432 },
        "repetitions": 3,
        "warmup": 1,
        "start_delay_ns": 150000000
    },
    {
        "id": "stream-write",
        "kernel": "write",
        "initiator_cores": [0],
        "buffer": { "length": 33554432 },
        "repetitions": 3,
        "warmup": 1,
        "start_delay_ns": 150000000
    },
    {
        "id": "stream-copy",
        "kernel": "copy",
        "initiator_cores": [0],
        "src_buffer": { "length": 33554432 },
        "dst_buffer": { "length": 33554432 },
        "repetitions": 3,
        "warmup": 1,
        "start_delay_ns": 150000000
    }
]"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let suite_text = match args.next() {
        Some(path) => std::fs::read_to_string(path)?,
        None => BUILTIN_SUITE.to_string(),
    };
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "membench-out".to_string()));
    std::fs::create_dir_all(&out_dir)?;

    let cases = parse_suite(&suite_text)?;
    let clock = MonotonicClock::new();

    let jsonl_path = out_dir.join("results.jsonl");
    let mut jsonl = std::fs::File::create(&jsonl_path)?;
    let mut records: Vec<MeasurementRecord> = Vec::new();
    let outcomes = run_suite(&cases, None, &clock, &mut |r| {
        // one line per completed case, flushed as it happens
        writeln!(jsonl, "{}", serde_json::to_string(r).unwrap()).unwrap();
        jsonl.flush().unwrap();
        records.push(r.clone());
    })?;

    for outcome in &outcomes {
        match outcome {
            CaseOutcome::Completed(r) => {
                let stats = summarize(r)?;
                println!(
                    "{}: {:.2} {} (spread {:.0}..{:.0} ns over {} iterations)",
                    r.case_id, r.derived_value, r.unit, stats.min, stats.max, stats.count
                );
            }
            CaseOutcome::Failed { case_id, error } => {
                println!("{case_id}: failed: {error}");
            }
        }
    }

    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, export_csv(&records)?)?;

    // one-row heatmap: kernels across, mean throughput in the cells
    let throughput: Vec<&MeasurementRecord> =
        records.iter().filter(|r| r.unit == "GB/s").collect();
    if !throughput.is_empty() {
        let cols: Vec<String> = throughput.iter().map(|r| r.case_id.clone()).collect();
        let cells = vec![throughput
            .iter()
            .map(|r| Some(Cell { value: r.derived_value, annotation: None }))
            .collect()];
        let matrix = Matrix::new("suite throughput", vec!["core 0".into()], cols, "GB/s", cells)?;
        let svg_path = out_dir.join("throughput.svg");
        std::fs::write(&svg_path, render_heatmap(&matrix, &ColorScale::default())?)?;
        println!("wrote {}", svg_path.display());
    }
    println!("wrote {}", jsonl_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}
