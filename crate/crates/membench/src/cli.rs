//! Command-line front end. Everything here is scriptable: no prompts,
//! deterministic exit codes (0 ok, 1 domain error, 2 usage error), and
//! every failure prints a single "error: ..." line to the error stream.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::alloc::{host_core_count, pinning_disabled, PlacementPolicy, Realization};
use crate::analysis::{
    detect_breakpoints, fraction_of_bound, summarize, DEFAULT_BREAKPOINT_DELTA,
    DEFAULT_BREAKPOINT_WINDOW,
};
use crate::clock::{estimate_resolution, MonotonicClock};
use crate::harness::{parse_suite, run_suite, BenchmarkCase, CaseOutcome, KernelKind, MeasurementRecord};
use crate::report::{
    export_csv, matrix_from_bounds, parse_jsonl, render_heatmap, render_lines, Cell, ColorScale,
    Matrix, Series, XAxis,
};
use crate::topo::{bounds_matrix, parse_topology, MemOp, TopologySpec};

#[derive(Parser)]
#[command(
    name = "membench",
    version,
    about = "Topology-aware memory benchmarking",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Topology inspection: validation and datapath bounds.
    Topo {
        #[command(subcommand)]
        cmd: TopoCmd,
    },
    /// Execute a suite file, appending one JSON record per case to --out.
    Run {
        /// Suite file: a JSON array of benchmark cases.
        suite: PathBuf,
        /// Topology whose hash the records should carry.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Results file (JSON lines), written incrementally.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results file; optionally compare against bounds and
    /// detect cache breakpoints.
    Analyze {
        /// Results file produced by `run`.
        results: PathBuf,
        /// Topology for achieved-vs-bound fractions.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Detect latency breakpoints over the chase records.
        #[arg(long)]
        breakpoints: bool,
        /// Relative jump threshold for breakpoint detection.
        #[arg(long, default_value_t = DEFAULT_BREAKPOINT_DELTA)]
        delta: f64,
        /// Median window width for breakpoint detection.
        #[arg(long, default_value_t = DEFAULT_BREAKPOINT_WINDOW)]
        window: usize,
    },
    /// Render a results file: SVG heatmap, SVG line chart, or CSV.
    Report {
        /// Results file produced by `run`.
        results: PathBuf,
        /// Placement grid of mean throughput (SVG).
        #[arg(long, conflicts_with = "lines")]
        heatmap: bool,
        /// Per-kernel curves over working-set size (SVG).
        #[arg(long)]
        lines: bool,
        /// Output file. Without --heatmap/--lines, a CSV flattening is
        /// written here instead.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure and print the timer's resolution.
    Clockinfo,
}

#[derive(Subcommand)]
enum TopoCmd {
    /// Parse a topology file and check its model invariants.
    Validate { file: PathBuf },
    /// Print the datapath bound matrix for one initiator.
    Bounds {
        file: PathBuf,
        #[arg(long, value_enum)]
        op: OpArg,
        /// Initiating processing unit id.
        #[arg(long)]
        initiator: String,
        /// Emit the matrix as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum OpArg {
    Read,
    Write,
    Copy,
}

impl From<OpArg> for MemOp {
    fn from(op: OpArg) -> MemOp {
        match op {
            OpArg::Read => MemOp::Read,
            OpArg::Write => MemOp::Write,
            OpArg::Copy => MemOp::Copy,
        }
    }
}

/// Entry point for the binary: real argv, real streams.
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    dispatch(&args, &mut out, &mut err)
}

/// Testable dispatcher. `args` includes the program name.
pub fn dispatch(args: &[String], out: &mut dyn IoWrite, err: &mut dyn IoWrite) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not errors.
            return if e.use_stderr() {
                let _ = write!(err, "{e}");
                2
            } else {
                let _ = write!(out, "{e}");
                0
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Topo { cmd } => match cmd {
            TopoCmd::Validate { file } => cmd_validate(&file, out),
            TopoCmd::Bounds { file, op, initiator, json } => {
                cmd_bounds(&file, op.into(), &initiator, json, out)
            }
        },
        Cmd::Run { suite, topology, out: out_path } => {
            cmd_run(&suite, topology.as_deref(), &out_path, out)
        }
        Cmd::Analyze { results, topology, breakpoints, delta, window } => {
            cmd_analyze(&results, topology.as_deref(), breakpoints, delta, window, out)
        }
        Cmd::Report { results, heatmap, lines, out: out_path } => {
            cmd_report(&results, heatmap, lines, &out_path, out)
        }
        Cmd::Clockinfo => cmd_clockinfo(out),
    };
    match result {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_topology(path: &Path) -> Result<TopologySpec, String> {
    let text = read_to_string(path)?;
    parse_topology(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_records(path: &Path) -> Result<Vec<MeasurementRecord>, String> {
    let text = read_to_string(path)?;
    parse_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))
}

// Plain number formatting for tables: integers bare, fractions at two
// decimals.
fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

// Two significant digits, for fractions of bounds.
fn fmt_sig2(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (1 - exponent).max(0) as usize;
    format!("{v:.decimals$}")
}

fn cmd_validate(file: &Path, out: &mut dyn IoWrite) -> Result<(), String> {
    let topo = load_topology(file)?;
    let hash = crate::topo::topology_hash(&topo);
    writeln!(
        out,
        "{}: ok ({} processing units, {} memory domains, {} links)",
        topo.name,
        topo.pus.len(),
        topo.memories.len(),
        topo.links.len()
    )
    .map_err(|e| e.to_string())?;
    writeln!(out, "hash: {hash}").map_err(|e| e.to_string())?;
    for a in &topo.assumptions {
        writeln!(out, "assumption: {a}").map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn write_matrix_table(matrix: &Matrix, out: &mut dyn IoWrite) -> Result<(), String> {
    let cell_text = |c: &Option<Cell>| match c {
        Some(cell) => fmt_num(cell.value),
        None => "n/a".to_string(),
    };
    let row_w = matrix.row_labels.iter().map(|l| l.len()).max().unwrap_or(0);
    let mut col_w: Vec<usize> = matrix.col_labels.iter().map(|l| l.len()).collect();
    for row in &matrix.cells {
        for (j, c) in row.iter().enumerate() {
            col_w[j] = col_w[j].max(cell_text(c).len());
        }
    }
    let mut line = format!("{:row_w$}", "");
    for (j, label) in matrix.col_labels.iter().enumerate() {
        line.push_str(&format!("  {:>w$}", label, w = col_w[j]));
    }
    writeln!(out, "{} [{}]", matrix.title, matrix.unit).map_err(|e| e.to_string())?;
    writeln!(out, "{line}").map_err(|e| e.to_string())?;
    for (i, row) in matrix.cells.iter().enumerate() {
        let mut line = format!("{:row_w$}", matrix.row_labels[i]);
        for (j, c) in row.iter().enumerate() {
            line.push_str(&format!("  {:>w$}", cell_text(c), w = col_w[j]));
        }
        writeln!(out, "{line}").map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_bounds(
    file: &Path,
    op: MemOp,
    initiator: &str,
    json: bool,
    out: &mut dyn IoWrite,
) -> Result<(), String> {
    let topo = load_topology(file)?;
    let bounds = bounds_matrix(&topo, op, initiator).map_err(|e| e.to_string())?;
    if json {
        let text = serde_json::to_string_pretty(&bounds).map_err(|e| e.to_string())?;
        writeln!(out, "{text}").map_err(|e| e.to_string())?;
        return Ok(());
    }
    let matrix = matrix_from_bounds(&bounds);
    write_matrix_table(&matrix, out)?;
    writeln!(out).map_err(|e| e.to_string())?;
    writeln!(out, "limiting resources:").map_err(|e| e.to_string())?;
    for (i, row) in bounds.entries.iter().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            if let Some(b) = entry {
                writeln!(
                    out,
                    "  {} -> {}: {}",
                    bounds.row_labels[i], bounds.col_labels[j], b.limiting_resource
                )
                .map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(())
}

fn check_core_inventory(cases: &[BenchmarkCase]) -> Result<(), String> {
    if pinning_disabled() {
        return Ok(());
    }
    let host = host_core_count();
    for case in cases {
        let cores = case
            .initiator_cores
            .iter()
            .chain(case.noise.iter().flat_map(|n| n.cores.iter()));
        for &core in cores {
            if core >= host {
                return Err(format!(
                    "case {} requests core {core} but this host has {host} cores (0..{}); \
                     set MEMBENCH_NO_PIN=1 to run unpinned smoke tests",
                    case.id,
                    host - 1
                ));
            }
        }
    }
    Ok(())
}

fn cmd_run(
    suite_path: &Path,
    topology: Option<&Path>,
    out_path: &Path,
    out: &mut dyn IoWrite,
) -> Result<(), String> {
    let suite_text = read_to_string(suite_path)?;
    let cases = parse_suite(&suite_text).map_err(|e| e.to_string())?;
    let topo = topology.map(load_topology).transpose()?;
    check_core_inventory(&cases)?;

    let mut file = std::fs::File::create(out_path)
        .map_err(|e| format!("{}: {e}", out_path.display()))?;
    let clock = MonotonicClock::new();
    let mut write_error: Option<String> = None;
    let outcomes = {
        let mut persist = |record: &MeasurementRecord| {
            let line = match serde_json::to_string(record) {
                Ok(l) => l,
                Err(e) => {
                    write_error.get_or_insert(e.to_string());
                    return;
                }
            };
            // Flush per record so a later crash loses nothing.
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                write_error.get_or_insert(e.to_string());
            }
        };
        run_suite(&cases, topo.as_ref(), &clock, &mut persist).map_err(|e| e.to_string())?
    };
    if let Some(e) = write_error {
        return Err(format!("{}: {e}", out_path.display()));
    }

    let mut failed = 0usize;
    for outcome in &outcomes {
        match outcome {
            CaseOutcome::Completed(r) => {
                writeln!(out, "case {}: {} {}", r.case_id, fmt_num(r.derived_value), r.unit)
                    .map_err(|e| e.to_string())?;
            }
            CaseOutcome::Failed { case_id, error } => {
                failed += 1;
                writeln!(out, "case {case_id}: failed: {error}").map_err(|e| e.to_string())?;
            }
        }
    }
    if failed > 0 {
        return Err(format!("{failed} of {} cases failed", outcomes.len()));
    }
    Ok(())
}

fn cmd_analyze(
    results: &Path,
    topology: Option<&Path>,
    breakpoints: bool,
    delta: f64,
    window: usize,
    out: &mut dyn IoWrite,
) -> Result<(), String> {
    let records = load_records(results)?;
    if records.is_empty() {
        return Err(format!("{}: no records", results.display()));
    }
    let topo = topology.map(load_topology).transpose()?;

    for record in &records {
        match summarize(record) {
            Ok(s) => {
                writeln!(
                    out,
                    "case {} [{}]: {} {}, elapsed mean {} ns over {} iterations \
                     (min {}, max {}, stdev {})",
                    record.case_id,
                    record.kernel,
                    fmt_num(record.derived_value),
                    record.unit,
                    fmt_num(s.mean),
                    s.count,
                    fmt_num(s.min),
                    fmt_num(s.max),
                    fmt_num(s.stdev)
                )
                .map_err(|e| e.to_string())?;
            }
            Err(e) => {
                writeln!(out, "case {}: not summarizable: {e}", record.case_id)
                    .map_err(|e| e.to_string())?;
            }
        }
        if let Some(topo) = &topo {
            if matches!(
                record.kernel,
                KernelKind::Read | KernelKind::Write | KernelKind::Copy
            ) {
                match fraction_of_bound(record, topo) {
                    Ok(entry) => {
                        let note = if entry.fraction > 1.0 { "  cache-resident?" } else { "" };
                        writeln!(
                            out,
                            "case {}: {} / {} GB/s bound = {} of bound{note}",
                            entry.record_id,
                            fmt_num(entry.achieved_gbps),
                            fmt_num(entry.bound_gbps),
                            fmt_sig2(entry.fraction)
                        )
                        .map_err(|e| e.to_string())?;
                    }
                    Err(e) => {
                        writeln!(out, "case {}: no bound comparison: {e}", record.case_id)
                            .map_err(|e| e.to_string())?;
                    }
                }
            }
        }
    }

    if breakpoints {
        let mut samples: Vec<(u64, f64)> = Vec::new();
        for record in &records {
            if record.kernel == KernelKind::Chase {
                samples.push((record.buffer_bytes, record.derived_value));
            }
        }
        samples.sort_by(|a, b| a.0.cmp(&b.0));
        // Same-size repeats average into one point.
        let mut merged: Vec<(u64, f64)> = Vec::new();
        for (size, value) in samples {
            match merged.last_mut() {
                Some((s, v)) if *s == size => *v = (*v + value) / 2.0,
                _ => merged.push((size, value)),
            }
        }
        let found = detect_breakpoints(&merged, delta, window)
            .map_err(|e| format!("breakpoints over {} chase points: {e}", merged.len()))?;
        if found.is_empty() {
            writeln!(out, "breakpoints: none").map_err(|e| e.to_string())?;
        } else {
            let sizes: Vec<String> = found.iter().map(|s| s.to_string()).collect();
            writeln!(out, "breakpoints: {}", sizes.join(", ")).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

// A stable axis label for where a buffer landed.
fn placement_axis_label(record: &MeasurementRecord, role: &str) -> Option<String> {
    let p = record.placements.iter().find(|p| p.role == role)?;
    Some(match (&p.realized, &p.policy) {
        (Realization::Nodes(nodes), _) if nodes.len() == 1 => format!("node{}", nodes[0]),
        (Realization::Unverified, PlacementPolicy::ExplicitNode(n)) => format!("node{n}"),
        (_, policy) => policy.to_string(),
    })
}

fn heatmap_matrix(records: &[MeasurementRecord]) -> Result<Matrix, String> {
    use std::collections::BTreeMap;
    // (src label, dst label) -> throughput observations
    let mut buckets: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        let pair = match r.kernel {
            KernelKind::Read | KernelKind::Write => {
                placement_axis_label(r, "buffer").map(|l| (l.clone(), l))
            }
            KernelKind::Copy => placement_axis_label(r, "src")
                .zip(placement_axis_label(r, "dst")),
            KernelKind::Chase | KernelKind::PingPong => None,
        };
        if let Some(pair) = pair {
            buckets.entry(pair).or_default().push(r.derived_value);
        }
    }
    if buckets.is_empty() {
        return Err("no throughput records with usable placements".to_string());
    }
    let mut rows: Vec<String> = buckets.keys().map(|(s, _)| s.clone()).collect();
    let mut cols: Vec<String> = buckets.keys().map(|(_, d)| d.clone()).collect();
    rows.sort();
    rows.dedup();
    cols.sort();
    cols.dedup();
    let cells: Vec<Vec<Option<Cell>>> = rows
        .iter()
        .map(|s| {
            cols.iter()
                .map(|d| {
                    buckets.get(&(s.clone(), d.clone())).map(|values| {
                        let mean = values.iter().sum::<f64>() / values.len() as f64;
                        Cell {
                            value: mean,
                            annotation: Some(format!("{} record(s)", values.len())),
                        }
                    })
                })
                .collect()
        })
        .collect();
    Matrix::new("mean throughput by placement", rows, cols, "GB/s", cells)
        .map_err(|e| e.to_string())
}

fn lines_series(records: &[MeasurementRecord]) -> Result<Vec<Series>, String> {
    use std::collections::BTreeMap;
    let mut by_kernel: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let label = format!("{} [{}]", r.kernel, r.unit);
        by_kernel
            .entry(label)
            .or_default()
            .entry(r.buffer_bytes)
            .or_default()
            .push(r.derived_value);
    }
    let mut series = Vec::new();
    for (label, sizes) in by_kernel {
        let points: Vec<(f64, f64)> = sizes
            .into_iter()
            .map(|(size, values)| {
                (size as f64, values.iter().sum::<f64>() / values.len() as f64)
            })
            .collect();
        if points.len() >= 2 {
            series.push(Series { label, points });
        }
    }
    if series.is_empty() {
        return Err("no kernel has records at two or more working-set sizes".to_string());
    }
    Ok(series)
}

fn cmd_report(
    results: &Path,
    heatmap: bool,
    lines: bool,
    out_path: &Path,
    out: &mut dyn IoWrite,
) -> Result<(), String> {
    let records = load_records(results)?;
    let document = if heatmap {
        let matrix = heatmap_matrix(&records)?;
        render_heatmap(&matrix, &ColorScale::default()).map_err(|e| e.to_string())?
    } else if lines {
        let series = lines_series(&records)?;
        render_lines("kernel scaling by working-set size", &series, XAxis::Log2, &[])
            .map_err(|e| e.to_string())?
    } else {
        export_csv(&records).map_err(|e| e.to_string())?
    };
    std::fs::write(out_path, &document).map_err(|e| format!("{}: {e}", out_path.display()))?;
    writeln!(out, "wrote {} ({} bytes)", out_path.display(), document.len())
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_clockinfo(out: &mut dyn IoWrite) -> Result<(), String> {
    let clock = MonotonicClock::new();
    let info = estimate_resolution(&clock, 100_000).map_err(|e| e.to_string())?;
    writeln!(out, "source: {}", info.source).map_err(|e| e.to_string())?;
    writeln!(out, "resolution_ns: {}", info.resolution_ns).map_err(|e| e.to_string())?;
    writeln!(out, "frequency_hz: {}", info.frequency_hz).map_err(|e| e.to_string())?;
    Ok(())
}
