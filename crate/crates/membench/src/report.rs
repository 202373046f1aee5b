//! Result interchange and rendering: labeled matrices, CSV and JSONL
//! round-trips, and self-contained SVG charts.
//!
//! The interchange formats are deliberately boring. JSONL carries the
//! full record, one per line, and survives a parse and re-export
//! byte for byte. CSV flattens each record to one row per iteration for
//! spreadsheet work; the column set is fixed and the same export, parse,
//! export loop is byte-stable. Charts embed no timestamps and format
//! every float the same way, so rendering the same data twice yields the
//! same file.

use serde::{Deserialize, Serialize};

use crate::harness::MeasurementRecord;
use crate::topo::BoundsMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    /// Shown as a hover title in rendered output, e.g. which resource
    /// limits a bound.
    pub annotation: Option<String>,
}

/// A rectangular labeled grid. `None` cells are legitimate holes, e.g.
/// unreachable initiator and memory combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub unit: String,
    pub cells: Vec<Vec<Option<Cell>>>,
}

#[derive(Debug)]
pub enum ReportError {
    Shape(String),
    Empty(String),
    Csv(String),
    Json(String),
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportError::Shape(m) => write!(f, "bad matrix shape: {m}"),
            ReportError::Empty(m) => write!(f, "nothing to render: {m}"),
            ReportError::Csv(m) => write!(f, "csv: {m}"),
            ReportError::Json(m) => write!(f, "json: {m}"),
        }
    }
}

impl std::error::Error for ReportError {}

impl Matrix {
    pub fn new(
        title: &str,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        unit: &str,
        cells: Vec<Vec<Option<Cell>>>,
    ) -> Result<Matrix, ReportError> {
        if cells.len() != row_labels.len() {
            return Err(ReportError::Shape(format!(
                "{} rows of cells for {} row labels",
                cells.len(),
                row_labels.len()
            )));
        }
        for (i, row) in cells.iter().enumerate() {
            if row.len() != col_labels.len() {
                return Err(ReportError::Shape(format!(
                    "row {} has {} cells for {} column labels",
                    i,
                    row.len(),
                    col_labels.len()
                )));
            }
        }
        for labels in [&row_labels, &col_labels] {
            let mut sorted: Vec<&String> = labels.iter().collect();
            sorted.sort_unstable();
            for pair in sorted.windows(2) {
                if pair[0] == pair[1] {
                    return Err(ReportError::Shape(format!("duplicate label: {}", pair[0])));
                }
            }
        }
        Ok(Matrix {
            title: title.to_string(),
            row_labels,
            col_labels,
            unit: unit.to_string(),
            cells,
        })
    }
}

/// Rendering view of a bounds matrix: values in GB/s, the limiting
/// resource as the cell annotation.
pub fn matrix_from_bounds(bounds: &BoundsMatrix) -> Matrix {
    let cells = bounds
        .entries
        .iter()
        .map(|row| {
            row.iter()
                .map(|entry| {
                    entry.as_ref().map(|b| Cell {
                        value: b.bound.to_f64(),
                        annotation: Some(format!("limit: {}", b.limiting_resource)),
                    })
                })
                .collect()
        })
        .collect();
    Matrix {
        title: format!("{} bounds from {}", bounds.op, bounds.initiator),
        row_labels: bounds.row_labels.clone(),
        col_labels: bounds.col_labels.clone(),
        unit: "GB/s".to_string(),
        cells,
    }
}

// ---------------------------------------------------------------------
// CSV

/// One CSV row: a single iteration of a single case. The column order is
/// part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub case_id: String,
    pub kernel: String,
    /// Core list joined with '|'.
    pub cores: String,
    /// Placement reports joined with ';', each "role=policy:realized"
    /// with a ":degraded" suffix when the policy was not honored.
    pub placements: String,
    pub bytes: u64,
    pub iter_index: u32,
    pub warmup_flag: bool,
    pub elapsed_ns: u64,
    pub derived_value: f64,
    pub unit: String,
    /// Empty when the run had no topology to hash.
    pub topo_hash: String,
    pub timestamp: String,
}

fn realization_label(r: &crate::alloc::Realization) -> String {
    match r {
        crate::alloc::Realization::Nodes(nodes) => {
            let inner: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
            format!("nodes[{}]", inner.join(","))
        }
        crate::alloc::Realization::Unverified => "unverified".to_string(),
    }
}

fn placements_label(record: &MeasurementRecord) -> String {
    record
        .placements
        .iter()
        .map(|p| {
            let mut s = format!("{}={}:{}", p.role, p.policy, realization_label(&p.realized));
            if p.degraded {
                s.push_str(":degraded");
            }
            s
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Flatten records to rows, one per iteration.
pub fn records_to_csv_rows(records: &[MeasurementRecord]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for r in records {
        let cores: Vec<String> = r.core_ids.iter().map(|c| c.to_string()).collect();
        let cores = cores.join("|");
        let placements = placements_label(r);
        for (i, it) in r.iterations.iter().enumerate() {
            rows.push(CsvRow {
                case_id: r.case_id.clone(),
                kernel: r.kernel.to_string(),
                cores: cores.clone(),
                placements: placements.clone(),
                bytes: r.bytes_per_iteration,
                iter_index: i as u32,
                warmup_flag: it.warmup,
                elapsed_ns: it.elapsed_ns,
                derived_value: r.derived_value,
                unit: r.unit.clone(),
                topo_hash: r.topology_hash.clone().unwrap_or_default(),
                timestamp: r.timestamp.clone(),
            });
        }
    }
    rows
}

const CSV_COLUMNS: [&str; 12] = [
    "case_id",
    "kernel",
    "cores",
    "placements",
    "bytes",
    "iter_index",
    "warmup_flag",
    "elapsed_ns",
    "derived_value",
    "unit",
    "topo_hash",
    "timestamp",
];

pub fn rows_to_csv(rows: &[CsvRow]) -> Result<String, ReportError> {
    // Write the header by hand so an empty export is still header-only,
    // not an empty file.
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS).map_err(|e| ReportError::Csv(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| ReportError::Csv(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Csv(e.to_string()))
}

pub fn export_csv(records: &[MeasurementRecord]) -> Result<String, ReportError> {
    rows_to_csv(&records_to_csv_rows(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    JsonLines,
}

/// Single entry point over both interchange formats.
pub fn export_records(
    records: &[MeasurementRecord],
    format: ExportFormat,
) -> Result<String, ReportError> {
    match format {
        ExportFormat::Csv => export_csv(records),
        ExportFormat::JsonLines => export_jsonl(records),
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| ReportError::Csv(e.to_string()))
}

// ---------------------------------------------------------------------
// JSONL

/// One full record per line.
pub fn export_jsonl(records: &[MeasurementRecord]) -> Result<String, ReportError> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| ReportError::Json(e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<MeasurementRecord>, ReportError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ReportError::Json(e.to_string())))
        .collect()
}

// ---------------------------------------------------------------------
// SVG

pub fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Two-color linear ramp for heatmap cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorScale {
    pub low: (u8, u8, u8),
    pub high: (u8, u8, u8),
}

impl Default for ColorScale {
    /// White through steel blue.
    fn default() -> Self {
        ColorScale { low: (0xff, 0xff, 0xff), high: (0x46, 0x82, 0xb4) }
    }
}

impl ColorScale {
    fn at(&self, t: f64) -> String {
        let lerp = |a: u8, b: u8| -> u8 {
            (a as f64 + (b as f64 - a as f64) * t).round().clamp(0.0, 255.0) as u8
        };
        format!(
            "#{:02x}{:02x}{:02x}",
            lerp(self.low.0, self.high.0),
            lerp(self.low.1, self.high.1),
            lerp(self.low.2, self.high.2)
        )
    }
}

// One consistent float format everywhere in rendered output.
fn fmt_value(v: f64) -> String {
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

const CELL_W: f64 = 96.0;
const CELL_H: f64 = 30.0;
const CHAR_W: f64 = 7.2;

/// Render a matrix as a colored grid. Cell shading ramps linearly from
/// the smallest to the largest present value; holes render gray "n/a".
/// Output is deterministic for a given matrix and scale.
pub fn render_heatmap(matrix: &Matrix, scale: &ColorScale) -> Result<String, ReportError> {
    if matrix.row_labels.is_empty() || matrix.col_labels.is_empty() {
        return Err(ReportError::Empty("heatmap needs at least one row and column".into()));
    }
    let values: Vec<f64> = matrix
        .cells
        .iter()
        .flatten()
        .flatten()
        .map(|c| c.value)
        .filter(|v| v.is_finite())
        .collect();
    if values.is_empty() {
        return Err(ReportError::Empty("heatmap needs at least one value".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let row_label_px = matrix
        .row_labels
        .iter()
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0) as f64
        * CHAR_W
        + 16.0;
    let top = 56.0;
    let left = row_label_px.max(60.0);
    let width = left + matrix.col_labels.len() as f64 * CELL_W + 16.0;
    let height = top + matrix.row_labels.len() as f64 * CELL_H + 40.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{left:.1}\" y=\"20\" font-size=\"14\" font-weight=\"bold\">{} [{}]</text>\n",
        xml_escape(&matrix.title),
        xml_escape(&matrix.unit)
    ));
    for (j, label) in matrix.col_labels.iter().enumerate() {
        let x = left + j as f64 * CELL_W + CELL_W / 2.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            top - 8.0,
            xml_escape(label)
        ));
    }
    for (i, label) in matrix.row_labels.iter().enumerate() {
        let y = top + i as f64 * CELL_H + CELL_H / 2.0 + 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{}</text>\n",
            left - 8.0,
            xml_escape(label)
        ));
    }
    for (i, row) in matrix.cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let x = left + j as f64 * CELL_W;
            let y = top + i as f64 * CELL_H;
            match cell {
                Some(c) => {
                    let t = if hi > lo { (c.value - lo) / (hi - lo) } else { 0.5 };
                    let fill = scale.at(t);
                    // Dark cells get light text.
                    let text_fill = if t > 0.6 { "#ffffff" } else { "#000000" };
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL_W:.1}\" \
                         height=\"{CELL_H:.1}\" fill=\"{fill}\" stroke=\"#888888\">"
                    ));
                    if let Some(note) = &c.annotation {
                        svg.push_str(&format!("<title>{}</title>", xml_escape(note)));
                    }
                    svg.push_str("</rect>\n");
                    svg.push_str(&format!(
                        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
                         fill=\"{text_fill}\">{}</text>\n",
                        x + CELL_W / 2.0,
                        y + CELL_H / 2.0 + 4.0,
                        fmt_value(c.value)
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL_W:.1}\" \
                         height=\"{CELL_H:.1}\" fill=\"#eeeeee\" stroke=\"#888888\"/>\n"
                    ));
                    svg.push_str(&format!(
                        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
                         fill=\"#999999\">n/a</text>\n",
                        x + CELL_W / 2.0,
                        y + CELL_H / 2.0 + 4.0,
                    ));
                }
            }
        }
    }
    svg.push_str(&format!(
        "<text x=\"{left:.1}\" y=\"{:.1}\" fill=\"#555555\">scale: {} = {} .. {} = {}</text>\n",
        height - 16.0,
        fmt_value(lo),
        scale.at(0.0),
        fmt_value(hi),
        scale.at(1.0)
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Linear,
    /// Equal pixel spacing per doubling of x. Every x must be positive.
    Log2,
}

const LINE_PALETTE: [&str; 6] =
    ["#4682b4", "#b44682", "#46b482", "#b48246", "#8246b4", "#82b446"];

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const PLOT_LEFT: f64 = 72.0;
const PLOT_TOP: f64 = 48.0;

/// Render line series with optional dashed vertical markers (in x data
/// units). Deterministic for the same inputs.
pub fn render_lines(
    title: &str,
    series: &[Series],
    axis: XAxis,
    markers: &[f64],
) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::Empty("no series to plot".into()));
    }
    for s in series {
        if s.points.len() < 2 {
            return Err(ReportError::Empty(format!(
                "series {} needs at least two points",
                s.label
            )));
        }
        if let XAxis::Log2 = axis {
            if s.points.iter().any(|(x, _)| *x <= 0.0) {
                return Err(ReportError::Shape(format!(
                    "series {} has a non-positive x on a log axis",
                    s.label
                )));
            }
        }
    }
    let tx = |x: f64| -> f64 {
        match axis {
            XAxis::Linear => x,
            XAxis::Log2 => x.log2(),
        }
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let x_lo = all.iter().map(|(x, _)| tx(*x)).fold(f64::INFINITY, f64::min);
    let x_hi = all.iter().map(|(x, _)| tx(*x)).fold(f64::NEG_INFINITY, f64::max);
    let y_lo = all.iter().map(|(_, y)| *y).fold(f64::INFINITY, f64::min);
    let y_hi = all.iter().map(|(_, y)| *y).fold(f64::NEG_INFINITY, f64::max);

    let px = |x: f64| -> f64 {
        let t = if x_hi > x_lo { (tx(x) - x_lo) / (x_hi - x_lo) } else { 0.5 };
        PLOT_LEFT + t * PLOT_W
    };
    let py = |y: f64| -> f64 {
        let t = if y_hi > y_lo { (y - y_lo) / (y_hi - y_lo) } else { 0.5 };
        PLOT_TOP + (1.0 - t) * PLOT_H
    };

    let width = PLOT_LEFT + PLOT_W + 32.0;
    let height = PLOT_TOP + PLOT_H + 64.0 + 18.0 * series.len() as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{PLOT_LEFT:.1}\" y=\"24\" font-size=\"14\" font-weight=\"bold\">{}</text>\n",
        xml_escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{PLOT_LEFT:.1}\" y=\"{PLOT_TOP:.1}\" width=\"{PLOT_W:.1}\" \
         height=\"{PLOT_H:.1}\" fill=\"none\" stroke=\"#444444\"/>\n"
    ));
    // Corner tick labels carry the data range.
    let x_axis_note = match axis {
        XAxis::Linear => "",
        XAxis::Log2 => " (log2)",
    };
    svg.push_str(&format!(
        "<text x=\"{PLOT_LEFT:.1}\" y=\"{:.1}\">{}{x_axis_note}</text>\n",
        PLOT_TOP + PLOT_H + 18.0,
        fmt_value(all.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min))
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}{x_axis_note}</text>\n",
        PLOT_LEFT + PLOT_W,
        PLOT_TOP + PLOT_H + 18.0,
        fmt_value(all.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max))
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        PLOT_LEFT - 6.0,
        PLOT_TOP + 12.0,
        fmt_value(y_hi)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        PLOT_LEFT - 6.0,
        PLOT_TOP + PLOT_H,
        fmt_value(y_lo)
    ));
    for m in markers {
        if let XAxis::Log2 = axis {
            if *m <= 0.0 {
                continue;
            }
        }
        let x = px(*m);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{PLOT_TOP:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" \
             stroke=\"#777777\" stroke-dasharray=\"5,4\"/>\n",
            PLOT_TOP + PLOT_H
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.1}\" fill=\"#777777\">{}</text>\n",
            x + 4.0,
            PLOT_TOP + 14.0,
            fmt_value(*m)
        ));
    }
    for (k, s) in series.iter().enumerate() {
        let color = LINE_PALETTE[k % LINE_PALETTE.len()];
        let points: Vec<String> =
            s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
        for (x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                px(*x),
                py(*y)
            ));
        }
        let ly = PLOT_TOP + PLOT_H + 40.0 + 18.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{PLOT_LEFT:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            ly - 4.0,
            PLOT_LEFT + 24.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>\n",
            PLOT_LEFT + 32.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{PlacementPolicy, Realization};
    use crate::clock::ClockInfo;
    use crate::harness::{IterationRecord, KernelKind, PlacementReport};
    use crate::topo::{bounds_matrix, parse_topology, MemOp, QUAD_GH200};

    fn sample_record(id: &str, hash: Option<&str>) -> MeasurementRecord {
        MeasurementRecord {
            case_id: id.to_string(),
            kernel: KernelKind::Read,
            iterations: vec![
                IterationRecord {
                    elapsed_ns: 2_000_000,
                    warmup: true,
                    accesses: None,
                    exchange_span_ns: None,
                },
                IterationRecord {
                    elapsed_ns: 1_000_000,
                    warmup: false,
                    accesses: None,
                    exchange_span_ns: None,
                },
                IterationRecord {
                    elapsed_ns: 1_100_000,
                    warmup: false,
                    accesses: None,
                    exchange_span_ns: None,
                },
            ],
            bytes_per_iteration: 1 << 20,
            buffer_bytes: 1 << 20,
            derived_value: 0.9985,
            unit: "GB/s".to_string(),
            worker_count: 2,
            core_ids: vec![0, 1],
            pinned: true,
            placements: vec![
                PlacementReport {
                    role: "buffer".to_string(),
                    policy: PlacementPolicy::ExplicitNode(0),
                    realized: Realization::Nodes(vec![0]),
                    degraded: false,
                },
                PlacementReport {
                    role: "noise".to_string(),
                    policy: PlacementPolicy::Interleave(vec![0, 1]),
                    realized: Realization::Unverified,
                    degraded: true,
                },
            ],
            clock: ClockInfo {
                source: "monotonic".to_string(),
                resolution_ns: 1,
                frequency_hz: 1_000_000_000,
            },
            topology_hash: hash.map(str::to_string),
            start_skew_ns: 1200,
            timestamp: "2024-11-02T10:20:30.000000Z".to_string(),
            toolkit_version: "0.1.0".to_string(),
        }
    }

    #[test]
    fn matrix_rejects_ragged_cells() {
        let cell = || Some(Cell { value: 1.0, annotation: None });
        let err = Matrix::new(
            "t",
            vec!["r0".into(), "r1".into()],
            vec!["c0".into()],
            "u",
            vec![vec![cell()]],
        );
        assert!(matches!(err, Err(ReportError::Shape(_))));
        let err = Matrix::new(
            "t",
            vec!["r0".into()],
            vec!["c0".into(), "c1".into()],
            "u",
            vec![vec![cell()]],
        );
        assert!(matches!(err, Err(ReportError::Shape(_))));
        let ok = Matrix::new(
            "t",
            vec!["r0".into()],
            vec!["c0".into(), "c1".into()],
            "u",
            vec![vec![cell(), None]],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn bounds_matrix_converts_with_annotations() {
        let topo = parse_topology(QUAD_GH200).unwrap();
        let bounds = bounds_matrix(&topo, MemOp::Read, "hopper-0").unwrap();
        let matrix = matrix_from_bounds(&bounds);
        assert_eq!(matrix.unit, "GB/s");
        assert_eq!(matrix.row_labels, bounds.row_labels);
        assert_eq!(matrix.col_labels, bounds.col_labels);
        let j = matrix.col_labels.iter().position(|c| c == "hbm-0").unwrap();
        let cell = matrix.cells[0][j].as_ref().unwrap();
        assert_eq!(cell.value, 4000.0);
        assert_eq!(cell.annotation.as_deref(), Some("limit: hbm-0"));
    }

    #[test]
    fn csv_flattens_one_row_per_iteration() {
        let rows = records_to_csv_rows(&[sample_record("a", Some("deadbeef"))]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].iter_index, 0);
        assert!(rows[0].warmup_flag);
        assert_eq!(rows[1].iter_index, 1);
        assert!(!rows[1].warmup_flag);
        assert_eq!(rows[0].cores, "0|1");
        assert_eq!(
            rows[0].placements,
            "buffer=node0:nodes[0];noise=interleave[0,1]:unverified:degraded"
        );
        assert_eq!(rows[0].topo_hash, "deadbeef");
        assert_eq!(rows[0].kernel, "read");
    }

    #[test]
    fn csv_header_and_roundtrip_are_byte_stable() {
        let records = [sample_record("a", Some("deadbeef")), sample_record("b", None)];
        let first = export_csv(&records).unwrap();
        let header = first.lines().next().unwrap();
        assert_eq!(
            header,
            "case_id,kernel,cores,placements,bytes,iter_index,warmup_flag,elapsed_ns,\
             derived_value,unit,topo_hash,timestamp"
        );
        let parsed = parse_csv(&first).unwrap();
        assert_eq!(parsed.len(), 6);
        let second = rows_to_csv(&parsed).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_csv("not,a,real\nheader,at,all\n").is_err());
    }

    #[test]
    fn empty_export_is_header_only() {
        let csv = export_csv(&[]).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("case_id,kernel,"));
        assert!(parse_csv(&csv).unwrap().is_empty());
        assert_eq!(export_records(&[], ExportFormat::JsonLines).unwrap(), "");
    }

    #[test]
    fn matrix_rejects_duplicate_labels() {
        let cell = || Some(Cell { value: 1.0, annotation: None });
        let err = Matrix::new(
            "t",
            vec!["r".into(), "r".into()],
            vec!["c".into()],
            "u",
            vec![vec![cell()], vec![cell()]],
        );
        assert!(matches!(err, Err(ReportError::Shape(_))));
        let err = Matrix::new(
            "t",
            vec!["r".into()],
            vec!["c".into(), "c".into()],
            "u",
            vec![vec![cell(), cell()]],
        );
        assert!(matches!(err, Err(ReportError::Shape(_))));
    }

    #[test]
    fn jsonl_roundtrip_is_byte_stable() {
        let records = vec![sample_record("a", Some("deadbeef")), sample_record("b", None)];
        let first = export_jsonl(&records).unwrap();
        assert_eq!(first.lines().count(), 2);
        let parsed = parse_jsonl(&first).unwrap();
        assert_eq!(parsed, records);
        let second = export_jsonl(&parsed).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn jsonl_skips_blank_lines_and_rejects_garbage() {
        let records = vec![sample_record("a", None)];
        let text = format!("\n{}\n\n", export_jsonl(&records).unwrap());
        assert_eq!(parse_jsonl(&text).unwrap().len(), 1);
        assert!(parse_jsonl("{\"nope\": true}\n").is_err());
    }

    #[test]
    fn xml_escape_covers_the_specials() {
        assert_eq!(xml_escape("a<b&c>\"d'"), "a&lt;b&amp;c&gt;&quot;d&apos;");
        assert_eq!(xml_escape("plain"), "plain");
    }

    fn two_by_two() -> Matrix {
        Matrix::new(
            "t & co",
            vec!["r0".into(), "r1".into()],
            vec!["c0".into(), "c1".into()],
            "GB/s",
            vec![
                vec![
                    Some(Cell { value: 100.0, annotation: Some("limit: m<0>".into()) }),
                    Some(Cell { value: 450.0, annotation: None }),
                ],
                vec![None, Some(Cell { value: 4000.0, annotation: None })],
            ],
        )
        .unwrap()
    }

    #[test]
    fn heatmap_is_deterministic_and_escaped() {
        let m = two_by_two();
        let scale = ColorScale::default();
        let a = render_heatmap(&m, &scale).unwrap();
        let b = render_heatmap(&m, &scale).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("t &amp; co"));
        assert!(a.contains("limit: m&lt;0&gt;"));
        assert!(a.contains("n/a"));
        // Min maps to the low color, max to the high color.
        assert!(a.contains("fill=\"#ffffff\""));
        assert!(a.contains("fill=\"#4682b4\""));
        assert_eq!(a.matches("<rect").count(), 4);
    }

    #[test]
    fn heatmap_needs_values() {
        let empty = Matrix::new(
            "t",
            vec!["r".into()],
            vec!["c".into()],
            "u",
            vec![vec![None]],
        )
        .unwrap();
        assert!(matches!(
            render_heatmap(&empty, &ColorScale::default()),
            Err(ReportError::Empty(_))
        ));
    }

    #[test]
    fn color_scale_endpoints_and_midpoint() {
        let scale = ColorScale { low: (0, 0, 0), high: (200, 100, 50) };
        assert_eq!(scale.at(0.0), "#000000");
        assert_eq!(scale.at(1.0), "#c86432");
        assert_eq!(scale.at(0.5), "#643219");
    }

    fn polyline_xs(svg: &str) -> Vec<f64> {
        let start = svg.find("<polyline points=\"").unwrap() + "<polyline points=\"".len();
        let end = svg[start..].find('"').unwrap() + start;
        svg[start..end]
            .split(' ')
            .map(|pair| pair.split(',').next().unwrap().parse::<f64>().unwrap())
            .collect()
    }

    #[test]
    fn log2_axis_spaces_doublings_evenly() {
        let series = [Series {
            label: "lat".into(),
            points: vec![(1024.0, 1.0), (2048.0, 2.0), (4096.0, 4.0), (8192.0, 3.0)],
        }];
        let svg = render_lines("latency", &series, XAxis::Log2, &[]).unwrap();
        let xs = polyline_xs(&svg);
        assert_eq!(xs.len(), 4);
        let gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        for g in &gaps {
            assert!((g - gaps[0]).abs() < 0.05, "uneven gaps {gaps:?}");
        }
    }

    #[test]
    fn linear_axis_spaces_by_value() {
        let series = [Series {
            label: "bw".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (3.0, 4.0)],
        }];
        let svg = render_lines("bw", &series, XAxis::Linear, &[]).unwrap();
        let xs = polyline_xs(&svg);
        let g1 = xs[1] - xs[0];
        let g2 = xs[2] - xs[1];
        assert!((g2 - 2.0 * g1).abs() < 0.05, "expected 1:2 spacing, got {g1} vs {g2}");
    }

    #[test]
    fn markers_draw_dashed_lines() {
        let series = [Series { label: "s".into(), points: vec![(1.0, 1.0), (16.0, 2.0)] }];
        let svg =
            render_lines("marks", &series, XAxis::Log2, &[2.0, 8.0]).unwrap();
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        let svg2 = render_lines("marks", &series, XAxis::Log2, &[2.0, 8.0]).unwrap();
        assert_eq!(svg, svg2);
    }

    #[test]
    fn lines_reject_empty_and_nonpositive_log_x() {
        assert!(matches!(
            render_lines("t", &[], XAxis::Linear, &[]),
            Err(ReportError::Empty(_))
        ));
        let single_point = [Series { label: "s".into(), points: vec![(1.0, 1.0)] }];
        assert!(matches!(
            render_lines("t", &single_point, XAxis::Linear, &[]),
            Err(ReportError::Empty(_))
        ));
        let bad_log = [Series { label: "s".into(), points: vec![(0.0, 1.0), (2.0, 2.0)] }];
        assert!(matches!(
            render_lines("t", &bad_log, XAxis::Log2, &[]),
            Err(ReportError::Shape(_))
        ));
    }

    #[test]
    fn legend_lists_every_series() {
        let series = [
            Series { label: "alpha".into(), points: vec![(1.0, 1.0), (2.0, 2.0)] },
            Series { label: "beta & co".into(), points: vec![(1.0, 3.0), (2.0, 1.0)] },
        ];
        let svg = render_lines("legend", &series, XAxis::Linear, &[]).unwrap();
        assert!(svg.contains(">alpha</text>"));
        assert!(svg.contains(">beta &amp; co</text>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
