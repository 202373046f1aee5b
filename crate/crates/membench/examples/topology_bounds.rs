//! Model a machine and print its datapath bound matrices.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --example topology_bounds
//! cargo run --example topology_bounds -- path/to/topology.json
//! ```
//!
//! Without an argument the bundled quad-superchip reference machine is
//! used. For every CPU-like and accelerator-like unit the example prints
//! the read bound row, then the full copy matrix for the first
//! accelerator.

use membench::report::{matrix_from_bounds, Cell, Matrix};
use membench::topo::{bounds_matrix, parse_topology, topology_hash, MemOp, QUAD_GH200};

fn print_matrix(m: &Matrix) {
    let cell = |c: &Option<Cell>| match c {
        Some(c) if c.value.fract() == 0.0 => format!("{:.0}", c.value),
        Some(c) => format!("{:.1}", c.value),
        None => "n/a".to_string(),
    };
    let row_w = m.row_labels.iter().map(String::len).max().unwrap_or(0);
    let mut col_w: Vec<usize> = m.col_labels.iter().map(String::len).collect();
    for row in &m.cells {
        for (j, c) in row.iter().enumerate() {
            col_w[j] = col_w[j].max(cell(c).len());
        }
    }
    println!("{} [{}]", m.title, m.unit);
    print!("{:row_w$}", "");
    for (j, l) in m.col_labels.iter().enumerate() {
        print!("  {:>w$}", l, w = col_w[j]);
    }
    println!();
    for (i, row) in m.cells.iter().enumerate() {
        print!("{:row_w$}", m.row_labels[i]);
        for (j, c) in row.iter().enumerate() {
            print!("  {:>w$}", cell(c), w = col_w[j]);
        }
        println!();
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => QUAD_GH200.to_string(),
    };
    let spec = parse_topology(&text)?;
    println!("{}: {} units, {} memories, {} links", spec.name, spec.pus.len(),
        spec.memories.len(), spec.links.len());
    println!("hash {}", topology_hash(&spec));
    for a in &spec.assumptions {
        println!("assumption: {a}");
    }
    println!();

    for pu in &spec.pus {
        let bounds = bounds_matrix(&spec, MemOp::Read, &pu.id)?;
        print_matrix(&matrix_from_bounds(&bounds));
        println!();
    }

    if let Some(acc) = spec.pus.iter().find(|p| p.core_count == 1) {
        let bounds = bounds_matrix(&spec, MemOp::Copy, &acc.id)?;
        print_matrix(&matrix_from_bounds(&bounds));
        println!();
        // the accounting behind one interesting cell
        if let Some(b) = bounds.entries[0][0].as_ref() {
            println!("copy {} -> {} from {}: limited by {}", b.src,
                b.dst.as_deref().unwrap_or("?"), b.initiator, b.limiting_resource);
            for (resource, count) in &b.usage_counts {
                println!("  {resource} x{count}");
            }
        }
    }
    Ok(())
}
