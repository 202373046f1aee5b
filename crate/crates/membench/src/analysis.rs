//! Turning records into judgments: iteration statistics, achieved
//! throughput as a fraction of the modeled bound, and cache-edge
//! detection on latency curves.
//!
//! Fractions are computed in exact rational arithmetic and rounded to
//! f64 once at the end. A fraction above 1 is reported as-is: either the
//! working set fit in a cache, or the model is wrong for this host, and
//! both are worth seeing.

use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::alloc::{PlacementPolicy, Realization};
use crate::harness::{KernelKind, MeasurementRecord, PlacementReport};
use crate::topo::{compute_bound, Gbps, MemOp, TopoError, TopologySpec};

/// Location and spread of the non-warmup iteration spans.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stdev: f64,
    pub unit: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionEntry {
    pub record_id: String,
    pub achieved_gbps: f64,
    pub bound_gbps: f64,
    /// achieved/bound, rounded once from the exact ratio. Values above 1
    /// signal cache residency or a model mismatch.
    pub fraction: f64,
}

#[derive(Debug)]
pub enum AnalysisError {
    EmptyRecord(String),
    /// Kernel has no throughput semantics (chase, ping-pong).
    NotThroughput(String),
    UnknownCore { record_id: String, core: usize },
    MixedInitiators(String),
    MissingPlacement { record_id: String, role: &'static str },
    DegradedPlacement { record_id: String, role: String },
    UnverifiablePlacement { record_id: String, role: String },
    SpreadPlacement { record_id: String, role: String, nodes: Vec<u32> },
    NoMemoryForNode { record_id: String, node: u32 },
    NonPositiveAchieved { record_id: String, value: f64 },
    Topo(TopoError),
    TooFewSamples { have: usize, need: usize },
    UnsortedSizes { index: usize },
    BadSample { index: usize, value: f64 },
    BadWindow,
    BadDelta(f64),
}

impl std::fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalysisError::EmptyRecord(id) => {
                write!(f, "record {id} has no non-warmup iterations")
            }
            AnalysisError::NotThroughput(id) => {
                write!(f, "record {id} is not a throughput measurement")
            }
            AnalysisError::UnknownCore { record_id, core } => {
                write!(f, "record {record_id}: core {core} maps to no processing unit")
            }
            AnalysisError::MixedInitiators(id) => {
                write!(f, "record {id}: cores span multiple processing units")
            }
            AnalysisError::MissingPlacement { record_id, role } => {
                write!(f, "record {record_id}: no \"{role}\" placement")
            }
            AnalysisError::DegradedPlacement { record_id, role } => {
                write!(f, "record {record_id}: {role} placement was degraded")
            }
            AnalysisError::UnverifiablePlacement { record_id, role } => {
                write!(f, "record {record_id}: {role} placement landed on unknown nodes")
            }
            AnalysisError::SpreadPlacement { record_id, role, nodes } => {
                write!(f, "record {record_id}: {role} spans nodes {nodes:?}, not one domain")
            }
            AnalysisError::NoMemoryForNode { record_id, node } => {
                write!(f, "record {record_id}: no memory domain has numa node {node}")
            }
            AnalysisError::NonPositiveAchieved { record_id, value } => {
                write!(f, "record {record_id}: achieved value {value} is not positive")
            }
            AnalysisError::Topo(e) => write!(f, "{e}"),
            AnalysisError::TooFewSamples { have, need } => {
                write!(f, "need at least {need} samples, got {have}")
            }
            AnalysisError::UnsortedSizes { index } => {
                write!(f, "sample sizes must be strictly increasing (violated at index {index})")
            }
            AnalysisError::BadSample { index, value } => {
                write!(f, "sample {index} has non-usable latency {value}")
            }
            AnalysisError::BadWindow => write!(f, "median window must be at least 1"),
            AnalysisError::BadDelta(d) => write!(f, "threshold must be non-negative, got {d}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<TopoError> for AnalysisError {
    fn from(e: TopoError) -> Self {
        AnalysisError::Topo(e)
    }
}

/// Statistics over the non-warmup iteration spans, in ns. Sorting before
/// accumulation makes the result bit-identical under any iteration
/// permutation.
pub fn summarize(record: &MeasurementRecord) -> Result<Stats, AnalysisError> {
    let mut spans: Vec<u64> = record
        .iterations
        .iter()
        .filter(|i| !i.warmup)
        .map(|i| i.elapsed_ns)
        .collect();
    if spans.is_empty() {
        return Err(AnalysisError::EmptyRecord(record.case_id.clone()));
    }
    spans.sort_unstable();
    let n = spans.len();
    let sum: u64 = spans.iter().sum();
    let mean = sum as f64 / n as f64;
    let mut var_acc = 0.0f64;
    for s in &spans {
        let d = *s as f64 - mean;
        var_acc += d * d;
    }
    Ok(Stats {
        mean,
        min: spans[0] as f64,
        max: spans[n - 1] as f64,
        stdev: (var_acc / n as f64).sqrt(),
        unit: "ns".to_string(),
        count: n,
    })
}

/// Exact achieved/bound ratio. `None` when the achieved value is not a
/// finite positive number.
pub fn fraction_ratio(achieved_gbps: f64, bound: &Gbps) -> Option<BigRational> {
    if !achieved_gbps.is_finite() || achieved_gbps <= 0.0 {
        return None;
    }
    let achieved = BigRational::from_float(achieved_gbps)?;
    Some(achieved / &bound.0)
}

fn placement_node(
    record_id: &str,
    placement: &PlacementReport,
) -> Result<u32, AnalysisError> {
    if placement.degraded {
        return Err(AnalysisError::DegradedPlacement {
            record_id: record_id.to_string(),
            role: placement.role.clone(),
        });
    }
    match &placement.realized {
        Realization::Nodes(nodes) if nodes.len() == 1 => Ok(nodes[0]),
        Realization::Nodes(nodes) => Err(AnalysisError::SpreadPlacement {
            record_id: record_id.to_string(),
            role: placement.role.clone(),
            nodes: nodes.clone(),
        }),
        // Page-residency queries are best-effort; an explicit binding
        // that did not degrade is trusted at face value.
        Realization::Unverified => match &placement.policy {
            PlacementPolicy::ExplicitNode(n) => Ok(*n),
            _ => Err(AnalysisError::UnverifiablePlacement {
                record_id: record_id.to_string(),
                role: placement.role.clone(),
            }),
        },
    }
}

fn memory_for_role<'a>(
    record: &MeasurementRecord,
    spec: &'a TopologySpec,
    role: &'static str,
) -> Result<&'a str, AnalysisError> {
    let placement = record
        .placements
        .iter()
        .find(|p| p.role == role)
        .ok_or(AnalysisError::MissingPlacement { record_id: record.case_id.clone(), role })?;
    let node = placement_node(&record.case_id, placement)?;
    let mem = spec.memory_by_numa_node(node).ok_or(AnalysisError::NoMemoryForNode {
        record_id: record.case_id.clone(),
        node,
    })?;
    Ok(&mem.id)
}

/// Compare a throughput record against the modeled bound for the same
/// operation, initiator, and memory placement.
pub fn fraction_of_bound(
    record: &MeasurementRecord,
    spec: &TopologySpec,
) -> Result<FractionEntry, AnalysisError> {
    let op = match record.kernel {
        KernelKind::Read => MemOp::Read,
        KernelKind::Write => MemOp::Write,
        KernelKind::Copy => MemOp::Copy,
        KernelKind::Chase | KernelKind::PingPong => {
            return Err(AnalysisError::NotThroughput(record.case_id.clone()))
        }
    };

    let mut initiator: Option<&str> = None;
    for &core in &record.core_ids {
        let pu = spec.pu_for_core(core).ok_or(AnalysisError::UnknownCore {
            record_id: record.case_id.clone(),
            core,
        })?;
        match initiator {
            None => initiator = Some(&pu.id),
            Some(prev) if prev == pu.id => {}
            Some(_) => return Err(AnalysisError::MixedInitiators(record.case_id.clone())),
        }
    }
    let initiator =
        initiator.ok_or(AnalysisError::EmptyRecord(record.case_id.clone()))?;

    let (src, dst) = match op {
        MemOp::Read | MemOp::Write => (memory_for_role(record, spec, "buffer")?, None),
        MemOp::Copy => (
            memory_for_role(record, spec, "src")?,
            Some(memory_for_role(record, spec, "dst")?),
        ),
    };

    let bound = compute_bound(spec, op, initiator, src, dst)?;
    let achieved = record.derived_value;
    let ratio = fraction_ratio(achieved, &bound.bound).ok_or(
        AnalysisError::NonPositiveAchieved {
            record_id: record.case_id.clone(),
            value: achieved,
        },
    )?;
    Ok(FractionEntry {
        record_id: record.case_id.clone(),
        achieved_gbps: achieved,
        bound_gbps: bound.bound.to_f64(),
        fraction: ratio.to_f64().expect("finite ratio"),
    })
}

pub const DEFAULT_BREAKPOINT_DELTA: f64 = 0.3;
pub const DEFAULT_BREAKPOINT_WINDOW: usize = 2;

// Median of a window. For even windows the caller picks which of the two
// central elements wins: the side nearer its own plateau. The previous
// window takes the upper median and the next window the lower, which
// makes a clean step fire exactly one boundary instead of three.
fn window_median(values: &[f64], upper: bool) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else if upper {
        v[n / 2]
    } else {
        v[n / 2 - 1]
    }
}

/// Find sizes where a latency curve steps up: size s is a breakpoint
/// when the median over the next `window` points is at least (1+delta)
/// times the median over the previous `window` points. Sizes come back
/// ascending.
pub fn detect_breakpoints(
    samples: &[(u64, f64)],
    delta: f64,
    window: usize,
) -> Result<Vec<u64>, AnalysisError> {
    if window == 0 {
        return Err(AnalysisError::BadWindow);
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(AnalysisError::BadDelta(delta));
    }
    let need = (2 * window).max(4);
    if samples.len() < need {
        return Err(AnalysisError::TooFewSamples { have: samples.len(), need });
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].0 <= pair[0].0 {
            return Err(AnalysisError::UnsortedSizes { index: i + 1 });
        }
    }
    for (i, (_, lat)) in samples.iter().enumerate() {
        if !lat.is_finite() || *lat <= 0.0 {
            return Err(AnalysisError::BadSample { index: i, value: *lat });
        }
    }

    let values: Vec<f64> = samples.iter().map(|(_, l)| *l).collect();
    let mut breakpoints = Vec::new();
    for i in window..=(samples.len() - window) {
        let prev = window_median(&values[i - window..i], true);
        let next = window_median(&values[i..i + window], false);
        if next >= (1.0 + delta) * prev {
            breakpoints.push(samples[i].0);
        }
    }
    Ok(breakpoints)
}
