//! Machine topology model and datapath bound computation.
//!
//! A topology is a bipartite-ish device graph: processing units (CPU
//! complexes, accelerator dies) and memory domains (DDR stacks, HBM stacks)
//! joined by point-to-point links. Memory domains attach implicitly to the
//! processing units of their own socket with matching kind affinity
//! (ddr-like serves cpu-like, hbm-like serves accelerator-like), so a file
//! only has to declare the inter-device links:
//!
//! ```text
//!   ddr-0 ═ grace-0 ──c2c-0── hopper-0 ═ hbm-0
//!              │                  │
//!            gi-0-1            nvl-0-1
//!              │                  │
//!   ddr-1 ═ grace-1 ──c2c-1── hopper-1 ═ hbm-1
//! ```
//!
//! `═` edges above are the implicit attachments; they cost zero hops.
//! Links are duplex: the two directions of one link are independent
//! resources and do not contend with each other. A memory domain's
//! bandwidth is a single resource shared by reads and writes.
//!
//! Bounds follow from resource counting. A read moves the payload across
//! the source memory once and across each hop of the datapath once; a write
//! is the same with hop directions flipped; a copy is the sum of both. The
//! bound is the minimum over touched resources of capacity divided by touch
//! count. All arithmetic is exact rational, so equal bounds compare equal.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Reference topology: four superchip sockets, each a CPU die plus an
/// accelerator die with their own memory stacks.
pub const QUAD_GH200: &str = include_str!("../topologies/quad_gh200.json");

/// Bandwidth in GB/s (decimal), kept as an exact rational.
///
/// JSON carries bandwidths as numbers; every f64 is a dyadic rational, so
/// the conversion in is exact. Serialization back to f64 is exact for any
/// value that came from JSON.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Gbps(pub BigRational);

impl Gbps {
    pub fn from_u64(v: u64) -> Self {
        Gbps(BigRational::from_integer(BigInt::from(v)))
    }

    /// Exact conversion; fails on NaN and infinities.
    pub fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v).map(Gbps)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    /// capacity / count, exact.
    fn per_use(&self, count: u32) -> Gbps {
        Gbps(&self.0 / BigRational::from_integer(BigInt::from(count)))
    }
}

impl fmt::Display for Gbps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for Gbps {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Gbps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Gbps::from_f64(v).ok_or_else(|| D::Error::custom("bandwidth must be a finite number"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PuKind {
    CpuLike,
    AcceleratorLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemKind {
    DdrLike,
    HbmLike,
}

/// One level of the cache hierarchy of a processing unit. `shared` means
/// shared across the whole unit rather than per core.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLevel {
    pub level: u32,
    pub size: u64,
    pub shared: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessingUnit {
    pub id: String,
    pub kind: PuKind,
    pub socket: usize,
    pub core_count: usize,
    #[serde(default)]
    pub caches: Vec<CacheLevel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryDomain {
    pub id: String,
    pub kind: MemKind,
    pub socket: usize,
    /// OS NUMA node this domain shows up as.
    pub numa_node: u32,
    /// Bytes.
    pub capacity: u64,
    /// GB/s, shared between reads and writes.
    pub bandwidth: Gbps,
}

/// A link endpoint. Sockets act as ports: a socket endpoint is reachable
/// from every processing unit on that socket at zero hop cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Pu(String),
    Memory(String),
    Socket(usize),
}

impl NodeRef {
    fn label(&self) -> String {
        match self {
            NodeRef::Pu(id) => id.clone(),
            NodeRef::Memory(id) => id.clone(),
            NodeRef::Socket(s) => format!("socket-{s}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: String,
    pub endpoint_a: NodeRef,
    pub endpoint_b: NodeRef,
    /// GB/s each way; the two directions are independent resources.
    pub bandwidth_per_direction: Gbps,
    /// Which initiator kinds may route over this link.
    pub allowed_initiators: Vec<PuKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub name: String,
    /// Bytes; must be a power of two.
    pub page_size: u64,
    /// Free-text notes for values the vendor does not publish.
    #[serde(default)]
    pub assumptions: Vec<String>,
    pub pus: Vec<ProcessingUnit>,
    pub memories: Vec<MemoryDomain>,
    pub links: Vec<Link>,
}

#[derive(Debug)]
pub enum TopoError {
    /// JSON did not parse or did not match the schema.
    Malformed(String),
    /// Parsed fine but violates model invariants; all violations listed.
    Invalid(Vec<String>),
    UnknownPu(String),
    UnknownMemory(String),
    /// No admissible route exists for this initiator kind.
    NoPath { pu: String, memory: String },
    MissingCopyDst,
    UnexpectedDst,
}

impl fmt::Display for TopoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopoError::Malformed(e) => write!(f, "malformed topology: {e}"),
            TopoError::Invalid(v) => write!(f, "invalid topology: {}", v.join("; ")),
            TopoError::UnknownPu(id) => write!(f, "unknown processing unit: {id}"),
            TopoError::UnknownMemory(id) => write!(f, "unknown memory domain: {id}"),
            TopoError::NoPath { pu, memory } => {
                write!(f, "no admissible datapath between {pu} and {memory}")
            }
            TopoError::MissingCopyDst => write!(f, "copy bound requires a destination memory"),
            TopoError::UnexpectedDst => {
                write!(f, "destination memory only applies to the copy operation")
            }
        }
    }
}

impl std::error::Error for TopoError {}

/// Parse and validate a topology file.
pub fn parse_topology(text: &str) -> Result<TopologySpec, TopoError> {
    let spec: TopologySpec =
        serde_json::from_str(text).map_err(|e| TopoError::Malformed(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

impl TopologySpec {
    /// Check model invariants, collecting every violation.
    pub fn validate(&self) -> Result<(), TopoError> {
        let mut bad: Vec<String> = Vec::new();

        if self.pus.is_empty() {
            bad.push("topology declares no processing units".into());
        }
        if self.memories.is_empty() {
            bad.push("topology declares no memory domains".into());
        }
        if !self.page_size.is_power_of_two() {
            bad.push(format!("page_size {} is not a power of two", self.page_size));
        }

        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let all_ids = self
            .pus
            .iter()
            .map(|p| p.id.as_str())
            .chain(self.memories.iter().map(|m| m.id.as_str()))
            .chain(self.links.iter().map(|l| l.id.as_str()));
        for id in all_ids {
            if !seen.insert(id) {
                bad.push(format!("duplicate id: {id}"));
            }
        }

        for pu in &self.pus {
            if pu.core_count == 0 {
                bad.push(format!("{}: core_count must be at least 1", pu.id));
            }
            let mut caches = pu.caches.clone();
            caches.sort_by_key(|c| c.level);
            for pair in caches.windows(2) {
                if pair[0].level == pair[1].level {
                    bad.push(format!("{}: duplicate cache level {}", pu.id, pair[0].level));
                } else if pair[0].size >= pair[1].size {
                    bad.push(format!(
                        "{}: cache sizes must strictly increase with level (L{} {} >= L{} {})",
                        pu.id, pair[0].level, pair[0].size, pair[1].level, pair[1].size
                    ));
                }
            }
            for c in &pu.caches {
                if c.size == 0 {
                    bad.push(format!("{}: cache level {} has zero size", pu.id, c.level));
                }
            }
        }

        let mut numa_nodes: BTreeMap<u32, &str> = BTreeMap::new();
        for mem in &self.memories {
            if !mem.bandwidth.is_positive() {
                bad.push(format!("{}: bandwidth must be positive", mem.id));
            }
            if mem.capacity == 0 {
                bad.push(format!("{}: capacity must be positive", mem.id));
            }
            if let Some(prev) = numa_nodes.insert(mem.numa_node, &mem.id) {
                bad.push(format!(
                    "{} and {} both claim numa node {}",
                    prev, mem.id, mem.numa_node
                ));
            }
        }

        // Sockets are declared implicitly by use; the set must be 0..=max
        // with no gaps so socket indices can serve as dense array keys.
        let sockets: BTreeSet<usize> = self
            .pus
            .iter()
            .map(|p| p.socket)
            .chain(self.memories.iter().map(|m| m.socket))
            .collect();
        if let Some(&max) = sockets.iter().next_back() {
            for s in 0..=max {
                if !sockets.contains(&s) {
                    bad.push(format!("socket indices must be contiguous from 0; {s} is missing"));
                }
            }
        }

        for link in &self.links {
            if !link.bandwidth_per_direction.is_positive() {
                bad.push(format!("{}: bandwidth must be positive", link.id));
            }
            if link.endpoint_a == link.endpoint_b {
                bad.push(format!("{}: endpoints must differ", link.id));
            }
            if link.allowed_initiators.is_empty() {
                bad.push(format!("{}: allowed_initiators must not be empty", link.id));
            }
            let mut kinds = link.allowed_initiators.clone();
            kinds.sort();
            kinds.dedup();
            if kinds.len() != link.allowed_initiators.len() {
                bad.push(format!("{}: duplicate allowed_initiators entry", link.id));
            }
            for ep in [&link.endpoint_a, &link.endpoint_b] {
                match ep {
                    NodeRef::Pu(id) => {
                        if self.pu(id).is_none() {
                            bad.push(format!("{}: endpoint references unknown pu {id}", link.id));
                        }
                    }
                    NodeRef::Memory(id) => {
                        if self.memory(id).is_none() {
                            bad.push(format!(
                                "{}: endpoint references unknown memory {id}",
                                link.id
                            ));
                        }
                    }
                    NodeRef::Socket(s) => {
                        if !sockets.contains(s) {
                            bad.push(format!(
                                "{}: endpoint references undeclared socket {s}",
                                link.id
                            ));
                        }
                    }
                }
            }
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(TopoError::Invalid(bad))
        }
    }

    pub fn pu(&self, id: &str) -> Option<&ProcessingUnit> {
        self.pus.iter().find(|p| p.id == id)
    }

    pub fn memory(&self, id: &str) -> Option<&MemoryDomain> {
        self.memories.iter().find(|m| m.id == id)
    }

    pub fn memory_by_numa_node(&self, node: u32) -> Option<&MemoryDomain> {
        self.memories.iter().find(|m| m.numa_node == node)
    }

    /// Map a flat OS core id onto a processing unit. Cores number the
    /// cpu-like units in declaration order; unit k owns the next
    /// `core_count` ids after unit k-1.
    pub fn pu_for_core(&self, core: usize) -> Option<&ProcessingUnit> {
        let mut next = 0usize;
        for pu in self.pus.iter().filter(|p| p.kind == PuKind::CpuLike) {
            if core < next + pu.core_count {
                return Some(pu);
            }
            next += pu.core_count;
        }
        None
    }

    /// Processing units a memory domain attaches to: same socket, matching
    /// kind affinity.
    pub fn home_pus(&self, mem: &MemoryDomain) -> Vec<&ProcessingUnit> {
        let want = match mem.kind {
            MemKind::DdrLike => PuKind::CpuLike,
            MemKind::HbmLike => PuKind::AcceleratorLike,
        };
        self.pus
            .iter()
            .filter(|p| p.socket == mem.socket && p.kind == want)
            .collect()
    }
}

/// Payload direction across a link, named by the link's declared endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    fn flipped(self) -> Direction {
        match self {
            Direction::AToB => Direction::BToA,
            Direction::BToA => Direction::AToB,
        }
    }
}

/// One link crossing. `direction` is the payload direction for a read,
/// i.e. data flowing from the memory toward the initiator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub link: String,
    pub direction: Direction,
}

/// Resolved route between an initiator and a memory domain. Hops are
/// ordered from the memory side toward the initiator, matching read
/// payload flow. Empty means socket-local access.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Datapath {
    pub initiator: String,
    pub memory: String,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemOp {
    Read,
    Write,
    Copy,
}

impl fmt::Display for MemOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemOp::Read => write!(f, "read"),
            MemOp::Write => write!(f, "write"),
            MemOp::Copy => write!(f, "copy"),
        }
    }
}

/// Upper bound for one operation, with the resource accounting that
/// produced it. `usage_counts` keys are memory ids and directed link
/// labels of the form `link:from->to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub op: MemOp,
    pub initiator: String,
    pub src: String,
    pub dst: Option<String>,
    pub bound: Gbps,
    pub limiting_resource: String,
    pub usage_counts: BTreeMap<String, u32>,
}

/// Bounds over whole memory ranges, for rendering. Read and write give a
/// single row; copy gives one row per source domain.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsMatrix {
    pub op: MemOp,
    pub initiator: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub entries: Vec<Vec<Option<BoundResult>>>,
}

// Internal routing graph. Vertices are PUs and memories. A socket link
// endpoint is attachment sugar: the link fans out to every processing
// unit on that socket, still counting as the one link. Sockets are not
// vertices, so they never provide free transit between co-located units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Vertex {
    Pu(usize),
    Mem(usize),
}

struct Edge {
    to: Vertex,
    // None for implicit attachment edges, which cost nothing.
    link: Option<usize>,
    // Crossing this stored direction moves payload from endpoint a to b.
    a_to_b: bool,
}

struct Router<'a> {
    spec: &'a TopologySpec,
    adj: HashMap<Vertex, Vec<Edge>>,
    // Rank of each link id in lexicographic order; path comparison on rank
    // sequences matches comparison on id sequences.
    link_rank: Vec<u32>,
}

impl<'a> Router<'a> {
    fn new(spec: &'a TopologySpec) -> Self {
        let mut adj: HashMap<Vertex, Vec<Edge>> = HashMap::new();
        let mut add = |a: Vertex, b: Vertex, link: Option<usize>| {
            adj.entry(a).or_default().push(Edge { to: b, link, a_to_b: true });
            adj.entry(b).or_default().push(Edge { to: a, link, a_to_b: false });
        };

        for (mi, mem) in spec.memories.iter().enumerate() {
            for home in spec.home_pus(mem) {
                let pi = spec.pus.iter().position(|p| p.id == home.id).unwrap();
                add(Vertex::Mem(mi), Vertex::Pu(pi), None);
            }
        }
        for (li, link) in spec.links.iter().enumerate() {
            for a in Self::expand(spec, &link.endpoint_a) {
                for b in Self::expand(spec, &link.endpoint_b) {
                    add(a, b, Some(li));
                }
            }
        }

        let mut ids: Vec<&str> = spec.links.iter().map(|l| l.id.as_str()).collect();
        ids.sort_unstable();
        let link_rank = spec
            .links
            .iter()
            .map(|l| ids.binary_search(&l.id.as_str()).unwrap() as u32)
            .collect();

        Router { spec, adj, link_rank }
    }

    fn expand(spec: &TopologySpec, nr: &NodeRef) -> Vec<Vertex> {
        match nr {
            NodeRef::Pu(id) => {
                vec![Vertex::Pu(spec.pus.iter().position(|p| &p.id == id).unwrap())]
            }
            NodeRef::Memory(id) => {
                vec![Vertex::Mem(spec.memories.iter().position(|m| &m.id == id).unwrap())]
            }
            NodeRef::Socket(s) => spec
                .pus
                .iter()
                .enumerate()
                .filter(|(_, p)| p.socket == *s)
                .map(|(i, _)| Vertex::Pu(i))
                .collect(),
        }
    }

    /// Shortest admissible route from `mem` to `pu`: fewest link hops,
    /// ties broken by lexicographically least link id sequence.
    fn route(&self, pu_idx: usize, mem_idx: usize) -> Option<Vec<(usize, Direction)>> {
        let kind = self.spec.pus[pu_idx].kind;
        let start = Vertex::Mem(mem_idx);
        let goal = Vertex::Pu(pu_idx);

        type Key = (u32, Vec<u32>);
        let mut best: HashMap<Vertex, Key> = HashMap::new();
        let mut parent: HashMap<Vertex, (Vertex, Option<(usize, Direction)>)> = HashMap::new();
        let mut heap: BinaryHeap<Reverse<(Key, Vertex)>> = BinaryHeap::new();

        best.insert(start, (0, Vec::new()));
        heap.push(Reverse(((0, Vec::new()), start)));

        while let Some(Reverse((key, v))) = heap.pop() {
            if best.get(&v) != Some(&key) {
                continue; // stale entry
            }
            if v == goal {
                break;
            }
            for edge in self.adj.get(&v).into_iter().flatten() {
                let next_key: Key;
                let step: Option<(usize, Direction)>;
                match edge.link {
                    None => {
                        next_key = key.clone();
                        step = None;
                    }
                    Some(li) => {
                        let link = &self.spec.links[li];
                        if !link.allowed_initiators.contains(&kind) {
                            continue;
                        }
                        let mut seq = key.1.clone();
                        seq.push(self.link_rank[li]);
                        next_key = (key.0 + 1, seq);
                        // Payload flows v -> edge.to here.
                        let dir =
                            if edge.a_to_b { Direction::AToB } else { Direction::BToA };
                        step = Some((li, dir));
                    }
                }
                let better = match best.get(&edge.to) {
                    None => true,
                    Some(cur) => next_key < *cur,
                };
                if better {
                    best.insert(edge.to, next_key.clone());
                    parent.insert(edge.to, (v, step));
                    heap.push(Reverse((next_key, edge.to)));
                }
            }
        }

        best.get(&goal)?;
        let mut hops = Vec::new();
        let mut v = goal;
        while v != start {
            let (prev, step) = parent[&v];
            if let Some(s) = step {
                hops.push(s);
            }
            v = prev;
        }
        hops.reverse();
        Some(hops)
    }
}

/// Resolve the route an access from `pu_id` to `mem_id` takes.
pub fn resolve_datapath(
    spec: &TopologySpec,
    pu_id: &str,
    mem_id: &str,
) -> Result<Datapath, TopoError> {
    let pu_idx = spec
        .pus
        .iter()
        .position(|p| p.id == pu_id)
        .ok_or_else(|| TopoError::UnknownPu(pu_id.to_string()))?;
    let mem_idx = spec
        .memories
        .iter()
        .position(|m| m.id == mem_id)
        .ok_or_else(|| TopoError::UnknownMemory(mem_id.to_string()))?;

    let router = Router::new(spec);
    let hops = router.route(pu_idx, mem_idx).ok_or_else(|| TopoError::NoPath {
        pu: pu_id.to_string(),
        memory: mem_id.to_string(),
    })?;

    Ok(Datapath {
        initiator: pu_id.to_string(),
        memory: mem_id.to_string(),
        hops: hops
            .into_iter()
            .map(|(li, dir)| Hop { link: spec.links[li].id.clone(), direction: dir })
            .collect(),
    })
}

fn directed_label(spec: &TopologySpec, link_id: &str, dir: Direction) -> String {
    let link = spec.links.iter().find(|l| l.id == link_id).unwrap();
    let (from, to) = match dir {
        Direction::AToB => (link.endpoint_a.label(), link.endpoint_b.label()),
        Direction::BToA => (link.endpoint_b.label(), link.endpoint_a.label()),
    };
    format!("{link_id}:{from}->{to}")
}

fn add_usage(counts: &mut BTreeMap<String, u32>, key: String) {
    *counts.entry(key).or_insert(0) += 1;
}

/// Count the resources one payload traversal touches. Reads move data
/// toward the initiator (path directions as resolved); writes move it away
/// (directions flipped). Either way the memory itself is touched once.
fn account_transfer(
    spec: &TopologySpec,
    counts: &mut BTreeMap<String, u32>,
    path: &Datapath,
    toward_initiator: bool,
) {
    add_usage(counts, path.memory.clone());
    for hop in &path.hops {
        let dir = if toward_initiator { hop.direction } else { hop.direction.flipped() };
        add_usage(counts, directed_label(spec, &hop.link, dir));
    }
}

fn resource_capacity(spec: &TopologySpec, resource: &str) -> Gbps {
    if let Some(mem) = spec.memory(resource) {
        return mem.bandwidth.clone();
    }
    let link_id = resource.split(':').next().unwrap();
    spec.links
        .iter()
        .find(|l| l.id == link_id)
        .map(|l| l.bandwidth_per_direction.clone())
        .expect("usage key refers to a known resource")
}

/// Best achievable steady-state throughput for `op`, as limited by the
/// busiest resource on the datapath.
pub fn compute_bound(
    spec: &TopologySpec,
    op: MemOp,
    pu_id: &str,
    src: &str,
    dst: Option<&str>,
) -> Result<BoundResult, TopoError> {
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    match op {
        MemOp::Read => {
            if dst.is_some() {
                return Err(TopoError::UnexpectedDst);
            }
            let path = resolve_datapath(spec, pu_id, src)?;
            account_transfer(spec, &mut counts, &path, true);
        }
        MemOp::Write => {
            if dst.is_some() {
                return Err(TopoError::UnexpectedDst);
            }
            let path = resolve_datapath(spec, pu_id, src)?;
            account_transfer(spec, &mut counts, &path, false);
        }
        MemOp::Copy => {
            let dst = dst.ok_or(TopoError::MissingCopyDst)?;
            let read_path = resolve_datapath(spec, pu_id, src)?;
            let write_path = resolve_datapath(spec, pu_id, dst)?;
            account_transfer(spec, &mut counts, &read_path, true);
            account_transfer(spec, &mut counts, &write_path, false);
        }
    }

    // BTreeMap iteration is sorted, so ties resolve to the
    // lexicographically least resource label.
    let mut limiting: Option<(String, Gbps)> = None;
    for (resource, &count) in &counts {
        let avail = resource_capacity(spec, resource).per_use(count);
        let tighter = match &limiting {
            None => true,
            Some((_, cur)) => avail < *cur,
        };
        if tighter {
            limiting = Some((resource.clone(), avail));
        }
    }
    let (limiting_resource, bound) = limiting.expect("every operation touches a memory");

    Ok(BoundResult {
        op,
        initiator: pu_id.to_string(),
        src: src.to_string(),
        dst: match op {
            MemOp::Copy => dst.map(str::to_string),
            _ => None,
        },
        bound,
        limiting_resource,
        usage_counts: counts,
    })
}

/// Bounds for one initiator over every memory domain (and every source and
/// destination pair, for copy). Unreachable combinations come back as
/// `None`.
pub fn bounds_matrix(
    spec: &TopologySpec,
    op: MemOp,
    pu_id: &str,
) -> Result<BoundsMatrix, TopoError> {
    if spec.pu(pu_id).is_none() {
        return Err(TopoError::UnknownPu(pu_id.to_string()));
    }
    let mem_ids: Vec<String> = spec.memories.iter().map(|m| m.id.clone()).collect();

    let cell = |src: &str, dst: Option<&str>| -> Result<Option<BoundResult>, TopoError> {
        match compute_bound(spec, op, pu_id, src, dst) {
            Ok(b) => Ok(Some(b)),
            Err(TopoError::NoPath { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let (row_labels, entries) = match op {
        MemOp::Read | MemOp::Write => {
            let mut row = Vec::new();
            for m in &mem_ids {
                row.push(cell(m, None)?);
            }
            (vec![pu_id.to_string()], vec![row])
        }
        MemOp::Copy => {
            let mut rows = Vec::new();
            for src in &mem_ids {
                let mut row = Vec::new();
                for dst in &mem_ids {
                    row.push(cell(src, Some(dst))?);
                }
                rows.push(row);
            }
            (mem_ids.clone(), rows)
        }
    };

    Ok(BoundsMatrix {
        op,
        initiator: pu_id.to_string(),
        row_labels,
        col_labels: mem_ids,
        entries,
    })
}

/// Content hash of a topology, stable under reordering of the pus,
/// memories, links, caches, and assumptions lists.
pub fn topology_hash(spec: &TopologySpec) -> String {
    let mut canon = spec.clone();
    canon.pus.sort_by(|a, b| a.id.cmp(&b.id));
    for pu in &mut canon.pus {
        pu.caches.sort_by_key(|c| c.level);
    }
    canon.memories.sort_by(|a, b| a.id.cmp(&b.id));
    canon.links.sort_by(|a, b| a.id.cmp(&b.id));
    for link in &mut canon.links {
        link.allowed_initiators.sort();
    }
    canon.assumptions.sort();

    let bytes = serde_json::to_vec(&canon).expect("topology serializes");
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
