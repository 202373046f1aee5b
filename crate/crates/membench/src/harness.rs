//! Case execution: worker threads, synchronized starts, suites.
//!
//! Timing multi-worker kernels has one classic failure mode: workers that
//! start staggered overlap only partially, and the aggregate throughput
//! reads high. The harness closes that hole with a start gate. Workers
//! pin themselves, report ready, and spin until a shared start tick that
//! the control thread sets a configurable delay into the future; the
//! case's elapsed time runs from that tick to the last worker's finish.
//! A worker that reaches the gate after the tick has already passed
//! invalidates the iteration, which is retried once with four times the
//! delay before the case fails.
//!
//! The spin on the start tick uses plain clock reads by design: a sleep
//! or futex wake adds its own wakeup latency right where it matters
//! most. The ready phase, by contrast, yields politely; it is off the
//! measured path.
//!
//! Every record carries enough to be audited later: per-iteration spans
//! with warmup flags, where each buffer's pages really landed, measured
//! clock resolution, the start-skew observed, and the hash of the
//! topology the run claims to describe.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::Barrier;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alloc::{
    self, allocate, partition_bytes, pin_to_core, pinning_disabled, AllocError, BenchBuffer,
    PlacementPolicy, Realization, CACHE_LINE,
};
use crate::clock::{estimate_resolution, Clock, ClockError, ClockInfo};
use crate::kernels::{
    build_chase, kernel_chase, kernel_copy, kernel_noise, kernel_pingpong, kernel_read,
    kernel_write, ChaseBuffer, KernelError, KernelResult, PingPongRole, DEFAULT_WRITE_PATTERN,
    FLAG_PONG, FLAG_REGION_BYTES,
};
use crate::report::{Cell, Matrix};
use crate::topo::{topology_hash, TopologySpec};

pub const DEFAULT_START_DELAY_NS: u64 = 1_000_000;
pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_WARMUP: u32 = 1;
/// Pause between suite cases, letting prefetchers and write-back traffic
/// from the previous case drain.
pub const INTER_CASE_COOLDOWN: Duration = Duration::from_millis(100);
pub const DEFAULT_CHASE_DURATION_NS: u64 = 100_000_000;
pub const DEFAULT_CHASE_GRANULARITY: u64 = 200;
pub const DEFAULT_PINGPONG_ROUNDS: u64 = 1000;
/// Deadline for the first ping-pong exchange. Generous: on oversubscribed
/// hosts the partner may need several scheduler quanta to show up.
pub const DEFAULT_PINGPONG_DEADLINE_NS: u64 = 30_000_000_000;

fn default_reps() -> u32 {
    DEFAULT_REPETITIONS
}
fn default_warmup() -> u32 {
    DEFAULT_WARMUP
}
fn default_delay() -> u64 {
    DEFAULT_START_DELAY_NS
}
fn default_alignment() -> usize {
    4096
}
fn default_noise_bytes() -> usize {
    crate::kernels::DEFAULT_NOISE_BUFFER_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Read,
    Write,
    Copy,
    Chase,
    PingPong,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelKind::Read => "read",
            KernelKind::Write => "write",
            KernelKind::Copy => "copy",
            KernelKind::Chase => "chase",
            KernelKind::PingPong => "ping_pong",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferSpec {
    pub length: usize,
    #[serde(default = "BufferSpec::default_policy")]
    pub policy: PlacementPolicy,
    #[serde(default = "default_alignment")]
    pub alignment: usize,
}

impl BufferSpec {
    fn default_policy() -> PlacementPolicy {
        PlacementPolicy::Default
    }

    pub fn new(length: usize) -> Self {
        BufferSpec { length, policy: PlacementPolicy::Default, alignment: default_alignment() }
    }

    pub fn with_policy(length: usize, policy: PlacementPolicy) -> Self {
        BufferSpec { length, policy, alignment: default_alignment() }
    }
}

/// Background bandwidth hog running alongside the measured workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub cores: Vec<usize>,
    #[serde(default = "default_noise_bytes")]
    pub buffer_bytes: usize,
    #[serde(default = "BufferSpec::default_policy")]
    pub policy: PlacementPolicy,
}

/// One benchmark configuration. Which optional fields apply depends on
/// the kernel: `buffer` for read, write, chase, and the ping-pong flag
/// region; `src_buffer`/`dst_buffer` for copy; `stride_bytes` for write
/// and chase; `duration_ns`/`granularity`/`seed` for chase; `rounds` for
/// ping-pong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCase {
    pub id: String,
    pub kernel: KernelKind,
    /// One worker per listed core; the list may repeat a core.
    pub initiator_cores: Vec<usize>,
    #[serde(default)]
    pub buffer: Option<BufferSpec>,
    #[serde(default)]
    pub src_buffer: Option<BufferSpec>,
    #[serde(default)]
    pub dst_buffer: Option<BufferSpec>,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    #[serde(default = "default_warmup")]
    pub warmup: u32,
    #[serde(default)]
    pub stride_bytes: Option<usize>,
    #[serde(default)]
    pub duration_ns: Option<u64>,
    #[serde(default)]
    pub granularity: Option<u64>,
    #[serde(default)]
    pub rounds: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_delay")]
    pub start_delay_ns: u64,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

impl BenchmarkCase {
    /// Minimal case skeleton; fill in kernel-specific fields as needed.
    pub fn new(id: &str, kernel: KernelKind, cores: Vec<usize>) -> Self {
        BenchmarkCase {
            id: id.to_string(),
            kernel,
            initiator_cores: cores,
            buffer: None,
            src_buffer: None,
            dst_buffer: None,
            repetitions: default_reps(),
            warmup: default_warmup(),
            stride_bytes: None,
            duration_ns: None,
            granularity: None,
            rounds: None,
            seed: None,
            start_delay_ns: default_delay(),
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Start tick to last worker finish.
    pub elapsed_ns: u64,
    pub warmup: bool,
    /// Access count for access-metered kernels (chase, ping-pong).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accesses: Option<u64>,
    /// Ping side's first-to-last-swap span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_span_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    /// Which buffer: "buffer", "src", "dst", "flag", "noise".
    pub role: String,
    pub policy: PlacementPolicy,
    pub realized: Realization,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub case_id: String,
    pub kernel: KernelKind,
    pub iterations: Vec<IterationRecord>,
    /// Payload bytes each iteration moves; zero for access-metered
    /// kernels where the count varies by iteration.
    pub bytes_per_iteration: u64,
    /// Working-set size: the measured buffer's length.
    pub buffer_bytes: u64,
    pub derived_value: f64,
    /// "GB/s", "ns/access", or "ns/exchange".
    pub unit: String,
    pub worker_count: usize,
    pub core_ids: Vec<usize>,
    /// False when MEMBENCH_NO_PIN disabled affinity for this run.
    pub pinned: bool,
    pub placements: Vec<PlacementReport>,
    pub clock: ClockInfo,
    pub topology_hash: Option<String>,
    /// Worst gate overshoot any worker saw in any iteration.
    pub start_skew_ns: u64,
    pub timestamp: String,
    pub toolkit_version: String,
}

impl MeasurementRecord {
    /// Mean over non-warmup iteration spans, in ns.
    pub fn mean_elapsed_ns(&self) -> Option<f64> {
        mean_non_warmup_ns(&self.iterations)
    }

    /// Recompute `derived_value` from stored fields. The result is
    /// bit-identical to what the run stored; analysis leans on that.
    pub fn recompute_derived(&self) -> Option<f64> {
        let measured: Vec<&IterationRecord> =
            self.iterations.iter().filter(|i| !i.warmup).collect();
        if measured.is_empty() {
            return None;
        }
        match self.kernel {
            KernelKind::Read | KernelKind::Write | KernelKind::Copy => {
                let mean = mean_non_warmup_ns(&self.iterations)?;
                // bytes/ns equals GB/s in decimal units.
                Some(self.bytes_per_iteration as f64 / mean)
            }
            KernelKind::Chase => {
                let ns: u64 = measured.iter().map(|i| i.elapsed_ns).sum();
                let accesses: u64 = measured.iter().filter_map(|i| i.accesses).sum();
                if accesses == 0 {
                    return None;
                }
                Some(ns as f64 / accesses as f64)
            }
            KernelKind::PingPong => {
                let span: u64 = measured.iter().filter_map(|i| i.exchange_span_ns).sum();
                let exchanges: u64 =
                    measured.iter().filter_map(|i| i.accesses).map(|a| a.saturating_sub(1)).sum();
                if exchanges == 0 {
                    return None;
                }
                Some(span as f64 / exchanges as f64)
            }
        }
    }
}

/// Mean of non-warmup spans: sum divided by count, both exact in u64
/// before the single conversion to f64.
pub fn mean_non_warmup_ns(iterations: &[IterationRecord]) -> Option<f64> {
    let mut sum: u64 = 0;
    let mut n: u64 = 0;
    for it in iterations.iter().filter(|i| !i.warmup) {
        sum += it.elapsed_ns;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum as f64 / n as f64)
    }
}

#[derive(Debug)]
pub enum HarnessError {
    Alloc(AllocError),
    Kernel(KernelError),
    Clock(ClockError),
    InvalidCase(String),
    CoresExceedHost { requested: usize, available: usize },
    /// Start gate failed twice: delay too small for this host.
    StartProtocol { case_id: String, delay_ns: u64 },
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Alloc(e) => write!(f, "allocation failed: {e}"),
            HarnessError::Kernel(e) => write!(f, "kernel failed: {e}"),
            HarnessError::Clock(e) => write!(f, "clock unusable: {e}"),
            HarnessError::InvalidCase(m) => write!(f, "invalid case: {m}"),
            HarnessError::CoresExceedHost { requested, available } => {
                write!(f, "core {requested} requested but host has cores 0..{available}")
            }
            HarnessError::StartProtocol { case_id, delay_ns } => {
                write!(
                    f,
                    "case {case_id}: workers missed the start tick twice (last delay {delay_ns}ns)"
                )
            }
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<AllocError> for HarnessError {
    fn from(e: AllocError) -> Self {
        HarnessError::Alloc(e)
    }
}
impl From<KernelError> for HarnessError {
    fn from(e: KernelError) -> Self {
        HarnessError::Kernel(e)
    }
}
impl From<ClockError> for HarnessError {
    fn from(e: ClockError) -> Self {
        HarnessError::Clock(e)
    }
}

/// The synchronized-start gate. Control arms it with a start tick in the
/// future; workers spin until the tick passes.
pub struct StartGate {
    armed: AtomicBool,
    start: AtomicU64,
}

/// A worker reached the gate after the start tick had already passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LateArrival {
    pub arrived_ns: u64,
    pub start_ns: u64,
}

impl StartGate {
    pub fn new() -> Self {
        StartGate { armed: AtomicBool::new(false), start: AtomicU64::new(0) }
    }

    /// Set the start tick `delay_ns` from now and release the workers.
    pub fn arm(&self, clock: &dyn Clock, delay_ns: u64) -> u64 {
        let start = clock.now_ns() + delay_ns;
        self.start.store(start, Ordering::Relaxed);
        self.armed.store(true, Ordering::Release);
        start
    }

    /// Block until armed, then spin to the start tick. Returns the begin
    /// tick (first observation at or past start). Arriving past the tick
    /// is the caller's cue to invalidate the iteration.
    pub fn wait(&self, clock: &dyn Clock) -> Result<u64, LateArrival> {
        while !self.armed.load(Ordering::Acquire) {
            std::thread::yield_now();
        }
        let start = self.start.load(Ordering::Relaxed);
        let arrived = clock.now_ns();
        if arrived >= start {
            return Err(LateArrival { arrived_ns: arrived, start_ns: start });
        }
        let mut now = arrived;
        while now < start {
            now = clock.now_ns();
        }
        Ok(now)
    }
}

impl Default for StartGate {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-iteration worker spans, for auditing overlap.
#[derive(Debug, Clone)]
pub struct IterationTelemetry {
    pub start_tick: u64,
    /// (begin, end) per worker, in worker order.
    pub worker_spans: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Default)]
pub struct CaseTelemetry {
    pub iterations: Vec<IterationTelemetry>,
    /// The start gate was missed once and the case re-ran with 4x delay.
    pub retried_start: bool,
}

// One worker's assignment for one iteration.
enum Job<'a> {
    Read(&'a [u8]),
    Write(&'a mut [u8], usize),
    Copy(&'a [u8], &'a mut [u8]),
    Chase { chase: &'a ChaseBuffer, duration_ns: u64, granularity: u64 },
    PingPong { flag: &'a AtomicU8, role: PingPongRole, rounds: u64 },
}

fn execute(job: Job<'_>, clock: &dyn Clock) -> Result<KernelResult, KernelError> {
    match job {
        Job::Read(range) => Ok(kernel_read(range, 1)),
        Job::Write(range, stride) => kernel_write(range, stride, DEFAULT_WRITE_PATTERN),
        Job::Copy(src, dst) => kernel_copy(src, dst),
        Job::Chase { chase, duration_ns, granularity } => {
            kernel_chase(chase, duration_ns, granularity, clock)
        }
        Job::PingPong { flag, role, rounds } => {
            kernel_pingpong(flag, role, rounds, DEFAULT_PINGPONG_DEADLINE_NS, clock)
        }
    }
}

enum IterFail {
    Late(LateArrival),
    Hard(HarnessError),
}

// Run one synchronized iteration: pin, rendezvous, gate, kernel.
fn run_iteration(
    jobs: Vec<(usize, Job<'_>)>,
    pinned: bool,
    clock: &dyn Clock,
    delay_ns: u64,
) -> Result<(u64, Vec<(u64, u64, KernelResult)>), IterFail> {
    let gate = StartGate::new();
    let ready = Barrier::new(jobs.len() + 1);
    let (start_tick, results): (u64, Vec<Result<(u64, u64, KernelResult), IterFail>>) =
        std::thread::scope(|s| {
            let mut handles = Vec::with_capacity(jobs.len());
            for (core, job) in jobs {
                let gate = &gate;
                let ready = &ready;
                handles.push(s.spawn(move || {
                    let pin_result = if pinned { pin_to_core(core) } else { Ok(()) };
                    // Reach the barrier no matter what, or control deadlocks.
                    ready.wait();
                    pin_result.map_err(|e| IterFail::Hard(HarnessError::Alloc(e)))?;
                    let begin = gate.wait(clock).map_err(IterFail::Late)?;
                    let result = execute(job, clock)
                        .map_err(|e| IterFail::Hard(HarnessError::Kernel(e)))?;
                    let end = clock.now_ns();
                    Ok((begin, end, result))
                }));
            }
            ready.wait();
            let start_tick = gate.arm(clock, delay_ns);
            let results =
                handles.into_iter().map(|h| h.join().expect("worker must not panic")).collect();
            (start_tick, results)
        });

    let mut spans = Vec::with_capacity(results.len());
    let mut late: Option<LateArrival> = None;
    let mut hard: Option<HarnessError> = None;
    for r in results {
        match r {
            Ok(t) => spans.push(t),
            Err(IterFail::Late(l)) => late = Some(late.map_or(l, |prev| prev)),
            Err(IterFail::Hard(e)) => hard = Some(hard.map_or(e, |prev| prev)),
        }
    }
    // Hard failures trump lateness: retrying would fail the same way.
    if let Some(e) = hard {
        return Err(IterFail::Hard(e));
    }
    if let Some(l) = late {
        return Err(IterFail::Late(l));
    }
    Ok((start_tick, spans))
}

fn placement_report(role: &str, buf: &BenchBuffer) -> PlacementReport {
    PlacementReport {
        role: role.to_string(),
        policy: buf.policy.clone(),
        realized: buf.realized_nodes.clone(),
        degraded: buf.degraded,
    }
}

fn validate_case(case: &BenchmarkCase, pinned: bool) -> Result<(), HarnessError> {
    let bad = |m: String| Err(HarnessError::InvalidCase(m));
    if case.id.is_empty() {
        return bad("case id must not be empty".into());
    }
    if case.initiator_cores.is_empty() {
        return bad(format!("{}: initiator_cores must not be empty", case.id));
    }
    if case.repetitions == 0 {
        return bad(format!("{}: repetitions must be positive", case.id));
    }
    match case.kernel {
        KernelKind::Read | KernelKind::Write => {
            if case.buffer.is_none() {
                return bad(format!("{}: kernel needs a buffer", case.id));
            }
        }
        KernelKind::Copy => {
            let (Some(src), Some(dst)) = (&case.src_buffer, &case.dst_buffer) else {
                return bad(format!("{}: copy needs src_buffer and dst_buffer", case.id));
            };
            let round = |l: usize| l.div_ceil(CACHE_LINE) * CACHE_LINE;
            if round(src.length) != round(dst.length) {
                return bad(format!("{}: copy buffers must have equal lengths", case.id));
            }
        }
        KernelKind::Chase => {
            if case.buffer.is_none() {
                return bad(format!("{}: chase needs a buffer", case.id));
            }
            if case.initiator_cores.len() != 1 {
                return bad(format!("{}: chase is strictly single-worker", case.id));
            }
        }
        KernelKind::PingPong => {
            if case.initiator_cores.len() != 2 {
                return bad(format!("{}: ping-pong needs exactly two cores", case.id));
            }
            if case.rounds.unwrap_or(DEFAULT_PINGPONG_ROUNDS) < 2 {
                return bad(format!("{}: ping-pong needs at least 2 rounds", case.id));
            }
        }
    }
    if let KernelKind::Write = case.kernel {
        let stride = case.stride_bytes.unwrap_or(16);
        if stride < 16 || stride % 16 != 0 {
            return bad(format!("{}: write stride must be a positive multiple of 16", case.id));
        }
    }
    if pinned {
        let host = alloc::host_core_count();
        let all_cores = case
            .initiator_cores
            .iter()
            .chain(case.noise.iter().flat_map(|n| n.cores.iter()));
        for &c in all_cores {
            if c >= host {
                return Err(HarnessError::CoresExceedHost { requested: c, available: host });
            }
        }
        if let Some(noise) = &case.noise {
            if noise.cores.iter().any(|c| case.initiator_cores.contains(c)) {
                return bad(format!(
                    "{}: noise cores overlap initiator cores; the interference would be cpu \
                     time, not memory traffic",
                    case.id
                ));
            }
        }
    }
    if let Some(noise) = &case.noise {
        if noise.cores.is_empty() {
            return bad(format!("{}: noise needs at least one core", case.id));
        }
    }
    Ok(())
}

/// Run one case: allocate, then `warmup + repetitions` synchronized
/// iterations, each with freshly spawned pinned workers.
pub fn run_case(
    case: &BenchmarkCase,
    topo: Option<&TopologySpec>,
    clock: &dyn Clock,
) -> Result<MeasurementRecord, HarnessError> {
    run_case_with_telemetry(case, topo, clock).map(|(record, _)| record)
}

pub fn run_case_with_telemetry(
    case: &BenchmarkCase,
    topo: Option<&TopologySpec>,
    clock: &dyn Clock,
) -> Result<(MeasurementRecord, CaseTelemetry), HarnessError> {
    let pinned = !pinning_disabled();
    validate_case(case, pinned)?;
    let clock_info = estimate_resolution(clock, 10_000)?;

    // Kernel working state, allocated once per case.
    let mut buffer: Option<BenchBuffer> = None;
    let mut src: Option<BenchBuffer> = None;
    let mut dst: Option<BenchBuffer> = None;
    let mut chase: Option<ChaseBuffer> = None;
    let mut flag_buf: Option<BenchBuffer> = None;
    let mut placements: Vec<PlacementReport> = Vec::new();

    match case.kernel {
        KernelKind::Read | KernelKind::Write => {
            let spec = case.buffer.as_ref().unwrap();
            let buf = allocate(spec.length, spec.policy.clone(), spec.alignment)?;
            placements.push(placement_report("buffer", &buf));
            buffer = Some(buf);
        }
        KernelKind::Copy => {
            let s = case.src_buffer.as_ref().unwrap();
            let d = case.dst_buffer.as_ref().unwrap();
            let sbuf = allocate(s.length, s.policy.clone(), s.alignment)?;
            let dbuf = allocate(d.length, d.policy.clone(), d.alignment)?;
            placements.push(placement_report("src", &sbuf));
            placements.push(placement_report("dst", &dbuf));
            src = Some(sbuf);
            dst = Some(dbuf);
        }
        KernelKind::Chase => {
            let spec = case.buffer.as_ref().unwrap();
            let buf = allocate(spec.length, spec.policy.clone(), spec.alignment)?;
            placements.push(placement_report("buffer", &buf));
            let stride = case.stride_bytes.unwrap_or(CACHE_LINE);
            chase = Some(build_chase(buf, stride, case.seed.unwrap_or(0))?);
        }
        KernelKind::PingPong => {
            let policy = case
                .buffer
                .as_ref()
                .map(|b| b.policy.clone())
                .unwrap_or(PlacementPolicy::Default);
            let buf = allocate(FLAG_REGION_BYTES, policy, 128)?;
            placements.push(placement_report("flag", &buf));
            flag_buf = Some(buf);
        }
    }

    let noise_buf: Option<BenchBuffer> = match &case.noise {
        Some(cfg) => {
            let buf = allocate(cfg.buffer_bytes, cfg.policy.clone(), 4096)?;
            placements.push(placement_report("noise", &buf));
            Some(buf)
        }
        None => None,
    };

    let n_workers = case.initiator_cores.len();
    let write_stride = case.stride_bytes.unwrap_or(16);
    let total_iters = case.warmup as usize + case.repetitions as usize;

    let mut iterations: Vec<IterationRecord> = Vec::with_capacity(total_iters);
    let mut telemetry = CaseTelemetry::default();
    let mut start_skew_max: u64 = 0;
    let mut bytes_per_iteration: u64 = 0;
    let mut checksum_sink: u64 = 0;

    let cancel_noise = AtomicBool::new(false);
    let iteration_error: Option<HarnessError> = std::thread::scope(|outer| {
        if let (Some(buf), Some(cfg)) = (&noise_buf, &case.noise) {
            for &core in &cfg.cores {
                let range = buf.as_slice();
                let cancel = &cancel_noise;
                outer.spawn(move || {
                    if pinned {
                        // Validated above; a race losing the core now is
                        // not worth failing the case over.
                        let _ = pin_to_core(core);
                    }
                    kernel_noise(range, cancel);
                });
            }
        }

        let mut fail: Option<HarnessError> = None;
        'iters: for iter in 0..total_iters {
            let mut attempt = |delay_ns: u64| -> Result<(u64, Vec<(u64, u64, KernelResult)>), IterFail> {
                let mut jobs: Vec<(usize, Job<'_>)> = Vec::with_capacity(n_workers);
                match case.kernel {
                    KernelKind::Read => {
                        let data = buffer.as_ref().unwrap().as_slice();
                        let ranges = partition_bytes(data.len(), n_workers)
                            .map_err(|e| IterFail::Hard(e.into()))?;
                        for (w, r) in ranges.into_iter().enumerate() {
                            jobs.push((case.initiator_cores[w], Job::Read(&data[r])));
                        }
                    }
                    KernelKind::Write => {
                        let buf = buffer.as_mut().unwrap();
                        let ranges = partition_bytes(buf.len(), n_workers)
                            .map_err(|e| IterFail::Hard(e.into()))?;
                        let mut rest = buf.as_mut_slice();
                        let mut consumed = 0;
                        for (w, r) in ranges.into_iter().enumerate() {
                            let (part, tail) = rest.split_at_mut(r.end - consumed);
                            consumed = r.end;
                            rest = tail;
                            jobs.push((case.initiator_cores[w], Job::Write(part, write_stride)));
                        }
                    }
                    KernelKind::Copy => {
                        let sdata = src.as_ref().unwrap().as_slice();
                        let dbuf = dst.as_mut().unwrap();
                        let ranges = partition_bytes(sdata.len(), n_workers)
                            .map_err(|e| IterFail::Hard(e.into()))?;
                        let mut rest = dbuf.as_mut_slice();
                        let mut consumed = 0;
                        for (w, r) in ranges.into_iter().enumerate() {
                            let (part, tail) = rest.split_at_mut(r.end - consumed);
                            consumed = r.end;
                            rest = tail;
                            jobs.push((
                                case.initiator_cores[w],
                                Job::Copy(&sdata[r], part),
                            ));
                        }
                    }
                    KernelKind::Chase => {
                        jobs.push((
                            case.initiator_cores[0],
                            Job::Chase {
                                chase: chase.as_ref().unwrap(),
                                duration_ns: case
                                    .duration_ns
                                    .unwrap_or(DEFAULT_CHASE_DURATION_NS),
                                granularity: case
                                    .granularity
                                    .unwrap_or(DEFAULT_CHASE_GRANULARITY),
                            },
                        ));
                    }
                    KernelKind::PingPong => {
                        let region = flag_buf.as_ref().unwrap().as_slice();
                        let flag = unsafe { &*(region.as_ptr() as *const AtomicU8) };
                        flag.store(FLAG_PONG, Ordering::SeqCst);
                        let rounds = case.rounds.unwrap_or(DEFAULT_PINGPONG_ROUNDS);
                        jobs.push((
                            case.initiator_cores[0],
                            Job::PingPong { flag, role: PingPongRole::Ping, rounds },
                        ));
                        jobs.push((
                            case.initiator_cores[1],
                            Job::PingPong { flag, role: PingPongRole::Pong, rounds },
                        ));
                    }
                }
                run_iteration(jobs, pinned, clock, delay_ns)
            };

            let outcome = match attempt(case.start_delay_ns) {
                Err(IterFail::Late(_)) => {
                    telemetry.retried_start = true;
                    match attempt(case.start_delay_ns * 4) {
                        Err(IterFail::Late(_)) => {
                            fail = Some(HarnessError::StartProtocol {
                                case_id: case.id.clone(),
                                delay_ns: case.start_delay_ns * 4,
                            });
                            break 'iters;
                        }
                        other => other,
                    }
                }
                other => other,
            };
            let (start_tick, spans) = match outcome {
                Ok(v) => v,
                Err(IterFail::Hard(e)) => {
                    fail = Some(e);
                    break 'iters;
                }
                Err(IterFail::Late(_)) => unreachable!("late handled above"),
            };

            let mut end_max = start_tick;
            let mut iter_accesses: Option<u64> = None;
            let mut exchange_span: Option<u64> = None;
            let mut iter_bytes: u64 = 0;
            for (w, (begin, end, result)) in spans.iter().enumerate() {
                start_skew_max = start_skew_max.max(begin - start_tick);
                end_max = end_max.max(*end);
                checksum_sink ^= result.checksum;
                iter_bytes += result.bytes_moved;
                match case.kernel {
                    KernelKind::Chase => iter_accesses = result.accesses,
                    // Ping side (worker 0) carries the timing.
                    KernelKind::PingPong if w == 0 => {
                        iter_accesses = result.accesses;
                        exchange_span = result.elapsed_ns;
                    }
                    _ => {}
                }
            }
            telemetry.iterations.push(IterationTelemetry {
                start_tick,
                worker_spans: spans.iter().map(|(b, e, _)| (*b, *e)).collect(),
            });
            iterations.push(IterationRecord {
                elapsed_ns: end_max - start_tick,
                warmup: iter < case.warmup as usize,
                accesses: iter_accesses,
                exchange_span_ns: exchange_span,
            });
            if iter == 0 {
                bytes_per_iteration = match case.kernel {
                    KernelKind::Read | KernelKind::Write => iter_bytes,
                    // Both copy workers count their partition once.
                    KernelKind::Copy => iter_bytes,
                    KernelKind::Chase | KernelKind::PingPong => 0,
                };
            }
        }

        cancel_noise.store(true, Ordering::Release);
        fail
    });
    std::hint::black_box(checksum_sink);
    if let Some(e) = iteration_error {
        return Err(e);
    }

    let buffer_bytes = match case.kernel {
        KernelKind::Read | KernelKind::Write => buffer.as_ref().unwrap().len() as u64,
        KernelKind::Copy => src.as_ref().unwrap().len() as u64,
        KernelKind::Chase => chase.as_ref().unwrap().footprint() as u64,
        KernelKind::PingPong => FLAG_REGION_BYTES as u64,
    };

    let mut record = MeasurementRecord {
        case_id: case.id.clone(),
        kernel: case.kernel,
        iterations,
        bytes_per_iteration,
        buffer_bytes,
        derived_value: 0.0,
        unit: match case.kernel {
            KernelKind::Read | KernelKind::Write | KernelKind::Copy => "GB/s".to_string(),
            KernelKind::Chase => "ns/access".to_string(),
            KernelKind::PingPong => "ns/exchange".to_string(),
        },
        worker_count: n_workers,
        core_ids: case.initiator_cores.clone(),
        pinned,
        placements,
        clock: clock_info,
        topology_hash: topo.map(topology_hash),
        start_skew_ns: start_skew_max,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    record.derived_value = record.recompute_derived().ok_or_else(|| {
        HarnessError::InvalidCase(format!("{}: no measurable iterations", case.id))
    })?;
    Ok((record, telemetry))
}

#[derive(Debug)]
pub enum CaseOutcome {
    Completed(Box<MeasurementRecord>),
    Failed { case_id: String, error: String },
}

/// Parse a suite file: a JSON array of cases.
pub fn parse_suite(text: &str) -> Result<Vec<BenchmarkCase>, HarnessError> {
    serde_json::from_str(text)
        .map_err(|e| HarnessError::InvalidCase(format!("suite does not parse: {e}")))
}

/// Run cases sequentially with a cooldown pause between them. A failing
/// case is recorded and the suite moves on. `on_record` fires after each
/// completed case, so results persist even if a later case dies.
pub fn run_suite(
    cases: &[BenchmarkCase],
    topo: Option<&TopologySpec>,
    clock: &dyn Clock,
    on_record: &mut dyn FnMut(&MeasurementRecord),
) -> Result<Vec<CaseOutcome>, HarnessError> {
    let mut ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    for pair in ids.windows(2) {
        if pair[0] == pair[1] {
            return Err(HarnessError::InvalidCase(format!("duplicate case id: {}", pair[0])));
        }
    }

    let mut outcomes = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        if i > 0 {
            std::thread::sleep(INTER_CASE_COOLDOWN);
        }
        match run_case(case, topo, clock) {
            Ok(record) => {
                on_record(&record);
                outcomes.push(CaseOutcome::Completed(Box::new(record)));
            }
            Err(e) => outcomes.push(CaseOutcome::Failed {
                case_id: case.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(outcomes)
}

/// Latency matrix: core pairs down the rows, flag placements across the
/// columns, mean ns per full exchange in the cells.
pub fn pingpong_matrix(
    core_pairs: &[(usize, usize)],
    placements: &[PlacementPolicy],
    rounds: u64,
    clock: &dyn Clock,
) -> Result<Matrix, HarnessError> {
    if core_pairs.is_empty() || placements.is_empty() {
        return Err(HarnessError::InvalidCase(
            "ping-pong matrix needs at least one core pair and one placement".into(),
        ));
    }
    for (a, b) in core_pairs {
        if a == b {
            return Err(HarnessError::InvalidCase(format!(
                "ping-pong matrix pairs must use distinct cores, got ({a}, {b})"
            )));
        }
    }
    let row_labels: Vec<String> =
        core_pairs.iter().map(|(a, b)| format!("c{a}-c{b}")).collect();
    let col_labels: Vec<String> = placements.iter().map(|p| p.to_string()).collect();
    let mut cells: Vec<Vec<Option<Cell>>> = Vec::with_capacity(core_pairs.len());
    for (a, b) in core_pairs {
        let mut row = Vec::with_capacity(placements.len());
        for policy in placements {
            let mut case = BenchmarkCase::new(
                &format!("pp-{a}-{b}-{policy}"),
                KernelKind::PingPong,
                vec![*a, *b],
            );
            case.buffer = Some(BufferSpec::with_policy(FLAG_REGION_BYTES, policy.clone()));
            case.rounds = Some(rounds);
            case.repetitions = 3;
            case.warmup = 1;
            // Generous gate delay: on oversubscribed hosts the second
            // worker may need several scheduler quanta to arrive.
            case.start_delay_ns = 50_000_000;
            let record = run_case(&case, None, clock)?;
            row.push(Some(Cell { value: record.derived_value, annotation: None }));
        }
        cells.push(row);
    }
    Matrix::new("core-to-core exchange latency", row_labels, col_labels, "ns/exchange", cells)
        .map_err(|e| HarnessError::InvalidCase(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{MockClock, MonotonicClock};

    #[test]
    fn gate_releases_all_workers_at_or_after_start() {
        // Real clock: on a single-core host the waiters timeshare, so
        // the delay must outlast a few scheduler quanta.
        let clock = MonotonicClock::new();
        let gate = StartGate::new();
        let begins: Vec<u64> = std::thread::scope(|s| {
            let mut handles = Vec::new();
            for _ in 0..4 {
                handles.push(s.spawn(|| gate.wait(&clock).unwrap()));
            }
            std::thread::sleep(Duration::from_millis(5));
            gate.arm(&clock, 200_000_000);
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let start = gate.start.load(Ordering::Relaxed);
        for begin in begins {
            assert!(begin >= start, "begin {begin} before start {start}");
        }
    }

    #[test]
    fn gate_wait_with_mock_clock_is_exact() {
        // Single waiter, so tick consumption is fully accounted: the
        // arrival read lands just past arming and the begin tick is the
        // first read at or beyond start.
        let clock = MockClock::new(1_000, 1);
        let gate = StartGate::new();
        gate.arm(&clock, 10_000);
        let start = gate.start.load(Ordering::Relaxed);
        let begin = gate.wait(&clock).unwrap();
        assert!(begin >= start);
        assert!(begin < start + 8, "begin {begin} overshot start {start}");
    }

    #[test]
    fn gate_flags_late_arrival() {
        let clock = MockClock::new(1_000, 1);
        let gate = StartGate::new();
        // Zero delay: the arrival read always lands past the start tick.
        gate.arm(&clock, 0);
        match gate.wait(&clock) {
            Err(LateArrival { arrived_ns, start_ns }) => {
                assert!(arrived_ns >= start_ns);
            }
            Ok(t) => panic!("expected late arrival, began at {t}"),
        }
    }

    fn read_case(id: &str, len: usize, workers: usize) -> BenchmarkCase {
        let mut case =
            BenchmarkCase::new(id, KernelKind::Read, vec![0; workers.max(1)]);
        case.buffer = Some(BufferSpec::new(len));
        case.repetitions = 3;
        case.warmup = 1;
        // Plenty of slack for single-core hosts where the workers and
        // the control thread timeshare.
        case.start_delay_ns = 80_000_000;
        case
    }

    #[test]
    fn read_case_produces_a_consistent_record() {
        let case = read_case("smoke-read", 1 << 20, 1);
        let clock = MonotonicClock::new();
        let (record, telemetry) = run_case_with_telemetry(&case, None, &clock).unwrap();

        assert_eq!(record.case_id, "smoke-read");
        assert_eq!(record.iterations.len(), 4);
        assert_eq!(record.iterations.iter().filter(|i| i.warmup).count(), 1);
        assert!(record.iterations[0].warmup);
        assert_eq!(record.bytes_per_iteration, 1 << 20);
        assert_eq!(record.buffer_bytes, 1 << 20);
        assert_eq!(record.unit, "GB/s");
        assert!(record.derived_value > 0.0);
        assert_eq!(record.worker_count, 1);
        assert_eq!(record.toolkit_version, env!("CARGO_PKG_VERSION"));
        assert!(record.topology_hash.is_none());
        assert_eq!(record.placements.len(), 1);
        assert_eq!(record.placements[0].role, "buffer");

        // The derived value is recomputable bit-for-bit from the record.
        assert_eq!(record.derived_value, record.recompute_derived().unwrap());
        let measured: Vec<&IterationRecord> =
            record.iterations.iter().filter(|i| !i.warmup).collect();
        let sum: u64 = measured.iter().map(|i| i.elapsed_ns).sum();
        let mean = sum as f64 / measured.len() as f64;
        assert_eq!(record.derived_value, (1u64 << 20) as f64 / mean);

        // Case elapsed covers every worker span.
        for (it, rec) in telemetry.iterations.iter().zip(&record.iterations) {
            let max_end = it.worker_spans.iter().map(|(_, e)| *e).max().unwrap();
            assert_eq!(rec.elapsed_ns, max_end - it.start_tick);
            for (b, e) in &it.worker_spans {
                assert!(b >= &it.start_tick);
                assert!(e >= b);
                assert!(rec.elapsed_ns >= e - b);
            }
        }
    }

    #[test]
    fn mock_clock_runs_are_deterministically_structured() {
        // Four workers with the auto-advancing mock: begin ticks always
        // land at or past start, regardless of interleaving.
        let mut case = read_case("mock-read", 1 << 16, 4);
        // Spinning workers consume mock ticks; the budget must outlast
        // the scheduler getting all four onto the one available core.
        case.start_delay_ns = 10_000_000;
        let clock = MockClock::new(5_000, 1);
        let (record, telemetry) = run_case_with_telemetry(&case, None, &clock).unwrap();
        assert_eq!(record.worker_count, 4);
        for it in &telemetry.iterations {
            for (b, _) in &it.worker_spans {
                assert!(*b >= it.start_tick);
            }
        }
    }

    #[test]
    fn start_protocol_gives_up_after_one_retry() {
        let mut case = read_case("never-starts", 1 << 16, 1);
        case.start_delay_ns = 0; // always late, retry 4x0 is still late
        let clock = MockClock::new(0, 1);
        match run_case(&case, None, &clock) {
            Err(HarnessError::StartProtocol { case_id, .. }) => {
                assert_eq!(case_id, "never-starts");
            }
            other => panic!("expected StartProtocol, got {other:?}"),
        }
    }

    #[test]
    fn warmup_count_is_respected() {
        let mut case = read_case("warmups", 1 << 16, 1);
        case.warmup = 2;
        case.repetitions = 3;
        let record = run_case(&case, None, &MonotonicClock::new()).unwrap();
        assert_eq!(record.iterations.len(), 5);
        let flags: Vec<bool> = record.iterations.iter().map(|i| i.warmup).collect();
        assert_eq!(flags, vec![true, true, false, false, false]);
    }

    #[test]
    fn copy_case_moves_matching_buffers() {
        let mut case = BenchmarkCase::new("copy-smoke", KernelKind::Copy, vec![0]);
        case.src_buffer = Some(BufferSpec::new(1 << 18));
        case.dst_buffer = Some(BufferSpec::new(1 << 18));
        case.repetitions = 2;
        case.warmup = 1;
        case.start_delay_ns = 80_000_000;
        let record = run_case(&case, None, &MonotonicClock::new()).unwrap();
        assert_eq!(record.bytes_per_iteration, 1 << 18);
        assert_eq!(record.placements.len(), 2);
        assert_eq!(record.placements[0].role, "src");
        assert_eq!(record.placements[1].role, "dst");
    }

    #[test]
    fn chase_case_records_accesses() {
        let mut case = BenchmarkCase::new("chase-smoke", KernelKind::Chase, vec![0]);
        case.buffer = Some(BufferSpec::new(1 << 16));
        case.duration_ns = Some(1_000_000);
        case.granularity = Some(100);
        case.repetitions = 2;
        case.warmup = 1;
        case.start_delay_ns = 80_000_000;
        let record = run_case(&case, None, &MonotonicClock::new()).unwrap();
        assert_eq!(record.unit, "ns/access");
        assert!(record.derived_value > 0.0);
        assert_eq!(record.bytes_per_iteration, 0);
        assert_eq!(record.buffer_bytes, 1 << 16);
        for it in &record.iterations {
            let a = it.accesses.unwrap();
            assert!(a >= 100 && a % 100 == 0);
        }
    }

    #[test]
    fn pingpong_case_reports_exchange_latency() {
        let mut case = BenchmarkCase::new("pp-smoke", KernelKind::PingPong, vec![0, 0]);
        case.rounds = Some(4);
        case.repetitions = 2;
        case.warmup = 1;
        case.start_delay_ns = 80_000_000;
        let record = run_case(&case, None, &MonotonicClock::new()).unwrap();
        assert_eq!(record.unit, "ns/exchange");
        assert!(record.derived_value > 0.0);
        for it in &record.iterations {
            assert_eq!(it.accesses, Some(4));
            assert!(it.exchange_span_ns.unwrap() > 0);
        }
    }

    #[test]
    fn case_validation_rejects_shape_errors() {
        let clock = MockClock::new(0, 1);
        let cases = [
            {
                let mut c = BenchmarkCase::new("pp-three", KernelKind::PingPong, vec![0, 0, 0]);
                c.rounds = Some(4);
                c
            },
            BenchmarkCase::new("chase-two", KernelKind::Chase, vec![0, 0]),
            BenchmarkCase::new("copy-naked", KernelKind::Copy, vec![0]),
            BenchmarkCase::new("read-naked", KernelKind::Read, vec![0]),
            {
                let mut c = read_case("stride-odd", 4096, 1);
                c.kernel = KernelKind::Write;
                c.stride_bytes = Some(24);
                c
            },
        ];
        for case in cases {
            assert!(
                matches!(run_case(&case, None, &clock), Err(HarnessError::InvalidCase(_))),
                "case {} should be invalid",
                case.id
            );
        }
    }

    #[test]
    fn noise_on_an_initiator_core_is_rejected_when_pinned() {
        if pinning_disabled() {
            return;
        }
        let mut case = read_case("noisy-overlap", 1 << 16, 1);
        case.noise =
            Some(NoiseConfig { cores: vec![0], buffer_bytes: 1 << 16, policy: PlacementPolicy::Default });
        match run_case(&case, None, &MonotonicClock::new()) {
            Err(HarnessError::InvalidCase(m)) => assert!(m.contains("overlap")),
            other => panic!("expected overlap rejection, got {other:?}"),
        }
    }

    #[test]
    fn requesting_cores_beyond_the_host_is_refused() {
        if pinning_disabled() {
            return;
        }
        let host = alloc::host_core_count();
        let case = read_case("too-many-cores", 1 << 16, 1);
        let mut case = case;
        case.initiator_cores = vec![host + 10];
        match run_case(&case, None, &MonotonicClock::new()) {
            Err(HarnessError::CoresExceedHost { requested, available }) => {
                assert_eq!(requested, host + 10);
                assert_eq!(available, host);
            }
            other => panic!("expected CoresExceedHost, got {other:?}"),
        }
    }

    #[test]
    fn suite_continues_past_a_failing_case() {
        let cases = vec![
            read_case("first", 1 << 16, 1),
            BenchmarkCase::new("broken", KernelKind::Copy, vec![0]), // no buffers
            read_case("third", 1 << 16, 1),
        ];
        let mut seen: Vec<String> = Vec::new();
        let outcomes = run_suite(&cases, None, &MonotonicClock::new(), &mut |r| {
            seen.push(r.case_id.clone());
        })
        .unwrap();
        assert_eq!(outcomes.len(), 3);
        assert!(matches!(&outcomes[0], CaseOutcome::Completed(r) if r.case_id == "first"));
        assert!(matches!(&outcomes[1], CaseOutcome::Failed { case_id, .. } if case_id == "broken"));
        assert!(matches!(&outcomes[2], CaseOutcome::Completed(r) if r.case_id == "third"));
        // Persistence fired case by case, not at the end.
        assert_eq!(seen, vec!["first", "third"]);
    }

    #[test]
    fn empty_suite_is_a_no_op() {
        let outcomes =
            run_suite(&[], None, &MonotonicClock::new(), &mut |_| panic!("no records"))
                .unwrap();
        assert!(outcomes.is_empty());
    }

    #[test]
    fn duplicate_case_ids_fail_the_whole_suite() {
        let cases = vec![read_case("same", 1 << 16, 1), read_case("same", 1 << 16, 1)];
        match run_suite(&cases, None, &MonotonicClock::new(), &mut |_| {}) {
            Err(HarnessError::InvalidCase(m)) => assert!(m.contains("duplicate case id")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn suite_files_parse_with_defaults() {
        let text = r#"[
            {
                "id": "r0",
                "kernel": "read",
                "initiator_cores": [0],
                "buffer": { "length": 65536 }
            },
            {
                "id": "pp0",
                "kernel": "ping_pong",
                "initiator_cores": [0, 1],
                "rounds": 100
            }
        ]"#;
        let cases = parse_suite(text).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[0].repetitions, DEFAULT_REPETITIONS);
        assert_eq!(cases[0].warmup, DEFAULT_WARMUP);
        assert_eq!(cases[0].start_delay_ns, DEFAULT_START_DELAY_NS);
        assert_eq!(cases[0].buffer.as_ref().unwrap().alignment, 4096);
        assert_eq!(cases[1].rounds, Some(100));
        assert!(parse_suite("[{\"id\": \"x\"}]").is_err());
    }

    #[test]
    fn pingpong_matrix_rejects_identical_pair_cores() {
        match pingpong_matrix(&[(3, 3)], &[PlacementPolicy::Default], 4, &MonotonicClock::new())
        {
            Err(HarnessError::InvalidCase(m)) => assert!(m.contains("distinct")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pingpong_matrix_has_pairs_by_placements_shape() {
        // Needs two distinct pinnable cores; on smaller hosts the same
        // request must be refused up front instead.
        let result =
            pingpong_matrix(&[(0, 1)], &[PlacementPolicy::Default], 4, &MonotonicClock::new());
        if pinning_disabled() || alloc::host_core_count() >= 2 {
            let m = result.unwrap();
            assert_eq!(m.row_labels, vec!["c0-c1"]);
            assert_eq!(m.col_labels, vec!["default"]);
            assert_eq!(m.unit, "ns/exchange");
            assert!(m.cells[0][0].as_ref().unwrap().value > 0.0);
        } else {
            assert!(matches!(result, Err(HarnessError::CoresExceedHost { .. })));
        }
    }
}
