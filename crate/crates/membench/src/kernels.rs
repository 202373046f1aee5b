//! Memory access kernels.
//!
//! Each kernel is a plain function over slices: no timing inside except
//! where the access pattern itself needs a clock (pointer chase batches,
//! ping-pong deadlines). The harness owns start and stop timestamps.
//!
//! Two rules keep the optimizer from deleting the traffic. Reads fold
//! into a checksum that the caller must consume. Writes end with a
//! volatile read-back of the last stored location. The copy kernels use
//! volatile 16-byte accesses so the compiler cannot re-schedule or merge
//! them; the difference between one copy stream and four independent
//! ones is the hardware-level overlap being measured, and it only exists
//! if the instruction pattern survives codegen.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::BenchBuffer;
use crate::clock::Clock;

/// What one kernel invocation did. `checksum` must be consumed (printed,
/// folded, or black-boxed) or the traffic may be optimized away.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelResult {
    /// Payload bytes the kernel accounts for. Copies count the buffer
    /// length once, matching throughput = buffer size over time.
    pub bytes_moved: u64,
    pub checksum: u64,
    /// Individual accesses, where the kernel is access-counted rather
    /// than byte-counted (chase, ping-pong).
    pub accesses: Option<u64>,
    /// Kernel-internal span, where the protocol defines its own timing
    /// origin (ping-pong: first successful exchange).
    pub elapsed_ns: Option<u64>,
}

impl KernelResult {
    fn bytes(bytes_moved: u64, checksum: u64) -> Self {
        KernelResult { bytes_moved, checksum, accesses: None, elapsed_ns: None }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum KernelError {
    LengthMismatch { src: usize, dst: usize },
    /// Write strides are multiples of 16 bytes; chase strides multiples
    /// of 8, at least a pointer wide.
    BadStride(usize),
    TooFewSlots { slots: u64 },
    ZeroGranularity,
    /// Latency needs at least two rounds: one to open, one to measure.
    TooFewRounds { rounds: u64 },
    /// No first exchange within the deadline; the partner never showed.
    PingPongTimeout,
}

impl std::fmt::Display for KernelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelError::LengthMismatch { src, dst } => {
                write!(f, "copy ranges differ in length: src {src}, dst {dst}")
            }
            KernelError::BadStride(s) => write!(f, "unusable stride: {s}"),
            KernelError::TooFewSlots { slots } => {
                write!(f, "chase needs at least 2 slots, got {slots}")
            }
            KernelError::ZeroGranularity => write!(f, "granularity must be positive"),
            KernelError::TooFewRounds { rounds } => {
                write!(f, "ping-pong needs at least 2 rounds, got {rounds}")
            }
            KernelError::PingPongTimeout => {
                write!(f, "no first exchange before the deadline")
            }
        }
    }
}

impl std::error::Error for KernelError {}

/// Streaming read: XOR-fold the range in 16-byte accesses. The fold is
/// order-insensitive, so per-partition checksums XOR together into the
/// whole-buffer checksum.
pub fn kernel_read(range: &[u8], repetitions: u32) -> KernelResult {
    let mut acc: u64 = 0;
    for _ in 0..repetitions {
        let mut fold: u128 = 0;
        let mut chunks = range.chunks_exact(16);
        for chunk in &mut chunks {
            fold ^= u128::from_ne_bytes(chunk.try_into().unwrap());
        }
        let tail = chunks.remainder();
        if !tail.is_empty() {
            let mut padded = [0u8; 16];
            padded[..tail.len()].copy_from_slice(tail);
            fold ^= u128::from_ne_bytes(padded);
        }
        acc ^= (fold as u64) ^ ((fold >> 64) as u64);
    }
    KernelResult::bytes(range.len() as u64 * repetitions as u64, acc)
}

/// Default byte pattern for write kernels.
pub const DEFAULT_WRITE_PATTERN: [u8; 16] = [
    0xa5, 0x5a, 0xa5, 0x5a, 0xa5, 0x5a, 0xa5, 0x5a,
    0xa5, 0x5a, 0xa5, 0x5a, 0xa5, 0x5a, 0xa5, 0x5a,
];

/// Strided stores: one 16-byte pattern at every stride offset. A stride
/// of 16 writes the range densely. Finishes with a volatile read-back of
/// the last store so the stores cannot be elided.
pub fn kernel_write(
    range: &mut [u8],
    stride: usize,
    pattern: [u8; 16],
) -> Result<KernelResult, KernelError> {
    if stride < 16 || stride % 16 != 0 {
        return Err(KernelError::BadStride(stride));
    }
    let len = range.len();
    let stores = if len < 16 { 0 } else { (len - 16) / stride + 1 };
    let base = range.as_mut_ptr();
    let word = u128::from_ne_bytes(pattern);
    unsafe {
        for k in 0..stores {
            (base.add(k * stride) as *mut u128).write_unaligned(word);
        }
    }
    let checksum = if stores == 0 {
        0
    } else {
        let back =
            unsafe { (base.add((stores - 1) * stride) as *const u128).read_volatile() };
        (back as u64) ^ ((back >> 64) as u64)
    };
    Ok(KernelResult::bytes(stores as u64 * 16, checksum))
}

// Shared copy loop. BLOCK is the bytes handled per iteration; the pair
// count is BLOCK / 16. Volatile keeps the issue pattern intact.
macro_rules! copy_loop {
    ($src:expr, $dst:expr, $pairs:expr) => {{
        let len = $src.len();
        let block = $pairs * 16;
        let blocks = len / block;
        let mut fold: u128 = 0;
        unsafe {
            let mut sp = $src.as_ptr() as *const u128;
            let mut dp = $dst.as_mut_ptr() as *mut u128;
            for _ in 0..blocks {
                let mut vals = [0u128; $pairs];
                for i in 0..$pairs {
                    vals[i] = sp.add(i).read_volatile();
                }
                for i in 0..$pairs {
                    dp.add(i).write_volatile(vals[i]);
                    fold ^= vals[i];
                }
                sp = sp.add($pairs);
                dp = dp.add($pairs);
            }
        }
        let done = blocks * block;
        $dst[done..].copy_from_slice(&$src[done..]);
        for chunk in $src[done..].chunks(16) {
            let mut padded = [0u8; 16];
            padded[..chunk.len()].copy_from_slice(chunk);
            fold ^= u128::from_ne_bytes(padded);
        }
        (fold as u64) ^ ((fold >> 64) as u64)
    }};
}

/// Copy with four independent 16-byte pairs in flight per block, so the
/// loads and stores of neighboring pairs overlap in the memory system.
pub fn kernel_copy(src: &[u8], dst: &mut [u8]) -> Result<KernelResult, KernelError> {
    if src.len() != dst.len() {
        return Err(KernelError::LengthMismatch { src: src.len(), dst: dst.len() });
    }
    let checksum = copy_loop!(src, dst, 4);
    Ok(KernelResult::bytes(src.len() as u64, checksum))
}

/// Copy one serialized 16-byte pair at a time: each store issues before
/// the next load in program order. Comparison partner for [`kernel_copy`]
/// when demonstrating access pipelining.
pub fn kernel_copy_one_pair(src: &[u8], dst: &mut [u8]) -> Result<KernelResult, KernelError> {
    if src.len() != dst.len() {
        return Err(KernelError::LengthMismatch { src: src.len(), dst: dst.len() });
    }
    let checksum = copy_loop!(src, dst, 1);
    Ok(KernelResult::bytes(src.len() as u64, checksum))
}

/// A buffer prepared for dependent-load latency measurement: slot k
/// holds the index of its successor, and the successors form one cycle
/// through every slot.
pub struct ChaseBuffer {
    buffer: BenchBuffer,
    pub slots: u64,
    pub stride: usize,
    pub seed: u64,
    pub start_index: u64,
}

impl ChaseBuffer {
    /// Successor stored in one slot.
    pub fn successor(&self, slot: u64) -> u64 {
        let off = slot as usize * self.stride;
        u64::from_ne_bytes(self.buffer.as_slice()[off..off + 8].try_into().unwrap())
    }

    /// All successors, indexed by slot.
    pub fn successors(&self) -> Vec<u64> {
        (0..self.slots).map(|s| self.successor(s)).collect()
    }

    /// Working set in bytes.
    pub fn footprint(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffer(&self) -> &BenchBuffer {
        &self.buffer
    }
}

/// Lay a single-cycle random permutation over `buffer`: one slot per
/// `stride` bytes, each holding its successor's index. The permutation is
/// drawn with a cycle-only shuffle, so any start index tours every slot
/// exactly once before returning. Deterministic in `seed`.
pub fn build_chase(
    buffer: BenchBuffer,
    stride: usize,
    seed: u64,
) -> Result<ChaseBuffer, KernelError> {
    if stride < 8 || stride % 8 != 0 {
        return Err(KernelError::BadStride(stride));
    }
    let slots = (buffer.len() / stride) as u64;
    if slots < 2 {
        return Err(KernelError::TooFewSlots { slots });
    }

    // Sattolo's shuffle: restricting swaps to j < i forbids fixed points
    // and, by induction, any cycle shorter than the whole array.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = slots as usize;
    let mut succ: Vec<u64> = (0..slots).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        succ.swap(i, j);
    }

    let mut chase =
        ChaseBuffer { buffer, slots, stride, seed, start_index: 0 };
    let slice = chase.buffer.as_mut_slice();
    for (k, s) in succ.iter().enumerate() {
        slice[k * stride..k * stride + 8].copy_from_slice(&s.to_ne_bytes());
    }
    Ok(chase)
}

/// Walk the chase cycle until `duration_ns` elapses, checking the clock
/// only every `granularity` loads so the clock stays off the measured
/// path. Always completes at least one batch; the access count is a
/// whole number of batches.
pub fn kernel_chase(
    chase: &ChaseBuffer,
    duration_ns: u64,
    granularity: u64,
    clock: &dyn Clock,
) -> Result<KernelResult, KernelError> {
    if granularity == 0 {
        return Err(KernelError::ZeroGranularity);
    }
    let base = chase.buffer.as_slice().as_ptr();
    let stride = chase.stride;
    let deadline = clock.now_ns() + duration_ns;
    let mut idx = chase.start_index;
    let mut accesses: u64 = 0;
    loop {
        for _ in 0..granularity {
            // Dependent load: the loaded value is the next address.
            idx = unsafe { (base.add(idx as usize * stride) as *const u64).read_unaligned() };
        }
        accesses += granularity;
        debug_assert!(idx < chase.slots);
        if clock.now_ns() >= deadline {
            break;
        }
    }
    Ok(KernelResult {
        bytes_moved: accesses * 8,
        checksum: std::hint::black_box(idx),
        accesses: Some(accesses),
        elapsed_ns: None,
    })
}

/// Flag values for the ping-pong kernel.
pub const FLAG_PING: u8 = 0x01;
pub const FLAG_PONG: u8 = 0x02;

/// Flag region size: the flag byte plus padding so neighbors on either
/// side sit in different cache lines.
pub const FLAG_REGION_BYTES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PingPongRole {
    Ping,
    Pong,
}

/// One side of a two-thread compare-and-swap ping-pong over a shared
/// one-byte flag. The flag starts as PONG; the ping side converts
/// PONG to PING, the pong side converts back. Each side completes
/// exactly `rounds` successful swaps. Timing starts at this side's first
/// successful swap, so setup skew is excluded; the deadline only guards
/// the wait for that first success.
pub fn kernel_pingpong(
    flag: &AtomicU8,
    role: PingPongRole,
    rounds: u64,
    deadline_ns: u64,
    clock: &dyn Clock,
) -> Result<KernelResult, KernelError> {
    if rounds < 2 {
        return Err(KernelError::TooFewRounds { rounds });
    }
    let (expect, store) = match role {
        PingPongRole::Ping => (FLAG_PONG, FLAG_PING),
        PingPongRole::Pong => (FLAG_PING, FLAG_PONG),
    };
    let deadline = clock.now_ns() + deadline_ns;
    let mut first: Option<u64> = None;
    let mut swaps: u64 = 0;
    while swaps < rounds {
        match flag.compare_exchange(expect, store, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => {
                swaps += 1;
                if first.is_none() {
                    first = Some(clock.now_ns());
                }
            }
            Err(_) => {
                if first.is_none() && clock.now_ns() >= deadline {
                    return Err(KernelError::PingPongTimeout);
                }
                std::hint::spin_loop();
            }
        }
    }
    let elapsed = clock.now_ns() - first.expect("rounds >= 2 implies a first swap");
    Ok(KernelResult {
        bytes_moved: swaps,
        checksum: swaps,
        accesses: Some(swaps),
        elapsed_ns: Some(elapsed),
    })
}

/// Default noise working set: large enough to defeat every cache level.
pub const DEFAULT_NOISE_BUFFER_BYTES: usize = 8 << 30;

const NOISE_CHUNK: usize = 1 << 20;

/// Bandwidth hog: scan the buffer end to end, over and over, until
/// cancelled. The cancel flag is honored between chunks, mid-pass, so a
/// stop request never waits for a full pass over a huge buffer. Returns
/// total bytes read.
pub fn kernel_noise(buffer: &[u8], cancel: &AtomicBool) -> u64 {
    let mut acc: u64 = 0;
    let mut total: u64 = 0;
    'runs: loop {
        for chunk in buffer.chunks(NOISE_CHUNK) {
            if cancel.load(Ordering::Acquire) {
                break 'runs;
            }
            acc ^= kernel_read(chunk, 1).checksum;
            total += chunk.len() as u64;
        }
        if buffer.is_empty() {
            break;
        }
    }
    std::hint::black_box(acc);
    total
}
