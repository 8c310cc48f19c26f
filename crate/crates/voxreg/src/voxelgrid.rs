//! Occupancy histogram, per-voxel address offsets and the segmented arena.
//!
//! Three stages, run in order over a fixed target cloud:
//!
//! 1. `build_histogram` counts points per voxel. The parallel path batches
//!    points into fixed-size chunks and aggregates each chunk through a
//!    small open-addressing table of fused 32-bit entries (key in the upper
//!    16 bits, running count in the lower 16) before touching the shared
//!    histogram, trading per-point atomics for one atomic add per distinct
//!    voxel per chunk.
//! 2. `compute_offsets` turns counts into segment start addresses with a
//!    strictly sequential prefix pass. Empty voxels still get a 2-slot
//!    segment so dilation has a lock word and a state word to write into.
//! 3. `allocate_arena` + `scatter_points` place every point index into its
//!    voxel segment. Segment layout: slot 0 = lock word, slot 1 = state
//!    word (count, or a dilation tag later), slots 2.. = point indices.

use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{voxel_of, GridConfig, VoxelIndex};
use crate::point::PointCloud;

/// Which execution path a stage takes. Both produce the same observable
/// results (parallel scatter may permute indices within a voxel segment).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Serial,
    Parallel,
}

impl std::str::FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(ExecMode::Serial),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(Error::Input(format!(
                "unknown mode '{other}' (expected serial or parallel)"
            ))),
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecMode::Serial => "serial",
            ExecMode::Parallel => "parallel",
        })
    }
}

/// Per-voxel point counts; `counts[v]` indexed by packed `VoxelIndex`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelHistogram {
    counts: Vec<u32>,
}

impl VoxelHistogram {
    pub fn from_counts(counts: Vec<u32>) -> Self {
        VoxelHistogram { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, v: VoxelIndex) -> u32 {
        self.counts[v.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total points counted; equals the cloud size by mass conservation.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn occupied_voxels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Points per chunk in the parallel histogram, and the size of the fused
/// local table. Power of two so masked linear probing wraps for free.
const HIST_BLOCK_SIZE: usize = 256;

/// Lower 16 bits of a fused entry hold the running count.
const FUSED_VALUE_MASK: u32 = 0xFFFF;

/// Aggregate one chunk of packed voxel indices through a local fused-entry
/// table, then fold the surviving entries into the shared histogram.
///
/// `table_size` must be a power of two. When the table fills up with
/// distinct keys, or a fused count would overflow its 16-bit field, entries
/// are flushed to the shared histogram early and the table slot reused —
/// counts are never silently wrapped.
fn drain_chunk_through_local_table(
    chunk: &[u32],
    table_size: usize,
    global: &[AtomicU32],
) {
    debug_assert!(table_size.is_power_of_two());
    let mask = (table_size - 1) as u32;
    let mut local = vec![0u32; table_size];

    let flush_entry = |entry: &mut u32| {
        if *entry != 0 {
            global[(*entry >> 16) as usize].fetch_add(*entry & FUSED_VALUE_MASK, Ordering::Relaxed);
            *entry = 0;
        }
    };

    for &voxel in chunk {
        let mut key = voxel & mask;
        let mut probes = 0usize;
        loop {
            let entry = local[key as usize];
            if entry == 0 {
                local[key as usize] = (voxel << 16) | 1;
                break;
            }
            if entry >> 16 == voxel {
                if entry & FUSED_VALUE_MASK == FUSED_VALUE_MASK {
                    // Count field saturated: flush this entry and restart it.
                    flush_entry(&mut local[key as usize]);
                    local[key as usize] = (voxel << 16) | 1;
                } else {
                    local[key as usize] = entry + 1;
                }
                break;
            }
            key = (key + 1) & mask;
            probes += 1;
            if probes >= table_size {
                // Table is full of other keys; drain it and retry.
                for e in local.iter_mut() {
                    flush_entry(e);
                }
                probes = 0;
            }
        }
    }
    for e in local.iter_mut() {
        flush_entry(e);
    }
}

fn build_histogram_parallel(
    packed: &[u32],
    voxel_count: usize,
    chunk_points: usize,
    table_size: usize,
) -> Vec<u32> {
    let global: Vec<AtomicU32> = (0..voxel_count).map(|_| AtomicU32::new(0)).collect();
    packed
        .par_chunks(chunk_points)
        .for_each(|chunk| drain_chunk_through_local_table(chunk, table_size, &global));
    global.into_iter().map(|a| a.into_inner()).collect()
}

/// Count points per voxel. Serial and parallel modes return identical
/// arrays; only the aggregation path differs.
pub fn build_histogram(
    cloud: &PointCloud,
    cfg: &GridConfig,
    mode: ExecMode,
) -> Result<VoxelHistogram> {
    let voxel_count = cfg.voxel_count() as usize;
    match mode {
        ExecMode::Serial => {
            let mut counts = vec![0u32; voxel_count];
            for p in &cloud.points {
                counts[voxel_of(p, cfg)?.0 as usize] += 1;
            }
            Ok(VoxelHistogram { counts })
        }
        ExecMode::Parallel => {
            let packed: Vec<u32> = cloud
                .points
                .par_iter()
                .map(|p| voxel_of(p, cfg).map(|v| v.0))
                .collect::<Result<_>>()?;
            Ok(VoxelHistogram {
                counts: build_histogram_parallel(
                    &packed,
                    voxel_count,
                    HIST_BLOCK_SIZE,
                    HIST_BLOCK_SIZE,
                ),
            })
        }
    }
}

/// Segment start addresses derived from the histogram: empty voxels get 2
/// slots, occupied voxels `count + 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddrOffsets {
    offsets: Vec<u32>,
    total_slots: u64,
}

impl AddrOffsets {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    pub fn offset(&self, v: VoxelIndex) -> usize {
        self.offsets[v.0 as usize] as usize
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    /// Final head address: total slots across all segments.
    pub fn total_slots(&self) -> u64 {
        self.total_slots
    }

    pub fn segment_size(&self, v: VoxelIndex) -> usize {
        let i = v.0 as usize;
        let start = self.offsets[i] as u64;
        let end = self
            .offsets
            .get(i + 1)
            .map(|&o| o as u64)
            .unwrap_or(self.total_slots);
        (end - start) as usize
    }
}

/// Sequential prefix accumulation over the histogram. Strictly serial by
/// design: every offset depends on all earlier counts.
pub fn compute_offsets(hist: &VoxelHistogram) -> AddrOffsets {
    let mut offsets = Vec::with_capacity(hist.counts.len());
    let mut head: u64 = 0;
    for &c in &hist.counts {
        debug_assert!(head <= u32::MAX as u64, "arena exceeds 32-bit addressing");
        offsets.push(head as u32);
        head += if c == 0 { 2 } else { c as u64 + 2 };
    }
    AddrOffsets {
        offsets,
        total_slots: head,
    }
}

/// The single backing store for all voxel segments: `total_slots` 32-bit
/// words, atomically addressable so scatter and dilation can run with
/// concurrent lanes.
pub struct VoxelArena {
    slots: Vec<AtomicU32>,
}

/// Slot roles within one voxel segment.
pub const LOCK_SLOT: usize = 0;
pub const STATE_SLOT: usize = 1;
pub const POINTS_SLOT: usize = 2;

impl VoxelArena {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Bytes occupied by the slot array (4 per slot).
    pub fn bytes(&self) -> u64 {
        self.slots.len() as u64 * 4
    }

    #[inline]
    pub fn load(&self, slot: usize) -> u32 {
        self.slots[slot].load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn store(&self, slot: usize, value: u32) {
        self.slots[slot].store(value, Ordering::Relaxed);
    }

    /// Copy of the raw slot array, for golden comparisons and dumps.
    pub fn snapshot(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.load(Ordering::Relaxed)).collect()
    }

    /// Spin until this voxel's lock word flips 0 -> 1.
    #[inline]
    pub(crate) fn acquire_lock(&self, base: usize) {
        while self.slots[base + LOCK_SLOT]
            .compare_exchange_weak(0, 1, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            std::hint::spin_loop();
        }
    }

    #[inline]
    pub(crate) fn release_lock(&self, base: usize) {
        self.slots[base + LOCK_SLOT].store(0, Ordering::Release);
    }
}

/// Zeroed arena sized by the offsets.
pub fn allocate_arena(offs: &AddrOffsets) -> Result<VoxelArena> {
    let n = offs.total_slots();
    if n == 0 {
        return Err(Error::Input("cannot allocate a zero-slot arena".into()));
    }
    let n = usize::try_from(n)
        .map_err(|_| Error::Resource(format!("arena of {n} slots exceeds address space")))?;
    let mut slots = Vec::new();
    slots
        .try_reserve_exact(n)
        .map_err(|e| Error::Resource(format!("arena allocation of {n} slots failed: {e}")))?;
    slots.extend((0..n).map(|_| AtomicU32::new(0)));
    Ok(VoxelArena { slots })
}

fn append_point(
    arena: &VoxelArena,
    base: usize,
    segment_size: usize,
    point_index: u32,
) -> Result<()> {
    let count = arena.load(base + STATE_SLOT) as usize;
    if count + POINTS_SLOT >= segment_size {
        return Err(Error::InternalConsistency(format!(
            "voxel segment at slot {base} is full ({count} of {} point slots); \
             arena was not sized from this cloud's histogram",
            segment_size.saturating_sub(POINTS_SLOT),
        )));
    }
    arena.store(base + POINTS_SLOT + count, point_index);
    arena.store(base + STATE_SLOT, count as u32 + 1);
    Ok(())
}

/// Write every point's index into its voxel segment. After this, each
/// occupied voxel's state word equals its histogram count and its point
/// slots hold exactly the indices quantizing to it. Serial mode appends in
/// ascending point order; parallel lanes guard each segment with its lock
/// word, so within-voxel order is unspecified there.
pub fn scatter_points(
    cloud: &PointCloud,
    cfg: &GridConfig,
    offs: &AddrOffsets,
    arena: &VoxelArena,
    mode: ExecMode,
) -> Result<()> {
    if arena.len() as u64 != offs.total_slots() {
        return Err(Error::InternalConsistency(format!(
            "arena has {} slots but offsets describe {}",
            arena.len(),
            offs.total_slots()
        )));
    }
    match mode {
        ExecMode::Serial => {
            for (i, p) in cloud.points.iter().enumerate() {
                let v = voxel_of(p, cfg)?;
                append_point(arena, offs.offset(v), offs.segment_size(v), i as u32)?;
            }
            Ok(())
        }
        ExecMode::Parallel => cloud
            .points
            .par_iter()
            .enumerate()
            .try_for_each(|(i, p)| {
                let v = voxel_of(p, cfg)?;
                let base = offs.offset(v);
                arena.acquire_lock(base);
                let result = append_point(arena, base, offs.segment_size(v), i as u32);
                arena.release_lock(base);
                result
            }),
    }
}
