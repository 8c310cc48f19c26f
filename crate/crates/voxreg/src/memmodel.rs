//! Byte accounting: the dynamic segmented layout vs the monolithic
//! fixed-block-per-voxel baseline.
//!
//! Everything is exact integer math over the offsets; "MB" anywhere in
//! reports means 1 MB = 1048576 bytes (the convention the baseline's
//! 64 KB-per-voxel figure and the 0.03125 MB static footprint follow).

use serde::Serialize;

use crate::grid::GridConfig;
use crate::voxelgrid::AddrOffsets;

/// The monolithic baseline preallocates this much per voxel: 64 KiB.
pub const DEFAULT_BASELINE_BLOCK_BYTES: u64 = 64 * 1024;

pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

/// Slot width of the arena and of the histogram/offset arrays.
const WORD_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemReport {
    /// Histogram + address offsets: `2 * voxel_count * 4` bytes.
    pub static_bytes: u64,
    /// Arena slots: `total_slots * 4` bytes.
    pub dynamic_bytes: u64,
    pub ours_total_bytes: u64,
    pub baseline_block_bytes: u64,
    /// Monolithic model: `voxel_count * baseline_block_bytes`.
    pub baseline_bytes: u64,
    /// `1 - ours / baseline`.
    pub saving_ratio: f64,
}

impl MemReport {
    pub fn ours_mb(&self) -> f64 {
        self.ours_total_bytes as f64 / BYTES_PER_MB
    }

    pub fn baseline_mb(&self) -> f64 {
        self.baseline_bytes as f64 / BYTES_PER_MB
    }

    pub fn saving_percent(&self) -> f64 {
        self.saving_ratio * 100.0
    }
}

/// Account the grid described by `offs` against a monolithic baseline of
/// `baseline_block_bytes` per voxel.
pub fn account(offs: &AddrOffsets, cfg: &GridConfig, baseline_block_bytes: u64) -> MemReport {
    debug_assert!(baseline_block_bytes > 0);
    let voxel_count = cfg.voxel_count() as u64;
    let static_bytes = 2 * voxel_count * WORD_BYTES;
    let dynamic_bytes = offs.total_slots() * WORD_BYTES;
    let ours_total_bytes = static_bytes + dynamic_bytes;
    let baseline_bytes = voxel_count * baseline_block_bytes;
    let saving_ratio = 1.0 - ours_total_bytes as f64 / baseline_bytes as f64;
    MemReport {
        static_bytes,
        dynamic_bytes,
        ours_total_bytes,
        baseline_block_bytes,
        baseline_bytes,
        saving_ratio,
    }
}

/// Saving ratio from externally reported megabyte figures (e.g. replaying
/// published table rows).
pub fn replay_saving(ours_mb: f64, baseline_mb: f64) -> f64 {
    1.0 - ours_mb / baseline_mb
}
