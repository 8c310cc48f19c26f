//! Voxel index arithmetic.
//!
//! Space is the normalized cube [-1, 1]^3 divided into 2^N cells per axis.
//! A cell address packs its three axis coordinates into one integer,
//! x-high / z-low: `(Vx << 2N) | (Vy << N) | Vz`. With that layout a step
//! of +-1 moves along z, +-2^N along y and +-2^(2N) along x, which is what
//! the dilation sweep exploits.
//!
//! N is capped at 5 so the packed index stays within 15 bits and fits the
//! upper half of a fused 32-bit histogram entry (see `voxelgrid`).

use crate::error::{Error, Result};
use crate::point::Point3;

pub const MIN_N_BITS: u32 = 1;
pub const MAX_N_BITS: u32 = 5;

/// Grid geometry: voxelization scale N and dilation layer count L.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConfig {
    n_bits: u32,
    dilation_layers: u32,
}

impl GridConfig {
    pub fn new(n_bits: u32, dilation_layers: u32) -> Result<Self> {
        if !(MIN_N_BITS..=MAX_N_BITS).contains(&n_bits) {
            return Err(Error::Input(format!(
                "n-bits must be in {MIN_N_BITS}..={MAX_N_BITS}, got {n_bits}"
            )));
        }
        Ok(GridConfig {
            n_bits,
            dilation_layers,
        })
    }

    /// Defaults used throughout: N=4, L=10.
    pub fn default_grid() -> Self {
        GridConfig {
            n_bits: 4,
            dilation_layers: 10,
        }
    }

    #[inline]
    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    #[inline]
    pub fn dilation_layers(&self) -> u32 {
        self.dilation_layers
    }

    pub fn with_layers(self, dilation_layers: u32) -> Self {
        GridConfig {
            dilation_layers,
            ..self
        }
    }

    /// Cells per axis, 2^N.
    #[inline]
    pub fn axis_cells(&self) -> u32 {
        1 << self.n_bits
    }

    /// Total cells, 2^(3N).
    #[inline]
    pub fn voxel_count(&self) -> u32 {
        1 << (3 * self.n_bits)
    }

    /// Edge length of one cell in normalized units (the domain [-1,1] is
    /// 2 units wide).
    #[inline]
    pub fn voxel_edge(&self) -> f64 {
        2.0 / self.axis_cells() as f64
    }
}

/// Packed cell address; always `< 2^(3N)` for its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex(pub u32);

impl std::fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Map a normalized coordinate triple onto integer cell coordinates.
///
/// Each axis maps [-1, 1] linearly onto [0, 2^N) and clamps, so the upper
/// domain edge (+1.0 exactly) lands in the last cell instead of one past it.
/// Points that drift outside the normalized cube (transformed source points
/// during ICP) clamp onto the boundary cells.
pub fn quantize(p: &Point3, cfg: &GridConfig) -> Result<(u32, u32, u32)> {
    if !p.is_finite() {
        return Err(Error::Input(format!(
            "cannot quantize non-finite point ({}, {}, {})",
            p.x, p.y, p.z
        )));
    }
    let cells = cfg.axis_cells();
    let axis = |c: f64| -> u32 {
        let v = ((c + 1.0) * 0.5 * cells as f64).floor();
        if v < 0.0 {
            0
        } else if v >= cells as f64 {
            cells - 1
        } else {
            v as u32
        }
    };
    Ok((axis(p.x), axis(p.y), axis(p.z)))
}

/// Pack axis coordinates into a `VoxelIndex`.
pub fn encode_index(vx: u32, vy: u32, vz: u32, cfg: &GridConfig) -> Result<VoxelIndex> {
    let cells = cfg.axis_cells();
    if vx >= cells || vy >= cells || vz >= cells {
        return Err(Error::Input(format!(
            "axis value out of range: ({vx}, {vy}, {vz}) with {cells} cells per axis"
        )));
    }
    let n = cfg.n_bits();
    Ok(VoxelIndex((vx << (2 * n)) | (vy << n) | vz))
}

/// Unpack a `VoxelIndex` into axis coordinates.
#[inline]
pub fn decode_index(v: VoxelIndex, cfg: &GridConfig) -> (u32, u32, u32) {
    let n = cfg.n_bits();
    let mask = cfg.axis_cells() - 1;
    ((v.0 >> (2 * n)) & mask, (v.0 >> n) & mask, v.0 & mask)
}

/// Quantize and pack in one go; the common path for both scatter and search.
#[inline]
pub fn voxel_of(p: &Point3, cfg: &GridConfig) -> Result<VoxelIndex> {
    let (vx, vy, vz) = quantize(p, cfg)?;
    encode_index(vx, vy, vz, cfg)
}

/// The six signed single-axis steps `{+-1, +-2^N, +-2^2N}` in packed index
/// space. Raw steps can wrap across axis boundaries (e.g. Vz = 2^N-1 plus 1
/// leaks into the next y row), so callers must bounds-check each move per
/// axis; `axis_neighbors` does that.
pub fn neighbor_offsets(cfg: &GridConfig) -> [i32; 6] {
    let n = cfg.n_bits();
    let z = 1i32;
    let y = 1i32 << n;
    let x = 1i32 << (2 * n);
    [z, -z, y, -y, x, -x]
}

/// In-bounds axis neighbors of `v`, in the fixed order +z, -z, +y, -y, +x, -x.
/// Steps that would leave [0, 2^N) on their axis are skipped, not wrapped.
pub fn axis_neighbors(v: VoxelIndex, cfg: &GridConfig) -> impl Iterator<Item = VoxelIndex> {
    let (vx, vy, vz) = decode_index(v, cfg);
    let n = cfg.n_bits();
    let last = cfg.axis_cells() - 1;
    let candidates = [
        (vz < last).then(|| v.0 + 1),
        (vz > 0).then(|| v.0 - 1),
        (vy < last).then(|| v.0 + (1 << n)),
        (vy > 0).then(|| v.0 - (1 << n)),
        (vx < last).then(|| v.0 + (1 << (2 * n))),
        (vx > 0).then(|| v.0 - (1 << (2 * n))),
    ];
    candidates.into_iter().flatten().map(VoxelIndex)
}

/// Manhattan distance between two cells in axis-coordinate space.
pub fn manhattan(a: VoxelIndex, b: VoxelIndex, cfg: &GridConfig) -> u32 {
    let (ax, ay, az) = decode_index(a, cfg);
    let (bx, by, bz) = decode_index(b, cfg);
    ax.abs_diff(bx) + ay.abs_diff(by) + az.abs_diff(bz)
}
