//! Point cloud registration with dilation-localized nearest neighbor search
//! and occupancy-proportional voxel memory.
//!
//! The pipeline builds a voxel grid over the target cloud once:
//! occupancy histogram -> per-voxel address offsets -> segmented arena ->
//! point scatter -> voxel dilation. Each voxel owns a segment sized by its
//! actual point count (plus a lock word and a state word), instead of a
//! fixed 64 KiB block, which is where the memory saving comes from. ICP then
//! alternates localized NNS over the dilated grid with an SVD rigid solve.
//!
//! Modules follow the stage order: [`grid`] (index arithmetic), [`ingest`]
//! (loaders, normalization, synthetic clouds), [`voxelgrid`] (histogram /
//! offsets / arena / scatter), [`dilation`], [`nns`], [`icp`], [`memmodel`]
//! (byte accounting vs the monolithic baseline) and [`bench`].

pub mod bench;
pub mod dilation;
pub mod error;
pub mod grid;
pub mod icp;
pub mod ingest;
pub mod memmodel;
pub mod nns;
pub mod point;
pub mod timing;
pub mod transform;
pub mod voxelgrid;

pub use error::{Error, Result};
pub use grid::{GridConfig, VoxelIndex};
pub use point::{Point3, PointCloud};
pub use transform::RigidTransform;
pub use voxelgrid::ExecMode;
