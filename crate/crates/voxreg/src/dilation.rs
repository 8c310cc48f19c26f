//! Layered voxel dilation: occupied voxels propagate their index into
//! empty axis-neighbors so nearby queries can resolve locally.
//!
//! An empty voxel reached by dilation gets a *tag* in its state word: the
//! flag bit (bit 31) plus the packed index of an occupied "root" voxel.
//! Tags are single-hop — when a tagged voxel propagates further in a later
//! layer it forwards the root it carries, not its own index, so resolving
//! any tag is always one lookup. Layers run synchronously: every write of
//! layer i is computed from the state left by layer i-1, which bounds the
//! tagged region after L layers by the Manhattan ball of radius L around
//! the occupied set (clipped at the grid boundary).

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::grid::{axis_neighbors, GridConfig, VoxelIndex};
use crate::voxelgrid::{AddrOffsets, ExecMode, VoxelArena, STATE_SLOT};

/// State-word flag bit marking a dilated voxel.
pub const DILATED_FLAG: u32 = 1 << 31;

/// Tag a state word with the root voxel that reached it.
#[inline]
pub fn mask(root: VoxelIndex) -> u32 {
    debug_assert_eq!(root.0 & DILATED_FLAG, 0);
    root.0 | DILATED_FLAG
}

/// Split a state word into its value and the dilated flag. Plain counts
/// pass through unchanged.
#[inline]
pub fn unmask(state: u32) -> (u32, bool) {
    (state & !DILATED_FLAG, state & DILATED_FLAG != 0)
}

/// Non-empty voxels (count or tag) with their resolved roots, the sources
/// for the next dilation layer.
fn collect_sources(
    arena: &VoxelArena,
    offs: &AddrOffsets,
    voxel_count: u32,
    parallel: bool,
) -> Vec<(VoxelIndex, VoxelIndex)> {
    let source_of = |v: u32| -> Option<(VoxelIndex, VoxelIndex)> {
        let state = arena.load(offs.offset(VoxelIndex(v)) + STATE_SLOT);
        if state == 0 {
            return None;
        }
        let (value, tagged) = unmask(state);
        let root = if tagged { VoxelIndex(value) } else { VoxelIndex(v) };
        Some((VoxelIndex(v), root))
    };
    if parallel {
        (0..voxel_count).into_par_iter().filter_map(source_of).collect()
    } else {
        (0..voxel_count).filter_map(source_of).collect()
    }
}

/// Run `cfg.dilation_layers()` synchronous dilation passes over the arena.
///
/// Serial mode is the deterministic golden reference: sources are visited
/// in ascending packed index, neighbors in the fixed +z,-z,+y,-y,+x,-x
/// order, and the first writer of a voxel wins. Parallel lanes partition
/// the source set and guard each neighbor's check-empty-then-write with
/// that voxel's lock word; the resulting tag *set* is identical, though a
/// contested voxel may record a different (still valid) root.
pub fn dilate(arena: &VoxelArena, offs: &AddrOffsets, cfg: &GridConfig, mode: ExecMode) {
    assert_eq!(
        offs.len(),
        cfg.voxel_count() as usize,
        "offsets were built for a different grid size"
    );
    assert_eq!(
        arena.len() as u64,
        offs.total_slots(),
        "arena does not match offsets"
    );
    let voxel_count = cfg.voxel_count();

    for _layer in 0..cfg.dilation_layers() {
        match mode {
            ExecMode::Serial => {
                let sources = collect_sources(arena, offs, voxel_count, false);
                let mut changed = false;
                for (v, root) in sources {
                    for nb in axis_neighbors(v, cfg) {
                        let slot = offs.offset(nb) + STATE_SLOT;
                        if arena.load(slot) == 0 {
                            arena.store(slot, mask(root));
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            ExecMode::Parallel => {
                let sources = collect_sources(arena, offs, voxel_count, true);
                let changed = AtomicBool::new(false);
                sources.par_iter().for_each(|&(v, root)| {
                    for nb in axis_neighbors(v, cfg) {
                        let base = offs.offset(nb);
                        arena.acquire_lock(base);
                        if arena.load(base + STATE_SLOT) == 0 {
                            arena.store(base + STATE_SLOT, mask(root));
                            changed.store(true, Ordering::Relaxed);
                        }
                        arena.release_lock(base);
                    }
                });
                if !changed.load(Ordering::Relaxed) {
                    break;
                }
            }
        }
        // The set of non-empty voxels only grows, so a layer that changes
        // nothing ends the process early.
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{decode_index, encode_index, manhattan};
    use crate::ingest::{gen_synthetic, SyntheticKind};
    use crate::point::{Point3, PointCloud};
    use crate::voxelgrid::{allocate_arena, build_histogram, compute_offsets, scatter_points};

    #[test]
    fn mask_unmask_roundtrip() {
        assert_eq!(mask(VoxelIndex(2184)), 0x8000_0888);
        assert_eq!(unmask(0x8000_0888), (2184, true));
        assert_eq!(unmask(7), (7, false));
        assert_eq!(unmask(mask(VoxelIndex(0))), (0, true));
    }

    struct Grid {
        cfg: GridConfig,
        offs: AddrOffsets,
        arena: VoxelArena,
    }

    /// Grid with the given voxels holding one synthetic point each.
    fn grid_with_occupied(n_bits: u32, layers: u32, cells: &[(u32, u32, u32)]) -> Grid {
        let cfg = GridConfig::new(n_bits, layers).unwrap();
        let edge = cfg.voxel_edge();
        let points: Vec<Point3> = cells
            .iter()
            .map(|&(x, y, z)| {
                Point3::new(
                    -1.0 + (x as f64 + 0.5) * edge,
                    -1.0 + (y as f64 + 0.5) * edge,
                    -1.0 + (z as f64 + 0.5) * edge,
                )
            })
            .collect();
        let cloud = PointCloud::new(points, "cells");
        let hist = build_histogram(&cloud, &cfg, ExecMode::Serial).unwrap();
        let offs = compute_offsets(&hist);
        let arena = allocate_arena(&offs).unwrap();
        scatter_points(&cloud, &cfg, &offs, &arena, ExecMode::Serial).unwrap();
        Grid { cfg, offs, arena }
    }

    fn tagged_set(g: &Grid) -> Vec<(u32, u32)> {
        (0..g.cfg.voxel_count())
            .filter_map(|v| {
                let state = g.arena.load(g.offs.offset(VoxelIndex(v)) + STATE_SLOT);
                let (value, tagged) = unmask(state);
                tagged.then_some((v, value))
            })
            .collect()
    }

    /// Brute-force clipped Manhattan ball around a set of cells, minus the
    /// cells themselves.
    fn manhattan_ball(
        cfg: &GridConfig,
        centers: &[(u32, u32, u32)],
        radius: u32,
    ) -> Vec<u32> {
        let cells = cfg.axis_cells();
        let mut hit = Vec::new();
        for x in 0..cells {
            for y in 0..cells {
                for z in 0..cells {
                    let inside = centers.iter().any(|&(cx, cy, cz)| {
                        let d = cx.abs_diff(x) + cy.abs_diff(y) + cz.abs_diff(z);
                        d >= 1 && d <= radius
                    });
                    let is_center = centers.iter().any(|&c| c == (x, y, z));
                    if inside && !is_center {
                        hit.push(encode_index(x, y, z, cfg).unwrap().0);
                    }
                }
            }
        }
        hit.sort_unstable();
        hit
    }

    #[test]
    fn single_interior_voxel_one_layer() {
        let g = grid_with_occupied(4, 1, &[(8, 8, 8)]);
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
        let tags = tagged_set(&g);
        assert_eq!(tags.len(), 6);
        let root = encode_index(8, 8, 8, &g.cfg).unwrap().0;
        assert_eq!(root, 2184);
        for (v, r) in &tags {
            assert_eq!(*r, root);
            assert_eq!(manhattan(VoxelIndex(*v), VoxelIndex(root), &g.cfg), 1);
        }
    }

    #[test]
    fn corner_voxel_clips_to_three_neighbors() {
        let g = grid_with_occupied(4, 1, &[(0, 0, 0)]);
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
        let tags = tagged_set(&g);
        assert_eq!(tags.len(), 3);
        let expect = manhattan_ball(&g.cfg, &[(0, 0, 0)], 1);
        let got: Vec<u32> = tags.iter().map(|&(v, _)| v).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn two_layers_cover_radius_two_ball() {
        let g = grid_with_occupied(4, 2, &[(8, 8, 8)]);
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
        let got: Vec<u32> = tagged_set(&g).iter().map(|&(v, _)| v).collect();
        let expect = manhattan_ball(&g.cfg, &[(8, 8, 8)], 2);
        assert_eq!(expect.len(), 24);
        assert_eq!(got, expect);
    }

    #[test]
    fn tagged_set_matches_manhattan_ball_multi_source() {
        let centers = [(2, 3, 4), (12, 12, 3), (7, 1, 14)];
        for layers in 1..=3 {
            let g = grid_with_occupied(4, layers, &centers);
            dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
            let got: Vec<u32> = tagged_set(&g).iter().map(|&(v, _)| v).collect();
            assert_eq!(got, manhattan_ball(&g.cfg, &centers, layers));
        }
    }

    #[test]
    fn roots_are_occupied_and_single_hop() {
        let g = grid_with_occupied(4, 10, &[(8, 8, 8), (1, 2, 3)]);
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
        for (v, root) in tagged_set(&g) {
            let state = g.arena.load(g.offs.offset(VoxelIndex(root)) + STATE_SLOT);
            let (count, tagged) = unmask(state);
            assert!(!tagged, "tag at {v} points to another tag");
            assert!(count >= 1, "tag at {v} points to an empty voxel");
        }
    }

    #[test]
    fn occupied_voxels_untouched_and_locks_released() {
        let g = grid_with_occupied(3, 4, &[(1, 1, 1), (6, 2, 5)]);
        let before = g.arena.snapshot();
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Parallel);
        let after = g.arena.snapshot();
        for v in 0..g.cfg.voxel_count() {
            let base = g.offs.offset(VoxelIndex(v));
            assert_eq!(after[base], 0, "lock at voxel {v} still held");
            if before[base + STATE_SLOT] != 0 {
                assert_eq!(
                    before[base + STATE_SLOT],
                    after[base + STATE_SLOT],
                    "occupied voxel {v} modified"
                );
            }
        }
    }

    #[test]
    fn layering_is_monotone() {
        let centers = [(4, 9, 2), (11, 5, 13)];
        let mut previous: Vec<u32> = Vec::new();
        for layers in 0..=4 {
            let g = grid_with_occupied(4, layers, &centers);
            dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
            let mut now: Vec<u32> = tagged_set(&g).iter().map(|&(v, _)| v).collect();
            now.sort_unstable();
            for v in &previous {
                assert!(now.binary_search(v).is_ok(), "voxel {v} lost at L={layers}");
            }
            previous = now;
        }
    }

    #[test]
    fn zero_layers_is_noop_and_empty_grid_is_noop() {
        let g = grid_with_occupied(4, 0, &[(8, 8, 8)]);
        dilate(&g.arena, &g.offs, &g.cfg, ExecMode::Serial);
        assert!(tagged_set(&g).is_empty());

        let cfg = GridConfig::new(3, 5).unwrap();
        let hist = build_histogram(&PointCloud::new(vec![], "none"), &cfg, ExecMode::Serial).unwrap();
        let offs = compute_offsets(&hist);
        let arena = allocate_arena(&offs).unwrap();
        dilate(&arena, &offs, &cfg, ExecMode::Parallel);
        assert!(arena.snapshot().iter().all(|&s| s == 0));
    }

    #[test]
    fn parallel_tag_set_matches_serial_roots_stay_valid() {
        let cfg = GridConfig::new(4, 6).unwrap();
        let cloud = gen_synthetic(SyntheticKind::TwoDensityCluster, 4000, 17).unwrap();
        let hist = build_histogram(&cloud, &cfg, ExecMode::Serial).unwrap();
        let offs = compute_offsets(&hist);

        let build = |mode: ExecMode| {
            let arena = allocate_arena(&offs).unwrap();
            scatter_points(&cloud, &cfg, &offs, &arena, ExecMode::Serial).unwrap();
            dilate(&arena, &offs, &cfg, mode);
            arena
        };
        let serial = build(ExecMode::Serial);
        let parallel = build(ExecMode::Parallel);

        let tag_voxels = |arena: &VoxelArena| -> Vec<u32> {
            (0..cfg.voxel_count())
                .filter(|&v| {
                    unmask(arena.load(offs.offset(VoxelIndex(v)) + STATE_SLOT)).1
                })
                .collect()
        };
        assert_eq!(tag_voxels(&serial), tag_voxels(&parallel));

        // Parallel roots may differ from serial but must be occupied and
        // within Manhattan distance L.
        for v in tag_voxels(&parallel) {
            let (root, _) = unmask(parallel.load(offs.offset(VoxelIndex(v)) + STATE_SLOT));
            let (count, tagged) = unmask(parallel.load(offs.offset(VoxelIndex(root)) + STATE_SLOT));
            assert!(!tagged && count >= 1);
            let d = manhattan(VoxelIndex(v), VoxelIndex(root), &cfg);
            assert!(d <= cfg.dilation_layers(), "root {d} steps away");
            let _ = decode_index(VoxelIndex(v), &cfg);
        }
    }
}
