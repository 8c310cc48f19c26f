//! Nearest neighbor search over the dilated voxel arena, plus the exact
//! brute-force and kd-tree baselines used as oracles and benchmark
//! comparators.
//!
//! Grid search resolves a query to a candidate set in O(1): the points of
//! its own voxel, the points of the tag's root voxel (one redirect), or —
//! when the voxel is empty and untagged — the whole target cloud. Within
//! the candidate set the minimum is exact, ties broken by smallest point
//! index so every mode and backend agrees bit-for-bit.

use rayon::prelude::*;

use crate::dilation::unmask;
use crate::error::{Error, Result};
use crate::grid::{voxel_of, GridConfig, VoxelIndex};
use crate::point::{dist_sq, Point3, PointCloud};
use crate::voxelgrid::{AddrOffsets, ExecMode, VoxelArena, POINTS_SLOT, STATE_SLOT};

/// How a query was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// The query's own voxel held points.
    Local,
    /// The query's voxel carried a dilation tag; searched the root voxel.
    Redirected,
    /// Empty, untagged voxel (or a baseline searcher): exact global scan.
    GlobalFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnResult {
    pub best_index: usize,
    pub best_dist_sq: f64,
    pub route: Route,
}

/// Exact nearest neighbor by full scan; ties go to the smallest index.
pub fn brute_force_nn(query: &Point3, target: &PointCloud) -> Result<NnResult> {
    if target.is_empty() {
        return Err(Error::Input("nearest neighbor of empty target".into()));
    }
    let mut best = f64::INFINITY;
    let mut best_index = 0usize;
    // Ascending scan with strict less keeps the first (smallest) index on ties.
    for (i, p) in target.points.iter().enumerate() {
        let d = dist_sq(query, p);
        if d < best {
            best = d;
            best_index = i;
        }
    }
    Ok(NnResult {
        best_index,
        best_dist_sq: best,
        route: Route::GlobalFallback,
    })
}

/// Localized search over the arena (optionally ignoring dilation tags, in
/// which case tagged voxels fall back to the global scan).
pub(crate) fn search_with_tags(
    query: &Point3,
    arena: &VoxelArena,
    offs: &AddrOffsets,
    cfg: &GridConfig,
    target: &PointCloud,
    honor_tags: bool,
) -> Result<NnResult> {
    if target.is_empty() {
        return Err(Error::Input("nearest neighbor of empty target".into()));
    }
    let v = voxel_of(query, cfg)?;
    let mut base = offs.offset(v);
    let (value, tagged) = unmask(arena.load(base + STATE_SLOT));
    let (count, route) = if tagged {
        if honor_tags {
            // One redirect, by the single-hop tag invariant.
            base = offs.offset(VoxelIndex(value));
            (arena.load(base + STATE_SLOT), Route::Redirected)
        } else {
            (0, Route::GlobalFallback)
        }
    } else {
        (value, Route::Local)
    };

    if count == 0 {
        return brute_force_nn(query, target);
    }

    let mut best = f64::INFINITY;
    let mut best_index = usize::MAX;
    for s in 0..count as usize {
        let pi = arena.load(base + POINTS_SLOT + s) as usize;
        let d = dist_sq(query, &target.points[pi]);
        // Segment order is arbitrary after a parallel scatter, so the tie
        // break on index is explicit here.
        if d < best || (d == best && pi < best_index) {
            best = d;
            best_index = pi;
        }
    }
    Ok(NnResult {
        best_index,
        best_dist_sq: best,
        route,
    })
}

/// Nearest neighbor of one query point via the dilated grid.
pub fn search(
    query: &Point3,
    arena: &VoxelArena,
    offs: &AddrOffsets,
    cfg: &GridConfig,
    target: &PointCloud,
) -> Result<NnResult> {
    search_with_tags(query, arena, offs, cfg, target, true)
}

pub(crate) fn search_all_with_tags(
    source: &[Point3],
    arena: &VoxelArena,
    offs: &AddrOffsets,
    cfg: &GridConfig,
    target: &PointCloud,
    mode: ExecMode,
    honor_tags: bool,
) -> Result<Vec<NnResult>> {
    match mode {
        ExecMode::Serial => source
            .iter()
            .map(|q| search_with_tags(q, arena, offs, cfg, target, honor_tags))
            .collect(),
        ExecMode::Parallel => source
            .par_iter()
            .map(|q| search_with_tags(q, arena, offs, cfg, target, honor_tags))
            .collect(),
    }
}

/// Grid search for every source point. Search is read-only, so the
/// parallel result array is identical to the serial one.
pub fn search_all(
    source: &[Point3],
    arena: &VoxelArena,
    offs: &AddrOffsets,
    cfg: &GridConfig,
    target: &PointCloud,
    mode: ExecMode,
) -> Result<Vec<NnResult>> {
    search_all_with_tags(source, arena, offs, cfg, target, mode, true)
}

/// Exact 3-d tree over a target cloud: median split on the widest-ranked
/// axis rotation (x, y, z by depth), branch-and-bound descent.
pub struct KdTree {
    /// Point indices arranged so that each subtree's median sits at the
    /// middle of its range.
    order: Vec<u32>,
    points: Vec<Point3>,
}

impl KdTree {
    pub fn build(target: &PointCloud) -> Result<KdTree> {
        if target.is_empty() {
            return Err(Error::Input("kd-tree over empty target".into()));
        }
        let mut order: Vec<u32> = (0..target.len() as u32).collect();
        let points = target.points.clone();
        fn axis_key(p: &Point3, axis: usize) -> f64 {
            match axis {
                0 => p.x,
                1 => p.y,
                _ => p.z,
            }
        }
        fn split(order: &mut [u32], points: &[Point3], depth: usize) {
            if order.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = order.len() / 2;
            order.select_nth_unstable_by(mid, |&a, &b| {
                axis_key(&points[a as usize], axis)
                    .total_cmp(&axis_key(&points[b as usize], axis))
                    .then(a.cmp(&b))
            });
            let (lo, rest) = order.split_at_mut(mid);
            split(lo, points, depth + 1);
            split(&mut rest[1..], points, depth + 1);
        }
        split(&mut order, &points, 0);
        Ok(KdTree { order, points })
    }

    fn descend(
        &self,
        query: &Point3,
        lo: usize,
        hi: usize,
        depth: usize,
        best: &mut f64,
        best_index: &mut usize,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pi = self.order[mid] as usize;
        let p = &self.points[pi];
        let d = dist_sq(query, p);
        if d < *best || (d == *best && pi < *best_index) {
            *best = d;
            *best_index = pi;
        }
        let axis = depth % 3;
        let delta = match axis {
            0 => query.x - p.x,
            1 => query.y - p.y,
            _ => query.z - p.z,
        };
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.descend(query, near.0, near.1, depth + 1, best, best_index);
        // <= keeps exact tie-break correctness: an equal-distance point with
        // a smaller index may sit exactly on the splitting plane distance.
        if delta * delta <= *best {
            self.descend(query, far.0, far.1, depth + 1, best, best_index);
        }
    }
}

/// Exact nearest neighbor via the kd-tree; agrees with `brute_force_nn` on
/// every query, including ties.
pub fn kdtree_nn(query: &Point3, tree: &KdTree) -> Result<NnResult> {
    if tree.points.is_empty() {
        return Err(Error::Input("nearest neighbor of empty target".into()));
    }
    let mut best = f64::INFINITY;
    let mut best_index = usize::MAX;
    tree.descend(query, 0, tree.order.len(), 0, &mut best, &mut best_index);
    Ok(NnResult {
        best_index,
        best_dist_sq: best,
        route: Route::GlobalFallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::dilate;
    use crate::grid::GridConfig;
    use crate::ingest::{gen_synthetic, normalize_unit_sphere, SyntheticKind};
    use crate::voxelgrid::{allocate_arena, build_histogram, compute_offsets, scatter_points};

    fn build_grid(
        target: &PointCloud,
        n_bits: u32,
        layers: u32,
    ) -> (GridConfig, AddrOffsets, VoxelArena) {
        let cfg = GridConfig::new(n_bits, layers).unwrap();
        let hist = build_histogram(target, &cfg, ExecMode::Serial).unwrap();
        let offs = compute_offsets(&hist);
        let arena = allocate_arena(&offs).unwrap();
        scatter_points(target, &cfg, &offs, &arena, ExecMode::Serial).unwrap();
        dilate(&arena, &offs, &cfg, ExecMode::Serial);
        (cfg, offs, arena)
    }

    #[test]
    fn brute_force_examples() {
        let target = PointCloud::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
            "pair",
        );
        let r = brute_force_nn(&Point3::new(0.4, 0.0, 0.0), &target).unwrap();
        assert_eq!(r.best_index, 0);
        assert!((r.best_dist_sq - 0.16).abs() < 1e-15);

        let r = brute_force_nn(&Point3::new(1.0, 0.0, 0.0), &target).unwrap();
        assert_eq!(r.best_index, 1);
        assert_eq!(r.best_dist_sq, 0.0);
    }

    #[test]
    fn brute_force_tie_breaks_to_smallest_index() {
        let target = PointCloud::new(
            vec![
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(-1.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
            ],
            "ties",
        );
        let r = brute_force_nn(&Point3::ORIGIN, &target).unwrap();
        assert_eq!(r.best_index, 0);
    }

    #[test]
    fn empty_target_is_input_error() {
        let empty = PointCloud::new(vec![], "none");
        assert!(brute_force_nn(&Point3::ORIGIN, &empty).is_err());
        assert!(KdTree::build(&empty).is_err());
    }

    #[test]
    fn kdtree_matches_brute_force_on_random_queries() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::TwoDensityCluster, 5000, 31).unwrap())
                .unwrap();
        let queries = gen_synthetic(SyntheticKind::BoxVolume, 500, 32).unwrap();
        let tree = KdTree::build(&target).unwrap();
        for q in &queries.points {
            let kd = kdtree_nn(q, &tree).unwrap();
            let bf = brute_force_nn(q, &target).unwrap();
            assert_eq!(kd.best_index, bf.best_index);
            assert_eq!(kd.best_dist_sq, bf.best_dist_sq);
        }
    }

    #[test]
    fn occupied_voxel_query_matches_voxel_restricted_oracle() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::TwoDensityCluster, 3000, 8).unwrap())
                .unwrap();
        let (cfg, offs, arena) = build_grid(&target, 4, 0);
        let mut checked = 0;
        for q in &target.points {
            let r = search(q, &arena, &offs, &cfg, &target).unwrap();
            assert_eq!(r.route, Route::Local);
            // Oracle: brute force restricted to the points of q's voxel.
            let qv = voxel_of(q, &cfg).unwrap();
            let (best_i, best_d) = target
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| voxel_of(p, &cfg).unwrap() == qv)
                .map(|(i, p)| (i, dist_sq(q, p)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(r.best_index, best_i);
            assert_eq!(r.best_dist_sq, best_d);
            checked += 1;
        }
        assert_eq!(checked, target.len());
    }

    #[test]
    fn tagged_voxel_query_matches_root_voxel_oracle() {
        // One tight cluster so nearby space is tagged, not occupied.
        let target = PointCloud::new(
            vec![
                Point3::new(0.02, 0.01, 0.015),
                Point3::new(0.01, 0.02, 0.02),
                Point3::new(0.015, 0.005, 0.01),
            ],
            "cluster",
        );
        let (cfg, offs, arena) = build_grid(&target, 4, 3);
        // A query two cells over lands in a tagged voxel.
        let q = Point3::new(0.02 + 2.0 * cfg.voxel_edge(), 0.01, 0.015);
        let r = search(&q, &arena, &offs, &cfg, &target).unwrap();
        assert_eq!(r.route, Route::Redirected);
        let qv = voxel_of(&q, &cfg).unwrap();
        let (root, tagged) = unmask(arena.load(offs.offset(qv) + STATE_SLOT));
        assert!(tagged);
        // Oracle: brute force over the root voxel's point set.
        let (best_i, best_d) = target
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| voxel_of(p, &cfg).unwrap() == VoxelIndex(root))
            .map(|(i, p)| (i, dist_sq(&q, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        assert_eq!(r.best_index, best_i);
        assert_eq!(r.best_dist_sq, best_d);
    }

    #[test]
    fn untagged_empty_voxel_falls_back_to_global() {
        let target = PointCloud::new(
            vec![Point3::new(0.01, 0.01, 0.01), Point3::new(0.03, 0.0, 0.0)],
            "tiny",
        );
        let (cfg, offs, arena) = build_grid(&target, 4, 1);
        let q = Point3::new(-0.9, -0.9, -0.9);
        let r = search(&q, &arena, &offs, &cfg, &target).unwrap();
        assert_eq!(r.route, Route::GlobalFallback);
        let bf = brute_force_nn(&q, &target).unwrap();
        assert_eq!(r.best_index, bf.best_index);
        assert_eq!(r.best_dist_sq, bf.best_dist_sq);
    }

    #[test]
    fn search_all_self_query_hits_zero_distance() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::BoxVolume, 400, 12).unwrap())
                .unwrap();
        let (cfg, offs, arena) = build_grid(&target, 4, 2);
        let results =
            search_all(&target.points, &arena, &offs, &cfg, &target, ExecMode::Serial).unwrap();
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r.best_dist_sq, 0.0);
            // With distinct points, a zero-distance hit is the point itself.
            assert_eq!(r.best_index, i);
        }
    }

    #[test]
    fn search_all_parallel_equals_serial() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::TwoDensityCluster, 1000, 4).unwrap())
                .unwrap();
        let queries = gen_synthetic(SyntheticKind::BoxVolume, 1000, 5).unwrap();
        let (cfg, offs, arena) = build_grid(&target, 4, 10);
        let serial =
            search_all(&queries.points, &arena, &offs, &cfg, &target, ExecMode::Serial).unwrap();
        let parallel =
            search_all(&queries.points, &arena, &offs, &cfg, &target, ExecMode::Parallel).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn converged_clouds_rarely_fall_back() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::TwoDensityCluster, 4000, 6).unwrap())
                .unwrap();
        let (cfg, offs, arena) = build_grid(&target, 4, 10);
        // "Converged" proxy: query the target against its own grid.
        let results =
            search_all(&target.points, &arena, &offs, &cfg, &target, ExecMode::Serial).unwrap();
        let fallbacks = results
            .iter()
            .filter(|r| r.route == Route::GlobalFallback)
            .count();
        assert!(
            (fallbacks as f64) < 0.05 * results.len() as f64,
            "{fallbacks} of {} queries fell back",
            results.len()
        );
    }

    #[test]
    fn dilated_result_respects_grid_geometry_bound() {
        let target =
            normalize_unit_sphere(&gen_synthetic(SyntheticKind::TwoDensityCluster, 2000, 14).unwrap())
                .unwrap();
        let (cfg, offs, arena) = build_grid(&target, 4, 10);
        let queries = gen_synthetic(SyntheticKind::BoxVolume, 2000, 15).unwrap();
        let slack = 2.0 * cfg.voxel_edge() * 3.0f64.sqrt();
        for q in &queries.points {
            let r = search(q, &arena, &offs, &cfg, &target).unwrap();
            if r.route != Route::Redirected {
                continue;
            }
            let qv = voxel_of(q, &cfg).unwrap();
            let (root, _) = unmask(arena.load(offs.offset(qv) + STATE_SLOT));
            let d = crate::grid::manhattan(qv, VoxelIndex(root), &cfg) as f64;
            let exact = brute_force_nn(q, &target).unwrap().best_dist_sq.sqrt();
            let got = r.best_dist_sq.sqrt();
            assert!(
                got <= exact + d * slack + 1e-12,
                "approximation bound violated: got {got}, exact {exact}, d {d}"
            );
        }
    }
}
