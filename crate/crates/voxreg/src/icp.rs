//! The registration loop: correspondence search, rigid-transform
//! estimation, convergence bookkeeping.
//!
//! The target grid (histogram -> offsets -> arena -> scatter -> dilate) is
//! built exactly once; the target never moves, so only search and
//! estimation repeat per iteration. Convergence is the change in RMSE
//! between consecutive iterations dropping below a threshold, with an
//! iteration cap.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::dilation::dilate;
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::nns::{brute_force_nn, kdtree_nn, search_all_with_tags, KdTree, NnResult, Route};
use crate::point::{dist_sq, Point3, PointCloud};
use crate::timing::Stopwatch;
use crate::transform::RigidTransform;
use crate::voxelgrid::{
    allocate_arena, build_histogram, compute_offsets, scatter_points, AddrOffsets, ExecMode,
    VoxelArena, VoxelHistogram,
};

use rayon::prelude::*;

/// Correspondence backend for the loop. The dilation grid is the method
/// under study; brute force and the kd-tree are the exact baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DilationIcp,
    BruteIcp,
    KdtreeIcp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DilationIcp, Method::BruteIcp, Method::KdtreeIcp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::DilationIcp => "dilation-icp",
            Method::BruteIcp => "brute-icp",
            Method::KdtreeIcp => "kdtree-icp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dilation-icp" => Ok(Method::DilationIcp),
            "brute-icp" => Ok(Method::BruteIcp),
            "kdtree-icp" => Ok(Method::KdtreeIcp),
            other => Err(Error::Input(format!(
                "unknown method '{other}' (expected dilation-icp, brute-icp or kdtree-icp)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IcpConfig {
    pub grid: GridConfig,
    pub max_iterations: u32,
    pub rmse_delta_threshold: f64,
    /// Iterations during which dilation tags are honored; `None` keeps
    /// them for the whole run. After the warmup, tagged voxels are treated
    /// as empty and fall back to the global search.
    pub dilation_warmup_iters: Option<u32>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            grid: GridConfig::default_grid(),
            max_iterations: 50,
            rmse_delta_threshold: 1e-5,
            dilation_warmup_iters: None,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Input("max_iterations must be >= 1".into()));
        }
        if !(self.rmse_delta_threshold > 0.0) {
            return Err(Error::Input(format!(
                "rmse_delta_threshold must be > 0, got {}",
                self.rmse_delta_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RouteCounts {
    pub local: usize,
    pub redirected: usize,
    pub global_fallback: usize,
}

impl RouteCounts {
    fn tally(results: &[NnResult]) -> RouteCounts {
        let mut counts = RouteCounts::default();
        for r in results {
            match r.route {
                Route::Local => counts.local += 1,
                Route::Redirected => counts.redirected += 1,
                Route::GlobalFallback => counts.global_fallback += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.local + self.redirected + self.global_fallback
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub rmse: f64,
    pub routes: RouteCounts,
    pub elapsed_secs: f64,
}

/// Wall time per pipeline stage, in seconds. Build stages are zero for the
/// baseline methods, which have no grid to build.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimes {
    pub voh_secs: f64,
    pub moc_secs: f64,
    pub vdma_secs: f64,
    pub ddma_secs: f64,
    pub nns_total_secs: f64,
    pub estimate_total_secs: f64,
}

impl StageTimes {
    pub fn sum(&self) -> f64 {
        self.voh_secs
            + self.moc_secs
            + self.vdma_secs
            + self.ddma_secs
            + self.nns_total_secs
            + self.estimate_total_secs
    }
}

#[derive(Debug)]
pub struct IcpTrace {
    pub iterations: Vec<IterationRecord>,
    pub stage_times: StageTimes,
    pub converged: bool,
    pub iterations_used: u32,
    pub final_rmse: f64,
    /// True if any per-iteration estimate hit a rank-deficient covariance.
    pub degenerate_estimate: bool,
}

/// Result of the rigid solve; `degenerate` flags a rank-deficient
/// cross-covariance (collinear or coincident points) where the rotation is
/// not unique — the returned transform is still a valid minimizer.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub transform: RigidTransform,
    pub degenerate: bool,
}

/// Least-squares rigid transform taking `src` onto `dst`: cross-covariance
/// SVD with determinant-sign correction, so the result is always a proper
/// rotation (no reflections).
pub fn estimate_transform(src: &[Point3], dst: &[Point3]) -> Result<Estimate> {
    if src.len() != dst.len() {
        return Err(Error::Input(format!(
            "pair list lengths differ: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Input(format!(
            "rigid estimation needs >= 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mut src_mean = Vector3::zeros();
    let mut dst_mean = Vector3::zeros();
    for (p, q) in src.iter().zip(dst) {
        src_mean += Vector3::new(p.x, p.y, p.z);
        dst_mean += Vector3::new(q.x, q.y, q.z);
    }
    src_mean /= n;
    dst_mean /= n;

    // H = sum (q - q̄)(p - p̄)^T
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        let pc = Vector3::new(p.x, p.y, p.z) - src_mean;
        let qc = Vector3::new(q.x, q.y, q.z) - dst_mean;
        h += qc * pc.transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let degenerate = sv[0] <= 1e-300 || sv[1] <= 1e-12 * sv[0];

    let rotation = if sv[0] <= 1e-300 {
        // All points coincide after centering; any rotation minimizes, pick
        // the identity.
        Matrix3::identity()
    } else {
        let u = svd.u.expect("3x3 svd");
        let v_t = svd.v_t.expect("3x3 svd");
        let mut correction = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            correction[(2, 2)] = -1.0;
        }
        u * correction * v_t
    };
    let translation = dst_mean - rotation * src_mean;
    Ok(Estimate {
        transform: RigidTransform {
            rotation,
            translation,
        },
        degenerate,
    })
}

/// Root mean square distance between paired lists.
pub fn rmse(src: &[Point3], dst: &[Point3]) -> Result<f64> {
    if src.len() != dst.len() {
        return Err(Error::Input(format!(
            "pair list lengths differ: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.is_empty() {
        return Err(Error::Input("rmse of empty pair list".into()));
    }
    let sum: f64 = src.iter().zip(dst).map(|(p, q)| dist_sq(p, q)).sum();
    Ok((sum / src.len() as f64).sqrt())
}

/// The voxel pipeline built once over the (fixed) target cloud, plus how
/// long each build stage took: VOH = histogram, MOC = offsets, VDMA =
/// scatter, DDMA = dilation.
pub struct TargetGrid {
    pub cfg: GridConfig,
    pub hist: VoxelHistogram,
    pub offs: AddrOffsets,
    pub arena: VoxelArena,
    pub voh_secs: f64,
    pub moc_secs: f64,
    pub vdma_secs: f64,
    pub ddma_secs: f64,
}

impl TargetGrid {
    pub fn build(target: &PointCloud, cfg: GridConfig, mode: ExecMode) -> Result<TargetGrid> {
        let sw = Stopwatch::start();
        let hist = build_histogram(target, &cfg, mode)?;
        let voh_secs = sw.elapsed_secs();

        let sw = Stopwatch::start();
        let offs = compute_offsets(&hist);
        let moc_secs = sw.elapsed_secs();

        let sw = Stopwatch::start();
        let arena = allocate_arena(&offs)?;
        scatter_points(target, &cfg, &offs, &arena, mode)?;
        let vdma_secs = sw.elapsed_secs();

        let sw = Stopwatch::start();
        dilate(&arena, &offs, &cfg, mode);
        let ddma_secs = sw.elapsed_secs();

        Ok(TargetGrid {
            cfg,
            hist,
            offs,
            arena,
            voh_secs,
            moc_secs,
            vdma_secs,
            ddma_secs,
        })
    }
}

enum Matcher<'g> {
    Grid {
        grid: &'g TargetGrid,
        warmup: Option<u32>,
    },
    Brute,
    Kd(KdTree),
}

impl Matcher<'_> {
    fn correspond(
        &self,
        transformed: &[Point3],
        target: &PointCloud,
        iteration: u32,
        mode: ExecMode,
    ) -> Result<Vec<NnResult>> {
        match self {
            Matcher::Grid { grid, warmup } => {
                let honor_tags = warmup.map_or(true, |w| iteration <= w);
                search_all_with_tags(
                    transformed,
                    &grid.arena,
                    &grid.offs,
                    &grid.cfg,
                    target,
                    mode,
                    honor_tags,
                )
            }
            Matcher::Brute => match mode {
                ExecMode::Serial => transformed
                    .iter()
                    .map(|q| brute_force_nn(q, target))
                    .collect(),
                ExecMode::Parallel => transformed
                    .par_iter()
                    .map(|q| brute_force_nn(q, target))
                    .collect(),
            },
            Matcher::Kd(tree) => match mode {
                ExecMode::Serial => transformed.iter().map(|q| kdtree_nn(q, tree)).collect(),
                ExecMode::Parallel => transformed
                    .par_iter()
                    .map(|q| kdtree_nn(q, tree))
                    .collect(),
            },
        }
    }
}

fn icp_loop(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
    mode: ExecMode,
    matcher: &Matcher,
    mut stage_times: StageTimes,
) -> Result<(RigidTransform, IcpTrace)> {
    let mut cumulative = RigidTransform::identity();
    let mut transformed: Vec<Point3> = source.points.clone();
    let mut matched: Vec<Point3> = Vec::with_capacity(source.len());
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut prev_rmse: Option<f64> = None;
    let mut converged = false;
    let mut degenerate_estimate = false;

    for iteration in 1..=cfg.max_iterations {
        let iter_sw = Stopwatch::start();

        let sw = Stopwatch::start();
        let results = matcher.correspond(&transformed, target, iteration, mode)?;
        stage_times.nns_total_secs += sw.elapsed_secs();

        matched.clear();
        matched.extend(results.iter().map(|r| target.points[r.best_index]));

        let sw = Stopwatch::start();
        let estimate = estimate_transform(&transformed, &matched)?;
        stage_times.estimate_total_secs += sw.elapsed_secs();
        degenerate_estimate |= estimate.degenerate;

        cumulative = estimate.transform.compose(&cumulative);
        if cumulative.orthonormality_error() > 1e-9 {
            cumulative.renormalize();
        }
        // Re-derive from the pristine source so numeric drift never
        // compounds across iterations.
        for (out, p) in transformed.iter_mut().zip(&source.points) {
            *out = cumulative.apply(p);
        }

        let current_rmse = rmse(&transformed, &matched)?;
        records.push(IterationRecord {
            iteration,
            rmse: current_rmse,
            routes: RouteCounts::tally(&results),
            elapsed_secs: iter_sw.elapsed_secs(),
        });

        if let Some(prev) = prev_rmse {
            if (prev - current_rmse).abs() < cfg.rmse_delta_threshold {
                converged = true;
                break;
            }
        }
        prev_rmse = Some(current_rmse);
    }

    let final_rmse = records.last().map(|r| r.rmse).unwrap_or(f64::NAN);
    let iterations_used = records.len() as u32;
    Ok((
        cumulative,
        IcpTrace {
            iterations: records,
            stage_times,
            converged,
            iterations_used,
            final_rmse,
            degenerate_estimate,
        },
    ))
}

fn check_registration_inputs(source: &PointCloud, target: &PointCloud) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Input("registration needs non-empty clouds".into()));
    }
    Ok(())
}

/// Register `source` onto `target` over an already-built grid. Useful when
/// the caller also wants the grid (memory accounting, debug dumps).
pub fn register_on_grid(
    source: &PointCloud,
    target: &PointCloud,
    grid: &TargetGrid,
    cfg: &IcpConfig,
    mode: ExecMode,
) -> Result<(RigidTransform, IcpTrace)> {
    cfg.validate()?;
    check_registration_inputs(source, target)?;
    let stage_times = StageTimes {
        voh_secs: grid.voh_secs,
        moc_secs: grid.moc_secs,
        vdma_secs: grid.vdma_secs,
        ddma_secs: grid.ddma_secs,
        ..StageTimes::default()
    };
    let matcher = Matcher::Grid {
        grid,
        warmup: cfg.dilation_warmup_iters,
    };
    icp_loop(source, target, cfg, mode, &matcher, stage_times)
}

/// Dilation-grid registration: builds the target grid once, then iterates.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
    mode: ExecMode,
) -> Result<(RigidTransform, IcpTrace)> {
    cfg.validate()?;
    check_registration_inputs(source, target)?;
    let grid = TargetGrid::build(target, cfg.grid, mode)?;
    register_on_grid(source, target, &grid, cfg, mode)
}

/// Same loop, selectable correspondence backend.
pub fn register_with_method(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
    mode: ExecMode,
    method: Method,
) -> Result<(RigidTransform, IcpTrace)> {
    match method {
        Method::DilationIcp => register(source, target, cfg, mode),
        Method::BruteIcp => {
            cfg.validate()?;
            check_registration_inputs(source, target)?;
            icp_loop(
                source,
                target,
                cfg,
                mode,
                &Matcher::Brute,
                StageTimes::default(),
            )
        }
        Method::KdtreeIcp => {
            cfg.validate()?;
            check_registration_inputs(source, target)?;
            let sw = Stopwatch::start();
            let tree = KdTree::build(target)?;
            // Tree construction is this method's analogue of the grid build.
            let stage_times = StageTimes {
                vdma_secs: sw.elapsed_secs(),
                ..StageTimes::default()
            };
            icp_loop(source, target, cfg, mode, &Matcher::Kd(tree), stage_times)
        }
    }
}
