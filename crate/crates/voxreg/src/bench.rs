//! Benchmark harness: runs each (dataset, method) pair on the same seeded
//! perturbed instance and emits rows with per-stage timings, route
//! fractions, memory accounting and final error.
//!
//! Rows run sequentially for timing fidelity; within a row the method's
//! own execution mode applies. Timings come from the monotonic clock and
//! are excluded from reproducibility guarantees; everything else (iteration
//! counts, RMSE, memory) is deterministic for a fixed plan.

use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::icp::{register_on_grid, register_with_method, IcpConfig, IcpTrace, Method, TargetGrid};
use crate::ingest::{
    gen_synthetic, load_cloud, normalize_unit_sphere, perturb, PerturbationSpec, SyntheticKind,
    RNG_NAME,
};
use crate::memmodel::{account, MemReport};
use crate::point::PointCloud;
use crate::timing::Stopwatch;
use crate::voxelgrid::ExecMode;

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    File(PathBuf),
    Synthetic { kind: SyntheticKind, count: usize },
}

impl DatasetSpec {
    /// `sphere-surface:10000` style synthetic descriptor, or a file path.
    pub fn parse(s: &str) -> Result<DatasetSpec> {
        if let Some((kind, count)) = s.split_once(':') {
            if let Ok(kind) = kind.parse::<SyntheticKind>() {
                let count: usize = count.parse().map_err(|_| {
                    Error::Input(format!("bad synthetic point count '{count}' in '{s}'"))
                })?;
                return Ok(DatasetSpec::Synthetic { kind, count });
            }
        }
        Ok(DatasetSpec::File(PathBuf::from(s)))
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSpec::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSpec::Synthetic { kind, count } => format!("{kind}:{count}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<Method>,
    pub icp: IcpConfig,
    pub mode: ExecMode,
    pub repetitions: u32,
    /// Run one untimed repetition first to absorb first-touch noise.
    pub discard_warmup: bool,
    pub seed: u64,
    pub perturb_rotation_deg: f64,
    pub perturb_translation: f64,
    pub baseline_block_bytes: u64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            datasets: Vec::new(),
            methods: Vec::new(),
            icp: IcpConfig::default(),
            mode: ExecMode::Parallel,
            repetitions: 1,
            discard_warmup: true,
            seed: 1,
            perturb_rotation_deg: 25.0,
            perturb_translation: 0.1,
            baseline_block_bytes: crate::memmodel::DEFAULT_BASELINE_BLOCK_BYTES,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::Input("repetitions must be >= 1".into()));
        }
        self.icp.validate()
    }
}

/// One benchmark measurement. Fields that a method or a failed run cannot
/// produce are `None` and serialize as explicit nulls — the column set is
/// identical for every row.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub method: String,
    pub repetition: u32,
    pub points: Option<usize>,
    pub converged: Option<bool>,
    pub iterations: Option<u32>,
    pub final_rmse: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub voh_ms: Option<f64>,
    pub moc_ms: Option<f64>,
    pub vdma_ms: Option<f64>,
    pub ddma_ms: Option<f64>,
    pub nns_total_ms: Option<f64>,
    pub estimate_total_ms: Option<f64>,
    pub route_local: Option<usize>,
    pub route_redirected: Option<usize>,
    pub route_global_fallback: Option<usize>,
    pub mem_ours_bytes: Option<u64>,
    pub mem_baseline_bytes: Option<u64>,
    pub mem_saving_pct: Option<f64>,
    pub error: Option<String>,
}

impl BenchRow {
    fn failure(dataset: String, method: String, repetition: u32, error: String) -> BenchRow {
        BenchRow {
            dataset,
            method,
            repetition,
            points: None,
            converged: None,
            iterations: None,
            final_rmse: None,
            wall_time_s: None,
            voh_ms: None,
            moc_ms: None,
            vdma_ms: None,
            ddma_ms: None,
            nns_total_ms: None,
            estimate_total_ms: None,
            route_local: None,
            route_redirected: None,
            route_global_fallback: None,
            mem_ours_bytes: None,
            mem_baseline_bytes: None,
            mem_saving_pct: None,
            error: Some(error),
        }
    }
}

pub const CSV_HEADER: &str = "dataset,method,repetition,points,converged,iterations,final_rmse,\
wall_time_s,voh_ms,moc_ms,vdma_ms,ddma_ms,nns_total_ms,estimate_total_ms,\
route_local,route_redirected,route_global_fallback,\
mem_ours_bytes,mem_baseline_bytes,mem_saving_pct,error";

fn csv_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let error = r
            .error
            .as_deref()
            .map(|e| e.replace(',', ";").replace('\n', " "))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.method,
            r.repetition,
            csv_cell(&r.points),
            csv_cell(&r.converged),
            csv_cell(&r.final_rmse),
            csv_cell(&r.iterations),
            csv_cell(&r.wall_time_s),
            csv_cell(&r.voh_ms),
            csv_cell(&r.moc_ms),
            csv_cell(&r.vdma_ms),
            csv_cell(&r.ddma_ms),
            csv_cell(&r.nns_total_ms),
            csv_cell(&r.estimate_total_ms),
            csv_cell(&r.route_local),
            csv_cell(&r.route_redirected),
            csv_cell(&r.route_global_fallback),
            csv_cell(&r.mem_ours_bytes),
            csv_cell(&r.mem_baseline_bytes),
            csv_cell(&r.mem_saving_pct),
            error,
        ));
    }
    out
}

pub fn rows_to_jsonl(rows: &[BenchRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes"))
        .fold(String::new(), |mut acc, line| {
            acc.push_str(&line);
            acc.push('\n');
            acc
        })
}

/// Key-value echo of the plan; a run is reproducible from this alone
/// (timings aside).
pub fn manifest(plan: &BenchPlan) -> String {
    let mut out = String::new();
    out.push_str(&format!("voxreg_version = {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("rng = {RNG_NAME}\n"));
    out.push_str(&format!("seed = {}\n", plan.seed));
    for d in &plan.datasets {
        match d {
            DatasetSpec::File(p) => out.push_str(&format!("dataset = {}\n", p.display())),
            DatasetSpec::Synthetic { kind, count } => {
                out.push_str(&format!("dataset = {kind}:{count}\n"))
            }
        }
    }
    for m in &plan.methods {
        out.push_str(&format!("method = {m}\n"));
    }
    out.push_str(&format!("n_bits = {}\n", plan.icp.grid.n_bits()));
    out.push_str(&format!("layers = {}\n", plan.icp.grid.dilation_layers()));
    out.push_str(&format!("max_iters = {}\n", plan.icp.max_iterations));
    out.push_str(&format!("rmse_delta = {}\n", plan.icp.rmse_delta_threshold));
    out.push_str(&format!(
        "perturb = {},{}\n",
        plan.perturb_rotation_deg, plan.perturb_translation
    ));
    out.push_str(&format!("mode = {}\n", plan.mode));
    out.push_str(&format!("repetitions = {}\n", plan.repetitions));
    out.push_str(&format!("warmup = {}\n", plan.discard_warmup));
    out.push_str(&format!(
        "baseline_block_bytes = {}\n",
        plan.baseline_block_bytes
    ));
    out
}

struct PreparedInstance {
    source: PointCloud,
    target: PointCloud,
}

fn prepare_instance(plan: &BenchPlan, spec: &DatasetSpec) -> Result<PreparedInstance> {
    let raw = match spec {
        DatasetSpec::File(path) => load_cloud(path)?,
        DatasetSpec::Synthetic { kind, count } => gen_synthetic(*kind, *count, plan.seed)?,
    };
    raw.check_finite()?;
    let target = normalize_unit_sphere(&raw)?;
    let pspec = PerturbationSpec::new(
        plan.perturb_rotation_deg,
        plan.perturb_translation,
        plan.seed,
    )?;
    let (source, _truth) = perturb(&target, &pspec)?;
    Ok(PreparedInstance { source, target })
}

fn measure(
    plan: &BenchPlan,
    instance: &PreparedInstance,
    method: Method,
) -> Result<(IcpTrace, Option<MemReport>, f64)> {
    let sw = Stopwatch::start();
    match method {
        Method::DilationIcp => {
            let grid = TargetGrid::build(&instance.target, plan.icp.grid, plan.mode)?;
            let mem = account(&grid.offs, &plan.icp.grid, plan.baseline_block_bytes);
            let (_, trace) = register_on_grid(
                &instance.source,
                &instance.target,
                &grid,
                &plan.icp,
                plan.mode,
            )?;
            Ok((trace, Some(mem), sw.elapsed_secs()))
        }
        other => {
            let (_, trace) =
                register_with_method(&instance.source, &instance.target, &plan.icp, plan.mode, other)?;
            Ok((trace, None, sw.elapsed_secs()))
        }
    }
}

fn row_from_trace(
    dataset: &str,
    method: Method,
    repetition: u32,
    points: usize,
    trace: &IcpTrace,
    mem: Option<&MemReport>,
    wall_time_s: f64,
) -> BenchRow {
    let s = &trace.stage_times;
    let routes = trace
        .iterations
        .iter()
        .fold((0usize, 0usize, 0usize), |acc, it| {
            (
                acc.0 + it.routes.local,
                acc.1 + it.routes.redirected,
                acc.2 + it.routes.global_fallback,
            )
        });
    BenchRow {
        dataset: dataset.to_string(),
        method: method.name().to_string(),
        repetition,
        points: Some(points),
        converged: Some(trace.converged),
        iterations: Some(trace.iterations_used),
        final_rmse: Some(trace.final_rmse),
        wall_time_s: Some(wall_time_s),
        voh_ms: Some(s.voh_secs * 1e3),
        moc_ms: Some(s.moc_secs * 1e3),
        vdma_ms: Some(s.vdma_secs * 1e3),
        ddma_ms: Some(s.ddma_secs * 1e3),
        nns_total_ms: Some(s.nns_total_secs * 1e3),
        estimate_total_ms: Some(s.estimate_total_secs * 1e3),
        route_local: Some(routes.0),
        route_redirected: Some(routes.1),
        route_global_fallback: Some(routes.2),
        mem_ours_bytes: mem.map(|m| m.ours_total_bytes),
        mem_baseline_bytes: mem.map(|m| m.baseline_bytes),
        mem_saving_pct: mem.map(|m| m.saving_percent()),
        error: None,
    }
}

/// Run the whole plan: one row per (dataset, method, repetition). Dataset
/// failures produce an error row and the run continues.
pub fn run_bench(plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for spec in &plan.datasets {
        let label = spec.label();
        let instance = match prepare_instance(plan, spec) {
            Ok(i) => i,
            Err(e) => {
                for method in &plan.methods {
                    rows.push(BenchRow::failure(
                        label.clone(),
                        method.name().to_string(),
                        0,
                        e.to_string(),
                    ));
                }
                continue;
            }
        };
        for &method in &plan.methods {
            if plan.discard_warmup {
                if let Err(e) = measure(plan, &instance, method) {
                    rows.push(BenchRow::failure(
                        label.clone(),
                        method.name().to_string(),
                        0,
                        e.to_string(),
                    ));
                    continue;
                }
            }
            for rep in 1..=plan.repetitions {
                match measure(plan, &instance, method) {
                    Ok((trace, mem, wall)) => rows.push(row_from_trace(
                        &label,
                        method,
                        rep,
                        instance.target.len(),
                        &trace,
                        mem.as_ref(),
                        wall,
                    )),
                    Err(e) => rows.push(BenchRow::failure(
                        label.clone(),
                        method.name().to_string(),
                        rep,
                        e.to_string(),
                    )),
                }
            }
        }
    }
    Ok(rows)
}
