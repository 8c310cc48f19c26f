//! Scratch: inspect per-iteration behavior on a stalling instance.

use voxreg::icp::{register_with_method, IcpConfig, Method};
use voxreg::ingest::{gen_synthetic, normalize_unit_sphere, perturb, PerturbationSpec, SyntheticKind};
use voxreg::ExecMode;

fn main() {
    let raw = gen_synthetic(SyntheticKind::TwoDensityCluster, 1500, 3).unwrap();
    let target = normalize_unit_sphere(&raw).unwrap();
    let (source, _) = perturb(&target, &PerturbationSpec::new(25.0, 0.1, 3).unwrap()).unwrap();
    let cfg = IcpConfig::default();

    for method in [Method::DilationIcp, Method::BruteIcp] {
        let (_, trace) =
            register_with_method(&source, &target, &cfg, ExecMode::Serial, method).unwrap();
        println!("== {method} converged={} iters={}", trace.converged, trace.iterations_used);
        for it in &trace.iterations {
            println!(
                "  it {:2} rmse {:.6e} local {} redir {} fall {}",
                it.iteration, it.rmse, it.routes.local, it.routes.redirected, it.routes.global_fallback
            );
        }
    }
}
