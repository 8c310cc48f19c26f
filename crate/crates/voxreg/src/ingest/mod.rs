//! Cloud ingestion: file loaders, unit-sphere normalization, seeded
//! perturbation and synthetic cloud generation.
//!
//! Randomness always flows from an explicitly seeded ChaCha8 stream so the
//! same seed reproduces the same cloud bit-for-bit on every platform. The
//! generator name is recorded in run manifests as `chacha8`.

mod io;

pub use io::{load_cloud, load_off, load_ply_ascii, load_xyz, write_xyz};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::point::{Point3, PointCloud};
use crate::transform::RigidTransform;

use nalgebra::Vector3;

/// Name of the seeded random stream, echoed into manifests.
pub const RNG_NAME: &str = "chacha8";

/// How hard `perturb` shakes a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(max_rotation_deg: f64, max_translation: f64, seed: u64) -> Result<Self> {
        if !(0.0..=180.0).contains(&max_rotation_deg) {
            return Err(Error::Input(format!(
                "max_rotation_deg must be in [0, 180], got {max_rotation_deg}"
            )));
        }
        if !(max_translation >= 0.0) {
            return Err(Error::Input(format!(
                "max_translation must be >= 0, got {max_translation}"
            )));
        }
        Ok(PerturbationSpec {
            max_rotation_deg,
            max_translation,
            seed,
        })
    }

    /// Default protocol: 25 degrees, 0.1 normalized units.
    pub fn default_with_seed(seed: u64) -> Self {
        PerturbationSpec {
            max_rotation_deg: 25.0,
            max_translation: 0.1,
            seed,
        }
    }
}

/// Center the cloud on its centroid and scale so the farthest point sits
/// exactly on the unit sphere.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let centroid = cloud.centroid()?;
    let radius = cloud
        .points
        .iter()
        .map(|p| p.sub(&centroid).norm())
        .fold(0.0f64, f64::max);
    if radius <= 0.0 {
        return Err(Error::Degenerate(format!(
            "cloud '{}' has zero radius (all points identical)",
            cloud.name
        )));
    }
    let inv = 1.0 / radius;
    let points = cloud
        .points
        .iter()
        .map(|p| p.sub(&centroid).scale(inv))
        .collect();
    Ok(PointCloud::new(points, cloud.name.clone()))
}

/// One standard-gaussian draw via Box-Muller. Burns two uniforms per call;
/// portable with no distribution-crate dependency.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gauss(rng), gauss(rng), gauss(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Apply a seeded random rigid transform and return it alongside the moved
/// cloud. Rotation: uniform random axis, angle uniform in
/// [0, max_rotation_deg]. Translation: components uniform in
/// [-max_translation, max_translation].
pub fn perturb(cloud: &PointCloud, spec: &PerturbationSpec) -> Result<(PointCloud, RigidTransform)> {
    if cloud.is_empty() {
        return Err(Error::Input("cannot perturb an empty cloud".into()));
    }
    let spec = PerturbationSpec::new(spec.max_rotation_deg, spec.max_translation, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let axis = random_unit_vector(&mut rng);
    let angle_deg: f64 = rng.random_range(0.0..=spec.max_rotation_deg);
    let t = spec.max_translation;
    let translation = Vector3::new(
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
    );
    let transform = RigidTransform::from_axis_angle(axis, angle_deg.to_radians(), translation);
    let points = cloud.points.iter().map(|p| transform.apply(p)).collect();
    let name = format!("{}+perturb(seed={})", cloud.name, spec.seed);
    Ok((PointCloud::new(points, name), transform))
}

/// Shapes available without any dataset download.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    SphereSurface,
    BoxVolume,
    TwoDensityCluster,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 3] = [
        SyntheticKind::SphereSurface,
        SyntheticKind::BoxVolume,
        SyntheticKind::TwoDensityCluster,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::SphereSurface => "sphere-surface",
            SyntheticKind::BoxVolume => "box-volume",
            SyntheticKind::TwoDensityCluster => "two-density-cluster",
        }
    }
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere-surface" => Ok(SyntheticKind::SphereSurface),
            "box-volume" => Ok(SyntheticKind::BoxVolume),
            "two-density-cluster" => Ok(SyntheticKind::TwoDensityCluster),
            other => Err(Error::Input(format!(
                "unknown synthetic kind '{other}' (expected sphere-surface, box-volume or two-density-cluster)"
            ))),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform point inside an axis-aligned ellipsoid centered at `center`.
fn ellipsoid_point(rng: &mut ChaCha8Rng, center: [f64; 3], radii: [f64; 3]) -> Point3 {
    let dir = random_unit_vector(rng);
    let r = rng.random::<f64>().cbrt();
    Point3::new(
        center[0] + dir.x * r * radii[0],
        center[1] + dir.y * r * radii[1],
        center[2] + dir.z * r * radii[2],
    )
}

/// Deterministic synthetic cloud of exactly `count` points.
pub fn gen_synthetic(kind: SyntheticKind, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::Input("synthetic cloud needs count >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    match kind {
        SyntheticKind::SphereSurface => {
            for _ in 0..count {
                let v = random_unit_vector(&mut rng);
                points.push(Point3::new(v.x, v.y, v.z));
            }
        }
        SyntheticKind::BoxVolume => {
            for _ in 0..count {
                points.push(Point3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ));
            }
        }
        SyntheticKind::TwoDensityCluster => {
            // 90% of the points in a small anisotropic blob, 10% in a much
            // larger one: adjacent regions of the grid end up with point
            // densities orders of magnitude apart. The asymmetric shapes
            // also keep the cloud free of rotational symmetry, which
            // matters for registration tests.
            let dense = (count * 9) / 10;
            for _ in 0..dense {
                points.push(ellipsoid_point(
                    &mut rng,
                    [0.45, 0.10, -0.20],
                    [0.18, 0.10, 0.14],
                ));
            }
            for _ in dense..count {
                points.push(ellipsoid_point(
                    &mut rng,
                    [-0.40, -0.05, 0.25],
                    [0.55, 0.65, 0.40],
                ));
            }
        }
    }
    Ok(PointCloud::new(
        points,
        format!("{}:{count}(seed={seed})", kind.name()),
    ))
}
