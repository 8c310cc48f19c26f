//! Rigid transforms: the ICP state and its output.

use nalgebra::{Matrix3, Vector3};

use crate::point::Point3;

/// Rotation + translation. Constructors and compositions keep the rotation
/// proper-orthonormal (R^T R = I, det R = +1) within tight tolerance;
/// `orthonormality_error` measures drift and `renormalize` projects back
/// onto SO(3) when composition accumulates error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rodrigues rotation about a unit axis, plus translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle_rad: f64, translation: Vector3<f64>) -> Self {
        let axis = axis.normalize();
        let k = Matrix3::new(
            0.0, -axis.z, axis.y, //
            axis.z, 0.0, -axis.x, //
            -axis.y, axis.x, 0.0,
        );
        let rotation =
            Matrix3::identity() + k * angle_rad.sin() + k * k * (1.0 - angle_rad.cos());
        RigidTransform {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::new(p.x, p.y, p.z) + self.translation;
        Point3::new(v.x, v.y, v.z)
    }

    pub fn apply_all(&self, points: &[Point3], out: &mut Vec<Point3>) {
        out.clear();
        out.extend(points.iter().map(|p| self.apply(p)));
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max-abs entry of R^T R - I, plus |det R - 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let gram_err = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        gram_err.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Project the rotation back onto SO(3) via SVD (nearest orthonormal
    /// matrix, reflection-corrected).
    pub fn renormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("3x3 svd");
        let v_t = svd.v_t.expect("3x3 svd");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        self.rotation = r;
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Max-abs difference over rotation entries and translation components.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = self.rotation - other.rotation;
        let dt = self.translation - other.translation;
        dr.iter()
            .chain(dt.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
