//! Points and point clouds.
//!
//! A `PointCloud` is an ordered list; the position of a point in `points`
//! is its canonical identifier everywhere else in the pipeline (arena
//! slots store these indices, NNS results return them).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    #[inline]
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn sub(&self, other: &Point3) -> Point3 {
        Point3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    #[inline]
    pub fn add(&self, other: &Point3) -> Point3 {
        Point3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    #[inline]
    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Squared Euclidean distance. The hot loops compare squared values and
/// only take roots when reporting.
#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, name: impl Into<String>) -> Self {
        PointCloud {
            points,
            name: name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Result<Point3> {
        if self.is_empty() {
            return Err(Error::Input("centroid of empty cloud".into()));
        }
        let mut c = Point3::ORIGIN;
        for p in &self.points {
            c = c.add(p);
        }
        Ok(c.scale(1.0 / self.points.len() as f64))
    }

    /// Ingestion gate: no NaN/Inf is admitted past this point.
    pub fn check_finite(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Input(format!(
                    "non-finite coordinate at point {i} of '{}'",
                    self.name
                )));
            }
        }
        Ok(())
    }
}
