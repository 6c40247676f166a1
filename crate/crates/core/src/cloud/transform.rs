use std::f64::consts::TAU;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

/// Similarity transform restricted to grounded objects: rotation about the
/// vertical axis, a translation and a uniform scale.
///
/// A point maps as `p -> Rz(yaw) * (scale * p) + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundedTransform {
    yaw: f64,
    translation: Vector3,
    scale: f64,
}

impl Default for GroundedTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl GroundedTransform {
    pub fn new(yaw: f64, translation: Vector3, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        if !yaw.is_finite() || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("transform parameters must be finite"));
        }
        Ok(Self {
            yaw: normalize_yaw(yaw),
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            yaw: 0.0,
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self {
            yaw: 0.0,
            translation,
            scale: 1.0,
        }
    }

    /// Yaw in `[0, 2π)`.
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Vector3 {
        self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        let (x, y, z) = (self.scale * p.x, self.scale * p.y, self.scale * p.z);
        Point3::new(
            c * x - s * y + self.translation.x,
            s * x + c * y + self.translation.y,
            z + self.translation.z,
        )
    }

    /// Rotates a direction; scale and translation do not apply.
    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let (s, c) = self.yaw.sin_cos();
        let t = self.translation;
        // Rz(-yaw) * t / scale
        let rotated = Vector3::new(c * t.x + s * t.y, -s * t.x + c * t.y, t.z);
        Self {
            yaw: normalize_yaw(-self.yaw),
            translation: -rotated * inv_scale,
            scale: inv_scale,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let rotated = self.apply_vector(&other.translation) * self.scale;
        Self {
            yaw: normalize_yaw(self.yaw + other.yaw),
            translation: rotated + self.translation,
            scale: self.scale * other.scale,
        }
    }
}

pub(crate) fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(TAU);
    if y >= TAU {
        0.0
    } else {
        y
    }
}

/// Applies `transform` to every point; normals are rotated and renormalized.
pub fn apply_transform(cloud: &PointCloud, transform: &GroundedTransform) -> PointCloud {
    let points = cloud.points().iter().map(|p| transform.apply_point(p)).collect();
    let normals = cloud.normals().map(|normals| {
        normals
            .iter()
            .map(|n| {
                let r = transform.apply_vector(n);
                let norm = r.norm();
                if norm > 0.0 {
                    r / norm
                } else {
                    r
                }
            })
            .collect()
    });
    PointCloud::from_parts_unchecked(points, normals, cloud.labels().map(<[_]>::to_vec))
}
