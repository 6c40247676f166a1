//! Point-cloud storage and the geometric primitives shared by every stage.

mod index;
pub mod io;
mod stats;
mod transform;
mod voxel;

pub use index::NeighborIndex;
pub(crate) use stats::normals_with_index;
pub use stats::{covariance_summary, estimate_normals, farthest_point_distance, CovarianceSummary};
pub use transform::{apply_transform, GroundedTransform};
pub use voxel::voxel_downsample;

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Semantic class identifier carried per point.
pub type ClassId = u8;

const UNIT_TOLERANCE: f64 = 1e-6;

/// An ordered list of 3D points with optional per-point normals and class labels.
///
/// Coordinates are always finite. Normals are unit length, except for the
/// all-zero marker produced by [`estimate_normals`] for points whose
/// neighborhood is too small to fit a plane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3>>,
    labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::from_parts(points, None, None)
    }

    pub fn from_parts(
        points: Vec<Point3>,
        normals: Option<Vec<Vector3>>,
        labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !is_finite(p)) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(normals) = &normals {
            check_normals(normals, points.len())?;
        }
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            normals,
            labels,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_labels(self, labels: Vec<ClassId>) -> Result<Self> {
        Self::from_parts(self.points, self.normals, Some(labels))
    }

    pub fn with_normals(self, normals: Vec<Vector3>) -> Result<Self> {
        Self::from_parts(self.points, Some(normals), self.labels)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Sub-cloud made of the given indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Arithmetic mean of the points, `None` for an empty cloud.
    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Axis-aligned bounds as (min, max), `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Concatenates clouds. Normals and labels survive only when every part has them.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PointCloud>) -> PointCloud {
        let parts: Vec<&PointCloud> = parts.into_iter().collect();
        let points = parts.iter().flat_map(|c| c.points.iter().copied()).collect();
        let normals = parts
            .iter()
            .all(|c| c.normals.is_some())
            .then(|| parts.iter().flat_map(|c| c.normals.as_ref().unwrap().iter().copied()).collect());
        let labels = parts
            .iter()
            .all(|c| c.labels.is_some())
            .then(|| parts.iter().flat_map(|c| c.labels.as_ref().unwrap().iter().copied()).collect());
        PointCloud {
            points,
            normals,
            labels,
        }
    }

    /// Map every point through `f`, keeping attributes. `f` must preserve finiteness.
    pub(crate) fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            normals: self.normals.clone(),
            labels: self.labels.clone(),
        }
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Point3>,
        normals: Option<Vec<Vector3>>,
        labels: Option<Vec<ClassId>>,
    ) -> Self {
        debug_assert!(points.iter().all(is_finite));
        Self {
            points,
            normals,
            labels,
        }
    }
}

fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

fn check_normals(normals: &[Vector3], n: usize) -> Result<()> {
    if normals.len() != n {
        return Err(Error::invalid(format!("{} normals for {n} points", normals.len())));
    }
    for (i, v) in normals.iter().enumerate() {
        let norm = v.norm();
        let is_marker = *v == Vector3::zeros();
        if !norm.is_finite() || (!is_marker && (norm - 1.0).abs() > UNIT_TOLERANCE) {
            return Err(Error::invalid(format!("normal {i} is not unit length (norm {norm})")));
        }
    }
    Ok(())
}

/// Rounds a coordinate to the 6-decimal grid used by the cloud file formats.
///
/// Values already on the grid survive a save/load round trip bit-for-bit.
pub fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

pub fn quantize_point(p: &Point3) -> Point3 {
    Point3::new(quantize(p.x), quantize(p.y), quantize(p.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(vec![Point3::new(0.0, f64::NAN, 0.0)]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn rejects_mismatched_attributes() {
        let pts = vec![Point3::origin(); 3];
        assert!(PointCloud::from_parts(pts.clone(), None, Some(vec![1, 2])).is_err());
        assert!(PointCloud::from_parts(pts.clone(), Some(vec![Vector3::z(); 2]), None).is_err());
        assert!(PointCloud::from_parts(pts, Some(vec![Vector3::new(0.0, 0.0, 2.0); 3]), None).is_err());
    }

    #[test]
    fn zero_normal_marker_is_admitted() {
        let pts = vec![Point3::origin(); 2];
        let normals = vec![Vector3::zeros(), Vector3::x()];
        assert!(PointCloud::from_parts(pts, Some(normals), None).is_ok());
    }

    #[test]
    fn concat_drops_partial_attributes() {
        let a = PointCloud::new(vec![Point3::origin()]).unwrap().with_labels(vec![3]).unwrap();
        let b = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let c = PointCloud::concat([&a, &b]);
        assert_eq!(c.len(), 2);
        assert!(c.labels().is_none());
        let d = PointCloud::concat([&a, &a]);
        assert_eq!(d.labels(), Some(&[3, 3][..]));
    }

    #[test]
    fn quantize_is_idempotent() {
        for v in [0.1234567, -3.9999995, 1e-9, 123.456789123] {
            let q = quantize(v);
            assert_eq!(quantize(q), q);
            assert_eq!(format!("{q:.6}").parse::<f64>().unwrap(), q);
        }
    }
}
