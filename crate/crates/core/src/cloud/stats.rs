use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::{NeighborIndex, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

/// Centroid and eigen-decomposition of the population covariance of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSummary {
    pub centroid: Point3,
    /// Eigenvalues in m², sorted descending and clamped at zero.
    pub eigenvalues: [f64; 3],
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`; the frame is right-handed.
    pub eigenvectors: Matrix3<f64>,
}

impl CovarianceSummary {
    pub fn smallest_axis(&self) -> Vector3 {
        self.eigenvectors.column(2).into_owned()
    }
}

pub(crate) fn covariance_of(points: impl Iterator<Item = Point3> + Clone) -> Option<(Point3, Matrix3<f64>)> {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += p.coords;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    Some((Point3::from(centroid), cov / n as f64))
}

fn decompose(centroid: Point3, cov: Matrix3<f64>) -> CovarianceSummary {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    let e0 = eig.eigenvectors.column(order[0]).normalize();
    let e1 = eig.eigenvectors.column(order[1]).normalize();
    let e2 = e0.cross(&e1);
    CovarianceSummary {
        centroid,
        eigenvalues,
        eigenvectors: Matrix3::from_columns(&[e0, e1, e2]),
    }
}

/// Population covariance (divided by N) of the coordinates, eigen-decomposed.
pub fn covariance_summary(cloud: &PointCloud) -> Result<CovarianceSummary> {
    if cloud.len() < 3 {
        return Err(Error::Degenerate(format!(
            "covariance needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    let (centroid, cov) = covariance_of(cloud.points().iter().copied()).expect("non-empty");
    Ok(decompose(centroid, cov))
}

/// Flips `n` so that z >= 0, breaking ties on x then y.
fn orient(n: Vector3) -> Vector3 {
    let key = if n.z != 0.0 {
        n.z
    } else if n.x != 0.0 {
        n.x
    } else {
        n.y
    };
    if key < 0.0 {
        -n
    } else {
        n
    }
}

/// Per-point normals from the smallest-eigenvalue axis of the neighborhood
/// covariance within `radius`.
///
/// Points with fewer than 3 neighbors (the point itself included) receive the
/// zero marker normal.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("normal radius must be positive, got {radius}")));
    }
    if cloud.len() < 3 {
        return Err(Error::Degenerate(format!(
            "normal estimation needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    let index = NeighborIndex::build(cloud)?;
    let normals = normals_with_index(cloud.points(), &index, radius);
    Ok(PointCloud::from_parts_unchecked(
        cloud.points().to_vec(),
        Some(normals),
        cloud.labels().map(<[_]>::to_vec),
    ))
}

pub(crate) fn normals_with_index(points: &[Point3], index: &NeighborIndex, radius: f64) -> Vec<Vector3> {
    points
        .par_iter()
        .map(|p| {
            let mut neighbors = Vec::new();
            index.for_each_within(p, radius, |i, _| neighbors.push(i));
            if neighbors.len() < 3 {
                return Vector3::zeros();
            }
            // Sorted so the accumulation order, and thus the result, is deterministic.
            neighbors.sort_unstable();
            let (_, cov) = covariance_of(neighbors.iter().map(|&i| points[i])).expect("non-empty");
            let n = decompose(Point3::origin(), cov).smallest_axis();
            let norm = n.norm();
            if norm.is_finite() && norm > 0.0 {
                orient(n / norm)
            } else {
                Vector3::zeros()
            }
        })
        .collect()
}

/// Largest distance from any point to the centroid (the size statistic λ).
pub fn farthest_point_distance(cloud: &PointCloud) -> Result<f64> {
    let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;
    Ok(cloud
        .points()
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max))
}
