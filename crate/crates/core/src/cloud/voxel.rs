use std::collections::BTreeMap;

use super::{ClassId, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

#[derive(Default)]
struct Cell {
    sum: Vector3,
    normal_sum: Vector3,
    count: usize,
    labels: BTreeMap<ClassId, usize>,
}

/// Replaces the points of each occupied voxel by their centroid.
///
/// The voxel of `p` is `floor(p / leaf)` per axis. Output is ordered by
/// voxel coordinate (lexicographic); each output label is the voxel majority,
/// lowest class id on ties.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(Error::invalid(format!("voxel leaf must be positive, got {leaf}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), Cell> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let cell = cells.entry(key).or_default();
        cell.sum += p.coords;
        cell.count += 1;
        if let Some(normals) = cloud.normals() {
            cell.normal_sum += normals[i];
        }
        if let Some(labels) = cloud.labels() {
            *cell.labels.entry(labels[i]).or_default() += 1;
        }
    }

    let mut points = Vec::with_capacity(cells.len());
    let mut normals = cloud.normals().map(|_| Vec::with_capacity(cells.len()));
    let mut labels = cloud.labels().map(|_| Vec::with_capacity(cells.len()));
    for cell in cells.values() {
        points.push(Point3::from(cell.sum / cell.count as f64));
        if let Some(normals) = normals.as_mut() {
            let norm = cell.normal_sum.norm();
            normals.push(if norm > 1e-12 { cell.normal_sum / norm } else { Vector3::zeros() });
        }
        if let Some(labels) = labels.as_mut() {
            // BTreeMap iterates ascending, so the first maximum is the lowest id.
            let (&label, _) = cell
                .labels
                .iter()
                .fold(None::<(&ClassId, &usize)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .expect("labelled voxel has at least one label");
            labels.push(label);
        }
    }
    Ok(PointCloud::from_parts_unchecked(points, normals, labels))
}
