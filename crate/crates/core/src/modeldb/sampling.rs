use rand::Rng;

use super::TriangleMesh;
use crate::cloud::Point3;
use crate::error::{Error, Result};

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriangleMesh, count: usize, rng: &mut R) -> Result<Vec<Point3>> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        // Uniform barycentric sample: sqrt warp on the first coordinate.
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        out.push(Point3::from(p));
    }
    Ok(out)
}

/// Greedy farthest-point subsampling starting from `start`; returns indices in
/// selection order.
pub fn farthest_point_subsample(points: &[Point3], count: usize, start: usize) -> Vec<usize> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let count = count.min(points.len());
    let mut selected = Vec::with_capacity(count);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start.min(points.len() - 1);
    for _ in 0..count {
        selected.push(current);
        let c = points[current];
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > far {
                far = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    selected
}
