use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

/// Pinhole camera with a 90° field of view and z up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Point3,
    pub look_at: Point3,
}

impl Camera {
    pub fn new(position: Point3, look_at: Point3) -> Self {
        Self { position, look_at }
    }

    /// Right, up and forward unit vectors.
    fn basis(&self) -> Result<(Vector3, Vector3, Vector3)> {
        let forward = self.look_at - self.position;
        let norm = forward.norm();
        if !(norm > 0.0) {
            return Err(Error::invalid("camera position equals look-at point"));
        }
        let forward = forward / norm;
        let right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            return Err(Error::invalid("camera looks straight up or down"));
        }
        let right = right.normalize();
        Ok((right, right.cross(&forward), forward))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderParams {
    /// Image side length in pixels.
    pub image_res: usize,
    /// World-space radius of the disc each point covers in the depth buffer.
    pub splat_radius: f64,
    /// A point is visible when it lies at most this far behind the depth buffer.
    pub depth_tolerance: f64,
    /// Standard deviation of range noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            image_res: 256,
            splat_radius: 0.02,
            depth_tolerance: 0.02,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_res == 0 {
            return Err(Error::invalid("image_res must be positive"));
        }
        if !(self.splat_radius >= 0.0) || !(self.depth_tolerance >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("splat_radius, depth_tolerance and noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

const NEAR: f64 = 1e-3;

struct Projection {
    pixel: (usize, usize),
    /// Sub-pixel image coordinates.
    uv: (f64, f64),
    depth: f64,
}

fn project(p: &Point3, cam: &Camera, basis: &(Vector3, Vector3, Vector3), res: usize) -> Option<Projection> {
    let (right, up, forward) = basis;
    let d = p - cam.position;
    let depth = d.dot(forward);
    if depth <= NEAR {
        return None;
    }
    let focal = res as f64 / 2.0;
    let u = d.dot(right) / depth * focal + focal;
    let v = focal - d.dot(up) / depth * focal;
    if u < 0.0 || v < 0.0 || u >= res as f64 || v >= res as f64 {
        return None;
    }
    Some(Projection {
        pixel: (u as usize, v as usize),
        uv: (u, v),
        depth,
    })
}

/// Indices of the points of `cloud` visible from `camera`, ascending.
///
/// Every point splats its depth over a disc of `splat_radius` in the depth
/// buffer; a point survives when its depth is within `depth_tolerance` of
/// the buffer value at its own pixel.
pub fn visible_indices(cloud: &PointCloud, camera: &Camera, params: &RenderParams) -> Result<Vec<usize>> {
    params.validate()?;
    let basis = camera.basis()?;
    let res = params.image_res;
    let focal = res as f64 / 2.0;
    let projections: Vec<Option<Projection>> = cloud.points().iter().map(|p| project(p, camera, &basis, res)).collect();

    let mut zbuf = vec![f64::INFINITY; res * res];
    for pr in projections.iter().flatten() {
        let radius = params.splat_radius * focal / pr.depth;
        let (u, v) = pr.uv;
        let (px, py) = pr.pixel;
        let reach = radius.ceil() as usize;
        for y in py.saturating_sub(reach)..=(py + reach).min(res - 1) {
            for x in px.saturating_sub(reach)..=(px + reach).min(res - 1) {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = (x, y) == (px, py) || (cx - u).powi(2) + (cy - v).powi(2) <= radius * radius;
                if inside {
                    let z = &mut zbuf[y * res + x];
                    if pr.depth < *z {
                        *z = pr.depth;
                    }
                }
            }
        }
    }
    Ok(projections
        .iter()
        .enumerate()
        .filter_map(|(i, pr)| {
            let pr = pr.as_ref()?;
            let (x, y) = pr.pixel;
            (pr.depth <= zbuf[y * res + x] + params.depth_tolerance).then_some(i)
        })
        .collect())
}

/// Renders the part of `cloud` visible from `camera` and perturbs each
/// surviving point along its viewing ray with Gaussian noise.
///
/// Labels of surviving points are kept; normals are dropped.
/// The camera must lie outside the cloud's bounding box.
pub fn render_partial(cloud: &PointCloud, camera: &Camera, params: &RenderParams) -> Result<PointCloud> {
    if let Some((lo, hi)) = cloud.bounds() {
        let c = camera.position;
        if (0..3).all(|k| c[k] >= lo[k] && c[k] <= hi[k]) {
            return Err(Error::invalid("camera is inside the cloud's bounding box"));
        }
    }
    Ok(render_with_indices(cloud, camera, params)?.0)
}

/// Like [`render_partial`], also returning the source index of every output
/// point. The camera may sit inside the cloud (a room around it, say).
pub fn render_with_indices(cloud: &PointCloud, camera: &Camera, params: &RenderParams) -> Result<(PointCloud, Vec<usize>)> {
    let visible = visible_indices(cloud, camera, params)?;
    if visible.is_empty() {
        return Err(Error::Degenerate("no points visible from camera".into()));
    }
    let mut out = cloud.select(&visible).without_normals();
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let points: Vec<Point3> = out
            .points()
            .iter()
            .map(|p| {
                let ray = (p - camera.position).normalize();
                p + ray * normal.sample(&mut rng)
            })
            .collect();
        out = PointCloud::from_parts(points, None, out.labels().map(<[_]>::to_vec))?;
    }
    Ok((out, visible))
}
