use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_with_indices, Camera, RenderParams};
use crate::cloud::{apply_transform, ClassId, GroundedTransform, NeighborIndex, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};
use crate::modeldb::ModelDatabase;

/// Label of floor and wall points.
pub const BACKGROUND: ClassId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub model_id: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Floor rectangle and surrounding walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub wall_height: f64,
    /// Grid spacing of floor and wall samples, meters.
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub placements: Vec<Placement>,
    pub room: Option<Room>,
    pub cameras: Vec<Camera>,
    pub noise_sigma: f64,
    pub label_bleed: f64,
    pub seed: u64,
    #[serde(default = "default_image_res")]
    pub image_res: usize,
    /// Clutter points within this distance of a visible object point are
    /// candidates for label bleed.
    #[serde(default = "default_bleed_radius")]
    pub bleed_radius: f64,
}

fn default_image_res() -> usize {
    RenderParams::default().image_res
}

fn default_bleed_radius() -> f64 {
    0.1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.label_bleed) {
            return Err(Error::invalid("label_bleed must lie in [0, 1]"));
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scene needs at least one camera"));
        }
        for p in &self.placements {
            if ![p.x, p.y, p.yaw, p.scale].iter().all(|v| v.is_finite()) || !(p.scale > 0.0) {
                return Err(Error::invalid(format!("placement of `{}` has a non-finite pose", p.model_id)));
            }
        }
        if let Some(r) = &self.room {
            if !(r.spacing > 0.0) || !(r.max[0] > r.min[0]) || !(r.max[1] > r.min[1]) || !(r.wall_height >= 0.0) {
                return Err(Error::invalid("room needs positive extent and spacing"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.line(), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub class_id: ClassId,
    /// Centroid of the complete placed model.
    pub centroid: Point3,
    pub model_id: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<TruthObject>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.line(), e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Observed geometry without labels.
    pub geometry: PointCloud,
    /// The same points with semantic labels.
    pub semantic: PointCloud,
    pub truth: GroundTruth,
    /// Per output point: index of the placement it came from, if any.
    pub source_object: Vec<Option<usize>>,
}

fn grid_samples(origin: Point3, u: Vector3, v: Vector3, nu: usize, nv: usize, out: &mut Vec<Point3>) {
    for i in 0..=nu {
        for j in 0..=nv {
            out.push(origin + u * i as f64 + v * j as f64);
        }
    }
}

/// Floor at z = 0 and four walls, sampled on a regular grid.
pub fn room_cloud(room: &Room) -> Vec<Point3> {
    let s = room.spacing;
    let (w, d) = (room.max[0] - room.min[0], room.max[1] - room.min[1]);
    let (nx, ny, nz) = ((w / s).round() as usize, (d / s).round() as usize, (room.wall_height / s).round() as usize);
    let (sx, sy, sz) = (w / nx.max(1) as f64, d / ny.max(1) as f64, room.wall_height / nz.max(1) as f64);
    let mut pts = Vec::new();
    let o = Point3::new(room.min[0], room.min[1], 0.0);
    grid_samples(o, Vector3::x() * sx, Vector3::y() * sy, nx, ny, &mut pts);
    if nz > 0 {
        // Walls start one row above the floor to avoid duplicate edge points.
        let up = Vector3::z() * sz;
        let lift = o + up;
        grid_samples(lift, Vector3::x() * sx, up, nx, nz - 1, &mut pts);
        grid_samples(lift + Vector3::y() * d, Vector3::x() * sx, up, nx, nz - 1, &mut pts);
        grid_samples(lift + Vector3::y() * sy, Vector3::y() * sy, up, ny.saturating_sub(2), nz - 1, &mut pts);
        grid_samples(lift + Vector3::new(w, sy, 0.0), Vector3::y() * sy, up, ny.saturating_sub(2), nz - 1, &mut pts);
    }
    pts
}

/// Places database models, adds room clutter, renders the union from every
/// camera and merges the views. A point seen by several cameras appears once,
/// with the noise of the first camera that saw it.
pub fn synthesize_scene(spec: &SceneSpec, db: &ModelDatabase) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut owner: Vec<Option<usize>> = Vec::new();
    let mut truth = GroundTruth::default();
    for (k, p) in spec.placements.iter().enumerate() {
        let entry = db.get(&p.model_id).ok_or_else(|| Error::UnknownModel(p.model_id.clone()))?;
        let t = GroundedTransform::new(p.yaw, Vector3::new(p.x, p.y, 0.0), p.scale)?;
        let placed = apply_transform(&entry.cloud, &t);
        truth.objects.push(TruthObject {
            class_id: entry.class_id,
            centroid: placed.centroid().ok_or(Error::EmptyCloud)?,
            model_id: p.model_id.clone(),
            x: p.x,
            y: p.y,
            yaw: t.yaw(),
            scale: p.scale,
        });
        labels.extend(std::iter::repeat_n(entry.class_id, placed.len()));
        owner.extend(std::iter::repeat_n(Some(k), placed.len()));
        points.extend(placed.into_points());
    }
    let clutter_start = points.len();
    if let Some(room) = &spec.room {
        let clutter = room_cloud(room);
        labels.extend(std::iter::repeat_n(BACKGROUND, clutter.len()));
        owner.extend(std::iter::repeat_n(None, clutter.len()));
        points.extend(clutter);
    }
    let union = PointCloud::from_parts(points, None, Some(labels))?;

    let views: Vec<Result<(PointCloud, Vec<usize>)>> = spec
        .cameras
        .par_iter()
        .enumerate()
        .map(|(c, cam)| {
            let params = RenderParams {
                image_res: spec.image_res,
                noise_sigma: spec.noise_sigma,
                seed: spec.seed.wrapping_add(c as u64),
                ..RenderParams::default()
            };
            render_with_indices(&union, cam, &params)
        })
        .collect();
    let mut merged: Vec<Option<Point3>> = vec![None; union.len()];
    for view in views {
        let (cloud, indices) = view?;
        for (p, i) in cloud.points().iter().zip(indices) {
            merged[i].get_or_insert(*p);
        }
    }
    let kept: Vec<usize> = (0..union.len()).filter(|&i| merged[i].is_some()).collect();
    let out_points: Vec<Point3> = kept.iter().map(|&i| merged[i].expect("kept")).collect();
    let mut out_labels: Vec<ClassId> = kept.iter().map(|&i| union.labels().expect("labeled")[i]).collect();
    let source_object: Vec<Option<usize>> = kept.iter().map(|&i| owner[i]).collect();
    let first_clutter = kept.partition_point(|&i| i < clutter_start);

    if spec.label_bleed > 0.0 && first_clutter < kept.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6c61_6265_6c5f_626c);
        let clutter: Vec<Point3> = out_points[first_clutter..].to_vec();
        for k in 0..spec.placements.len() {
            let object: Vec<Point3> = (0..first_clutter)
                .filter(|&i| source_object[i] == Some(k))
                .map(|i| out_points[i])
                .collect();
            if object.is_empty() {
                continue;
            }
            let index = NeighborIndex::from_points(&object)?;
            let near: Vec<usize> = (0..clutter.len())
                .filter(|&j| index.nearest(&clutter[j]).1 <= spec.bleed_radius)
                .collect();
            let count = (spec.label_bleed * near.len() as f64).round() as usize;
            if count == 0 {
                continue;
            }
            // The bleed is one contiguous patch: the candidates closest to a
            // random seed candidate.
            let seed_point = clutter[near[rng.random_range(0..near.len())]];
            let mut by_distance: Vec<(f64, usize)> = near.iter().map(|&j| ((clutter[j] - seed_point).norm(), j)).collect();
            by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let class_id = truth.objects[k].class_id;
            for &(_, j) in by_distance.iter().take(count) {
                out_labels[first_clutter + j] = class_id;
            }
        }
    }

    let semantic = PointCloud::from_parts(out_points, None, Some(out_labels))?;
    Ok(SyntheticScene {
        geometry: semantic.clone().without_labels(),
        semantic,
        truth,
        source_object,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::chairs::{chair_mesh, ChairParams};
    use crate::modeldb::{ingest_mesh, IngestParams};

    fn one_chair_db() -> ModelDatabase {
        let params = IngestParams::default();
        let mut db = ModelDatabase::new(params.clone());
        db.insert(ingest_mesh(&chair_mesh(&ChairParams::default()), "chair", 1, &params, "mem").unwrap()).unwrap();
        db
    }

    fn spec(bleed: f64) -> SceneSpec {
        SceneSpec {
            placements: vec![Placement {
                model_id: "chair".into(),
                x: 1.0,
                y: 0.6,
                yaw: 0.3,
                scale: 1.0,
            }],
            room: Some(Room {
                min: [0.0, 0.0],
                max: [3.0, 3.0],
                wall_height: 1.5,
                spacing: 0.04,
            }),
            cameras: vec![Camera::new(Point3::new(1.5, 2.8, 1.4), Point3::new(1.0, 0.6, 0.4))],
            noise_sigma: 0.0,
            label_bleed: bleed,
            seed: 3,
            image_res: 256,
            bleed_radius: 0.1,
        }
    }

    #[test]
    fn labels_are_exactly_the_visible_chair_points() {
        let db = one_chair_db();
        let scene = synthesize_scene(&spec(0.0), &db).unwrap();
        assert_eq!(scene.truth.objects.len(), 1);
        let labels = scene.semantic.labels().unwrap();
        let chair_pts = labels.iter().filter(|&&l| l == 1).count();
        assert!(chair_pts > 200 && chair_pts < db.entries()[0].cloud.len());
        for (l, o) in labels.iter().zip(&scene.source_object) {
            assert_eq!(*l == 1, o.is_some());
        }
        assert_eq!(scene.geometry.points(), scene.semantic.points());
    }

    #[test]
    fn bleed_marks_clutter_near_the_chair() {
        let db = one_chair_db();
        let scene = synthesize_scene(&spec(0.2), &db).unwrap();
        let bled = scene
            .semantic
            .labels()
            .unwrap()
            .iter()
            .zip(&scene.source_object)
            .filter(|(l, o)| **l == 1 && o.is_none())
            .count();
        assert!(bled > 0);
        assert_eq!(scene, synthesize_scene(&spec(0.2), &db).unwrap());
    }

    #[test]
    fn unknown_model_fails() {
        let mut s = spec(0.0);
        s.placements[0].model_id = "nope".into();
        assert!(matches!(synthesize_scene(&s, &one_chair_db()), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn room_has_no_duplicate_points() {
        let room = Room {
            min: [0.0, 0.0],
            max: [1.0, 2.0],
            wall_height: 0.5,
            spacing: 0.1,
        };
        let mut pts: Vec<[i64; 3]> = room_cloud(&room)
            .iter()
            .map(|p| [(p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64, (p.z * 1e6).round() as i64])
            .collect();
        let n = pts.len();
        pts.sort_unstable();
        pts.dedup();
        assert_eq!(pts.len(), n);
        assert_eq!(n, 11 * 21 + 2 * 11 * 5 + 2 * 19 * 5);
    }
}
