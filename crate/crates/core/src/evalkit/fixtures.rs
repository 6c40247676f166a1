//! Ready-made chair databases, rooms and the matching pipeline settings,
//! shared by tests, benchmarks and the `scene` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::chairs::{chair_mesh, ChairParams};
use super::render::Camera;
use super::scene::{Placement, Room, SceneSpec};
use crate::cloud::{ClassId, Point3};
use crate::error::Result;
use crate::modeldb::{ingest_mesh, IngestParams, ModelDatabase};
use crate::pipeline::PipelineConfig;

pub const CHAIR_CLASS: ClassId = 1;

/// `count` random chairs ingested as `chair_NN` under [`CHAIR_CLASS`].
pub fn chair_database(count: usize, seed: u64, params: &IngestParams) -> Result<ModelDatabase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = ModelDatabase::new(params.clone());
    for i in 0..count {
        let id = format!("chair_{i:02}");
        let mesh = chair_mesh(&ChairParams::random(&mut rng));
        db.insert(ingest_mesh(&mesh, &id, CHAIR_CLASS, params, &id)?)?;
    }
    db.classes.insert(CHAIR_CLASS, "chair".into());
    Ok(db)
}

/// A walled room with `chairs` random database models at jittered spots
/// about 1.5 m apart, random yaw, seen by three cameras at 1.8 m.
pub fn chair_room(model_ids: &[String], chairs: usize, seed: u64, noise_sigma: f64, label_bleed: f64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spots: Vec<(f64, f64)> = if chairs <= 5 {
        vec![(-1.8, -1.2), (0.0, -1.3), (1.8, -1.0), (-1.0, 1.0), (1.2, 1.1)]
    } else {
        let cols = (chairs as f64).sqrt().ceil() as usize;
        let rows = chairs.div_ceil(cols);
        (0..chairs)
            .map(|k| {
                let (c, r) = (k % cols, k / cols);
                (
                    (c as f64 - (cols - 1) as f64 / 2.0) * 1.5,
                    (r as f64 - (rows - 1) as f64 / 2.0) * 1.5,
                )
            })
            .collect()
    };
    let half_x = spots.iter().map(|s| s.0.abs()).fold(0.0, f64::max) + 1.2;
    let half_y = spots.iter().map(|s| s.1.abs()).fold(0.0, f64::max) + 1.2;
    let placements = spots
        .iter()
        .take(chairs)
        .map(|&(x, y)| Placement {
            model_id: model_ids[rng.random_range(0..model_ids.len())].clone(),
            x: x + rng.random_range(-0.2..0.2),
            y: y + rng.random_range(-0.2..0.2),
            yaw: rng.random_range(0.0..std::f64::consts::TAU),
            scale: 1.0,
        })
        .collect();
    let look = Point3::new(0.0, 0.0, 0.3);
    let (cx, cy) = (half_x - 0.2, half_y - 0.2);
    SceneSpec {
        placements,
        room: Some(Room {
            min: [-half_x, -half_y],
            max: [half_x, half_y],
            wall_height: 2.4,
            spacing: 0.03,
        }),
        cameras: vec![
            Camera::new(Point3::new(-cx, -cy, 1.8), look),
            Camera::new(Point3::new(cx, -cy, 1.8), look),
            Camera::new(Point3::new(0.0, cy, 1.8), look),
        ],
        noise_sigma,
        label_bleed,
        seed,
        image_res: 256,
        bleed_radius: 0.1,
    }
}

/// Pipeline settings for chair rooms. Chairs are larger than the default λ
/// interval, and a 256² render of a room leaves chair surfaces sparse enough
/// that a 5 cm linkage gap splits them.
pub fn chair_room_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.segmentation.lambda_range = [0.2, 1.0];
    c.segmentation.cluster_gap = 0.1;
    c.segmentation.min_points = 150;
    c.classes = vec![CHAIR_CLASS];
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_has_requested_placements() {
        let ids: Vec<String> = (0..3).map(|i| format!("chair_{i:02}")).collect();
        for n in [1, 5, 19] {
            let spec = chair_room(&ids, n, 4, 0.0, 0.0);
            assert_eq!(spec.placements.len(), n);
            spec.validate().unwrap();
            let r = spec.room.as_ref().unwrap();
            for p in &spec.placements {
                assert!(p.x > r.min[0] + 0.5 && p.x < r.max[0] - 0.5);
                assert!(p.y > r.min[1] + 0.5 && p.y < r.max[1] - 0.5);
            }
        }
        chair_room_config().validate().unwrap();
    }
}
