//! End-to-end checks on synthetic scenes: extraction, bleed rejection and
//! full-pipeline determinism.

use scenefill::cloud::{apply_transform, GroundedTransform, Point3, PointCloud, Vector3};
use scenefill::evalkit::fixtures::{chair_database, chair_room, chair_room_config, CHAIR_CLASS};
use scenefill::evalkit::{chair_mesh, evaluate, synthesize_scene, Camera, ChairParams, Placement, Room, SceneSpec, SyntheticScene};
use scenefill::modeldb::{ingest_mesh, IngestParams, ModelDatabase};
use scenefill::pipeline::{complete, detections, segment_scene};
use scenefill::segmentation::{extract_instances, planarity_filter, Cluster, SegmentationParams, Verdict};

fn floor(half: f64, spacing: f64) -> Vec<Point3> {
    let n = (2.0 * half / spacing).round() as i64;
    (0..=n)
        .flat_map(|i| (0..=n).map(move |j| Point3::new(-half + i as f64 * spacing, -half + j as f64 * spacing, 0.0)))
        .collect()
}

#[test]
fn two_chairs_on_a_labeled_floor_give_two_clusters() {
    let params = IngestParams::default();
    let chair = ingest_mesh(&chair_mesh(&ChairParams::default()), "c", CHAIR_CLASS, &params, "mem").unwrap().cloud;
    // Seats 1 m apart, so the closest parts are well over the 5 cm gap.
    let left = apply_transform(&chair, &GroundedTransform::new(0.3, Vector3::new(-0.5, 0.0, 0.0), 1.0).unwrap());
    let right = apply_transform(&chair, &GroundedTransform::new(2.0, Vector3::new(0.5, 0.0, 0.0), 1.0).unwrap());
    let floor_pts = floor(1.5, 0.03);
    let n_chairs = left.len() + right.len();
    let points: Vec<Point3> = left.points().iter().chain(right.points()).copied().chain(floor_pts.iter().copied()).collect();
    // The floor carries the chair label too; only its flatness separates it.
    let labels = vec![CHAIR_CLASS; points.len()];
    let scene = PointCloud::from_parts(points, None, Some(labels)).unwrap();

    let clusters = extract_instances(&scene, CHAIR_CLASS, &SegmentationParams::default()).unwrap();
    assert_eq!(clusters.len(), 2);
    for c in &clusters {
        let from_floor = c.source_indices.iter().filter(|&&i| i >= n_chairs).count();
        assert_eq!(from_floor, 0, "cluster {} holds {from_floor} floor points", c.cluster_id);
    }
    let sides: Vec<bool> = clusters.iter().map(|c| c.cloud.centroid().unwrap().x < 0.0).collect();
    assert_ne!(sides[0], sides[1]);
}

fn chair_against_wall(label_bleed: f64, bleed_radius: f64, seed: u64) -> (SyntheticScene, ModelDatabase) {
    let db = chair_database(1, seed, &IngestParams::default()).unwrap();
    let id = db.entries()[0].model_id.clone();
    let depth = {
        let (lo, hi) = db.entries()[0].cloud.bounds().unwrap();
        hi.y - lo.y
    };
    // The backrest faces -y and sits 5 cm from the wall.
    let wall_y = -depth / 2.0 - 0.05;
    let look = Point3::new(0.0, 0.0, 0.4);
    let spec = SceneSpec {
        placements: vec![Placement { model_id: id, x: 0.0, y: 0.0, yaw: 0.0, scale: 1.0 }],
        room: Some(Room { min: [-2.0, wall_y], max: [2.0, 3.0], wall_height: 2.0, spacing: 0.03 }),
        cameras: vec![
            Camera::new(Point3::new(-1.6, 2.6, 1.8), look),
            Camera::new(Point3::new(1.6, 2.6, 1.8), look),
            Camera::new(Point3::new(0.0, 2.8, 1.8), look),
        ],
        noise_sigma: 0.005,
        label_bleed,
        seed,
        image_res: 256,
        bleed_radius,
    };
    let scene = synthesize_scene(&spec, &db).unwrap();
    (scene, db)
}

#[test]
fn wall_bleed_is_rejected_and_the_chair_survives() {
    let (scene, db) = chair_against_wall(0.1, 0.2, 10);
    let labels = scene.semantic.labels().unwrap();
    let bled: Vec<usize> = (0..scene.semantic.len())
        .filter(|&i| scene.source_object[i].is_none() && labels[i] == CHAIR_CLASS)
        .collect();
    let wall_y = scene.semantic.bounds().unwrap().0.y;
    let on_wall: Vec<usize> = bled.iter().copied().filter(|&i| scene.semantic.points()[i].y < wall_y + 0.02).collect();
    assert!(on_wall.len() > 50, "{} of {} bled points on the wall", on_wall.len(), bled.len());

    // The bled patch on its own is a flat cluster.
    let patch = Cluster::new(scene.semantic.select(&on_wall), CHAIR_CLASS, 0).unwrap();
    let verdict = planarity_filter(&patch, &SegmentationParams::default()).unwrap().verdict;
    assert_eq!(verdict, Verdict::RejectedPlanar);

    // In the pipeline no kept cluster is wall, and the chair is still found.
    let config = chair_room_config();
    let (clusters, reports) = segment_scene(&scene.semantic, &[CHAIR_CLASS], &config.segmentation).unwrap();
    for (c, r) in clusters.iter().zip(&reports) {
        let wall = c.source_indices.iter().filter(|i| on_wall.contains(i)).count();
        if r.verdict == Verdict::Kept {
            assert!(wall * 10 < c.len(), "kept cluster {} is {wall}/{} wall", c.cluster_id, c.len());
        }
    }
    let out = complete(&scene.semantic, &db, &config).unwrap();
    assert_eq!(out.matches.len(), 1);
    let report = evaluate(&detections(&out.layer), &scene.truth, 0.5).unwrap();
    assert_eq!((report.tp, report.fp, report.fn_), (1, 0, 0));
}

#[test]
fn isolated_bled_wall_never_survives() {
    // Mislabeled wall strip with range noise, far from any object.
    let mut points = Vec::new();
    for i in 0..60 {
        for j in 0..40 {
            let wobble = ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5;
            points.push(Point3::new(i as f64 * 0.02, 0.003 * wobble, 0.3 + j as f64 * 0.02));
        }
    }
    let n = points.len();
    let scene = PointCloud::from_parts(points, None, Some(vec![CHAIR_CLASS; n])).unwrap();
    let mut params = SegmentationParams::default();
    params.lambda_range = [0.1, 1.0];
    // Difference of normals drops most of it; whatever is left fails a filter.
    let (_, reports) = segment_scene(&scene, &[CHAIR_CLASS], &params).unwrap();
    assert!(reports.iter().all(|r| r.verdict != Verdict::Kept), "{reports:?}");
    let whole = Cluster::new(scene.clone(), CHAIR_CLASS, 0).unwrap();
    assert_eq!(planarity_filter(&whole, &params).unwrap().verdict, Verdict::RejectedPlanar);
}

#[test]
fn five_chair_room_completes_deterministically() {
    let db = chair_database(20, 101, &IngestParams::default()).unwrap();
    let ids: Vec<String> = db.entries().iter().map(|e| e.model_id.clone()).collect();
    let spec = chair_room(&ids, 5, 1, 0.005, 0.05);
    let scene = synthesize_scene(&spec, &db).unwrap();
    assert_eq!(scene, synthesize_scene(&spec, &db).unwrap());
    let mut config = chair_room_config();
    let first = complete(&scene.semantic, &db, &config).unwrap();
    config.workers = 1;
    let sequential = complete(&scene.semantic, &db, &config).unwrap();
    assert_eq!(first, sequential);
    let report = evaluate(&detections(&first.layer), &scene.truth, 0.5).unwrap();
    assert!(report.f1 >= 0.8, "{}", report.table());
}


#[test]
fn occlusion_stripe_narrower_than_the_gap_keeps_one_cluster() {
    let chair = ingest_mesh(&chair_mesh(&ChairParams::default()), "c", CHAIR_CLASS, &IngestParams::default(), "mem").unwrap().cloud;
    let n = chair.len();
    let chair = chair.with_labels(vec![CHAIR_CLASS; n]).unwrap();
    let params = SegmentationParams::default();
    // Cut a 3 cm vertical stripe out of the middle of the chair.
    let kept: Vec<usize> = (0..chair.len()).filter(|&i| chair.points()[i].x.abs() > 0.015).collect();
    let striped = chair.select(&kept);
    let clusters = extract_instances(&striped, CHAIR_CLASS, &params).unwrap();
    assert_eq!(clusters.len(), 1, "{:?}", clusters.iter().map(|c| c.len()).collect::<Vec<_>>());
    // A stripe wider than the gap splits it.
    let kept: Vec<usize> = (0..chair.len()).filter(|&i| chair.points()[i].x.abs() > 0.1).collect();
    let split = extract_instances(&chair.select(&kept), CHAIR_CLASS, &params).unwrap();
    assert_eq!(split.len(), 2);
}
