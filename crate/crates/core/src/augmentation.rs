//! Object layer and augmented scene: matched models are placed in the world
//! and replace the scene points they cover.

use std::path::Path;

use rayon::prelude::*;

use crate::cloud::io::{save_cloud, save_cloud_with_provenance};
use crate::cloud::{apply_transform, GroundedTransform, NeighborIndex, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};
use crate::modeldb::{MatchResult, ModelDatabase};
use crate::registration::Grounding;

/// Default removal radius ε, meters.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Provenance tag of points kept from the input scene.
pub const ORIGINAL: u16 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub result: MatchResult,
    /// Database model in world frame, labeled with the match's class.
    pub cloud: PointCloud,
}

/// Completed objects ordered by cluster id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectLayer {
    pub objects: Vec<PlacedObject>,
}

impl ObjectLayer {
    /// Places every match. Objects are sorted by cluster id, then model id.
    pub fn build(matches: &[MatchResult], db: &ModelDatabase, grounding: Grounding) -> Result<Self> {
        let mut objects = matches
            .iter()
            .map(|m| {
                let cloud = place_model(m, db, grounding)?;
                let mut result = m.clone();
                if grounding == Grounding::Floor {
                    // Record the vertical shift so the stored transform reproduces the cloud.
                    let placed = apply_transform(&db.get(&m.model_id).expect("placed above").cloud, &m.world_transform);
                    let dz = cloud.points()[0].z - placed.points()[0].z;
                    result.world_transform = GroundedTransform::from_translation(Vector3::new(0.0, 0.0, dz)).compose(&m.world_transform);
                }
                Ok(PlacedObject { result, cloud })
            })
            .collect::<Result<Vec<_>>>()?;
        objects.sort_by(|a, b| {
            a.result
                .cluster_id
                .cmp(&b.result.cluster_id)
                .then_with(|| a.result.model_id.cmp(&b.result.model_id))
        });
        Ok(Self { objects })
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    /// Writes `object_<k>_cluster_<id>.ply` per object, k counting from 1.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, o) in self.objects.iter().enumerate() {
            save_cloud(&o.cloud, dir.join(format!("object_{}_cluster_{}.ply", k + 1, o.result.cluster_id)))?;
        }
        Ok(())
    }
}

/// The matched database model under its world transform. With
/// [`Grounding::Floor`] the result is shifted vertically so its lowest point
/// sits at z = 0.
pub fn place_model(m: &MatchResult, db: &ModelDatabase, grounding: Grounding) -> Result<PointCloud> {
    let entry = db.get(&m.model_id).ok_or_else(|| Error::UnknownModel(m.model_id.clone()))?;
    let placed = apply_transform(&entry.cloud, &m.world_transform);
    let placed = match grounding {
        Grounding::PartialExtent => placed,
        Grounding::Floor => {
            let (lo, _) = placed.bounds().ok_or(Error::EmptyCloud)?;
            if lo.z == 0.0 {
                placed
            } else {
                placed.map_points(|p| Point3::new(p.x, p.y, p.z - lo.z))
            }
        }
    };
    placed.with_labels(vec![m.class_id; entry.cloud.len()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedScene {
    pub cloud: PointCloud,
    /// Per point: [`ORIGINAL`] or k for the k-th object of the layer.
    pub provenance: Vec<u16>,
    /// Indices into the input scene of the removed points, ascending.
    pub removed: Vec<usize>,
}

impl AugmentedScene {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_cloud_with_provenance(&self.cloud, &self.provenance, path)
    }
}

/// Indices of scene points within `epsilon` of any placed object.
pub fn covered_points(scene: &PointCloud, layer: &ObjectLayer, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let indices = layer
        .objects
        .iter()
        .map(|o| NeighborIndex::build(&o.cloud))
        .collect::<Result<Vec<_>>>()?;
    let eps2 = epsilon * epsilon;
    Ok(scene
        .points()
        .par_iter()
        .enumerate()
        .filter(|(_, p)| indices.iter().any(|ix| ix.nearest_squared(p).1 <= eps2))
        .map(|(i, _)| i)
        .collect())
}

/// Drops the scene points within `epsilon` of any placed object and appends
/// the placed objects. Surviving points keep their input order and exact
/// coordinates; objects follow in layer order.
pub fn augment_scene(scene: &PointCloud, layer: &ObjectLayer, epsilon: f64) -> Result<AugmentedScene> {
    if layer.objects.len() >= u16::MAX as usize {
        return Err(Error::invalid("too many objects for 16-bit provenance tags"));
    }
    let removed = if layer.is_empty() {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Vec::new()
    } else {
        covered_points(scene, layer, epsilon)?
    };
    let mut keep = vec![true; scene.len()];
    for &i in &removed {
        keep[i] = false;
    }
    let survivors: Vec<usize> = (0..scene.len()).filter(|&i| keep[i]).collect();
    let kept = scene.select(&survivors).without_normals();

    let mut provenance = vec![ORIGINAL; kept.len()];
    let mut parts = vec![kept];
    for (k, o) in layer.objects.iter().enumerate() {
        provenance.extend(std::iter::repeat_n(k as u16 + 1, o.cloud.len()));
        parts.push(o.cloud.clone().without_normals());
    }
    // Labels survive only when the input scene carries them.
    let cloud = PointCloud::concat(parts.iter());
    Ok(AugmentedScene {
        cloud,
        provenance,
        removed,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::modeldb::{IngestParams, ModelEntry};
    use crate::registration::Alignment;

    fn db_with(cloud: &PointCloud) -> ModelDatabase {
        let mut db = ModelDatabase::new(IngestParams {
            surface_samples: cloud.len(),
            db_points: cloud.len(),
            seed: 0,
        });
        db.insert(ModelEntry::from_cloud("m", 1, cloud, "mem").unwrap()).unwrap();
        db
    }

    fn result(t: GroundedTransform, cluster_id: u32) -> MatchResult {
        MatchResult {
            cluster_id,
            class_id: 1,
            model_id: "m".into(),
            alignment: Alignment {
                transform: t,
                delta: 0.0,
                residual_history: vec![0.0],
                iterations: 0,
            },
            world_transform: t,
            delta: 0.0,
            ranking: Vec::new(),
        }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                        rng.random_range(0.0..extent),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_placement_keeps_canonical_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let db = db_with(&random_cloud(&mut rng, 50, 1.0));
        let placed = place_model(&result(GroundedTransform::identity(), 0), &db, Grounding::PartialExtent).unwrap();
        assert_eq!(placed.points(), db.entries()[0].cloud.points());
    }

    #[test]
    fn placement_matches_hand_computed_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let db = db_with(&random_cloud(&mut rng, 50, 1.0));
        let t = GroundedTransform::new(FRAC_PI_2, Vector3::new(1.0, 2.0, 0.0), 1.0).unwrap();
        let placed = place_model(&result(t, 0), &db, Grounding::PartialExtent).unwrap();
        for (p, q) in placed.points().iter().zip(db.entries()[0].cloud.points()) {
            // Quarter turn: (x, y) -> (-y, x).
            let expect = Point3::new(-q.y + 1.0, q.x + 2.0, q.z);
            assert!((p - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn floor_mode_grounds_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let db = db_with(&random_cloud(&mut rng, 50, 1.0));
        let t = GroundedTransform::new(0.2, Vector3::new(0.0, 0.0, -0.05), 1.0).unwrap();
        let placed = place_model(&result(t, 0), &db, Grounding::Floor).unwrap();
        assert_eq!(placed.bounds().unwrap().0.z, 0.0);
        let loose = place_model(&result(t, 0), &db, Grounding::PartialExtent).unwrap();
        assert!((loose.bounds().unwrap().0.z + 0.05).abs() < 1e-12);
        let layer = ObjectLayer::build(&[result(t, 0)], &db, Grounding::Floor).unwrap();
        let again = apply_transform(&db.entries()[0].cloud, &layer.objects[0].result.world_transform);
        for (p, q) in again.points().iter().zip(layer.objects[0].cloud.points()) {
            assert!((p - q).norm() < 1e-9);
        }
        let mut bad = result(t, 0);
        bad.model_id = "nope".into();
        assert!(place_model(&bad, &db, Grounding::Floor).is_err());
    }

    #[test]
    fn empty_layer_returns_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_cloud(&mut rng, 100, 2.0);
        let a = augment_scene(&g, &ObjectLayer::default(), 0.1).unwrap();
        assert_eq!(a.cloud, g);
        assert!(a.provenance.iter().all(|&p| p == ORIGINAL));
    }

    #[test]
    fn single_point_within_epsilon_is_removed() {
        let model = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let db = db_with(&model);
        let layer = ObjectLayer::build(&[result(GroundedTransform::identity(), 0)], &db, Grounding::PartialExtent).unwrap();
        let placed = &layer.objects[0].cloud;
        let g = PointCloud::new(vec![placed.points()[0] + Vector3::new(0.0, 0.05, 0.0)]).unwrap();
        let a = augment_scene(&g, &layer, 0.1).unwrap();
        assert_eq!(a.removed, vec![0]);
        assert_eq!(a.cloud.len(), placed.len());
        assert_eq!(a.provenance, vec![1, 1]);
    }

    fn brute_removed(g: &PointCloud, layer: &ObjectLayer, eps: f64) -> Vec<usize> {
        (0..g.len())
            .filter(|&i| {
                layer
                    .objects
                    .iter()
                    .any(|o| o.cloud.points().iter().any(|q| (g.points()[i] - q).norm() <= eps))
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn set_algebra(seed in any::<u64>(), eps in 0.01f64..0.5, eps2 in 0.01f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_cloud(&mut rng, 300, 1.5);
            let db = db_with(&random_cloud(&mut rng, 80, 0.5));
            let t = GroundedTransform::new(rng.random_range(0.0..6.0), Vector3::new(0.3, -0.2, 0.0), 1.0).unwrap();
            let layer = ObjectLayer::build(&[result(t, 0)], &db, Grounding::PartialExtent).unwrap();
            let a = augment_scene(&g, &layer, eps).unwrap();
            prop_assert_eq!(&a.removed, &brute_removed(&g, &layer, eps));
            prop_assert_eq!(a.cloud.len(), g.len() - a.removed.len() + layer.objects[0].cloud.len());
            // Survivors are bit-identical and in input order.
            let survivors: Vec<&Point3> = (0..g.len()).filter(|i| !a.removed.contains(i)).map(|i| &g.points()[i]).collect();
            for (p, q) in a.cloud.points().iter().zip(survivors) {
                prop_assert_eq!(p, q);
            }
            // Monotone in epsilon.
            let (lo, hi) = if eps <= eps2 { (eps, eps2) } else { (eps2, eps) };
            let small = covered_points(&g, &layer, lo).unwrap();
            let large = covered_points(&g, &layer, hi).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }

    #[test]
    fn object_order_does_not_depend_on_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_cloud(&mut rng, 200, 2.0);
        let db = db_with(&random_cloud(&mut rng, 40, 0.4));
        let a = result(GroundedTransform::new(0.0, Vector3::new(1.0, 0.0, 0.0), 1.0).unwrap(), 3);
        let b = result(GroundedTransform::new(1.0, Vector3::new(-1.0, 0.0, 0.0), 1.0).unwrap(), 1);
        let l1 = ObjectLayer::build(&[a.clone(), b.clone()], &db, Grounding::PartialExtent).unwrap();
        let l2 = ObjectLayer::build(&[b, a], &db, Grounding::PartialExtent).unwrap();
        assert_eq!(augment_scene(&g, &l1, 0.2).unwrap(), augment_scene(&g, &l2, 0.2).unwrap());
        assert_eq!(l1.objects[0].result.cluster_id, 1);
    }
}
