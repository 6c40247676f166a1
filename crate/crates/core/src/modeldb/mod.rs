//! The synthetic model database: ingestion of triangle meshes into canonical
//! point clouds, persistence, and the exhaustive best-match search.

mod mesh;
mod sampling;
mod search;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mesh::TriangleMesh;
pub use sampling::{farthest_point_subsample, sample_surface};
pub use search::{match_cluster, read_match_report, write_match_report, MatchOptions, MatchResult, RankedModel};
pub use store::{load_database, save_database, MANIFEST_FILE, MANIFEST_VERSION};

use crate::cloud::{farthest_point_distance, quantize_point, ClassId, NeighborIndex, Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    /// Area-weighted surface samples drawn before subsampling.
    pub surface_samples: usize,
    /// Points kept per model after farthest-point subsampling.
    pub db_points: usize,
    pub seed: u64,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            surface_samples: 16384,
            db_points: 2048,
            seed: 0,
        }
    }
}

impl IngestParams {
    pub fn validate(&self) -> Result<()> {
        if self.db_points == 0 {
            return Err(Error::invalid("db_points must be positive"));
        }
        if self.surface_samples < self.db_points {
            return Err(Error::invalid("surface_samples must be at least db_points"));
        }
        Ok(())
    }
}

/// One complete model in canonical frame: lowest point at z = 0 and
/// xy-centroid at the origin. Coordinates lie on the 6-decimal file grid.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub model_id: String,
    pub class_id: ClassId,
    pub cloud: PointCloud,
    /// Farthest point distance to the centroid, meters.
    pub lambda: f64,
    /// Vertical extent, meters.
    pub height: f64,
    pub source: String,
    index: OnceLock<NeighborIndex>,
}

impl PartialEq for ModelEntry {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
            && self.class_id == other.class_id
            && self.cloud == other.cloud
            && self.lambda == other.lambda
            && self.height == other.height
            && self.source == other.source
    }
}

const CANONICAL_TOLERANCE: f64 = 1e-5;

impl ModelEntry {
    /// Canonicalizes `cloud` and records its size statistics.
    pub fn from_cloud(model_id: impl Into<String>, class_id: ClassId, cloud: &PointCloud, source: impl Into<String>) -> Result<Self> {
        let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;
        let (lo, _) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        let points: Vec<Point3> = cloud
            .points()
            .iter()
            .map(|p| quantize_point(&Point3::new(p.x - centroid.x, p.y - centroid.y, p.z - lo.z)))
            .collect();
        let cloud = PointCloud::new(points)?;
        Self::from_canonical(model_id.into(), class_id, cloud, source.into())
    }

    pub(crate) fn from_canonical(model_id: String, class_id: ClassId, cloud: PointCloud, source: String) -> Result<Self> {
        let lambda = farthest_point_distance(&cloud)?;
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        Ok(Self {
            model_id,
            class_id,
            cloud,
            lambda,
            height: hi.z - lo.z,
            source,
            index: OnceLock::new(),
        })
    }

    /// Checks the canonical-frame invariants and the recorded statistics.
    pub fn validate(&self, db_points: usize) -> Result<()> {
        let bad = |what: String| Err(Error::Database(format!("model `{}`: {what}", self.model_id)));
        if self.cloud.len() != db_points {
            return bad(format!("{} points, expected {db_points}", self.cloud.len()));
        }
        let (lo, hi) = self.cloud.bounds().ok_or(Error::EmptyCloud)?;
        let c = self.cloud.centroid().ok_or(Error::EmptyCloud)?;
        if lo.z.abs() > CANONICAL_TOLERANCE || c.x.abs() > CANONICAL_TOLERANCE || c.y.abs() > CANONICAL_TOLERANCE {
            return bad("not in canonical frame".into());
        }
        let lambda = farthest_point_distance(&self.cloud)?;
        if (lambda - self.lambda).abs() > 1e-9 || ((hi.z - lo.z) - self.height).abs() > 1e-9 {
            return bad("lambda/height disagree with cloud".into());
        }
        Ok(())
    }

    /// Neighbor index over the canonical cloud, built on first use.
    pub fn index(&self) -> &NeighborIndex {
        self.index
            .get_or_init(|| NeighborIndex::build(&self.cloud).expect("model clouds are non-empty"))
    }
}

/// Stable 64-bit FNV-1a, used to derive per-model seeds from ids.
fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn model_seed(seed: u64, model_id: &str) -> u64 {
    seed ^ fnv1a(model_id)
}

/// Samples a mesh into a canonical database entry.
pub fn ingest_mesh(mesh: &TriangleMesh, model_id: &str, class_id: ClassId, params: &IngestParams, source: &str) -> Result<ModelEntry> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dense = sample_surface(mesh, params.surface_samples, &mut rng)?;
    let start = (rand::Rng::random::<u64>(&mut rng) % dense.len() as u64) as usize;
    let chosen = farthest_point_subsample(&dense, params.db_points, start);
    let cloud = PointCloud::new(chosen.iter().map(|&i| dense[i]).collect())?;
    ModelEntry::from_cloud(model_id, class_id, &cloud, source)
}

/// Reads a mesh file and ingests it under `model_id` (defaults to the file name).
pub fn ingest_model(mesh_path: impl AsRef<Path>, class_id: ClassId, params: &IngestParams) -> Result<ModelEntry> {
    let path = mesh_path.as_ref();
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mesh = TriangleMesh::load(path)?;
    ingest_mesh(&mesh, &id, class_id, params, &path.display().to_string())
}

/// An immutable set of canonical models grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDatabase {
    entries: Vec<ModelEntry>,
    pub params: IngestParams,
    pub classes: BTreeMap<ClassId, String>,
}

impl ModelDatabase {
    pub fn new(params: IngestParams) -> Self {
        Self {
            entries: Vec::new(),
            params,
            classes: BTreeMap::new(),
        }
    }

    /// Adds an entry, keeping entries sorted by id. Ids must be unique.
    pub fn insert(&mut self, entry: ModelEntry) -> Result<()> {
        entry.validate(self.params.db_points)?;
        match self.entries.binary_search_by(|e| e.model_id.as_str().cmp(&entry.model_id)) {
            Ok(_) => Err(Error::Database(format!("duplicate model id `{}`", entry.model_id))),
            Err(pos) => {
                self.classes
                    .entry(entry.class_id)
                    .or_insert_with(|| format!("class_{}", entry.class_id));
                self.entries.insert(pos, entry);
                Ok(())
            }
        }
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelEntry> {
        self.entries
            .binary_search_by(|e| e.model_id.as_str().cmp(model_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Entries of one class, in id order.
    pub fn of_class(&self, class_id: ClassId) -> impl Iterator<Item = &ModelEntry> {
        self.entries.iter().filter(move |e| e.class_id == class_id)
    }
}

/// Outcome of a directory build: the database plus per-file failures.
#[derive(Debug)]
pub struct BuildOutcome {
    pub database: ModelDatabase,
    pub failures: Vec<(String, Error)>,
}

fn collect_meshes(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_meshes(root, &path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("obj") | Some("ply")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Ingests every `.obj`/`.ply` mesh under `mesh_dir`; model ids are the
/// relative paths. Fails only if no mesh could be ingested.
pub fn build_database(mesh_dir: impl AsRef<Path>, class_id: ClassId, params: &IngestParams) -> Result<BuildOutcome> {
    params.validate()?;
    let root = mesh_dir.as_ref();
    let mut files = Vec::new();
    collect_meshes(root, root, &mut files)?;
    let mut items: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(root).unwrap_or(&p);
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            (id, p)
        })
        .collect();
    items.sort();

    let mut database = ModelDatabase::new(params.clone());
    let mut failures = Vec::new();
    for (id, path) in items {
        let per_model = IngestParams {
            seed: model_seed(params.seed, &id),
            ..params.clone()
        };
        let result = TriangleMesh::load(&path).and_then(|mesh| ingest_mesh(&mesh, &id, class_id, &per_model, &id));
        match result.and_then(|entry| database.insert(entry)) {
            Ok(()) => {}
            Err(e) => failures.push((id, e)),
        }
    }
    if database.is_empty() {
        return Err(Error::Database(format!(
            "no mesh under {} could be ingested ({} failures)",
            root.display(),
            failures.len()
        )));
    }
    Ok(BuildOutcome { database, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Point3::new(3.0, 4.0, 1.0),
                Point3::new(4.0, 4.0, 1.0),
                Point3::new(4.0, 5.0, 1.0),
                Point3::new(3.0, 5.0, 1.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    fn small_params() -> IngestParams {
        IngestParams {
            surface_samples: 1000,
            db_points: 200,
            seed: 42,
        }
    }

    #[test]
    fn square_is_canonicalized() {
        let e = ingest_mesh(&unit_square(), "sq", 1, &small_params(), "mem").unwrap();
        assert_eq!(e.cloud.len(), 200);
        let c = e.cloud.centroid().unwrap();
        assert!(c.x.abs() < 0.02 && c.y.abs() < 0.02);
        for p in e.cloud.points() {
            assert_eq!(p.z, 0.0);
        }
        assert_eq!(e.height, 0.0);
        e.validate(200).unwrap();
    }

    #[test]
    fn ingestion_is_deterministic() {
        let a = ingest_mesh(&unit_square(), "sq", 1, &small_params(), "mem").unwrap();
        let b = ingest_mesh(&unit_square(), "sq", 1, &small_params(), "mem").unwrap();
        assert_eq!(a, b);
        let other = IngestParams {
            seed: 43,
            ..small_params()
        };
        assert_ne!(a.cloud, ingest_mesh(&unit_square(), "sq", 1, &other, "mem").unwrap().cloud);
    }

    #[test]
    fn zero_area_mesh_is_rejected() {
        let mesh = TriangleMesh {
            vertices: vec![Point3::origin(); 3],
            triangles: vec![[0, 1, 2]],
        };
        assert!(ingest_mesh(&mesh, "flat", 1, &small_params(), "mem").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut db = ModelDatabase::new(small_params());
        let e = ingest_mesh(&unit_square(), "sq", 1, &small_params(), "mem").unwrap();
        db.insert(e.clone()).unwrap();
        assert!(db.insert(e).is_err());
        assert!(db.get("sq").is_some());
        assert!(db.get("nope").is_none());
    }
}
