use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IngestParams, ModelDatabase, ModelEntry};
use crate::cloud::io::{read_ply, write_ply, PlyFormat};
use crate::cloud::ClassId;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    classes: BTreeMap<ClassId, String>,
    db_points: usize,
    surface_samples: usize,
    seed: u64,
    entries: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    file: String,
    class_id: ClassId,
    lambda: f64,
    height: f64,
    source: String,
    sha256: String,
}

fn model_file(model_id: &str) -> String {
    format!("models/{model_id}.ply")
}

/// Writes `manifest.json` and one ASCII PLY per model under `dir`.
pub fn save_database(db: &ModelDatabase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = BTreeMap::new();
    for e in db.entries() {
        let file = model_file(&e.model_id);
        let path = dir.join(&file);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        let bytes = write_ply(&e.cloud, None, PlyFormat::Ascii)?;
        std::fs::write(&path, &bytes).map_err(|err| Error::io(&path, err))?;
        entries.insert(
            e.model_id.clone(),
            ManifestEntry {
                file,
                class_id: e.class_id,
                lambda: e.lambda,
                height: e.height,
                source: e.source.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        classes: db.classes.clone(),
        db_points: db.params.db_points,
        surface_samples: db.params.surface_samples,
        seed: db.params.seed,
        entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a database written by [`save_database`], verifying checksums,
/// point counts and the recorded λ/height of every model.
pub fn load_database(dir: impl AsRef<Path>) -> Result<ModelDatabase> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(manifest_path.display(), e.line(), e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Database(format!(
            "{}: unsupported manifest version {}",
            manifest_path.display(),
            manifest.version
        )));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Database(format!("{}: no models", manifest_path.display())));
    }
    let params = IngestParams {
        surface_samples: manifest.surface_samples,
        db_points: manifest.db_points,
        seed: manifest.seed,
    };
    let mut db = ModelDatabase::new(params);
    db.classes = manifest.classes;
    for (id, m) in manifest.entries {
        let path = dir.join(&m.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != m.sha256 {
            return Err(Error::Checksum(path));
        }
        let cloud = read_ply(&bytes, &path.display().to_string())?.cloud;
        let entry = ModelEntry::from_canonical(id, m.class_id, cloud, m.source)?;
        if (entry.lambda - m.lambda).abs() > 1e-9 || (entry.height - m.height).abs() > 1e-9 {
            return Err(Error::Database(format!(
                "{}: lambda/height disagree with manifest",
                path.display()
            )));
        }
        db.insert(entry)
            .map_err(|e| Error::Database(format!("{}: {e}", path.display())))?;
    }
    Ok(db)
}
