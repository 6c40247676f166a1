use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelDatabase, ModelEntry};
use crate::cloud::{ClassId, GroundedTransform, PointCloud, Vector3};
use crate::error::{Error, Result};
use crate::registration::{
    centroid_hypothesis, coarse_align_indexed, hypothesis_scale, icp_refine_indexed, normalize_partial, register, Alignment, IndexedModel,
    RegistrationParams,
};
use crate::segmentation::Cluster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchOptions {
    pub registration: RegistrationParams,
    /// Runner-ups kept in the ranking (including the winner).
    pub top_k: usize,
    /// Worker threads; 0 uses the available parallelism and 1 runs the
    /// sequential reference path.
    pub workers: usize,
    /// When set, one coarse yaw is computed against a single model chosen
    /// with this seed and reused for every candidate.
    pub paper_coarse: Option<u64>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            registration: RegistrationParams::default(),
            top_k: 5,
            workers: 0,
            paper_coarse: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model_id: String,
    pub delta: f64,
}

/// The best database model for one cluster and where it goes in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatchRecord", try_from = "MatchRecord")]
pub struct MatchResult {
    pub cluster_id: u32,
    pub class_id: ClassId,
    pub model_id: String,
    /// Canonical model frame -> partial local frame.
    pub alignment: Alignment,
    /// Canonical model frame -> world frame.
    pub world_transform: GroundedTransform,
    pub delta: f64,
    /// Ascending by δ, ties by model id.
    pub ranking: Vec<RankedModel>,
}

/// Line format of the match report; the pose fields are the world transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRecord {
    cluster_id: u32,
    class_id: ClassId,
    model_id: String,
    delta: f64,
    yaw: f64,
    translation: [f64; 3],
    scale: f64,
    ranking: Vec<RankedModel>,
    alignment: Alignment,
}

impl From<MatchResult> for MatchRecord {
    fn from(m: MatchResult) -> Self {
        let t = m.world_transform.translation();
        Self {
            cluster_id: m.cluster_id,
            class_id: m.class_id,
            model_id: m.model_id,
            delta: m.delta,
            yaw: m.world_transform.yaw(),
            translation: [t.x, t.y, t.z],
            scale: m.world_transform.scale(),
            ranking: m.ranking,
            alignment: m.alignment,
        }
    }
}

impl TryFrom<MatchRecord> for MatchResult {
    type Error = Error;

    fn try_from(r: MatchRecord) -> Result<Self> {
        let [x, y, z] = r.translation;
        Ok(Self {
            cluster_id: r.cluster_id,
            class_id: r.class_id,
            model_id: r.model_id,
            alignment: r.alignment,
            world_transform: GroundedTransform::new(r.yaw, Vector3::new(x, y, z), r.scale)?,
            delta: r.delta,
            ranking: r.ranking,
        })
    }
}

fn candidate_alignment(
    entry: &ModelEntry,
    local: &PointCloud,
    coarse_yaw: Option<f64>,
    params: &RegistrationParams,
) -> Result<Alignment> {
    let model = IndexedModel::new(&entry.cloud, entry.index());
    match coarse_yaw {
        None => register(model, local, params),
        Some(yaw) => {
            // The shared yaw is reused, but scale and centroid offset are
            // recomputed for each model.
            let scale = hypothesis_scale(local, &entry.cloud, params.scale_mode)?;
            let start = centroid_hypothesis(&entry.cloud, local, yaw, scale)?;
            icp_refine_indexed(model, local, &start, params)
        }
    }
}

/// Registers every model of the cluster's class against the cluster and
/// returns the one with the smallest δ (ties: lowest model id).
pub fn match_cluster(cluster: &Cluster, db: &ModelDatabase, options: &MatchOptions) -> Result<MatchResult> {
    options.registration.validate()?;
    if options.top_k == 0 {
        return Err(Error::invalid("top_k must be positive"));
    }
    let candidates: Vec<&ModelEntry> = db.of_class(cluster.class_id).collect();
    if candidates.is_empty() {
        return Err(Error::NoModelsForClass(cluster.class_id));
    }
    let params = &options.registration;
    let (local, to_world) = normalize_partial(&cluster.cloud, params.grounding)?;

    let sweep = || -> Result<Vec<Result<Alignment>>> {
        let coarse_yaw = match options.paper_coarse {
            None => None,
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let reference = candidates[rng.random_range(0..candidates.len())];
                let model = IndexedModel::new(&reference.cloud, reference.index());
                Some(coarse_align_indexed(model, &local, params)?.yaw())
            }
        };
        let run = |e: &&ModelEntry| candidate_alignment(e, &local, coarse_yaw, params);
        Ok(if options.workers == 1 {
            candidates.iter().map(run).collect()
        } else {
            candidates.par_iter().map(run).collect()
        })
    };
    let outcomes = if options.workers == 1 {
        sweep()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(sweep)?
    };

    let mut scored = Vec::with_capacity(candidates.len());
    let mut first_error = None;
    for (entry, outcome) in candidates.iter().zip(outcomes) {
        match outcome {
            Ok(a) => scored.push((*entry, a)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if scored.is_empty() {
        return Err(first_error.expect("at least one candidate was evaluated"));
    }
    scored.sort_by(|(ea, a), (eb, b)| a.delta.total_cmp(&b.delta).then_with(|| ea.model_id.cmp(&eb.model_id)));

    let ranking = scored
        .iter()
        .take(options.top_k)
        .map(|(e, a)| RankedModel {
            model_id: e.model_id.clone(),
            delta: a.delta,
        })
        .collect();
    let (best, alignment) = scored.swap_remove(0);
    Ok(MatchResult {
        cluster_id: cluster.cluster_id,
        class_id: cluster.class_id,
        model_id: best.model_id.clone(),
        world_transform: to_world.compose(&alignment.transform),
        delta: alignment.delta,
        alignment,
        ranking,
    })
}

/// Writes one JSON record per match, in the given order.
pub fn write_match_report(path: impl AsRef<Path>, matches: &[MatchResult]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for m in matches {
        serde_json::to_writer(&mut out, m)?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_match_report(path: impl AsRef<Path>) -> Result<Vec<MatchResult>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut matches = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m = serde_json::from_str(&line).map_err(|e| Error::parse(path.display(), i + 1, e.to_string()))?;
        matches.push(m);
    }
    Ok(matches)
}
