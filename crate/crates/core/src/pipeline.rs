//! End-to-end completion: segment → filter → match → place → augment, and the
//! flat `key = value` configuration that drives it.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::augmentation::{augment_scene, AugmentedScene, ObjectLayer, DEFAULT_EPSILON};
use crate::cloud::{ClassId, PointCloud};
use crate::costmap::ProjectionParams;
use crate::error::{Error, Result};
use crate::evalkit::{Detection, DEFAULT_D_MATCH};
use crate::modeldb::{match_cluster, MatchOptions, MatchResult, ModelDatabase};
use crate::registration::RegistrationParams;
use crate::segmentation::{extract_instances, filter_cluster, Cluster, FilterReport, SegmentationParams, Verdict};

/// Every tunable of the pipeline. Loaded from a flat text file where each
/// non-empty line is `key = value` and `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub segmentation: SegmentationParams,
    pub registration: RegistrationParams,
    pub top_k: usize,
    /// 0 uses all available cores; 1 runs the sequential path.
    pub workers: usize,
    pub paper_coarse: bool,
    pub seed: u64,
    pub db: Option<PathBuf>,
    /// Classes to complete; empty means every class in the database.
    pub classes: Vec<ClassId>,
    pub epsilon: f64,
    pub projection: ProjectionParams,
    pub d_match: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationParams::default(),
            registration: RegistrationParams::default(),
            top_k: 5,
            workers: 0,
            paper_coarse: false,
            seed: 0,
            db: None,
            classes: Vec::new(),
            epsilon: DEFAULT_EPSILON,
            projection: ProjectionParams::default(),
            d_match: DEFAULT_D_MATCH,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("bad value {value:?} for {key}: expected true or false"))),
    }
}

impl PipelineConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let s = &mut self.segmentation;
        let r = &mut self.registration;
        let p = &mut self.projection;
        match key {
            "r_small" => s.r_small = parse_value(key, value)?,
            "r_large" => s.r_large = parse_value(key, value)?,
            "don_threshold" => s.don_threshold = parse_value(key, value)?,
            "cluster_gap" => s.cluster_gap = parse_value(key, value)?,
            "min_points" => s.min_points = parse_value(key, value)?,
            "lambda_min" => s.lambda_range[0] = parse_value(key, value)?,
            "lambda_max" => s.lambda_range[1] = parse_value(key, value)?,
            "planarity_ratio" => s.planarity_ratio = parse_value(key, value)?,
            "planarity_abs" => s.planarity_abs = parse_value(key, value)?,
            "yaw_samples" => r.yaw_samples = parse_value(key, value)?,
            "max_iterations" => r.max_iterations = parse_value(key, value)?,
            "convergence_tol" => r.convergence_tol = parse_value(key, value)?,
            "outlier_factor" => r.outlier_factor = parse_value(key, value)?,
            "grounding" => r.grounding = parse_value(key, value)?,
            "scale_mode" => r.scale_mode = parse_value(key, value)?,
            "coarse_refine_steps" => r.coarse_refine_steps = parse_value(key, value)?,
            "coarse_offset_radius" => r.coarse_offset_radius = parse_value(key, value)?,
            "coarse_points" => r.coarse_points = parse_value(key, value)?,
            "icp_starts" => r.icp_starts = parse_value(key, value)?,
            "top_k" => self.top_k = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "paper_coarse" => self.paper_coarse = parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "db" => self.db = (!value.is_empty()).then(|| PathBuf::from(value)),
            "classes" => {
                self.classes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| parse_value(key, v))
                    .collect::<Result<_>>()?
            }
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "z_min" => p.z_min = parse_value(key, value)?,
            "z_max" => p.z_max = parse_value(key, value)?,
            "resolution" => p.resolution = parse_value(key, value)?,
            "padding" => p.padding = parse_value(key, value)?,
            "d_match" => self.d_match = parse_value(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = Self::default();
        config.merge_text(text, origin)?;
        Ok(config)
    }

    /// Applies the settings in `text` on top of the current values.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, n + 1, "expected key = value"))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.registration.validate()?;
        self.projection.validate()?;
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be positive"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.d_match > 0.0) || !self.d_match.is_finite() {
            return Err(Error::invalid("d_match must be positive"));
        }
        Ok(())
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            registration: self.registration.clone(),
            top_k: self.top_k,
            workers: self.workers,
            paper_coarse: self.paper_coarse.then_some(self.seed),
        }
    }
}

/// Writes every key, so the output parses back to the same config.
impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.segmentation;
        let r = &self.registration;
        let p = &self.projection;
        writeln!(f, "r_small = {}", s.r_small)?;
        writeln!(f, "r_large = {}", s.r_large)?;
        writeln!(f, "don_threshold = {}", s.don_threshold)?;
        writeln!(f, "cluster_gap = {}", s.cluster_gap)?;
        writeln!(f, "min_points = {}", s.min_points)?;
        writeln!(f, "lambda_min = {}", s.lambda_range[0])?;
        writeln!(f, "lambda_max = {}", s.lambda_range[1])?;
        writeln!(f, "planarity_ratio = {}", s.planarity_ratio)?;
        writeln!(f, "planarity_abs = {}", s.planarity_abs)?;
        writeln!(f, "yaw_samples = {}", r.yaw_samples)?;
        writeln!(f, "max_iterations = {}", r.max_iterations)?;
        writeln!(f, "convergence_tol = {}", r.convergence_tol)?;
        writeln!(f, "outlier_factor = {}", r.outlier_factor)?;
        writeln!(f, "grounding = {}", r.grounding)?;
        writeln!(f, "scale_mode = {}", r.scale_mode)?;
        writeln!(f, "coarse_refine_steps = {}", r.coarse_refine_steps)?;
        writeln!(f, "coarse_offset_radius = {}", r.coarse_offset_radius)?;
        writeln!(f, "coarse_points = {}", r.coarse_points)?;
        writeln!(f, "icp_starts = {}", r.icp_starts)?;
        writeln!(f, "top_k = {}", self.top_k)?;
        writeln!(f, "workers = {}", self.workers)?;
        writeln!(f, "paper_coarse = {}", self.paper_coarse)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "db = {}", self.db.as_ref().map(|d| d.display().to_string()).unwrap_or_default())?;
        let classes: Vec<String> = self.classes.iter().map(ToString::to_string).collect();
        writeln!(f, "classes = {}", classes.join(","))?;
        writeln!(f, "epsilon = {}", self.epsilon)?;
        writeln!(f, "z_min = {}", p.z_min)?;
        writeln!(f, "z_max = {}", p.z_max)?;
        writeln!(f, "resolution = {}", p.resolution)?;
        writeln!(f, "padding = {}", p.padding)?;
        writeln!(f, "d_match = {}", self.d_match)
    }
}

/// Classes the pipeline works on: the configured list, or all database classes.
pub fn target_classes(config: &PipelineConfig, db: &ModelDatabase) -> Vec<ClassId> {
    if config.classes.is_empty() {
        db.classes.keys().copied().collect()
    } else {
        let mut c = config.classes.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Extracts clusters of every class in `classes` (ascending) and runs the
/// filters. Cluster ids are renumbered to be unique across classes.
pub fn segment_scene(
    semantic: &PointCloud,
    classes: &[ClassId],
    params: &SegmentationParams,
) -> Result<(Vec<Cluster>, Vec<FilterReport>)> {
    let mut clusters = Vec::new();
    for &class_id in classes {
        for mut c in extract_instances(semantic, class_id, params)? {
            c.cluster_id = clusters.len() as u32;
            clusters.push(c);
        }
    }
    let reports = clusters
        .iter()
        .map(|c| filter_cluster(c, params))
        .collect::<Result<Vec<_>>>()?;
    Ok((clusters, reports))
}

/// Matches the clusters whose filter verdict is [`Verdict::Kept`], in
/// cluster order.
pub fn match_kept(
    clusters: &[Cluster],
    reports: &[FilterReport],
    db: &ModelDatabase,
    options: &MatchOptions,
) -> Result<Vec<MatchResult>> {
    clusters
        .iter()
        .filter(|c| {
            reports
                .iter()
                .any(|r| r.cluster_id == c.cluster_id && r.verdict == Verdict::Kept)
        })
        .map(|c| match_cluster(c, db, options))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub clusters: Vec<Cluster>,
    pub reports: Vec<FilterReport>,
    pub matches: Vec<MatchResult>,
    pub layer: ObjectLayer,
    pub augmented: AugmentedScene,
}

/// Full pipeline on a labeled scene. The same cloud serves as the geometry
/// that placed models are merged into.
pub fn complete(semantic: &PointCloud, db: &ModelDatabase, config: &PipelineConfig) -> Result<Completion> {
    config.validate()?;
    let classes = target_classes(config, db);
    let (clusters, reports) = segment_scene(semantic, &classes, &config.segmentation)?;
    let matches = match_kept(&clusters, &reports, db, &config.match_options())?;
    let layer = ObjectLayer::build(&matches, db, config.registration.grounding)?;
    let augmented = augment_scene(semantic, &layer, config.epsilon)?;
    Ok(Completion {
        clusters,
        reports,
        matches,
        layer,
        augmented,
    })
}

/// One detection per placed object, at the centroid of its placed cloud.
pub fn detections(layer: &ObjectLayer) -> Vec<Detection> {
    layer
        .objects
        .iter()
        .filter_map(|o| {
            Some(Detection {
                class_id: o.result.class_id,
                centroid: o.cloud.centroid()?,
            })
        })
        .collect()
}
