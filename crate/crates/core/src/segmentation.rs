//! Object-instance extraction from a labeled scene and the shape filters that
//! reject mislabeled clusters.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::io::{load_cloud, save_cloud};
use crate::cloud::{covariance_summary, farthest_point_distance, ClassId, NeighborIndex, PointCloud, Vector3};
use crate::error::{Error, Result};

/// A candidate partial view of one object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cloud: PointCloud,
    pub class_id: ClassId,
    pub cluster_id: u32,
    /// Indices of the cluster points in the cloud they were extracted from.
    pub source_indices: Vec<usize>,
}

impl Cluster {
    /// Wraps a cloud as a cluster, labeling every point with `class_id`.
    pub fn new(cloud: PointCloud, class_id: ClassId, cluster_id: u32) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(labels) = cloud.labels() {
            if labels.iter().any(|&l| l != class_id) {
                return Err(Error::invalid(format!("cluster {cluster_id} mixes class labels")));
            }
        }
        let n = cloud.len();
        let cloud = cloud.with_labels(vec![class_id; n])?;
        Ok(Self {
            cloud,
            class_id,
            cluster_id,
            source_indices: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn file_name(&self) -> String {
        format!("cluster_{}_{}.ply", self.cluster_id, self.class_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationParams {
    /// Small difference-of-normals radius, meters.
    pub r_small: f64,
    /// Large difference-of-normals radius, meters.
    pub r_large: f64,
    pub don_threshold: f64,
    /// Single-linkage distance, meters.
    pub cluster_gap: f64,
    pub min_points: usize,
    /// Accepted farthest-point-distance interval, meters, inclusive.
    pub lambda_range: [f64; 2],
    pub planarity_ratio: f64,
    /// Absolute floor on the smallest covariance eigenvalue, m².
    pub planarity_abs: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            r_small: 0.05,
            r_large: 0.20,
            don_threshold: 0.25,
            cluster_gap: 0.05,
            min_points: 100,
            lambda_range: [0.1, 0.25],
            planarity_ratio: 0.01,
            planarity_abs: 1e-4,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_small", self.r_small),
            ("r_large", self.r_large),
            ("cluster_gap", self.cluster_gap),
            ("lambda_min", self.lambda_range[0]),
            ("lambda_max", self.lambda_range[1]),
            ("planarity_ratio", self.planarity_ratio),
            ("planarity_abs", self.planarity_abs),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r_small >= self.r_large {
            return Err(Error::invalid("r_small must be smaller than r_large"));
        }
        if self.lambda_range[0] >= self.lambda_range[1] {
            return Err(Error::invalid("lambda_min must be smaller than lambda_max"));
        }
        if !(0.0..=1.0).contains(&self.don_threshold) {
            return Err(Error::invalid("don_threshold must lie in [0, 1]"));
        }
        if self.min_points == 0 {
            return Err(Error::invalid("min_points must be positive"));
        }
        Ok(())
    }
}

fn is_marker(n: &Vector3) -> bool {
    *n == Vector3::zeros()
}

/// Difference-of-normals magnitude `|n_s - n_l| / 2`, insensitive to the sign
/// ambiguity of either normal.
pub fn don_magnitude(small: &Vector3, large: &Vector3) -> f64 {
    (small - large).norm().min((small + large).norm()) / 2.0
}

/// Extracts clusters of `class_id` points.
///
/// Points of the class are kept when their difference of normals reaches
/// `don_threshold` or when either normal scale is degenerate, then grouped by
/// single linkage at `cluster_gap`. Clusters below `min_points` are dropped.
/// Output is ordered by descending size, then by lowest source index, and
/// `cluster_id` is the position in that order.
pub fn extract_instances(semantic: &PointCloud, class_id: ClassId, params: &SegmentationParams) -> Result<Vec<Cluster>> {
    params.validate()?;
    let labels = semantic
        .labels()
        .ok_or_else(|| Error::invalid("semantic cloud has no labels"))?;
    let selected: Vec<usize> = (0..semantic.len()).filter(|&i| labels[i] == class_id).collect();
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let sub = semantic.select(&selected);
    let index = NeighborIndex::build(&sub)?;
    let small = crate::cloud::normals_with_index(sub.points(), &index, params.r_small);
    let large = crate::cloud::normals_with_index(sub.points(), &index, params.r_large);

    let keep: Vec<bool> = small
        .iter()
        .zip(&large)
        .map(|(s, l)| is_marker(s) || is_marker(l) || don_magnitude(s, l) >= params.don_threshold)
        .collect();

    let mut visited = vec![false; sub.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..sub.len() {
        if !keep[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            index.for_each_within(&sub.points()[i], params.cluster_gap, |j, _| {
                if keep[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            });
        }
        if members.len() >= params.min_points {
            members.sort_unstable();
            components.push(members);
        }
    }
    // Members are sorted and `selected` is increasing, so members[0] maps to
    // the lowest source index.
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    Ok(components
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let source_indices: Vec<usize> = members.iter().map(|&i| selected[i]).collect();
            Cluster {
                cloud: semantic.select(&source_indices).without_normals(),
                class_id,
                cluster_id: k as u32,
                source_indices,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Kept,
    RejectedPlanar,
    RejectedSize,
}

/// Filter decision together with the measurements it was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub cluster_id: u32,
    pub class_id: ClassId,
    pub verdict: Verdict,
    /// Farthest point distance to the centroid, meters.
    pub lambda: f64,
    /// Covariance eigenvalues, descending, m². All zero for clusters under 3 points.
    pub eigenvalues: [f64; 3],
    pub points: usize,
}

fn measure(cluster: &Cluster) -> Result<(f64, [f64; 3])> {
    let lambda = farthest_point_distance(&cluster.cloud)?;
    let eigenvalues = if cluster.len() >= 3 {
        covariance_summary(&cluster.cloud)?.eigenvalues
    } else {
        [0.0; 3]
    };
    Ok((lambda, eigenvalues))
}

fn report(cluster: &Cluster, verdict: Verdict, lambda: f64, eigenvalues: [f64; 3]) -> FilterReport {
    FilterReport {
        cluster_id: cluster.cluster_id,
        class_id: cluster.class_id,
        verdict,
        lambda,
        eigenvalues,
        points: cluster.len(),
    }
}

/// True when the smallest eigenvalue is close to zero in absolute or relative terms.
pub fn is_planar(eigenvalues: &[f64; 3], params: &SegmentationParams) -> bool {
    let [l1, _, l3] = *eigenvalues;
    l3 < params.planarity_abs || l3 < params.planarity_ratio * l1
}

pub fn lambda_in_range(lambda: f64, params: &SegmentationParams) -> bool {
    lambda >= params.lambda_range[0] && lambda <= params.lambda_range[1]
}

/// Rejects clusters whose covariance is flat along at least one axis.
pub fn planarity_filter(cluster: &Cluster, params: &SegmentationParams) -> Result<FilterReport> {
    if cluster.len() < 3 {
        return Err(Error::Degenerate(format!(
            "cluster {} has {} points, planarity needs 3",
            cluster.cluster_id,
            cluster.len()
        )));
    }
    let (lambda, eigenvalues) = measure(cluster)?;
    let verdict = if is_planar(&eigenvalues, params) {
        Verdict::RejectedPlanar
    } else {
        Verdict::Kept
    };
    Ok(report(cluster, verdict, lambda, eigenvalues))
}

/// Rejects clusters whose farthest-point distance λ falls outside the range.
pub fn size_filter(cluster: &Cluster, params: &SegmentationParams) -> Result<FilterReport> {
    let (lambda, eigenvalues) = measure(cluster)?;
    let verdict = if lambda_in_range(lambda, params) {
        Verdict::Kept
    } else {
        Verdict::RejectedSize
    };
    Ok(report(cluster, verdict, lambda, eigenvalues))
}

/// Runs both filters. A cluster is kept only if both keep it; when both
/// reject, the planarity verdict is reported. Clusters under 3 points are
/// rejected as planar.
pub fn filter_cluster(cluster: &Cluster, params: &SegmentationParams) -> Result<FilterReport> {
    let (lambda, eigenvalues) = measure(cluster)?;
    let verdict = if cluster.len() < 3 || is_planar(&eigenvalues, params) {
        Verdict::RejectedPlanar
    } else if !lambda_in_range(lambda, params) {
        Verdict::RejectedSize
    } else {
        Verdict::Kept
    };
    Ok(report(cluster, verdict, lambda, eigenvalues))
}

pub const FILTER_REPORT_FILE: &str = "filter_report.jsonl";

/// Writes one PLY per cluster plus the line-delimited filter report.
pub fn write_segmentation(dir: impl AsRef<Path>, clusters: &[Cluster], reports: &[FilterReport]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for cluster in clusters {
        save_cloud(&cluster.cloud, dir.join(cluster.file_name()))?;
    }
    let path = dir.join(FILTER_REPORT_FILE);
    let mut out = Vec::new();
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(&out).map_err(|e| Error::io(&path, e))
}

/// Reads back the clusters and reports written by [`write_segmentation`].
pub fn read_segmentation(dir: impl AsRef<Path>) -> Result<(Vec<Cluster>, Vec<FilterReport>)> {
    let dir = dir.as_ref();
    let path = dir.join(FILTER_REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: FilterReport = serde_json::from_str(line)
            .map_err(|e| Error::parse(path.display(), i + 1, e.to_string()))?;
        reports.push(r);
    }
    let mut clusters = Vec::with_capacity(reports.len());
    for r in &reports {
        let file = dir.join(format!("cluster_{}_{}.ply", r.cluster_id, r.class_id));
        let cloud = load_cloud(&file)?;
        let mut cluster = Cluster::new(cloud, r.class_id, r.cluster_id)?;
        cluster.source_indices.clear();
        clusters.push(cluster);
    }
    Ok((clusters, reports))
}
