//! Alignment of a complete model to a partial observation: a coarse sweep over
//! sampled yaw angles, ICP refinement constrained to yaw and translation, and
//! the directed model distance δ used to rank models.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{farthest_point_distance, GroundedTransform, NeighborIndex, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

/// How the partial view is placed vertically in its local frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grounding {
    /// Lowest observed point defines the ground.
    #[default]
    PartialExtent,
    /// World z is kept as height above the floor plane z = 0.
    Floor,
}

impl std::str::FromStr for Grounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" | "partial_extent" => Ok(Grounding::PartialExtent),
            "floor" => Ok(Grounding::Floor),
            other => Err(Error::invalid(format!("unknown grounding `{other}` (expected partial or floor)"))),
        }
    }
}

impl std::fmt::Display for Grounding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grounding::PartialExtent => "partial",
            Grounding::Floor => "floor",
        })
    }
}

/// Where the scale of a model hypothesis comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Database models are metric; scale stays 1.
    #[default]
    Metric,
    /// [`initial_scale`]: λ(partial) / λ(model), clamped.
    LambdaRatio,
}

impl std::str::FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(ScaleMode::Metric),
            "lambda_ratio" => Ok(ScaleMode::LambdaRatio),
            other => Err(Error::invalid(format!("unknown scale mode `{other}` (expected metric or lambda_ratio)"))),
        }
    }
}

impl std::fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScaleMode::Metric => "metric",
            ScaleMode::LambdaRatio => "lambda_ratio",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationParams {
    pub yaw_samples: usize,
    pub max_iterations: usize,
    /// Stop when one ICP step improves δ by less than this, meters.
    pub convergence_tol: f64,
    /// Correspondences farther than this multiple of the median distance are ignored.
    pub outlier_factor: f64,
    pub grounding: Grounding,
    pub scale_mode: ScaleMode,
    /// Translation-only correspondence steps applied to every yaw hypothesis
    /// before it is scored; 0 scores the centroid-aligned hypotheses as is.
    pub coarse_refine_steps: usize,
    /// Half-width of the xy offset grid tried around every centroid-aligned
    /// hypothesis, meters; the grid has 5 x 5 nodes. 0 disables it.
    pub coarse_offset_radius: f64,
    /// Partial points used to score coarse hypotheses.
    pub coarse_points: usize,
    /// ICP runs from this many of the best coarse hypotheses; the lowest
    /// final δ wins.
    pub icp_starts: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            yaw_samples: 36,
            max_iterations: 50,
            convergence_tol: 1e-6,
            outlier_factor: 2.5,
            grounding: Grounding::PartialExtent,
            scale_mode: ScaleMode::Metric,
            coarse_refine_steps: 3,
            coarse_offset_radius: 0.16,
            coarse_points: 128,
            icp_starts: 5,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if self.yaw_samples < 4 {
            return Err(Error::invalid("yaw_samples must be at least 4"));
        }
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if self.icp_starts < 1 || self.coarse_points < 1 {
            return Err(Error::invalid("icp_starts and coarse_points must be at least 1"));
        }
        if !(self.coarse_offset_radius >= 0.0) {
            return Err(Error::invalid("coarse_offset_radius must be non-negative"));
        }
        if !(self.convergence_tol > 0.0) || !(self.outlier_factor > 0.0) {
            return Err(Error::invalid("convergence_tol and outlier_factor must be positive"));
        }
        Ok(())
    }
}

/// Result of registering a model to a partial view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Model canonical frame -> partial local frame.
    pub transform: GroundedTransform,
    /// Final model distance δ, meters.
    pub delta: f64,
    /// δ before the first step and after every accepted step; non-increasing.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

/// A model cloud with its neighbor index, in the model's own frame.
#[derive(Debug, Clone, Copy)]
pub struct IndexedModel<'a> {
    pub cloud: &'a PointCloud,
    pub index: &'a NeighborIndex,
}

impl<'a> IndexedModel<'a> {
    pub fn new(cloud: &'a PointCloud, index: &'a NeighborIndex) -> Self {
        debug_assert_eq!(cloud.len(), index.len());
        Self { cloud, index }
    }

    /// Nearest transformed-model point for `p`: (model index, distance).
    ///
    /// The query runs in the model frame; since `transform` is a similarity,
    /// distances scale by `transform.scale()`.
    fn nearest(&self, p: &Point3, inverse: &GroundedTransform, scale: f64) -> (usize, f64) {
        let (i, d) = self.index.nearest(&inverse.apply_point(p));
        (i, d * scale)
    }

    /// [`nearest`](Self::nearest) seeded with the model point that answered a
    /// nearby query.
    fn nearest_hinted(&self, p: &Point3, inverse: &GroundedTransform, scale: f64, hint: usize) -> (usize, f64) {
        let (i, d2) = self.index.nearest_squared_hinted(&inverse.apply_point(p), hint);
        (i, d2.sqrt() * scale)
    }

    /// Mean directed distance from `partial` to the transformed model.
    pub fn distance(&self, partial: &PointCloud, transform: &GroundedTransform) -> f64 {
        let inverse = transform.inverse();
        let scale = transform.scale();
        let sum: f64 = partial
            .points()
            .iter()
            .map(|p| self.nearest(p, &inverse, scale).1)
            .sum();
        sum / partial.len() as f64
    }

    /// [`distance`](Self::distance), or `None` as soon as the mean is known
    /// to exceed `bound`.
    pub fn distance_bounded(&self, partial: &PointCloud, transform: &GroundedTransform, bound: f64) -> Option<f64> {
        let inverse = transform.inverse();
        let scale = transform.scale();
        let limit = bound * partial.len() as f64;
        let mut sum = 0.0;
        for p in partial.points() {
            sum += self.nearest(p, &inverse, scale).1;
            if sum > limit {
                return None;
            }
        }
        Some(sum / partial.len() as f64)
    }

    /// [`distance_bounded`](Self::distance_bounded) that seeds every query
    /// from `hints` (one per partial point, or empty) and stores the answers
    /// back into it.
    fn distance_bounded_hinted(&self, partial: &PointCloud, transform: &GroundedTransform, bound: f64, hints: &mut Vec<usize>) -> Option<f64> {
        let inverse = transform.inverse();
        let scale = transform.scale();
        let limit = bound * partial.len() as f64;
        if hints.len() != partial.len() {
            hints.clear();
            hints.resize(partial.len(), 0);
        }
        let mut sum = 0.0;
        for (p, hint) in partial.points().iter().zip(hints.iter_mut()) {
            let (i, d) = self.nearest_hinted(p, &inverse, scale, *hint);
            *hint = i;
            sum += d;
            if sum > limit {
                return None;
            }
        }
        Some(sum / partial.len() as f64)
    }
}

/// Translates a partial view into its local frame: xy-centroid at the origin
/// and, with [`Grounding::PartialExtent`], lowest point at z = 0.
///
/// Returns the local cloud and the local -> world transform.
pub fn normalize_partial(partial: &PointCloud, grounding: Grounding) -> Result<(PointCloud, GroundedTransform)> {
    let centroid = partial.centroid().ok_or(Error::EmptyCloud)?;
    let (lo, _) = partial.bounds().ok_or(Error::EmptyCloud)?;
    let shift = match grounding {
        Grounding::PartialExtent => Vector3::new(centroid.x, centroid.y, lo.z),
        Grounding::Floor => Vector3::new(centroid.x, centroid.y, 0.0),
    };
    let local = crate::cloud::apply_transform(partial, &GroundedTransform::from_translation(-shift));
    Ok((local, GroundedTransform::from_translation(shift)))
}

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 2.0;

/// Scale hypothesis λ(partial) / λ(model), clamped to [0.5, 2].
pub fn initial_scale(partial: &PointCloud, model: &PointCloud) -> Result<f64> {
    let lp = farthest_point_distance(partial)?;
    let lm = farthest_point_distance(model)?;
    if lm == 0.0 {
        return Err(Error::Degenerate("model has zero extent".into()));
    }
    Ok((lp / lm).clamp(MIN_SCALE, MAX_SCALE))
}

/// Scale of the model hypotheses under `mode`.
pub fn hypothesis_scale(partial: &PointCloud, model: &PointCloud, mode: ScaleMode) -> Result<f64> {
    match mode {
        ScaleMode::Metric => Ok(1.0),
        ScaleMode::LambdaRatio => initial_scale(partial, model),
    }
}

fn xy_centroid(cloud: &PointCloud) -> Vector3 {
    let c = cloud.centroid().unwrap_or_else(Point3::origin);
    Vector3::new(c.x, c.y, 0.0)
}

/// Mean over partial points of the distance to the nearest transformed model point.
pub fn model_distance(model: &PointCloud, partial: &PointCloud, transform: &GroundedTransform) -> Result<f64> {
    if partial.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NeighborIndex::build(model)?;
    Ok(IndexedModel::new(model, &index).distance(partial, transform))
}

/// Transform with the given yaw and scale whose translation aligns the
/// xy-centroids of the scaled, rotated model and the partial (z offset 0).
pub fn centroid_hypothesis(model: &PointCloud, partial: &PointCloud, yaw: f64, scale: f64) -> Result<GroundedTransform> {
    let rotated = GroundedTransform::new(yaw, Vector3::zeros(), scale)?;
    let translation = xy_centroid(partial) - rotated.apply_vector(&xy_centroid(model)) * scale;
    GroundedTransform::new(yaw, translation, scale)
}

/// Candidate transforms of the coarse sweep, one per sampled yaw.
pub fn yaw_hypotheses(model: &PointCloud, partial: &PointCloud, scale: f64, yaw_samples: usize) -> Result<Vec<GroundedTransform>> {
    (0..yaw_samples)
        .map(|k| centroid_hypothesis(model, partial, TAU * k as f64 / yaw_samples as f64, scale))
        .collect()
}

/// Sweeps `yaw_samples` evenly spaced yaw angles and returns the hypothesis
/// with the smallest δ; ties go to the smallest yaw.
pub fn coarse_align(model: &PointCloud, partial: &PointCloud, params: &RegistrationParams) -> Result<GroundedTransform> {
    let index = NeighborIndex::build(model)?;
    coarse_align_indexed(IndexedModel::new(model, &index), partial, params)
}

pub fn coarse_align_indexed(model: IndexedModel<'_>, partial: &PointCloud, params: &RegistrationParams) -> Result<GroundedTransform> {
    let candidates = coarse_candidates(model, partial, params)?;
    let scores: Vec<f64> = candidates.par_iter().map(|(t, _)| model.distance(partial, t)).collect();
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    Ok(candidates[best].0)
}

/// Farthest-point sample of at most `count` points, in original order.
fn coarse_sample(partial: &PointCloud, count: usize) -> PointCloud {
    if partial.len() <= count {
        return partial.clone();
    }
    let mut idx = crate::modeldb::farthest_point_subsample(partial.points(), count, 0);
    idx.sort_unstable();
    partial.select(&idx)
}

/// Every hypothesis of the coarse sweep, in yaw order, with its δ over a
/// farthest-point sample of at most `coarse_points` partial points.
pub fn coarse_candidates(model: IndexedModel<'_>, partial: &PointCloud, params: &RegistrationParams) -> Result<Vec<(GroundedTransform, f64)>> {
    params.validate()?;
    if partial.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let scale = hypothesis_scale(partial, model.cloud, params.scale_mode)?;
    let hypotheses = yaw_hypotheses(model.cloud, partial, scale, params.yaw_samples)?;
    let sample = coarse_sample(partial, params.coarse_points);
    let r = params.coarse_offset_radius;
    let offsets: Vec<Vector3> = if r > 0.0 {
        // Inner rings first: the early exit in the scoring then starts from a tight bound.
        let mut grid: Vec<(i32, i32)> = (-2..=2).flat_map(|i| (-2..=2).map(move |j| (i, j))).collect();
        grid.sort_by_key(|&(i, j)| i.abs().max(j.abs()));
        grid.iter()
            .map(|&(i, j)| Vector3::new(i as f64 * r / 2.0, j as f64 * r / 2.0, 0.0))
            .collect()
    } else {
        vec![Vector3::zeros()]
    };
    hypotheses
        .par_iter()
        .map(|t| {
            let mut best = (*t, f64::INFINITY);
            let mut hints = Vec::new();
            for o in &offsets {
                let shifted = GroundedTransform::new(t.yaw(), t.translation() + o, t.scale())?;
                if let Some(d) = model.distance_bounded_hinted(&sample, &shifted, best.1, &mut hints) {
                    if d < best.1 {
                        best = (shifted, d);
                    }
                }
            }
            refine_translation(model, &sample, &best.0, params, &mut hints)
        })
        .collect()
}

/// Shifts `t` in xy by the mean inlier correspondence offset, up to
/// `coarse_refine_steps` times, keeping the best hypothesis seen. Returns the
/// hypothesis and its δ.
fn refine_translation(
    model: IndexedModel<'_>,
    partial: &PointCloud,
    t: &GroundedTransform,
    params: &RegistrationParams,
    hints: &mut Vec<usize>,
) -> Result<(GroundedTransform, f64)> {
    let n = partial.len();
    hints.resize(n, 0);
    let mut best = *t;
    let mut dists = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    let mut best_score = f64::INFINITY;
    let mut current = *t;
    for step in 0..=params.coarse_refine_steps {
        let inverse = current.inverse();
        let scale = current.scale();
        dists.clear();
        offsets.clear();
        for (p, hint) in partial.points().iter().zip(hints.iter_mut()) {
            let (i, d) = model.nearest_hinted(p, &inverse, scale, *hint);
            *hint = i;
            dists.push(d);
            offsets.push(p - current.apply_point(&model.cloud.points()[i]));
        }
        let score = dists.iter().sum::<f64>() / n as f64;
        if score < best_score {
            best_score = score;
            best = current;
        } else {
            break;
        }
        if step == params.coarse_refine_steps {
            break;
        }
        let mut sorted = dists.clone();
        let cutoff = params.outlier_factor * median_in_place(&mut sorted);
        let (mut shift, mut count) = (Vector3::zeros(), 0usize);
        for (o, &d) in offsets.iter().zip(&dists) {
            if d <= cutoff {
                shift += Vector3::new(o.x, o.y, 0.0);
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        current = GroundedTransform::new(current.yaw(), current.translation() + shift / count as f64, scale)?;
    }
    Ok((best, best_score))
}

/// Refines yaw and translation with ICP; scale stays fixed.
///
/// Each step pairs every partial point with its nearest transformed model
/// point, drops pairs beyond `outlier_factor` times the median distance, and
/// solves the yaw/translation least-squares problem in closed form. A step
/// that would increase δ is discarded and ends the iteration.
pub fn icp_refine(model: &PointCloud, partial: &PointCloud, initial: &GroundedTransform, params: &RegistrationParams) -> Result<Alignment> {
    let index = NeighborIndex::build(model)?;
    icp_refine_indexed(IndexedModel::new(model, &index), partial, initial, params)
}

pub fn icp_refine_indexed(
    model: IndexedModel<'_>,
    partial: &PointCloud,
    initial: &GroundedTransform,
    params: &RegistrationParams,
) -> Result<Alignment> {
    params.validate()?;
    if partial.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = partial.len();
    let mut transform = *initial;
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut sorted: Vec<f64> = Vec::with_capacity(n);

    // Pairs from the previous transform seed the next search.
    let correspond = |t: &GroundedTransform, hints: &[(usize, f64)], out: &mut Vec<(usize, f64)>| -> f64 {
        out.clear();
        let inverse = t.inverse();
        let scale = t.scale();
        let mut sum = 0.0;
        for (k, p) in partial.points().iter().enumerate() {
            let (i, d) = match hints.get(k) {
                Some(&(hint, _)) => model.nearest_hinted(p, &inverse, scale, hint),
                None => model.nearest(p, &inverse, scale),
            };
            sum += d;
            out.push((i, d));
        }
        sum / n as f64
    };

    let mut residual = correspond(&transform, &[], &mut pairs);
    let mut history = vec![residual];
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        sorted.clear();
        sorted.extend(pairs.iter().map(|&(_, d)| d));
        let median = median_in_place(&mut sorted);
        let cutoff = params.outlier_factor * median;
        let scale = transform.scale();

        // Accumulate centroids of inlier pairs: a = scaled model point, b = partial point.
        let mut count = 0usize;
        let mut a_sum = Vector3::zeros();
        let mut b_sum = Vector3::zeros();
        for (k, &(i, d)) in pairs.iter().enumerate() {
            if d <= cutoff {
                count += 1;
                a_sum += model.cloud.points()[i].coords * scale;
                b_sum += partial.points()[k].coords;
            }
        }
        if count == 0 {
            return Err(Error::Degenerate("all ICP correspondences rejected".into()));
        }
        let a_mean = a_sum / count as f64;
        let b_mean = b_sum / count as f64;
        let (mut cross, mut dot) = (0.0, 0.0);
        for (k, &(i, d)) in pairs.iter().enumerate() {
            if d <= cutoff {
                let a = model.cloud.points()[i].coords * scale - a_mean;
                let b = partial.points()[k].coords - b_mean;
                cross += a.x * b.y - a.y * b.x;
                dot += a.x * b.x + a.y * b.y;
            }
        }
        let yaw = if cross.abs() + dot.abs() > 1e-300 {
            cross.atan2(dot)
        } else {
            transform.yaw()
        };
        let rotated_mean = GroundedTransform::new(yaw, Vector3::zeros(), 1.0)?.apply_vector(&a_mean);
        let candidate = GroundedTransform::new(yaw, b_mean - rotated_mean, scale)?;

        let mut candidate_pairs = Vec::with_capacity(n);
        let candidate_residual = correspond(&candidate, &pairs, &mut candidate_pairs);
        if candidate_residual > residual {
            break;
        }
        let improvement = residual - candidate_residual;
        transform = candidate;
        residual = candidate_residual;
        pairs = candidate_pairs;
        history.push(residual);
        if improvement < params.convergence_tol {
            break;
        }
    }

    Ok(Alignment {
        transform,
        delta: residual,
        residual_history: history,
        iterations,
    })
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Coarse sweep followed by ICP.
///
/// The `icp_starts` best coarse hypotheses (ties: smaller yaw first) are
/// refined on the coarse sample; the best of those is refined again on the
/// full partial.
pub fn register(model: IndexedModel<'_>, partial: &PointCloud, params: &RegistrationParams) -> Result<Alignment> {
    let mut candidates = coarse_candidates(model, partial, params)?;
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
    let sample = coarse_sample(partial, params.coarse_points);
    let mut best: Option<Alignment> = None;
    for (start, _) in candidates.iter().take(params.icp_starts) {
        let a = icp_refine_indexed(model, &sample, start, params)?;
        if best.as_ref().is_none_or(|b| a.delta < b.delta) {
            best = Some(a);
        }
    }
    let start = best.expect("at least one ICP start").transform;
    icp_refine_indexed(model, partial, &start, params)
}

/// Smallest absolute difference between two yaw angles, radians.
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cloud::apply_transform;

    fn brute_distance(model: &PointCloud, partial: &PointCloud, t: &GroundedTransform) -> f64 {
        let moved: Vec<Point3> = model.points().iter().map(|q| t.apply_point(q)).collect();
        let mut total = 0.0;
        for p in partial.points() {
            let mut best = f64::INFINITY;
            for q in &moved {
                let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
                best = best.min(d);
            }
            total += best;
        }
        total / partial.len() as f64
    }

    /// An asymmetric L-shaped object with distinct features at several heights.
    fn asymmetric_model(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|k| match k % 4 {
                0 => Point3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), 0.45),
                1 => Point3::new(rng.random_range(-0.3..0.3), 0.2, rng.random_range(0.45..1.0)),
                2 => Point3::new(0.3, rng.random_range(-0.2..0.2), rng.random_range(0.0..0.45)),
                _ => Point3::new(rng.random_range(-0.3..0.0), -0.2, rng.random_range(0.0..0.3)),
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        // Canonicalize: xy-centroid at origin, min z at 0.
        normalize_partial(&cloud, Grounding::PartialExtent).unwrap().0
    }

    #[test]
    fn normalize_and_invert() {
        let pts = vec![Point3::new(4.0, 2.0, 0.2), Point3::new(6.0, 4.0, 1.2), Point3::new(5.0, 3.0, 0.7)];
        let cloud = PointCloud::new(pts).unwrap();
        let (local, back) = normalize_partial(&cloud, Grounding::PartialExtent).unwrap();
        let c = local.centroid().unwrap();
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
        assert_eq!(local.bounds().unwrap().0.z, 0.0);
        assert_eq!(apply_transform(&local, &back), cloud);

        let (floor, _) = normalize_partial(&cloud, Grounding::Floor).unwrap();
        for (a, b) in floor.points().iter().zip(cloud.points()) {
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn normalize_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let pts: Vec<Point3> = (0..50)
                .map(|_| Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..3.0)))
                .collect();
            let cloud = PointCloud::new(pts).unwrap();
            for g in [Grounding::PartialExtent, Grounding::Floor] {
                let (local, back) = normalize_partial(&cloud, g).unwrap();
                for (a, b) in apply_transform(&local, &back).points().iter().zip(cloud.points()) {
                    assert!((a - b).abs().max() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn initial_scale_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = asymmetric_model(&mut rng, 400);
        assert_eq!(initial_scale(&model, &model).unwrap(), 1.0);
        let shrunk = apply_transform(&model, &GroundedTransform::new(0.0, Vector3::zeros(), 0.8).unwrap());
        assert!((initial_scale(&shrunk, &model).unwrap() - 0.8).abs() < 1e-9);
        let grown = apply_transform(&model, &GroundedTransform::new(0.0, Vector3::zeros(), 10.0).unwrap());
        assert_eq!(initial_scale(&grown, &model).unwrap(), 2.0);
        let point = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(initial_scale(&model, &point).is_err());
    }

    #[test]
    fn distance_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = asymmetric_model(&mut rng, 300);
        assert_eq!(model_distance(&model, &model, &GroundedTransform::identity()).unwrap(), 0.0);
        let a = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)]).unwrap();
        let b = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.5)]).unwrap();
        assert!((model_distance(&a, &b, &GroundedTransform::identity()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let model = PointCloud::new((0..150).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap();
            let partial = PointCloud::new((0..80).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap();
            let t = GroundedTransform::new(rng.random_range(0.0..TAU), Vector3::new(rng.random(), rng.random(), 0.1), rng.random_range(0.5..2.0)).unwrap();
            let fast = model_distance(&model, &partial, &t).unwrap();
            assert!((fast - brute_distance(&model, &partial, &t)).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_recovers_lattice_yaw() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = asymmetric_model(&mut rng, 600);
        let params = RegistrationParams::default();
        let yaw = TAU * 7.0 / 36.0;
        let partial = apply_transform(&model, &GroundedTransform::new(yaw, Vector3::zeros(), 1.0).unwrap());
        let t = coarse_align(&model, &partial, &params).unwrap();
        assert!(yaw_difference(t.yaw(), yaw) < 1e-9);
        assert!(model_distance(&model, &partial, &t).unwrap() < 1e-9);

        let t = coarse_align(&model, &model, &params).unwrap();
        assert_eq!(t.yaw(), 0.0);
        assert_eq!(model_distance(&model, &model, &t).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_cloud_ties_to_zero_yaw() {
        let circle = PointCloud::new(
            (0..36).map(|k| {
                let a = TAU * k as f64 / 36.0;
                Point3::new(a.cos(), a.sin(), 0.0)
            })
            .chain(std::iter::once(Point3::origin()))
            .collect(),
        )
        .unwrap();
        let mut params = RegistrationParams::default();
        params.yaw_samples = 4;
        let t = coarse_align(&circle, &circle, &params).unwrap();
        assert_eq!(t.yaw(), 0.0);
    }

    #[test]
    fn icp_recovers_offset_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = asymmetric_model(&mut rng, 1200);
        let truth = GroundedTransform::new(0.3, Vector3::new(0.2, -0.1, 0.0), 1.0).unwrap();
        let partial = apply_transform(&model, &truth);
        let (local, to_world) = normalize_partial(&partial, Grounding::PartialExtent).unwrap();
        let params = RegistrationParams::default();
        let coarse = coarse_align(&model, &local, &params).unwrap();
        let a = icp_refine(&model, &local, &coarse, &params).unwrap();
        let world = to_world.compose(&a.transform);
        assert!(yaw_difference(world.yaw(), 0.3) < 1f64.to_radians());
        assert!((world.translation() - truth.translation()).norm() < 0.01);
        assert!(a.delta < 1e-3);
        assert_eq!(a.delta, *a.residual_history.last().unwrap());
        assert!(a.residual_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn icp_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = asymmetric_model(&mut rng, 500);
        let truth = GroundedTransform::new(1.1, Vector3::new(0.05, 0.02, 0.0), 1.0).unwrap();
        let partial = apply_transform(&model, &truth);
        let a = icp_refine(&model, &partial, &truth, &RegistrationParams::default()).unwrap();
        assert!(a.iterations <= 2);
        assert!(yaw_difference(a.transform.yaw(), truth.yaw()) < 1e-9);
        assert!((a.transform.translation() - truth.translation()).norm() < 1e-9);
    }

    #[test]
    fn cropped_partial_has_zero_distance_at_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = asymmetric_model(&mut rng, 800);
        let truth = GroundedTransform::new(2.0, Vector3::new(1.0, 1.0, 0.0), 1.0).unwrap();
        let placed = apply_transform(&model, &truth);
        let keep: Vec<usize> = (0..placed.len()).filter(|&i| placed.points()[i].x > 1.0).collect();
        let half = placed.select(&keep);
        let a = icp_refine(&model, &half, &truth, &RegistrationParams::default()).unwrap();
        assert!(a.delta < 1e-12);
    }

    #[test]
    fn degenerate_overlap_errors() {
        let model = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let partial = PointCloud::new(vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        let mut params = RegistrationParams::default();
        params.outlier_factor = 0.5;
        assert!(matches!(
            icp_refine(&model, &partial, &GroundedTransform::identity(), &params),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn yaw_difference_wraps() {
        assert!((yaw_difference(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((yaw_difference(PI, 0.0) - PI).abs() < 1e-12);
    }
}
