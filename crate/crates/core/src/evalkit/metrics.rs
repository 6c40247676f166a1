use serde::{Deserialize, Serialize};

use super::scene::GroundTruth;
use crate::cloud::{ClassId, NeighborIndex, Point3, PointCloud};
use crate::error::{Error, Result};

/// Default centroid distance for a detection to count as a true positive, meters.
pub const DEFAULT_D_MATCH: f64 = 0.5;

/// A placed object as seen by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: ClassId,
    pub centroid: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub detection: usize,
    pub truth: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True-positive pairs, ascending by distance.
    pub assignments: Vec<Assignment>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Precision, recall and F1 from raw counts; zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            assignments: Vec::new(),
        }
    }

    /// Two-decimal summary table.
    pub fn table(&self) -> String {
        format!(
            "tp  fp  fn  precision  recall  f1\n{:<3} {:<3} {:<3} {:<10.2} {:<7.2} {:.2}\n",
            self.tp, self.fp, self.fn_, self.precision, self.recall, self.f1
        )
    }
}

/// Greedy one-to-one matching of detections to same-class truth objects by
/// ascending centroid distance; a pair counts when its distance is at most
/// `d_match`.
pub fn evaluate(detections: &[Detection], truth: &GroundTruth, d_match: f64) -> Result<EvalReport> {
    if !(d_match > 0.0) {
        return Err(Error::invalid("d_match must be positive"));
    }
    let mut pairs = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        for (j, t) in truth.objects.iter().enumerate() {
            if d.class_id == t.class_id {
                let dist = (d.centroid - t.centroid).norm();
                if dist <= d_match {
                    pairs.push((dist, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_det = vec![false; detections.len()];
    let mut used_truth = vec![false; truth.objects.len()];
    let mut assignments = Vec::new();
    for (distance, i, j) in pairs {
        if !used_det[i] && !used_truth[j] {
            used_det[i] = true;
            used_truth[j] = true;
            assignments.push(Assignment {
                detection: i,
                truth: j,
                distance,
            });
        }
    }
    let tp = assignments.len();
    let mut report = EvalReport::from_counts(tp, detections.len() - tp, truth.objects.len() - tp);
    report.assignments = assignments;
    Ok(report)
}

/// Mean nearest-neighbor distance from `placed` to `truth_model` and the
/// symmetric (chamfer-style) mean of both directions.
pub fn completion_error(placed: &PointCloud, truth_model: &PointCloud) -> Result<(f64, f64)> {
    let directed = |from: &PointCloud, to: &PointCloud| -> Result<f64> {
        let index = NeighborIndex::build(to)?;
        let sum: f64 = from.points().iter().map(|p| index.nearest(p).1).sum();
        Ok(sum / from.len() as f64)
    };
    if placed.is_empty() || truth_model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let forward = directed(placed, truth_model)?;
    let backward = directed(truth_model, placed)?;
    Ok((forward, 0.5 * (forward + backward)))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::evalkit::scene::TruthObject;

    fn truth(items: &[(ClassId, [f64; 3])]) -> GroundTruth {
        GroundTruth {
            objects: items
                .iter()
                .map(|&(c, [x, y, z])| TruthObject {
                    class_id: c,
                    centroid: Point3::new(x, y, z),
                    model_id: "m".into(),
                    x,
                    y,
                    yaw: 0.0,
                    scale: 1.0,
                })
                .collect(),
        }
    }

    fn det(c: ClassId, [x, y, z]: [f64; 3]) -> Detection {
        Detection {
            class_id: c,
            centroid: Point3::new(x, y, z),
        }
    }

    #[test]
    fn table_rows_from_counts() {
        let office = EvalReport::from_counts(11, 5, 8);
        assert!((office.precision - 0.6875).abs() < 1e-12);
        assert!((office.recall - 11.0 / 19.0).abs() < 1e-12);
        assert_eq!(format!("{:.2}/{:.2}/{:.2}", office.precision, office.recall, office.f1), "0.69/0.58/0.63");
        let corridor = EvalReport::from_counts(4, 1, 0);
        assert_eq!(format!("{:.2}/{:.2}/{:.2}", corridor.precision, corridor.recall, corridor.f1), "0.80/1.00/0.89");
        let none = EvalReport::from_counts(0, 0, 0);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn greedy_assignment_respects_class_and_distance() {
        let t = truth(&[(1, [0.0, 0.0, 0.0]), (1, [2.0, 0.0, 0.0]), (2, [5.0, 0.0, 0.0])]);
        let d = vec![
            det(1, [0.1, 0.0, 0.0]),
            det(1, [0.2, 0.0, 0.0]),
            det(1, [5.0, 0.0, 0.0]),
            det(2, [2.1, 0.0, 0.0]),
        ];
        let r = evaluate(&d, &t, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 3, 2));
        assert_eq!(r.assignments[0].detection, 0);
        assert!(evaluate(&d, &t, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn f1_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let r = EvalReport::from_counts(tp, fp, fn_);
            prop_assert_eq!(r.f1 == 0.0, tp == 0);
            if tp > 0 {
                let lo = r.precision.min(r.recall);
                let hi = r.precision.max(r.recall);
                prop_assert!(r.f1 >= lo - 1e-12 && r.f1 <= hi + 1e-12);
            }
            let swapped = EvalReport::from_counts(tp, fn_, fp);
            prop_assert!((swapped.f1 - r.f1).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(
            dets in prop::collection::vec((1u8..3, -3.0f64..3.0, -3.0f64..3.0), 0..8),
            truths in prop::collection::vec((1u8..3, -3.0f64..3.0, -3.0f64..3.0), 0..8),
            rot in 0usize..8,
        ) {
            let d: Vec<Detection> = dets.iter().map(|&(c, x, y)| det(c, [x, y, 0.0])).collect();
            let t = truth(&truths.iter().map(|&(c, x, y)| (c, [x, y, 0.0])).collect::<Vec<_>>());
            let base = evaluate(&d, &t, 1.0).unwrap();
            let mut d2 = d.clone();
            d2.reverse();
            if !d2.is_empty() { let k = rot % d2.len(); d2.rotate_left(k); }
            let mut t2 = t.clone();
            t2.objects.reverse();
            let other = evaluate(&d2, &t2, 1.0).unwrap();
            prop_assert_eq!((base.tp, base.fp, base.fn_), (other.tp, other.fp, other.fn_));
        }
    }

    #[test]
    fn completion_error_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut cloud = |n: usize| {
            PointCloud::new((0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap()
        };
        let (a, b) = (cloud(300), cloud(200));
        let brute = |from: &PointCloud, to: &PointCloud| {
            from.points()
                .iter()
                .map(|p| to.points().iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / from.len() as f64
        };
        let (d, s) = completion_error(&a, &b).unwrap();
        assert!((d - brute(&a, &b)).abs() < 1e-12);
        assert!((s - 0.5 * (brute(&a, &b) + brute(&b, &a))).abs() < 1e-12);
        assert_eq!(completion_error(&a, &a).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn completion_error_of_offset_copy() {
        // Dense plane sampled on a grid, shifted along its normal by d.
        let d = 0.03;
        let pts: Vec<Point3> = (0..100)
            .flat_map(|i| (0..100).map(move |j| Point3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0)))
            .collect();
        let truth_cloud = PointCloud::new(pts.clone()).unwrap();
        let placed = PointCloud::new(pts.iter().map(|p| p + crate::cloud::Vector3::new(0.0, 0.0, d)).collect()).unwrap();
        let (dir, sym) = completion_error(&placed, &truth_cloud).unwrap();
        assert!((dir - d).abs() < 1e-12 && (sym - d).abs() < 1e-12);
    }
}
