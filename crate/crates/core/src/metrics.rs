//! Evaluation metrics: Chamfer distance, unidirectional Chamfer distance,
//! F1-score and minimum matching distance.
//!
//! Values are raw (normalized-frame units). Table-style scaling happens only
//! when reports are formatted.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{KdTree, PointCloud};

/// Default F1 distance threshold (unsquared L2).
pub const F1_EPSILON: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub scale_factor: f64,
    pub per_item: Option<Vec<(String, f64)>>,
}

impl MetricReport {
    pub fn scaled(&self) -> f64 {
        self.value * self.scale_factor
    }
}

/// Display scale used by the result tables for each metric.
pub fn table_scale(metric: &str) -> f64 {
    match metric {
        "cd" | "ucd" | "mmd" => 1e4,
        "f1" => 1e2,
        _ => 1.0,
    }
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
pub fn directional(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::new(to.points());
    let mut sum = 0.0;
    for p in from {
        sum += tree.nearest(p).1;
    }
    sum / from.len() as f64
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    directional(a, b) + directional(b, a)
}

/// Unidirectional Chamfer distance from the partial input to its completion.
pub fn ucd(partial: &PointCloud, completed: &PointCloud) -> f64 {
    directional(partial, completed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub f1: f64,
    pub accuracy: f64,
    pub completeness: f64,
}

fn fraction_within(from: &PointCloud, to: &PointCloud, epsilon: f64) -> f64 {
    let tree = KdTree::new(to.points());
    let hits = from
        .iter()
        .filter(|p| tree.nearest(p).1.sqrt() < epsilon)
        .count();
    hits as f64 / from.len() as f64
}

pub fn f1(pred: &PointCloud, gt: &PointCloud, epsilon: f64) -> Result<F1Score> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("F1 threshold must be positive, got {epsilon}")));
    }
    let accuracy = fraction_within(pred, gt, epsilon);
    let completeness = fraction_within(gt, pred, epsilon);
    let denom = accuracy + completeness;
    let f1 = if denom == 0.0 {
        0.0
    } else {
        2.0 * accuracy * completeness / denom
    };
    Ok(F1Score {
        f1,
        accuracy,
        completeness,
    })
}

/// Per-prediction minimum Chamfer distance to the ground-truth set.
pub fn mmd_per_item(preds: &[PointCloud], gts: &[PointCloud]) -> Result<Vec<f64>> {
    if preds.is_empty() || gts.is_empty() {
        return Err(Error::invalid("MMD needs non-empty prediction and ground-truth sets"));
    }
    Ok(preds
        .par_iter()
        .map(|p| gts.iter().map(|g| chamfer(p, g)).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Unweighted mean of per-prediction minima.
pub fn mmd(preds: &[PointCloud], gts: &[PointCloud]) -> Result<f64> {
    let per = mmd_per_item(preds, gts)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()).unwrap()
    }

    #[test]
    fn chamfer_hand_values() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        let b = cloud(&[(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&a, &b), 2.0);
        assert_eq!(chamfer(&a, &a), 0.0);
    }

    #[test]
    fn ucd_hand_values() {
        let p = cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        let c = cloud(&[(0.0, 0.0, 0.0)]);
        assert_eq!(ucd(&p, &c), 2.0);
        assert_eq!(ucd(&c, &p), 0.0);
        let sup = cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (5.0, 1.0, 0.0)]);
        assert_eq!(ucd(&p, &sup), 0.0);
    }

    #[test]
    fn f1_hand_values() {
        let a = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let same = f1(&a, &a, F1_EPSILON).unwrap();
        assert_eq!((same.f1, same.accuracy, same.completeness), (1.0, 1.0, 1.0));

        let far = f1(&cloud(&[(0.0, 0.0, 0.0)]), &cloud(&[(0.0, 0.0, 0.05)]), 0.03).unwrap();
        assert_eq!((far.f1, far.accuracy, far.completeness), (0.0, 0.0, 0.0));

        let half = f1(&a, &cloud(&[(0.0, 0.0, 0.0)]), 0.03).unwrap();
        assert_eq!(half.accuracy, 0.5);
        assert_eq!(half.completeness, 1.0);
        assert!((half.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_threshold_is_strict_and_validated() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        let b = cloud(&[(0.5, 0.0, 0.0)]);
        assert_eq!(f1(&a, &b, 0.5).unwrap().f1, 0.0);
        assert!(f1(&a, &b, 0.0).is_err());
        assert!(f1(&a, &b, -1.0).is_err());
    }

    #[test]
    fn mmd_picks_minimum() {
        let a = cloud(&[(0.0, 0.0, 0.0), (0.1, 0.2, 0.0)]);
        let b = cloud(&[(40.0, 0.0, 0.0)]);
        assert_eq!(mmd(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(mmd(&[a.clone()], &[a.clone(), b]).unwrap(), 0.0);
        assert!(mmd(&[], &[a]).is_err());
    }
}
