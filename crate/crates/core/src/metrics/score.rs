//! Alignment-based pose and surface error scores.
//!
//! Geometry stays in meters throughout; only the reported numbers are
//! converted to millimeters.

use super::align::procrustes_align;
use super::MetricsError;

pub const MM_PER_M: f64 = 1000.0;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-point distances after least-squares similarity alignment, meters.
pub fn aligned_errors(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Vec<f64>, MetricsError> {
    let alignment = procrustes_align(pred, gt)?;
    Ok(alignment
        .apply_all(pred)
        .iter()
        .zip(gt)
        .map(|(p, g)| dist(*p, *g))
        .collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean per-joint position error after alignment, millimeters.
pub fn pa_mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64, MetricsError> {
    Ok(mean(&aligned_errors(pred, gt)?) * MM_PER_M)
}

/// Mean per-vertex position error after alignment, millimeters.
pub fn pa_mpvpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64, MetricsError> {
    pa_mpjpe(pred, gt)
}

/// Harmonic mean of precision and recall at distance `threshold` (meters).
/// The inputs are expected to be aligned already.
pub fn f_score(pred: &[[f64; 3]], gt: &[[f64; 3]], threshold: f64) -> Result<f64, MetricsError> {
    if threshold <= 0.0 {
        return Err(MetricsError::BadThreshold { got: threshold });
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let within = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        let hits = from
            .iter()
            .filter(|p| to.iter().any(|q| dist(**p, *q) <= threshold))
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = within(pred, gt);
    let recall = within(gt, pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Fraction of points within each of `n` thresholds equally spaced over
/// (0, t_max] (meters), plus the mean of those fractions. The inputs are
/// expected to be aligned already.
pub fn pck_auc(
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
    t_max: f64,
    n: usize,
) -> Result<(Vec<f64>, f64), MetricsError> {
    if t_max <= 0.0 {
        return Err(MetricsError::BadThreshold { got: t_max });
    }
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.is_empty() || n == 0 {
        return Err(MetricsError::EmptyPointSet);
    }
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).collect();
    let pck: Vec<f64> = (1..=n)
        .map(|i| {
            let t = t_max * i as f64 / n as f64;
            errors.iter().filter(|e| **e <= t).count() as f64 / errors.len() as f64
        })
        .collect();
    let auc = mean(&pck);
    Ok((pck, auc))
}
