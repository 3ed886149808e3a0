//! Two-sample and manifold-quality metrics for generated batches.
//!
//! Sample quality is scored with the energy distance, a proper two-sample
//! discrepancy that works on raw vectors of any dimension. Geometric health
//! is checked with on-sphere residuals and a radius sweep measuring how much
//! a batch is distorted by direction-preserving projection onto spheres of
//! varying radii; that sweep bottoms out at the batch's mean norm.

use crate::geometry::norm;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cannot project a zero vector")]
    ZeroVector,
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
}

fn check_batch(batch: &[Vec<f64>]) -> Result<usize, EvalError> {
    let d = batch.first().ok_or(EvalError::EmptyBatch)?.len();
    for v in batch {
        if v.len() != d {
            return Err(EvalError::DimensionMismatch(v.len(), d));
        }
    }
    Ok(d)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean pairwise distance within one batch, counting ordered pairs and the
/// zero self-distances (V-statistic convention).
fn mean_within(batch: &[Vec<f64>]) -> f64 {
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += distance(&batch[i], &batch[j]);
        }
    }
    2.0 * total / (n * n) as f64
}

/// Energy distance between two batches:
/// `2 E||a - b|| - E||a - a'|| - E||b - b'||`, with every expectation the
/// full-pair average (V-statistic). Nonnegative, symmetric, and zero when
/// the batches are identical multisets.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, EvalError> {
    let da = check_batch(a)?;
    let db = check_batch(b)?;
    if da != db {
        return Err(EvalError::DimensionMismatch(da, db));
    }
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += distance(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok(2.0 * cross - mean_within(a) - mean_within(b))
}

/// Distortion of a batch when projected onto the sphere of one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub radius: f64,
    pub distortion: f64,
}

/// For each radius r, the mean squared reconstruction error of the
/// direction-preserving projection, `mean ||x - r x/||x|| ||^2`. Since the
/// projection only moves points radially this equals `mean (||x|| - r)^2`,
/// which is convex in r with its minimum at the batch mean norm.
pub fn projection_sweep(batch: &[Vec<f64>], radii: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
    check_batch(batch)?;
    let norms: Vec<f64> = batch.iter().map(|v| norm(v)).collect();
    if norms.iter().any(|&s| s <= 0.0) {
        return Err(EvalError::ZeroVector);
    }
    radii
        .iter()
        .map(|&r| {
            if !(r.is_finite() && r > 0.0) {
                return Err(EvalError::BadRadius(r));
            }
            let distortion =
                norms.iter().map(|&s| (s - r) * (s - r)).sum::<f64>() / norms.len() as f64;
            Ok(SweepRow {
                radius: r,
                distortion,
            })
        })
        .collect()
}

/// Worst relative deviation of a batch from the sphere of radius r:
/// `max |  ||x|| - r | / r`.
pub fn on_sphere_residual(batch: &[Vec<f64>], r: f64) -> Result<f64, EvalError> {
    check_batch(batch)?;
    if !(r.is_finite() && r > 0.0) {
        return Err(EvalError::BadRadius(r));
    }
    Ok(batch
        .iter()
        .map(|v| (norm(v) - r).abs() / r)
        .fold(0.0, f64::max))
}
