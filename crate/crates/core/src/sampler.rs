//! Fixed-step ODE integration of a velocity field.
//!
//! The Euclidean integrator is the plain Euler scheme
//! `x <- x + (1/steps) v(x, t)`. The spherical integrator additionally
//! projects the raw model output onto the tangent space before stepping and
//! retracts each iterate back to the sphere, either radially (the default)
//! or along the exponential map; every iterate therefore satisfies the
//! on-sphere invariant, not just the endpoint. Function evaluations are
//! exactly `steps` per sample in either scheme.
//!
//! Fields are abstracted behind [`VelocityField`] so analytic fields (used
//! heavily in tests) and the learned MLP share the integrators. Batches
//! integrate jointly: one field evaluation per step covers all samples.

use crate::flow::FlowVariant;
use crate::geometry::{rescale_to_norm, GeometryError, SpherePoint, ZERO_NORM_THRESHOLD};
use crate::model::{forward_batch, MlpParams, ModelError};
use ndarray::Array2;
use thiserror::Error;

/// Default number of function evaluations for sampling.
pub const DEFAULT_NFE: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("integration requires at least one step")]
    ZeroSteps,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("radius mismatch ({0} vs {1})")]
    RadiusMismatch(f64, f64),
    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },
    #[error("iterate collapsed to the origin at step {step}; cannot retract")]
    ZeroIterate { step: usize },
    #[error("final norm must be positive and finite")]
    BadFinalNorm,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A time-dependent velocity field evaluated on a batch of states.
pub trait VelocityField {
    /// Rows of `xs` are states; `ts` holds one time per row. Returns one
    /// velocity per row.
    fn eval_batch(&self, xs: &Array2<f64>, ts: &[f64]) -> Result<Array2<f64>, SamplerError>;
}

impl VelocityField for MlpParams {
    fn eval_batch(&self, xs: &Array2<f64>, ts: &[f64]) -> Result<Array2<f64>, SamplerError> {
        Ok(forward_batch(self, xs, ts)?)
    }
}

/// How the spherical integrator returns to the manifold after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetractionScheme {
    /// Step in the ambient space, then radially project back to the sphere.
    RadialProjection,
    /// Follow the geodesic in the tangent direction for the step length.
    ExponentialMap,
}

/// One sampling run: how many Euler steps, which variant's geometry, whether
/// to rescale outputs to a dataset norm afterwards, and whether the EMA
/// weights are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRunConfig {
    pub steps: usize,
    pub variant: FlowVariant,
    pub final_norm: Option<f64>,
    pub use_ema: bool,
}

impl SampleRunConfig {
    pub fn new(
        steps: usize,
        variant: FlowVariant,
        final_norm: Option<f64>,
        use_ema: bool,
    ) -> Result<Self, SamplerError> {
        if steps == 0 {
            return Err(SamplerError::ZeroSteps);
        }
        if let Some(s) = final_norm {
            if !(s.is_finite() && s > 0.0) {
                return Err(SamplerError::BadFinalNorm);
            }
        }
        Ok(SampleRunConfig {
            steps,
            variant,
            final_norm,
            use_ema,
        })
    }
}

fn batch_to_array(x0s: &[Vec<f64>]) -> Result<Array2<f64>, SamplerError> {
    if x0s.is_empty() {
        return Err(SamplerError::EmptyBatch);
    }
    let d = x0s[0].len();
    for v in x0s {
        if v.len() != d {
            return Err(SamplerError::DimensionMismatch(v.len(), d));
        }
    }
    let mut xs = Array2::zeros((x0s.len(), d));
    for (i, v) in x0s.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            xs[[i, j]] = x;
        }
    }
    Ok(xs)
}

fn check_finite(xs: &Array2<f64>, step: usize) -> Result<(), SamplerError> {
    if xs.iter().any(|v| !v.is_finite()) {
        Err(SamplerError::NonFiniteState { step })
    } else {
        Ok(())
    }
}

/// Euler integration of a batch from `t = 0` to `t = 1`.
pub fn integrate_euclidean_batch<F: VelocityField>(
    field: &F,
    x0s: &[Vec<f64>],
    steps: usize,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    if steps == 0 {
        return Err(SamplerError::ZeroSteps);
    }
    let mut xs = batch_to_array(x0s)?;
    let n = xs.nrows();
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let vs = field.eval_batch(&xs, &vec![t; n])?;
        if vs.dim() != xs.dim() {
            return Err(SamplerError::DimensionMismatch(vs.ncols(), xs.ncols()));
        }
        xs = xs + h * &vs;
        check_finite(&xs, k)?;
    }
    Ok(xs.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Single-sample Euler integration.
pub fn integrate_euclidean<F: VelocityField>(
    field: &F,
    x0: &[f64],
    steps: usize,
) -> Result<Vec<f64>, SamplerError> {
    Ok(integrate_euclidean_batch(field, std::slice::from_ref(&x0.to_vec()), steps)?
        .pop()
        .expect("batch of one"))
}

/// One on-manifold step for the whole batch: tangent-project the raw field,
/// advance, then retract to radius `r`.
fn spherical_step(
    xs: &mut Array2<f64>,
    vs: &Array2<f64>,
    h: f64,
    r: f64,
    scheme: RetractionScheme,
    step: usize,
) -> Result<(), SamplerError> {
    let d = xs.ncols();
    for i in 0..xs.nrows() {
        let mut radial = 0.0;
        for j in 0..d {
            radial += vs[[i, j]] * xs[[i, j]];
        }
        let coeff = radial / (r * r);
        match scheme {
            RetractionScheme::RadialProjection => {
                let mut sq = 0.0;
                for j in 0..d {
                    let stepped = xs[[i, j]] + h * (vs[[i, j]] - coeff * xs[[i, j]]);
                    xs[[i, j]] = stepped;
                    sq += stepped * stepped;
                }
                let n = sq.sqrt();
                if !n.is_finite() {
                    return Err(SamplerError::NonFiniteState { step });
                }
                if n <= ZERO_NORM_THRESHOLD {
                    return Err(SamplerError::ZeroIterate { step });
                }
                let scale = r / n;
                for j in 0..d {
                    xs[[i, j]] *= scale;
                }
            }
            RetractionScheme::ExponentialMap => {
                let mut speed_sq = 0.0;
                let mut tangent = vec![0.0; d];
                for j in 0..d {
                    let tv = vs[[i, j]] - coeff * xs[[i, j]];
                    speed_sq += tv * tv;
                    tangent[j] = tv;
                }
                let speed = speed_sq.sqrt();
                if !speed.is_finite() {
                    return Err(SamplerError::NonFiniteState { step });
                }
                if speed > ZERO_NORM_THRESHOLD {
                    // Geodesic through x with initial velocity `tangent`,
                    // followed for arc parameter h: angle h * speed / r.
                    let angle = h * speed / r;
                    let (c, s) = (angle.cos(), angle.sin());
                    let mut sq = 0.0;
                    for j in 0..d {
                        let moved = c * xs[[i, j]] + s * (r / speed) * tangent[j];
                        xs[[i, j]] = moved;
                        sq += moved * moved;
                    }
                    // The closed form stays on the sphere to a few ulps;
                    // rescale so the invariant is exact for downstream checks.
                    let scale = r / sq.sqrt();
                    for j in 0..d {
                        xs[[i, j]] *= scale;
                    }
                }
            }
        }
    }
    Ok(())
}

/// On-manifold Euler integration of a batch with the chosen retraction.
/// All starting points must share the same sphere.
pub fn integrate_spherical_batch_with<F: VelocityField>(
    field: &F,
    x0s: &[SpherePoint],
    steps: usize,
    scheme: RetractionScheme,
) -> Result<Vec<SpherePoint>, SamplerError> {
    if steps == 0 {
        return Err(SamplerError::ZeroSteps);
    }
    if x0s.is_empty() {
        return Err(SamplerError::EmptyBatch);
    }
    let r = x0s[0].radius();
    let d = x0s[0].dim();
    for p in x0s {
        if p.dim() != d {
            return Err(SamplerError::DimensionMismatch(p.dim(), d));
        }
        if p.radius() != r {
            return Err(SamplerError::RadiusMismatch(p.radius(), r));
        }
    }
    let vecs: Vec<Vec<f64>> = x0s.iter().map(|p| p.vector().to_vec()).collect();
    let mut xs = batch_to_array(&vecs)?;
    let n = xs.nrows();
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let vs = field.eval_batch(&xs, &vec![t; n])?;
        if vs.dim() != xs.dim() {
            return Err(SamplerError::DimensionMismatch(vs.ncols(), xs.ncols()));
        }
        spherical_step(&mut xs, &vs, h, r, scheme, k)?;
        check_finite(&xs, k)?;
    }
    Ok(xs
        .rows()
        .into_iter()
        .map(|row| SpherePoint::new_unchecked(row.to_vec(), r))
        .collect())
}

/// On-manifold integration with the default radial retraction.
pub fn integrate_spherical_batch<F: VelocityField>(
    field: &F,
    x0s: &[SpherePoint],
    steps: usize,
) -> Result<Vec<SpherePoint>, SamplerError> {
    integrate_spherical_batch_with(field, x0s, steps, RetractionScheme::RadialProjection)
}

/// Single-sample on-manifold integration.
pub fn integrate_spherical<F: VelocityField>(
    field: &F,
    x0: &SpherePoint,
    steps: usize,
) -> Result<SpherePoint, SamplerError> {
    Ok(
        integrate_spherical_batch(field, std::slice::from_ref(x0), steps)?
            .pop()
            .expect("batch of one"),
    )
}

/// Full iterate sequence (including the start) of a single on-manifold run;
/// used to audit trajectory invariants.
pub fn integrate_spherical_trajectory<F: VelocityField>(
    field: &F,
    x0: &SpherePoint,
    steps: usize,
) -> Result<Vec<SpherePoint>, SamplerError> {
    if steps == 0 {
        return Err(SamplerError::ZeroSteps);
    }
    let r = x0.radius();
    let mut xs = batch_to_array(std::slice::from_ref(&x0.vector().to_vec()))?;
    let h = 1.0 / steps as f64;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x0.clone());
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let vs = field.eval_batch(&xs, &[t])?;
        spherical_step(&mut xs, &vs, h, r, RetractionScheme::RadialProjection, k)?;
        check_finite(&xs, k)?;
        path.push(SpherePoint::new_unchecked(xs.row(0).to_vec(), r));
    }
    Ok(path)
}

/// Rescales every sample to the dataset's mean norm, leaving directions
/// untouched.
pub fn finalize_samples(
    samples: &[Vec<f64>],
    final_norm: f64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    if !(final_norm.is_finite() && final_norm > 0.0) {
        return Err(SamplerError::BadFinalNorm);
    }
    samples
        .iter()
        .map(|v| Ok(rescale_to_norm(v, final_norm)?))
        .collect()
}
