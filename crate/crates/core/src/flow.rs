//! Conditional paths, their target velocities, and the regression loss.
//!
//! Four training variants share one mold: pair up a source batch with a
//! target batch, pick a time `t` per pair, and regress a velocity field onto
//! the path derivative at `(x_t, t)`.
//!
//! * `ICfm`: independent pairing (a seeded shuffle), linear paths.
//! * `OtCfm`: squared-Euclidean optimal-transport pairing, linear paths.
//! * `SotCfm`: angular-cost pairing, linear paths.
//! * `Sfm`: both sides projected to the sphere, angular-cost pairing, and
//!   geodesic paths whose velocities live in the tangent space.
//!
//! Paths are deterministic (no diffusion term); the loss is the plain mean
//! squared error against the conditional velocity, which on the sphere
//! coincides with the Riemannian metric restricted to tangent vectors.

use crate::coupling::{
    cost_matrix, exact_assignment, sample_pairs, sinkhorn, CostMetric, CouplingError,
    DEFAULT_SINKHORN_EPSILON, DEFAULT_SINKHORN_MAX_ITER, DEFAULT_SINKHORN_TOL,
};
use crate::geometry::{geodesic_velocity, project_to_sphere, GeometryError, SpherePoint};
use rand::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("batch lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("spherical flow requires both source and target projection")]
    InvalidVariant,
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// A supervised point on a conditional path: position `x_t`, target velocity
/// `u_t`, and the time both were evaluated at. Spherical construction keeps
/// `x_t` on the sphere and `u_t` tangent to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x_t: Vec<f64>,
    pub u_t: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    ICfm,
    OtCfm,
    SotCfm,
    Sfm,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::ICfm => "i-cfm",
            VariantKind::OtCfm => "ot-cfm",
            VariantKind::SotCfm => "sot-cfm",
            VariantKind::Sfm => "sfm",
        }
    }
}

/// A training variant plus its data-space configuration: whether each side
/// is projected onto the sphere, and the sphere radius. Fully on-manifold
/// flow is only defined when both sides are projected; mixed configurations
/// are rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVariant {
    kind: VariantKind,
    source_projection: bool,
    target_projection: bool,
    radius: f64,
}

impl FlowVariant {
    pub fn new(
        kind: VariantKind,
        source_projection: bool,
        target_projection: bool,
        radius: f64,
    ) -> Result<Self, FlowError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(FlowError::BadRadius(radius));
        }
        if kind == VariantKind::Sfm && !(source_projection && target_projection) {
            return Err(FlowError::InvalidVariant);
        }
        Ok(FlowVariant {
            kind,
            source_projection,
            target_projection,
            radius,
        })
    }

    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn source_projection(&self) -> bool {
        self.source_projection
    }

    pub fn target_projection(&self) -> bool {
        self.target_projection
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Whether training paths are geodesics rather than straight lines.
    pub fn is_spherical(&self) -> bool {
        self.kind == VariantKind::Sfm
    }
}

/// How optimal-transport variants turn a cost matrix into index pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Draw pairs from the entropic plan (the default).
    PlanSampling,
    /// Hard pairing by exact minimum-cost assignment.
    ExactAssignment,
}

/// Entropic-coupling parameters used when pairing a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerConfig {
    pub mode: PairingMode,
    pub eps: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CouplerConfig {
    fn default() -> Self {
        CouplerConfig {
            mode: PairingMode::PlanSampling,
            eps: DEFAULT_SINKHORN_EPSILON,
            max_iter: DEFAULT_SINKHORN_MAX_ITER,
            tol: DEFAULT_SINKHORN_TOL,
        }
    }
}

/// Linear path `x_t = (1-t) x0 + t x1` with its constant velocity
/// `u_t = x1 - x0`.
pub fn sample_path_linear(x0: &[f64], x1: &[f64], t: f64) -> Result<PathSample, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::DimensionMismatch(x0.len(), x1.len()));
    }
    let x_t = x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    let u_t = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    Ok(PathSample { x_t, u_t, t })
}

/// Geodesic path point and velocity between two points of the same sphere.
pub fn sample_path_spherical(
    x0: &SpherePoint,
    x1: &SpherePoint,
    t: f64,
) -> Result<PathSample, FlowError> {
    let v = geodesic_velocity(x0, x1, t)?;
    Ok(PathSample {
        x_t: v.base().vector().to_vec(),
        u_t: v.direction().to_vec(),
        t,
    })
}

/// Index pairs `(source, target)` for one batch under the variant's pairing
/// rule. Independent pairing is a seeded shuffle of the target side; the
/// transport variants build the variant's cost matrix and either sample the
/// Sinkhorn plan or take the exact assignment.
pub fn pair_indices<R: Rng + ?Sized>(
    kind: VariantKind,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    coupler: &CouplerConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, FlowError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    if src.len() != tgt.len() {
        return Err(FlowError::LengthMismatch(src.len(), tgt.len()));
    }
    let n = src.len();
    let metric = match kind {
        VariantKind::ICfm => {
            let mut targets: Vec<usize> = (0..n).collect();
            targets.shuffle(rng);
            return Ok((0..n).zip(targets).collect());
        }
        VariantKind::OtCfm => CostMetric::EuclideanSq,
        VariantKind::SotCfm | VariantKind::Sfm => CostMetric::Angular,
    };
    let cost = cost_matrix(src, tgt, metric)?;
    match coupler.mode {
        PairingMode::PlanSampling => {
            let out = sinkhorn(&cost, coupler.eps, coupler.max_iter, coupler.tol)?;
            Ok(sample_pairs(&out.plan, n, rng)?)
        }
        PairingMode::ExactAssignment => {
            let assignment = exact_assignment(&cost)?;
            Ok(assignment
                .permutation()
                .iter()
                .enumerate()
                .map(|(i, &j)| (i, j))
                .collect())
        }
    }
}

/// Builds one supervised batch: pair indices under the variant's rule, one
/// uniform `t` per pair, then a linear or geodesic path sample per pair.
/// The spherical variant projects both sides onto the configured sphere
/// first (idempotent when the data already lives there).
pub fn make_training_batch<R: Rng + ?Sized>(
    cfg: &FlowVariant,
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    coupler: &CouplerConfig,
    rng: &mut R,
) -> Result<Vec<PathSample>, FlowError> {
    if cfg.is_spherical() {
        let r = cfg.radius();
        let src_proj: Vec<SpherePoint> = src
            .iter()
            .map(|v| project_to_sphere(v, r))
            .collect::<Result<_, _>>()?;
        let tgt_proj: Vec<SpherePoint> = tgt
            .iter()
            .map(|v| project_to_sphere(v, r))
            .collect::<Result<_, _>>()?;
        let src_vecs: Vec<Vec<f64>> = src_proj.iter().map(|p| p.vector().to_vec()).collect();
        let tgt_vecs: Vec<Vec<f64>> = tgt_proj.iter().map(|p| p.vector().to_vec()).collect();
        let pairs = pair_indices(cfg.kind(), &src_vecs, &tgt_vecs, coupler, rng)?;
        pairs
            .into_iter()
            .map(|(i, j)| {
                let t = rng.random::<f64>();
                sample_path_spherical(&src_proj[i], &tgt_proj[j], t)
            })
            .collect()
    } else {
        let pairs = pair_indices(cfg.kind(), src, tgt, coupler, rng)?;
        pairs
            .into_iter()
            .map(|(i, j)| {
                let t = rng.random::<f64>();
                sample_path_linear(&src[i], &tgt[j], t)
            })
            .collect()
    }
}

/// Mean over the batch of `‖prediction - u_t‖^2` (squared norms summed over
/// components, averaged over samples only). Identical for linear and
/// spherical batches.
pub fn regression_loss(
    batch: &[PathSample],
    predictions: &[Vec<f64>],
) -> Result<f64, FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    if batch.len() != predictions.len() {
        return Err(FlowError::LengthMismatch(batch.len(), predictions.len()));
    }
    let mut total = 0.0;
    for (sample, pred) in batch.iter().zip(predictions) {
        if sample.u_t.len() != pred.len() {
            return Err(FlowError::DimensionMismatch(sample.u_t.len(), pred.len()));
        }
        total += sample
            .u_t
            .iter()
            .zip(pred)
            .map(|(u, p)| (p - u) * (p - u))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_between, dot, norm};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};
    use std::f64::consts::FRAC_PI_2;

    fn gaussian_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn linear_path_hand_cases() {
        let s = sample_path_linear(&[0.0, 0.0], &[2.0, 2.0], 0.5).unwrap();
        assert_eq!(s.x_t, vec![1.0, 1.0]);
        assert_eq!(s.u_t, vec![2.0, 2.0]);

        let s = sample_path_linear(&[3.0, -1.0], &[5.0, 9.0], 0.0).unwrap();
        assert_eq!(s.x_t, vec![3.0, -1.0]);

        assert_eq!(
            sample_path_linear(&[1.0], &[1.0, 2.0], 0.5).unwrap_err(),
            FlowError::DimensionMismatch(1, 2)
        );
    }

    #[test]
    fn spherical_path_hand_case() {
        let x0 = SpherePoint::new(vec![1.0, 0.0], 1.0).unwrap();
        let x1 = SpherePoint::new(vec![0.0, 1.0], 1.0).unwrap();
        let s = sample_path_spherical(&x0, &x1, 0.0).unwrap();
        assert_eq!(s.x_t, vec![1.0, 0.0]);
        assert!((s.u_t[0] - 0.0).abs() < 1e-12);
        assert!((s.u_t[1] - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn spherical_speed_is_radius_times_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let r = 3.9370;
        for _ in 0..20 {
            let x0 = project_to_sphere(&gaussian_batch(&mut rng, 1, 16)[0], r).unwrap();
            let x1 = project_to_sphere(&gaussian_batch(&mut rng, 1, 16)[0], r).unwrap();
            let theta = angle_between(&x0, &x1).unwrap().radians();
            let t: f64 = rng.random();
            let s = sample_path_spherical(&x0, &x1, t).unwrap();
            assert!((norm(&s.u_t) - r * theta).abs() <= 1e-8);
        }
    }

    #[test]
    fn spherical_small_angle_velocity_matches_chord() {
        let theta: f64 = 1e-6;
        let r = 45.25;
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        a[0] = r;
        b[0] = r * theta.cos();
        b[1] = r * theta.sin();
        let x0 = SpherePoint::new(a.clone(), r).unwrap();
        let x1 = SpherePoint::new(b.clone(), r).unwrap();
        let s = sample_path_spherical(&x0, &x1, 0.37).unwrap();
        for i in 0..16 {
            assert!((s.u_t[i] - (b[i] - a[i])).abs() <= 1e-8);
        }
    }

    #[test]
    fn independent_pairing_is_a_seeded_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let src = gaussian_batch(&mut rng, 8, 4);
        let tgt = gaussian_batch(&mut rng, 8, 4);
        let coupler = CouplerConfig::default();
        let a = pair_indices(
            VariantKind::ICfm,
            &src,
            &tgt,
            &coupler,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let b = pair_indices(
            VariantKind::ICfm,
            &src,
            &tgt,
            &coupler,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(a, b);
        // Bijection on both sides.
        let mut seen = vec![false; 8];
        for (i, (s, t)) in a.iter().enumerate() {
            assert_eq!(*s, i);
            assert!(!seen[*t]);
            seen[*t] = true;
        }
    }

    #[test]
    fn angular_pairing_ignores_per_point_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let src = gaussian_batch(&mut rng, 8, 16);
        let tgt = gaussian_batch(&mut rng, 8, 16);
        let positive = Uniform::new(0.2, 5.0).unwrap();
        let src_scaled: Vec<Vec<f64>> = src
            .iter()
            .map(|v| {
                let s = positive.sample(&mut rng);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let coupler = CouplerConfig {
            mode: PairingMode::ExactAssignment,
            ..CouplerConfig::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let plain = pair_indices(VariantKind::SotCfm, &src, &tgt, &coupler, &mut r1).unwrap();
        let scaled =
            pair_indices(VariantKind::SotCfm, &src_scaled, &tgt, &coupler, &mut r2).unwrap();
        assert_eq!(plain, scaled);
    }

    #[test]
    fn spherical_batches_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let r = 3.9370;
        let cfg = FlowVariant::new(VariantKind::Sfm, true, true, r).unwrap();
        let src = gaussian_batch(&mut rng, 16, 16);
        let tgt = gaussian_batch(&mut rng, 16, 16);
        let batch =
            make_training_batch(&cfg, &src, &tgt, &CouplerConfig::default(), &mut rng).unwrap();
        assert_eq!(batch.len(), 16);
        for s in &batch {
            assert!((norm(&s.x_t) - r).abs() <= 1e-9 * r);
            let speed = norm(&s.u_t);
            if speed > 1e-12 {
                assert!(dot(&s.u_t, &s.x_t).abs() / (speed * r) <= 1e-6);
            }
            assert!((0.0..1.0).contains(&s.t));
        }
    }

    #[test]
    fn training_batches_are_reproducible() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(35);
        let src = gaussian_batch(&mut data_rng, 8, 8);
        let tgt = gaussian_batch(&mut data_rng, 8, 8);
        for kind in [
            VariantKind::ICfm,
            VariantKind::OtCfm,
            VariantKind::SotCfm,
            VariantKind::Sfm,
        ] {
            let cfg = FlowVariant::new(kind, true, true, 2.7386).unwrap();
            let a = make_training_batch(
                &cfg,
                &src,
                &tgt,
                &CouplerConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            let b = make_training_batch(
                &cfg,
                &src,
                &tgt,
                &CouplerConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn velocity_magnitude_scales_with_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let dir0 = gaussian_batch(&mut rng, 1, 8)[0].clone();
        let dir1 = gaussian_batch(&mut rng, 1, 8)[0].clone();
        let speed_at = |r: f64| {
            let x0 = project_to_sphere(&dir0, r).unwrap();
            let x1 = project_to_sphere(&dir1, r).unwrap();
            norm(&sample_path_spherical(&x0, &x1, 0.4).unwrap().u_t)
        };
        let s1 = speed_at(1.0);
        let s45 = speed_at(45.25);
        assert!((s45 - 45.25 * s1).abs() <= 1e-9 * s45);
    }

    #[test]
    fn sfm_requires_projection() {
        assert_eq!(
            FlowVariant::new(VariantKind::Sfm, true, false, 1.0).unwrap_err(),
            FlowError::InvalidVariant
        );
        assert_eq!(
            FlowVariant::new(VariantKind::Sfm, false, true, 1.0).unwrap_err(),
            FlowError::InvalidVariant
        );
        assert!(FlowVariant::new(VariantKind::Sfm, true, true, 1.0).is_ok());
        // Euclidean variants may mix projection flags freely.
        assert!(FlowVariant::new(VariantKind::SotCfm, false, true, 1.0).is_ok());
    }

    #[test]
    fn loss_hand_cases_and_oracle() {
        let batch = vec![PathSample {
            x_t: vec![0.0, 0.0],
            u_t: vec![1.0, 2.0],
            t: 0.5,
        }];
        assert_eq!(
            regression_loss(&batch, &[vec![1.0, 2.0]]).unwrap(),
            0.0
        );
        assert_eq!(
            regression_loss(&batch, &[vec![2.0, 2.0]]).unwrap(),
            1.0
        );

        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let targets = gaussian_batch(&mut rng, 12, 6);
        let preds = gaussian_batch(&mut rng, 12, 6);
        let batch: Vec<PathSample> = targets
            .iter()
            .map(|u| PathSample {
                x_t: vec![0.0; 6],
                u_t: u.clone(),
                t: 0.1,
            })
            .collect();
        let loss = regression_loss(&batch, &preds).unwrap();
        let oracle: f64 = targets
            .iter()
            .zip(&preds)
            .map(|(u, p)| u.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / 12.0;
        assert!((loss - oracle).abs() <= 1e-12 * oracle.max(1.0));

        assert_eq!(
            regression_loss(&batch, &preds[..3]).unwrap_err(),
            FlowError::LengthMismatch(12, 3)
        );
        assert_eq!(
            regression_loss(&[], &[]).unwrap_err(),
            FlowError::EmptyBatch
        );
    }

    proptest! {
        #[test]
        fn linear_path_telescopes_to_the_target(seed in 0u64..300, t in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = gaussian_batch(&mut rng, 1, 8)[0].clone();
            let x1 = gaussian_batch(&mut rng, 1, 8)[0].clone();
            let s = sample_path_linear(&x0, &x1, t).unwrap();
            for i in 0..8 {
                let reached = s.x_t[i] + (1.0 - t) * s.u_t[i];
                prop_assert!((reached - x1[i]).abs() <= 1e-12);
            }
        }
    }
}
