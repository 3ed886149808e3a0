//! Primitives for the radius-`r` hypersphere embedded in `R^d`.
//!
//! Points live on the sphere `{ v : ‖v‖ = r }` and velocities in its tangent
//! spaces. Geodesics are great-circle arcs; interpolation along them is the
//! spherical linear interpolation
//!
//! ```text
//! gamma(t) = [ sin((1-t) theta) x0 + sin(t theta) x1 ] / sin(theta)
//! ```
//!
//! with `theta` the angle subtended by the endpoints, and the corresponding
//! velocity has constant speed `r * theta`. Near `theta = 0` the sin-ratio
//! form divides by a vanishing quantity, so both operations switch to their
//! first-order limits (renormalized chord, chord direction). Antipodal pairs
//! have no unique geodesic and are rejected.
//!
//! Everything here is pure and allocation counts are proportional to the
//! output size; all functions accept arbitrary dimension `d >= 1`.

use thiserror::Error;

/// Below this angle (radians) geodesic operations use first-order limits
/// instead of the sin-ratio form. The switch keeps relative error near
/// `theta^2 / 6`, i.e. under 1e-8 at the threshold.
pub const SMALL_ANGLE_THRESHOLD: f64 = 1e-4;

/// Pairs subtending at least `pi` minus this (radians) count as antipodal.
pub const ANTIPODAL_THRESHOLD: f64 = 1e-6;

/// Largest tolerated relative radial residual `| ‖v‖ - r | / r` for a vector
/// claimed to lie on the sphere.
pub const ON_SPHERE_TOLERANCE: f64 = 1e-9;

/// Largest tolerated `|<dir, base>| / (‖dir‖ r)` for a vector claimed to be
/// tangent at `base`. Looser than [`ON_SPHERE_TOLERANCE`] because tangency
/// degrades under accumulated arithmetic faster than the radius does.
pub const TANGENCY_TOLERANCE: f64 = 1e-6;

/// Norms below this are treated as zero: the direction of such a vector is
/// numerically meaningless.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("cannot normalize a vector with norm below {ZERO_NORM_THRESHOLD:e}")]
    ZeroVector,
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("operands lie on spheres of different radii ({0} vs {1})")]
    RadiusMismatch(f64, f64),
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("endpoints are antipodal within {ANTIPODAL_THRESHOLD:e} rad: geodesic is not unique")]
    AntipodalPoints,
    #[error("vector is off the radius-{radius} sphere (relative residual {residual:.3e})")]
    OffSphere { radius: f64, residual: f64 },
    #[error("vector is not tangent at its base point (relative residual {residual:.3e})")]
    NotTangent { residual: f64 },
    #[error("input contains a non-finite component")]
    NonFinite,
    #[error("angle must lie in [0, pi], got {0}")]
    BadAngle(f64),
}

/// Inner product. Callers guarantee equal lengths.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_radius(radius: f64) -> Result<(), GeometryError> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::BadRadius(radius))
    }
}

/// An angle in `[0, pi]`, as returned by [`angle_between`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn from_radians(radians: f64) -> Result<Self, GeometryError> {
        if radians.is_finite() && (0.0..=std::f64::consts::PI).contains(&radians) {
            Ok(Angle(radians))
        } else {
            Err(GeometryError::BadAngle(radians))
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// A point on the radius-`r` sphere. The radial residual is at most
/// [`ON_SPHERE_TOLERANCE`] relative to `r`; constructors enforce this, so a
/// held value is always usable as a geodesic endpoint or tangent base.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    vector: Vec<f64>,
    radius: f64,
}

impl SpherePoint {
    /// Wraps a vector already known to lie on the sphere, in the sense of the
    /// residual bound above. Use [`project_to_sphere`] for arbitrary vectors.
    pub fn new(vector: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        check_radius(radius)?;
        let n = norm(&vector);
        if !n.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let residual = (n - radius).abs() / radius;
        if residual > ON_SPHERE_TOLERANCE {
            return Err(GeometryError::OffSphere { radius, residual });
        }
        Ok(SpherePoint { vector, radius })
    }

    /// Internal constructor for outputs that are on-sphere by construction.
    pub(crate) fn new_unchecked(vector: Vec<f64>, radius: f64) -> Self {
        debug_assert!(
            (norm(&vector) - radius).abs() <= ON_SPHERE_TOLERANCE * radius,
            "constructed point is off-sphere"
        );
        SpherePoint { vector, radius }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.vector
    }
}

/// A velocity attached to a base point, orthogonal to the radial direction
/// within [`TANGENCY_TOLERANCE`]. The zero vector is tangent everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: SpherePoint,
    direction: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: SpherePoint, direction: Vec<f64>) -> Result<Self, GeometryError> {
        if direction.len() != base.dim() {
            return Err(GeometryError::DimensionMismatch(direction.len(), base.dim()));
        }
        let d_norm = norm(&direction);
        if !d_norm.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if d_norm > ZERO_NORM_THRESHOLD {
            let residual = dot(&direction, base.vector()).abs() / (d_norm * base.radius());
            if residual > TANGENCY_TOLERANCE {
                return Err(GeometryError::NotTangent { residual });
            }
        }
        Ok(TangentVector { base, direction })
    }

    pub(crate) fn new_unchecked(base: SpherePoint, direction: Vec<f64>) -> Self {
        debug_assert_eq!(direction.len(), base.dim());
        TangentVector { base, direction }
    }

    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn into_direction(self) -> Vec<f64> {
        self.direction
    }
}

/// Radially projects `v` onto the radius-`radius` sphere: `v * radius / ‖v‖`.
///
/// This is the closest point of the sphere to `v`, and the retraction used by
/// the on-manifold integrators. Fails on (near-)zero and non-finite input.
pub fn project_to_sphere(v: &[f64], radius: f64) -> Result<SpherePoint, GeometryError> {
    check_radius(radius)?;
    let n = norm(v);
    if !n.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if n <= ZERO_NORM_THRESHOLD {
        return Err(GeometryError::ZeroVector);
    }
    let scale = radius / n;
    Ok(SpherePoint::new_unchecked(
        v.iter().map(|x| x * scale).collect(),
        radius,
    ))
}

/// Rescales `v` to Euclidean norm `s` without changing its direction.
///
/// Unlike [`project_to_sphere`] this returns a bare vector: the target norm
/// is a statistic (for example a mean sample norm), not a manifold radius.
pub fn rescale_to_norm(v: &[f64], s: f64) -> Result<Vec<f64>, GeometryError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(GeometryError::BadRadius(s));
    }
    let n = norm(v);
    if !n.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if n <= ZERO_NORM_THRESHOLD {
        return Err(GeometryError::ZeroVector);
    }
    let scale = s / n;
    Ok(v.iter().map(|x| x * scale).collect())
}

fn check_compatible(a: &SpherePoint, b: &SpherePoint) -> Result<(), GeometryError> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.radius() != b.radius() {
        return Err(GeometryError::RadiusMismatch(a.radius(), b.radius()));
    }
    Ok(())
}

/// Angle subtended at the origin by two points of the same sphere:
/// `arccos(<a, b> / r^2)`, with the cosine clamped to `[-1, 1]` so that
/// rounding in the inner product can never produce a NaN.
pub fn angle_between(a: &SpherePoint, b: &SpherePoint) -> Result<Angle, GeometryError> {
    check_compatible(a, b)?;
    let r = a.radius();
    let cos = (dot(a.vector(), b.vector()) / (r * r)).clamp(-1.0, 1.0);
    Ok(Angle(cos.acos()))
}

/// Spherical linear interpolation from `x0` (at `t = 0`) to `x1` (at `t = 1`)
/// along the unique minimizing geodesic.
///
/// The endpoints are returned verbatim at `t = 0` and `t = 1`, so no rounding
/// is introduced there. For angles below [`SMALL_ANGLE_THRESHOLD`] the chord
/// interpolation `(1-t) x0 + t x1`, renormalized to radius `r`, is used in
/// place of the sin-ratio form. Antipodal endpoints are an error.
pub fn slerp(x0: &SpherePoint, x1: &SpherePoint, t: f64) -> Result<SpherePoint, GeometryError> {
    let theta = angle_between(x0, x1)?.radians();
    if theta >= std::f64::consts::PI - ANTIPODAL_THRESHOLD {
        return Err(GeometryError::AntipodalPoints);
    }
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t == 1.0 {
        return Ok(x1.clone());
    }
    let (c0, c1) = if theta < SMALL_ANGLE_THRESHOLD {
        (1.0 - t, t)
    } else {
        let sin_theta = theta.sin();
        (
            ((1.0 - t) * theta).sin() / sin_theta,
            (t * theta).sin() / sin_theta,
        )
    };
    let v: Vec<f64> = x0
        .vector()
        .iter()
        .zip(x1.vector())
        .map(|(a, b)| c0 * a + c1 * b)
        .collect();
    // Both the chord and the sin-ratio combination land within a few ulps of
    // the sphere (exactly on it, in the chord's case, only to first order);
    // renormalizing makes the on-sphere invariant hold to full precision.
    project_to_sphere(&v, x0.radius())
}

/// Time derivative of [`slerp`] at parameter `t`, attached to the path point.
///
/// In the sin-ratio regime the direction is
/// `(theta / sin(theta)) * (-cos((1-t) theta) x0 + cos(t theta) x1)`, which
/// has constant norm `r * theta` and is orthogonal to the path point. Below
/// [`SMALL_ANGLE_THRESHOLD`] the chord `x1 - x0` is used instead; its norm
/// already equals `r * theta` to first order.
pub fn geodesic_velocity(
    x0: &SpherePoint,
    x1: &SpherePoint,
    t: f64,
) -> Result<TangentVector, GeometryError> {
    let theta = angle_between(x0, x1)?.radians();
    if theta >= std::f64::consts::PI - ANTIPODAL_THRESHOLD {
        return Err(GeometryError::AntipodalPoints);
    }
    let base = slerp(x0, x1, t)?;
    let direction: Vec<f64> = if theta < SMALL_ANGLE_THRESHOLD {
        x0.vector()
            .iter()
            .zip(x1.vector())
            .map(|(a, b)| b - a)
            .collect()
    } else {
        let scale = theta / theta.sin();
        let c0 = -((1.0 - t) * theta).cos() * scale;
        let c1 = (t * theta).cos() * scale;
        x0.vector()
            .iter()
            .zip(x1.vector())
            .map(|(a, b)| c0 * a + c1 * b)
            .collect()
    };
    Ok(TangentVector::new_unchecked(base, direction))
}

/// Orthogonal projection of an ambient vector onto the tangent space at
/// `base`: `v - (<v, base> / r^2) base`. Idempotent up to rounding and the
/// identity on vectors that are already tangent.
pub fn tangent_project(base: &SpherePoint, v: &[f64]) -> Result<TangentVector, GeometryError> {
    if v.len() != base.dim() {
        return Err(GeometryError::DimensionMismatch(v.len(), base.dim()));
    }
    let radial = dot(v, base.vector());
    if !radial.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let coeff = radial / (base.radius() * base.radius());
    let direction: Vec<f64> = v
        .iter()
        .zip(base.vector())
        .map(|(vi, bi)| vi - coeff * bi)
        .collect();
    Ok(TangentVector::new_unchecked(base.clone(), direction))
}
