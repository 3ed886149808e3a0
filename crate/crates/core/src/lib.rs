//! Flow matching on hyperspheres.
//!
//! This crate trains continuous normalizing flows between a Gaussian source
//! and synthetic target distributions, either in flat Euclidean space or
//! intrinsically on a radius-`r` hypersphere. The spherical variants exploit
//! the fact that high-dimensional Gaussian samples concentrate on a thin
//! shell, so projecting them onto the sphere of matching radius discards
//! almost no information while making geodesic structure available.
//!
//! The pieces compose bottom-up:
//!
//! * [`geometry`]: sphere projection, angles, geodesics and tangent spaces.
//! * [`coupling`]: minibatch pairings of source and target samples, from
//!   independent sampling to entropic and exact optimal transport under
//!   squared-Euclidean or angular cost.
//! * [`flow`]: interpolation paths and their target velocities, linear or
//!   geodesic, plus the regression objective matched against them.
//! * [`model`]: a small MLP velocity field with sinusoidal time embedding,
//!   trained by Adam with an EMA of the weights.
//! * [`sampler`]: fixed-step ODE integration of a learned field, with
//!   on-manifold variants that project velocities to the tangent space and
//!   retract each step back to the sphere.
//! * [`datasets`]: seeded synthetic distributions (Gaussian and von
//!   Mises-Fisher mixtures) and a flat binary sample format.
//! * [`eval`]: energy distance, norm statistics, on-sphere residuals and
//!   the projection distortion sweep.
//! * [`pipeline`]: end-to-end training and generation built from the above.

pub mod coupling;
pub mod datasets;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod sampler;
