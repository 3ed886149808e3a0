//! Synthetic data at desk scale, plus the flat vector-file format.
//!
//! Sources are standard Gaussians, optionally projected onto a sphere.
//! Targets are von Mises-Fisher mixtures on the radius-`r` sphere, the
//! stand-in here for projected image datasets. Every sampler takes an
//! explicit generator; parallel generation should derive per-thread
//! generators by seed splitting (same seed, distinct stream index), never by
//! sharing one.
//!
//! Vectors travel on disk as "SFV1" files: the 4-byte magic, a `u32` count,
//! a `u32` dimension, then `count * dim` little-endian `f32` values in row
//! order. Training keeps `f64` in memory; the narrowing happens only at the
//! file boundary.

use crate::geometry::{dot, norm, project_to_sphere, SpherePoint, ON_SPHERE_TOLERANCE};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::{Beta, StandardNormal, Uniform};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const VECTOR_FILE_MAGIC: [u8; 4] = *b"SFV1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dimension must be at least {min}, got {got}")]
    BadDimension { got: usize, min: usize },
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("mixture must have at least one component")]
    NoComponents,
    #[error("mixture weights must be positive and finite")]
    BadWeight,
    #[error("concentration must be nonnegative and finite, got {0}")]
    BadConcentration(f64),
    #[error("mean direction must be unit-norm within {ON_SPHERE_TOLERANCE:e} (residual {0:.3e})")]
    MeanNotUnit(f64),
    #[error("dimension mismatch in batch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("batch contains a non-finite component")]
    NonFinite,
    #[error("count or dimension does not fit the u32 file header")]
    TooLargeForFormat,
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a vector file (bad magic)")]
    BadMagic,
    #[error("file is shorter than its header declares")]
    TruncatedFile,
    #[error("rejection sampler failed to accept; parameters are degenerate")]
    SamplingStalled,
}

/// One von Mises-Fisher component: a unit mean direction, a concentration
/// (`0` is uniform on the sphere) and a positive mixture weight.
#[derive(Debug, Clone)]
pub struct VmfComponent {
    pub mean: Vec<f64>,
    pub kappa: f64,
    pub weight: f64,
}

/// A mixture of vMF components on the radius-`radius` sphere in `R^dim`.
/// Construction normalizes the weights to sum to one.
#[derive(Debug, Clone)]
pub struct VmfMixtureSpec {
    components: Vec<VmfComponent>,
    dim: usize,
    radius: f64,
}

impl VmfMixtureSpec {
    pub fn new(
        components: Vec<VmfComponent>,
        dim: usize,
        radius: f64,
    ) -> Result<Self, DatasetError> {
        if dim < 2 {
            return Err(DatasetError::BadDimension { got: dim, min: 2 });
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(DatasetError::BadRadius(radius));
        }
        if components.is_empty() {
            return Err(DatasetError::NoComponents);
        }
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dim {
                return Err(DatasetError::DimensionMismatch(c.mean.len(), dim));
            }
            let residual = (norm(&c.mean) - 1.0).abs();
            if !residual.is_finite() || residual > ON_SPHERE_TOLERANCE {
                return Err(DatasetError::MeanNotUnit(residual));
            }
            if !(c.kappa.is_finite() && c.kappa >= 0.0) {
                return Err(DatasetError::BadConcentration(c.kappa));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(DatasetError::BadWeight);
            }
            total += c.weight;
        }
        let components = components
            .into_iter()
            .map(|c| VmfComponent {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(VmfMixtureSpec {
            components,
            dim,
            radius,
        })
    }

    /// Evenly weighted components with a shared concentration, means chosen
    /// uniformly at random on the unit sphere. The toolkit's default target.
    pub fn random_means<R: Rng + ?Sized>(
        n_components: usize,
        kappa: f64,
        dim: usize,
        radius: f64,
        rng: &mut R,
    ) -> Result<Self, DatasetError> {
        if n_components == 0 {
            return Err(DatasetError::NoComponents);
        }
        let components = (0..n_components)
            .map(|_| VmfComponent {
                mean: random_unit_vector(dim, rng),
                kappa,
                weight: 1.0 / n_components as f64,
            })
            .collect();
        VmfMixtureSpec::new(components, dim, radius)
    }

    pub fn components(&self) -> &[VmfComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Summary of per-sample Euclidean norms. `std` is the population standard
/// deviation (divisor `n`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// `n` i.i.d. standard normal vectors in `R^d`.
pub fn sample_gaussian<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Gaussian samples radially projected onto the radius-`radius` sphere. The
/// directions are uniform on the sphere; only the magnitudes are discarded.
pub fn sample_projected_gaussian<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Vec<SpherePoint>, DatasetError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(DatasetError::BadRadius(radius));
    }
    if d == 0 {
        return Err(DatasetError::BadDimension { got: d, min: 1 });
    }
    Ok((0..n)
        .map(|_| {
            loop {
                // A numerically zero Gaussian draw has probability zero, but
                // the projection is only defined away from the origin.
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                if let Ok(p) = project_to_sphere(&v, radius) {
                    return p;
                }
            }
        })
        .collect())
}

/// Asymptotic mean norm `sqrt(d - 1/2)` of a standard Gaussian in `R^d` (the
/// chi-distribution mean to first order). This is the radius at which
/// Gaussian samples concentrate, and the default sphere radius.
pub fn expected_gaussian_norm(d: usize) -> f64 {
    (d as f64 - 0.5).sqrt()
}

fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(p) = project_to_sphere(&v, 1.0) {
            return p.into_vector();
        }
    }
}

/// Draws the cosine of the angle to the mean direction for vMF(kappa) on the
/// sphere in `R^d`, by Wood's rejection scheme: the envelope is a transformed
/// symmetric Beta, exact for every `d >= 2` and `kappa > 0`.
fn sample_vmf_cosine<R: Rng + ?Sized>(
    kappa: f64,
    d: usize,
    rng: &mut R,
) -> Result<f64, DatasetError> {
    let m = (d - 1) as f64;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt()) / m;
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).expect("valid Beta parameters for d >= 2");
    let unit = Uniform::new(0.0f64, 1.0).expect("valid uniform range");
    for _ in 0..1_000_000 {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = unit.sample(rng);
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return Ok(w.clamp(-1.0, 1.0));
        }
    }
    Err(DatasetError::SamplingStalled)
}

fn sample_vmf_direction<R: Rng + ?Sized>(
    mean: &[f64],
    kappa: f64,
    rng: &mut R,
) -> Result<Vec<f64>, DatasetError> {
    let d = mean.len();
    if kappa == 0.0 {
        return Ok(random_unit_vector(d, rng));
    }
    let w = sample_vmf_cosine(kappa, d, rng)?;
    // Uniform tangent direction at the mean: Gaussian with the radial
    // component removed, renormalized.
    let tangent = loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let radial = dot(&g, mean);
        let t: Vec<f64> = g.iter().zip(mean).map(|(gi, mi)| gi - radial * mi).collect();
        let t_norm = norm(&t);
        if t_norm > 1e-12 {
            break t.into_iter().map(|x| x / t_norm).collect::<Vec<f64>>();
        }
    };
    let sine = (1.0 - w * w).max(0.0).sqrt();
    Ok(mean
        .iter()
        .zip(&tangent)
        .map(|(mi, ti)| w * mi + sine * ti)
        .collect())
}

/// `n` samples from the mixture: a component drawn by weight, then a vMF
/// direction around its mean, scaled to the mixture radius. `kappa = 0`
/// components yield uniform directions.
pub fn sample_vmf_mixture<R: Rng + ?Sized>(
    spec: &VmfMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SpherePoint>, DatasetError> {
    let weights = WeightedIndex::new(spec.components.iter().map(|c| c.weight))
        .expect("spec weights validated positive");
    (0..n)
        .map(|_| {
            let component = &spec.components[weights.sample(rng)];
            let direction = sample_vmf_direction(&component.mean, component.kappa, rng)?;
            let scaled: Vec<f64> = direction.iter().map(|x| x * spec.radius).collect();
            project_to_sphere(&scaled, spec.radius).map_err(|_| DatasetError::SamplingStalled)
        })
        .collect()
}

/// Exact summary statistics of the per-vector norms of a batch.
pub fn norm_stats(batch: &[Vec<f64>]) -> Result<NormStats, DatasetError> {
    if batch.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let norms: Vec<f64> = batch.iter().map(|v| norm(v)).collect();
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(DatasetError::NonFinite);
    }
    let count = norms.len();
    let mean = norms.iter().sum::<f64>() / count as f64;
    let var = norms.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / count as f64;
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(NormStats {
        mean,
        std: var.sqrt(),
        min,
        max,
        count,
    })
}

fn check_uniform_batch(batch: &[Vec<f64>]) -> Result<usize, DatasetError> {
    if batch.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let d = batch[0].len();
    if d == 0 {
        return Err(DatasetError::BadDimension { got: 0, min: 1 });
    }
    for v in batch {
        if v.len() != d {
            return Err(DatasetError::DimensionMismatch(v.len(), d));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DatasetError::NonFinite);
        }
    }
    Ok(d)
}

/// Writes a batch in the "SFV1" format, narrowing each component to `f32`.
pub fn save_vectors<P: AsRef<Path>>(path: P, batch: &[Vec<f64>]) -> Result<(), DatasetError> {
    let d = check_uniform_batch(batch)?;
    let count = u32::try_from(batch.len()).map_err(|_| DatasetError::TooLargeForFormat)?;
    let dim = u32::try_from(d).map_err(|_| DatasetError::TooLargeForFormat)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&VECTOR_FILE_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for v in batch {
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an "SFV1" file back as `f64` vectors (the `f32 -> f64` widening is
/// exact). Reads exactly the declared payload; trailing bytes are ignored.
pub fn load_vectors<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<f64>>, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != VECTOR_FILE_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    read_exact_or_truncated(&mut r, &mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    let mut batch = Vec::with_capacity(count);
    let mut row = vec![0u8; dim.checked_mul(4).ok_or(DatasetError::TooLargeForFormat)?];
    for _ in 0..count {
        read_exact_or_truncated(&mut r, &mut row)?;
        batch.push(
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        );
    }
    Ok(batch)
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DatasetError::TruncatedFile
        } else {
            DatasetError::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Mean and population std of Gaussian norms, accumulated in chunks so
    /// large (n, d) sweeps stay within desk memory.
    fn gaussian_norm_moments(n: usize, d: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let chunk = 2000.min(n);
        let mut norms = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let take = chunk.min(left);
            for v in sample_gaussian(take, d, rng) {
                norms.push(norm(&v));
            }
            left -= take;
        }
        let mean = norms.iter().sum::<f64>() / n as f64;
        let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn gaussian_norms_concentrate_at_the_chi_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mean, std) = gaussian_norm_moments(50_000, 2048, &mut rng);
        assert!((mean - 45.25).abs() <= 0.05, "mean {mean}");
        assert!((std - 0.5f64.sqrt()).abs() <= 0.02, "std {std}");
    }

    #[test]
    fn concentration_sharpens_with_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut cvs = Vec::new();
        for d in [256usize, 1024, 2048] {
            let (mean, std) = gaussian_norm_moments(5000, d, &mut rng);
            assert!((mean - expected_gaussian_norm(d)).abs() <= 0.01 * mean);
            assert!((std - 0.5f64.sqrt()).abs() <= 0.05);
            cvs.push(std / mean);
        }
        assert!(cvs[0] > cvs[1] && cvs[1] > cvs[2]);
    }

    #[test]
    fn expected_norm_formula() {
        // sqrt(2047.5); rounds to the 45.25 default radius.
        assert!((expected_gaussian_norm(2048) - 45.249309).abs() < 1e-6);
        assert!((expected_gaussian_norm(2048) - 45.25).abs() < 0.005);
        assert!((expected_gaussian_norm(4) - 3.5f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (mc_mean, _) = gaussian_norm_moments(200_000, 64, &mut rng);
        assert!((mc_mean - expected_gaussian_norm(64)).abs() <= 0.003 * mc_mean);
    }

    #[test]
    fn gaussian_sampling_is_reproducible() {
        let a = sample_gaussian(5, 8, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_gaussian(5, 8, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn projected_gaussian_directions_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let n = 10_000;
        let r = 3.9370;
        let batch = sample_projected_gaussian(n, 16, r, &mut rng).unwrap();
        let mut mean_dir = vec![0.0; 16];
        for p in &batch {
            assert!((norm(p.vector()) - r).abs() <= 1e-9 * r);
            for (m, x) in mean_dir.iter_mut().zip(p.vector()) {
                *m += x / (r * n as f64);
            }
        }
        assert!(norm(&mean_dir) < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn vmf_kappa_zero_is_uniform() {
        let spec = VmfMixtureSpec::new(
            vec![VmfComponent {
                mean: vec![0.0, 0.0, 1.0],
                kappa: 0.0,
                weight: 1.0,
            }],
            3,
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch = sample_vmf_mixture(&spec, 100_000, &mut rng).unwrap();
        let mut mean_dir = [0.0; 3];
        for p in &batch {
            for (m, x) in mean_dir.iter_mut().zip(p.vector()) {
                *m += x / batch.len() as f64;
            }
        }
        assert!(norm(&mean_dir) < 0.01);
    }

    #[test]
    fn vmf_concentrates_around_its_mean() {
        let mu = vec![0.6, 0.0, 0.8];
        let spec = VmfMixtureSpec::new(
            vec![VmfComponent {
                mean: mu.clone(),
                kappa: 50.0,
                weight: 1.0,
            }],
            3,
            2.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let batch = sample_vmf_mixture(&spec, 20_000, &mut rng).unwrap();
        let mut mean_dir = [0.0; 3];
        for p in &batch {
            assert!((norm(p.vector()) - 2.0).abs() <= 2e-9);
            for (m, x) in mean_dir.iter_mut().zip(p.vector()) {
                *m += x / (2.0 * batch.len() as f64);
            }
        }
        let resultant = norm(&mean_dir);
        let cos_to_mu = dot(&mean_dir, &mu) / resultant;
        assert!(cos_to_mu.acos().to_degrees() < 3.0);
        // kappa = 50 keeps samples tight: the resultant stays long.
        assert!(resultant > 0.9);
    }

    #[test]
    fn antipodal_mixture_is_balanced() {
        let spec = VmfMixtureSpec::new(
            vec![
                VmfComponent {
                    mean: vec![1.0, 0.0, 0.0],
                    kappa: 30.0,
                    weight: 0.5,
                },
                VmfComponent {
                    mean: vec![-1.0, 0.0, 0.0],
                    kappa: 30.0,
                    weight: 0.5,
                },
            ],
            3,
            4.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let batch = sample_vmf_mixture(&spec, 40_000, &mut rng).unwrap();
        let mut mean_vec = [0.0; 3];
        for p in &batch {
            for (m, x) in mean_vec.iter_mut().zip(p.vector()) {
                *m += x / batch.len() as f64;
            }
        }
        assert!(norm(&mean_vec) < 0.02 * 4.0);
    }

    #[test]
    fn mixture_spec_validation() {
        let unit = vec![1.0, 0.0];
        assert!(matches!(
            VmfMixtureSpec::new(vec![], 2, 1.0),
            Err(DatasetError::NoComponents)
        ));
        assert!(matches!(
            VmfMixtureSpec::new(
                vec![VmfComponent { mean: vec![0.5, 0.0], kappa: 1.0, weight: 1.0 }],
                2,
                1.0
            ),
            Err(DatasetError::MeanNotUnit(_))
        ));
        assert!(matches!(
            VmfMixtureSpec::new(
                vec![VmfComponent { mean: unit.clone(), kappa: -1.0, weight: 1.0 }],
                2,
                1.0
            ),
            Err(DatasetError::BadConcentration(_))
        ));
        // Weights are normalized on construction.
        let spec = VmfMixtureSpec::new(
            vec![
                VmfComponent { mean: unit.clone(), kappa: 1.0, weight: 3.0 },
                VmfComponent { mean: vec![0.0, 1.0], kappa: 1.0, weight: 1.0 },
            ],
            2,
            1.0,
        )
        .unwrap();
        assert!((spec.components()[0].weight - 0.75).abs() < 1e-15);
    }

    #[test]
    fn norm_stats_hand_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let on_sphere: Vec<Vec<f64>> = sample_projected_gaussian(50, 8, 2.5, &mut rng)
            .unwrap()
            .into_iter()
            .map(|p| p.into_vector())
            .collect();
        let s = norm_stats(&on_sphere).unwrap();
        assert!((s.mean - 2.5).abs() <= 1e-9);
        assert!((s.min - 2.5).abs() <= 1e-9);
        assert!((s.max - 2.5).abs() <= 1e-9);
        assert!(s.std <= 1e-9);

        let s = norm_stats(&[vec![3.0, 0.0], vec![0.0, 4.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.min, 3.0);
        assert_eq!(s.max, 5.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.count, 3);

        assert!(matches!(norm_stats(&[]), Err(DatasetError::EmptyBatch)));
    }

    #[test]
    fn norm_stats_match_chi_mean_on_gaussian_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let batch = sample_gaussian(5000, 2048, &mut rng);
        let s = norm_stats(&batch).unwrap();
        assert!((s.mean - expected_gaussian_norm(2048)).abs() <= 0.005 * s.mean);
    }

    #[test]
    fn vector_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.sfv");
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let batch = sample_gaussian(17, 5, &mut rng);
        save_vectors(&path, &batch).unwrap();
        let loaded = load_vectors(&path).unwrap();
        assert_eq!(loaded.len(), 17);
        for (a, b) in batch.iter().zip(&loaded) {
            for (x, y) in a.iter().zip(b) {
                // The only loss is the one narrowing to f32 on the way out.
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        // A second trip through the format is bit-exact end to end.
        let path2 = dir.path().join("batch2.sfv");
        save_vectors(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn vector_file_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sfv");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_vectors(&path), Err(DatasetError::BadMagic)));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(&VECTOR_FILE_MAGIC);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]); // one row of the three declared
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_vectors(&path),
            Err(DatasetError::TruncatedFile)
        ));
    }

    #[test]
    fn vector_file_ignores_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trailing.sfv");
        let batch = vec![vec![1.5, -2.0], vec![0.25, 8.0]];
        save_vectors(&path, &batch).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"garbage after the declared payload");
        std::fs::write(&path, &bytes).unwrap();
        let loaded = load_vectors(&path).unwrap();
        assert_eq!(loaded, batch);
    }

    #[test]
    fn save_rejects_ragged_or_nonfinite_batches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sfv");
        assert!(matches!(
            save_vectors(&path, &[vec![1.0], vec![1.0, 2.0]]),
            Err(DatasetError::DimensionMismatch(2, 1))
        ));
        assert!(matches!(
            save_vectors(&path, &[vec![f64::NAN]]),
            Err(DatasetError::NonFinite)
        ));
        assert!(matches!(
            save_vectors::<&std::path::Path>(&path.as_path(), &[]),
            Err(DatasetError::EmptyBatch)
        ));
    }
}
