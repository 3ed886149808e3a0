//! End-to-end orchestration: synthetic data, coupling, path supervision,
//! the optimizer loop, checkpointing, and batch generation.
//!
//! Every run is a pure function of its config. The single seed fans out
//! into fixed ChaCha streams (weight init, mixture means, source draws,
//! target draws, pairing, held-out data, sampling, reference batch), so
//! adding draws to one stage never perturbs the others and held-out data
//! never overlaps training data.
//!
//! Checkpoints are a small versioned binary format: the magic `SFCK`, a
//! format version, an echo of the experiment shape, then the raw and EMA
//! weights as little-endian f64 in layer order (each layer's weight matrix
//! row-major, then its bias). The byte-level layout is documented in the
//! repository README.

use crate::datasets::{
    norm_stats, sample_gaussian, sample_projected_gaussian, sample_vmf_mixture, DatasetError,
    VmfMixtureSpec,
};
use crate::flow::{
    make_training_batch, CouplerConfig, FlowError, FlowVariant, PairingMode, VariantKind,
};
use crate::geometry::{project_to_sphere, GeometryError};
use crate::model::{
    adam_step, ema_update, loss_and_grad, AdamConfig, LayerParams, MlpParams, ModelError, OptState,
};
use crate::sampler::{
    finalize_samples, integrate_euclidean_batch, integrate_spherical_batch, SampleRunConfig,
    SamplerError,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Stream indices for seed fan-out; see [`stream_rng`].
pub const STREAM_WEIGHT_INIT: u64 = 0;
pub const STREAM_MIXTURE: u64 = 1;
pub const STREAM_SOURCE: u64 = 2;
pub const STREAM_TARGET: u64 = 3;
pub const STREAM_PAIRING: u64 = 4;
pub const STREAM_HELDOUT: u64 = 5;
pub const STREAM_SAMPLING: u64 = 6;
pub const STREAM_REFERENCE: u64 = 7;

/// Size of the target draw used to measure the dataset mean norm.
const REFERENCE_BATCH: usize = 512;

/// Smoothing factor for the logged loss curve.
const LOSS_SMOOTHING: f64 = 0.9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The dedicated generator for one pipeline stage: the seed selects the key,
/// the stage selects the ChaCha stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sphere radius: fixed, or matched to where Gaussian norms concentrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusSpec {
    Auto,
    Fixed(f64),
}

impl RadiusSpec {
    pub fn resolve(self, d: usize) -> f64 {
        match self {
            RadiusSpec::Auto => crate::datasets::expected_gaussian_norm(d),
            RadiusSpec::Fixed(r) => r,
        }
    }
}

/// Everything one training run depends on. Two identical configs produce
/// bit-identical models and logs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub source_projection: bool,
    pub target_projection: bool,
    pub d: usize,
    pub radius: RadiusSpec,
    pub n_components: usize,
    pub kappa: f64,
    pub batch_size: usize,
    pub ot_batch_size: usize,
    pub pairing: PairingMode,
    pub sinkhorn_eps: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub train_iters: usize,
    pub log_every: usize,
    pub nfe: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: a 16-dimensional 4-mode target and a network
    /// small enough that a full run takes a couple of minutes on one core.
    fn default() -> Self {
        TrainConfig {
            variant: VariantKind::Sfm,
            source_projection: true,
            target_projection: true,
            d: 16,
            radius: RadiusSpec::Auto,
            n_components: 4,
            kappa: 30.0,
            batch_size: 256,
            ot_batch_size: 64,
            pairing: PairingMode::PlanSampling,
            sinkhorn_eps: 0.1,
            sinkhorn_max_iter: 1000,
            sinkhorn_tol: 1e-6,
            hidden: vec![128, 128, 128],
            time_embed_dim: 32,
            learning_rate: 2e-4,
            weight_decay: 0.0,
            // The reference decay 0.9999 averages over ~10^4 steps and
            // would still be dominated by the zero-init weights after a
            // 2000-iteration desk run; 0.995 gives a ~200-step horizon.
            ema_decay: 0.995,
            train_iters: 2000,
            log_every: 10,
            nfe: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the projection flags a variant usually runs with:
    /// the fully on-manifold variant projects both sides, the others none.
    pub fn for_variant(variant: VariantKind) -> Self {
        let spherical = variant == VariantKind::Sfm;
        TrainConfig {
            variant,
            source_projection: spherical,
            target_projection: spherical,
            ..TrainConfig::default()
        }
    }

    pub fn resolved_radius(&self) -> f64 {
        self.radius.resolve(self.d)
    }

    /// Field-level validation; the returned message names the bad field.
    pub fn validate(&self) -> Result<FlowVariant, PipelineError> {
        let bad = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if self.d < 2 {
            return bad("d: must be at least 2");
        }
        let r = self.resolved_radius();
        if !(r.is_finite() && r > 0.0) {
            return bad("radius: must be positive and finite");
        }
        if self.n_components == 0 {
            return bad("n_components: must be at least 1");
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa: must be nonnegative and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be at least 1");
        }
        if self.ot_batch_size == 0 {
            return bad("ot_batch_size: must be at least 1");
        }
        if !(self.sinkhorn_eps.is_finite() && self.sinkhorn_eps > 0.0) {
            return bad("sinkhorn_eps: must be positive");
        }
        if self.sinkhorn_max_iter == 0 {
            return bad("sinkhorn_max_iter: must be at least 1");
        }
        if !(self.sinkhorn_tol.is_finite() && self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol: must be positive");
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden: widths must be a nonempty list of positive integers");
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad("time_embed_dim: must be even and at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate: must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay: must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay: must lie in [0, 1]");
        }
        if self.train_iters == 0 {
            return bad("train_iters: must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every: must be at least 1");
        }
        if self.nfe == 0 {
            return bad("nfe: must be at least 1");
        }
        FlowVariant::new(
            self.variant,
            self.source_projection,
            self.target_projection,
            r,
        )
        .map_err(|_| {
            PipelineError::Config(format!(
                "variant: {} requires source_projection = true and target_projection = true",
                self.variant.name()
            ))
        })
    }

    fn coupler(&self) -> CouplerConfig {
        CouplerConfig {
            mode: self.pairing,
            eps: self.sinkhorn_eps,
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
        }
    }
}

/// The target mixture a config describes; means are drawn from the seed's
/// mixture stream, so the same config always yields the same modes.
pub fn target_mixture(cfg: &TrainConfig) -> Result<VmfMixtureSpec, PipelineError> {
    let mut rng = stream_rng(cfg.seed, STREAM_MIXTURE);
    Ok(VmfMixtureSpec::random_means(
        cfg.n_components,
        cfg.kappa,
        cfg.d,
        cfg.resolved_radius(),
        &mut rng,
    )?)
}

/// Target draws from a stream never touched by training; safe to evaluate
/// against.
pub fn heldout_targets(cfg: &TrainConfig, n: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
    let mixture = target_mixture(cfg)?;
    let mut rng = stream_rng(cfg.seed, STREAM_HELDOUT);
    let points = sample_vmf_mixture(&mixture, n, &mut rng)?;
    Ok(points.into_iter().map(|p| p.into_vector()).collect())
}

fn source_draw<R: Rng + ?Sized>(
    variant: &FlowVariant,
    n: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    if variant.source_projection() {
        let points = sample_projected_gaussian(n, d, variant.radius(), rng)?;
        Ok(points.into_iter().map(|p| p.into_vector()).collect())
    } else {
        Ok(sample_gaussian(n, d, rng))
    }
}

fn target_draw<R: Rng + ?Sized>(
    variant: &FlowVariant,
    mixture: &VmfMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let points = sample_vmf_mixture(mixture, n, rng)?;
    if variant.target_projection() && mixture.radius() != variant.radius() {
        points
            .iter()
            .map(|p| {
                Ok(project_to_sphere(p.vector(), variant.radius())?.into_vector())
            })
            .collect()
    } else {
        Ok(points.into_iter().map(|p| p.into_vector()).collect())
    }
}

/// One row of the training log: the raw batch loss and its running
/// exponential smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: f64,
    pub smoothed: f64,
}

/// Renders the log as CSV; stable across runs with equal configs.
pub fn loss_log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("iter,loss,loss_smoothed\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.iter, r.loss, r.smoothed));
    }
    out
}

/// A trained velocity field with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub variant: FlowVariant,
    pub params: MlpParams,
    pub ema: MlpParams,
    /// Mean norm of the reference target batch; generated samples are
    /// rescaled to this magnitude unless rescaling is disabled.
    pub final_norm: f64,
    pub nfe: usize,
    pub seed: u64,
}

pub struct TrainOutput {
    pub model: TrainedModel,
    pub log: Vec<LogRow>,
}

/// Runs the full loop: draw source and target batches, pair them in
/// transport sub-batches, regress the network onto the path velocities, and
/// keep an EMA shadow of the weights.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutput, PipelineError> {
    let variant = cfg.validate()?;
    let mixture = target_mixture(cfg)?;
    let coupler = cfg.coupler();

    let mut rng_init = stream_rng(cfg.seed, STREAM_WEIGHT_INIT);
    let mut rng_source = stream_rng(cfg.seed, STREAM_SOURCE);
    let mut rng_target = stream_rng(cfg.seed, STREAM_TARGET);
    let mut rng_pairing = stream_rng(cfg.seed, STREAM_PAIRING);
    let mut rng_reference = stream_rng(cfg.seed, STREAM_REFERENCE);

    let reference = target_draw(&variant, &mixture, REFERENCE_BATCH, &mut rng_reference)?;
    let final_norm = norm_stats(&reference)?.mean;

    let mut params = MlpParams::init(cfg.d, &cfg.hidden, cfg.time_embed_dim, &mut rng_init)?;
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt = OptState::new(&params, adam, cfg.ema_decay)?;

    let mut log = Vec::new();
    let mut smoothed = f64::NAN;
    for iter in 1..=cfg.train_iters {
        let src = source_draw(&variant, cfg.batch_size, cfg.d, &mut rng_source)?;
        let tgt = target_draw(&variant, &mixture, cfg.batch_size, &mut rng_target)?;

        let mut batch = Vec::with_capacity(cfg.batch_size);
        for (s_chunk, t_chunk) in src
            .chunks(cfg.ot_batch_size)
            .zip(tgt.chunks(cfg.ot_batch_size))
        {
            batch.extend(make_training_batch(
                &variant,
                s_chunk,
                t_chunk,
                &coupler,
                &mut rng_pairing,
            )?);
        }

        let (loss, grads) = loss_and_grad(&params, &batch)?;
        adam_step(&mut opt, &mut params, &grads)?;
        ema_update(&mut opt, &params)?;

        smoothed = if iter == 1 {
            loss
        } else {
            LOSS_SMOOTHING * smoothed + (1.0 - LOSS_SMOOTHING) * loss
        };
        if iter == 1 || iter % cfg.log_every == 0 || iter == cfg.train_iters {
            log.push(LogRow {
                iter,
                loss,
                smoothed,
            });
        }
    }

    let ema = opt.ema().clone();
    Ok(TrainOutput {
        model: TrainedModel {
            variant,
            params,
            ema,
            final_norm,
            nfe: cfg.nfe,
            seed: cfg.seed,
        },
        log,
    })
}

/// Generation batches are integrated jointly in chunks of this many samples.
const GENERATE_CHUNK: usize = 512;

/// Draws fresh source noise and integrates it through the learned field.
/// Spherical variants integrate on the manifold; `run.final_norm` rescales
/// the output magnitudes when present.
pub fn generate<R: Rng + ?Sized>(
    model: &TrainedModel,
    n: usize,
    run: &SampleRunConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    if n == 0 {
        return Err(PipelineError::Config("n: must be at least 1".to_string()));
    }
    let variant = run.variant;
    let d = model.params.data_dim();
    let field = if run.use_ema { &model.ema } else { &model.params };

    let mut out = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(GENERATE_CHUNK);
        if variant.is_spherical() {
            let x0 = sample_projected_gaussian(take, d, variant.radius(), rng)?;
            let end = integrate_spherical_batch(field, &x0, run.steps)?;
            out.extend(end.into_iter().map(|p| p.into_vector()));
        } else {
            let x0 = source_draw(&variant, take, d, rng)?;
            out.extend(integrate_euclidean_batch(field, &x0, run.steps)?);
        }
        remaining -= take;
    }
    match run.final_norm {
        Some(s) => Ok(finalize_samples(&out, s)?),
        None => Ok(out),
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_params<W: Write>(w: &mut W, params: &MlpParams) -> std::io::Result<()> {
    for layer in params.layers() {
        for &v in layer.w.iter() {
            write_f64(w, v)?;
        }
        for &v in layer.b.iter() {
            write_f64(w, v)?;
        }
    }
    Ok(())
}

/// Serializes the model to the versioned `SFCK` container.
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    model: &TrainedModel,
) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    let kind = match model.variant.kind() {
        VariantKind::ICfm => 0u8,
        VariantKind::OtCfm => 1,
        VariantKind::SotCfm => 2,
        VariantKind::Sfm => 3,
    };
    w.write_all(&[
        kind,
        model.variant.source_projection() as u8,
        model.variant.target_projection() as u8,
        0,
    ])?;
    write_u32(&mut w, model.params.data_dim() as u32)?;
    write_u32(&mut w, model.params.time_embed_dim() as u32)?;
    write_u32(&mut w, model.params.hidden_widths().len() as u32)?;
    for &width in model.params.hidden_widths() {
        write_u32(&mut w, width as u32)?;
    }
    write_f64(&mut w, model.variant.radius())?;
    write_f64(&mut w, model.final_norm)?;
    write_u32(&mut w, model.nfe as u32)?;
    write_u64(&mut w, model.seed)?;
    write_params(&mut w, &model.params)?;
    write_params(&mut w, &model.ema)?;
    w.flush()?;
    Ok(())
}

fn truncated() -> PipelineError {
    PipelineError::BadCheckpoint("file shorter than its declared contents".to_string())
}

fn read_bytes<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], PipelineError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            truncated()
        } else {
            PipelineError::Io(e)
        }
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PipelineError> {
    Ok(u32::from_le_bytes(read_bytes(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, PipelineError> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, PipelineError> {
    Ok(f64::from_le_bytes(read_bytes(r)?))
}

fn read_layers<R: Read>(
    r: &mut R,
    d: usize,
    hidden: &[usize],
    time_embed_dim: usize,
) -> Result<Vec<LayerParams>, PipelineError> {
    let mut dims = vec![d + time_embed_dim];
    dims.extend_from_slice(hidden);
    dims.push(d);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = Array2::zeros((fan_out, fan_in));
        for v in w.iter_mut() {
            *v = read_f64(r)?;
        }
        let mut b = Array1::zeros(fan_out);
        for v in b.iter_mut() {
            *v = read_f64(r)?;
        }
        layers.push(LayerParams { w, b });
    }
    Ok(layers)
}

/// Reads an `SFCK` checkpoint back; trailing bytes after the declared
/// contents are ignored, everything else is validated.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<TrainedModel, PipelineError> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 4] = read_bytes(&mut r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(PipelineError::BadCheckpoint(format!(
            "bad magic {magic:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(PipelineError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let [kind, src_proj, tgt_proj, _reserved]: [u8; 4] = read_bytes(&mut r)?;
    let kind = match kind {
        0 => VariantKind::ICfm,
        1 => VariantKind::OtCfm,
        2 => VariantKind::SotCfm,
        3 => VariantKind::Sfm,
        other => {
            return Err(PipelineError::BadCheckpoint(format!(
                "unknown variant tag {other}"
            )))
        }
    };
    let d = read_u32(&mut r)? as usize;
    let time_embed_dim = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    if d == 0 || n_hidden > 64 {
        return Err(PipelineError::BadCheckpoint(
            "implausible network shape".to_string(),
        ));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(read_u32(&mut r)? as usize);
    }
    let radius = read_f64(&mut r)?;
    let final_norm = read_f64(&mut r)?;
    let nfe = read_u32(&mut r)? as usize;
    let seed = read_u64(&mut r)?;

    let variant = FlowVariant::new(kind, src_proj != 0, tgt_proj != 0, radius)
        .map_err(|e| PipelineError::BadCheckpoint(format!("invalid variant echo: {e}")))?;
    if !(final_norm.is_finite() && final_norm > 0.0) || nfe == 0 {
        return Err(PipelineError::BadCheckpoint(
            "invalid sampling metadata".to_string(),
        ));
    }

    let params = MlpParams::from_parts(
        d,
        time_embed_dim,
        hidden.clone(),
        read_layers(&mut r, d, &hidden, time_embed_dim)?,
    );
    let ema = MlpParams::from_parts(
        d,
        time_embed_dim,
        hidden.clone(),
        read_layers(&mut r, d, &hidden, time_embed_dim)?,
    );
    Ok(TrainedModel {
        variant,
        params,
        ema,
        final_norm,
        nfe,
        seed,
    })
}
