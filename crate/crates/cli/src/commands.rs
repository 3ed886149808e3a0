//! Subcommand implementations and the exit-code contract.
//!
//! Every command is a pure function of (config, seed, input files) and
//! writes its results under `--out`. Failures map to three stable exit
//! codes: 1 for usage and config problems, 2 for unreadable or malformed
//! data, 3 for numeric failures inside a run.

use crate::config::parse_config;
use sphereflow::datasets::{load_vectors, norm_stats, save_vectors, DatasetError};
use sphereflow::eval::{energy_distance, on_sphere_residual, projection_sweep, EvalError};
use sphereflow::geometry::{angle_between, project_to_sphere, rescale_to_norm};
use sphereflow::pipeline::{
    self, generate, heldout_targets, load_checkpoint, loss_log_csv, save_checkpoint, stream_rng,
    PipelineError, RadiusSpec, TrainConfig, STREAM_SAMPLING,
};
use sphereflow::sampler::SampleRunConfig;
use std::fmt;
use std::fs;
use std::path::Path;

/// Dedicated stream for the fixed direction pairs used by the radius
/// ablation's speed column; disjoint from the pipeline's streams.
const STREAM_ABLATION_PAIRS: u64 = 100;

/// Number of fixed direction pairs behind the `mean_target_speed` column.
const ABLATION_PAIRS: usize = 64;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config contents; exit code 1.
    Usage(String),
    /// Missing, truncated or malformed input files; exit code 2.
    Data(String),
    /// A run failed numerically; exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

fn classify_dataset(e: DatasetError) -> CliError {
    match e {
        DatasetError::SamplingStalled => CliError::Numeric(e.to_string()),
        DatasetError::BadDimension { .. }
        | DatasetError::BadRadius(_)
        | DatasetError::NoComponents
        | DatasetError::BadWeight
        | DatasetError::BadConcentration(_)
        | DatasetError::MeanNotUnit(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn classify(e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(m) => CliError::Usage(m),
        PipelineError::BadCheckpoint(_) => CliError::Data(e.to_string()),
        PipelineError::Io(io) => CliError::Data(io.to_string()),
        PipelineError::Dataset(d) => classify_dataset(d),
        PipelineError::Flow(_)
        | PipelineError::Model(_)
        | PipelineError::Sampler(_)
        | PipelineError::Geometry(_) => CliError::Numeric(e.to_string()),
    }
}

fn classify_eval(e: EvalError) -> CliError {
    match e {
        EvalError::BadRadius(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn read_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(CliError::Usage)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let cfg = read_config(config, seed)?;
    ensure_out(out)?;
    let result = pipeline::train(&cfg).map_err(classify)?;
    write_file(&out.join("training_log.csv"), &loss_log_csv(&result.log))?;
    save_checkpoint(out.join("checkpoint.sfck"), &result.model).map_err(classify)?;
    let last = result.log.last().expect("training logs at least one row");
    println!(
        "trained {} for {} iterations; final loss {:.6} (smoothed {:.6})",
        cfg.variant.name(),
        cfg.train_iters,
        last.loss,
        last.smoothed
    );
    println!("wrote {}", out.join("checkpoint.sfck").display());
    Ok(())
}

pub fn cmd_sample(
    checkpoint: &Path,
    n: usize,
    steps: Option<usize>,
    seed: Option<u64>,
    no_rescale: bool,
    out: &Path,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("n: must be at least 1".to_string()));
    }
    let model = load_checkpoint(checkpoint).map_err(classify)?;
    let steps = steps.unwrap_or(model.nfe);
    let final_norm = if no_rescale {
        None
    } else {
        Some(model.final_norm)
    };
    let run = SampleRunConfig::new(steps, model.variant, final_norm, true)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = stream_rng(seed.unwrap_or(model.seed), STREAM_SAMPLING);
    let samples = generate(&model, n, &run, &mut rng).map_err(classify)?;
    ensure_out(out)?;
    let path = out.join("samples.sfv1");
    save_vectors(&path, &samples).map_err(classify_dataset)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

pub fn cmd_eval(
    samples: &Path,
    reference: &Path,
    radius: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let sample_batch = load_vectors(samples).map_err(classify_dataset)?;
    let reference_batch = load_vectors(reference).map_err(classify_dataset)?;
    let distance = energy_distance(&sample_batch, &reference_batch).map_err(classify_eval)?;
    let stats = norm_stats(&sample_batch).map_err(classify_dataset)?;

    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("energy_distance,{distance}\n"));
    csv.push_str(&format!("mean_norm,{}\n", stats.mean));
    csv.push_str(&format!("std_norm,{}\n", stats.std));
    csv.push_str(&format!("min_norm,{}\n", stats.min));
    csv.push_str(&format!("max_norm,{}\n", stats.max));
    csv.push_str(&format!("count,{}\n", stats.count));
    if let Some(r) = radius {
        let residual = on_sphere_residual(&sample_batch, r).map_err(classify_eval)?;
        csv.push_str(&format!("on_sphere_residual,{residual}\n"));
    }
    ensure_out(out)?;
    write_file(&out.join("eval.csv"), &csv)?;
    println!("energy distance {distance}");
    Ok(())
}

pub fn cmd_analyze(input: &Path, radii: &[f64], out: &Path) -> Result<(), CliError> {
    let batch = load_vectors(input).map_err(classify_dataset)?;
    let stats = norm_stats(&batch).map_err(classify_dataset)?;
    let rows = projection_sweep(&batch, radii).map_err(classify_eval)?;

    ensure_out(out)?;
    write_file(
        &out.join("norm_stats.csv"),
        &format!(
            "mean,std,min,max,count\n{},{},{},{},{}\n",
            stats.mean, stats.std, stats.min, stats.max, stats.count
        ),
    )?;
    let mut sweep = String::from("radius,distortion\n");
    for row in &rows {
        sweep.push_str(&format!("{},{}\n", row.radius, row.distortion));
    }
    write_file(&out.join("projection_sweep.csv"), &sweep)?;
    println!(
        "norms: mean {} std {}; sweep over {} radii written",
        stats.mean,
        stats.std,
        rows.len()
    );
    Ok(())
}

/// Fixed direction pairs shared by every radius of the ablation: unit
/// vectors drawn once from the config seed, rescaled per radius.
fn ablation_pairs(cfg: &TrainConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>, CliError> {
    let mut rng = stream_rng(cfg.seed, STREAM_ABLATION_PAIRS);
    let draw = |rng: &mut _| {
        sphereflow::datasets::sample_projected_gaussian(ABLATION_PAIRS, cfg.d, 1.0, rng)
            .map_err(classify_dataset)
    };
    let sources = draw(&mut rng)?;
    let targets = draw(&mut rng)?;
    Ok(sources
        .into_iter()
        .zip(targets)
        .map(|(a, b)| (a.into_vector(), b.into_vector()))
        .collect())
}

/// Mean geodesic speed `r * angle` over the fixed pairs at one radius.
fn mean_target_speed(pairs: &[(Vec<f64>, Vec<f64>)], r: f64) -> Result<f64, CliError> {
    let numeric = |e: sphereflow::geometry::GeometryError| CliError::Numeric(e.to_string());
    let mut total = 0.0;
    for (a, b) in pairs {
        let pa = project_to_sphere(a, r).map_err(numeric)?;
        let pb = project_to_sphere(b, r).map_err(numeric)?;
        total += r * angle_between(&pa, &pb).map_err(numeric)?.radians();
    }
    Ok(total / pairs.len() as f64)
}

pub fn cmd_ablate_radius(
    config: &Path,
    radii: &[f64],
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    if radii.is_empty() {
        return Err(CliError::Usage("radii: need at least one radius".to_string()));
    }
    if radii.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
        return Err(CliError::Usage(
            "radii: every radius must be positive and finite".to_string(),
        ));
    }
    let base = read_config(config, seed)?;
    let pairs = ablation_pairs(&base)?;

    // One held-out direction batch serves every radius; magnitudes are
    // normalized to a common scale so the rows are comparable.
    let common_norm = RadiusSpec::Auto.resolve(base.d);
    let held: Vec<Vec<f64>> = heldout_targets(&base, 512)
        .map_err(classify)?
        .iter()
        .map(|v| rescale_to_norm(v, common_norm))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let mut csv = String::from("radius,energy_distance,mean_target_speed\n");
    for &r in radii {
        let mut cfg = base.clone();
        cfg.radius = RadiusSpec::Fixed(r);
        cfg.validate().map_err(classify)?;
        let result = pipeline::train(&cfg).map_err(classify)?;
        let run = SampleRunConfig::new(cfg.nfe, result.model.variant, Some(common_norm), true)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut rng = stream_rng(cfg.seed, STREAM_SAMPLING);
        let samples = generate(&result.model, 512, &run, &mut rng).map_err(classify)?;
        let distance = energy_distance(&samples, &held).map_err(classify_eval)?;
        let speed = mean_target_speed(&pairs, r)?;
        csv.push_str(&format!("{r},{distance},{speed}\n"));
        println!("radius {r}: energy distance {distance}, mean target speed {speed}");
    }
    ensure_out(out)?;
    write_file(&out.join("ablation.csv"), &csv)?;
    Ok(())
}
