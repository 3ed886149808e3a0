//! Flat `key = value` experiment configs.
//!
//! One assignment per line, `#` starts a comment, keys may appear once.
//! Unset keys fall back to the variant's defaults, so a minimal config is
//! just `variant = sfm`.

use sphereflow::flow::{PairingMode, VariantKind};
use sphereflow::pipeline::{RadiusSpec, TrainConfig};

pub fn parse_variant(s: &str) -> Result<VariantKind, String> {
    match s {
        "i-cfm" => Ok(VariantKind::ICfm),
        "ot-cfm" => Ok(VariantKind::OtCfm),
        "sot-cfm" => Ok(VariantKind::SotCfm),
        "sfm" => Ok(VariantKind::Sfm),
        other => Err(format!(
            "variant: expected one of i-cfm, ot-cfm, sot-cfm, sfm; got {other:?}"
        )),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("{key}: expected true or false, got {other:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, String> {
    s.parse()
        .map_err(|_| format!("{key}: cannot parse {s:?}"))
}

fn parse_radius(s: &str) -> Result<RadiusSpec, String> {
    if s == "auto" {
        Ok(RadiusSpec::Auto)
    } else {
        Ok(RadiusSpec::Fixed(parse_num::<f64>("radius", s)?))
    }
}

fn parse_hidden(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|part| parse_num::<usize>("hidden", part.trim()))
        .collect()
}

fn parse_pairing(s: &str) -> Result<PairingMode, String> {
    match s {
        "plan" => Ok(PairingMode::PlanSampling),
        "exact" => Ok(PairingMode::ExactAssignment),
        other => Err(format!("pairing: expected plan or exact, got {other:?}")),
    }
}

/// Splits the file into (key, value) pairs, rejecting malformed lines and
/// duplicate keys.
fn assignments(text: &str) -> Result<Vec<(&str, &str)>, String> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got {raw:?}", idx + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(format!("line {}: empty key or value", idx + 1));
        }
        if pairs.iter().any(|&(k, _)| k == key) {
            return Err(format!("line {}: duplicate key {key:?}", idx + 1));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Parses an experiment config. The variant is resolved first because it
/// decides the default projection flags; explicit flags still override.
pub fn parse_config(text: &str) -> Result<TrainConfig, String> {
    let pairs = assignments(text)?;
    let variant = match pairs.iter().find(|&&(k, _)| k == "variant") {
        Some(&(_, v)) => parse_variant(v)?,
        None => VariantKind::Sfm,
    };
    let mut cfg = TrainConfig::for_variant(variant);
    for (key, value) in pairs {
        match key {
            "variant" => {}
            "source_projection" => cfg.source_projection = parse_bool(key, value)?,
            "target_projection" => cfg.target_projection = parse_bool(key, value)?,
            "d" => cfg.d = parse_num(key, value)?,
            "radius" => cfg.radius = parse_radius(value)?,
            "n_components" => cfg.n_components = parse_num(key, value)?,
            "kappa" => cfg.kappa = parse_num(key, value)?,
            "batch_size" => cfg.batch_size = parse_num(key, value)?,
            "ot_batch_size" => cfg.ot_batch_size = parse_num(key, value)?,
            "pairing" => cfg.pairing = parse_pairing(value)?,
            "sinkhorn_eps" => cfg.sinkhorn_eps = parse_num(key, value)?,
            "sinkhorn_max_iter" => cfg.sinkhorn_max_iter = parse_num(key, value)?,
            "sinkhorn_tol" => cfg.sinkhorn_tol = parse_num(key, value)?,
            "hidden" => cfg.hidden = parse_hidden(value)?,
            "time_embed_dim" => cfg.time_embed_dim = parse_num(key, value)?,
            "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
            "weight_decay" => cfg.weight_decay = parse_num(key, value)?,
            "ema_decay" => cfg.ema_decay = parse_num(key, value)?,
            "train_iters" => cfg.train_iters = parse_num(key, value)?,
            "log_every" => cfg.log_every = parse_num(key, value)?,
            "nfe" => cfg.nfe = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
    }
    Ok(cfg)
}
