//! Short names for the common models and densities. Anything starting with
//! `{` is read as a JSON model spec instead.

use anyhow::{anyhow, bail, Context, Result};
use ppot::dynamics::ParticleDensity;
use ppot::processes::{DensityFamily, ProcessModel};
use sha2::{Digest, Sha256};

pub const MODEL_HELP: &str = "poisson, poisson<λ>, lattice, lattice-aligned, grid-uniform[:ε], grid-cosine, \
grid-gauss:<σ> (append -aligned to a grid for the non-stationarized version), or a JSON spec";

pub fn parse_model(s: &str) -> Result<ProcessModel> {
    let s = s.trim();
    let m = if s.starts_with('{') {
        serde_json::from_str(s).context("bad JSON model spec")?
    } else {
        alias(s)?
    };
    m.validate()?;
    Ok(m)
}

fn alias(s: &str) -> Result<ProcessModel> {
    if let Some(rest) = s.strip_prefix("poisson") {
        let intensity = if rest.is_empty() { 1.0 } else { number(rest)? };
        return Ok(ProcessModel::poisson(intensity));
    }
    match s {
        "lattice" => return Ok(ProcessModel::LatticeGrid { stationarized: true }),
        "lattice-aligned" => return Ok(ProcessModel::LatticeGrid { stationarized: false }),
        _ => {}
    }
    let (body, stationarized) = match s.strip_suffix("-aligned") {
        Some(b) => (b, false),
        None => (s, true),
    };
    let fam = body.strip_prefix("grid-").ok_or_else(|| anyhow!("unknown model `{s}` (expected {MODEL_HELP})"))?;
    Ok(ProcessModel::grid(parse_family(fam)?, stationarized))
}

/// `uniform[:ε]`, `cosine` or `gauss:<σ>`.
pub fn parse_family(s: &str) -> Result<DensityFamily> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(number(a)?)),
        None => (s, None),
    };
    let f = match (name, arg) {
        ("uniform", eps) => DensityFamily::UniformCell { epsilon: eps.unwrap_or(1.0) },
        ("cosine", None) => DensityFamily::CosineBump,
        ("gauss", Some(sigma)) => DensityFamily::TruncatedGaussian { sigma },
        _ => bail!("unknown density `{s}` (expected uniform[:ε], cosine or gauss:<σ>)"),
    };
    f.validate()?;
    Ok(f)
}

/// One-particle density on Λ_side: `uniform` fills the box, anything else
/// is a family placed on the unit cell at `offset`.
pub fn particle_density(family: &str, side: f64, offset: f64) -> Result<ParticleDensity> {
    let p = if family == "uniform-box" {
        ParticleDensity::uniform(side)
    } else {
        ParticleDensity::on_cell(side, parse_family(family)?, offset)
    };
    p.validate()?;
    Ok(p)
}

fn number(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| anyhow!("`{s}` is not a number"))
}

/// First 12 hex digits of the SHA-256 of the model's JSON form.
pub fn model_hash(m: &ProcessModel) -> String {
    let json = serde_json::to_string(m).expect("models serialize");
    hex12(json.as_bytes())
}

pub fn hex12(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))[..12].to_string()
}
