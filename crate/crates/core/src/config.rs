//! TOML documents: generator configs and calibration grids.

use serde::Deserialize;

use crate::analysis::ParameterGrid;
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, PdfMode};
use crate::latent::{AffinityMatrix, NoiseMode};
use crate::sampling::LongTailSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_users: usize,
    n_items: usize,
    #[serde(alias = "K")]
    latent_dim: usize,
    #[serde(default = "one", alias = "p")]
    populations: usize,
    #[serde(default = "one", alias = "c")]
    categories: usize,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default = "default_tau")]
    tau: usize,
    #[serde(default = "default_sigma")]
    sigma: f64,
    #[serde(default = "default_mu_omega")]
    mu_omega: f64,
    item_popularity: LongTailSpec,
    user_budget: LongTailSpec,
    #[serde(default)]
    affinity: Option<Vec<Vec<bool>>>,
    #[serde(default)]
    pdf_mode: PdfMode,
    #[serde(default)]
    noise_mode: NoiseMode,
    #[serde(default = "default_max_passes")]
    max_passes: usize,
    #[serde(default)]
    seed: u64,
}

fn one() -> usize {
    1
}
fn default_eps() -> f64 {
    0.01
}
fn default_delta() -> f64 {
    1.0
}
fn default_tau() -> usize {
    5
}
fn default_sigma() -> f64 {
    1e-5
}
fn default_mu_omega() -> f64 {
    0.98
}
fn default_max_passes() -> usize {
    1000
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::config("document", e.message().trim().to_string())
}

/// Parses and validates a generator config, filling documented defaults.
///
/// Without an `affinity` table the default relation for `(p, c)` is used.
pub fn parse_config(text: &str) -> Result<GeneratorConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(toml_error)?;
    let affinity = match raw.affinity {
        Some(rows) => AffinityMatrix::new(rows)?,
        None => AffinityMatrix::default_for(raw.populations, raw.categories)?,
    };
    let config = GeneratorConfig {
        n_users: raw.n_users,
        n_items: raw.n_items,
        latent_dim: raw.latent_dim,
        populations: raw.populations,
        categories: raw.categories,
        eps: raw.eps,
        delta: raw.delta,
        tau: raw.tau,
        sigma: raw.sigma,
        mu_omega: raw.mu_omega,
        item_popularity: raw.item_popularity,
        user_budget: raw.user_budget,
        affinity,
        pdf_mode: raw.pdf_mode,
        noise_mode: raw.noise_mode,
        max_passes: raw.max_passes,
        seed: raw.seed,
    };
    config.validate()?;
    Ok(config)
}

/// Writes every field, so [`parse_config`] reads back the same config.
pub fn serialize_config(config: &GeneratorConfig) -> Result<String> {
    if config.seed > i64::MAX as u64 {
        return Err(Error::config("seed", "must fit in a signed 64-bit TOML integer"));
    }
    toml::to_string(config).map_err(|e| Error::config("document", e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AxisSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl AxisSpec {
    fn expand(self, name: &str) -> Result<Vec<f64>> {
        match self {
            AxisSpec::List(v) => Ok(v),
            AxisSpec::Range { start, stop, step } => {
                if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return Err(Error::config(name, "range needs start <= stop and step > 0"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                // round away accumulated binary noise, e.g. 1.9100000000000001
                Ok((0..count)
                    .map(|k| ((start + k as f64 * step) * 1e10).round() / 1e10)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    beta: Option<AxisSpec>,
    lambda: Option<AxisSpec>,
    delta: Option<AxisSpec>,
    tau: Option<AxisSpec>,
    seeds: Option<Vec<u64>>,
}

/// A parsed grid document: the axes plus optional seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDocument {
    pub grid: ParameterGrid,
    pub seeds: Option<Vec<u64>>,
}

/// Parses a grid document. Each of `beta`, `lambda`, `delta`, `tau` is a list
/// or a `{ start, stop, step }` range (inclusive); a missing or empty axis is
/// an empty grid.
pub fn parse_grid(text: &str) -> Result<GridDocument> {
    let raw: RawGrid = toml::from_str(text).map_err(toml_error)?;
    let axis = |spec: Option<AxisSpec>, name: &str| -> Result<Vec<f64>> {
        match spec {
            Some(s) => s.expand(name),
            None => Ok(Vec::new()),
        }
    };
    let beta = axis(raw.beta, "beta")?;
    let lambda = axis(raw.lambda, "lambda")?;
    let delta = axis(raw.delta, "delta")?;
    let tau = axis(raw.tau, "tau")?
        .into_iter()
        .map(|t| {
            if t >= 0.0 && t.fract() == 0.0 {
                Ok(t as usize)
            } else {
                Err(Error::config("tau", format!("{t} is not a nonnegative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = ParameterGrid {
        beta,
        lambda,
        delta,
        tau,
    };
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if raw.seeds.as_ref().is_some_and(Vec::is_empty) {
        return Err(Error::config("seeds", "must not be empty"));
    }
    Ok(GridDocument {
        grid,
        seeds: raw.seeds,
    })
}
