//! Experiment configuration: TOML or JSON files, optionally layered on top of
//! one of the built-in presets.

use std::path::Path;

use iga_core::models::{ModelConfig, ModelSpec};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const PRESETS: [(&str, &str); 4] = [
    ("merton-ex41", include_str!("../presets/merton-ex41.toml")),
    ("merton-ex24", include_str!("../presets/merton-ex24.toml")),
    ("svjd-ex42", include_str!("../presets/svjd-ex42.toml")),
    ("svjd-ex25", include_str!("../presets/svjd-ex25.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fit,
    Price1d,
    Price2d,
    Reference,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    #[serde(default = "default_p", deserialize_with = "one_or_many")]
    pub p: Vec<usize>,
    #[serde(default = "default_n_s", deserialize_with = "one_or_many")]
    pub n_s: Vec<usize>,
    /// Elements in `v`; defaults to `n_s`.
    #[serde(default)]
    pub n_v: Option<usize>,
    #[serde(default = "default_n_tau")]
    pub n_tau: usize,
    /// Defaults to three times the strike.
    #[serde(default)]
    pub s_max: Option<f64>,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Multiplicity of the strike knot; defaults to the degree.
    #[serde(default)]
    pub strike_multiplicity: Option<usize>,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            p: default_p(),
            n_s: default_n_s(),
            n_v: None,
            n_tau: default_n_tau(),
            s_max: None,
            v_max: default_v_max(),
            omega: default_omega(),
            strike_multiplicity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTarget {
    Exp,
    Put,
    Digital,
    Merton,
    Svjd,
}

impl FitTarget {
    pub fn is_toy(self) -> bool {
        matches!(self, FitTarget::Exp | FitTarget::Put | FitTarget::Digital)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub target: FitTarget,
    #[serde(default = "default_fit_degree")]
    pub degree: usize,
    /// Uniform elements; 6 for the toy targets, 12 for price curves.
    #[serde(default)]
    pub elements: Option<usize>,
    /// `[0, 6]` for the toy targets, `[0, s_max]` for price curves.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    /// Multiplicity of the kink knot (domain midpoint or strike). Toy
    /// targets default to 1, price curves to 3.
    #[serde(default)]
    pub kink_multiplicity: Option<usize>,
    #[serde(default = "default_true")]
    pub nurbs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    /// Closed form or Fourier where available, Monte Carlo otherwise.
    #[default]
    Auto,
    Fourier,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Spot; defaults to the strike.
    #[serde(default)]
    pub s: Option<f64>,
    /// Initial variance; defaults to the model's `v0`, then 0.
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub method: ReferenceMethod,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            s: None,
            v0: None,
            method: ReferenceMethod::Auto,
            n_paths: default_paths(),
            n_steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_samples_s")]
    pub samples_s: usize,
    #[serde(default = "default_samples_v")]
    pub samples_v: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            samples_s: default_samples_s(),
            samples_v: default_samples_v(),
        }
    }
}

fn default_p() -> Vec<usize> {
    vec![3]
}
fn default_n_s() -> Vec<usize> {
    vec![9]
}
fn default_n_tau() -> usize {
    100
}
fn default_v_max() -> f64 {
    3.0
}
fn default_omega() -> f64 {
    1.0
}
fn default_fit_degree() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_paths() -> usize {
    100_000
}
fn default_steps() -> usize {
    500
}
fn default_samples_s() -> usize {
    301
}
fn default_samples_v() -> usize {
    31
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

/// A validated configuration together with its content hash.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub seed: u64,
    pub model: Option<ModelSpec>,
    pub hash: String,
}

impl Resolved {
    pub fn model(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::config("no [model] section and no preset"))
    }

    pub fn model_config(&self) -> Result<&ModelConfig> {
        self.config
            .model
            .as_ref()
            .ok_or_else(|| CliError::config("no [model] section and no preset"))
    }

    pub fn s_max(&self) -> Result<f64> {
        match self.config.discretization.s_max {
            Some(x) => Ok(x),
            None => Ok(3.0 * self.model()?.strike),
        }
    }
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

fn parse_document(text: &str, json: bool) -> Result<toml::Table> {
    if json {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
        toml::Table::try_from(value).map_err(|e| CliError::config(format!("invalid JSON: {e}")))
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| CliError::config(format!("invalid TOML: {e}")))
    }
}

/// Keys of `over` replace those of `base`, recursing into nested tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load(path: &Path, mode: Mode, seed: Option<u64>) -> Result<Resolved> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    resolve(parse_document(&text, json)?, mode, seed)
}

pub fn resolve(user: toml::Table, mode: Mode, seed: Option<u64>) -> Result<Resolved> {
    let mut table = match user.get("preset") {
        Some(toml::Value::String(name)) => {
            let text = preset(name).ok_or_else(|| {
                let known: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
                CliError::config(format!(
                    "unknown preset '{name}' (known: {})",
                    known.join(", ")
                ))
            })?;
            parse_document(text, false)?
        }
        Some(_) => return Err(CliError::config("'preset' must be a string")),
        None => toml::Table::new(),
    };
    merge(&mut table, user);
    let mut config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(e.message()))?;
    if let Some(m) = config.mode {
        if m != mode {
            return Err(CliError::config(format!(
                "config is for mode '{m:?}' but '{mode:?}' was requested"
            )));
        }
    }
    config.mode = Some(mode);
    if let Some(s) = seed {
        config.seed = Some(s);
    }
    let seed = config.seed.unwrap_or(0);
    config.seed = Some(seed);
    let model = config
        .model
        .as_ref()
        .map(|m| m.to_spec())
        .transpose()
        .map_err(CliError::config)?;
    validate(&config)?;
    let canonical = serde_json::to_string(&config).expect("config serializes");
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(Resolved {
        config,
        mode,
        seed,
        model,
        hash,
    })
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    let d = &config.discretization;
    if d.p.is_empty() {
        return Err(CliError::config("discretization.p is empty"));
    }
    if d.n_s.is_empty() {
        return Err(CliError::config("discretization.n_s is empty"));
    }
    if config.output.samples_s < 2 || config.output.samples_v < 2 {
        return Err(CliError::config("output sample counts must be at least 2"));
    }
    Ok(())
}
