//! JSON run configuration and model construction.

use std::path::{Path, PathBuf};

use duality_core::decomposition::BlockDecomposition;
use duality_core::diagnostics::{DiagnosticsConfig, DualityFamily};
use duality_core::{AnalyticMarginals, CaviConfig, DiscreteTarget, GaussianTarget, GibbsConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The only configuration schema version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub gibbs: Option<GibbsConfig>,
    #[serde(default)]
    pub cavi: Option<CaviConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub duality: DualityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Target posterior. Discrete tables are flat and row-major: the last block
/// index varies fastest. Every discrete block is one-dimensional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
        block_dims: Vec<usize>,
    },
    Discrete {
        shape: Vec<usize>,
        pmf: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    pub trials: usize,
    pub seed: u64,
    pub families: Vec<DualityFamily>,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            families: vec![DualityFamily::Gaussian, DualityFamily::Discrete],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Used when neither `--out` nor `DUALITY_BENCH_OUT` is given.
    pub directory: Option<PathBuf>,
    /// Formats of the diagnostics report.
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if config.config_version != CONFIG_VERSION {
        return Err(CliError::Config(format!(
            "config_version {} is not supported (expected {CONFIG_VERSION})",
            config.config_version
        )));
    }
    Ok(config)
}

impl RunConfig {
    /// Replace every seed in the configuration.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(g) = &mut self.gibbs {
            g.seed = seed;
        }
        self.diagnostics.seed = seed;
        self.duality.seed = seed;
    }

    pub fn gibbs(&self) -> Result<&GibbsConfig, CliError> {
        let g = self
            .gibbs
            .as_ref()
            .ok_or_else(|| CliError::Config("missing section `gibbs`".into()))?;
        g.validate().map_err(|e| CliError::Config(format!("gibbs: {e}")))?;
        Ok(g)
    }

    pub fn cavi(&self) -> Result<&CaviConfig, CliError> {
        let c = self
            .cavi
            .as_ref()
            .ok_or_else(|| CliError::Config("missing section `cavi`".into()))?;
        c.validate().map_err(|e| CliError::Config(format!("cavi: {e}")))?;
        Ok(c)
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn AnalyticMarginals>, CliError> {
        let err = |e: duality_core::Error| CliError::Config(format!("model: {e}"));
        match self {
            ModelConfig::Gaussian {
                mean,
                covariance,
                block_dims,
            } => {
                let d = mean.len();
                if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
                    return Err(CliError::Config(format!(
                        "model.covariance must be a {d}x{d} matrix to match model.mean"
                    )));
                }
                let cov = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
                let dec = BlockDecomposition::new(block_dims).map_err(err)?;
                Ok(Box::new(GaussianTarget::new(mean.clone(), cov, dec).map_err(err)?))
            }
            ModelConfig::Discrete { shape, pmf } => {
                Ok(Box::new(DiscreteTarget::new(shape.clone(), pmf.clone()).map_err(err)?))
            }
        }
    }
}
