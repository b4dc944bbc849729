use std::path::{Path, PathBuf};

use pemrisk::ais::CemConfig;
use pemrisk::pem::PemModel;
use pemrisk::sim::ScenarioConfig;
use pemrisk::stl::Metric;
use serde::Deserialize;

use crate::CliError;

/// Experiment description read from a TOML file. Every table is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub cem: CemConfig,
    pub metric: Metric,
    pub pem: PemSource,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub estimate: EstimateConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PemSource {
    /// Persisted model written by `train-pem`.
    File { path: PathBuf },
    /// `sigmoid(bias + slope * gap)`.
    DistanceLogistic { bias: f64, slope: f64 },
    Constant { p: f64 },
}

impl Default for PemSource {
    fn default() -> Self {
        PemSource::DistanceLogistic { bias: 7.5, slope: -0.2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub mc_samples: usize,
    pub naive_p: f64,
    pub naive_samples: usize,
    /// Spacing of the proposal-curve grid in metres.
    pub curve_step: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { mc_samples: 10_000, naive_p: 0.5, naive_samples: 100, curve_step: 0.25 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if let PemSource::File { path: p } = &mut cfg.pem {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.scenario.validate()?;
        cfg.metric.validate()?;
        cfg.cem.validate()?;
        Ok(cfg)
    }

    pub fn build_pem(&self) -> Result<PemModel, CliError> {
        match &self.pem {
            PemSource::File { path } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                Ok(PemModel::load(std::io::BufReader::new(f))?)
            }
            PemSource::DistanceLogistic { bias, slope } => Ok(PemModel::distance_logistic(*bias, *slope)),
            PemSource::Constant { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(CliError::input(format!("constant pem probability {p} outside [0, 1]")));
                }
                Ok(PemModel::constant(*p))
            }
        }
    }
}
