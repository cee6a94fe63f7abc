//! Experiment configuration, loadable from a JSON document.

use crate::error::{Result, StlError};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Configuration shared by every experiment driver.
///
/// The JSON document mirrors these field names exactly; scenario-selector
/// overrides (`drift`, `reaction`, `datum`, `noise`, `alpha`, `lambda`)
/// replace the corresponding entry of the named registry scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Registry scenario name.
    pub scenario: String,
    pub dimension: usize,
    pub horizon: f64,
    pub steps: usize,
    /// Observation-box half-width `L`; the compact set K is this box.
    pub box_half_width: f64,
    /// Observation-grid cell width `h`.
    pub cell_width: f64,
    pub master_seed: u64,
    /// Number of Monte Carlo paths.
    pub paths: usize,
    /// Mollification index range (dyadic bandwidths `2^{-n}`).
    pub n_min: u32,
    pub n_max: u32,
    pub observation_times: Vec<f64>,
    pub out_dir: PathBuf,
    /// Drift selector override (zero | constant | smooth-sine | holder-alpha | rotation-2d).
    #[serde(default)]
    pub drift: Option<String>,
    /// Reaction selector override (zero | linear-lambda | sine | custom-bounded).
    #[serde(default)]
    pub reaction: Option<String>,
    /// Datum selector override (cosine | step | bump).
    #[serde(default)]
    pub datum: Option<String>,
    /// Noise on/off override.
    #[serde(default)]
    pub noise: Option<bool>,
    /// Hölder exponent for holder-alpha drifts.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Rate for linear-lambda reactions.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Integrate the reaction flow with the literal `+F` sign.
    #[serde(default)]
    pub paper_literal_sign: bool,
    /// Worker threads for path-parallel sections; `None` uses the default pool.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Also dump each Brownian path as CSV.
    #[serde(default)]
    pub dump_paths: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "pure-noise".into(),
            dimension: 1,
            horizon: 1.0,
            steps: 1024,
            box_half_width: 1.0,
            cell_width: 1.0 / 64.0,
            master_seed: 42,
            paths: 4,
            n_min: 2,
            n_max: 8,
            observation_times: vec![1.0],
            out_dir: PathBuf::from("out"),
            drift: None,
            reaction: None,
            datum: None,
            noise: None,
            alpha: None,
            lambda: None,
            paper_literal_sign: false,
            threads: None,
            dump_paths: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| StlError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(StlError::Config(format!("steps must be >= 2, got {}", self.steps)));
        }
        if self.n_min >= self.n_max {
            return Err(StlError::Config(format!(
                "mollification range needs n_min < n_max, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        if !(self.box_half_width > 0.0) || !(self.cell_width > 0.0) {
            return Err(StlError::Config(
                "box_half_width and cell_width must be positive".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(StlError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.dimension == 0 || self.dimension > 3 {
            return Err(StlError::Config(format!(
                "dimension must be in 1..=3, got {}",
                self.dimension
            )));
        }
        if self.paths == 0 {
            return Err(StlError::Config("paths must be >= 1".into()));
        }
        if self.observation_times.is_empty() {
            return Err(StlError::Config("need at least one observation time".into()));
        }
        let grid = crate::paths::TimeGrid::new(self.horizon, self.steps)?;
        for t in &self.observation_times {
            if grid.node_index(*t).is_none() {
                return Err(StlError::Config(format!(
                    "observation time {t} is not a node of the {}-step grid on [0, {}]",
                    self.steps, self.horizon
                )));
            }
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<crate::paths::TimeGrid> {
        crate::paths::TimeGrid::new(self.horizon, self.steps)
    }

    pub fn observation_grid(&self) -> Result<crate::grid::SpaceGrid> {
        crate::grid::SpaceGrid::centered(self.dimension, self.box_half_width, self.cell_width)
    }

    pub fn sign(&self) -> crate::characteristics::SignConvention {
        if self.paper_literal_sign {
            crate::characteristics::SignConvention::PaperLiteral
        } else {
            crate::characteristics::SignConvention::TransportConsistent
        }
    }
}
