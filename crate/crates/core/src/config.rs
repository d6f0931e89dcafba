//! Run configuration for the command-line tool: a TOML file, overridden by
//! flags, validated before any computation and echoed into every output.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::curves::BasisSet;
use crate::error::{Error, Result};
use crate::inference::DEFAULT_H_GRID;
use crate::model::Hyperparams;
use crate::sampler::McmcConfig;
use crate::simgen::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    /// Worker threads for fan-out across fits; 0 uses every core.
    pub jobs: usize,
    /// Primary input: cumulative cases (`preprocess`), curves (`fit`,
    /// `select-h`), estimated labels (`evaluate`) or a trace (`summarize`).
    pub input: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub preprocess: PreprocessConfig,
    pub basis: BasisConfig,
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    /// Decay parameter for `fit`.
    pub h: f64,
    /// Candidates for `select-h`.
    pub h_grid: Vec<f64>,
    pub simulate: SimulateConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            input: None,
            adjacency: None,
            out_dir: PathBuf::from("out"),
            preprocess: PreprocessConfig::default(),
            basis: BasisConfig::default(),
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
            h: 0.0,
            h_grid: DEFAULT_H_GRID.to_vec(),
            simulate: SimulateConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Inclusive date window applied before building curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisSelection {
    /// `p = 1 + p'` from functional principal components.
    Fpca,
    /// Largest LPML over `p_candidates`, each fitted at `h = 0`.
    Lpml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Fixed basis size; overrides `selection` when set.
    pub p: Option<usize>,
    pub selection: BasisSelection,
    pub fve_threshold: f64,
    /// Remove the estimated white-noise floor from the FPCA spectrum.
    pub fpca_noise_correction: bool,
    pub p_candidates: Vec<usize>,
    /// Spline order, capped at `p`.
    pub order: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            p: None,
            selection: BasisSelection::Fpca,
            fve_threshold: 0.95,
            fpca_noise_correction: true,
            p_candidates: (3..=8).collect(),
            order: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorPreset {
    /// `Λ0 = 1e-6 I`, `ν0 = 0.01`, `s0 = 1`.
    Paper,
    /// `Λ0 = ξᵀξ / T` and `s0²` set to the estimated noise variance of the
    /// curves.
    UnitInformation,
}

/// Prior settings; explicit values override the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub preset: PriorPreset,
    /// Multiple of the identity used as `Λ0`.
    pub lambda0: Option<f64>,
    pub nu0: Option<f64>,
    pub s0sq: Option<f64>,
    pub mu0: Option<Vec<f64>>,
    pub alpha: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            preset: PriorPreset::Paper,
            lambda0: None,
            nu0: None,
            s0sq: None,
            mu0: None,
            alpha: 1.0,
        }
    }
}

impl PriorConfig {
    /// Resolve against a basis; `noise_var` feeds the unit-information
    /// preset.
    pub fn resolve(&self, basis: &BasisSet, noise_var: f64, h: f64) -> Result<Hyperparams> {
        let p = basis.p;
        let mut hy = match self.preset {
            PriorPreset::Paper => Hyperparams::defaults(p, h),
            PriorPreset::UnitInformation => Hyperparams::unit_information(basis, noise_var, h),
        };
        if let Some(l) = self.lambda0 {
            hy.lambda0 = Hyperparams::isotropic(p, l, 1.0, 1.0, 1.0, h).lambda0;
        }
        if let Some(v) = self.nu0 {
            hy.nu0 = v;
        }
        if let Some(v) = self.s0sq {
            hy.s0sq = v;
        }
        if let Some(m) = &self.mu0 {
            if m.len() != p {
                return Err(Error::Config(format!(
                    "prior.mu0 has {} entries but the basis has p = {p}",
                    m.len()
                )));
            }
            hy.mu0 = m.clone();
        }
        hy.alpha = self.alpha;
        hy.validate()?;
        Ok(hy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Preset design 1-8.
    pub design: Option<u32>,
    /// Explicit scheme; used when `design` is unset.
    pub scheme: Option<SimConfig>,
}

impl SimulateConfig {
    pub fn resolve(&self) -> Result<SimConfig> {
        match (self.design, &self.scheme) {
            (Some(d), _) => SimConfig::design(d),
            (None, Some(s)) => Ok(s.clone()),
            (None, None) => Err(Error::Config(
                "simulate needs a design (--design) or an explicit scheme".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// `region_id,cluster` file with the reference partition.
    pub truth: Option<PathBuf>,
    /// Curves for the k-means baseline; no baseline when unset.
    pub baseline_curves: Option<PathBuf>,
    pub k_range: Vec<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            truth: None,
            baseline_curves: None,
            k_range: vec![2, 3, 4, 5],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("h must be non-negative, got {}", self.h)));
        }
        if self.h_grid.is_empty() {
            return Err(Error::Config("h_grid is empty".into()));
        }
        if let Some(h) = self.h_grid.iter().find(|h| !(**h >= 0.0 && h.is_finite())) {
            return Err(Error::Config(format!("h_grid entries must be non-negative, got {h}")));
        }
        let b = &self.basis;
        if !(b.fve_threshold > 0.0 && b.fve_threshold < 1.0) {
            return Err(Error::Config(format!(
                "basis.fve_threshold must lie in (0, 1), got {}",
                b.fve_threshold
            )));
        }
        if b.p == Some(0) || b.order == 0 {
            return Err(Error::Config("basis.p and basis.order must be positive".into()));
        }
        if b.selection == BasisSelection::Lpml && b.p.is_none() {
            if b.p_candidates.is_empty() || b.p_candidates.contains(&0) {
                return Err(Error::Config("basis.p_candidates must be positive and non-empty".into()));
            }
        }
        if !(self.prior.alpha > 0.0) {
            return Err(Error::Config("prior.alpha must be positive".into()));
        }
        if let (Some(s), Some(e)) = (self.preprocess.start, self.preprocess.end) {
            if e < s {
                return Err(Error::Config(format!("date window ends ({e}) before it starts ({s})")));
            }
        }
        if self.evaluate.k_range.iter().any(|&k| k < 2) {
            return Err(Error::Config("evaluate.k_range entries must be at least 2".into()));
        }
        Ok(())
    }
}
