//! Experiment configuration: every physical and numerical parameter the
//! commands need, read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cavity::{CavityParams, DetectionBudget};
use crate::error::{precondition, Error, Result};
use crate::homodyne::AcquisitionSpec;
use crate::squeezing::{LOSpectrum, PumpSetting};
use crate::state::{PhaseScanModel, SqueezedThermalState};
use crate::supermode::{
    build_kernel, decompose, FrequencyGrid, SupermodeBasis, DEFAULT_CENTER_NM, DEFAULT_GAIN_FLOOR,
    DEFAULT_N_POINTS, DEFAULT_SPAN_NM,
};

/// Gaussian local oscillator, intensity FWHM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoConfig {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    /// LO widths tabulated by the `modes` command.
    pub projection_widths_nm: Vec<f64>,
}

impl Default for LoConfig {
    fn default() -> Self {
        Self {
            center_nm: DEFAULT_CENTER_NM,
            fwhm_nm: 3.0,
            projection_widths_nm: vec![1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub center_nm: f64,
    pub span_nm: f64,
    pub n_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            center_nm: DEFAULT_CENTER_NM,
            span_nm: DEFAULT_SPAN_NM,
            n_points: DEFAULT_N_POINTS,
        }
    }
}

/// Phase-matching width giving a 4.4 nm fundamental supermode with a 1 nm
/// pump on the default grid.
pub const CALIBRATED_PHASEMATCH_FWHM_NM: f64 = 38.684;

/// Intracavity loss at which the 3 nm LO sees -5.7 dB at the output for
/// P = 0.3 on the default model.
pub const CALIBRATED_INTRACAVITY_LOSS: f64 = 0.02877;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub pump_fwhm_nm: f64,
    pub phasematch_fwhm_nm: f64,
    pub analysis_freq_mhz: f64,
    pub k_max: usize,
    pub gain_floor: f64,
    /// Intracavity loss used by the squeezing model in place of
    /// `cavity.intracavity_loss`; the cavity section still drives `budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_intracavity_loss: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pump_fwhm_nm: 1.0,
            phasematch_fwhm_nm: CALIBRATED_PHASEMATCH_FWHM_NM,
            analysis_freq_mhz: 0.5,
            k_max: 160,
            gain_floor: DEFAULT_GAIN_FLOOR,
            effective_intracavity_loss: Some(CALIBRATED_INTRACAVITY_LOSS),
        }
    }
}

/// Phase offset and scan nonlinearity of simulated traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub theta0: f64,
    pub alpha: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            theta0: 0.0,
            alpha: 1.25e-2,
        }
    }
}

/// State written into simulated traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub n_th: f64,
    pub r: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self { n_th: 0.20, r: 0.83 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub cavity: CavityParams,
    pub detection: DetectionBudget,
    pub pump: PumpSetting,
    pub lo: LoConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub acquisition: AcquisitionSpec,
    pub scan: ScanConfig,
    pub state: StateConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and validate; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        self.model_cavity()?.validate()?;
        self.detection.validate()?;
        self.pump.validate()?;
        self.acquisition.validate()?;
        self.grid()?;
        if !(self.lo.fwhm_nm > 0.0) {
            return Err(precondition("lo.fwhm_nm must be positive"));
        }
        if self.lo.projection_widths_nm.iter().any(|w| !(*w > 0.0)) {
            return Err(precondition("lo.projection_widths_nm must be positive"));
        }
        if !(self.model.analysis_freq_mhz >= 0.0) {
            return Err(precondition("model.analysis_freq_mhz must be non-negative"));
        }
        if self.model.k_max == 0 || self.model.k_max > self.grid.n_points {
            return Err(Error::TooManyModes {
                k_max: self.model.k_max,
                n_points: self.grid.n_points,
            });
        }
        if !(0.0..1.0).contains(&self.model.gain_floor) {
            return Err(precondition("model.gain_floor must lie in [0, 1)"));
        }
        SqueezedThermalState::new(self.state.n_th, self.state.r)?;
        if !(self.scan.theta0.is_finite() && self.scan.alpha.is_finite()) {
            return Err(precondition("scan.theta0 and scan.alpha must be finite"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.grid.center_nm, self.grid.span_nm, self.grid.n_points)
    }

    pub fn basis(&self) -> Result<SupermodeBasis> {
        let kernel = build_kernel(&self.grid()?, self.model.pump_fwhm_nm, self.model.phasematch_fwhm_nm)?;
        decompose(&kernel, self.model.k_max, self.model.gain_floor)
    }

    /// Cavity seen by the squeezing model.
    pub fn model_cavity(&self) -> Result<CavityParams> {
        match self.model.effective_intracavity_loss {
            Some(loss) => self.cavity.with_intracavity_loss(loss),
            None => Ok(self.cavity.clone()),
        }
    }

    pub fn lo_spectrum(&self, grid: &FrequencyGrid) -> Result<LOSpectrum> {
        LOSpectrum::gaussian(grid, self.lo.center_nm, self.lo.fwhm_nm)
    }

    pub fn state(&self) -> Result<SqueezedThermalState> {
        SqueezedThermalState::new(self.state.n_th, self.state.r)
    }

    pub fn scan_model(&self) -> Result<PhaseScanModel> {
        self.acquisition.scan(self.scan.theta0, self.scan.alpha)
    }
}
