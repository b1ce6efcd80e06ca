//! Per-supermode squeezing at the oscillator output, projection onto a shaped
//! local oscillator, and the homodyne efficiency correction.
//!
//! Variances are in shot-noise units (vacuum = 1). Mode `k` sees the pump
//! amplitude scaled by its gain, `x_k = gain_k sqrt(P)`, and at normalized
//! analysis frequency `W = 2 f / linewidth` its quadrature variances are
//!
//! ```text
//! squeezed     = 1 - eta_esc 4 x / ((1 + x)^2 + W^2)
//! antisqueezed = 1 + eta_esc 4 x / ((1 - x)^2 + W^2)
//! ```
//!
//! The LO-weighted output variance is
//! `sum_k |M_k|^2 (sq_k cos^2 t + anti_k sin^2 t) + (1 - sum_k |M_k|^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{CavityParams, DetectionBudget};
use crate::error::{precondition, Error, Result};
use crate::supermode::{FrequencyGrid, SupermodeBasis};
use crate::units::db;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSetting {
    pub power_mw: f64,
    pub threshold_mw: f64,
}

impl PumpSetting {
    pub fn new(power_mw: f64, threshold_mw: f64) -> Result<Self> {
        let p = Self {
            power_mw,
            threshold_mw,
        };
        p.validate()?;
        Ok(p)
    }

    /// Setting at a given fraction of threshold.
    pub fn from_normalized(p: f64, threshold_mw: f64) -> Result<Self> {
        Self::new(p * threshold_mw, threshold_mw)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_mw > 0.0 && self.threshold_mw.is_finite()) {
            return Err(precondition(format!(
                "threshold power must be positive, got {}",
                self.threshold_mw
            )));
        }
        if !(self.power_mw >= 0.0) {
            return Err(precondition(format!("pump power must be non-negative, got {}", self.power_mw)));
        }
        let p = self.normalized();
        if p >= 1.0 {
            return Err(Error::AboveThreshold(p));
        }
        Ok(())
    }

    /// `P = power / threshold`.
    pub fn normalized(&self) -> f64 {
        self.power_mw / self.threshold_mw
    }
}

impl Default for PumpSetting {
    /// 40 mW at 30 % of threshold.
    fn default() -> Self {
        Self {
            power_mw: 40.0,
            threshold_mw: 40.0 / 0.3,
        }
    }
}

/// Single-pass parametric gain `1 / (1 - sqrt(P))^2`.
pub fn parametric_gain(pump: &PumpSetting) -> Result<f64> {
    pump.validate()?;
    let s = pump.normalized().sqrt();
    Ok(1.0 / ((1.0 - s) * (1.0 - s)))
}

/// Local-oscillator spectral amplitude on a wavelength grid, unit norm.
#[derive(Debug, Clone)]
pub struct LOSpectrum {
    grid: FrequencyGrid,
    amplitude: Vec<f64>,
    fwhm_nm: Option<f64>,
    phase: Vec<f64>,
}

impl LOSpectrum {
    /// Gaussian LO whose intensity `|a|^2` has the given FWHM.
    pub fn gaussian(grid: &FrequencyGrid, center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        if !(fwhm_nm > 0.0 && fwhm_nm.is_finite()) {
            return Err(precondition(format!("LO FWHM must be positive, got {fwhm_nm}")));
        }
        // |a|^2 = exp(-d^2 / s^2) has FWHM 2 sqrt(ln 2) s
        let s = fwhm_nm / (2.0 * std::f64::consts::LN_2.sqrt());
        let amplitude: Vec<f64> = grid
            .points()
            .iter()
            .map(|p| {
                let d = p - center_nm;
                (-d * d / (2.0 * s * s)).exp()
            })
            .collect();
        let mut lo = Self::from_amplitude(grid, amplitude)?;
        lo.fwhm_nm = Some(fwhm_nm);
        Ok(lo)
    }

    /// Arbitrary real amplitude with flat phase; normalized on the grid.
    pub fn from_amplitude(grid: &FrequencyGrid, mut amplitude: Vec<f64>) -> Result<Self> {
        if amplitude.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                expected: grid.n_points(),
                found: amplitude.len(),
            });
        }
        let norm = grid.norm(&amplitude);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(precondition("LO amplitude has zero norm on the grid"));
        }
        amplitude.iter_mut().for_each(|a| *a /= norm);
        Ok(Self {
            grid: grid.clone(),
            phase: vec![0.0; amplitude.len()],
            amplitude,
            fwhm_nm: None,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn fwhm_nm(&self) -> Option<f64> {
        self.fwhm_nm
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }
}

/// Overlaps of the LO with supermodes `0..=cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeProjection {
    pub overlaps: Vec<f64>,
    pub weights: Vec<f64>,
    /// Unprojected LO power, `1 - sum |M_k|^2`.
    pub residual: f64,
}

impl ModeProjection {
    pub fn from_overlaps(overlaps: Vec<f64>) -> Self {
        let weights: Vec<f64> = overlaps.iter().map(|m| m * m).collect();
        let residual = 1.0 - weights.iter().sum::<f64>();
        Self {
            overlaps,
            weights,
            residual,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub squeezed: f64,
    pub antisqueezed: f64,
}

impl VariancePair {
    pub const VACUUM: Self = Self {
        squeezed: 1.0,
        antisqueezed: 1.0,
    };

    pub fn at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.squeezed * c * c + self.antisqueezed * s * s
    }
}

fn normalized_frequency(cavity: &CavityParams, analysis_freq_mhz: f64) -> Result<f64> {
    if !(analysis_freq_mhz >= 0.0) {
        return Err(precondition(format!(
            "analysis frequency must be non-negative, got {analysis_freq_mhz}"
        )));
    }
    Ok(2.0 * analysis_freq_mhz / cavity.bandwidth_fwhm()?)
}

fn pair_for(x: f64, eta_esc: f64, omega: f64) -> VariancePair {
    let w2 = omega * omega;
    VariancePair {
        squeezed: 1.0 - eta_esc * 4.0 * x / ((1.0 + x).powi(2) + w2),
        antisqueezed: 1.0 + eta_esc * 4.0 * x / ((1.0 - x).powi(2) + w2),
    }
}

/// Output variances of supermode `k`.
pub fn mode_variances(
    k: usize,
    basis: &SupermodeBasis,
    pump: &PumpSetting,
    cavity: &CavityParams,
    analysis_freq_mhz: f64,
) -> Result<VariancePair> {
    if k > basis.cutoff() {
        return Err(precondition(format!(
            "mode {k} lies above the cutoff {}",
            basis.cutoff()
        )));
    }
    pump.validate()?;
    let omega = normalized_frequency(cavity, analysis_freq_mhz)?;
    let x = basis.gains()[k] * pump.normalized().sqrt();
    Ok(pair_for(x, cavity.escape_efficiency()?, omega))
}

/// Variances of every mode up to the cutoff.
pub fn per_mode_variances(
    basis: &SupermodeBasis,
    pump: &PumpSetting,
    cavity: &CavityParams,
    analysis_freq_mhz: f64,
) -> Result<Vec<VariancePair>> {
    pump.validate()?;
    let omega = normalized_frequency(cavity, analysis_freq_mhz)?;
    let eta = cavity.escape_efficiency()?;
    let sqrt_p = pump.normalized().sqrt();
    Ok(basis.gains()[..=basis.cutoff()]
        .iter()
        .map(|g| pair_for(g * sqrt_p, eta, omega))
        .collect())
}

/// Discrete overlaps `M_k = sum lo psi_k dw` for `k = 0..=cutoff`.
pub fn project_lo(lo: &LOSpectrum, basis: &SupermodeBasis) -> Result<ModeProjection> {
    if lo.grid() != basis.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = basis.grid();
    let overlaps = basis.modes()[..=basis.cutoff()]
        .iter()
        .map(|mode| grid.inner(lo.amplitude(), mode))
        .collect();
    Ok(ModeProjection::from_overlaps(overlaps))
}

/// LO-weighted quadrature variance at the oscillator output. `theta = 0` is
/// the squeezed quadrature.
pub fn spopo_variance(
    theta: f64,
    projection: &ModeProjection,
    per_mode: &[VariancePair],
) -> Result<f64> {
    if per_mode.len() != projection.weights.len() {
        return Err(Error::LengthMismatch {
            expected: projection.weights.len(),
            found: per_mode.len(),
        });
    }
    let projected: f64 = projection
        .weights
        .iter()
        .zip(per_mode)
        .map(|(w, pair)| w * pair.at(theta))
        .sum();
    Ok(projected + projection.residual)
}

/// Variance seen by a detector of efficiency `eta`: `1 - eta (1 - v)`.
pub fn detected_variance(output_variance: f64, eta_hom: f64) -> f64 {
    1.0 - eta_hom * (1.0 - output_variance)
}

/// Inverse of [`detected_variance`].
pub fn infer_output_variance(detected: f64, eta_hom: f64) -> Result<f64> {
    if !(eta_hom > 0.0 && eta_hom <= 1.0) {
        return Err(precondition(format!("efficiency must lie in (0, 1], got {eta_hom}")));
    }
    let inferred = 1.0 - (1.0 - detected) / eta_hom;
    if inferred > 0.0 {
        Ok(inferred)
    } else {
        Err(Error::InconsistentInversion {
            detected,
            eta: eta_hom,
            inferred,
        })
    }
}

/// One point of a squeezing curve, detected levels in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub x: f64,
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
}

/// Output-level and detected variances at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub output: VariancePair,
    pub detected: VariancePair,
}

impl OperatingPoint {
    pub fn detected_db(&self) -> Result<(f64, f64)> {
        Ok((db(self.detected.squeezed)?, db(self.detected.antisqueezed)?))
    }

    pub fn output_db(&self) -> Result<(f64, f64)> {
        Ok((db(self.output.squeezed)?, db(self.output.antisqueezed)?))
    }
}

/// Everything the squeezing curves depend on besides the pump and the LO.
#[derive(Debug, Clone, Copy)]
pub struct SqueezingModel<'a> {
    pub basis: &'a SupermodeBasis,
    pub cavity: &'a CavityParams,
    pub budget: &'a DetectionBudget,
    pub analysis_freq_mhz: f64,
}

impl SqueezingModel<'_> {
    pub fn evaluate(&self, pump: &PumpSetting, lo: &LOSpectrum) -> Result<OperatingPoint> {
        let projection = project_lo(lo, self.basis)?;
        self.evaluate_projected(pump, &projection)
    }

    pub fn evaluate_projected(
        &self,
        pump: &PumpSetting,
        projection: &ModeProjection,
    ) -> Result<OperatingPoint> {
        let per_mode = per_mode_variances(self.basis, pump, self.cavity, self.analysis_freq_mhz)?;
        let output = VariancePair {
            squeezed: spopo_variance(0.0, projection, &per_mode)?,
            antisqueezed: spopo_variance(std::f64::consts::FRAC_PI_2, projection, &per_mode)?,
        };
        let eta = self.budget.total_efficiency();
        Ok(OperatingPoint {
            output,
            detected: VariancePair {
                squeezed: detected_variance(output.squeezed, eta),
                antisqueezed: detected_variance(output.antisqueezed, eta),
            },
        })
    }

    /// Detected squeezing and anti-squeezing versus normalized pump power.
    pub fn scan_pump(
        &self,
        p_values: &[f64],
        threshold_mw: f64,
        lo: &LOSpectrum,
    ) -> Result<Vec<ScanPoint>> {
        let projection = project_lo(lo, self.basis)?;
        p_values
            .par_iter()
            .map(|&p| {
                let pump = PumpSetting::from_normalized(p, threshold_mw)?;
                let (sq, anti) = self.evaluate_projected(&pump, &projection)?.detected_db()?;
                Ok(ScanPoint {
                    x: p,
                    squeezing_db: sq,
                    antisqueezing_db: anti,
                })
            })
            .collect()
    }

    /// Detected squeezing and anti-squeezing versus Gaussian LO width.
    pub fn scan_lo_width(
        &self,
        widths_nm: &[f64],
        lo_center_nm: f64,
        pump: &PumpSetting,
    ) -> Result<Vec<ScanPoint>> {
        widths_nm
            .par_iter()
            .map(|&w| {
                let lo = LOSpectrum::gaussian(self.basis.grid(), lo_center_nm, w)?;
                let (sq, anti) = self.evaluate(pump, &lo)?.detected_db()?;
                Ok(ScanPoint {
                    x: w,
                    squeezing_db: sq,
                    antisqueezing_db: anti,
                })
            })
            .collect()
    }
}

/// Intracavity loss for which the LO-weighted output squeezing at `pump`
/// reaches `target_output_db`. Bisection over the physically allowed range.
pub fn calibrate_intracavity_loss(
    basis: &SupermodeBasis,
    cavity: &CavityParams,
    budget: &DetectionBudget,
    lo: &LOSpectrum,
    pump: &PumpSetting,
    analysis_freq_mhz: f64,
    target_output_db: f64,
) -> Result<f64> {
    let projection = project_lo(lo, basis)?;
    let level = |loss: f64| -> Result<f64> {
        let c = cavity.with_intracavity_loss(loss)?;
        let model = SqueezingModel {
            basis,
            cavity: &c,
            budget,
            analysis_freq_mhz,
        };
        Ok(model.evaluate_projected(pump, &projection)?.output_db()?.0 - target_output_db)
    };

    // more loss -> less squeezing -> level increases
    let coupler_loss = (1.0 - cavity.r_ic) + (1.0 - cavity.r_oc);
    let mut lo_loss = 0.0;
    let mut hi_loss = (1.0 - coupler_loss) * (1.0 - 1e-9);
    if level(lo_loss)? > 0.0 {
        return Err(precondition(format!(
            "{target_output_db} dB is out of reach even without intracavity loss"
        )));
    }
    if level(hi_loss)? < 0.0 {
        return Err(precondition(format!(
            "{target_output_db} dB is exceeded even at maximum intracavity loss"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo_loss + hi_loss);
        if level(mid)? > 0.0 {
            hi_loss = mid;
        } else {
            lo_loss = mid;
        }
        if hi_loss - lo_loss < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo_loss + hi_loss))
}
