//! Cavity and homodyne-detection parameter budgets.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GddEntry {
    pub label: String,
    pub fs2: f64,
}

impl GddEntry {
    pub fn new(label: impl Into<String>, fs2: f64) -> Self {
        Self {
            label: label.into(),
            fs2,
        }
    }
}

/// Ring cavity with an input coupler, an output coupler and lumped
/// intracavity loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavityParams {
    /// Round-trip length (m).
    pub length_m: f64,
    pub r_ic: f64,
    pub r_oc: f64,
    /// Round-trip power loss other than the two couplers.
    pub intracavity_loss: f64,
    #[serde(default)]
    pub gdd: Vec<GddEntry>,
}

impl CavityParams {
    pub fn new(
        length_m: f64,
        r_ic: f64,
        r_oc: f64,
        intracavity_loss: f64,
        gdd: Vec<GddEntry>,
    ) -> Result<Self> {
        let c = Self {
            length_m,
            r_ic,
            r_oc,
            intracavity_loss,
            gdd,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(precondition(format!("cavity length must be positive, got {}", self.length_m)));
        }
        for (name, r) in [("r_ic", self.r_ic), ("r_oc", self.r_oc)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(precondition(format!("{name} must lie in (0, 1], got {r}")));
            }
        }
        if !(0.0..1.0).contains(&self.intracavity_loss) {
            return Err(precondition(format!(
                "intracavity_loss must lie in [0, 1), got {}",
                self.intracavity_loss
            )));
        }
        Ok(())
    }

    /// Same cavity with a different intracavity loss.
    pub fn with_intracavity_loss(&self, loss: f64) -> Result<Self> {
        let mut c = self.clone();
        c.intracavity_loss = loss;
        c.validate()?;
        Ok(c)
    }

    /// Total fractional power loss per round trip.
    pub fn round_trip_loss(&self) -> f64 {
        (1.0 - self.r_ic) + (1.0 - self.r_oc) + self.intracavity_loss
    }

    fn checked_loss(&self) -> Result<f64> {
        let d = self.round_trip_loss();
        if d > 0.0 && d < 1.0 {
            Ok(d)
        } else {
            Err(Error::InvalidLoss(d))
        }
    }

    /// `c / L` in MHz.
    pub fn free_spectral_range(&self) -> f64 {
        SPEED_OF_LIGHT / self.length_m / 1e6
    }

    /// Low-loss finesse `2 pi / loss`.
    pub fn finesse(&self) -> Result<f64> {
        Ok(2.0 * std::f64::consts::PI / self.checked_loss()?)
    }

    /// Cavity linewidth FWHM in MHz, `FSR / F`.
    pub fn bandwidth_fwhm(&self) -> Result<f64> {
        Ok(self.free_spectral_range() / self.finesse()?)
    }

    /// Fraction of the round-trip loss leaving through the output coupler.
    pub fn escape_efficiency(&self) -> Result<f64> {
        Ok((1.0 - self.r_oc) / self.checked_loss()?)
    }

    /// Net intracavity group-delay dispersion (fs^2).
    pub fn gdd_residual(&self) -> f64 {
        self.gdd.iter().map(|e| e.fs2).sum()
    }
}

impl Default for CavityParams {
    /// 3.23 m ring, 99 % input coupler, 81 % output coupler and 6 % lumped
    /// loss (finesse 24). Crystal and air GDD compensated by a chirped mirror.
    fn default() -> Self {
        Self {
            length_m: 3.23,
            r_ic: 0.99,
            r_oc: 0.81,
            intracavity_loss: 0.06,
            gdd: vec![
                GddEntry::new("crystal", 850.0),
                GddEntry::new("air", 50.0),
                GddEntry::new("chirped mirror", -900.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionBudget {
    pub eta_pd: f64,
    pub eta_opt: f64,
    pub visibility: f64,
    pub eta_bkg: f64,
}

impl DetectionBudget {
    pub fn new(eta_pd: f64, eta_opt: f64, visibility: f64, eta_bkg: f64) -> Result<Self> {
        let b = Self {
            eta_pd,
            eta_opt,
            visibility,
            eta_bkg,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_pd", self.eta_pd),
            ("eta_opt", self.eta_opt),
            ("visibility", self.visibility),
            ("eta_bkg", self.eta_bkg),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(precondition(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Mode-matching efficiency, the squared fringe visibility.
    pub fn eta_vis(&self) -> f64 {
        self.visibility * self.visibility
    }

    /// Overall homodyne efficiency `eta_pd * eta_opt * vis^2 * eta_bkg`.
    pub fn total_efficiency(&self) -> f64 {
        self.eta_pd * self.eta_opt * self.eta_vis() * self.eta_bkg
    }
}

impl Default for DetectionBudget {
    fn default() -> Self {
        Self {
            eta_pd: 0.87,
            eta_opt: 0.99,
            visibility: 0.947,
            eta_bkg: 0.96,
        }
    }
}
