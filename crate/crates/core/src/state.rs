//! Squeezed-thermal Gaussian states, the phase-scan model, and recovery of
//! state parameters from measured variance-versus-phase curves.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::optimize::NelderMead;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezedThermalState {
    pub n_th: f64,
    pub r: f64,
}

impl SqueezedThermalState {
    pub const VACUUM: Self = Self { n_th: 0.0, r: 0.0 };

    pub fn new(n_th: f64, r: f64) -> Result<Self> {
        if !(n_th >= 0.0 && n_th.is_finite()) {
            return Err(precondition(format!("n_th must be non-negative, got {n_th}")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(precondition(format!("r must be non-negative, got {r}")));
        }
        Ok(Self { n_th, r })
    }

    fn thermal_factor(&self) -> f64 {
        1.0 + 2.0 * self.n_th
    }

    /// Quadrature variance `(1 + 2 n_th)(e^{-2r} cos^2 t + e^{2r} sin^2 t)`.
    pub fn variance(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.thermal_factor() * ((-2.0 * self.r).exp() * c * c + (2.0 * self.r).exp() * s * s)
    }

    pub fn min_variance(&self) -> f64 {
        self.thermal_factor() * (-2.0 * self.r).exp()
    }

    pub fn max_variance(&self) -> f64 {
        self.thermal_factor() * (2.0 * self.r).exp()
    }

    pub fn purity(&self) -> f64 {
        1.0 / self.thermal_factor()
    }

    /// `max(0, (1 - v_min) / 2)`.
    pub fn nonclassical_depth(&self) -> f64 {
        ((1.0 - self.min_variance()) / 2.0).max(0.0)
    }

    /// Wigner function in the convention where vacuum quadratures have unit
    /// variance, so its phase marginals reproduce [`Self::variance`].
    pub fn wigner(&self, x: f64, p: f64) -> f64 {
        let vx = self.min_variance();
        let vp = self.max_variance();
        (-x * x / (2.0 * vx) - p * p / (2.0 * vp)).exp() / (2.0 * PI * (vx * vp).sqrt())
    }

    /// Wigner function sampled on a square grid `[-half, half]^2`, rows indexed by `p`.
    pub fn wigner_grid(&self, half_width: f64, n: usize) -> WignerGrid {
        let axis: Vec<f64> = (0..n)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / (n.max(2) - 1) as f64)
            .collect();
        let values = axis
            .iter()
            .map(|&p| axis.iter().map(|&x| self.wigner(x, p)).collect())
            .collect();
        WignerGrid { axis, values }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WignerGrid {
    pub axis: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Mapping from nominal scan position to optical phase:
/// `phi = theta0 + s + alpha s^2` with `s = rate * position`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseScanModel {
    pub theta0: f64,
    pub rate: f64,
    pub alpha: f64,
}

impl PhaseScanModel {
    pub fn new(theta0: f64, rate: f64, alpha: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(precondition(format!("scan rate must be positive, got {rate}")));
        }
        Ok(Self {
            theta0,
            rate,
            alpha,
        })
    }

    /// Optical phase at a scan position (units of `1 / rate`).
    pub fn phase(&self, position: f64) -> f64 {
        self.theta0 + apply_phase_distortion(self.rate * position, self.alpha)
    }
}

/// Quadratic scan nonlinearity `theta + alpha theta^2`.
pub fn apply_phase_distortion(theta: f64, alpha: f64) -> f64 {
    theta + alpha * theta * theta
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCurve {
    pub thetas: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl VarianceCurve {
    pub fn new(thetas: Vec<f64>, variances: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if thetas.len() != variances.len() {
            return Err(Error::LengthMismatch {
                expected: thetas.len(),
                found: variances.len(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != thetas.len() {
                return Err(Error::LengthMismatch {
                    expected: thetas.len(),
                    found: w.len(),
                });
            }
        }
        if let Some(&bad) = variances.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveVariance(bad));
        }
        Ok(Self {
            thetas,
            variances,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn span(&self) -> f64 {
        let (lo, hi) = self
            .thetas
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
        hi - lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FitWeighting {
    #[default]
    Uniform,
    /// Use the weights carried by the curve.
    Curve,
    /// `N / (2 v^2)`, the inverse variance of a variance estimated from `N`
    /// Gaussian samples.
    ChiSquare { window: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub fit_alpha: bool,
    /// Known scan rate: optical phase per unit of the curve's theta axis.
    pub rate: f64,
    pub weighting: FitWeighting,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fit_alpha: true,
            rate: 1.0,
            weighting: FitWeighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOutcome {
    pub state: SqueezedThermalState,
    pub scan: PhaseScanModel,
    /// Weighted sum of squared residuals.
    pub residual: f64,
    /// Flat input curve: no phase dependence to fit.
    pub degenerate: bool,
}

const MIN_FIT_POINTS: usize = 50;

pub fn fit_squeezed_thermal(curve: &VarianceCurve, fit_alpha: bool) -> Result<FitOutcome> {
    fit_squeezed_thermal_with(
        curve,
        &FitOptions {
            fit_alpha,
            ..FitOptions::default()
        },
    )
}

/// Least-squares fit of `v(theta0 + s + alpha s^2)`, `s = rate * theta`, to
/// the curve. Nelder-Mead from several starting offsets; the best result is
/// polished by a restart. `theta0` is reported in `[-pi/2, pi/2)`.
pub fn fit_squeezed_thermal_with(curve: &VarianceCurve, opts: &FitOptions) -> Result<FitOutcome> {
    if curve.len() < MIN_FIT_POINTS {
        return Err(precondition(format!(
            "fit needs at least {MIN_FIT_POINTS} points, got {}",
            curve.len()
        )));
    }
    let span = curve.span() * opts.rate;
    if span < PI * (1.0 - 1e-9) {
        return Err(Error::SpanTooShort { span });
    }

    let weights: Vec<f64> = match opts.weighting {
        FitWeighting::Uniform => vec![1.0; curve.len()],
        FitWeighting::Curve => curve
            .weights
            .clone()
            .ok_or_else(|| precondition("curve weighting requested but curve has no weights"))?,
        FitWeighting::ChiSquare { window } => curve
            .variances
            .iter()
            .map(|v| window as f64 / (2.0 * v * v))
            .collect(),
    };

    let vmin = curve.variances.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = curve.variances.iter().copied().fold(0.0, f64::max);
    let unscan = PhaseScanModel {
        theta0: 0.0,
        rate: opts.rate,
        alpha: 0.0,
    };

    if vmax / vmin - 1.0 < 1e-9 {
        let mean = curve.variances.iter().sum::<f64>() / curve.len() as f64;
        let state = SqueezedThermalState {
            n_th: ((mean - 1.0) / 2.0).max(0.0),
            r: 0.0,
        };
        let residual = sse(curve, &weights, &state, &unscan);
        return Ok(FitOutcome {
            state,
            scan: unscan,
            residual,
            degenerate: true,
        });
    }

    // params: [n_th, r, theta0, alpha]; n_th and r enter through |.|
    let objective = |x: &[f64]| {
        let state = SqueezedThermalState {
            n_th: x[0].abs(),
            r: x[1].abs(),
        };
        let scan = PhaseScanModel {
            theta0: x[2],
            rate: opts.rate,
            alpha: if opts.fit_alpha { x[3] } else { 0.0 },
        };
        sse(curve, &weights, &state, &scan)
    };

    let n0 = (((vmin * vmax).sqrt() - 1.0) / 2.0).max(0.0);
    let r0 = (vmax / vmin).ln() / 4.0;
    let dim = if opts.fit_alpha { 4 } else { 3 };
    let step = [0.05, 0.05, 0.1, 2e-3];
    let nm = NelderMead {
        max_iter: 20_000,
        ..NelderMead::default()
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for theta0 in [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4] {
        let x0 = [n0, r0, theta0, 0.0];
        let first = nm.minimize(objective, &x0[..dim], &step[..dim]);
        let better = best.as_ref().is_none_or(|(_, v)| first.value < *v);
        if better && first.value.is_finite() {
            best = Some((first.x, first.value));
        }
    }
    let (x0, residual) = best.ok_or(Error::FitFailed {
        residual: f64::INFINITY,
    })?;

    // restart from the best point so a collapsed simplex cannot stall the fit
    let polished = nm.minimize(objective, &x0, &step[..dim]);
    if !polished.converged {
        return Err(Error::FitFailed {
            residual: polished.value.min(residual),
        });
    }
    let (x, value) = (polished.x, polished.value);
    let scan = PhaseScanModel {
        // the variance has period pi in the phase
        theta0: (x[2] + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2,
        rate: opts.rate,
        alpha: if opts.fit_alpha { x[3] } else { 0.0 },
    };
    Ok(FitOutcome {
        state: SqueezedThermalState {
            n_th: x[0].abs(),
            r: x[1].abs(),
        },
        scan,
        residual: value,
        degenerate: false,
    })
}

fn sse(
    curve: &VarianceCurve,
    weights: &[f64],
    state: &SqueezedThermalState,
    scan: &PhaseScanModel,
) -> f64 {
    curve
        .thetas
        .iter()
        .zip(&curve.variances)
        .zip(weights)
        .map(|((&t, &v), &w)| {
            let d = v - state.variance(scan.phase(t));
            w * d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::db;

    fn reference_state() -> SqueezedThermalState {
        SqueezedThermalState::new(0.20, 0.83).unwrap()
    }

    fn synthetic_curve(state: SqueezedThermalState, scan: PhaseScanModel, n: usize) -> VarianceCurve {
        let thetas: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let variances = thetas.iter().map(|&t| state.variance(scan.phase(t))).collect();
        VarianceCurve::new(thetas, variances, None).unwrap()
    }

    #[test]
    fn vacuum_variance_is_one() {
        for t in [0.0, 0.3, 1.0, 2.5] {
            assert!((SqueezedThermalState::VACUUM.variance(t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_state_levels() {
        let s = reference_state();
        let vmin = s.variance(0.0);
        assert!((vmin - 1.4 * (-1.66f64).exp()).abs() < 1e-15);
        assert!((vmin - 0.266195).abs() < 1e-6);
        assert!((db(vmin).unwrap() + 5.748).abs() < 1e-3);
        let vmax = s.variance(FRAC_PI_2);
        assert!((vmax - 7.363035).abs() < 1e-6);
        assert!((db(vmax).unwrap() - 8.6706).abs() < 1e-4);
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(apply_phase_distortion(1.3, 0.0), 1.3);
        let t = apply_phase_distortion(PI, 1.25e-2);
        assert!((t - PI - 0.123_370).abs() < 1e-6);
        // derivative 1 + 2 alpha theta stays positive on [0, 2 pi] when alpha <= 1/(4 pi)
        let alpha = 1.0 / (4.0 * PI);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let th = 2.0 * PI * i as f64 / 1000.0;
            let v = apply_phase_distortion(th, alpha);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn wigner_peak_and_normalization() {
        let s = reference_state();
        assert!((s.wigner(0.0, 0.0) - 1.0 / (2.0 * PI * 1.4)).abs() < 1e-12);
        assert!((s.wigner(0.0, 0.0) - 0.11368).abs() < 1e-5);
        assert!((SqueezedThermalState::VACUUM.wigner(0.0, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);

        // 8 sigma box, midpoint rule
        let (sx, sp) = (s.min_variance().sqrt(), s.max_variance().sqrt());
        let n = 800;
        let (hx, hp) = (16.0 * sx / n as f64, 16.0 * sp / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            let x = -8.0 * sx + (i as f64 + 0.5) * hx;
            for j in 0..n {
                let p = -8.0 * sp + (j as f64 + 0.5) * hp;
                total += s.wigner(x, p);
            }
        }
        assert!((total * hx * hp - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wigner_marginal_matches_quadrature_variance() {
        let s = reference_state();
        let sp = s.max_variance().sqrt();
        let n = 4000;
        let h = 20.0 * sp / n as f64;
        for x in [0.0, 0.3, 0.7] {
            let marginal: f64 = (0..n)
                .map(|j| s.wigner(x, -10.0 * sp + (j as f64 + 0.5) * h))
                .sum::<f64>()
                * h;
            let vx = s.variance(0.0);
            let expect = (-x * x / (2.0 * vx)).exp() / (2.0 * PI * vx).sqrt();
            assert!((marginal - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_and_purity() {
        let s = reference_state();
        assert!((s.nonclassical_depth() - 0.366903).abs() < 1e-6);
        assert_eq!(SqueezedThermalState::VACUUM.nonclassical_depth(), 0.0);
        assert_eq!(SqueezedThermalState::new(0.5, 0.0).unwrap().nonclassical_depth(), 0.0);
        assert!((s.purity() - 1.0 / 1.4).abs() < 1e-15);
        assert_eq!(SqueezedThermalState::VACUUM.purity(), 1.0);
        let mut prev = 2.0;
        for n in [0.0, 0.1, 0.5, 2.0] {
            let p = SqueezedThermalState::new(n, 0.3).unwrap().purity();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn invalid_state_rejected() {
        assert!(SqueezedThermalState::new(-0.1, 0.2).is_err());
        assert!(SqueezedThermalState::new(0.1, -0.2).is_err());
        assert!(PhaseScanModel::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(VarianceCurve::new(vec![0.0, 1.0], vec![1.0], None).is_err());
        assert!(VarianceCurve::new(vec![0.0, 1.0], vec![1.0, 0.0], None).is_err());
        assert!(VarianceCurve::new(vec![0.0], vec![1.0], Some(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let truth = reference_state();
        let scan = PhaseScanModel::new(0.0, 2.0 * PI, 1.25e-2).unwrap();
        let curve = synthetic_curve(truth, scan, 200);
        let fit = fit_squeezed_thermal_with(
            &curve,
            &FitOptions {
                fit_alpha: true,
                rate: 2.0 * PI,
                weighting: FitWeighting::Uniform,
            },
        )
        .unwrap();
        assert!((fit.state.n_th - 0.20).abs() < 0.01, "{fit:?}");
        assert!((fit.state.r - 0.83).abs() < 0.01, "{fit:?}");
        assert!((fit.scan.alpha - 1.25e-2).abs() < 1e-3, "{fit:?}");
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn offset_is_recovered() {
        let truth = SqueezedThermalState::new(0.1, 0.5).unwrap();
        let scan = PhaseScanModel::new(1.1, 2.0 * PI, 5e-3).unwrap();
        let curve = synthetic_curve(truth, scan, 120);
        let opts = FitOptions {
            rate: 2.0 * PI,
            ..FitOptions::default()
        };
        let fit = fit_squeezed_thermal_with(&curve, &opts).unwrap();
        assert!((fit.scan.theta0 - 1.1).abs() < 1e-4, "{fit:?}");
        assert!((fit.state.r - 0.5).abs() < 1e-5);
    }

    #[test]
    fn vacuum_curve_is_degenerate() {
        let thetas: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let curve = VarianceCurve::new(thetas, vec![1.0; 100], None).unwrap();
        let fit = fit_squeezed_thermal(&curve, true).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.state, SqueezedThermalState::VACUUM);
    }

    #[test]
    fn thermal_flat_curve_reports_mean_occupation() {
        let thetas: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let curve = VarianceCurve::new(thetas, vec![1.6; 100], None).unwrap();
        let fit = fit_squeezed_thermal(&curve, false).unwrap();
        assert!(fit.degenerate);
        assert!((fit.state.n_th - 0.3).abs() < 1e-12);
        assert_eq!(fit.state.r, 0.0);
    }

    #[test]
    fn ignoring_distortion_costs_residual() {
        let truth = reference_state();
        let scan = PhaseScanModel::new(0.0, 2.0 * PI, 1.25e-2).unwrap();
        let curve = synthetic_curve(truth, scan, 150);
        let base = FitOptions {
            rate: 2.0 * PI,
            ..FitOptions::default()
        };
        let with = fit_squeezed_thermal_with(&curve, &base).unwrap();
        let without = fit_squeezed_thermal_with(
            &curve,
            &FitOptions {
                fit_alpha: false,
                ..base
            },
        )
        .unwrap();
        assert!(without.residual > with.residual);
        assert_eq!(without.scan.alpha, 0.0);
    }

    #[test]
    fn fit_is_scan_rate_invariant() {
        // same physical curve, theta axis in trace fractions vs radians
        let truth = reference_state();
        let scan = PhaseScanModel::new(0.0, 2.0 * PI, 1.25e-2).unwrap();
        let frac = synthetic_curve(truth, scan, 160);
        let rad = VarianceCurve::new(
            frac.thetas.iter().map(|t| t * 2.0 * PI).collect(),
            frac.variances.clone(),
            None,
        )
        .unwrap();
        let a = fit_squeezed_thermal_with(
            &frac,
            &FitOptions {
                rate: 2.0 * PI,
                ..FitOptions::default()
            },
        )
        .unwrap();
        let b = fit_squeezed_thermal(&rad, true).unwrap();
        assert!((a.state.n_th - b.state.n_th).abs() < 1e-4);
        assert!((a.state.r - b.state.r).abs() < 1e-4);
        assert!((a.scan.alpha - b.scan.alpha).abs() < 1e-5);
    }

    #[test]
    fn too_few_points_or_short_span() {
        let thetas: Vec<f64> = (0..20).map(|i| i as f64 * 0.2).collect();
        let curve = VarianceCurve::new(thetas, vec![1.0; 20], None).unwrap();
        assert!(fit_squeezed_thermal(&curve, true).is_err());
        let thetas: Vec<f64> = (0..60).map(|i| i as f64 * 0.01).collect();
        let curve = VarianceCurve::new(thetas, vec![1.0; 60], None).unwrap();
        assert!(matches!(fit_squeezed_thermal(&curve, true), Err(Error::SpanTooShort { .. })));
    }

    #[test]
    fn chi_square_weights_fit() {
        let truth = reference_state();
        let scan = PhaseScanModel::new(0.0, 2.0 * PI, 1.25e-2).unwrap();
        let curve = synthetic_curve(truth, scan, 100);
        let fit = fit_squeezed_thermal_with(
            &curve,
            &FitOptions {
                rate: 2.0 * PI,
                weighting: FitWeighting::ChiSquare { window: 20_000 },
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!((fit.state.r - 0.83).abs() < 1e-3);
    }
}
