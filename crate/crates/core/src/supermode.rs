//! Joint-spectral kernel of the parametric gain medium and its supermode
//! decomposition.
//!
//! The kernel is the product of a pump envelope in the sum detuning and a
//! Gaussian phase-matching envelope in the difference detuning:
//!
//! ```text
//! K(d1, d2) = exp(-(d1 + d2)^2 / (4 sp^2)) * exp(-(d1 - d2)^2 / (4 sm^2))
//! ```
//!
//! with `d` the wavelength detuning from the grid center and `s = FWHM / sqrt(8 ln 2)`.
//! Its singular vectors are the supermodes; the singular values, rescaled so the
//! leading one is 1, are the normalized gains.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

/// `sqrt(8 ln 2)`: ratio of an intensity FWHM to the Gaussian sigma.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub const DEFAULT_CENTER_NM: f64 = 1035.0;
pub const DEFAULT_SPAN_NM: f64 = 120.0;
pub const DEFAULT_N_POINTS: usize = 1024;
pub const DEFAULT_GAIN_FLOOR: f64 = 1e-3;

const KERNEL_CLIP: f64 = 1e-20;

/// Envelopes must fit inside the grid with this many sigmas of span.
const SPAN_SIGMAS: f64 = 6.0;

pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

/// Uniform wavelength grid, symmetric about its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    center_wavelength: f64,
    span: f64,
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(center_wavelength: f64, span: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(precondition(format!("grid needs at least 2 points, got {n_points}")));
        }
        if !(span > 0.0 && span.is_finite()) {
            return Err(precondition(format!("grid span must be positive, got {span}")));
        }
        if !(center_wavelength > 0.0 && center_wavelength.is_finite()) {
            return Err(precondition(format!(
                "center wavelength must be positive, got {center_wavelength}"
            )));
        }
        let step = span / (n_points - 1) as f64;
        let mid = (n_points - 1) as f64 / 2.0;
        let points = (0..n_points)
            .map(|i| center_wavelength + (i as f64 - mid) * step)
            .collect();
        Ok(Self {
            center_wavelength,
            span,
            points,
        })
    }

    pub fn center_wavelength(&self) -> f64 {
        self.center_wavelength
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Spacing between adjacent points (the quadrature weight).
    pub fn step(&self) -> f64 {
        self.span / (self.points.len() - 1) as f64
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Detuning of each point from the center wavelength.
    pub fn detunings(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(move |p| p - self.center_wavelength)
    }

    /// Discrete L2 inner product `sum a b dw`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.step()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    fn check_covers(&self, envelope: &'static str, fwhm: f64) -> Result<()> {
        if !(fwhm > 0.0 && fwhm.is_finite()) {
            return Err(precondition(format!("{envelope} FWHM must be positive, got {fwhm}")));
        }
        let required_nm = SPAN_SIGMAS * sigma_from_fwhm(fwhm);
        if self.span < required_nm {
            return Err(Error::GridTooNarrow {
                envelope,
                span_nm: self.span,
                required_nm,
            });
        }
        Ok(())
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::new(DEFAULT_CENTER_NM, DEFAULT_SPAN_NM, DEFAULT_N_POINTS)
            .expect("default grid is valid")
    }
}

#[derive(Debug, Clone)]
pub struct JointSpectralKernel {
    grid: FrequencyGrid,
    matrix: DMatrix<f64>,
    pump_fwhm: f64,
    phasematch_fwhm: f64,
}

impl JointSpectralKernel {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Frobenius-normalized, symmetric kernel matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pump_fwhm(&self) -> f64 {
        self.pump_fwhm
    }

    pub fn phasematch_fwhm(&self) -> f64 {
        self.phasematch_fwhm
    }
}

pub fn build_kernel(
    grid: &FrequencyGrid,
    pump_fwhm: f64,
    phasematch_fwhm: f64,
) -> Result<JointSpectralKernel> {
    grid.check_covers("pump", pump_fwhm)?;
    grid.check_covers("phase-matching", phasematch_fwhm)?;

    let sp = sigma_from_fwhm(pump_fwhm);
    let sm = sigma_from_fwhm(phasematch_fwhm);
    let d: Vec<f64> = grid.detunings().collect();
    let n = d.len();

    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let sum = d[i] + d[j];
            let diff = d[i] - d[j];
            let v = (-sum * sum / (4.0 * sp * sp) - diff * diff / (4.0 * sm * sm)).exp();
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    // Entries this far below the peak cannot move the spectrum at double
    // precision, but long runs of them make the tridiagonal QR produce NaN.
    let floor = KERNEL_CLIP * matrix.amax();
    matrix.iter_mut().filter(|v| **v < floor).for_each(|v| *v = 0.0);
    let frob = matrix.norm();
    matrix /= frob;

    Ok(JointSpectralKernel {
        grid: grid.clone(),
        matrix,
        pump_fwhm,
        phasematch_fwhm,
    })
}

/// Orthonormal supermodes with their normalized gains.
#[derive(Debug, Clone)]
pub struct SupermodeBasis {
    grid: FrequencyGrid,
    modes: Vec<Vec<f64>>,
    gains: Vec<f64>,
    singular_values: Vec<f64>,
    cutoff: usize,
}

impl SupermodeBasis {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Mode amplitudes, unit norm under [`FrequencyGrid::inner`].
    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k]
    }

    /// Gains normalized so that the leading one is 1.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Full singular spectrum of the Frobenius-normalized kernel (all grid
    /// ranks), descending. Its squares sum to 1.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Number of stored modes.
    pub fn k_max(&self) -> usize {
        self.modes.len()
    }

    /// Highest mode index included in the squeezing sum.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Same basis with a different cutoff, clamped to the stored modes.
    pub fn with_cutoff(&self, cutoff: usize) -> Self {
        let mut b = self.clone();
        b.cutoff = cutoff.min(self.modes.len() - 1);
        b
    }

    /// FWHM (nm) of `|psi_k|^2`. With `envelope = false` the half-maximum
    /// region around the peak must be a single lobe.
    pub fn mode_fwhm(&self, k: usize, envelope: bool) -> Result<f64> {
        if k >= self.modes.len() {
            return Err(precondition(format!(
                "mode {k} requested but basis holds {} modes",
                self.modes.len()
            )));
        }
        let intensity: Vec<f64> = self.modes[k].iter().map(|v| v * v).collect();
        match profile_fwhm(self.grid.points(), &intensity, envelope) {
            Ok(w) => Ok(w),
            Err(FwhmError::MultiLobed) => Err(Error::IllDefinedFwhm { k }),
            Err(FwhmError::TouchesEdge) => Err(precondition(format!(
                "mode {k} does not fall below half maximum inside the grid"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwhmError {
    MultiLobed,
    TouchesEdge,
}

/// Full width at half maximum of a sampled non-negative profile, with linear
/// interpolation at the crossings.
///
/// In strict mode (`envelope = false`) the crossings nearest the peak are used
/// and any other sample above half maximum is an error. In envelope mode the
/// outermost crossings are used.
pub fn profile_fwhm(x: &[f64], y: &[f64], envelope: bool) -> std::result::Result<f64, FwhmError> {
    let (peak, ymax) = y
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let half = ymax / 2.0;

    let (lo, hi) = if envelope {
        let first = y.iter().position(|&v| v >= half).unwrap_or(peak);
        let last = y.iter().rposition(|&v| v >= half).unwrap_or(peak);
        (first, last)
    } else {
        let mut lo = peak;
        while lo > 0 && y[lo - 1] >= half {
            lo -= 1;
        }
        let mut hi = peak;
        while hi + 1 < y.len() && y[hi + 1] >= half {
            hi += 1;
        }
        let stray = y
            .iter()
            .enumerate()
            .any(|(i, &v)| (i < lo || i > hi) && v >= half);
        if stray {
            return Err(FwhmError::MultiLobed);
        }
        (lo, hi)
    };

    if lo == 0 || hi + 1 == y.len() {
        return Err(FwhmError::TouchesEdge);
    }
    let cross = |a: usize, b: usize| x[a] + (half - y[a]) / (y[b] - y[a]) * (x[b] - x[a]);
    Ok(cross(hi, hi + 1) - cross(lo - 1, lo))
}

/// Fix the arbitrary sign of a singular vector: the sample with the largest
/// magnitude is made positive. Ties (within 1e-9 relative, as for odd modes on
/// a symmetric grid) go to the lowest index.
pub(crate) fn fix_sign(mode: &mut [f64]) {
    let max = mode.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return;
    }
    let idx = mode
        .iter()
        .position(|v| v.abs() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    if mode[idx] < 0.0 {
        mode.iter_mut().for_each(|v| *v = -*v);
    }
}

fn cutoff_for(gains: &[f64], gain_floor: f64) -> usize {
    gains
        .iter()
        .rposition(|&g| g >= gain_floor)
        .unwrap_or(0)
}

/// Decompose the kernel into its top `k_max` supermodes.
///
/// The kernel is real symmetric, so its SVD is obtained from a symmetric
/// eigendecomposition: singular values are `|eigenvalue|` and the left
/// singular vectors are the eigenvectors.
pub fn decompose(
    kernel: &JointSpectralKernel,
    k_max: usize,
    gain_floor: f64,
) -> Result<SupermodeBasis> {
    let n = kernel.grid.n_points();
    if k_max == 0 {
        return Err(precondition("k_max must be at least 1"));
    }
    if k_max > n {
        return Err(Error::TooManyModes { k_max, n_points: n });
    }
    if !(0.0..1.0).contains(&gain_floor) {
        return Err(precondition(format!("gain_floor must lie in [0, 1), got {gain_floor}")));
    }

    let eig = SymmetricEigen::try_new(kernel.matrix.clone(), f64::EPSILON, 1000 * n)
        .ok_or(Error::NotConverged {
            residual: f64::INFINITY,
        })?;

    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotConverged {
            residual: f64::NAN,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));

    let singular_values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].abs()).collect();
    let top = singular_values[0];
    if top <= 0.0 {
        return Err(precondition("kernel is identically zero"));
    }

    let scale = kernel.grid.step().sqrt();
    let mut residual = 0.0f64;
    let mut modes = Vec::with_capacity(k_max);
    for &i in &order[..k_max] {
        let v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        let r = (&kernel.matrix * &v - &v * eig.eigenvalues[i]).norm();
        residual = residual.max(r);
        let mut mode: Vec<f64> = v.iter().map(|x| x / scale).collect();
        fix_sign(&mut mode);
        modes.push(mode);
    }
    if residual > 1e-10 {
        return Err(Error::NotConverged { residual });
    }

    let gains: Vec<f64> = singular_values[..k_max].iter().map(|s| s / top).collect();
    let cutoff = cutoff_for(&gains, gain_floor);

    Ok(SupermodeBasis {
        grid: kernel.grid.clone(),
        modes,
        gains,
        singular_values,
        cutoff,
    })
}

/// Closed-form Schmidt decomposition of the double-Gaussian kernel.
///
/// Writing the kernel as `exp(-(a+b)(x^2+y^2) - 2(a-b)xy)` with
/// `a = 1/(4 sp^2)` and `b = 1/(4 sm^2)`, compare with Mehler's formula for
/// normalized Hermite functions `phi_n`:
///
/// ```text
/// sum_n mu^n phi_n(x/w) phi_n(y/w)
///     = exp(-(1+mu^2)(x^2+y^2) / (2(1-mu^2)w^2) + 2 mu x y / ((1-mu^2)w^2)) / sqrt(pi(1-mu^2))
/// ```
///
/// Matching the quadratic and cross terms gives
/// `(1+mu^2)/(2 mu) = (a+b)/(b-a)`, whose root inside the unit disk is
/// `mu = (sqrt(b)-sqrt(a))/(sqrt(b)+sqrt(a)) = (sp - sm)/(sp + sm)`, and then
/// `w^2 = mu / ((1-mu^2)(b-a)) = sp sm`.
///
/// So the modes are Hermite-Gauss functions `phi_k(d/w)/sqrt(w)` with
/// `w = sqrt(sp sm)`, and the singular values fall off as `|mu|^k`. For odd
/// `k` with `mu < 0` the eigenvalue is negative; the singular value is its
/// magnitude. Frobenius normalization fixes the absolute scale:
/// `sum_k s_k^2 = 1` gives `s_k = |mu|^k sqrt(1 - mu^2)`.
///
/// The whole spectrum is returned in `singular_values` (one entry per grid
/// point), truncated analytically.
pub fn analytic_oracle(
    pump_fwhm: f64,
    phasematch_fwhm: f64,
    grid: &FrequencyGrid,
    k_max: usize,
) -> Result<SupermodeBasis> {
    grid.check_covers("pump", pump_fwhm)?;
    grid.check_covers("phase-matching", phasematch_fwhm)?;
    if k_max == 0 {
        return Err(precondition("k_max must be at least 1"));
    }
    if k_max > grid.n_points() {
        return Err(Error::TooManyModes {
            k_max,
            n_points: grid.n_points(),
        });
    }

    let sp = sigma_from_fwhm(pump_fwhm);
    let sm = sigma_from_fwhm(phasematch_fwhm);
    let mu = schmidt_ratio(pump_fwhm, phasematch_fwhm);
    let w = (sp * sm).sqrt();

    let mut modes: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.n_points()); k_max];
    for d in grid.detunings() {
        let t = d / w;
        // phi_{n+1} = sqrt(2/(n+1)) t phi_n - sqrt(n/(n+1)) phi_{n-1}
        let mut prev = 0.0;
        let mut cur = std::f64::consts::PI.powf(-0.25) * (-t * t / 2.0).exp();
        for (n, mode) in modes.iter_mut().enumerate() {
            mode.push(cur / w.sqrt());
            let nf = n as f64;
            let next = (2.0 / (nf + 1.0)).sqrt() * t * cur - (nf / (nf + 1.0)).sqrt() * prev;
            prev = cur;
            cur = next;
        }
    }
    for mode in &mut modes {
        fix_sign(mode);
    }

    let norm = (1.0 - mu * mu).sqrt();
    let singular_values: Vec<f64> = (0..grid.n_points())
        .map(|k| mu.powi(k as i32) * norm)
        .collect();
    let gains: Vec<f64> = (0..k_max).map(|k| mu.powi(k as i32)).collect();
    let cutoff = cutoff_for(&gains, DEFAULT_GAIN_FLOOR);

    Ok(SupermodeBasis {
        grid: grid.clone(),
        modes,
        gains,
        singular_values,
        cutoff,
    })
}

/// Geometric gain ratio `|mu| = |sm - sp| / (sm + sp)` of the double-Gaussian kernel.
pub fn schmidt_ratio(pump_fwhm: f64, phasematch_fwhm: f64) -> f64 {
    (phasematch_fwhm - pump_fwhm).abs() / (phasematch_fwhm + pump_fwhm)
}

/// Intensity FWHM of the fundamental Hermite-Gauss mode: `2 sqrt(ln 2) sqrt(sp sm)`.
pub fn analytic_fundamental_fwhm(pump_fwhm: f64, phasematch_fwhm: f64) -> f64 {
    let w = (sigma_from_fwhm(pump_fwhm) * sigma_from_fwhm(phasematch_fwhm)).sqrt();
    2.0 * std::f64::consts::LN_2.sqrt() * w
}


/// Dominant eigenvector of the kernel by power iteration, seeded with a
/// centred Gaussian whose intensity FWHM is `seed_fwhm`. Much cheaper than a
/// full decomposition when only the fundamental is needed.
fn dominant_mode(kernel: &JointSpectralKernel, seed_fwhm: f64) -> Result<Vec<f64>> {
    let grid = kernel.grid();
    let c = grid.center_wavelength();
    let a = 2.0 * std::f64::consts::LN_2 / (seed_fwhm * seed_fwhm);
    let mut diff = f64::INFINITY;
    let mut v = DVector::from_iterator(
        grid.n_points(),
        grid.points().iter().map(|x| (-a * (x - c) * (x - c)).exp()),
    );
    v /= v.norm();
    for _ in 0..20_000 {
        let mut next = kernel.matrix() * &v;
        let n = next.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NotConverged { residual: f64::NAN });
        }
        next /= n;
        diff = (&next - &v).norm();
        v = next;
        if diff < 1e-13 {
            let mut psi: Vec<f64> = v.iter().copied().collect();
            let norm = grid.norm(&psi);
            let peak = psi.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = peak.signum() / norm;
            psi.iter_mut().for_each(|x| *x *= sign);
            return Ok(psi);
        }
    }
    Err(Error::NotConverged { residual: diff })
}

/// Find the phase-matching FWHM for which the dominant eigenvector of the
/// discretized kernel has the requested intensity FWHM.
///
/// Secant iteration seeded by the closed-form relation
/// `sm = w^2 / sp`, `w = target / (2 sqrt(ln 2))`.
pub fn calibrate_phasematch(
    grid: &FrequencyGrid,
    pump_fwhm: f64,
    target_mode_fwhm: f64,
) -> Result<f64> {
    if !(target_mode_fwhm > 0.0) {
        return Err(precondition("target mode FWHM must be positive"));
    }
    let objective = |pm: f64| -> Result<f64> {
        let kernel = build_kernel(grid, pump_fwhm, pm)?;
        let seed_fwhm = analytic_fundamental_fwhm(pump_fwhm, pm);
        let psi = dominant_mode(&kernel, seed_fwhm)?;
        let intensity: Vec<f64> = psi.iter().map(|v| v * v).collect();
        profile_fwhm(grid.points(), &intensity, false).map_err(|_| {
            precondition(format!("fundamental mode FWHM undefined at phase-matching width {pm} nm"))
        })
        .map(|w| w - target_mode_fwhm)
    };

    let w = target_mode_fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
    let guess = w * w / sigma_from_fwhm(pump_fwhm) * FWHM_PER_SIGMA;

    let (mut x0, mut x1) = (guess, guess * 1.01);
    let (mut f0, mut f1) = (objective(x0)?, objective(x1)?);
    for _ in 0..30 {
        if f1.abs() < 1e-9 {
            return Ok(x1);
        }
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if !(x2 > 0.0) {
            break;
        }
        (x0, f0) = (x1, f1);
        x1 = x2;
        f1 = objective(x1)?;
    }
    if f1.abs() < 1e-6 {
        Ok(x1)
    } else {
        Err(precondition(format!(
            "phase-matching calibration did not reach {target_mode_fwhm} nm (off by {f1:.3e} nm)"
        )))
    }
}
