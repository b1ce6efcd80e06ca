//! Synthetic phase-scanned homodyne traces and their moving-window variance
//! estimation.
//!
//! The detector band (hundreds of kHz) is about three orders of magnitude
//! faster than the phase scan, so each sample is drawn as independent white
//! Gaussian noise whose variance follows the slowly scanned quadrature phase.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::state::{PhaseScanModel, VarianceCurve};
use crate::stats::RunningStats;
use crate::units::db;

/// Samples per independently seeded RNG substream.
pub const CHUNK_LEN: usize = 1 << 16;

/// Stream-id bit separating vacuum-calibration traces from signal traces.
const VACUUM_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSpec {
    /// Samples per second.
    pub sample_rate: f64,
    pub n_samples: usize,
    /// Nominal phase swept over the whole trace (rad).
    pub scan_span: f64,
    /// Moving-variance window length in samples.
    pub window: usize,
    pub rng_seed: u64,
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(precondition(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if self.window < 2 {
            return Err(precondition(format!("window must hold at least 2 samples, got {}", self.window)));
        }
        if self.n_samples < self.window {
            return Err(precondition(format!(
                "trace of {} samples is shorter than the {}-sample window",
                self.n_samples, self.window
            )));
        }
        if !(self.scan_span > 0.0 && self.scan_span.is_finite()) {
            return Err(precondition(format!("scan span must be positive, got {}", self.scan_span)));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }

    /// Phase-scan model matching this acquisition's sweep.
    pub fn scan(&self, theta0: f64, alpha: f64) -> Result<PhaseScanModel> {
        PhaseScanModel::new(theta0, self.scan_span, alpha)
    }
}

impl Default for AcquisitionSpec {
    /// 2e6 samples at 20 MSa/s (100 ms) over one 2 pi sweep, 2e4-sample windows.
    fn default() -> Self {
        Self {
            sample_rate: 20e6,
            n_samples: 2_000_000,
            scan_span: std::f64::consts::TAU,
            window: 20_000,
            rng_seed: 20_251_017,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneTrace {
    pub spec: AcquisitionSpec,
    pub theta0: f64,
    pub alpha: f64,
    pub samples: Vec<f32>,
    /// Variance of a companion vacuum trace, raw units squared.
    pub shot_calibration: Option<f64>,
}

impl HomodyneTrace {
    pub fn scan(&self) -> PhaseScanModel {
        PhaseScanModel {
            theta0: self.theta0,
            rate: self.spec.scan_span,
            alpha: self.alpha,
        }
    }

    pub fn sample_stats(&self) -> RunningStats {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fill<F>(samples: &mut [f32], seed: u64, stream_base: u64, std_at: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    samples
        .par_chunks_mut(CHUNK_LEN)
        .enumerate()
        .for_each(|(c, chunk)| {
            let mut rng = chunk_rng(seed, stream_base | c as u64);
            let start = c * CHUNK_LEN;
            for (j, s) in chunk.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *s = (std_at(start + j) * z) as f32;
            }
        });
}

/// Draw a trace whose sample `i` has variance `state_model(phase_i)`, with
/// `phase_i = scan.phase(i / n)`. The sweep rate of `scan` must equal the
/// acquisition's `scan_span`. Output is identical for a given seed regardless
/// of thread count.
pub fn synthesize_trace<F>(
    state_model: F,
    scan: &PhaseScanModel,
    spec: &AcquisitionSpec,
) -> Result<HomodyneTrace>
where
    F: Fn(f64) -> f64 + Sync,
{
    spec.validate()?;
    if scan.rate != spec.scan_span {
        return Err(precondition(format!(
            "scan rate {} does not match the acquisition span {}",
            scan.rate, spec.scan_span
        )));
    }
    let n = spec.n_samples as f64;
    let mut samples = vec![0f32; spec.n_samples];
    let bad = std::sync::atomic::AtomicBool::new(false);
    fill(&mut samples, spec.rng_seed, 0, |i| {
        let v = state_model(scan.phase(i as f64 / n));
        if !(v > 0.0) {
            bad.store(true, std::sync::atomic::Ordering::Relaxed);
            return 0.0;
        }
        v.sqrt()
    });
    if bad.into_inner() {
        return Err(precondition("state model returned a non-positive variance over the scan"));
    }
    Ok(HomodyneTrace {
        spec: *spec,
        theta0: scan.theta0,
        alpha: scan.alpha,
        samples,
        shot_calibration: None,
    })
}

/// Unit-variance vacuum trace on its own RNG stream; its whole-trace variance
/// is stored as the shot calibration.
pub fn shot_noise_trace(spec: &AcquisitionSpec) -> Result<HomodyneTrace> {
    spec.validate()?;
    let mut samples = vec![0f32; spec.n_samples];
    fill(&mut samples, spec.rng_seed, VACUUM_STREAM, |_| 1.0);
    let mut trace = HomodyneTrace {
        spec: *spec,
        theta0: 0.0,
        alpha: 0.0,
        samples,
        shot_calibration: None,
    };
    trace.shot_calibration = Some(trace.sample_stats().variance());
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the shot calibration when the trace carries one.
    #[default]
    IfAvailable,
    Required,
    Raw,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WindowOptions {
    /// Step between window starts; `None` means non-overlapping windows.
    pub stride: Option<usize>,
    pub normalization: Normalization,
}

pub fn moving_variance(trace: &HomodyneTrace) -> Result<VarianceCurve> {
    moving_variance_with(trace, &WindowOptions::default())
}

/// Variance of each window, labelled with the nominal scan position of the
/// window center (rad, before offset and distortion).
pub fn moving_variance_with(trace: &HomodyneTrace, opts: &WindowOptions) -> Result<VarianceCurve> {
    let spec = &trace.spec;
    let window = spec.window;
    if window < 2 || window > trace.samples.len() {
        return Err(precondition(format!(
            "window {window} must lie in [2, {}]",
            trace.samples.len()
        )));
    }
    let stride = opts.stride.unwrap_or(window);
    if stride == 0 {
        return Err(precondition("stride must be positive"));
    }
    let scale = match (opts.normalization, trace.shot_calibration) {
        (Normalization::Raw, _) | (Normalization::IfAvailable, None) => 1.0,
        (_, Some(shot)) if shot > 0.0 => 1.0 / shot,
        (_, Some(shot)) => return Err(Error::NonPositiveVariance(shot)),
        (Normalization::Required, None) => return Err(Error::MissingShotCalibration),
    };

    let n = trace.samples.len() as f64;
    let (thetas, variances): (Vec<f64>, Vec<f64>) = (0..=trace.samples.len() - window)
        .step_by(stride)
        .map(|start| {
            let stats: RunningStats = trace.samples[start..start + window]
                .iter()
                .map(|&s| s as f64)
                .collect();
            let center = start as f64 + (window as f64 - 1.0) / 2.0;
            (spec.scan_span * center / n, stats.variance() * scale)
        })
        .unzip();

    // constant windows give zero variance, which a VarianceCurve does not admit
    Ok(VarianceCurve {
        thetas,
        variances,
        weights: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrema {
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
    pub theta_min: f64,
}

/// Minimum and maximum of a variance curve in dB. A three-point median
/// locates each extremum without being pulled by single outliers; the value
/// comes from a parabola through the raw samples around it, since the median
/// alone clips a smooth peak.
pub fn extract_extrema(curve: &VarianceCurve) -> Result<Extrema> {
    let n = curve.len();
    if n < 3 {
        return Err(precondition("curve needs at least 3 points"));
    }
    let span = curve.span();
    if span < std::f64::consts::PI * (1.0 - 1e-9) {
        return Err(Error::SpanTooShort { span });
    }

    let y = &curve.variances;
    let mut smooth = y.clone();
    for i in 1..n - 1 {
        let mut w = [y[i - 1], y[i], y[i + 1]];
        w.sort_by(f64::total_cmp);
        smooth[i] = w[1];
    }

    let imin = (0..n).min_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap_or(0);
    let imax = (0..n).max_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap_or(0);
    // the median flattens a peak into a plateau, so step to the raw extremum
    let neighbours = |i: usize| i.saturating_sub(1)..=(i + 1).min(n - 1);
    let imin = neighbours(imin).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(imin);
    let imax = neighbours(imax).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(imax);
    let (vmin, tmin) = refine(&curve.thetas, y, imin);
    let (vmax, _) = refine(&curve.thetas, y, imax);

    Ok(Extrema {
        squeezing_db: db(vmin)?,
        antisqueezing_db: db(vmax)?,
        theta_min: tmin,
    })
}

/// Vertex of the parabola through `(i-1, i, i+1)`; endpoints are returned as is.
fn refine(x: &[f64], y: &[f64], i: usize) -> (f64, f64) {
    if i == 0 || i + 1 == y.len() {
        return (y[i], x[i]);
    }
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom == 0.0 {
        return (y1, x[i]);
    }
    // offset in units of the (assumed uniform) local spacing
    let u = 0.5 * (y0 - y2) / denom;
    if u.abs() > 1.0 {
        return (y1, x[i]);
    }
    let value = y1 - 0.25 * (y0 - y2) * u;
    let h = if u >= 0.0 { x[i + 1] - x[i] } else { x[i] - x[i - 1] };
    (value, x[i] + u * h)
}
