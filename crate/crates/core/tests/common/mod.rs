#![allow(dead_code)]

use spopo::supermode::{sigma_from_fwhm, FrequencyGrid, SupermodeBasis};

/// Grid wide enough for both envelopes and the first ~12 Hermite-Gauss
/// modes, with the step resolving the pump envelope.
pub fn oracle_grid(pump_fwhm: f64, pm_fwhm: f64) -> FrequencyGrid {
    let sp = sigma_from_fwhm(pump_fwhm);
    let sm = sigma_from_fwhm(pm_fwhm);
    let w = (sp * sm).sqrt();
    let span = (6.5 * sp.max(sm)).max(16.0 * w);
    let n = ((span / (sp.min(w) / 4.0)).ceil() as usize).clamp(256, 1024);
    FrequencyGrid::new(1035.0, span, n).unwrap()
}

/// L2 distance between mode `k` of two bases on the same grid.
pub fn mode_distance(a: &SupermodeBasis, b: &SupermodeBasis, k: usize) -> f64 {
    let d: Vec<f64> = a.mode(k).iter().zip(b.mode(k)).map(|(x, y)| x - y).collect();
    a.grid().norm(&d)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
