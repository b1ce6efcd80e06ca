//! Acceptance criteria, one test each. Every test prints a single
//! `AC<n> PASS|FAIL ...` line to stderr (bypassing output capture) and then
//! asserts the criterion, including its runtime limit.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{mode_distance, oracle_grid};
use spopo::cli::{analyze, budget_report, lo_scan, pump_scan, ScanLoArgs, ScanPumpArgs};
use spopo::config::ExperimentConfig;
use spopo::homodyne::{moving_variance_with, shot_noise_trace, synthesize_trace, Normalization, WindowOptions};
use spopo::squeezing::{
    detected_variance, per_mode_variances, project_lo, LOSpectrum, PumpSetting, SqueezingModel,
};
use spopo::state::SqueezedThermalState;
use spopo::stats::RunningStats;
use spopo::supermode::{analytic_oracle, build_kernel, calibrate_phasematch, decompose, SupermodeBasis};
use spopo::trace_file::save_trace;
use spopo::units::db;

fn shared() -> &'static (ExperimentConfig, SupermodeBasis) {
    static CELL: OnceLock<(ExperimentConfig, SupermodeBasis)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let basis = cfg.basis().expect("default decomposition");
        (cfg, basis)
    })
}

fn verdict(id: &str, what: &str, ok: bool, detail: String, elapsed: Duration, limit: Duration) {
    let in_time = elapsed < limit;
    let pass = ok && in_time;
    let line = format!(
        "{id} {} {what}: {detail} [{:.2} s, limit {} s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{id}: {detail}");
    assert!(in_time, "{id}: took {elapsed:?}, limit {limit:?}");
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

#[test]
fn ac01_efficiency_budget() {
    let t = Instant::now();
    let r = budget_report(&ExperimentConfig::default(), -5.7).unwrap();
    let ok = within(r.eta_hom, 0.742, 0.002) && within(r.detected_db, -3.3, 0.1);
    verdict(
        "AC1",
        "efficiency budget",
        ok,
        format!("eta_hom = {:.5}, -5.7 dB output -> {:.3} dB detected", r.eta_hom, r.detected_db),
        t.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn ac02_cavity_numbers() {
    let t = Instant::now();
    let r = budget_report(&ExperimentConfig::default(), -5.7).unwrap();
    let ok = within(r.fsr_mhz, 92.8, 0.1)
        && within(r.finesse, 24.0, 0.5)
        && within(r.bandwidth_mhz, 3.9, 0.1)
        && r.gdd_residual_fs2 == 0.0;
    verdict(
        "AC2",
        "cavity numbers",
        ok,
        format!(
            "FSR = {:.3} MHz (93 MHz rep. rate), F = {:.2}, bandwidth = {:.3} MHz, GDD residual = {} fs^2",
            r.fsr_mhz, r.finesse, r.bandwidth_mhz, r.gdd_residual_fs2
        ),
        t.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn ac03_squeezed_thermal_anchor() {
    let t = Instant::now();
    let s = SqueezedThermalState::new(0.20, 0.83).unwrap();
    let v0 = db(s.variance(0.0)).unwrap();
    let ok = within(v0, -5.74, 0.01)
        && within(s.purity(), 0.714, 0.005)
        && within(s.nonclassical_depth(), 0.37, 0.005);
    verdict(
        "AC3",
        "squeezed-thermal anchor",
        ok,
        format!(
            "V(0) = {v0:.4} dB, purity = {:.4}, depth = {:.4}",
            s.purity(),
            s.nonclassical_depth()
        ),
        t.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn ac04_oracle_equivalence() {
    let t = Instant::now();
    let mut worst_gain = 0.0f64;
    let mut worst_mode = 0.0f64;
    let ratios = [1.5, 2.5, 5.0, 10.0, 20.0];
    for ratio in ratios {
        let grid = oracle_grid(1.0, ratio);
        let num = decompose(&build_kernel(&grid, 1.0, ratio).unwrap(), 11, 0.0).unwrap();
        let ana = analytic_oracle(1.0, ratio, &grid, 11).unwrap();
        for k in 0..=10 {
            worst_gain = worst_gain.max((num.gains()[k] - ana.gains()[k]).abs() / ana.gains()[k]);
            worst_mode = worst_mode.max(mode_distance(&num, &ana, k));
        }
    }
    verdict(
        "AC4",
        "supermode oracle equivalence",
        worst_gain < 1e-6 && worst_mode < 1e-4,
        format!(
            "width ratios {ratios:?}, k <= 10: worst gain rel. err {worst_gain:.2e}, worst mode L2 {worst_mode:.2e}"
        ),
        t.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn ac05_calibration() {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid().unwrap();
    let pm = calibrate_phasematch(&grid, 1.0, 4.4).unwrap();
    let basis = decompose(&build_kernel(&grid, 1.0, pm).unwrap(), 1, 0.0).unwrap();
    let fwhm = basis.mode_fwhm(0, false).unwrap();
    let (_, shared_basis) = shared();
    let frozen = shared_basis.mode_fwhm(0, false).unwrap();
    verdict(
        "AC5",
        "kernel calibration",
        within(fwhm, 4.4, 0.05) && within(frozen, 4.4, 0.05),
        format!(
            "phase-matching FWHM {pm:.4} nm -> fundamental FWHM {fwhm:.4} nm; config value {} nm -> {frozen:.4} nm",
            cfg.model.phasematch_fwhm_nm
        ),
        t.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn ac06_pump_scan_shape() {
    let t = Instant::now();
    let (cfg, _) = shared();
    let args = ScanPumpArgs {
        p_min: 0.0,
        p_max: 0.5,
        n: 26,
    };
    let (points, summary) = pump_scan(cfg, &args).unwrap();
    let sq_down = points.windows(2).all(|w| w[1].squeezing_db < w[0].squeezing_db);
    let anti_up = points.windows(2).all(|w| w[1].antisqueezing_db > w[0].antisqueezing_db);
    let dominated = points.iter().all(|p| p.antisqueezing_db.abs() >= p.squeezing_db.abs());
    let at_03 = points
        .iter()
        .find(|p| (p.x - 0.3).abs() < 1e-9)
        .expect("P = 0.3 on the scan grid");
    let anchor = summary["anchor"]["detected_squeezing_db"].as_f64().unwrap();
    let ok = sq_down && anti_up && dominated && within(at_03.squeezing_db, -3.3, 0.2) && within(anchor, -3.3, 0.2);
    verdict(
        "AC6",
        "pump scan shape",
        ok,
        format!(
            "squeezing decreasing: {sq_down}, anti-squeezing increasing: {anti_up}, |anti| >= |sq|: {dominated}, \
             P = 0.3 -> {:.3} / {:+.3} dB detected",
            at_03.squeezing_db, at_03.antisqueezing_db
        ),
        t.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn ac07_lo_scan_shape() {
    let t = Instant::now();
    let (cfg, _) = shared();
    let args = ScanLoArgs {
        w_min: 0.2,
        w_max: 3.0,
        n: 15,
    };
    let (points, _) = lo_scan(cfg, &args).unwrap();
    // as the width shrinks both curves move toward 0 dB
    let sq_mono = points.windows(2).all(|w| w[0].squeezing_db > w[1].squeezing_db);
    let anti_mono = points.windows(2).all(|w| w[0].antisqueezing_db < w[1].antisqueezing_db);
    let first = points[0];
    let near_vacuum = first.squeezing_db.abs() <= 0.1 && first.antisqueezing_db.abs() <= 0.1;
    verdict(
        "AC7",
        "LO-bandwidth scan shape",
        sq_mono && anti_mono && near_vacuum,
        format!(
            "monotone toward 0 dB: {}, at 0.2 nm: {:.3} / {:+.3} dB (needs |.| <= 0.1), at 3.0 nm: {:.3} / {:+.3} dB",
            sq_mono && anti_mono,
            first.squeezing_db,
            first.antisqueezing_db,
            points[points.len() - 1].squeezing_db,
            points[points.len() - 1].antisqueezing_db
        ),
        t.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn ac08_trace_round_trip() {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let state = cfg.state().unwrap();
    let eta = cfg.detection.total_efficiency();
    let trace = synthesize_trace(
        |th| detected_variance(state.variance(th), eta),
        &cfg.scan_model().unwrap(),
        &cfg.acquisition,
    )
    .unwrap();
    let vacuum = shot_noise_trace(&cfg.acquisition).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (tp, vp) = (dir.path().join("trace.trc"), dir.path().join("vacuum.trc"));
    save_trace(&trace, &tp).unwrap();
    save_trace(&vacuum, &vp).unwrap();

    let report = analyze(&cfg, &tp, &vp, true, None).unwrap().report;
    let model_min = db(state.min_variance()).unwrap();
    let n_th = report.n_th.unwrap_or(f64::NAN);
    let r = report.r.unwrap_or(f64::NAN);
    let alpha = report.alpha.unwrap_or(f64::NAN);
    let sq = report.squeezing_db.unwrap_or(f64::NAN);
    let det_sq = report.detected_squeezing_db.unwrap_or(f64::NAN);
    let model_det = db(detected_variance(state.min_variance(), eta)).unwrap();
    let ok = within(n_th, 0.20, 0.02)
        && within(r, 0.83, 0.02)
        && within(alpha, cfg.scan.alpha, 1e-3)
        && within(sq, model_min, 0.2)
        && within(det_sq, model_det, 0.2);
    verdict(
        "AC8",
        "trace round trip",
        ok,
        format!(
            "n_th = {n_th:.4}, r = {r:.4}, alpha = {alpha:.5}, squeezing {sq:.3} dB (model {model_min:.3}), \
             detected {det_sq:.3} dB (model {model_det:.3})"
        ),
        t.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn ac09_statistical_sanity() {
    let t = Instant::now();
    let spec = ExperimentConfig::default().acquisition;
    let vacuum = shot_noise_trace(&spec).unwrap();
    let var = vacuum.sample_stats().variance();
    let curve = moving_variance_with(
        &vacuum,
        &WindowOptions {
            stride: None,
            normalization: Normalization::Raw,
        },
    )
    .unwrap();
    let scatter: RunningStats = curve.variances.iter().copied().collect();
    let expect = (2.0 / spec.window as f64).sqrt();
    let ok = within(var, 1.0, 0.003) && within(scatter.std_dev() / expect, 1.0, 0.25);
    verdict(
        "AC9",
        "statistical sanity",
        ok,
        format!(
            "vacuum variance {var:.5} over {} samples, window scatter sd {:.4} (expected {expect:.4})",
            spec.n_samples,
            scatter.std_dev()
        ),
        t.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn ac10_invariants() {
    let t = Instant::now();
    let (cfg, basis) = shared();
    let cavity = cfg.model_cavity().unwrap();
    let grid = basis.grid();

    let mut max_weight = 0.0f64;
    for w in [0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
        for center in [cfg.lo.center_nm, cfg.lo.center_nm + 4.0] {
            let lo = LOSpectrum::gaussian(grid, center, w).unwrap();
            max_weight = max_weight.max(project_lo(&lo, basis).unwrap().total_weight());
        }
    }

    let mut min_product = f64::INFINITY;
    for p in [0.0, 0.1, 0.3, 0.5, 0.9, 0.99] {
        let pump = PumpSetting::from_normalized(p, cfg.pump.threshold_mw).unwrap();
        for f in [0.0, 0.5, 5.0] {
            for pair in per_mode_variances(basis, &pump, &cavity, f).unwrap() {
                min_product = min_product.min(pair.squeezed * pair.antisqueezed);
            }
        }
    }

    let eta = cfg.detection.total_efficiency();
    let contracts = [0.05, 0.27, 0.5, 0.99, 1.0, 1.01, 3.0, 20.0]
        .iter()
        .all(|&v| (detected_variance(v, eta) - 1.0).abs() <= (v - 1.0).abs());
    let fixed = detected_variance(1.0, eta) == 1.0;

    let model_at = |k0: usize| {
        let b = basis.with_cutoff(k0);
        let model = SqueezingModel {
            basis: &b,
            cavity: &cavity,
            budget: &cfg.detection,
            analysis_freq_mhz: cfg.model.analysis_freq_mhz,
        };
        let lo = cfg.lo_spectrum(grid).unwrap();
        model.evaluate(&cfg.pump, &lo).unwrap().detected_db().unwrap()
    };
    let (a40, b40) = model_at(40);
    let (a80, b80) = model_at(80);
    let drift = (a40 - a80).abs().max((b40 - b80).abs());

    let ok = max_weight <= 1.0 + 1e-12 && min_product >= 1.0 - 1e-12 && contracts && fixed && drift < 0.01;
    verdict(
        "AC10",
        "invariant suites",
        ok,
        format!(
            "max sum |M_k|^2 = {max_weight:.12}, min uncertainty product = {min_product:.6}, \
             contraction: {contracts}, vacuum fixed point: {fixed}, cutoff 40 -> 80 drift = {drift:.2e} dB"
        ),
        t.elapsed(),
        Duration::from_secs(60),
    );
}
