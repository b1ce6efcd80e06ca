//! Command-line front end. Every command reads an [`ExperimentConfig`],
//! writes its data files into the output directory and prints a short
//! summary on stdout.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::homodyne::{
    extract_extrema, moving_variance_with, shot_noise_trace, synthesize_trace, Normalization,
    WindowOptions,
};
use crate::squeezing::{
    detected_variance, infer_output_variance, per_mode_variances, project_lo, LOSpectrum,
    OperatingPoint, PumpSetting, ScanPoint, SqueezingModel,
};
use crate::state::{fit_squeezed_thermal_with, FitOptions, FitWeighting, VarianceCurve};
use crate::trace_file::{load_trace, save_trace, write_atomic, write_trace_csv};
use crate::units::db;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "spopo", version, about = "Multimode squeezing model and homodyne trace tools")]
pub struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override `acquisition.rng_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write a plotting script stub next to the data.
    #[arg(long, global = true)]
    pub plot_script: bool,
    /// Print full error chains and backtraces.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cavity and detection-efficiency table.
    Budget(BudgetArgs),
    /// Supermode gains, LO projections and per-mode variances.
    Modes(ModesArgs),
    /// Detected squeezing versus normalized pump power.
    ScanPump(ScanPumpArgs),
    /// Detected squeezing versus Gaussian LO width.
    ScanLo(ScanLoArgs),
    /// Write a simulated homodyne trace and its vacuum calibration trace.
    SimulateTrace(SimulateArgs),
    /// Recover the squeezed-thermal state from a trace.
    AnalyzeTrace(AnalyzeArgs),
    /// Print the effective config as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Output squeezing level mapped through the detection efficiency.
    #[arg(long, default_value_t = -5.7, allow_negative_numbers = true)]
    pub output_db: f64,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    /// Number of modes tabulated.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct ScanPumpArgs {
    #[arg(long, default_value_t = 0.0)]
    pub p_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_max: f64,
    #[arg(long, short, default_value_t = 26)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct ScanLoArgs {
    #[arg(long, default_value_t = 0.2)]
    pub w_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub w_max: f64,
    #[arg(long, short, default_value_t = 15)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Signal trace path; defaults to `<out-dir>/trace.trc`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Vacuum trace path; defaults to `<out-dir>/vacuum.trc`.
    #[arg(long)]
    pub vacuum_out: Option<PathBuf>,
    /// Also export the signal trace as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub vacuum: PathBuf,
    /// Fix the scan nonlinearity at zero instead of fitting it.
    #[arg(long)]
    pub no_fit_alpha: bool,
    /// Window stride in samples; non-overlapping windows by default.
    #[arg(long)]
    pub stride: Option<usize>,
}

/// Resolved settings shared by all commands.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub hash: String,
    pub out_dir: PathBuf,
    pub format: Format,
    pub plot_script: bool,
}

impl RunContext {
    pub fn from_cli(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.acquisition.rng_seed = seed;
        }
        let hash = config.hash();
        std::fs::create_dir_all(&cli.out_dir)
            .with_context(|| format!("creating {}", cli.out_dir.display()))?;
        Ok(Self {
            config,
            hash,
            out_dir: cli.out_dir.clone(),
            format: cli.format,
            plot_script: cli.plot_script,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn provenance(&self) -> String {
        format!("# spopo {VERSION} config={}", self.hash)
    }

    fn write_text(&self, path: &Path, text: &str) -> anyhow::Result<()> {
        write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
            .with_context(|| format!("writing {}", path.display()))
    }

    /// CSV with the provenance line, a header row and optional footer lines.
    fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
        footer: &[String],
    ) -> anyhow::Result<PathBuf> {
        let mut text = self.provenance();
        text.push('\n');
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        for line in footer {
            text.push_str(line);
            text.push('\n');
        }
        let path = self.path(name);
        self.write_text(&path, &text)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(&path, &text)?;
        Ok(path)
    }

    fn write_plot_script(&self, name: &str, body: &str) -> anyhow::Result<()> {
        if !self.plot_script {
            return Ok(());
        }
        let script = format!(
            "# generated by spopo {VERSION} config={}\n\
             import numpy as np\nimport matplotlib.pyplot as plt\n\n{body}\nplt.show()\n",
            self.hash
        );
        self.write_text(&self.path(name), &script)
    }
}

/// Shortest round-trip representation, in exponent form for very small or
/// large magnitudes.
fn f(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e9).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Command::ShowConfig = cli.command {
        let mut config = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.acquisition.rng_seed = seed;
        }
        print!("{}", config.to_toml());
        return Ok(());
    }
    let ctx = RunContext::from_cli(cli)?;
    match &cli.command {
        Command::Budget(a) => cmd_budget(&ctx, a),
        Command::Modes(a) => cmd_modes(&ctx, a),
        Command::ScanPump(a) => cmd_scan_pump(&ctx, a),
        Command::ScanLo(a) => cmd_scan_lo(&ctx, a),
        Command::SimulateTrace(a) => cmd_simulate_trace(&ctx, a),
        Command::AnalyzeTrace(a) => cmd_analyze_trace(&ctx, a),
        Command::ShowConfig => unreachable!(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    pub fsr_mhz: f64,
    pub round_trip_loss: f64,
    pub finesse: f64,
    pub bandwidth_mhz: f64,
    pub escape_efficiency: f64,
    pub model_intracavity_loss: f64,
    pub model_finesse: f64,
    pub model_bandwidth_mhz: f64,
    pub model_escape_efficiency: f64,
    pub eta_vis: f64,
    pub eta_hom: f64,
    pub gdd_residual_fs2: f64,
    pub output_db: f64,
    pub detected_db: f64,
}

pub fn budget_report(cfg: &ExperimentConfig, output_db: f64) -> crate::Result<BudgetReport> {
    let c = &cfg.cavity;
    let m = cfg.model_cavity()?;
    let eta = cfg.detection.total_efficiency();
    Ok(BudgetReport {
        fsr_mhz: c.free_spectral_range(),
        round_trip_loss: c.round_trip_loss(),
        finesse: c.finesse()?,
        bandwidth_mhz: c.bandwidth_fwhm()?,
        escape_efficiency: c.escape_efficiency()?,
        model_intracavity_loss: m.intracavity_loss,
        model_finesse: m.finesse()?,
        model_bandwidth_mhz: m.bandwidth_fwhm()?,
        model_escape_efficiency: m.escape_efficiency()?,
        eta_vis: cfg.detection.eta_vis(),
        eta_hom: eta,
        gdd_residual_fs2: c.gdd_residual(),
        output_db,
        detected_db: db(detected_variance(crate::units::db_inv(output_db), eta))?,
    })
}

fn cmd_budget(ctx: &RunContext, a: &BudgetArgs) -> anyhow::Result<()> {
    let r = budget_report(&ctx.config, a.output_db)?;
    match ctx.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&r)?),
        Format::Csv => {
            let value = serde_json::to_value(&r)?;
            let mut out = format!("{}\nquantity,value\n", ctx.provenance());
            if let serde_json::Value::Object(map) = value {
                for (k, v) in map {
                    let _ = writeln!(out, "{k},{v}");
                }
            }
            print!("{out}");
        }
    }
    Ok(())
}

struct ModeTables {
    gains: Vec<f64>,
    fwhm: Vec<Option<f64>>,
    widths: Vec<f64>,
    /// `weights[w][k]`
    weights: Vec<Vec<f64>>,
    variances_db: Vec<(f64, f64)>,
}

fn mode_tables(cfg: &ExperimentConfig, count: usize) -> anyhow::Result<ModeTables> {
    let basis = cfg.basis()?;
    if count == 0 || count > basis.cutoff() + 1 {
        bail!(
            "mode count {count} must lie in [1, {}] (modes above the gain floor)",
            basis.cutoff() + 1
        );
    }
    let grid = basis.grid().clone();
    let cavity = cfg.model_cavity()?;
    let per_mode = per_mode_variances(&basis, &cfg.pump, &cavity, cfg.model.analysis_freq_mhz)?;
    let mut weights = Vec::new();
    for &w in &cfg.lo.projection_widths_nm {
        let lo = LOSpectrum::gaussian(&grid, cfg.lo.center_nm, w)?;
        let proj = project_lo(&lo, &basis)?;
        weights.push(proj.weights[..count].to_vec());
    }
    Ok(ModeTables {
        gains: basis.gains()[..count].to_vec(),
        fwhm: (0..count).map(|k| basis.mode_fwhm(k, false).ok()).collect(),
        widths: cfg.lo.projection_widths_nm.clone(),
        weights,
        variances_db: per_mode[..count]
            .iter()
            .map(|p| Ok((db(p.squeezed)?, db(p.antisqueezed)?)))
            .collect::<crate::Result<_>>()?,
    })
}

fn cmd_modes(ctx: &RunContext, a: &ModesArgs) -> anyhow::Result<()> {
    let t = mode_tables(&ctx.config, a.count)?;
    let n = t.gains.len();
    let width_cols: Vec<String> = t.widths.iter().map(|w| format!("m2_{w}nm")).collect();
    match ctx.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..n)
                .map(|k| vec![k.to_string(), f(t.gains[k]), t.fwhm[k].map(f).unwrap_or_default()])
                .collect();
            ctx.write_csv("modes.csv", &["k", "gain", "fwhm_nm"], &rows, &[])?;

            let mut header = vec!["k"];
            header.extend(width_cols.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = (0..n)
                .map(|k| {
                    let mut row = vec![k.to_string()];
                    row.extend(t.weights.iter().map(|w| f(w[k])));
                    row
                })
                .collect();
            let sums: Vec<String> = t.weights.iter().map(|w| f(w.iter().sum())).collect();
            let footer = format!("# sum,{}", sums.join(","));
            ctx.write_csv("projections.csv", &header, &rows, &[footer])?;

            let rows: Vec<Vec<String>> = (0..n)
                .map(|k| vec![k.to_string(), f(t.variances_db[k].0), f(t.variances_db[k].1)])
                .collect();
            ctx.write_csv(
                "per_mode_variance.csv",
                &["k", "squeezed_db", "antisqueezed_db"],
                &rows,
                &[],
            )?;
        }
        Format::Json => {
            let projections: serde_json::Map<String, serde_json::Value> = width_cols
                .iter()
                .zip(&t.weights)
                .map(|(c, w)| (c.clone(), json!(w)))
                .collect();
            ctx.write_json(
                "modes.json",
                &json!({
                    "version": VERSION,
                    "config_hash": ctx.hash,
                    "gain": t.gains,
                    "fwhm_nm": t.fwhm,
                    "projections": projections,
                    "squeezed_db": t.variances_db.iter().map(|p| p.0).collect::<Vec<_>>(),
                    "antisqueezed_db": t.variances_db.iter().map(|p| p.1).collect::<Vec<_>>(),
                }),
            )?;
        }
    }
    ctx.write_plot_script(
        "plot_modes.py",
        "m = np.genfromtxt('modes.csv', delimiter=',', comments='#', names=True)\n\
         fig, ax = plt.subplots(1, 3, figsize=(12, 3.5))\n\
         ax[0].bar(m['k'], m['gain']); ax[0].set_xlabel('k'); ax[0].set_ylabel('gain')\n\
         p = np.genfromtxt('projections.csv', delimiter=',', comments='#', names=True)\n\
         for c in p.dtype.names[1:]:\n    ax[1].plot(p['k'], p[c], 'o-', label=c)\n\
         ax[1].legend(); ax[1].set_xlabel('k')\n\
         v = np.genfromtxt('per_mode_variance.csv', delimiter=',', comments='#', names=True)\n\
         ax[2].plot(v['k'], v['squeezed_db']); ax[2].plot(v['k'], v['antisqueezed_db'])\n\
         ax[2].set_xlabel('k'); ax[2].set_ylabel('dB')\n",
    )?;
    println!("{n} modes written to {}", ctx.out_dir.display());
    Ok(())
}

fn write_scan(ctx: &RunContext, stem: &str, x_name: &str, points: &[ScanPoint]) -> anyhow::Result<()> {
    match ctx.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|p| vec![f(p.x), f(p.squeezing_db), f(p.antisqueezing_db)])
                .collect();
            ctx.write_csv(&format!("{stem}.csv"), &[x_name, "squeezing_db", "antisqueezing_db"], &rows, &[])?;
        }
        Format::Json => {
            ctx.write_json(
                &format!("{stem}.json"),
                &json!({ "version": VERSION, "config_hash": ctx.hash, "x": x_name, "points": points }),
            )?;
        }
    }
    ctx.write_plot_script(
        &format!("plot_{stem}.py"),
        &format!(
            "d = np.genfromtxt('{stem}.csv', delimiter=',', comments='#', names=True)\n\
             plt.plot(d['{x_name}'], d['squeezing_db'], 'o-', label='squeezing')\n\
             plt.plot(d['{x_name}'], d['antisqueezing_db'], 's-', label='anti-squeezing')\n\
             plt.axhline(0, color='k', lw=0.5); plt.xlabel('{x_name}'); plt.ylabel('dB'); plt.legend()\n"
        ),
    )
}

fn operating_summary(op: &OperatingPoint, eta: f64) -> anyhow::Result<serde_json::Value> {
    let (det_sq, det_anti) = op.detected_db()?;
    let inferred_sq = db(infer_output_variance(op.detected.squeezed, eta)?)?;
    let inferred_anti = db(infer_output_variance(op.detected.antisqueezed, eta)?)?;
    Ok(json!({
        "detected_squeezing_db": det_sq,
        "detected_antisqueezing_db": det_anti,
        "output_squeezing_db": inferred_sq,
        "output_antisqueezing_db": inferred_anti,
    }))
}

pub const ANCHOR_PUMP: f64 = 0.3;

pub fn pump_scan(cfg: &ExperimentConfig, a: &ScanPumpArgs) -> anyhow::Result<(Vec<ScanPoint>, serde_json::Value)> {
    if !(a.p_min >= 0.0 && a.p_max < 1.0 && (a.p_min < a.p_max || (a.n == 1 && a.p_min <= a.p_max))) {
        bail!("pump range must satisfy 0 <= p_min < p_max < 1, got [{}, {}]", a.p_min, a.p_max);
    }
    if a.n == 0 {
        bail!("need at least one scan point");
    }
    let basis = cfg.basis()?;
    let cavity = cfg.model_cavity()?;
    let model = SqueezingModel {
        basis: &basis,
        cavity: &cavity,
        budget: &cfg.detection,
        analysis_freq_mhz: cfg.model.analysis_freq_mhz,
    };
    let lo = cfg.lo_spectrum(basis.grid())?;
    let threshold = cfg.pump.threshold_mw;
    let points = model.scan_pump(&linspace(a.p_min, a.p_max, a.n), threshold, &lo)?;
    let anchor = model.evaluate(&PumpSetting::from_normalized(ANCHOR_PUMP, threshold)?, &lo)?;
    let summary = json!({
        "version": VERSION,
        "lo_fwhm_nm": cfg.lo.fwhm_nm,
        "eta_hom": cfg.detection.total_efficiency(),
        "cutoff": basis.cutoff(),
        "anchor_pump": ANCHOR_PUMP,
        "anchor": operating_summary(&anchor, cfg.detection.total_efficiency())?,
        "points": points.len(),
    });
    Ok((points, summary))
}

fn cmd_scan_pump(ctx: &RunContext, a: &ScanPumpArgs) -> anyhow::Result<()> {
    let (points, mut summary) = pump_scan(&ctx.config, a)?;
    summary["config_hash"] = json!(ctx.hash);
    write_scan(ctx, "scan_pump", "pump", &points)?;
    ctx.write_json("scan_pump_summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary["anchor"])?);
    Ok(())
}

pub fn lo_scan(cfg: &ExperimentConfig, a: &ScanLoArgs) -> anyhow::Result<(Vec<ScanPoint>, serde_json::Value)> {
    if !(a.w_min > 0.0 && (a.w_min < a.w_max || (a.n == 1 && a.w_min <= a.w_max))) {
        bail!("LO width range must satisfy 0 < w_min < w_max, got [{}, {}]", a.w_min, a.w_max);
    }
    if a.n == 0 {
        bail!("need at least one scan point");
    }
    let basis = cfg.basis()?;
    let cavity = cfg.model_cavity()?;
    let model = SqueezingModel {
        basis: &basis,
        cavity: &cavity,
        budget: &cfg.detection,
        analysis_freq_mhz: cfg.model.analysis_freq_mhz,
    };
    let points = model.scan_lo_width(&linspace(a.w_min, a.w_max, a.n), cfg.lo.center_nm, &cfg.pump)?;
    let summary = json!({
        "version": VERSION,
        "pump": cfg.pump.normalized(),
        "eta_hom": cfg.detection.total_efficiency(),
        "cutoff": basis.cutoff(),
        "narrowest": points.first(),
        "widest": points.last(),
        "points": points.len(),
    });
    Ok((points, summary))
}

fn cmd_scan_lo(ctx: &RunContext, a: &ScanLoArgs) -> anyhow::Result<()> {
    let (points, mut summary) = lo_scan(&ctx.config, a)?;
    summary["config_hash"] = json!(ctx.hash);
    write_scan(ctx, "scan_lo", "lo_fwhm_nm", &points)?;
    ctx.write_json("scan_lo_summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_simulate_trace(ctx: &RunContext, a: &SimulateArgs) -> anyhow::Result<()> {
    let cfg = &ctx.config;
    let state = cfg.state()?;
    let scan = cfg.scan_model()?;
    let eta = cfg.detection.total_efficiency();
    let trace = synthesize_trace(|t| detected_variance(state.variance(t), eta), &scan, &cfg.acquisition)?;
    let vacuum = shot_noise_trace(&cfg.acquisition)?;

    let out = a.out.clone().unwrap_or_else(|| ctx.path("trace.trc"));
    let vac = a.vacuum_out.clone().unwrap_or_else(|| ctx.path("vacuum.trc"));
    save_trace(&trace, &out).with_context(|| format!("writing {}", out.display()))?;
    save_trace(&vacuum, &vac).with_context(|| format!("writing {}", vac.display()))?;
    if a.csv {
        let csv = out.with_extension("csv");
        write_atomic(&csv, |w| write_trace_csv(&trace, w))
            .with_context(|| format!("writing {}", csv.display()))?;
    }
    println!(
        "seed {} : {} samples -> {}, vacuum -> {}",
        cfg.acquisition.rng_seed,
        cfg.acquisition.n_samples,
        out.display(),
        vac.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub trace_seed: u64,
    pub windows: usize,
    pub eta_hom: f64,
    /// Extrema of the measured (shot-noise normalized) curve.
    pub detected_squeezing_db: Option<f64>,
    pub detected_antisqueezing_db: Option<f64>,
    /// Extrema of the fitted output state.
    pub squeezing_db: Option<f64>,
    pub antisqueezing_db: Option<f64>,
    pub n_th: Option<f64>,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
    pub theta0: Option<f64>,
    pub purity: Option<f64>,
    pub nonclassical_depth: Option<f64>,
    pub fit_residual: Option<f64>,
    pub error: Option<String>,
}

/// Analysis of a trace against its vacuum calibration, and the curves behind it.
pub struct Analysis {
    pub report: AnalysisReport,
    pub detected: VarianceCurve,
    pub output: Option<VarianceCurve>,
    pub fit: Option<crate::state::FitOutcome>,
}

pub fn analyze(
    cfg: &ExperimentConfig,
    trace_path: &Path,
    vacuum_path: &Path,
    fit_alpha: bool,
    stride: Option<usize>,
) -> anyhow::Result<Analysis> {
    let mut trace = load_trace(trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let vacuum = load_trace(vacuum_path).with_context(|| format!("reading {}", vacuum_path.display()))?;
    trace.shot_calibration = Some(vacuum.sample_stats().variance());
    let eta = cfg.detection.total_efficiency();

    let detected = moving_variance_with(
        &trace,
        &WindowOptions {
            stride,
            normalization: Normalization::Required,
        },
    )?;
    let extrema = extract_extrema(&detected)?;
    let mut report = AnalysisReport {
        trace_seed: trace.spec.rng_seed,
        windows: detected.len(),
        eta_hom: eta,
        detected_squeezing_db: Some(extrema.squeezing_db),
        detected_antisqueezing_db: Some(extrema.antisqueezing_db),
        squeezing_db: None,
        antisqueezing_db: None,
        n_th: None,
        r: None,
        alpha: None,
        theta0: None,
        purity: None,
        nonclassical_depth: None,
        fit_residual: None,
        error: None,
    };

    let output = (|| -> crate::Result<VarianceCurve> {
        let variances = detected
            .variances
            .iter()
            .map(|&v| infer_output_variance(v, eta))
            .collect::<crate::Result<Vec<_>>>()?;
        // inverse variance of each inferred point: 2 v_det^2 / (N eta^2)
        let n = trace.spec.window as f64;
        let weights = detected
            .variances
            .iter()
            .map(|v| n * eta * eta / (2.0 * v * v))
            .collect();
        VarianceCurve::new(detected.thetas.clone(), variances, Some(weights))
    })();
    let output = match output {
        Ok(c) => c,
        Err(e) => {
            report.error = Some(e.to_string());
            return Ok(Analysis {
                report,
                detected,
                output: None,
                fit: None,
            });
        }
    };

    let opts = FitOptions {
        fit_alpha,
        rate: 1.0,
        weighting: FitWeighting::Curve,
    };
    let fit = match fit_squeezed_thermal_with(&output, &opts) {
        Ok(fit) => fit,
        Err(e) => {
            report.error = Some(e.to_string());
            return Ok(Analysis {
                report,
                detected,
                output: Some(output),
                fit: None,
            });
        }
    };
    let s = fit.state;
    report.squeezing_db = Some(db(s.min_variance())?);
    report.antisqueezing_db = Some(db(s.max_variance())?);
    report.n_th = Some(s.n_th);
    report.r = Some(s.r);
    report.alpha = Some(fit.scan.alpha);
    report.theta0 = Some(fit.scan.theta0);
    report.purity = Some(s.purity());
    report.nonclassical_depth = Some(s.nonclassical_depth());
    report.fit_residual = Some(fit.residual);
    Ok(Analysis {
        report,
        detected,
        output: Some(output),
        fit: Some(fit),
    })
}

fn cmd_analyze_trace(ctx: &RunContext, a: &AnalyzeArgs) -> anyhow::Result<()> {
    let analysis = analyze(&ctx.config, &a.trace, &a.vacuum, !a.no_fit_alpha, a.stride)?;
    let report = &analysis.report;
    ctx.write_json("analysis.json", report)?;

    let d = &analysis.detected;
    let rows: Vec<Vec<String>> = (0..d.len())
        .map(|i| {
            let out = analysis.output.as_ref().map(|o| f(o.variances[i])).unwrap_or_default();
            let model = analysis
                .fit
                .map(|fit| f(fit.state.variance(fit.scan.phase(d.thetas[i]))))
                .unwrap_or_default();
            vec![f(d.thetas[i]), f(d.variances[i]), out, model]
        })
        .collect();
    ctx.write_csv(
        "variance_curve.csv",
        &["theta", "detected_variance", "output_variance", "fit_variance"],
        &rows,
        &[],
    )?;

    if let Some(fit) = analysis.fit {
        let half = 3.0 * fit.state.max_variance().sqrt();
        let grid = fit.state.wigner_grid(half, 101);
        let meta = json!({
            "version": VERSION,
            "config_hash": ctx.hash,
            "n_th": fit.state.n_th,
            "r": fit.state.r,
            "half_width": half,
            "n": grid.axis.len(),
        });
        let mut text = format!("# {meta}\nx,p,wigner\n");
        for (row, &p) in grid.values.iter().zip(&grid.axis) {
            for (w, &x) in row.iter().zip(&grid.axis) {
                let _ = writeln!(text, "{x},{p},{w}");
            }
        }
        ctx.write_text(&ctx.path("wigner.csv"), &text)?;
    }
    ctx.write_plot_script(
        "plot_analysis.py",
        "d = np.genfromtxt('variance_curve.csv', delimiter=',', comments='#', names=True)\n\
         fig, ax = plt.subplots(1, 2, figsize=(10, 4))\n\
         ax[0].plot(d['theta'], 10*np.log10(d['detected_variance']), '.', label='detected')\n\
         ax[0].plot(d['theta'], 10*np.log10(d['fit_variance']), '-', label='fit (output)')\n\
         ax[0].set_xlabel('scan phase (rad)'); ax[0].set_ylabel('dB'); ax[0].legend()\n\
         w = np.genfromtxt('wigner.csv', delimiter=',', comments='#', names=True)\n\
         n = int(round(np.sqrt(len(w))))\n\
         ax[1].contourf(w['x'].reshape(n, n), w['p'].reshape(n, n), w['wigner'].reshape(n, n), 30)\n\
         ax[1].set_aspect('equal')\n",
    )?;

    println!("{}", serde_json::to_string_pretty(report)?);
    if let Some(e) = &report.error {
        bail!("analysis incomplete: {e}");
    }
    Ok(())
}
