//! `upconv` — phase-matching design, gate propagation, HBT Monte
//! Carlo, and g² analysis for the pulsed-upconversion correlation
//! measurement.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/fit
//! error, 4 weak-signal regime violation. Failures print a
//! machine-readable JSON object on stderr.

mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use manifest::Manifest;
use upconv::analysis;
use upconv::csvio;
use upconv::dispersion::{
    qpm_curve, solve_qpm_pump, CrystalSpec, SellmeierModel, DEFAULT_PUMP_BRACKET_NM,
};
use upconv::experiment::ExperimentSpec;
use upconv::hbt;
use upconv::propagation::{
    self, fit_saturation, gate_response, propagate, sweep_pump_power, GridSpec, PropagateOptions,
    PulseSpec,
};
use upconv::{Error, Result};

#[derive(Parser)]
#[command(name = "upconv", version, about = "Picosecond photon-correlation measurement toolkit: QPM design, nonlinear gate simulation, HBT Monte Carlo, and g2 analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the QPM pump wavelength over a signal-wavelength range
    /// and tabulate the SFG wavelength (CSV)
    Qpm(QpmArgs),
    /// Run the three-wave gate propagation and export field envelopes
    /// and the instrument response
    Propagate(PropagateArgs),
    /// Sweep the average pump power: SFG energy and time resolution
    Sweep(SweepArgs),
    /// Fit the effective coupling to a measured saturation curve
    Calibrate(CalibrateArgs),
    /// Run an experiment JSON through the HBT Monte Carlo and export
    /// the recovered g²(Δt)
    Simulate(SimulateArgs),
    /// Analyze a g² CSV: peak fit, visibility, classical violation,
    /// resolution deconvolution, response convolution
    Analyze(AnalyzeArgs),
    /// Detection-efficiency budget
    Budget(BudgetArgs),
}

#[derive(Args)]
struct CrystalArgs {
    /// Poling period, µm
    #[arg(long, default_value_t = 3.96)]
    poling: f64,
    /// Crystal length, mm
    #[arg(long, default_value_t = 12.5)]
    length: f64,
    /// Crystal temperature, °C
    #[arg(long, default_value_t = 25.0)]
    temperature: f64,
    /// QPM order (odd)
    #[arg(long, default_value_t = 1)]
    order: u32,
    /// Effective coupling κ, W^(-1/2)·mm⁻¹ (default: calibrated value)
    #[arg(long)]
    kappa: Option<f64>,
    /// Sellmeier coefficient JSON (default: bundled MgO:CLN model)
    #[arg(long)]
    sellmeier: Option<PathBuf>,
}

impl CrystalArgs {
    fn crystal(&self) -> Result<CrystalSpec> {
        CrystalSpec::new(
            self.poling,
            self.length,
            self.temperature,
            self.kappa.unwrap_or(propagation::CALIBRATED_KAPPA),
            self.order,
        )
    }

    fn model(&self) -> Result<SellmeierModel> {
        match &self.sellmeier {
            None => Ok(SellmeierModel::default_mgo_cln().clone()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                SellmeierModel::from_json(&text)
            }
        }
    }
}

#[derive(Args)]
struct QpmArgs {
    /// Signal wavelength(s), nm: a value, a comma list, or start:stop:step
    #[arg(long)]
    signal: String,
    /// Pump bracket, nm, as lo:hi
    #[arg(long, default_value = "700:1300")]
    bracket: String,
    #[command(flatten)]
    crystal: CrystalArgs,
    /// Output CSV path
    #[arg(long, default_value = "qpm_curve.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PropagateArgs {
    /// Average pump power, mW
    #[arg(long, default_value_t = 1.5)]
    pump_power: f64,
    /// Signal wavelength, nm (pump wavelength is solved from QPM)
    #[arg(long, default_value_t = 812.0)]
    signal_wavelength: f64,
    /// CW signal power, µW
    #[arg(long, default_value_t = 1.0)]
    signal_power_uw: f64,
    /// Time window, ps
    #[arg(long, default_value_t = 81.92)]
    window: f64,
    /// Time samples (power of two)
    #[arg(long, default_value_t = 2048)]
    nt: usize,
    /// Propagation steps
    #[arg(long, default_value_t = 250)]
    nz: usize,
    /// Stored z checkpoints (including z=0 and z=L)
    #[arg(long, default_value_t = 64)]
    checkpoints: usize,
    /// Residual wave-vector mismatch override, rad/mm
    #[arg(long, default_value_t = 0.0)]
    delta_k: f64,
    #[command(flatten)]
    crystal: CrystalArgs,
    /// Output prefix: writes <prefix>_{pump,signal,sfg}.csv,
    /// <prefix>_meta.json, <prefix>_gate.csv
    #[arg(long, default_value = "fig2")]
    out_prefix: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Powers, mW: comma list or start:stop:count
    #[arg(long, default_value = "0.1:5:25")]
    powers: String,
    /// Geometric spacing for start:stop:count
    #[arg(long)]
    log: bool,
    /// Signal wavelength, nm
    #[arg(long, default_value_t = 812.0)]
    signal_wavelength: f64,
    /// CW signal power, µW
    #[arg(long, default_value_t = 1.0)]
    signal_power_uw: f64,
    #[command(flatten)]
    crystal: CrystalArgs,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Measured saturation curve CSV: power_mW,output
    #[arg(long)]
    measured: PathBuf,
    /// Initial κ guess, W^(-1/2)·mm⁻¹
    #[arg(long, default_value_t = 0.05)]
    initial_kappa: f64,
    /// Signal wavelength, nm
    #[arg(long, default_value_t = 812.0)]
    signal_wavelength: f64,
    #[command(flatten)]
    crystal: CrystalArgs,
    /// Output JSON path (also printed to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment JSON file (source + config)
    experiment: PathBuf,
    /// Output g² CSV
    #[arg(long, default_value = "g2.csv")]
    out: PathBuf,
    /// Also write the raw coincidence histogram
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// g² CSV (dt_ps,c,c_err,g2,g2_err); optional for --deconvolve
    input: Option<PathBuf>,
    /// Gaussian peak fit of the g² trace
    #[arg(long)]
    peak: bool,
    /// Oscillation visibility at this modulation frequency, GHz
    #[arg(long)]
    visibility: Option<f64>,
    /// Significance of the classical-inequality violation
    #[arg(long)]
    violation: bool,
    /// Mean g² over all bins and flatness
    #[arg(long)]
    mean: bool,
    /// Deconvolve: measured peak FWHM and pulse FWHM, ps
    #[arg(long, num_args = 2, value_names = ["MEASURED_PS", "PULSE_PS"])]
    deconvolve: Option<Vec<f64>>,
    /// Convolve the trace with a Gaussian response of this FWHM (ps)
    /// before analysis (conventional-detector comparison)
    #[arg(long)]
    convolve_response: Option<f64>,
    /// Where to write the convolved trace CSV
    #[arg(long)]
    convolved_out: Option<PathBuf>,
    /// Output JSON path (also printed to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Gate resolution FWHM, ps (duty-cycle factor)
    #[arg(long, default_value_t = 4.0)]
    resolution: f64,
    /// Pump repetition rate, MHz
    #[arg(long, default_value_t = 76.0)]
    rep_rate_mhz: f64,
    /// Additional multiplicative factors, name=value
    #[arg(long = "factor", value_name = "NAME=VALUE")]
    factors: Vec<String>,
    /// Use the documented default factor set
    #[arg(long)]
    default_factors: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(text: &str, what: &str) -> Result<Vec<f64>> {
    // "a:b:step" (step > 0) | "x,y,z" | "x"
    let bad = |m: &str| Error::Config(format!("{what}: {m} ('{text}')"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("not a number"))?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad("need stop >= start and step > 0"));
        }
        let n = ((stop - start) / step).round() as usize;
        if n > 1_000_000 {
            return Err(bad("too many points"));
        }
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect()
    }
}

fn parse_count_range(text: &str, log: bool, what: &str) -> Result<Vec<f64>> {
    // "a:b:count" | "x,y,z"
    let bad = |m: &str| Error::Config(format!("{what}: {m} ('{text}')"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:count"));
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad("not a number"))?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad("not a number"))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad("bad count"))?;
        if count < 2 || !(stop > start) {
            return Err(bad("need stop > start and count >= 2"));
        }
        if log && !(start > 0.0) {
            return Err(bad("log spacing needs start > 0"));
        }
        Ok((0..count)
            .map(|i| {
                let f = i as f64 / (count - 1) as f64;
                if log {
                    start * (stop / start).powf(f)
                } else {
                    start + (stop - start) * f
                }
            })
            .collect())
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect()
    }
}

fn parse_bracket(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("bracket: expected lo:hi, got '{text}'")));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config("bracket: not a number".into()))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config("bracket: not a number".into()))?;
    Ok((lo, hi))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Config(format!("cannot create {}: {e}", path.display()))
    })?))
}

fn emit_json(value: &serde_json::Value, out: &Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json: {e}")))?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_qpm(args: QpmArgs) -> Result<()> {
    let crystal = args.crystal.crystal()?;
    let model = args.crystal.model()?;
    let signals = parse_range(&args.signal, "--signal")?;
    let bracket = parse_bracket(&args.bracket)?;
    let curve = qpm_curve(&signals, &crystal, &model, bracket)?;
    let mut w = create(&args.out)?;
    csvio::write_qpm_curve(&mut w, &curve)?;
    drop(w);
    if !curve.gaps_nm.is_empty() {
        eprintln!(
            "warning: no QPM root at {} of {} signal wavelengths",
            curve.gaps_nm.len(),
            signals.len()
        );
    }
    let mut m = Manifest::new("qpm");
    if let Some(p) = &args.crystal.sellmeier {
        m.add_input(p)?;
    }
    m.add_output(&args.out);
    m.write()?;
    Ok(())
}

fn run_propagate(args: PropagateArgs) -> Result<()> {
    let crystal = args.crystal.crystal()?;
    let model = args.crystal.model()?;
    let pump_wl = solve_qpm_pump(
        args.signal_wavelength,
        &crystal,
        &model,
        DEFAULT_PUMP_BRACKET_NM,
    )?
    .lambda_pump_nm;
    let pump = PulseSpec::paper_pump(args.pump_power, pump_wl);
    let signal = PulseSpec::cw(args.signal_power_uw * 1e-3, args.signal_wavelength);
    let grid = GridSpec {
        time_window_ps: args.window,
        n_time: args.nt,
        n_z: args.nz,
    };
    let record = propagate(
        &crystal,
        &pump,
        &signal,
        &grid,
        &model,
        args.checkpoints,
        &PropagateOptions {
            delta_k_rad_per_mm: args.delta_k,
        },
    )?;
    let gate = gate_response(&record)?;

    let prefix = &args.out_prefix;
    let meta_path = PathBuf::from(format!("{prefix}_meta.json"));
    let gate_path = PathBuf::from(format!("{prefix}_gate.csv"));
    let mut m = Manifest::new("propagate");
    if let Some(p) = &args.crystal.sellmeier {
        m.add_input(p)?;
    }
    csvio::write_field_metadata(create(&meta_path)?, &record)?;
    m.add_output(&meta_path);
    for (name, wave) in [
        ("pump", &record.pump),
        ("signal", &record.signal),
        ("sfg", &record.sfg),
    ] {
        let path = PathBuf::from(format!("{prefix}_{name}.csv"));
        csvio::write_field_wave(create(&path)?, &record, wave)?;
        m.add_output(&path);
    }
    csvio::write_gate(create(&gate_path)?, &gate)?;
    m.add_output(&gate_path);
    m.write()?;
    println!(
        "{}",
        json!({
            "lambda_pump_nm": pump_wl,
            "lambda_sfg_nm": record.lambda_sfg_nm,
            "gate_fwhm_ps": gate.fwhm_ps,
            "gate_lobes": gate.lobes,
            "sfg_energy_pj": record.sfg_output_energy_pj(),
        })
    );
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let crystal = args.crystal.crystal()?;
    let model = args.crystal.model()?;
    let powers = parse_count_range(&args.powers, args.log, "--powers")?;
    let pump_wl = solve_qpm_pump(
        args.signal_wavelength,
        &crystal,
        &model,
        DEFAULT_PUMP_BRACKET_NM,
    )?
    .lambda_pump_nm;
    let signal = PulseSpec::cw(args.signal_power_uw * 1e-3, args.signal_wavelength);
    let sweep = sweep_pump_power(
        &powers,
        &crystal,
        &signal,
        &GridSpec::default(),
        &model,
        pump_wl,
    )?;
    let mut w = create(&args.out)?;
    csvio::write_sweep(&mut w, &sweep)?;
    drop(w);
    let mut m = Manifest::new("sweep");
    if let Some(p) = &args.crystal.sellmeier {
        m.add_input(p)?;
    }
    m.add_output(&args.out);
    m.write()?;
    if let Some((power, msg)) = &sweep.aborted {
        return Err(Error::SolverAccuracy(format!(
            "sweep aborted at {power} mW ({} rows written): {msg}",
            sweep.points.len()
        )));
    }
    Ok(())
}

fn run_calibrate(args: CalibrateArgs) -> Result<()> {
    let crystal = args.crystal.crystal()?;
    let model = args.crystal.model()?;
    let text = std::fs::read_to_string(&args.measured)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.measured.display())))?;
    let measured = csvio::read_measurement(&text)?;
    let pump_wl = solve_qpm_pump(
        args.signal_wavelength,
        &crystal,
        &model,
        DEFAULT_PUMP_BRACKET_NM,
    )?
    .lambda_pump_nm;
    let signal = PulseSpec::cw(1e-3, args.signal_wavelength);
    let fit = fit_saturation(
        &measured,
        args.initial_kappa,
        &crystal,
        &signal,
        &GridSpec::default(),
        &model,
        pump_wl,
    )?;
    let value = json!({
        "kappa": fit.kappa,
        "scale": fit.scale,
        "rms_relative_residual": fit.rms_relative_residual,
    });
    emit_json(&value, &args.out)?;
    if let Some(out) = &args.out {
        let mut m = Manifest::new("calibrate");
        m.add_input(&args.measured)?;
        m.add_output(out);
        m.write()?;
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.experiment)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.experiment.display())))?;
    let spec = ExperimentSpec::from_json(&text)?;
    let (source, cfg) = spec.resolve()?;
    let hist = hbt::simulate_coincidences(&source, &cfg)?;
    let normalized = hbt::normalize(&hist)?;
    let estimate = hbt::estimate_g2(&normalized)?;
    csvio::write_g2(create(&args.out)?, &estimate)?;
    let mut m = Manifest::new("simulate");
    m.rng_seed = Some(cfg.rng_seed);
    m.add_input(&args.experiment)?;
    m.add_output(&args.out);
    if let Some(hist_path) = &args.histogram {
        csvio::write_histogram(create(hist_path)?, &hist)?;
        m.add_output(hist_path);
    }
    m.write()?;
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let mut report = serde_json::Map::new();
    if let Some(d) = &args.deconvolve {
        let resolution = analysis::deconvolve_resolution(d[0], d[1])?;
        report.insert(
            "deconvolution".into(),
            json!({
                "measured_fwhm_ps": d[0],
                "pulse_fwhm_ps": d[1],
                "resolution_ps": resolution,
            }),
        );
    }
    let needs_input = args.peak || args.visibility.is_some() || args.violation || args.mean
        || args.convolve_response.is_some();
    if needs_input {
        let input = args.input.as_ref().ok_or_else(|| {
            Error::Config("this analysis needs a g² CSV input file".into())
        })?;
        let text = std::fs::read_to_string(input)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
        let estimate = csvio::read_g2(&text)?;
        let trace = csvio::g2_trace(&estimate);
        if args.peak {
            let fit = analysis::fit_gaussian_peak(&trace)?;
            report.insert("peak".into(), serde_json::to_value(&fit).unwrap());
        }
        if let Some(f_ghz) = args.visibility {
            let vis = analysis::visibility_of_estimate(&estimate, f_ghz)?;
            report.insert("visibility".into(), serde_json::to_value(&vis).unwrap());
        }
        if args.violation {
            let v = analysis::classical_violation(&estimate)?;
            report.insert("violation".into(), serde_json::to_value(v).unwrap());
        }
        if args.mean {
            let n = trace.len() as f64;
            let mean: f64 = trace.iter().map(|p| p.1).sum::<f64>() / n;
            let mean_err = trace.iter().map(|p| p.2 * p.2).sum::<f64>().sqrt() / n;
            let max_z = trace
                .iter()
                .map(|p| ((p.1 - mean) / p.2).abs())
                .fold(0.0f64, f64::max);
            report.insert(
                "mean".into(),
                json!({ "mean_g2": mean, "mean_err": mean_err, "max_abs_z": max_z }),
            );
        }
        if let Some(fwhm) = args.convolve_response {
            let xy: Vec<(f64, f64)> = trace.iter().map(|p| (p.0, p.1)).collect();
            let conv = analysis::convolve_response(&xy, fwhm)?;
            if let Some(path) = &args.convolved_out {
                let mut w = create(path)?;
                use std::io::Write;
                writeln!(w, "dt_ps,g2").map_err(|e| Error::Config(e.to_string()))?;
                for (x, y) in &conv {
                    writeln!(w, "{x},{y}").map_err(|e| Error::Config(e.to_string()))?;
                }
            }
            let conv_trace: Vec<(f64, f64, f64)> =
                conv.iter().zip(&trace).map(|(&(x, y), t)| (x, y, t.2)).collect();
            if let Some(f_ghz) = args.visibility {
                let vis = analysis::visibility(&conv_trace, f_ghz)?;
                report.insert(
                    "visibility_convolved".into(),
                    serde_json::to_value(&vis).unwrap(),
                );
            }
            report.insert("convolve_response_fwhm_ps".into(), json!(fwhm));
        }
    }
    if report.is_empty() {
        return Err(Error::Config(
            "nothing to do: pass --peak, --visibility, --violation, --mean, --deconvolve, or --convolve-response".into(),
        ));
    }
    emit_json(&serde_json::Value::Object(report), &args.out)?;
    Ok(())
}

fn run_budget(args: BudgetArgs) -> Result<()> {
    let budget = if args.default_factors {
        analysis::default_budget()?
    } else {
        let duty = analysis::gate_duty_cycle(args.resolution, args.rep_rate_mhz * 1e6)?;
        let mut factors = vec![("gate_duty_cycle".to_string(), duty)];
        for spec in &args.factors {
            let (name, value) = spec.split_once('=').ok_or_else(|| {
                Error::Config(format!("--factor expects name=value, got '{spec}'"))
            })?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("--factor {name}: bad value '{value}'")))?;
            factors.push((name.trim().to_string(), v));
        }
        analysis::efficiency_budget(&factors)?
    };
    let value = serde_json::to_value(&budget).unwrap();
    emit_json(&value, &args.out)?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Qpm(args) => run_qpm(args),
        Cmd::Propagate(args) => run_propagate(args),
        Cmd::Sweep(args) => run_sweep(args),
        Cmd::Calibrate(args) => run_calibrate(args),
        Cmd::Simulate(args) => run_simulate(args),
        Cmd::Analyze(args) => run_analyze(args),
        Cmd::Budget(args) => run_budget(args),
    };
    if let Err(e) = result {
        let code = e.exit_code();
        eprintln!(
            "{}",
            json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code } })
        );
        std::process::exit(code);
    }
}
