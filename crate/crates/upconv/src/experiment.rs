//! JSON experiment files: a [`SourceModel`] plus measurement settings,
//! with the gate either inlined or produced by the calibrated solver.
//!
//! ```json
//! {
//!   "source": { "type": "coherent_cw", "mean_rate": 0.08 },
//!   "config": {
//!     "rep_period_ns": 13.157894736842104,
//!     "n_periods": 20000000,
//!     "delays_ps": { "start": -20.0, "stop": 20.0, "step": 2.0 },
//!     "gate": { "kind": "calibrated", "pump_average_power_mw": 1.5 },
//!     "conversion_efficiency": 0.5,
//!     "path_transmission": 0.8,
//!     "detector_efficiency": 0.5,
//!     "rng_seed": 1
//!   }
//! }
//! ```
//!
//! `delays_ps` is either an explicit array or a {start, stop, step}
//! range; `gate` is `calibrated` (run the three-wave solver at the
//! stated pump power with the bundled crystal), `inline` (explicit
//! h(t) samples), or `gaussian` (synthetic response of a given FWHM).

use serde::{Deserialize, Serialize};

use crate::dispersion::{solve_qpm_pump, CrystalSpec, SellmeierModel, DEFAULT_PUMP_BRACKET_NM};
use crate::error::{Error, Result};
use crate::hbt::{MeasurementConfig, SourceModel};
use crate::propagation::{
    gate_response, propagate, GateResponse, GridSpec, PropagateOptions, PulseSpec,
};

/// Gate specification inside an experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateSpec {
    /// Run the calibrated three-wave solver: paper crystal, CW signal
    /// at `signal_wavelength_nm`, pump at the QPM point, given average
    /// power.
    Calibrated {
        pump_average_power_mw: f64,
        #[serde(default = "default_signal_wavelength")]
        signal_wavelength_nm: f64,
    },
    /// Explicit tabulated response.
    Inline {
        time_ps: Vec<f64>,
        h: Vec<f64>,
    },
    /// Synthetic Gaussian response (testing and what-if studies).
    Gaussian { fwhm_ps: f64 },
}

fn default_signal_wavelength() -> f64 {
    812.0
}

impl GateSpec {
    pub fn build(&self) -> Result<GateResponse> {
        match self {
            GateSpec::Calibrated {
                pump_average_power_mw,
                signal_wavelength_nm,
            } => {
                let model = SellmeierModel::default_mgo_cln();
                let crystal = CrystalSpec::paper_default();
                let pump_wl = solve_qpm_pump(
                    *signal_wavelength_nm,
                    &crystal,
                    model,
                    DEFAULT_PUMP_BRACKET_NM,
                )?
                .lambda_pump_nm;
                let pump = PulseSpec::paper_pump(*pump_average_power_mw, pump_wl);
                let signal = PulseSpec::cw(1e-3, *signal_wavelength_nm);
                let rec = propagate(
                    &crystal,
                    &pump,
                    &signal,
                    &GridSpec::default(),
                    model,
                    2,
                    &PropagateOptions::default(),
                )?;
                gate_response(&rec)
            }
            GateSpec::Inline { time_ps, h } => {
                if time_ps.len() != h.len() || time_ps.len() < 8 {
                    return Err(Error::Parse(
                        "inline gate: time_ps and h must have equal length >= 8".into(),
                    ));
                }
                let dt = time_ps[1] - time_ps[0];
                if !(dt > 0.0) || time_ps.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9) {
                    return Err(Error::Parse("inline gate: time grid must be uniform".into()));
                }
                if h.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Parse("inline gate: h must be finite and >= 0".into()));
                }
                let area: f64 = h.iter().sum::<f64>() * dt;
                if !(area > 0.0) {
                    return Err(Error::Parse("inline gate: zero area".into()));
                }
                let h: Vec<f64> = h.iter().map(|v| v / area).collect();
                let (fwhm_ps, lobes) = crate::propagation::fwhm_outer(time_ps, &h)
                    .ok_or_else(|| Error::Parse("inline gate: no maximum".into()))?;
                Ok(GateResponse {
                    time_ps: time_ps.clone(),
                    h,
                    fwhm_ps,
                    lobes,
                })
            }
            GateSpec::Gaussian { fwhm_ps } => {
                if !(*fwhm_ps > 0.0) || !fwhm_ps.is_finite() {
                    return Err(Error::Parse("gaussian gate: fwhm must be positive".into()));
                }
                let dt = 0.04;
                let half = (4.0 * fwhm_ps / dt).ceil() as i64;
                let time_ps: Vec<f64> = (-half..=half).map(|i| i as f64 * dt).collect();
                let k = 4.0 * std::f64::consts::LN_2 / (fwhm_ps * fwhm_ps);
                let mut h: Vec<f64> = time_ps.iter().map(|&t| (-k * t * t).exp()).collect();
                let area: f64 = h.iter().sum::<f64>() * dt;
                h.iter_mut().for_each(|v| *v /= area);
                let (fwhm, lobes) = crate::propagation::fwhm_outer(&time_ps, &h).unwrap();
                Ok(GateResponse {
                    time_ps,
                    h,
                    fwhm_ps: fwhm,
                    lobes,
                })
            }
        }
    }
}

/// Delay list: explicit values or a uniform range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelaySpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl DelaySpec {
    pub fn expand(&self) -> Result<Vec<f64>> {
        match self {
            DelaySpec::List(v) => {
                if v.is_empty() {
                    return Err(Error::Parse("empty delay list".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Parse("non-finite delay".into()));
                }
                Ok(v.clone())
            }
            DelaySpec::Range { start, stop, step } => {
                if !(step > &0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
                    return Err(Error::Parse(format!(
                        "bad delay range {start}:{stop}:{step}"
                    )));
                }
                let n = ((stop - start) / step).round() as usize;
                if n > 100_000 {
                    return Err(Error::Parse("delay range too long".into()));
                }
                Ok((0..=n).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

/// Measurement settings as written in the experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSpec {
    #[serde(default = "default_rep_period_ns")]
    pub rep_period_ns: f64,
    pub n_periods: u64,
    pub delays_ps: DelaySpec,
    pub gate: GateSpec,
    pub conversion_efficiency: f64,
    pub path_transmission: f64,
    pub detector_efficiency: f64,
    #[serde(default = "default_splitter")]
    pub splitter_ratio: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub dark_count_rate: f64,
}

fn default_rep_period_ns() -> f64 {
    1.0 / (crate::propagation::REP_RATE_HZ * 1e-9) // 13.158 ns at 76 MHz
}

fn default_splitter() -> f64 {
    0.5
}

/// A full experiment: source plus measurement configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: SourceModel,
    pub config: ConfigSpec,
}

impl ExperimentSpec {
    /// Parse and statically validate an experiment file (no solver
    /// runs; `resolve` does the heavy lifting).
    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("experiment json: {e}")))?;
        spec.source.validate()?;
        spec.config.delays_ps.expand()?;
        if let GateSpec::Inline { .. } | GateSpec::Gaussian { .. } = spec.config.gate {
            spec.config.gate.build()?;
        }
        Ok(spec)
    }

    /// Build the concrete measurement configuration (runs the solver
    /// for calibrated gates).
    pub fn resolve(&self) -> Result<(SourceModel, MeasurementConfig)> {
        let gate = self.config.gate.build()?;
        let cfg = MeasurementConfig {
            rep_period_ns: self.config.rep_period_ns,
            n_periods: self.config.n_periods,
            delays_ps: self.config.delays_ps.expand()?,
            gate,
            conversion_efficiency: self.config.conversion_efficiency,
            path_transmission: self.config.path_transmission,
            detector_efficiency: self.config.detector_efficiency,
            splitter_ratio: self.config.splitter_ratio,
            rng_seed: self.config.rng_seed,
            dark_count_rate: self.config.dark_count_rate,
        };
        cfg.validate()?;
        Ok((self.source.clone(), cfg))
    }
}
