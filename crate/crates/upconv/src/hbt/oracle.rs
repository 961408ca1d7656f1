//! Brute-force classical-intensity oracle for the HBT simulator.
//!
//! For classical sources (coherent, modulated, pulsed) the light is
//! fully described by an intensity trace I(t); detectors are
//! independent Poisson samplers of η·∫gate·I. This module builds the
//! traces explicitly and counts clicks from them, with none of the
//! analytically integrated probabilities the production sampler uses,
//! so the two paths cross-validate each other bin by bin.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::propagation::{PulseShape, SECH2_FWHM_PER_TAU0};

use super::{
    accumulate_chunk, substream, CoincidenceHistogram, DelayBin, MeasurementConfig, SourceModel,
    CHUNK_PERIODS,
};

/// Normalized intensity trace: samples of Ī(t) with long-time mean 1.
#[derive(Debug, Clone)]
pub struct IntensityTrace {
    pub dt_ps: f64,
    pub samples: Vec<f64>,
}

impl IntensityTrace {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Time-averaged ⟨I(t)I(t+τ)⟩ / ⟨I⟩² at a lag in samples.
    pub fn autocorrelation(&self, lag: usize) -> f64 {
        let n = self.samples.len() - lag;
        let num: f64 = (0..n)
            .map(|i| self.samples[i] * self.samples[i + lag])
            .sum::<f64>()
            / n as f64;
        let mean = self.mean();
        num / (mean * mean)
    }
}

fn pulse_profile(shape: PulseShape, fwhm_ps: f64, u: f64) -> f64 {
    match shape {
        PulseShape::Sech2 => {
            let tau0 = fwhm_ps / SECH2_FWHM_PER_TAU0;
            let c = (u / tau0).cosh();
            1.0 / (2.0 * tau0 * c * c)
        }
        PulseShape::Gaussian => {
            let k = 4.0 * std::f64::consts::LN_2;
            (k / std::f64::consts::PI).sqrt() / fwhm_ps * (-k * u * u / (fwhm_ps * fwhm_ps)).exp()
        }
        PulseShape::Cw => 0.0,
    }
}

/// Explicit intensity trace of a classical source over `duration_ns`,
/// sampled every `dt_ps`. The pump period structure (per-period random
/// modulation phase / pulse arrival) uses [`REP period`] of 1/76 MHz
/// via the caller-visible convention that one period spans
/// `rep_period_ps`; here the trace uses the same period for its
/// per-period draws.
pub fn oracle_intensity_trace(
    source: &SourceModel,
    duration_ns: f64,
    dt_ps: f64,
    seed: u64,
    rep_period_ps: f64,
) -> Result<IntensityTrace> {
    source.validate()?;
    if !(duration_ns > 0.0) || !(dt_ps > 0.0) {
        return Err(Error::Config("duration and dt must be positive".into()));
    }
    let n = (duration_ns * 1e3 / dt_ps).ceil() as usize;
    let mut rng = substream(seed, usize::MAX, u64::MAX);
    let samples = match source {
        SourceModel::CoherentCw { .. } => vec![1.0; n],
        SourceModel::ModulatedCw {
            depth,
            frequency_ghz,
            phase_random,
            ..
        } => {
            let omega = std::f64::consts::TAU * frequency_ghz * 1e-3;
            let mut phi = 0.0;
            let mut period_index = u64::MAX;
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt_ps;
                    let k = (t / rep_period_ps) as u64;
                    if k != period_index {
                        period_index = k;
                        phi = if *phase_random {
                            rng.gen::<f64>() * std::f64::consts::TAU
                        } else {
                            (omega * rep_period_ps * k as f64) % std::f64::consts::TAU
                        };
                    }
                    let local = t - k as f64 * rep_period_ps;
                    1.0 + depth * (omega * local + phi).cos()
                })
                .collect()
        }
        SourceModel::PulsedCoherent {
            pulse_fwhm_ps,
            shape,
            rep_incommensurate,
            ..
        } => {
            // one pulse per period at a per-period offset; normalized so
            // the period average is 1
            let n_periods = (n as f64 * dt_ps / rep_period_ps).ceil() as u64 + 1;
            let offsets: Vec<f64> = (0..n_periods)
                .map(|_| {
                    if *rep_incommensurate {
                        rng.gen::<f64>() * rep_period_ps
                    } else {
                        0.0
                    }
                })
                .collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt_ps;
                    let k = (t / rep_period_ps) as usize;
                    // neighboring periods can reach into this sample
                    let mut v = 0.0;
                    for kk in k.saturating_sub(1)..=(k + 1).min(offsets.len() - 1) {
                        let center = kk as f64 * rep_period_ps + offsets[kk];
                        v += pulse_profile(*shape, *pulse_fwhm_ps, t - center);
                    }
                    v * rep_period_ps
                })
                .collect()
        }
        SourceModel::AnalyticG2 { .. } => {
            return Err(Error::UnsupportedOracle(
                "analytic_g2 sources have no classical intensity trace".into(),
            ))
        }
    };
    Ok(IntensityTrace {
        dt_ps,
        samples,
    })
}

/// Brute-force HBT simulation: per period, build the intensity over
/// the gate supports, Riemann-integrate the detector rates, and draw
/// Poisson-threshold clicks. Same chunking and accumulation as the
/// production path, so histograms are directly comparable.
///
/// `eval_dt_ps` is the Riemann grid (delays must be multiples of it).
pub fn simulate_coincidences_via_trace(
    source: &SourceModel,
    cfg: &MeasurementConfig,
    eval_dt_ps: f64,
) -> Result<CoincidenceHistogram> {
    source.validate()?;
    cfg.validate()?;
    if matches!(source, SourceModel::AnalyticG2 { .. }) {
        return Err(Error::UnsupportedOracle(
            "analytic_g2 sources have no classical intensity trace".into(),
        ));
    }
    let t_ps = cfg.rep_period_ps();
    // resample the gate onto the oracle grid
    let gate = &cfg.gate;
    let g_dt = gate.dt_ps();
    let t0 = gate.time_ps[0];
    let t1 = gate.time_ps[gate.time_ps.len() - 1];
    let m = ((t1 - t0) / eval_dt_ps).floor() as usize;
    let h_at = |t: f64| -> f64 {
        let j = (t - t0) / g_dt;
        if j < 0.0 || j >= (gate.h.len() - 1) as f64 {
            return 0.0;
        }
        let j0 = j.floor() as usize;
        let frac = j - j0 as f64;
        gate.h[j0] * (1.0 - frac) + gate.h[j0 + 1] * frac
    };
    let h_coarse: Vec<f64> = (0..=m).map(|j| h_at(t0 + j as f64 * eval_dt_ps)).collect();
    let h_max = h_coarse.iter().cloned().fold(0.0, f64::max);
    let eta_a = cfg.eta_a();
    let eta_b = cfg.eta_b();

    let n_chunks = cfg.n_periods.div_ceil(CHUNK_PERIODS);
    let bins: Result<Vec<DelayBin>> = cfg
        .delays_ps
        .par_iter()
        .enumerate()
        .map(|(di, &delay)| {
            let shift = (delay / eval_dt_ps).round() as i64;
            if (delay / eval_dt_ps - shift as f64).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "oracle delay {delay} ps not a multiple of the evaluation grid {eval_dt_ps} ps"
                )));
            }
            // combined two-gate profile on the oracle grid
            let lo = 0.min(shift);
            let hi = m as i64 + 0.max(shift);
            let n_tot = (hi - lo + 1) as usize;
            let h_tot: Vec<f64> = (0..n_tot)
                .map(|j| {
                    let idx = j as i64 + lo;
                    let a = if (0..=m as i64).contains(&idx) {
                        h_coarse[idx as usize]
                    } else {
                        0.0
                    };
                    let b_idx = idx - shift;
                    let b = if (0..=m as i64).contains(&b_idx) {
                        h_coarse[b_idx as usize]
                    } else {
                        0.0
                    };
                    a + b
                })
                .collect();
            let window_t0 = t0 + lo as f64 * eval_dt_ps;

            let bin = (0..n_chunks)
                .into_par_iter()
                .map(|ci| {
                    let mut rng = substream(cfg.rng_seed, di, ci);
                    let first = ci * CHUNK_PERIODS;
                    let count = CHUNK_PERIODS.min(cfg.n_periods - first);
                    let mut partial = DelayBin::empty(delay);
                    let click = |global_period: u64, rng: &mut ChaCha8Rng| -> (bool, bool) {
                        // detector rates from the explicit intensity
                        let lambda_unit: f64 = match source {
                            SourceModel::CoherentCw { mean_rate } => {
                                // flat Ī = 1
                                mean_rate
                                    * h_tot.iter().sum::<f64>()
                                    * eval_dt_ps
                            }
                            SourceModel::ModulatedCw {
                                mean_rate,
                                depth,
                                frequency_ghz,
                                phase_random,
                            } => {
                                let omega = std::f64::consts::TAU * frequency_ghz * 1e-3;
                                let phi = if *phase_random {
                                    rng.gen::<f64>() * std::f64::consts::TAU
                                } else {
                                    (omega * t_ps * global_period as f64)
                                        % std::f64::consts::TAU
                                };
                                let mut acc = 0.0;
                                for (j, &hv) in h_tot.iter().enumerate() {
                                    if hv == 0.0 {
                                        continue;
                                    }
                                    let t = window_t0 + j as f64 * eval_dt_ps;
                                    acc += hv * (1.0 + depth * (omega * t + phi).cos());
                                }
                                mean_rate * acc * eval_dt_ps
                            }
                            SourceModel::PulsedCoherent {
                                pulse_fwhm_ps,
                                shape,
                                mean_photons_per_pulse,
                                rep_incommensurate,
                            } => {
                                // pulse center uniform over the period,
                                // mapped near the gates
                                let x = if *rep_incommensurate {
                                    let u = rng.gen::<f64>() * t_ps;
                                    // wrap into a window centered on the gates
                                    if u > t_ps / 2.0 { u - t_ps } else { u }
                                } else {
                                    0.0
                                };
                                let span = window_t0..(window_t0 + (h_tot.len() - 1) as f64 * eval_dt_ps);
                                let reach = 4.0 * pulse_fwhm_ps;
                                if x + reach < span.start || x - reach > span.end {
                                    0.0
                                } else {
                                    let mut acc = 0.0;
                                    for (j, &hv) in h_tot.iter().enumerate() {
                                        if hv == 0.0 {
                                            continue;
                                        }
                                        let t = window_t0 + j as f64 * eval_dt_ps;
                                        acc += hv * pulse_profile(*shape, *pulse_fwhm_ps, t - x);
                                    }
                                    // per-photon conversion relative to the gate peak
                                    mean_photons_per_pulse * acc * eval_dt_ps / h_max
                                }
                            }
                            SourceModel::AnalyticG2 { .. } => unreachable!(),
                        };
                        let a = rng.gen::<f64>() < -(-eta_a * lambda_unit).exp_m1();
                        let b = rng.gen::<f64>() < -(-eta_b * lambda_unit).exp_m1();
                        (a, b)
                    };
                    accumulate_chunk(&mut partial, &mut rng, first, count, cfg.dark_count_rate, click);
                    partial
                })
                .reduce(
                    || DelayBin::empty(delay),
                    |mut acc, p| {
                        acc.coincidences += p.coincidences;
                        for i in 0..10 {
                            acc.accidentals[i] += p.accidentals[i];
                        }
                        acc.singles_a += p.singles_a;
                        acc.singles_b += p.singles_b;
                        acc
                    },
                );
            Ok(bin)
        })
        .collect();
    Ok(CoincidenceHistogram {
        bins: bins?,
        n_periods: cfg.n_periods,
    })
}
