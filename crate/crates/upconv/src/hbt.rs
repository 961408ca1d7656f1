//! Monte Carlo simulation of the gated-upconversion Hanbury Brown–Twiss
//! measurement, and the exact histogram normalization / g² inversion.
//!
//! Each pump period carries two gates separated by the scan delay Δt.
//! Upconverted photons split on a beamsplitter onto two detectors; the
//! same-period coincidence rate C(Δt) is normalized by the mean
//! cross-period accidental rate,
//!
//! ```text
//! c(Δt) = C(Δt) / ⟨C(Δt + nT)⟩_{n≠0},     g²(Δt) = 2c(Δt) − c(0),
//! ```
//!
//! because C(Δt) mixes equal same-pulse and different-pulse pair
//! channels: c(Δt) = ½(g²(Δt) + g²(0)) after gate convolution.
//!
//! Sampling runs per period at the click level: the measurement
//! operates far below one click per period, where detection is fully
//! described by per-period click probabilities. For classical sources
//! the intensity realization is drawn per period (modulation phase,
//! pulse arrival) and the two detectors fire independently given the
//! intensity; for `analytic_g2` sources the correlated pair
//! probability is sampled jointly. The brute-force intensity-trace
//! oracle in [`oracle`] guards the whole construction.

pub mod oracle;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{GateResponse, PulseShape, SECH2_FWHM_PER_TAU0};

/// Periods per RNG substream chunk. Accidental pairs are counted
/// within chunks only, so chunked parallel execution is bit-identical
/// to the sequential run by construction.
pub const CHUNK_PERIODS: u64 = 1 << 16;

/// Singles probability above which the weak-signal estimator is
/// considered biased.
pub const REGIME_MAX_SINGLES: f64 = 0.1;

/// Accidental lags, in pump periods (n ≠ 0).
pub const ACCIDENTAL_LAGS: [i64; 10] = [-5, -4, -3, -2, -1, 1, 2, 3, 4, 5];

/// Parametric g²(τ) curve for `analytic_g2` sources; g²(∞) = 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum G2Curve {
    /// g²(τ) ≡ value (1 = coherent).
    Constant { value: f64 },
    /// g²(τ) = 1 + b·e^(−|τ|/τ_b) − a·e^(−|τ|/τ_a): an antibunched dip
    /// of amplitude `a` inside a slower bunching shoulder `b`.
    ExponentialMix {
        bunching_amplitude: f64,
        bunching_tau_ps: f64,
        antibunching_amplitude: f64,
        antibunching_tau_ps: f64,
    },
}

/// Polariton-like defaults: g²(0) = 0.94 and max g² = 1.08 solved for
/// (a, b) at τ_a = 10 ps, τ_b = 35 ps. Antibunching is confined below
/// ~20 ps while the bunching shoulder persists past 50 ps.
pub const POLARITON_ANTIBUNCH_AMPLITUDE: f64 = 0.264_865_090;
pub const POLARITON_BUNCH_AMPLITUDE: f64 = 0.204_865_090;
pub const POLARITON_ANTIBUNCH_TAU_PS: f64 = 10.0;
pub const POLARITON_BUNCH_TAU_PS: f64 = 35.0;

impl G2Curve {
    pub fn polariton_default() -> G2Curve {
        G2Curve::ExponentialMix {
            bunching_amplitude: POLARITON_BUNCH_AMPLITUDE,
            bunching_tau_ps: POLARITON_BUNCH_TAU_PS,
            antibunching_amplitude: POLARITON_ANTIBUNCH_AMPLITUDE,
            antibunching_tau_ps: POLARITON_ANTIBUNCH_TAU_PS,
        }
    }

    pub fn value(&self, tau_ps: f64) -> f64 {
        match *self {
            G2Curve::Constant { value } => value,
            G2Curve::ExponentialMix {
                bunching_amplitude: b,
                bunching_tau_ps: tb,
                antibunching_amplitude: a,
                antibunching_tau_ps: ta,
            } => 1.0 + b * (-tau_ps.abs() / tb).exp() - a * (-tau_ps.abs() / ta).exp(),
        }
    }

    /// Delay beyond which |g² − 1| < 1e-4; cross-period gates are
    /// treated as uncorrelated past this horizon.
    pub fn correlation_horizon_ps(&self) -> f64 {
        const EPS: f64 = 1e-4;
        match *self {
            G2Curve::Constant { .. } => 0.0,
            G2Curve::ExponentialMix {
                bunching_amplitude: b,
                bunching_tau_ps: tb,
                antibunching_amplitude: a,
                antibunching_tau_ps: ta,
            } => {
                let hb = if b.abs() > EPS { tb * (b.abs() / EPS).ln() } else { 0.0 };
                let ha = if a.abs() > EPS { ta * (a.abs() / EPS).ln() } else { 0.0 };
                hb.max(ha)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            G2Curve::Constant { value } => {
                if !(value >= 0.0) {
                    return Err(Error::Config(format!("g2 curve must be >= 0, got {value}")));
                }
            }
            G2Curve::ExponentialMix {
                bunching_amplitude: b,
                bunching_tau_ps: tb,
                antibunching_amplitude: a,
                antibunching_tau_ps: ta,
            } => {
                if !(tb > 0.0) || !(ta > 0.0) {
                    return Err(Error::Config("g2 curve time constants must be positive".into()));
                }
                // sample the curve for nonnegativity
                let horizon = self.correlation_horizon_ps().max(1.0);
                for i in 0..=2000 {
                    let tau = horizon * i as f64 / 2000.0;
                    if self.value(tau) < 0.0 {
                        return Err(Error::Config(format!(
                            "g2 curve dips below zero at {tau:.2} ps (a={a}, b={b}, ta={ta}, tb={tb})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Statistical model of the input light.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceModel {
    /// Coherent CW light: g² ≡ 1. `mean_rate` is mean photons per gate.
    CoherentCw { mean_rate: f64 },
    /// CW light intensity-modulated at `frequency_ghz`:
    /// Ī(t) = 1 + depth·cos(2πft + φ). With `phase_random` the phase is
    /// redrawn uniformly each pump period (incommensurate modulation);
    /// otherwise it advances coherently, φ_k = 2πfT·k.
    ModulatedCw {
        mean_rate: f64,
        depth: f64,
        frequency_ghz: f64,
        #[serde(default = "default_true")]
        phase_random: bool,
    },
    /// Pulse train of coherent pulses. With `rep_incommensurate` the
    /// pulse arrival is uniform in the pump period each period.
    PulsedCoherent {
        pulse_fwhm_ps: f64,
        shape: PulseShape,
        mean_photons_per_pulse: f64,
        #[serde(default = "default_true")]
        rep_incommensurate: bool,
    },
    /// Stationary source described by its two-time correlation g²(τ).
    AnalyticG2 { mean_rate: f64, g2: G2Curve },
}

fn default_true() -> bool {
    true
}

impl SourceModel {
    /// The polariton-like source behind the antibunching scenario.
    pub fn polariton(mean_rate: f64) -> SourceModel {
        SourceModel::AnalyticG2 {
            mean_rate,
            g2: G2Curve::polariton_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceModel::CoherentCw { mean_rate } => {
                if !(*mean_rate >= 0.0) {
                    return Err(Error::Config("mean_rate must be >= 0".into()));
                }
            }
            SourceModel::ModulatedCw { mean_rate, depth, frequency_ghz, .. } => {
                if !(*mean_rate >= 0.0) {
                    return Err(Error::Config("mean_rate must be >= 0".into()));
                }
                if !(0.0..=1.0).contains(depth) {
                    return Err(Error::Config(format!(
                        "modulation depth must be in [0, 1], got {depth}"
                    )));
                }
                if !(*frequency_ghz > 0.0) {
                    return Err(Error::Config("modulation frequency must be positive".into()));
                }
            }
            SourceModel::PulsedCoherent { pulse_fwhm_ps, mean_photons_per_pulse, shape, .. } => {
                if !(*pulse_fwhm_ps > 0.0) {
                    return Err(Error::Config("pulse_fwhm_ps must be positive".into()));
                }
                if !(*mean_photons_per_pulse >= 0.0) {
                    return Err(Error::Config("mean_photons_per_pulse must be >= 0".into()));
                }
                if *shape == PulseShape::Cw {
                    return Err(Error::Config("pulsed source cannot have cw shape".into()));
                }
            }
            SourceModel::AnalyticG2 { mean_rate, g2 } => {
                if !(*mean_rate >= 0.0) {
                    return Err(Error::Config("mean_rate must be >= 0".into()));
                }
                g2.validate()?;
            }
        }
        Ok(())
    }
}

/// Full measurement configuration: timing, statistics, efficiencies,
/// the gate response, and the RNG seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementConfig {
    pub rep_period_ns: f64,
    pub n_periods: u64,
    pub delays_ps: Vec<f64>,
    pub gate: GateResponse,
    pub conversion_efficiency: f64,
    pub path_transmission: f64,
    pub detector_efficiency: f64,
    #[serde(default = "default_splitter")]
    pub splitter_ratio: f64,
    pub rng_seed: u64,
    /// Dark-count probability per detector per period (default 0).
    #[serde(default)]
    pub dark_count_rate: f64,
}

fn default_splitter() -> f64 {
    0.5
}

impl MeasurementConfig {
    pub fn rep_period_ps(&self) -> f64 {
        self.rep_period_ns * 1e3
    }

    /// Detector-level efficiencies (splitter included).
    pub fn eta_a(&self) -> f64 {
        self.conversion_efficiency
            * self.path_transmission
            * self.detector_efficiency
            * self.splitter_ratio
    }

    pub fn eta_b(&self) -> f64 {
        self.conversion_efficiency
            * self.path_transmission
            * self.detector_efficiency
            * (1.0 - self.splitter_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("conversion_efficiency", self.conversion_efficiency),
            ("path_transmission", self.path_transmission),
            ("detector_efficiency", self.detector_efficiency),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::Config(format!(
                "splitter_ratio must be in (0, 1), got {}",
                self.splitter_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.dark_count_rate) {
            return Err(Error::Config("dark_count_rate must be in [0, 1]".into()));
        }
        if self.n_periods == 0 {
            return Err(Error::Config("n_periods must be positive".into()));
        }
        self.gate.validate()?;
        let t = self.rep_period_ps();
        let span = self.gate.time_ps[self.gate.time_ps.len() - 1] - self.gate.time_ps[0];
        if !(t > span) {
            return Err(Error::Config(format!(
                "rep period {t} ps must exceed the gate span {span} ps"
            )));
        }
        if self.delays_ps.is_empty() {
            return Err(Error::Config("delay list is empty".into()));
        }
        let dt = self.gate.dt_ps();
        for &d in &self.delays_ps {
            let steps = d / dt;
            if (steps - steps.round()).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "delay {d} ps is not representable on the gate grid (dt = {dt} ps)"
                )));
            }
            if d.abs() > t / 2.0 - span / 2.0 {
                return Err(Error::Config(format!(
                    "delay {d} ps puts the second gate outside the pump period"
                )));
            }
        }
        Ok(())
    }
}

/// Raw counts for one scan delay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayBin {
    pub delay_ps: f64,
    /// Same-period coincidences C(Δt).
    pub coincidences: u64,
    /// Cross-period coincidences at lags [`ACCIDENTAL_LAGS`].
    pub accidentals: [u64; 10],
    pub singles_a: u64,
    pub singles_b: u64,
}

impl DelayBin {
    fn empty(delay_ps: f64) -> DelayBin {
        DelayBin {
            delay_ps,
            coincidences: 0,
            accidentals: [0; 10],
            singles_a: 0,
            singles_b: 0,
        }
    }

    pub fn accidental_total(&self) -> u64 {
        self.accidentals.iter().sum()
    }

    pub fn accidental_mean(&self) -> f64 {
        self.accidental_total() as f64 / self.accidentals.len() as f64
    }
}

/// Histogram over the full delay scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bins: Vec<DelayBin>,
    pub n_periods: u64,
}

/// Ensemble-averaged per-period detection probabilities at one delay.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairProbabilities {
    pub p_single_a: f64,
    pub p_single_b: f64,
    /// Probability that both detectors click in the same period.
    pub p_pair: f64,
    /// Gate-convolved correlation of the same-pulse pair channel, K̄(0).
    pub same_gate_correlation: f64,
    /// Gate-convolved correlation of the cross-pulse channel, K̄(Δt).
    /// This is also the expected g²(Δt) the estimator recovers.
    pub cross_gate_correlation: f64,
}

/// Precomputed gate quantities shared across delays.
pub(crate) struct GateKernel {
    dt: f64,
    /// Gate autocorrelation density ρ(τ): values at lags k·dt.
    rho: Vec<f64>,
    rho_lag0: usize,
    /// ∫h(t)e^(−i2πft)dt at the modulation frequency (when needed).
    h_fourier: Complex64,
    /// Pulse-overlap profile C(x) = ∫h(t)s(t−x)dt / max_t h(t) on the
    /// x grid `overlap_x0 + k·dt` (pulsed sources).
    overlap: Vec<f64>,
    overlap_x0: f64,
}

impl GateKernel {
    pub(crate) fn build(gate: &GateResponse, source: &SourceModel) -> GateKernel {
        let dt = gate.dt_ps();
        // restrict to the support of h
        let eps = 1e-14 * gate.h.iter().cloned().fold(0.0, f64::max);
        let i0 = gate.h.iter().position(|&v| v > eps).unwrap_or(0);
        let i1 = gate.h.iter().rposition(|&v| v > eps).unwrap_or(gate.h.len() - 1);
        let h = &gate.h[i0..=i1];
        let t = &gate.time_ps[i0..=i1];
        let n = h.len();

        // autocorrelation density: rho[n−1+k] = dt·Σ h_i h_{i+k}
        let mut rho = vec![0.0; 2 * n - 1];
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n - k {
                s += h[i] * h[i + k];
            }
            rho[n - 1 + k] = s * dt;
            rho[n - 1 - k] = s * dt;
        }

        let mut h_fourier = Complex64::new(0.0, 0.0);
        if let SourceModel::ModulatedCw { frequency_ghz, .. } = source {
            let f = frequency_ghz * 1e-3; // cycles per ps
            for (hi, ti) in h.iter().zip(t) {
                h_fourier +=
                    Complex64::from_polar(hi * dt, -2.0 * std::f64::consts::PI * f * ti);
            }
        }

        let mut overlap = Vec::new();
        let mut overlap_x0 = 0.0;
        if let SourceModel::PulsedCoherent { pulse_fwhm_ps, shape, .. } = source {
            let h_max = h.iter().cloned().fold(0.0, f64::max);
            // sample the pulse out to negligible tails
            let half_span = match shape {
                PulseShape::Sech2 => pulse_fwhm_ps / SECH2_FWHM_PER_TAU0 * 20.0,
                _ => pulse_fwhm_ps * 4.0,
            };
            let m = (half_span / dt).ceil() as usize;
            let s_of = |u: f64| -> f64 {
                match shape {
                    PulseShape::Sech2 => {
                        let tau0 = pulse_fwhm_ps / SECH2_FWHM_PER_TAU0;
                        let c = (u / tau0).cosh();
                        1.0 / (2.0 * tau0 * c * c)
                    }
                    PulseShape::Gaussian => {
                        let k = 4.0 * std::f64::consts::LN_2;
                        let norm = (k / std::f64::consts::PI).sqrt() / pulse_fwhm_ps;
                        norm * (-k * u * u / (pulse_fwhm_ps * pulse_fwhm_ps)).exp()
                    }
                    PulseShape::Cw => 0.0,
                }
            };
            overlap_x0 = t[0] - m as f64 * dt;
            let nx = n + 2 * m;
            overlap = (0..nx)
                .map(|j| {
                    let x = overlap_x0 + j as f64 * dt;
                    let mut acc = 0.0;
                    for (hi, ti) in h.iter().zip(t) {
                        acc += hi * s_of(ti - x);
                    }
                    acc * dt / h_max
                })
                .collect();
        }

        GateKernel {
            dt,
            rho,
            rho_lag0: n - 1,
            h_fourier,
            overlap,
            overlap_x0,
        }
    }

    /// K̄(x) = ∫ρ(τ)·g²(x+τ)dτ for an analytic source.
    fn gate_convolved_g2(&self, curve: &G2Curve, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, r) in self.rho.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            let tau = (k as f64 - self.rho_lag0 as f64) * self.dt;
            acc += r * curve.value(x + tau);
        }
        acc * self.dt
    }

    /// Linear interpolation of the pulse-overlap profile C(x).
    fn overlap_at(&self, x: f64) -> f64 {
        if self.overlap.is_empty() {
            return 0.0;
        }
        let j = (x - self.overlap_x0) / self.dt;
        if j < 0.0 || j >= (self.overlap.len() - 1) as f64 {
            return 0.0;
        }
        let j0 = j.floor() as usize;
        let frac = j - j0 as f64;
        self.overlap[j0] * (1.0 - frac) + self.overlap[j0 + 1] * frac
    }

    fn overlap_integral(&self) -> f64 {
        self.overlap.iter().sum::<f64>() * self.dt
    }

    fn overlap_sq_integral(&self) -> f64 {
        self.overlap.iter().map(|c| c * c).sum::<f64>() * self.dt
    }

    fn overlap_cross_integral(&self, delay: f64) -> f64 {
        // ∫C(x)·C(x−Δt)dx on the common grid
        let shift = (delay / self.dt).round() as i64;
        let n = self.overlap.len() as i64;
        let mut acc = 0.0;
        for j in 0..n {
            let k = j - shift;
            if k >= 0 && k < n {
                acc += self.overlap[j as usize] * self.overlap[k as usize];
            }
        }
        acc * self.dt
    }
}

/// Ensemble-averaged singles and pair probabilities for one pump
/// period containing two gates at separation `delay_ps`.
///
/// For a stationary source with mean μ photons per gate:
/// p_single = η·2μ and p_pair = η_a·η_b·μ²·[2K̄(0) + 2K̄(Δt)], where
/// K̄ is the source correlation convolved with the two-gate response —
/// the three pair channels gate1×gate1, gate2×gate2 (together
/// 2K̄(0)) and gate1×gate2 in both orders (2K̄(Δt)).
pub fn pair_detection_probability(
    source: &SourceModel,
    cfg: &MeasurementConfig,
    delay_ps: f64,
) -> Result<PairProbabilities> {
    source.validate()?;
    let kernel = GateKernel::build(&cfg.gate, source);
    pair_probabilities_with_kernel(source, cfg, &kernel, delay_ps)
}

fn pair_probabilities_with_kernel(
    source: &SourceModel,
    cfg: &MeasurementConfig,
    kernel: &GateKernel,
    delay_ps: f64,
) -> Result<PairProbabilities> {
    let eta_a = cfg.eta_a();
    let eta_b = cfg.eta_b();
    let t_ps = cfg.rep_period_ps();
    let (mu_eff, k_same, k_cross) = match source {
        SourceModel::CoherentCw { mean_rate } => (*mean_rate, 1.0, 1.0),
        SourceModel::ModulatedCw { mean_rate, depth, frequency_ghz, .. } => {
            let h2 = kernel.h_fourier.norm_sqr();
            let theta = std::f64::consts::TAU * frequency_ghz * 1e-3 * delay_ps;
            (
                *mean_rate,
                1.0 + 0.5 * depth * depth * h2,
                1.0 + 0.5 * depth * depth * h2 * theta.cos(),
            )
        }
        SourceModel::AnalyticG2 { mean_rate, g2 } => {
            if g2.correlation_horizon_ps() >= t_ps {
                return Err(Error::Config(format!(
                    "g2 correlation horizon {:.0} ps reaches the rep period {t_ps:.0} ps; cross-period accidentals would be correlated",
                    g2.correlation_horizon_ps()
                )));
            }
            (
                *mean_rate,
                kernel.gate_convolved_g2(g2, 0.0),
                kernel.gate_convolved_g2(g2, delay_ps),
            )
        }
        SourceModel::PulsedCoherent { mean_photons_per_pulse, .. } => {
            let ic = kernel.overlap_integral();
            let mu_eff = mean_photons_per_pulse * ic / t_ps;
            let k_same = t_ps * kernel.overlap_sq_integral() / (ic * ic);
            let k_cross = t_ps * kernel.overlap_cross_integral(delay_ps) / (ic * ic);
            (mu_eff, k_same, k_cross)
        }
    };
    let p_single_a = eta_a * 2.0 * mu_eff;
    let p_single_b = eta_b * 2.0 * mu_eff;
    let p_pair = eta_a * eta_b * mu_eff * mu_eff * (2.0 * k_same + 2.0 * k_cross);
    if p_single_a > REGIME_MAX_SINGLES || p_single_b > REGIME_MAX_SINGLES {
        return Err(Error::Regime(format!(
            "singles probability {p_single_a:.3}/{p_single_b:.3} per period exceeds {REGIME_MAX_SINGLES} (weak-signal estimator would be biased); reduce the source rate or efficiencies"
        )));
    }
    Ok(PairProbabilities {
        p_single_a,
        p_single_b,
        p_pair,
        same_gate_correlation: k_same,
        cross_gate_correlation: k_cross,
    })
}

/// The g²(Δt) the estimator is expected to recover for this source and
/// gate (the source correlation seen through the two-gate response).
pub fn expected_g2(source: &SourceModel, cfg: &MeasurementConfig, delay_ps: f64) -> Result<f64> {
    Ok(pair_detection_probability(source, cfg, delay_ps)?.cross_gate_correlation)
}

/// RNG substream for (seed, delay index, chunk index): independent,
/// deterministic, order-free.
fn substream(seed: u64, delay_index: usize, chunk_index: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(delay_index as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&chunk_index.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x7570_636f_6e76_6832_u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Per-period sampling strategy at one delay.
enum PeriodSampler {
    /// Constant probabilities, jointly sampled (analytic_g2 and
    /// coherent sources).
    Joint { p_both: f64, p_a: f64, p_b: f64 },
    /// Modulated CW: intensity drawn per period (random or coherent
    /// phase), detectors independent given the intensity.
    Modulated {
        base_a: f64,
        base_b: f64,
        depth: f64,
        /// H*(f)·(1 + e^(i·2πfΔt)): per-period bracket is
        /// 2 + depth·Re(e^(iφ)·z).
        z: Complex64,
        phase_random: bool,
        /// Coherent phase advance per period, 2πfT (fixed-phase mode).
        phase_step: f64,
    },
    /// Pulsed source: per-period arrival draw inside the overlap
    /// window, detectors independent given the arrival.
    Pulsed {
        eta_mu_a: f64,
        eta_mu_b: f64,
        delay_ps: f64,
        /// Probability that the arrival falls in the overlap window.
        hit_prob: f64,
        window_lo: f64,
        window_len: f64,
        synchronized: bool,
    },
}

impl PeriodSampler {
    /// Sample one period; returns detector clicks (a, b).
    #[inline]
    fn sample(&self, kernel: &GateKernel, global_period: u64, rng: &mut ChaCha8Rng) -> (bool, bool) {
        match *self {
            PeriodSampler::Joint { p_both, p_a, p_b } => {
                let u: f64 = rng.gen();
                if u < p_both {
                    (true, true)
                } else if u < p_a {
                    (true, false)
                } else if u < p_a + (p_b - p_both) {
                    (false, true)
                } else {
                    (false, false)
                }
            }
            PeriodSampler::Modulated {
                base_a,
                base_b,
                depth,
                z,
                phase_random,
                phase_step,
            } => {
                let phi = if phase_random {
                    rng.gen::<f64>() * std::f64::consts::TAU
                } else {
                    (phase_step * global_period as f64) % std::f64::consts::TAU
                };
                let (s, c) = phi.sin_cos();
                let bracket = 2.0 + depth * (c * z.re - s * z.im);
                // linear weak-signal click probabilities: the
                // estimator algebra is exact in this convention
                let a = rng.gen::<f64>() < base_a * bracket;
                let b = rng.gen::<f64>() < base_b * bracket;
                (a, b)
            }
            PeriodSampler::Pulsed {
                eta_mu_a,
                eta_mu_b,
                delay_ps,
                hit_prob,
                window_lo,
                window_len,
                synchronized,
            } => {
                if synchronized {
                    let c = kernel.overlap_at(0.0) + kernel.overlap_at(-delay_ps);
                    let a = rng.gen::<f64>() < eta_mu_a * c;
                    let b = rng.gen::<f64>() < eta_mu_b * c;
                    return (a, b);
                }
                if rng.gen::<f64>() >= hit_prob {
                    return (false, false);
                }
                let x = window_lo + rng.gen::<f64>() * window_len;
                let c = kernel.overlap_at(x) + kernel.overlap_at(x - delay_ps);
                let a = rng.gen::<f64>() < eta_mu_a * c;
                let b = rng.gen::<f64>() < eta_mu_b * c;
                (a, b)
            }
        }
    }
}

fn build_sampler(
    source: &SourceModel,
    cfg: &MeasurementConfig,
    kernel: &GateKernel,
    delay_ps: f64,
) -> Result<PeriodSampler> {
    let probs = pair_probabilities_with_kernel(source, cfg, kernel, delay_ps)?;
    let eta_a = cfg.eta_a();
    let eta_b = cfg.eta_b();
    Ok(match source {
        SourceModel::CoherentCw { mean_rate } => {
            // deterministic intensity: the detectors are exactly
            // independent, clicks linear in the weak-signal rate
            let p_a = eta_a * 2.0 * mean_rate;
            let p_b = eta_b * 2.0 * mean_rate;
            PeriodSampler::Joint {
                p_both: p_a * p_b,
                p_a,
                p_b,
            }
        }
        SourceModel::AnalyticG2 { .. } => {
            let (p_a, p_b, p_both) = (probs.p_single_a, probs.p_single_b, probs.p_pair);
            if p_both > p_a.min(p_b) {
                return Err(Error::Regime(format!(
                    "pair probability {p_both:.3e} exceeds a singles probability; source too strong for the weak-signal sampler"
                )));
            }
            PeriodSampler::Joint { p_both, p_a, p_b }
        }
        SourceModel::ModulatedCw { mean_rate, depth, frequency_ghz, phase_random } => {
            let f = frequency_ghz * 1e-3;
            let theta = std::f64::consts::TAU * f * delay_ps;
            let z = kernel.h_fourier.conj()
                * (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, theta));
            PeriodSampler::Modulated {
                base_a: eta_a * mean_rate,
                base_b: eta_b * mean_rate,
                depth: *depth,
                z,
                phase_random: *phase_random,
                phase_step: std::f64::consts::TAU * f * cfg.rep_period_ps(),
            }
        }
        SourceModel::PulsedCoherent { mean_photons_per_pulse, rep_incommensurate, .. } => {
            let t_ps = cfg.rep_period_ps();
            // arrival window: overlap support of gate A plus gate B at Δt
            let x_lo = kernel.overlap_x0;
            let x_hi = kernel.overlap_x0 + (kernel.overlap.len() - 1) as f64 * kernel.dt;
            let lo = x_lo.min(x_lo + delay_ps);
            let hi = x_hi.max(x_hi + delay_ps);
            let window_len = hi - lo;
            let peak = mean_photons_per_pulse
                * eta_a.max(eta_b)
                * kernel.overlap.iter().cloned().fold(0.0, f64::max)
                * 2.0;
            if peak > 1.0 {
                return Err(Error::Regime(format!(
                    "peak per-pulse click rate {peak:.2} exceeds 1; reduce mean_photons_per_pulse"
                )));
            }
            PeriodSampler::Pulsed {
                eta_mu_a: eta_a * mean_photons_per_pulse,
                eta_mu_b: eta_b * mean_photons_per_pulse,
                delay_ps,
                hit_prob: window_len / t_ps,
                window_lo: lo,
                window_len,
                synchronized: !rep_incommensurate,
            }
        }
    })
}

/// Accumulate one chunk of periods into a bin: same-period
/// coincidences, cross-period accidentals at lags ±1..±5 (within the
/// chunk), and singles.
pub(crate) fn accumulate_chunk<F: FnMut(u64, &mut ChaCha8Rng) -> (bool, bool)>(
    bin: &mut DelayBin,
    rng: &mut ChaCha8Rng,
    first_period: u64,
    periods: u64,
    dark: f64,
    mut click: F,
) {
    let mut hist_a: u32 = 0;
    let mut hist_b: u32 = 0;
    for k in 0..periods {
        let (mut a, mut b) = click(first_period + k, rng);
        if dark > 0.0 {
            a |= rng.gen::<f64>() < dark;
            b |= rng.gen::<f64>() < dark;
        }
        if a && b {
            bin.coincidences += 1;
        }
        if a {
            bin.singles_a += 1;
            // pairs (A at k, B at k−j) → lag −j, slot 5−j
            for j in 1..=5u32 {
                if (hist_b >> (j - 1)) & 1 == 1 {
                    bin.accidentals[(5 - j) as usize] += 1;
                }
            }
        }
        if b {
            bin.singles_b += 1;
            // pairs (A at k−j, B at k) → lag +j, slot 4+j
            for j in 1..=5u32 {
                if (hist_a >> (j - 1)) & 1 == 1 {
                    bin.accidentals[(4 + j) as usize] += 1;
                }
            }
        }
        hist_a = (hist_a << 1) | u32::from(a);
        hist_b = (hist_b << 1) | u32::from(b);
    }
}

/// Monte Carlo HBT acquisition. Deterministic for a fixed seed:
/// periods run in chunks with RNG substreams derived from (seed, delay
/// index, chunk index) and order-free integer reduction, so the
/// parallel result is bit-identical to the sequential one.
pub fn simulate_coincidences(
    source: &SourceModel,
    cfg: &MeasurementConfig,
) -> Result<CoincidenceHistogram> {
    source.validate()?;
    cfg.validate()?;
    let kernel = GateKernel::build(&cfg.gate, source);
    for &d in &cfg.delays_ps {
        pair_probabilities_with_kernel(source, cfg, &kernel, d)?;
    }
    let n_chunks = cfg.n_periods.div_ceil(CHUNK_PERIODS);
    let bins: Result<Vec<DelayBin>> = cfg
        .delays_ps
        .par_iter()
        .enumerate()
        .map(|(di, &delay)| {
            let sampler = build_sampler(source, cfg, &kernel, delay)?;
            let bin = (0..n_chunks)
                .into_par_iter()
                .map(|ci| {
                    let mut rng = substream(cfg.rng_seed, di, ci);
                    let first = ci * CHUNK_PERIODS;
                    let count = CHUNK_PERIODS.min(cfg.n_periods - first);
                    let mut partial = DelayBin::empty(delay);
                    accumulate_chunk(
                        &mut partial,
                        &mut rng,
                        first,
                        count,
                        cfg.dark_count_rate,
                        |gp, r| sampler.sample(&kernel, gp, r),
                    );
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

/// Normalized coincidence value for one delay.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizedBin {
    pub delay_ps: f64,
    pub c: f64,
    pub c_err: f64,
}

/// c(Δt) = C(Δt) / ⟨C(Δt + nT)⟩_{n≠0} with Poisson error propagation
/// (numerator and denominator are uncorrelated).
pub fn normalize(hist: &CoincidenceHistogram) -> Result<Vec<NormalizedBin>> {
    hist.bins
        .iter()
        .map(|bin| {
            let total_acc = bin.accidental_total();
            if total_acc == 0 {
                return Err(Error::Config(format!(
                    "zero accidental counts at delay {} ps: normalization undefined",
                    bin.delay_ps
                )));
            }
            let mean_acc = bin.accidental_mean();
            let c = bin.coincidences as f64 / mean_acc;
            // var(C) ≈ max(C, 1); var(Ā) = Σacc / n_lags²
            let var_c = (bin.coincidences as f64).max(1.0);
            let var_acc_mean = total_acc as f64 / (bin.accidentals.len() as f64).powi(2);
            let c_err = (var_c / (mean_acc * mean_acc)
                + (bin.coincidences as f64).powi(2) * var_acc_mean / mean_acc.powi(4))
            .sqrt();
            Ok(NormalizedBin {
                delay_ps: bin.delay_ps,
                c,
                c_err,
            })
        })
        .collect()
}

/// One delay of a recovered correlation function.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct G2Bin {
    pub delay_ps: f64,
    pub c: f64,
    pub c_err: f64,
    pub g2: f64,
    pub g2_err: f64,
}

/// Recovered g²(Δt) with error propagation. The shared c(0) term makes
/// the bins correlated; `c0_err` is kept so downstream significance
/// tests can account for it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Estimate {
    pub bins: Vec<G2Bin>,
    pub c0: f64,
    /// Present when the estimate came from counts; absent for
    /// hand-built (Δt, g², σ) traces, whose bins are independent.
    pub c0_err: Option<f64>,
}

/// g²(Δt) = 2c(Δt) − c(0); at Δt = 0 this reduces to g²(0) = c(0).
/// Errors combine in quadrature with the shared c(0) term correlated
/// across bins.
pub fn estimate_g2(normalized: &[NormalizedBin]) -> Result<G2Estimate> {
    let zero = normalized
        .iter()
        .find(|b| b.delay_ps.abs() < 1e-12)
        .ok_or_else(|| Error::Config("delay list must contain Δt = 0 to recover g²".into()))?;
    let (c0, c0_err) = (zero.c, zero.c_err);
    let zero_delay = zero.delay_ps;
    let bins = normalized
        .iter()
        .map(|b| {
            let (g2, g2_err) = if b.delay_ps == zero_delay {
                (c0, c0_err)
            } else {
                (
                    2.0 * b.c - c0,
                    (4.0 * b.c_err * b.c_err + c0_err * c0_err).sqrt(),
                )
            };
            G2Bin {
                delay_ps: b.delay_ps,
                c: b.c,
                c_err: b.c_err,
                g2,
                g2_err,
            }
        })
        .collect();
    Ok(G2Estimate {
        bins,
        c0,
        c0_err: Some(c0_err),
    })
}

impl G2Estimate {
    /// Build from externally supplied (Δt, g², σ) points. Bin errors
    /// are treated as independent (no shared c(0) information).
    pub fn from_g2_points(points: &[(f64, f64, f64)]) -> Result<G2Estimate> {
        let zero = points
            .iter()
            .find(|p| p.0.abs() < 1e-12)
            .ok_or_else(|| Error::Config("need a Δt = 0 point".into()))?;
        let c0 = zero.1;
        let bins = points
            .iter()
            .map(|&(dt, g2, err)| G2Bin {
                delay_ps: dt,
                c: 0.5 * (g2 + c0),
                c_err: f64::NAN,
                g2,
                g2_err: err,
            })
            .collect();
        Ok(G2Estimate {
            bins,
            c0,
            c0_err: None,
        })
    }

    pub fn bin_at_zero(&self) -> Option<&G2Bin> {
        self.bins.iter().find(|b| b.delay_ps.abs() < 1e-12)
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::{test_cfg, test_gate};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coherent_pair_probability_factorizes() {
        let cfg = test_cfg(test_gate(4.0), vec![0.0, 10.0, 25.0], 1, 1);
        let source = SourceModel::CoherentCw { mean_rate: 0.1 };
        for d in [0.0, 10.0, 25.0] {
            let p = pair_detection_probability(&source, &cfg, d).unwrap();
            assert_relative_eq!(p.p_pair, p.p_single_a * p.p_single_b, max_relative = 1e-12);
            assert_relative_eq!(p.same_gate_correlation, 1.0);
            assert_relative_eq!(p.cross_gate_correlation, 1.0);
        }
    }

    #[test]
    fn perfect_antibunching_kills_same_period_pairs() {
        // g²(0) = 0 with a delta-like gate: all three channels vanish
        // at Δt = 0
        let gate = test_gate(0.2);
        let cfg = test_cfg(gate, vec![0.0], 1, 1);
        let source = SourceModel::AnalyticG2 {
            mean_rate: 0.05,
            g2: G2Curve::ExponentialMix {
                bunching_amplitude: 0.0,
                bunching_tau_ps: 35.0,
                antibunching_amplitude: 1.0,
                antibunching_tau_ps: 50.0, // recovery ≫ gate width
            },
        };
        let p = pair_detection_probability(&source, &cfg, 0.0).unwrap();
        assert!(
            p.p_pair < 0.01 * p.p_single_a * p.p_single_b,
            "pair channel not suppressed: {} vs {}",
            p.p_pair,
            p.p_single_a * p.p_single_b
        );
    }

    #[test]
    fn modulated_pair_probability_matches_quadrature() {
        // analytic ensemble-averaged pair law vs direct double
        // quadrature of ∬h(t)h(t′−Δt)·g²_src(t−t′)dtdt′
        let gate = test_gate(4.0);
        let dt = gate.dt_ps();
        let (depth, f_ghz) = (0.8717798, 4.0);
        let f = f_ghz * 1e-3;
        let cfg = test_cfg(gate.clone(), vec![0.0], 1, 1);
        let source = SourceModel::ModulatedCw {
            mean_rate: 0.05,
            depth,
            frequency_ghz: f_ghz,
            phase_random: true,
        };
        for delay in [0.0, 40.0, 62.5, 125.0, 171.2] {
            let p = pair_detection_probability(&source, &cfg, delay).unwrap();
            let mut acc = 0.0;
            for (i, &hi) in gate.h.iter().enumerate() {
                if hi == 0.0 {
                    continue;
                }
                for (j, &hj) in gate.h.iter().enumerate() {
                    if hj == 0.0 {
                        continue;
                    }
                    let tau = gate.time_ps[i] - (gate.time_ps[j] + delay);
                    let g2_src =
                        1.0 + 0.5 * depth * depth * (std::f64::consts::TAU * f * tau).cos();
                    acc += hi * hj * g2_src;
                }
            }
            let quad = acc * dt * dt;
            assert_relative_eq!(p.cross_gate_correlation, quad, max_relative = 1e-6);
        }
    }

    #[test]
    fn regime_violation_detected() {
        let cfg = test_cfg(test_gate(4.0), vec![0.0], 1, 1);
        let source = SourceModel::CoherentCw { mean_rate: 2.0 };
        match pair_detection_probability(&source, &cfg, 0.0) {
            Err(Error::Regime(_)) => {}
            other => panic!("expected regime violation, got {other:?}"),
        }
    }

    #[test]
    fn zero_efficiency_gives_empty_histogram() {
        let mut cfg = test_cfg(test_gate(4.0), vec![0.0, 10.0], 200_000, 7);
        cfg.detector_efficiency = 0.0;
        let hist =
            simulate_coincidences(&SourceModel::CoherentCw { mean_rate: 0.05 }, &cfg).unwrap();
        for bin in &hist.bins {
            assert_eq!(bin.coincidences, 0);
            assert_eq!(bin.singles_a + bin.singles_b, 0);
            assert_eq!(bin.accidental_total(), 0);
        }
    }

    #[test]
    fn histogram_is_seed_deterministic() {
        let cfg = test_cfg(test_gate(4.0), vec![0.0, 5.0], 300_000, 42);
        let source = SourceModel::polariton(0.05);
        let h1 = simulate_coincidences(&source, &cfg).unwrap();
        let h2 = simulate_coincidences(&source, &cfg).unwrap();
        for (a, b) in h1.bins.iter().zip(&h2.bins) {
            assert_eq!(a.coincidences, b.coincidences);
            assert_eq!(a.accidentals, b.accidentals);
            assert_eq!(a.singles_a, b.singles_a);
            assert_eq!(a.singles_b, b.singles_b);
        }
        // different seed: different counts, same statistics
        let mut cfg2 = cfg.clone();
        cfg2.rng_seed = 43;
        let h3 = simulate_coincidences(&source, &cfg2).unwrap();
        assert!(h3
            .bins
            .iter()
            .zip(&h1.bins)
            .any(|(x, y)| x.coincidences != y.coincidences || x.singles_a != y.singles_a));
    }

    #[test]
    fn coherent_c_is_unity() {
        let cfg = test_cfg(test_gate(4.0), vec![0.0, 10.0, 20.0], 3_000_000, 11);
        let hist =
            simulate_coincidences(&SourceModel::CoherentCw { mean_rate: 0.08 }, &cfg).unwrap();
        let norm = normalize(&hist).unwrap();
        for b in &norm {
            assert!(
                (b.c - 1.0).abs() < 3.0 * b.c_err,
                "c({}) = {} ± {}",
                b.delay_ps,
                b.c,
                b.c_err
            );
        }
    }

    #[test]
    fn normalize_arithmetic_and_scale_invariance() {
        let mk = |c: u64, acc: [u64; 10]| CoincidenceHistogram {
            bins: vec![DelayBin {
                delay_ps: 0.0,
                coincidences: c,
                accidentals: acc,
                singles_a: 1000,
                singles_b: 1000,
            }],
            n_periods: 1,
        };
        // hand-built histogram: C = 220, accidental lags averaging 100
        let h = mk(220, [100, 95, 105, 100, 100, 100, 95, 105, 100, 100]);
        let n = normalize(&h).unwrap();
        assert_relative_eq!(n[0].c, 2.2, max_relative = 1e-12);
        // all counts ×10 leave c unchanged
        let h10 = mk(
            2200,
            [1000, 950, 1050, 1000, 1000, 1000, 950, 1050, 1000, 1000],
        );
        let n10 = normalize(&h10).unwrap();
        assert_relative_eq!(n10[0].c, n[0].c, max_relative = 1e-12);
        // C equal to every accidental count → c = 1
        let h1 = mk(100, [100; 10]);
        assert_relative_eq!(normalize(&h1).unwrap()[0].c, 1.0);
        // zero accidentals → error naming the bin
        let hz = mk(5, [0; 10]);
        let err = normalize(&hz).unwrap_err();
        assert!(err.to_string().contains("0 ps"), "{err}");
    }

    #[test]
    fn estimate_g2_identities() {
        // c ≡ 1 → g² ≡ 1
        let flat: Vec<NormalizedBin> = [0.0, 5.0, 10.0]
            .iter()
            .map(|&d| NormalizedBin {
                delay_ps: d,
                c: 1.0,
                c_err: 0.01,
            })
            .collect();
        let est = estimate_g2(&flat).unwrap();
        for b in &est.bins {
            assert_relative_eq!(b.g2, 1.0);
        }
        // c(0) = 0.97, c(30) = 1.00 → g²(0) = 0.97, g²(30) = 1.03
        let bins = vec![
            NormalizedBin { delay_ps: 0.0, c: 0.97, c_err: 0.01 },
            NormalizedBin { delay_ps: 30.0, c: 1.00, c_err: 0.01 },
        ];
        let est = estimate_g2(&bins).unwrap();
        assert_relative_eq!(est.bins[0].g2, 0.97, max_relative = 1e-12);
        assert_relative_eq!(est.bins[1].g2, 1.03, max_relative = 1e-12);
        // σ_g(Δt≠0) = √(4σ_c² + σ_c0²), σ_g(0) = σ_c0
        assert_relative_eq!(
            est.bins[1].g2_err,
            (4.0f64 * 1e-4 + 1e-4).sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(est.bins[0].g2_err, 0.01);
        // missing Δt = 0 → configuration error
        let no_zero = vec![NormalizedBin {
            delay_ps: 5.0,
            c: 1.0,
            c_err: 0.01,
        }];
        assert!(estimate_g2(&no_zero).is_err());
    }

    #[test]
    fn polariton_constants_solve_the_constraint_system() {
        // Independent 2-D Newton solve of g²(0) = 0.94, max g² = 1.08
        // at τ_a = 10, τ_b = 35; the frozen defaults must match.
        let (ta, tb) = (POLARITON_ANTIBUNCH_TAU_PS, POLARITON_BUNCH_TAU_PS);
        let g2max = |a: f64, b: f64| -> f64 {
            let tau = ((a * tb) / (b * ta)).ln() / (1.0 / ta - 1.0 / tb);
            1.0 + b * (-tau / tb).exp() - a * (-tau / ta).exp()
        };
        let (mut a, mut b) = (0.25, 0.19);
        for _ in 0..60 {
            let f1 = 1.0 + b - a - 0.94;
            let f2 = g2max(a, b) - 1.08;
            let h = 1e-8;
            let (d1a, d1b) = (-1.0, 1.0);
            let d2a = (g2max(a + h, b) - g2max(a - h, b)) / (2.0 * h);
            let d2b = (g2max(a, b + h) - g2max(a, b - h)) / (2.0 * h);
            let det = d1a * d2b - d1b * d2a;
            a -= (f1 * d2b - f2 * d1b) / det;
            b -= (f2 * d1a - f1 * d2a) / det;
        }
        assert_relative_eq!(a, POLARITON_ANTIBUNCH_AMPLITUDE, epsilon = 1e-7);
        assert_relative_eq!(b, POLARITON_BUNCH_AMPLITUDE, epsilon = 1e-7);
        let curve = G2Curve::polariton_default();
        assert_relative_eq!(curve.value(0.0), 0.94, epsilon = 1e-7);
        // antibunching confined below 20 ps, bunching persists past 50 ps
        assert!(POLARITON_ANTIBUNCH_AMPLITUDE * (-20.0f64 / ta).exp() < 0.04);
        assert!(curve.value(50.0) > 1.04);
    }

    #[test]
    fn delays_must_sit_on_gate_grid() {
        let mut cfg = test_cfg(test_gate(4.0), vec![0.0, 1.0], 1000, 1);
        cfg.delays_ps = vec![0.0, 0.613];
        assert!(cfg.validate().is_err());
        cfg.delays_ps = vec![0.0, 1.0, -7.0];
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let gate = test_gate(4.0);
        let mut cfg = test_cfg(gate.clone(), vec![0.0], 1000, 1);
        cfg.conversion_efficiency = 1.4;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg(gate.clone(), vec![0.0], 1000, 1);
        cfg.rep_period_ns = 0.01; // shorter than the gate span
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg(gate, vec![0.0], 1000, 1);
        cfg.delays_ps = vec![0.0, 6600.0];
        assert!(cfg.validate().is_err());
    }
}
