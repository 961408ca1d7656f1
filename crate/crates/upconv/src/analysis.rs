//! Derived-quantity extraction from recovered g²(Δt) traces: peak
//! fitting, visibility of intensity-modulation oscillations,
//! resolution deconvolution, significance of the classical-inequality
//! violation, and the detection-efficiency budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, linear_wls, FitResult, LeastSquaresModel};
use crate::hbt::G2Estimate;

/// Gaussian peak fit result: baseline + amplitude·exp(−4ln2(x−c)²/w²).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakFit {
    pub center_ps: f64,
    pub fwhm_ps: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub center_err: f64,
    pub fwhm_err: f64,
    pub amplitude_err: f64,
    pub baseline_err: f64,
    pub reduced_chi2: f64,
    /// Amplitude consistent with zero: the width is unconstrained.
    pub unconstrained: bool,
    /// Negative amplitude: the feature is a dip, not a peak.
    pub is_dip: bool,
}

struct GaussianPeak<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sigma: &'a [f64],
}

impl LeastSquaresModel for GaussianPeak<'_> {
    fn len(&self) -> usize {
        self.x.len()
    }
    fn residual_and_jacobian(&self, i: usize, p: &[f64], jac: &mut [f64]) -> f64 {
        let (base, amp, c, w) = (p[0], p[1], p[2], p[3]);
        let u = self.x[i] - c;
        let k = 4.0 * std::f64::consts::LN_2;
        let e = (-k * u * u / (w * w)).exp();
        let inv_s = 1.0 / self.sigma[i];
        jac[0] = inv_s;
        jac[1] = e * inv_s;
        jac[2] = amp * e * 2.0 * k * u / (w * w) * inv_s;
        jac[3] = amp * e * 2.0 * k * u * u / (w * w * w) * inv_s;
        (self.y[i] - (base + amp * e)) * inv_s
    }
}

/// Weighted Gaussian fit to a (Δt, g², σ) trace. Deterministic
/// initialization: baseline = median, center = argmax, amplitude =
/// max − median, width = half the point span above half height.
pub fn fit_gaussian_peak(trace: &[(f64, f64, f64)]) -> Result<PeakFit> {
    if trace.len() < 8 {
        return Err(Error::Config(format!(
            "peak fit needs >= 8 points spanning the peak, got {}",
            trace.len()
        )));
    }
    if trace.iter().any(|&(_, _, s)| !(s > 0.0)) {
        return Err(Error::Config("peak fit needs positive per-point errors".into()));
    }
    let x: Vec<f64> = trace.iter().map(|p| p.0).collect();
    let y: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let sigma: Vec<f64> = trace.iter().map(|p| p.2).collect();

    let mut sorted = y.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let (i_max, &y_max) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let amp0 = y_max - median;
    let half = median + amp0 / 2.0;
    let span_above: Vec<f64> = x
        .iter()
        .zip(&y)
        .filter(|(_, &yi)| yi > half)
        .map(|(&xi, _)| xi)
        .collect();
    let w0 = if span_above.len() >= 2 {
        let lo = span_above.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = span_above.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).max(x[1] - x[0])
    } else {
        (x[x.len() - 1] - x[0]) / 4.0
    };
    let init = [median, amp0.max(1e-12), x[i_max], w0];
    let model = GaussianPeak {
        x: &x,
        y: &y,
        sigma: &sigma,
    };
    let fit: FitResult = levenberg_marquardt(&model, &init)?;
    let [baseline, amplitude, center, fwhm] = [fit.params[0], fit.params[1], fit.params[2], fit.params[3]];
    let fwhm = fwhm.abs(); // sign-symmetric model
    let unconstrained = amplitude.abs() <= 2.0 * fit.errors[1];
    Ok(PeakFit {
        center_ps: center,
        fwhm_ps: fwhm,
        amplitude,
        baseline,
        center_err: fit.errors[2],
        fwhm_err: fit.errors[3],
        amplitude_err: fit.errors[1],
        baseline_err: fit.errors[0],
        reduced_chi2: fit.reduced_chi2,
        unconstrained,
        is_dip: amplitude < 0.0 && !unconstrained,
    })
}

/// Time resolution from the measured pulsed-laser peak width, under
/// the Gaussian-quadrature model of the incommensurate-pulse peak:
/// the peak is the autocorrelation of (signal pulse ⊗ gate), so
/// measured² = 2·(pulse² + resolution²).
pub fn deconvolve_resolution(measured_fwhm_ps: f64, pulse_fwhm_ps: f64) -> Result<f64> {
    if !(measured_fwhm_ps > 0.0) || !(pulse_fwhm_ps >= 0.0) {
        return Err(Error::Config("widths must be positive".into()));
    }
    let m2 = measured_fwhm_ps * measured_fwhm_ps;
    let p2 = pulse_fwhm_ps * pulse_fwhm_ps;
    if m2 <= 2.0 * p2 {
        return Err(Error::OutOfRange {
            what: "measured peak fwhm",
            value: measured_fwhm_ps,
            min: (2.0 * p2).sqrt(),
            max: f64::INFINITY,
            unit: "ps (peak narrower than the pulse-limited minimum)",
        });
    }
    Ok((m2 / 2.0 - p2).sqrt())
}

/// [`deconvolve_resolution`] with error propagation from the input
/// uncertainties.
pub fn deconvolve_resolution_with_errors(
    measured_fwhm_ps: f64,
    measured_err_ps: f64,
    pulse_fwhm_ps: f64,
    pulse_err_ps: f64,
) -> Result<(f64, f64)> {
    let r = deconvolve_resolution(measured_fwhm_ps, pulse_fwhm_ps)?;
    // r² = m²/2 − p² → σ_r² = (m σ_m / 2r)² + (p σ_p / r)²
    let err = ((measured_fwhm_ps * measured_err_ps / (2.0 * r)).powi(2)
        + (pulse_fwhm_ps * pulse_err_ps / r).powi(2))
    .sqrt();
    Ok((r, err))
}

/// Visibility of g² oscillations at a known frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Visibility {
    pub visibility: f64,
    pub visibility_err: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
}

/// Fit offset + V·cos(2πf·Δt + φ) by weighted least squares (linear in
/// offset, V·cosφ, V·sinφ) and return V/offset.
pub fn visibility(trace: &[(f64, f64, f64)], frequency_ghz: f64) -> Result<Visibility> {
    if !(frequency_ghz > 0.0) {
        return Err(Error::Config("modulation frequency must be positive".into()));
    }
    let f = frequency_ghz * 1e-3; // cycles/ps
    let span = trace
        .iter()
        .map(|p| p.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    let periods = (span.1 - span.0) * f;
    if periods < 2.0 {
        return Err(Error::Config(format!(
            "trace spans {periods:.2} oscillation periods; need >= 2 to fit a visibility"
        )));
    }
    let basis: Vec<Vec<f64>> = trace
        .iter()
        .map(|&(x, _, _)| {
            let w = std::f64::consts::TAU * f * x;
            vec![1.0, w.cos(), w.sin()]
        })
        .collect();
    let y: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let sigma: Vec<f64> = trace.iter().map(|p| p.2).collect();
    let fit = linear_wls(&basis, &y, &sigma)?;
    let (offset, a, b) = (fit.params[0], fit.params[1], fit.params[2]);
    let amplitude = (a * a + b * b).sqrt();
    // V = amp/offset; propagate errors through the quadrature sum
    let (s0, sa, sb) = (fit.errors[0], fit.errors[1], fit.errors[2]);
    let amp_err = if amplitude > 0.0 {
        ((a * sa).powi(2) + (b * sb).powi(2)).sqrt() / amplitude
    } else {
        sa.max(sb)
    };
    let vis = amplitude / offset;
    let vis_err = vis * ((amp_err / amplitude.max(1e-300)).powi(2) + (s0 / offset).powi(2)).sqrt();
    Ok(Visibility {
        visibility: vis,
        visibility_err: vis_err,
        offset,
        amplitude,
        phase_rad: (-b).atan2(a),
    })
}

/// [`visibility`] on a full estimate: the shared c(0) term of
/// g²(Δt) = 2c(Δt) − c(0) shifts the whole trace coherently, which the
/// per-bin errors cannot express; its contribution
/// (V·σ_c0/offset) is folded into the visibility error here.
pub fn visibility_of_estimate(estimate: &G2Estimate, frequency_ghz: f64) -> Result<Visibility> {
    let trace: Vec<(f64, f64, f64)> = estimate
        .bins
        .iter()
        .map(|b| (b.delay_ps, b.g2, b.g2_err))
        .collect();
    let mut vis = visibility(&trace, frequency_ghz)?;
    if let Some(c0_err) = estimate.c0_err {
        let shared = vis.visibility * c0_err / vis.offset.abs().max(f64::MIN_POSITIVE);
        vis.visibility_err = (vis.visibility_err * vis.visibility_err + shared * shared).sqrt();
    }
    Ok(vis)
}

/// Outcome of the classical-inequality test g²(0) ≥ g²(τ).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassicalViolation {
    /// max over Δt≠0 of (g²(Δt) − g²(0)) / σ_diff; positive values
    /// violate the classical bound.
    pub significance_sigma: f64,
    pub argmax_delay_ps: f64,
    pub g2_max: f64,
    pub g2_zero: f64,
}

/// Significance of max_τ g²(τ) > g²(0). When the estimate carries
/// count-level errors the shared c(0) term is propagated exactly:
/// g²(Δt) − g²(0) = 2(c(Δt) − c(0)), σ_diff = 2√(σ_c² + σ_c0²);
/// hand-built estimates fall back to independent errors.
pub fn classical_violation(estimate: &G2Estimate) -> Result<ClassicalViolation> {
    let zero = estimate
        .bin_at_zero()
        .ok_or_else(|| Error::Config("estimate has no Δt = 0 bin".into()))?;
    if estimate.bins.len() < 2 {
        return Err(Error::Config("need at least 2 bins".into()));
    }
    let mut best: Option<ClassicalViolation> = None;
    for bin in &estimate.bins {
        if bin.delay_ps == zero.delay_ps {
            continue;
        }
        let (diff, sigma) = match estimate.c0_err {
            Some(c0_err) => (
                2.0 * (bin.c - estimate.c0),
                2.0 * (bin.c_err * bin.c_err + c0_err * c0_err).sqrt(),
            ),
            None => (
                bin.g2 - zero.g2,
                (bin.g2_err * bin.g2_err + zero.g2_err * zero.g2_err).sqrt(),
            ),
        };
        let s = diff / sigma;
        if best.map_or(true, |b| s > b.significance_sigma) {
            best = Some(ClassicalViolation {
                significance_sigma: s,
                argmax_delay_ps: bin.delay_ps,
                g2_max: bin.g2,
                g2_zero: zero.g2,
            });
        }
    }
    best.ok_or_else(|| Error::Config("need at least one Δt ≠ 0 bin".into()))
}

/// Convolve a g² trace with a Gaussian response of the given FWHM
/// (models the timing jitter of a conventional start–stop setup, e.g.
/// two ~40 ps SSPD channels plus electronics). The trace must be on a
/// uniform delay grid.
pub fn convolve_response(trace: &[(f64, f64)], response_fwhm_ps: f64) -> Result<Vec<(f64, f64)>> {
    if trace.len() < 3 {
        return Err(Error::Config("trace too short to convolve".into()));
    }
    if !(response_fwhm_ps > 0.0) {
        return Err(Error::Config("response fwhm must be positive".into()));
    }
    let dx = trace[1].0 - trace[0].0;
    for w in trace.windows(2) {
        if ((w[1].0 - w[0].0) - dx).abs() > 1e-9 * dx.abs().max(1.0) {
            return Err(Error::Config("trace must be on a uniform delay grid".into()));
        }
    }
    let sigma = response_fwhm_ps / (8.0 * std::f64::consts::LN_2).sqrt();
    let reach = (4.0 * sigma / dx).ceil() as i64;
    let n = trace.len() as i64;
    let out = (0..n)
        .map(|i| {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in -reach..=reach {
                let k = i + j;
                // extend the trace by its edge values (g² → constant
                // far from the features)
                let v = trace[k.clamp(0, n - 1) as usize].1;
                let w = (-(j as f64 * dx).powi(2) / (2.0 * sigma * sigma)).exp();
                num += w * v;
                den += w;
            }
            (trace[i as usize].0, num / den)
        })
        .collect();
    Ok(out)
}

/// Multiplicative detection-efficiency budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub factors: Vec<(String, f64)>,
    pub product: f64,
}

/// Combine named efficiency factors in (0, 1]; the overall detection
/// efficiency is their product.
pub fn efficiency_budget(factors: &[(String, f64)]) -> Result<EfficiencyBudget> {
    if factors.is_empty() {
        return Err(Error::Config("empty factor list".into()));
    }
    for (name, v) in factors {
        if !(*v > 0.0 && *v <= 1.0) {
            return Err(Error::Config(format!(
                "efficiency factor {name} = {v} outside (0, 1]"
            )));
        }
    }
    let product = factors.iter().map(|(_, v)| v).product();
    Ok(EfficiencyBudget {
        factors: factors.to_vec(),
        product,
    })
}

/// Duty-cycle factor of the gated measurement: only signal photons
/// inside the gate window convert, so the efficiency carries
/// resolution_fwhm / rep_period.
pub fn gate_duty_cycle(resolution_fwhm_ps: f64, rep_rate_hz: f64) -> Result<f64> {
    if !(resolution_fwhm_ps > 0.0) || !(rep_rate_hz > 0.0) {
        return Err(Error::Config("resolution and rep rate must be positive".into()));
    }
    let period_ps = 1e12 / rep_rate_hz;
    Ok(resolution_fwhm_ps / period_ps)
}

/// The documented default budget: duty cycle from the 4 ps resolution
/// at 76 MHz, a high-efficiency PPLN waveguide conversion, output
/// filtering/transmission, APD quantum efficiency at 445 nm, and
/// input fiber/mode coupling.
pub fn default_budget() -> Result<EfficiencyBudget> {
    let duty = gate_duty_cycle(4.0, crate::propagation::REP_RATE_HZ)?;
    efficiency_budget(&[
        ("gate_duty_cycle".to_string(), duty),
        ("conversion".to_string(), 0.5),
        ("transmission".to_string(), 0.25),
        ("detector".to_string(), 0.5),
        ("other".to_string(), 0.3),
    ])
}
