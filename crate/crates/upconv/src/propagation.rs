//! Split-step solver for three-wave sum-frequency mixing of a short
//! pump gate with an input signal, in the retarded frame co-moving
//! with the pump.
//!
//! Slowly-varying-envelope equations with first-order group-velocity
//! mismatch (GVM dominates intra-pulse dispersion for ps pulses over a
//! cm of crystal):
//!
//! ```text
//! ∂A_p/∂z                 = i κ_p A_f A_s* e^{−iΔk z}
//! ∂A_s/∂z + δ_s ∂A_s/∂t   = i κ_s A_f A_p* e^{−iΔk z}
//! ∂A_f/∂z + δ_f ∂A_f/∂t   = i κ_f A_s A_p e^{+iΔk z}
//! ```
//!
//! Envelopes are in √W, t in ps, z in mm. δ are group-slowness
//! differences to the pump (ps/mm) taken from [`crate::dispersion`].
//! The coupling constants carry photon-energy weights,
//! κ_j = κ·λ_f/λ_j with κ_f = κ, so the Manley–Rowe photon-flux sums
//! are conserved exactly in the continuum limit; the splitting
//! preserves them to machine precision, which is the solver's primary
//! correctness check.
//!
//! Scheme: spectral linear advection half-step, fourth-order explicit
//! (RK4) nonlinear step, advection half-step. Δk = 0 by default — QPM
//! is solved exactly in `dispersion` — with an override for
//! sensitivity studies.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dispersion::{sfg_wavelength, CrystalSpec, SellmeierModel};
use crate::error::{Error, Result};

/// Pump repetition rate of the mode-locked laser, Hz.
pub const REP_RATE_HZ: f64 = 76.0e6;

/// Pump repetition period, ps.
pub const REP_PERIOD_PS: f64 = 1e12 / REP_RATE_HZ;

/// Effective coupling κ (W^(−1/2)·mm⁻¹) calibrated so the gate
/// response at the 1.5 mW average-power operating point is 4.0 ps
/// wide. Frozen from `calibrate_kappa_to_resolution` at the default
/// grid; `tests` assert the round trip.
pub const CALIBRATED_KAPPA: f64 = 0.088_219;

/// FWHM of sech² intensity in units of the width parameter τ₀:
/// FWHM = 2·ln(1+√2)·τ₀.
pub const SECH2_FWHM_PER_TAU0: f64 = 1.762_747_174_039_086;

/// Relative Manley–Rowe drift above which the solver reports an
/// accuracy error.
pub const MANLEY_ROWE_TOL: f64 = 1e-4;

/// Envelope magnitude allowed at the grid edges, relative to the
/// field maximum (wraparound guard).
pub const EDGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Sech2,
    Gaussian,
    Cw,
}

/// One input wave: shape, intensity FWHM (ps, ignored for cw), peak
/// power (mW), center wavelength (nm), and the offset of the pulse
/// center on the time grid (ps).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PulseSpec {
    pub shape: PulseShape,
    pub fwhm_ps: f64,
    pub peak_power_mw: f64,
    pub center_wavelength_nm: f64,
    #[serde(default)]
    pub delay_ps: f64,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape != PulseShape::Cw && !(self.fwhm_ps > 0.0) {
            return Err(Error::Config(format!(
                "pulsed shapes need fwhm > 0, got {} ps",
                self.fwhm_ps
            )));
        }
        if !(self.peak_power_mw >= 0.0) {
            return Err(Error::Config(format!(
                "peak power must be >= 0, got {} mW",
                self.peak_power_mw
            )));
        }
        if !(self.center_wavelength_nm > 0.0) {
            return Err(Error::Config("center wavelength must be positive".into()));
        }
        Ok(())
    }

    /// sech² width parameter τ₀ = FWHM / (2 ln(1+√2)).
    pub fn tau0_ps(&self) -> f64 {
        self.fwhm_ps / SECH2_FWHM_PER_TAU0
    }

    /// Effective width ∫I(t)/I_peak dt of the intensity profile, ps.
    pub fn effective_width_ps(&self) -> f64 {
        match self.shape {
            PulseShape::Sech2 => 2.0 * self.tau0_ps(),
            PulseShape::Gaussian => {
                self.fwhm_ps * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt()
            }
            PulseShape::Cw => f64::INFINITY,
        }
    }

    /// Build a pulsed spec from the average power of the pulse train:
    /// peak = avg / (rep_rate · ∫I/I_peak dt).
    pub fn from_average_power(
        shape: PulseShape,
        fwhm_ps: f64,
        average_power_mw: f64,
        rep_rate_hz: f64,
        center_wavelength_nm: f64,
    ) -> Result<PulseSpec> {
        let mut spec = PulseSpec {
            shape,
            fwhm_ps,
            peak_power_mw: 0.0,
            center_wavelength_nm,
            delay_ps: 0.0,
        };
        spec.validate()?;
        if shape == PulseShape::Cw {
            spec.peak_power_mw = average_power_mw;
            return Ok(spec);
        }
        // energy per pulse (pJ) = P_avg(W)/rep · 1e12; peak (W) = pJ/ps
        let energy_pj = average_power_mw * 1e-3 / rep_rate_hz * 1e12;
        spec.peak_power_mw = energy_pj / spec.effective_width_ps() * 1e3;
        Ok(spec)
    }

    /// The paper's pump: 2.5 ps sech², 76 MHz, average power given in mW.
    pub fn paper_pump(average_power_mw: f64, center_wavelength_nm: f64) -> PulseSpec {
        PulseSpec::from_average_power(
            PulseShape::Sech2,
            2.5,
            average_power_mw,
            REP_RATE_HZ,
            center_wavelength_nm,
        )
        .expect("paper pump spec is valid")
    }

    /// CW signal at the given power (mW).
    pub fn cw(power_mw: f64, center_wavelength_nm: f64) -> PulseSpec {
        PulseSpec {
            shape: PulseShape::Cw,
            fwhm_ps: 0.0,
            peak_power_mw: power_mw,
            center_wavelength_nm,
            delay_ps: 0.0,
        }
    }
}

/// Time/space discretization: window (ps), sample count (power of
/// two), propagation step count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub time_window_ps: f64,
    pub n_time: usize,
    pub n_z: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            time_window_ps: 81.92,
            n_time: 2048,
            n_z: 250,
        }
    }
}

impl GridSpec {
    pub fn dt_ps(&self) -> f64 {
        self.time_window_ps / self.n_time as f64
    }

    pub fn time_axis(&self) -> Vec<f64> {
        let dt = self.dt_ps();
        (0..self.n_time)
            .map(|i| (i as f64 - self.n_time as f64 / 2.0) * dt)
            .collect()
    }

    /// `max_walkoff_ps` is the largest |δ|·L among the co-propagating
    /// waves; the window must hold 6× the pump FWHM plus that walk-off.
    pub fn validate(&self, pump_fwhm_ps: f64, max_walkoff_ps: f64) -> Result<()> {
        if self.n_time < 1024 || !self.n_time.is_power_of_two() {
            return Err(Error::Config(format!(
                "n_time must be a power of two >= 1024, got {}",
                self.n_time
            )));
        }
        if self.n_z < 100 {
            return Err(Error::Config(format!(
                "n_z must be >= 100, got {}",
                self.n_z
            )));
        }
        let needed = 6.0 * pump_fwhm_ps + max_walkoff_ps;
        if !(self.time_window_ps >= needed) {
            return Err(Error::Config(format!(
                "time window {} ps too small: needs >= {:.2} ps (6x pump FWHM {} ps + walk-off {:.2} ps)",
                self.time_window_ps, needed, pump_fwhm_ps, max_walkoff_ps
            )));
        }
        Ok(())
    }
}

/// Sample the complex envelope of a pulse on the grid. Peak of |A|² is
/// the peak power, FWHM of |A|² matches the spec, centered at `delay`.
pub fn make_pulse(spec: &PulseSpec, grid: &GridSpec) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let amp = (spec.peak_power_mw * 1e-3).sqrt(); // √W
    let t = grid.time_axis();
    let env: Vec<Complex64> = match spec.shape {
        PulseShape::Cw => t.iter().map(|_| Complex64::new(amp, 0.0)).collect(),
        PulseShape::Sech2 => {
            let tau0 = spec.tau0_ps();
            t.iter()
                .map(|&ti| Complex64::new(amp / ((ti - spec.delay_ps) / tau0).cosh(), 0.0))
                .collect()
        }
        PulseShape::Gaussian => {
            let k = 2.0 * std::f64::consts::LN_2 / (spec.fwhm_ps * spec.fwhm_ps);
            t.iter()
                .map(|&ti| {
                    let u = ti - spec.delay_ps;
                    Complex64::new(amp * (-k * u * u).exp(), 0.0)
                })
                .collect()
        }
    };
    if spec.shape != PulseShape::Cw && amp > 0.0 {
        let edge = env[0].norm().max(env[grid.n_time - 1].norm());
        if edge > EDGE_TOL * amp {
            return Err(Error::Config(format!(
                "pulse does not fit the window: edge amplitude {:.2e} of peak (fwhm {} ps, delay {} ps, window {} ps)",
                edge / amp,
                spec.fwhm_ps,
                spec.delay_ps,
                grid.time_window_ps
            )));
        }
    }
    Ok(env)
}

/// Group-velocity-mismatch values a propagation ran with, ps/mm,
/// relative to the pump.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GvmSet {
    pub signal_ps_per_mm: f64,
    pub sfg_ps_per_mm: f64,
}

/// Checkpointed envelopes of the three waves along the crystal.
#[derive(Debug, Clone)]
pub struct FieldRecord {
    pub time_ps: Vec<f64>,
    pub z_mm: Vec<f64>,
    /// `[checkpoint][time]`, √W.
    pub pump: Vec<Vec<Complex64>>,
    pub signal: Vec<Vec<Complex64>>,
    pub sfg: Vec<Vec<Complex64>>,
    pub crystal: CrystalSpec,
    pub pump_spec: PulseSpec,
    pub signal_spec: PulseSpec,
    pub gvm: GvmSet,
    pub lambda_sfg_nm: f64,
    /// |A_s|² of the input signal, W (the CW background the dip is
    /// carved into).
    pub signal_input_power_w: f64,
}

impl FieldRecord {
    pub fn dt_ps(&self) -> f64 {
        self.time_ps[1] - self.time_ps[0]
    }

    /// Pulse energy ∫|A|²dt of a wave at a checkpoint, pJ (W·ps).
    pub fn energy_pj(&self, wave: &[Vec<Complex64>], checkpoint: usize) -> f64 {
        wave[checkpoint].iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dt_ps()
    }

    pub fn sfg_output_energy_pj(&self) -> f64 {
        self.energy_pj(&self.sfg, self.z_mm.len() - 1)
    }

    /// Manley–Rowe photon-flux sums (arbitrary common scale):
    /// (Σ|A_s|²λ_s + Σ|A_f|²λ_f, Σ|A_p|²λ_p + Σ|A_f|²λ_f).
    pub fn photon_sums(&self, checkpoint: usize) -> (f64, f64) {
        let lam_s = self.signal_spec.center_wavelength_nm;
        let lam_p = self.pump_spec.center_wavelength_nm;
        let lam_f = self.lambda_sfg_nm;
        let sum = |wave: &[Vec<Complex64>]| -> f64 {
            wave[checkpoint].iter().map(|a| a.norm_sqr()).sum::<f64>()
        };
        let s = sum(&self.signal);
        let p = sum(&self.pump);
        let f = sum(&self.sfg);
        (s * lam_s + f * lam_f, p * lam_p + f * lam_f)
    }
}

/// Options beyond the common case; `Default` is the production path.
#[derive(Debug, Clone, Copy)]
pub struct PropagateOptions {
    /// Residual wave-vector mismatch, rad/mm (0 = exact QPM).
    pub delta_k_rad_per_mm: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            delta_k_rad_per_mm: 0.0,
        }
    }
}

struct SpectralShift {
    phase: Vec<Complex64>,
}

impl SpectralShift {
    /// Phase ramp that delays a field by `shift_ps` when applied in the
    /// frequency domain.
    fn new(n: usize, dt: f64, shift_ps: f64) -> SpectralShift {
        let phase = (0..n)
            .map(|k| {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let omega = 2.0 * std::f64::consts::PI * kk / (n as f64 * dt);
                Complex64::from_polar(1.0, -omega * shift_ps)
            })
            .collect();
        SpectralShift { phase }
    }

    fn is_identity(&self) -> bool {
        self.phase.iter().all(|p| *p == Complex64::new(1.0, 0.0))
    }
}

/// Integrate the coupled-wave equations and return the checkpointed
/// record. `checkpoints` counts stored z positions including z = 0 and
/// z = L (minimum 2).
pub fn propagate(
    crystal: &CrystalSpec,
    pump: &PulseSpec,
    signal: &PulseSpec,
    grid: &GridSpec,
    model: &SellmeierModel,
    checkpoints: usize,
    options: &PropagateOptions,
) -> Result<FieldRecord> {
    crystal.validate()?;
    pump.validate()?;
    signal.validate()?;
    if checkpoints < 2 {
        return Err(Error::Config("need at least 2 checkpoints (z=0, z=L)".into()));
    }
    let t_c = crystal.temperature_c;
    let lam_p = pump.center_wavelength_nm;
    let lam_s = signal.center_wavelength_nm;
    let lam_f = sfg_wavelength(lam_s, lam_p)?;

    let slow_p = model.group_slowness(lam_p, t_c)?;
    let slow_s = model.group_slowness(lam_s, t_c)?;
    let slow_f = model.group_slowness(lam_f, t_c)?;
    let gvm = GvmSet {
        signal_ps_per_mm: slow_s - slow_p,
        sfg_ps_per_mm: slow_f - slow_p,
    };
    let max_walkoff = (gvm.signal_ps_per_mm.abs())
        .max(gvm.sfg_ps_per_mm.abs())
        * crystal.length_mm;
    let pump_fwhm = if pump.shape == PulseShape::Cw { 0.0 } else { pump.fwhm_ps };
    grid.validate(pump_fwhm, max_walkoff)?;

    let n = grid.n_time;
    let dt = grid.dt_ps();
    let dz = crystal.length_mm / grid.n_z as f64;

    let kappa_f = crystal.effective_coupling;
    let kappa_s = kappa_f * lam_f / lam_s;
    let kappa_p = kappa_f * lam_f / lam_p;
    let delta_k = options.delta_k_rad_per_mm;

    let mut a_p = make_pulse(pump, grid)?;
    let mut a_s = make_pulse(signal, grid)?;
    let mut a_f = vec![Complex64::new(0.0, 0.0); n];
    let signal_input_power_w = signal.peak_power_mw * 1e-3;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len())];
    let shift_s = SpectralShift::new(n, dt, gvm.signal_ps_per_mm * dz / 2.0);
    let shift_f = SpectralShift::new(n, dt, gvm.sfg_ps_per_mm * dz / 2.0);
    let inv_n = 1.0 / n as f64;

    let mut advect = |field: &mut Vec<Complex64>, shift: &SpectralShift| {
        if shift.is_identity() {
            return;
        }
        fft.process_with_scratch(field, &mut scratch);
        for (a, p) in field.iter_mut().zip(&shift.phase) {
            *a *= p;
        }
        ifft.process_with_scratch(field, &mut scratch);
        for a in field.iter_mut() {
            *a *= inv_n;
        }
    };

    // checkpoint step indices, evenly spread over [0, n_z]
    let cp_steps: Vec<usize> = (0..checkpoints)
        .map(|j| (j * grid.n_z) / (checkpoints - 1))
        .collect();
    let mut rec_pump = Vec::with_capacity(checkpoints);
    let mut rec_signal = Vec::with_capacity(checkpoints);
    let mut rec_sfg = Vec::with_capacity(checkpoints);
    let mut z_mm = Vec::with_capacity(checkpoints);
    let store = |step: usize,
                     a_p: &Vec<Complex64>,
                     a_s: &Vec<Complex64>,
                     a_f: &Vec<Complex64>,
                     z_mm: &mut Vec<f64>,
                     rp: &mut Vec<Vec<Complex64>>,
                     rs: &mut Vec<Vec<Complex64>>,
                     rf: &mut Vec<Vec<Complex64>>| {
        for (j, &cs) in cp_steps.iter().enumerate() {
            if cs == step && z_mm.len() <= j {
                z_mm.push(step as f64 * dz);
                rp.push(a_p.clone());
                rs.push(a_s.clone());
                rf.push(a_f.clone());
            }
        }
    };
    store(0, &a_p, &a_s, &a_f, &mut z_mm, &mut rec_pump, &mut rec_signal, &mut rec_sfg);

    // Manley–Rowe references
    let photon_sum = |a_p: &[Complex64], a_s: &[Complex64], a_f: &[Complex64]| {
        let s: f64 = a_s.iter().map(|a| a.norm_sqr()).sum();
        let p: f64 = a_p.iter().map(|a| a.norm_sqr()).sum();
        let f: f64 = a_f.iter().map(|a| a.norm_sqr()).sum();
        (s * lam_s + f * lam_f, p * lam_p + f * lam_f)
    };
    let (mr1_0, mr2_0) = photon_sum(&a_p, &a_s, &a_f);

    let mut d_p = vec![Complex64::default(); n];
    let mut d_s = vec![Complex64::default(); n];
    let mut d_f = vec![Complex64::default(); n];
    let mut acc_p = vec![Complex64::default(); n];
    let mut acc_s = vec![Complex64::default(); n];
    let mut acc_f = vec![Complex64::default(); n];
    let mut tmp_p = vec![Complex64::default(); n];
    let mut tmp_s = vec![Complex64::default(); n];
    let mut tmp_f = vec![Complex64::default(); n];

    for step in 0..grid.n_z {
        let z0 = step as f64 * dz;
        advect(&mut a_s, &shift_s);
        advect(&mut a_f, &shift_f);

        // RK4 on dA/dz = N(A, z) over [z0, z0+dz], pointwise in t.
        let rhs = |p: &[Complex64],
                   s: &[Complex64],
                   f: &[Complex64],
                   z: f64,
                   out_p: &mut [Complex64],
                   out_s: &mut [Complex64],
                   out_f: &mut [Complex64]| {
            let ph = Complex64::from_polar(1.0, -delta_k * z);
            let ph_c = ph.conj();
            for i in 0..n {
                let i_unit = Complex64::new(0.0, 1.0);
                out_p[i] = i_unit * kappa_p * f[i] * s[i].conj() * ph;
                out_s[i] = i_unit * kappa_s * f[i] * p[i].conj() * ph;
                out_f[i] = i_unit * kappa_f * s[i] * p[i] * ph_c;
            }
        };
        // k1
        rhs(&a_p, &a_s, &a_f, z0, &mut d_p, &mut d_s, &mut d_f);
        for i in 0..n {
            acc_p[i] = d_p[i];
            acc_s[i] = d_s[i];
            acc_f[i] = d_f[i];
            tmp_p[i] = a_p[i] + d_p[i] * (dz / 2.0);
            tmp_s[i] = a_s[i] + d_s[i] * (dz / 2.0);
            tmp_f[i] = a_f[i] + d_f[i] * (dz / 2.0);
        }
        // k2
        rhs(&tmp_p, &tmp_s, &tmp_f, z0 + dz / 2.0, &mut d_p, &mut d_s, &mut d_f);
        for i in 0..n {
            acc_p[i] += d_p[i] * 2.0;
            acc_s[i] += d_s[i] * 2.0;
            acc_f[i] += d_f[i] * 2.0;
            tmp_p[i] = a_p[i] + d_p[i] * (dz / 2.0);
            tmp_s[i] = a_s[i] + d_s[i] * (dz / 2.0);
            tmp_f[i] = a_f[i] + d_f[i] * (dz / 2.0);
        }
        // k3
        rhs(&tmp_p, &tmp_s, &tmp_f, z0 + dz / 2.0, &mut d_p, &mut d_s, &mut d_f);
        for i in 0..n {
            acc_p[i] += d_p[i] * 2.0;
            acc_s[i] += d_s[i] * 2.0;
            acc_f[i] += d_f[i] * 2.0;
            tmp_p[i] = a_p[i] + d_p[i] * dz;
            tmp_s[i] = a_s[i] + d_s[i] * dz;
            tmp_f[i] = a_f[i] + d_f[i] * dz;
        }
        // k4
        rhs(&tmp_p, &tmp_s, &tmp_f, z0 + dz, &mut d_p, &mut d_s, &mut d_f);
        for i in 0..n {
            a_p[i] += (acc_p[i] + d_p[i]) * (dz / 6.0);
            a_s[i] += (acc_s[i] + d_s[i]) * (dz / 6.0);
            a_f[i] += (acc_f[i] + d_f[i]) * (dz / 6.0);
        }

        advect(&mut a_s, &shift_s);
        advect(&mut a_f, &shift_f);
        store(step + 1, &a_p, &a_s, &a_f, &mut z_mm, &mut rec_pump, &mut rec_signal, &mut rec_sfg);
    }

    // Manley–Rowe drift check.
    let (mr1, mr2) = photon_sum(&a_p, &a_s, &a_f);
    let drift1 = if mr1_0 > 0.0 { (mr1 - mr1_0).abs() / mr1_0 } else { 0.0 };
    let drift2 = if mr2_0 > 0.0 { (mr2 - mr2_0).abs() / mr2_0 } else { 0.0 };
    if drift1 > MANLEY_ROWE_TOL || drift2 > MANLEY_ROWE_TOL {
        return Err(Error::SolverAccuracy(format!(
            "Manley-Rowe drift {:.2e}/{:.2e} exceeds {MANLEY_ROWE_TOL:.0e}; increase n_z (currently {})",
            drift1, drift2, grid.n_z
        )));
    }

    // Wraparound guard: pulsed fields must stay clear of the grid
    // edges; for the CW signal the guard applies to the carved dip.
    let edge_violation = |field: &[Complex64]| -> bool {
        let max = field.iter().map(|a| a.norm()).fold(0.0f64, f64::max);
        if max <= 0.0 {
            return false;
        }
        field[0].norm() > EDGE_TOL * max || field[n - 1].norm() > EDGE_TOL * max
    };
    if pump.shape != PulseShape::Cw && edge_violation(&a_p) {
        return Err(Error::Config("pump envelope reached the grid edge (wraparound); enlarge the time window".into()));
    }
    if edge_violation(&a_f) {
        return Err(Error::Config("SFG envelope reached the grid edge (wraparound); enlarge the time window".into()));
    }
    match signal.shape {
        PulseShape::Cw => {
            let dip: Vec<f64> = a_s
                .iter()
                .map(|a| (signal_input_power_w - a.norm_sqr()).max(0.0))
                .collect();
            let max = dip.iter().cloned().fold(0.0f64, f64::max);
            if max > 0.0 && (dip[0] > EDGE_TOL * max || dip[n - 1] > EDGE_TOL * max) {
                return Err(Error::Config("signal dip reached the grid edge (wraparound); enlarge the time window".into()));
            }
        }
        _ => {
            if edge_violation(&a_s) {
                return Err(Error::Config("signal envelope reached the grid edge (wraparound); enlarge the time window".into()));
            }
        }
    }

    Ok(FieldRecord {
        time_ps: grid.time_axis(),
        z_mm,
        pump: rec_pump,
        signal: rec_signal,
        sfg: rec_sfg,
        crystal: crystal.clone(),
        pump_spec: *pump,
        signal_spec: *signal,
        gvm,
        lambda_sfg_nm: lam_f,
        signal_input_power_w,
    })
}

/// Normalized instrument response h(t) ≥ 0, ∫h dt = 1, with its FWHM
/// (the time resolution) and the count of connected lobes above half
/// maximum (saturated gates can back-convert and split).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateResponse {
    pub time_ps: Vec<f64>,
    pub h: Vec<f64>,
    pub fwhm_ps: f64,
    pub lobes: usize,
}

impl GateResponse {
    pub fn dt_ps(&self) -> f64 {
        self.time_ps[1] - self.time_ps[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_ps.len() != self.h.len() || self.time_ps.len() < 8 {
            return Err(Error::Config("gate response: bad grid".into()));
        }
        if self.h.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("gate response must be nonnegative".into()));
        }
        let area: f64 = self.h.iter().sum::<f64>() * self.dt_ps();
        if (area - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "gate response area {area} is not 1"
            )));
        }
        if !(self.fwhm_ps > 0.0) {
            return Err(Error::Config("gate response fwhm must be positive".into()));
        }
        Ok(())
    }
}

/// FWHM between the outermost half-maximum crossings, by linear
/// interpolation; also returns the number of connected regions above
/// half maximum.
pub fn fwhm_outer(time: &[f64], y: &[f64]) -> Option<(f64, usize)> {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let half = max / 2.0;
    let above: Vec<bool> = y.iter().map(|&v| v >= half).collect();
    let first = above.iter().position(|&b| b)?;
    let last = above.iter().rposition(|&b| b)?;
    let lobes = above
        .windows(2)
        .filter(|w| !w[0] && w[1])
        .count()
        .max(usize::from(above[0]));
    let left = if first == 0 {
        time[0]
    } else {
        let (y0, y1) = (y[first - 1], y[first]);
        time[first - 1] + (half - y0) / (y1 - y0) * (time[first] - time[first - 1])
    };
    let right = if last == y.len() - 1 {
        time[last]
    } else {
        let (y0, y1) = (y[last], y[last + 1]);
        time[last] + (half - y0) / (y1 - y0) * (time[last + 1] - time[last])
    };
    Some((right - left, lobes))
}

/// Extract the instrument response from a CW-signal run:
/// h(t) ∝ max(P_in − |A_s(L,t)|², 0), normalized to unit area.
pub fn gate_response(record: &FieldRecord) -> Result<GateResponse> {
    if record.signal_spec.shape != PulseShape::Cw {
        return Err(Error::Config(
            "gate response requires a CW-signal propagation record".into(),
        ));
    }
    let last = record.z_mm.len() - 1;
    let p_in = record.signal_input_power_w;
    let dip: Vec<f64> = record.signal[last]
        .iter()
        .map(|a| (p_in - a.norm_sqr()).max(0.0))
        .collect();
    let dt = record.dt_ps();
    let area: f64 = dip.iter().sum::<f64>() * dt;
    let max = dip.iter().cloned().fold(0.0f64, f64::max);
    if !(area > 0.0) || max < 1e-12 * p_in {
        return Err(Error::Config(
            "empty gate response: no conversion dip in the signal envelope".into(),
        ));
    }
    let h: Vec<f64> = dip.iter().map(|&d| d / area).collect();
    let (fwhm_ps, lobes) =
        fwhm_outer(&record.time_ps, &h).ok_or_else(|| Error::Config("empty gate response".into()))?;
    Ok(GateResponse {
        time_ps: record.time_ps.clone(),
        h,
        fwhm_ps,
        lobes,
    })
}

/// One row of a pump-power sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub power_mw: f64,
    pub sfg_energy_pj: f64,
    pub resolution_fwhm_ps: f64,
}

/// Pump-power sweep outcome; a per-point solver error aborts the sweep
/// but the rows computed so far are preserved.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub aborted: Option<(f64, String)>,
}

/// Run the solver at each average pump power (mW, positive ascending)
/// and tabulate SFG output energy and time resolution.
pub fn sweep_pump_power(
    powers_mw: &[f64],
    crystal: &CrystalSpec,
    signal: &PulseSpec,
    grid: &GridSpec,
    model: &SellmeierModel,
    pump_wavelength_nm: f64,
) -> Result<SweepResult> {
    if powers_mw.is_empty() {
        return Err(Error::Config("empty power list".into()));
    }
    if powers_mw.windows(2).any(|w| w[1] <= w[0]) || powers_mw[0] <= 0.0 {
        return Err(Error::Config(
            "powers must be positive and strictly ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(powers_mw.len());
    for &p in powers_mw {
        let pump = PulseSpec::paper_pump(p, pump_wavelength_nm);
        let run = propagate(crystal, &pump, signal, grid, model, 2, &PropagateOptions::default())
            .and_then(|rec| {
                let energy = rec.sfg_output_energy_pj();
                gate_response(&rec).map(|g| SweepPoint {
                    power_mw: p,
                    sfg_energy_pj: energy,
                    resolution_fwhm_ps: g.fwhm_ps,
                })
            });
        match run {
            Ok(pt) => points.push(pt),
            Err(e) => {
                return Ok(SweepResult {
                    points,
                    aborted: Some((p, e.to_string())),
                })
            }
        }
    }
    Ok(SweepResult {
        points,
        aborted: None,
    })
}

/// Result of [`fit_saturation`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaturationFit {
    pub kappa: f64,
    /// Free global scale mapping model SFG energies onto the measured
    /// output units.
    pub scale: f64,
    /// RMS relative residual at the optimum.
    pub rms_relative_residual: f64,
}

/// Fit the effective coupling κ to a measured saturation curve
/// `(average pump power mW, output in arbitrary units)`, allowing one
/// free global scale factor. Deterministic golden-section search on
/// the relative-residual objective.
pub fn fit_saturation(
    measured: &[(f64, f64)],
    initial_kappa: f64,
    crystal: &CrystalSpec,
    signal: &PulseSpec,
    grid: &GridSpec,
    model: &SellmeierModel,
    pump_wavelength_nm: f64,
) -> Result<SaturationFit> {
    if measured.len() < 4 {
        return Err(Error::Config(format!(
            "saturation fit needs >= 4 points, got {}",
            measured.len()
        )));
    }
    if measured.iter().any(|&(p, _)| !(p > 0.0)) {
        return Err(Error::Config("powers must be positive".into()));
    }
    if measured.iter().all(|&(_, y)| y == 0.0) {
        return Err(Error::Fit {
            message: "all measured outputs are zero".into(),
            residual: f64::NAN,
            iterations: 0,
        });
    }
    if measured.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(Error::Config(
            "measured outputs must be positive (saturation curve)".into(),
        ));
    }
    if !(initial_kappa > 0.0) {
        return Err(Error::Config("initial kappa must be positive".into()));
    }
    // Knee coverage: the per-photon conversion must visibly drop across
    // the measured range, otherwise κ and the scale are degenerate.
    let mut sorted: Vec<(f64, f64)> = measured.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let r_first = sorted[0].1 / sorted[0].0;
    let r_last = sorted[sorted.len() - 1].1 / sorted[sorted.len() - 1].0;
    if r_last > 0.9 * r_first {
        return Err(Error::Fit {
            message: format!(
                "measured points do not span the saturation knee (output/power falls only {:.1}%)",
                100.0 * (1.0 - r_last / r_first)
            ),
            residual: f64::NAN,
            iterations: 0,
        });
    }

    let powers: Vec<f64> = sorted.iter().map(|&(p, _)| p).collect();
    let outputs: Vec<f64> = sorted.iter().map(|&(_, y)| y).collect();
    let model_outputs = |kappa: f64| -> Result<Vec<f64>> {
        let mut c = crystal.clone();
        c.effective_coupling = kappa;
        let sweep = sweep_pump_power(&powers, &c, signal, grid, model, pump_wavelength_nm)?;
        if let Some((p, msg)) = sweep.aborted {
            return Err(Error::SolverAccuracy(format!(
                "sweep aborted at {p} mW during fit: {msg}"
            )));
        }
        Ok(sweep.points.iter().map(|pt| pt.sfg_energy_pj).collect())
    };
    // cost(κ) with the optimal scale eliminated in closed form:
    // minimize Σ (s·mᵢ/yᵢ − 1)² over s gives s* = Σrᵢ / Σrᵢ².
    let cost_of = |kappa: f64| -> Result<(f64, f64)> {
        let m = model_outputs(kappa)?;
        let r: Vec<f64> = m.iter().zip(&outputs).map(|(mi, yi)| mi / yi).collect();
        let sum_r: f64 = r.iter().sum();
        let sum_r2: f64 = r.iter().map(|x| x * x).sum();
        if !(sum_r2 > 0.0) {
            return Ok((f64::INFINITY, 0.0));
        }
        let s = sum_r / sum_r2;
        let cost: f64 = r.iter().map(|ri| (s * ri - 1.0).powi(2)).sum();
        Ok((cost, s))
    };

    let (lo, hi) = (initial_kappa / 8.0, initial_kappa * 8.0);
    let mut failure: Option<Error> = None;
    let (kappa, _) = crate::fit::minimize_scalar(
        |k| match cost_of(k) {
            Ok((c, _)) => c,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        lo,
        hi,
        initial_kappa * 1e-4,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (cost, scale) = cost_of(kappa)?;
    let rms = (cost / measured.len() as f64).sqrt();
    if !rms.is_finite() || rms > 0.2 {
        return Err(Error::Fit {
            message: format!("saturation model does not describe the data (rms relative residual {rms:.3})"),
            residual: rms,
            iterations: 0,
        });
    }
    Ok(SaturationFit {
        kappa,
        scale,
        rms_relative_residual: rms,
    })
}

/// Bisect κ so the gate-response FWHM at `average_power_mw` equals
/// `target_fwhm_ps`. This is how [`CALIBRATED_KAPPA`] was produced
/// (1.5 mW, 4.0 ps, default grid, paper wavelengths).
pub fn calibrate_kappa_to_resolution(
    target_fwhm_ps: f64,
    average_power_mw: f64,
    crystal: &CrystalSpec,
    signal: &PulseSpec,
    grid: &GridSpec,
    model: &SellmeierModel,
    pump_wavelength_nm: f64,
) -> Result<f64> {
    let fwhm_of = |kappa: f64| -> Result<f64> {
        let mut c = crystal.clone();
        c.effective_coupling = kappa;
        let pump = PulseSpec::paper_pump(average_power_mw, pump_wavelength_nm);
        let rec = propagate(&c, &pump, signal, grid, model, 2, &PropagateOptions::default())?;
        Ok(gate_response(&rec)?.fwhm_ps)
    };
    let (mut lo, mut hi) = (0.01, 0.4);
    let f_lo = fwhm_of(lo)? - target_fwhm_ps;
    let f_hi = fwhm_of(hi)? - target_fwhm_ps;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoRoot(format!(
            "target resolution {target_fwhm_ps} ps not bracketed by kappa in [{lo}, {hi}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = fwhm_of(mid)? - target_fwhm_ps;
        if fm.abs() < 1e-4 || (hi - lo) < 1e-6 {
            return Ok(mid);
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{solve_qpm_pump, DEFAULT_PUMP_BRACKET_NM};
    use approx::assert_relative_eq;

    fn model() -> &'static SellmeierModel {
        SellmeierModel::default_mgo_cln()
    }

    fn paper_crystal() -> CrystalSpec {
        CrystalSpec::paper_default()
    }

    fn paper_pump_wavelength() -> f64 {
        solve_qpm_pump(812.0, &paper_crystal(), model(), DEFAULT_PUMP_BRACKET_NM)
            .unwrap()
            .lambda_pump_nm
    }

    fn cw_signal() -> PulseSpec {
        PulseSpec::cw(1e-3, 812.0) // 1 µW
    }

    fn paper_record(avg_mw: f64) -> FieldRecord {
        let pump = PulseSpec::paper_pump(avg_mw, paper_pump_wavelength());
        propagate(
            &paper_crystal(),
            &pump,
            &cw_signal(),
            &GridSpec::default(),
            model(),
            2,
            &PropagateOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn sech2_width_parameter() {
        let spec = PulseSpec {
            shape: PulseShape::Sech2,
            fwhm_ps: 2.5,
            peak_power_mw: 1.0,
            center_wavelength_nm: 990.0,
            delay_ps: 0.0,
        };
        assert_relative_eq!(spec.tau0_ps(), 1.418, epsilon = 1e-3);
        assert_relative_eq!(
            spec.tau0_ps(),
            2.5 / (2.0 * (1.0 + 2.0f64.sqrt()).ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cw_pulse_is_flat_at_requested_power() {
        let grid = GridSpec::default();
        let env = make_pulse(&PulseSpec::cw(1e-3, 812.0), &grid).unwrap();
        for a in &env {
            assert_relative_eq!(a.norm_sqr(), 1e-6, max_relative = 1e-12); // 1 µW in W
        }
    }

    #[test]
    fn measured_pulse_fwhm_matches_spec() {
        let grid = GridSpec::default();
        for shape in [PulseShape::Sech2, PulseShape::Gaussian] {
            let spec = PulseSpec {
                shape,
                fwhm_ps: 2.5,
                peak_power_mw: 7000.0,
                center_wavelength_nm: 990.0,
                delay_ps: 0.0,
            };
            let env = make_pulse(&spec, &grid).unwrap();
            let intensity: Vec<f64> = env.iter().map(|a| a.norm_sqr()).collect();
            let (fwhm, lobes) = fwhm_outer(&grid.time_axis(), &intensity).unwrap();
            assert!((fwhm - 2.5).abs() <= grid.dt_ps(), "fwhm {fwhm}");
            assert_eq!(lobes, 1);
            let peak = intensity.iter().cloned().fold(0.0f64, f64::max);
            assert_relative_eq!(peak, 7.0, max_relative = 1e-9); // 7 W
        }
    }

    #[test]
    fn pulse_that_does_not_fit_is_config_error() {
        let grid = GridSpec::default();
        let spec = PulseSpec {
            shape: PulseShape::Sech2,
            fwhm_ps: 2.5,
            peak_power_mw: 1.0,
            center_wavelength_nm: 990.0,
            delay_ps: 48.0, // off the grid
        };
        assert!(make_pulse(&spec, &grid).is_err());
    }

    #[test]
    fn average_to_peak_power_conversion() {
        let pump = PulseSpec::paper_pump(1.5, 990.0);
        // 1.5 mW / 76 MHz spread over ∫sech² dt = 2τ₀ = 2.8366 ps
        assert_relative_eq!(pump.peak_power_mw, 6958.0, max_relative = 1e-3);
    }

    #[test]
    fn zero_pump_leaves_signal_untouched() {
        let pump = PulseSpec {
            shape: PulseShape::Sech2,
            fwhm_ps: 2.5,
            peak_power_mw: 0.0,
            center_wavelength_nm: paper_pump_wavelength(),
            delay_ps: 0.0,
        };
        let rec = propagate(
            &paper_crystal(),
            &pump,
            &cw_signal(),
            &GridSpec::default(),
            model(),
            2,
            &PropagateOptions::default(),
        )
        .unwrap();
        let last = rec.z_mm.len() - 1;
        for (a_in, a_out) in rec.signal[0].iter().zip(&rec.signal[last]) {
            assert_relative_eq!(a_in.norm_sqr(), a_out.norm_sqr(), max_relative = 1e-12);
        }
        assert!(rec.sfg[last].iter().all(|a| a.norm() == 0.0));
        assert!(rec.pump[last].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn paper_point_dip_overlap_and_sfg_stretch() {
        let rec = paper_record(1.5);
        let last = rec.z_mm.len() - 1;
        // the dip stays overlapped with the pump: dip centroid within
        // the pump fwhm of the pump centroid
        let dip: Vec<f64> = rec.signal[last]
            .iter()
            .map(|a| (rec.signal_input_power_w - a.norm_sqr()).max(0.0))
            .collect();
        let centroid = |y: &[f64]| -> f64 {
            let w: f64 = y.iter().sum();
            y.iter()
                .zip(&rec.time_ps)
                .map(|(yi, ti)| yi * ti)
                .sum::<f64>()
                / w
        };
        let pump_i: Vec<f64> = rec.pump[last].iter().map(|a| a.norm_sqr()).collect();
        assert!((centroid(&dip) - centroid(&pump_i)).abs() < 2.5);
        // SFG pulse is longer than the pump
        let sfg_i: Vec<f64> = rec.sfg[last].iter().map(|a| a.norm_sqr()).collect();
        let (sfg_fwhm, _) = fwhm_outer(&rec.time_ps, &sfg_i).unwrap();
        let (pump_fwhm, _) = fwhm_outer(&rec.time_ps, &pump_i).unwrap();
        assert!(sfg_fwhm > pump_fwhm, "sfg {sfg_fwhm} vs pump {pump_fwhm}");
        assert!(sfg_fwhm > 2.5);
    }

    #[test]
    fn manley_rowe_conserved_and_pump_undepleted() {
        let rec = paper_record(1.5);
        let (s0, p0) = rec.photon_sums(0);
        let last = rec.z_mm.len() - 1;
        let (s1, p1) = rec.photon_sums(last);
        assert!(((s1 - s0) / s0).abs() < 1e-9, "MR drift {}", (s1 - s0) / s0);
        assert!(((p1 - p0) / p0).abs() < 1e-9);
        let depletion = 1.0 - rec.energy_pj(&rec.pump, last) / rec.energy_pj(&rec.pump, 0);
        assert!(depletion.abs() < 0.01, "pump depleted by {depletion}");
    }

    #[test]
    fn halving_step_changes_little_and_order_two() {
        // Grid-refinement convergence on ‖A_f(L,·)‖: coarse steps so the
        // splitting error is well above roundoff.
        let pump = PulseSpec::paper_pump(1.5, paper_pump_wavelength());
        let run = |n_z: usize| {
            let grid = GridSpec {
                n_z,
                ..GridSpec::default()
            };
            propagate(
                &paper_crystal(),
                &pump,
                &cw_signal(),
                &grid,
                model(),
                2,
                &PropagateOptions::default(),
            )
            .unwrap()
        };
        let l2_diff = |a: &FieldRecord, b: &FieldRecord| -> f64 {
            let la = a.z_mm.len() - 1;
            let lb = b.z_mm.len() - 1;
            let num: f64 = a.sfg[la]
                .iter()
                .zip(&b.sfg[lb])
                .map(|(x, y)| (x - y).norm_sqr())
                .sum();
            let den: f64 = b.sfg[lb].iter().map(|y| y.norm_sqr()).sum();
            (num / den).sqrt()
        };
        let coarse = run(100);
        let mid = run(200);
        let fine = run(400);
        let finest = run(800);
        let e1 = l2_diff(&coarse, &finest);
        let e2 = l2_diff(&mid, &finest);
        let order = (e1 / e2).log2();
        assert!(order >= 2.0 - 0.2, "observed order {order}");
        // defaults: halving the step (250 → 500) moves the answer < 1e-4
        let d_default = l2_diff(&run(250), &run(500));
        assert!(d_default < 1e-4, "default-grid refinement moves {d_default}");
        let _ = fine;
    }

    #[test]
    fn zero_coupling_is_pure_advection() {
        let mut crystal = paper_crystal();
        crystal.effective_coupling = 0.0;
        let signal = PulseSpec {
            shape: PulseShape::Sech2,
            fwhm_ps: 3.0,
            peak_power_mw: 1e-3,
            center_wavelength_nm: 812.0,
            delay_ps: -5.0,
        };
        let pump = PulseSpec::paper_pump(1.5, paper_pump_wavelength());
        let grid = GridSpec::default();
        let rec = propagate(&crystal, &pump, &signal, &grid, model(), 2, &PropagateOptions::default()).unwrap();
        let last = rec.z_mm.len() - 1;
        let shifted = make_pulse(
            &PulseSpec {
                delay_ps: signal.delay_ps + rec.gvm.signal_ps_per_mm * crystal.length_mm,
                ..signal
            },
            &grid,
        )
        .unwrap();
        let max = shifted.iter().map(|a| a.norm()).fold(0.0f64, f64::max);
        let err = rec.signal[last]
            .iter()
            .zip(&shifted)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-8 * max, "advection error {err}");
    }

    #[test]
    fn time_shift_covariance() {
        // Delaying the pump by a grid-aligned Δ shifts dip and SFG by Δ.
        let grid = GridSpec::default();
        let delta = grid.dt_ps() * 64.0; // grid-aligned, 2.5 ps
        let lam_p = paper_pump_wavelength();
        let mut pump = PulseSpec::paper_pump(1.5, lam_p);
        let rec0 = propagate(&paper_crystal(), &pump, &cw_signal(), &grid, model(), 2, &PropagateOptions::default()).unwrap();
        pump.delay_ps = delta;
        let rec1 = propagate(&paper_crystal(), &pump, &cw_signal(), &grid, model(), 2, &PropagateOptions::default()).unwrap();
        let g0 = gate_response(&rec0).unwrap();
        let g1 = gate_response(&rec1).unwrap();
        let shift = (delta / grid.dt_ps()).round() as usize;
        let n = g0.h.len();
        let mut max_err = 0.0f64;
        for i in 0..n - shift {
            max_err = max_err.max((g1.h[i + shift] - g0.h[i]).abs());
        }
        let max_h = g0.h.iter().cloned().fold(0.0f64, f64::max);
        assert!(max_err < 1e-9 * max_h, "dip did not shift rigidly: {max_err}");
        assert_relative_eq!(g0.fwhm_ps, g1.fwhm_ps, epsilon = 1e-9);
    }

    #[test]
    fn gate_response_at_operating_point() {
        let rec = paper_record(1.5);
        let gate = gate_response(&rec).unwrap();
        assert!(
            (gate.fwhm_ps - 4.0).abs() < 0.5,
            "resolution {} ps",
            gate.fwhm_ps
        );
        assert_eq!(gate.lobes, 1);
        let area: f64 = gate.h.iter().sum::<f64>() * gate.dt_ps();
        assert!((area - 1.0).abs() < 1e-9);
        gate.validate().unwrap();
    }

    #[test]
    fn gate_response_low_power_limit() {
        // well below saturation the gate tends to the quadrature-like
        // combination of pump width and GVM spread, narrower than at
        // the operating point
        let rec = paper_record(0.015);
        let gate = gate_response(&rec).unwrap();
        let rec_op = paper_record(1.5);
        let gate_op = gate_response(&rec_op).unwrap();
        assert!(gate.fwhm_ps < gate_op.fwhm_ps);
        let gvm_spread = rec.gvm.signal_ps_per_mm * rec.crystal.length_mm;
        let quad = (2.5f64.powi(2) + gvm_spread.powi(2)).sqrt();
        assert!(
            (gate.fwhm_ps - quad).abs() / quad < 0.25,
            "low-power fwhm {} vs quadrature {quad}",
            gate.fwhm_ps
        );
    }

    #[test]
    fn gate_response_requires_cw_and_conversion() {
        // pulsed signal record is rejected
        let pump = PulseSpec::paper_pump(1.5, paper_pump_wavelength());
        let pulsed_signal = PulseSpec {
            shape: PulseShape::Sech2,
            fwhm_ps: 3.0,
            peak_power_mw: 1e-3,
            center_wavelength_nm: 812.0,
            delay_ps: 0.0,
        };
        let rec = propagate(&paper_crystal(), &pump, &pulsed_signal, &GridSpec::default(), model(), 2, &PropagateOptions::default()).unwrap();
        assert!(gate_response(&rec).is_err());
        // zero coupling -> no dip -> empty-response error
        let mut c = paper_crystal();
        c.effective_coupling = 0.0;
        let rec = propagate(&c, &pump, &cw_signal(), &GridSpec::default(), model(), 2, &PropagateOptions::default()).unwrap();
        assert!(gate_response(&rec).is_err());
    }

    #[test]
    fn calibrated_kappa_reproduces_four_ps() {
        let rec = paper_record(1.5);
        let gate = gate_response(&rec).unwrap();
        assert!(
            (gate.fwhm_ps - 4.0).abs() < 0.02,
            "calibrated gate fwhm {} ps",
            gate.fwhm_ps
        );
    }

    #[test]
    fn sweep_monotonicity() {
        let powers = [0.1, 0.5, 1.0, 1.5, 2.5, 3.5, 5.0];
        let sweep = sweep_pump_power(
            &powers,
            &paper_crystal(),
            &cw_signal(),
            &GridSpec::default(),
            model(),
            paper_pump_wavelength(),
        )
        .unwrap();
        assert!(sweep.aborted.is_none());
        let pts = &sweep.points;
        assert_eq!(pts.len(), powers.len());
        for w in pts.windows(2) {
            assert!(w[1].sfg_energy_pj >= w[0].sfg_energy_pj, "energy not monotone");
            assert!(
                w[1].sfg_energy_pj / w[1].power_mw <= w[0].sfg_energy_pj / w[0].power_mw * (1.0 + 1e-9),
                "marginal gain not decreasing"
            );
            assert!(
                w[1].resolution_fwhm_ps >= w[0].resolution_fwhm_ps - 1e-9,
                "resolution not monotone"
            );
        }
    }

    #[test]
    fn sweep_linear_regime_proportional() {
        // far below saturation the SFG energy is linear in pump power
        let powers = [0.001, 0.002, 0.005, 0.01];
        let sweep = sweep_pump_power(
            &powers,
            &paper_crystal(),
            &cw_signal(),
            &GridSpec::default(),
            model(),
            paper_pump_wavelength(),
        )
        .unwrap();
        let pts = &sweep.points;
        let r0 = pts[0].sfg_energy_pj / pts[0].power_mw;
        for pt in pts {
            let r = pt.sfg_energy_pj / pt.power_mw;
            assert!((r / r0 - 1.0).abs() < 0.01, "nonlinearity {}", r / r0 - 1.0);
        }
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let err = sweep_pump_power(
            &[1.0, 0.5],
            &paper_crystal(),
            &cw_signal(),
            &GridSpec::default(),
            model(),
            990.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn saturation_fit_closed_loop() {
        // synthetic data from the solver at κ*, 1% multiplicative
        // perturbation, recovered within 5%
        let kappa_true = CALIBRATED_KAPPA;
        let powers = [0.2, 0.6, 1.2, 2.0, 3.2, 5.0];
        let lam_p = paper_pump_wavelength();
        let grid = GridSpec {
            n_time: 1024,
            ..GridSpec::default()
        };
        let sweep = sweep_pump_power(&powers, &paper_crystal(), &cw_signal(), &grid, model(), lam_p).unwrap();
        // deterministic ±1% wiggle
        let noise = [1.01, 0.99, 1.01, 0.99, 1.01, 0.99];
        let measured: Vec<(f64, f64)> = sweep
            .points
            .iter()
            .zip(noise)
            .map(|(pt, f)| (pt.power_mw, pt.sfg_energy_pj * 3.7e8 * f))
            .collect();
        let fit = fit_saturation(&measured, 0.05, &paper_crystal(), &cw_signal(), &grid, model(), lam_p).unwrap();
        assert!(
            (fit.kappa - kappa_true).abs() / kappa_true < 0.05,
            "recovered {} vs {}",
            fit.kappa,
            kappa_true
        );
        // scaling outputs leaves κ unchanged
        let scaled: Vec<(f64, f64)> = measured.iter().map(|&(p, y)| (p, y * 10.0)).collect();
        let fit2 = fit_saturation(&scaled, 0.05, &paper_crystal(), &cw_signal(), &grid, model(), lam_p).unwrap();
        assert_relative_eq!(fit.kappa, fit2.kappa, max_relative = 1e-6);
        assert_relative_eq!(fit2.scale, fit.scale * 10.0, max_relative = 1e-6);
    }

    #[test]
    fn saturation_fit_rejects_degenerate_data() {
        let grid = GridSpec::default();
        let lam_p = 990.0;
        // all zero
        let zeros: Vec<(f64, f64)> = vec![(0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (4.0, 0.0)];
        assert!(matches!(
            fit_saturation(&zeros, 0.05, &paper_crystal(), &cw_signal(), &grid, model(), lam_p),
            Err(Error::Fit { .. })
        ));
        // perfectly linear: knee not covered
        let linear: Vec<(f64, f64)> = vec![(0.5, 0.5), (1.0, 1.0), (2.0, 2.0), (4.0, 4.0)];
        assert!(matches!(
            fit_saturation(&linear, 0.05, &paper_crystal(), &cw_signal(), &grid, model(), lam_p),
            Err(Error::Fit { .. })
        ));
        // too few points
        let few: Vec<(f64, f64)> = vec![(0.5, 1.0), (1.0, 1.8), (2.0, 3.0)];
        assert!(fit_saturation(&few, 0.05, &paper_crystal(), &cw_signal(), &grid, model(), lam_p).is_err());
    }
}
