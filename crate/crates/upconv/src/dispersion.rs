//! Refractive index, group index, and quasi-phase-matching design for
//! the periodically poled lithium niobate waveguide.
//!
//! All waves propagate with extraordinary polarization, so a single
//! temperature-dependent Sellmeier model covers signal, pump, and SFG.
//! The QPM condition
//!
//! ```text
//! Δk = 2π [ n(λ_f)/λ_f − n(λ_p)/λ_p − n(λ_s)/λ_s ] − 2πm/Λ
//! ```
//!
//! is solved for the pump wavelength at fixed signal wavelength and
//! poling period Λ, which is how the instrument is tuned in practice.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in mm/ps.
pub const C_MM_PER_PS: f64 = 0.299_792_458;

/// Default bracket for pump-wavelength root searches, nm.
pub const DEFAULT_PUMP_BRACKET_NM: (f64, f64) = (700.0, 1300.0);

/// Temperature-dependent Sellmeier model for the extraordinary index.
///
/// Functional form (λ in µm, T in °C, f = (T − 24.5)(T + 570.82)):
///
/// ```text
/// n² = a1 + b1·f + (a2 + b2·f)/(λ² − (a3 + b3·f)²)
///               + (a4 + b4·f)/(λ² − a5²) − a6·λ²
/// ```
///
/// `coefficients` is ordered `[a1..a6, b1..b4]`. Evaluation outside
/// `validity_nm` is an error, never an extrapolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SellmeierModel {
    pub name: String,
    pub coefficients: Vec<f64>,
    pub validity_nm: [f64; 2],
    pub citation: String,
}

static DEFAULT_MODEL: OnceLock<SellmeierModel> = OnceLock::new();

impl SellmeierModel {
    /// The coefficient set shipped with the crate (5% MgO-doped
    /// congruent LiNbO₃, extraordinary index, Gayer et al. 2008).
    pub fn default_mgo_cln() -> &'static SellmeierModel {
        DEFAULT_MODEL.get_or_init(|| {
            SellmeierModel::from_json(include_str!("../data/sellmeier_mgo_cln_e.json"))
                .expect("bundled Sellmeier file is valid")
        })
    }

    /// Parse and validate a coefficient file.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: SellmeierModel =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("sellmeier json: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.coefficients.len() != 10 {
            return Err(Error::Parse(format!(
                "sellmeier json: expected 10 coefficients [a1..a6, b1..b4], got {}",
                self.coefficients.len()
            )));
        }
        if !self.coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::Parse("sellmeier json: non-finite coefficient".into()));
        }
        let [lo, hi] = self.validity_nm;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::Parse(format!(
                "sellmeier json: invalid validity window [{lo}, {hi}] nm"
            )));
        }
        Ok(())
    }

    fn check_window(&self, lambda_nm: f64, strict: bool) -> Result<()> {
        let [lo, hi] = self.validity_nm;
        let inside = if strict {
            lambda_nm > lo && lambda_nm < hi
        } else {
            lambda_nm >= lo && lambda_nm <= hi
        };
        if !lambda_nm.is_finite() || !inside {
            return Err(Error::OutOfRange {
                what: "wavelength",
                value: lambda_nm,
                min: lo,
                max: hi,
                unit: "nm",
            });
        }
        Ok(())
    }

    /// n² and its analytic derivative d(n²)/dλ (per µm) at λ (µm).
    fn n_sq(&self, lambda_um: f64, temp_c: f64) -> (f64, f64) {
        let c = &self.coefficients;
        let (a1, a2, a3, a4, a5, a6) = (c[0], c[1], c[2], c[3], c[4], c[5]);
        let (b1, b2, b3, b4) = (c[6], c[7], c[8], c[9]);
        let f = (temp_c - 24.5) * (temp_c + 570.82);
        let l2 = lambda_um * lambda_um;
        let p3 = a3 + b3 * f;
        let d1 = l2 - p3 * p3;
        let d2 = l2 - a5 * a5;
        let n2 = a1 + b1 * f + (a2 + b2 * f) / d1 + (a4 + b4 * f) / d2 - a6 * l2;
        let dn2 = -2.0 * lambda_um * (a2 + b2 * f) / (d1 * d1)
            - 2.0 * lambda_um * (a4 + b4 * f) / (d2 * d2)
            - 2.0 * a6 * lambda_um;
        (n2, dn2)
    }

    /// Extraordinary refractive index nₑ(λ, T), λ in nm, T in °C.
    pub fn refractive_index(&self, lambda_nm: f64, temp_c: f64) -> Result<f64> {
        self.check_window(lambda_nm, false)?;
        let (n2, _) = self.n_sq(lambda_nm * 1e-3, temp_c);
        Ok(n2.sqrt())
    }

    /// Analytic dn/dλ in nm⁻¹. Requires λ strictly inside the window.
    pub fn dn_dlambda(&self, lambda_nm: f64, temp_c: f64) -> Result<f64> {
        self.check_window(lambda_nm, true)?;
        let (n2, dn2) = self.n_sq(lambda_nm * 1e-3, temp_c);
        // dn/dλ = (dn²/dλ)/(2n); convert per-µm to per-nm.
        Ok(dn2 / (2.0 * n2.sqrt()) * 1e-3)
    }

    /// Group index n_g = n − λ·dn/dλ.
    pub fn group_index(&self, lambda_nm: f64, temp_c: f64) -> Result<f64> {
        let n = {
            self.check_window(lambda_nm, true)?;
            let (n2, _) = self.n_sq(lambda_nm * 1e-3, temp_c);
            n2.sqrt()
        };
        let dn = self.dn_dlambda(lambda_nm, temp_c)?;
        Ok(n - lambda_nm * dn)
    }

    /// Group slowness 1/v_g in ps/mm.
    pub fn group_slowness(&self, lambda_nm: f64, temp_c: f64) -> Result<f64> {
        Ok(self.group_index(lambda_nm, temp_c)? / C_MM_PER_PS)
    }
}

/// The poled waveguide: poling period Λ (µm), length L (mm),
/// temperature (°C), effective coupling κ (W^(−1/2)·mm⁻¹), QPM order m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub poling_period_um: f64,
    pub length_mm: f64,
    pub temperature_c: f64,
    pub effective_coupling: f64,
    pub qpm_order: u32,
}

impl CrystalSpec {
    pub fn new(
        poling_period_um: f64,
        length_mm: f64,
        temperature_c: f64,
        effective_coupling: f64,
        qpm_order: u32,
    ) -> Result<Self> {
        let spec = CrystalSpec {
            poling_period_um,
            length_mm,
            temperature_c,
            effective_coupling,
            qpm_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.poling_period_um > 0.0) {
            return Err(Error::Config(format!(
                "poling period must be positive, got {} um",
                self.poling_period_um
            )));
        }
        if !(self.length_mm > 0.0) {
            return Err(Error::Config(format!(
                "crystal length must be positive, got {} mm",
                self.length_mm
            )));
        }
        if !(self.effective_coupling >= 0.0) {
            return Err(Error::Config(format!(
                "effective coupling must be >= 0, got {}",
                self.effective_coupling
            )));
        }
        if self.qpm_order == 0 || self.qpm_order % 2 == 0 {
            return Err(Error::Config(format!(
                "QPM order must be an odd positive integer, got {}",
                self.qpm_order
            )));
        }
        if !self.temperature_c.is_finite() {
            return Err(Error::Config("temperature must be finite".into()));
        }
        Ok(())
    }

    /// The paper's waveguide: Λ = 3.96 µm, L = 12.5 mm, 25 °C, with the
    /// coupling calibrated so the 1.5 mW gate response is 4.0 ps wide.
    pub fn paper_default() -> CrystalSpec {
        CrystalSpec {
            poling_period_um: 3.96,
            length_mm: 12.5,
            temperature_c: 25.0,
            effective_coupling: crate::propagation::CALIBRATED_KAPPA,
            qpm_order: 1,
        }
    }
}

/// An energy-conserving (λ_signal, λ_pump, λ_sfg) triplet.
/// 1/λ_sfg = 1/λ_signal + 1/λ_pump holds by construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaveTriplet {
    pub lambda_signal_nm: f64,
    pub lambda_pump_nm: f64,
    pub lambda_sfg_nm: f64,
}

impl WaveTriplet {
    pub fn from_signal_pump(lambda_signal_nm: f64, lambda_pump_nm: f64) -> Result<Self> {
        let lambda_sfg_nm = sfg_wavelength(lambda_signal_nm, lambda_pump_nm)?;
        Ok(WaveTriplet {
            lambda_signal_nm,
            lambda_pump_nm,
            lambda_sfg_nm,
        })
    }
}

/// Sum-frequency wavelength λ_sfg = (1/λ_signal + 1/λ_pump)⁻¹, nm.
pub fn sfg_wavelength(lambda_signal_nm: f64, lambda_pump_nm: f64) -> Result<f64> {
    if !(lambda_signal_nm > 0.0) || !(lambda_pump_nm > 0.0) {
        return Err(Error::Config(format!(
            "wavelengths must be positive, got signal {lambda_signal_nm} nm, pump {lambda_pump_nm} nm"
        )));
    }
    Ok(1.0 / (1.0 / lambda_signal_nm + 1.0 / lambda_pump_nm))
}

/// Quasi-phase-matching wave-vector mismatch Δk in rad/mm.
pub fn qpm_mismatch(
    triplet: &WaveTriplet,
    crystal: &CrystalSpec,
    model: &SellmeierModel,
) -> Result<f64> {
    crystal.validate()?;
    let t = crystal.temperature_c;
    let n_s = model.refractive_index(triplet.lambda_signal_nm, t)?;
    let n_p = model.refractive_index(triplet.lambda_pump_nm, t)?;
    let n_f = model.refractive_index(triplet.lambda_sfg_nm, t)?;
    // n/λ in nm⁻¹ → ×1e6 for mm⁻¹.
    let dk = 2.0
        * std::f64::consts::PI
        * (n_f / triplet.lambda_sfg_nm - n_p / triplet.lambda_pump_nm
            - n_s / triplet.lambda_signal_nm)
        * 1e6;
    let grating = 2.0 * std::f64::consts::PI * f64::from(crystal.qpm_order)
        / (crystal.poling_period_um * 1e-3);
    Ok(dk - grating)
}

/// Result of a pump-wavelength QPM solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QpmRoot {
    pub lambda_pump_nm: f64,
    pub delta_k_rad_per_mm: f64,
    /// More than one root was found in the bracket; the one nearest the
    /// bracket center is returned.
    pub multiple_roots: bool,
}

/// Δk tolerance a solved root must satisfy, rad/mm.
pub const QPM_ROOT_TOL_RAD_PER_MM: f64 = 1e-6;

fn mismatch_at_pump(
    lambda_signal_nm: f64,
    lambda_pump_nm: f64,
    crystal: &CrystalSpec,
    model: &SellmeierModel,
) -> Result<f64> {
    let triplet = WaveTriplet::from_signal_pump(lambda_signal_nm, lambda_pump_nm)?;
    qpm_mismatch(&triplet, crystal, model)
}

/// Solve Δk(λ_pump) = 0 inside `bracket_nm` for a fixed signal
/// wavelength. Scans the bracket for sign changes, refines each with
/// bisection sharpened by secant steps, and returns the root nearest
/// the bracket center when several exist.
pub fn solve_qpm_pump(
    lambda_signal_nm: f64,
    crystal: &CrystalSpec,
    model: &SellmeierModel,
    bracket_nm: (f64, f64),
) -> Result<QpmRoot> {
    let (lo, hi) = bracket_nm;
    if !(lo < hi) {
        return Err(Error::Config(format!("bad bracket [{lo}, {hi}] nm")));
    }
    // Clip the scan to the model validity window so the SFG wave stays
    // evaluable; the pump itself must also lie inside the window.
    let lo = lo.max(model.validity_nm[0]);
    let hi = hi.min(model.validity_nm[1]);

    const SEGMENTS: usize = 240;
    let step = (hi - lo) / SEGMENTS as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=SEGMENTS {
        let x = lo + step * i as f64;
        let y = match mismatch_at_pump(lambda_signal_nm, x, crystal, model) {
            Ok(v) => v,
            // SFG falls outside the validity window for this pump; skip.
            Err(Error::OutOfRange { .. }) => {
                prev = None;
                continue;
            }
            Err(e) => return Err(e),
        };
        if y == 0.0 {
            roots.push(x);
            prev = Some((x, y));
            continue;
        }
        if let Some((x0, y0)) = prev {
            if y0.signum() != y.signum() {
                roots.push(refine_root(lambda_signal_nm, crystal, model, x0, x)?);
            }
        }
        prev = Some((x, y));
    }

    if roots.is_empty() {
        return Err(Error::NoRoot(format!(
            "QPM mismatch has no sign change for signal {lambda_signal_nm} nm, \
             poling {} um, pump in [{lo}, {hi}] nm",
            crystal.poling_period_um
        )));
    }
    let center = 0.5 * (lo + hi);
    let multiple = roots.len() > 1;
    let best = roots
        .into_iter()
        .min_by(|a, b| {
            (a - center)
                .abs()
                .partial_cmp(&(b - center).abs())
                .unwrap()
        })
        .unwrap();
    let dk = mismatch_at_pump(lambda_signal_nm, best, crystal, model)?;
    Ok(QpmRoot {
        lambda_pump_nm: best,
        delta_k_rad_per_mm: dk,
        multiple_roots: multiple,
    })
}

fn refine_root(
    lambda_signal_nm: f64,
    crystal: &CrystalSpec,
    model: &SellmeierModel,
    mut a: f64,
    mut b: f64,
) -> Result<f64> {
    let f = |x: f64| mismatch_at_pump(lambda_signal_nm, x, crystal, model);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    debug_assert!(fa.signum() != fb.signum());
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        // Secant proposal, falling back to bisection when it leaves the
        // bracket or stalls.
        let secant = b - fb * (b - a) / (fb - fa);
        x = if secant.is_finite() && secant > a && secant < b {
            secant
        } else {
            0.5 * (a + b)
        };
        let fx = f(x)?;
        if fx.abs() < QPM_ROOT_TOL_RAD_PER_MM || (b - a) < 1e-9 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    Err(Error::NoRoot(format!(
        "QPM root refinement did not reach |Δk| < {QPM_ROOT_TOL_RAD_PER_MM} rad/mm near {x} nm"
    )))
}

/// One row of a phase-matching curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpmPoint {
    pub triplet: WaveTriplet,
    pub delta_k_rad_per_mm: f64,
    pub multiple_roots: bool,
}

/// Phase-matching curve over a range of signal wavelengths. Signal
/// wavelengths without a root are recorded as gaps, not failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpmCurve {
    pub points: Vec<QpmPoint>,
    pub gaps_nm: Vec<f64>,
}

/// Solve the QPM pump for each signal wavelength in the list.
pub fn qpm_curve(
    signal_nm: &[f64],
    crystal: &CrystalSpec,
    model: &SellmeierModel,
    bracket_nm: (f64, f64),
) -> Result<QpmCurve> {
    let mut points = Vec::with_capacity(signal_nm.len());
    let mut gaps_nm = Vec::new();
    for &ls in signal_nm {
        model.check_window(ls, false)?;
        match solve_qpm_pump(ls, crystal, model, bracket_nm) {
            Ok(root) => points.push(QpmPoint {
                triplet: WaveTriplet::from_signal_pump(ls, root.lambda_pump_nm)?,
                delta_k_rad_per_mm: root.delta_k_rad_per_mm,
                multiple_roots: root.multiple_roots,
            }),
            Err(Error::NoRoot(_)) => gaps_nm.push(ls),
            Err(e) => return Err(e),
        }
    }
    Ok(QpmCurve { points, gaps_nm })
}
