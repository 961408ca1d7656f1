//! Small weighted least-squares machinery: a Levenberg–Marquardt
//! loop with analytic Jacobians for the nonlinear fits, and a direct
//! normal-equation solve for linear models. Deterministic: no random
//! restarts, documented initializations only.

use crate::error::{Error, Result};

/// Convergence tolerance on the relative parameter change.
pub const PARAM_TOL: f64 = 1e-10;
const MAX_ITER: usize = 400;

/// Result of a weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// One-sigma parameter errors from the scaled covariance matrix.
    pub errors: Vec<f64>,
    pub chi2: f64,
    /// χ² per degree of freedom (1.0 when dof = 0).
    pub reduced_chi2: f64,
    pub iterations: usize,
}

/// Solve the dense symmetric system `a x = b` by Gaussian elimination
/// with partial pivoting. `a` is row-major n×n.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap()
        })?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Some(x)
}

/// Invert a symmetric positive-definite matrix by solving n unit systems.
fn invert_dense(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_dense(a.to_vec(), e)?;
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    Some(inv)
}

/// A model for [`levenberg_marquardt`]: residuals are
/// `(y_i − f(x_i, p)) / σ_i`; the Jacobian rows are the analytic
/// derivatives `∂f/∂p_j (x_i) / σ_i`.
pub trait LeastSquaresModel {
    /// Number of data points.
    fn len(&self) -> usize;
    /// Weighted residual and weighted Jacobian row at point `i`.
    fn residual_and_jacobian(&self, i: usize, params: &[f64], jac_row: &mut [f64]) -> f64;
}

/// Weighted Levenberg–Marquardt with analytic Jacobians.
pub fn levenberg_marquardt<M: LeastSquaresModel>(model: &M, initial: &[f64]) -> Result<FitResult> {
    let n_par = initial.len();
    let n_pts = model.len();
    if n_pts < n_par {
        return Err(Error::Fit {
            message: format!("{n_pts} points cannot constrain {n_par} parameters"),
            residual: f64::NAN,
            iterations: 0,
        });
    }
    let mut params = initial.to_vec();
    let mut lambda = 1e-3;
    let mut jac_row = vec![0.0; n_par];

    let chi2_of = |p: &[f64], jac_row: &mut [f64]| -> f64 {
        (0..n_pts)
            .map(|i| {
                let r = model.residual_and_jacobian(i, p, jac_row);
                r * r
            })
            .sum()
    };
    let mut chi2 = chi2_of(&params, &mut jac_row);
    let mut iterations = 0;
    let mut stagnant = 0usize;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        // Build JᵀJ and Jᵀr at the current point.
        let mut jtj = vec![0.0; n_par * n_par];
        let mut jtr = vec![0.0; n_par];
        for i in 0..n_pts {
            let r = model.residual_and_jacobian(i, &params, &mut jac_row);
            for a in 0..n_par {
                jtr[a] += jac_row[a] * r;
                for b in a..n_par {
                    jtj[a * n_par + b] += jac_row[a] * jac_row[b];
                }
            }
        }
        for a in 0..n_par {
            for b in 0..a {
                jtj[a * n_par + b] = jtj[b * n_par + a];
            }
        }

        // Damped step; retry with larger damping on rejection.
        let mut stepped = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for a in 0..n_par {
                damped[a * n_par + a] += lambda * jtj[a * n_par + a].max(1e-30);
            }
            let Some(step) = solve_dense(damped, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + s).collect();
            let trial_chi2 = chi2_of(&trial, &mut jac_row);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let rel_change = step
                    .iter()
                    .zip(&params)
                    .map(|(s, p)| (s / p.abs().max(1e-30)).abs())
                    .fold(0.0f64, f64::max);
                let rel_drop = (chi2 - trial_chi2) / chi2.max(f64::MIN_POSITIVE);
                params = trial;
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-14);
                stepped = true;
                // converged: parameters stopped moving, or χ² has been
                // flat for several accepted steps
                if rel_drop < 1e-12 {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
                if rel_change < PARAM_TOL || stagnant >= 3 {
                    return finish(model, params, chi2, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // Damping exhausted: either we are at a minimum or stuck.
            if chi2.is_finite() {
                return finish(model, params, chi2, iterations);
            }
            break;
        }
    }
    Err(Error::Fit {
        message: "no convergence within iteration budget".into(),
        residual: chi2,
        iterations,
    })
}

fn finish<M: LeastSquaresModel>(
    model: &M,
    params: Vec<f64>,
    chi2: f64,
    iterations: usize,
) -> Result<FitResult> {
    let n_par = params.len();
    let n_pts = model.len();
    let mut jac_row = vec![0.0; n_par];
    let mut jtj = vec![0.0; n_par * n_par];
    for i in 0..n_pts {
        model.residual_and_jacobian(i, &params, &mut jac_row);
        for a in 0..n_par {
            for b in a..n_par {
                jtj[a * n_par + b] += jac_row[a] * jac_row[b];
            }
        }
    }
    for a in 0..n_par {
        for b in 0..a {
            jtj[a * n_par + b] = jtj[b * n_par + a];
        }
    }
    let dof = n_pts.saturating_sub(n_par);
    let reduced = if dof > 0 { chi2 / dof as f64 } else { 1.0 };
    // Scale the covariance by reduced χ² so errors stay meaningful when
    // the stated σ are off by a common factor (and when σ ≡ 1).
    let scale = reduced.max(f64::MIN_POSITIVE);
    let errors = match invert_dense(&jtj, n_par) {
        Some(cov) => (0..n_par)
            .map(|a| (cov[a * n_par + a].max(0.0) * scale).sqrt())
            .collect(),
        None => vec![f64::INFINITY; n_par],
    };
    Ok(FitResult {
        params,
        errors,
        chi2,
        reduced_chi2: reduced,
        iterations,
    })
}

/// Weighted linear least squares for `y ≈ Σ_j p_j · basis_j(x)`.
/// `basis[i]` holds the basis-function values at point `i`.
pub fn linear_wls(basis: &[Vec<f64>], y: &[f64], sigma: &[f64]) -> Result<FitResult> {
    let n_pts = y.len();
    if n_pts == 0 || basis.len() != n_pts || sigma.len() != n_pts {
        return Err(Error::Config("linear_wls: inconsistent input lengths".into()));
    }
    let n_par = basis[0].len();
    if n_pts < n_par {
        return Err(Error::Fit {
            message: format!("{n_pts} points cannot constrain {n_par} parameters"),
            residual: f64::NAN,
            iterations: 0,
        });
    }
    let mut ata = vec![0.0; n_par * n_par];
    let mut atb = vec![0.0; n_par];
    for i in 0..n_pts {
        if !(sigma[i] > 0.0) {
            return Err(Error::Config(format!(
                "linear_wls: nonpositive sigma at point {i}"
            )));
        }
        let w = 1.0 / (sigma[i] * sigma[i]);
        for a in 0..n_par {
            atb[a] += w * basis[i][a] * y[i];
            for b in a..n_par {
                ata[a * n_par + b] += w * basis[i][a] * basis[i][b];
            }
        }
    }
    for a in 0..n_par {
        for b in 0..a {
            ata[a * n_par + b] = ata[b * n_par + a];
        }
    }
    let params = solve_dense(ata.clone(), atb).ok_or_else(|| Error::Fit {
        message: "singular normal equations".into(),
        residual: f64::NAN,
        iterations: 1,
    })?;
    let chi2: f64 = (0..n_pts)
        .map(|i| {
            let fit: f64 = (0..n_par).map(|a| params[a] * basis[i][a]).sum();
            let r = (y[i] - fit) / sigma[i];
            r * r
        })
        .sum();
    let dof = n_pts.saturating_sub(n_par);
    let reduced = if dof > 0 { chi2 / dof as f64 } else { 1.0 };
    let errors = match invert_dense(&ata, n_par) {
        Some(cov) => (0..n_par)
            .map(|a| cov[a * n_par + a].max(0.0).sqrt())
            .collect(),
        None => vec![f64::INFINITY; n_par],
    };
    Ok(FitResult {
        params,
        errors,
        chi2,
        reduced_chi2: reduced,
        iterations: 1,
    })
}

/// Deterministic scalar minimization by golden-section search followed
/// by parabolic refinement. `f` must be unimodal on `[lo, hi]`.
pub fn minimize_scalar<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
