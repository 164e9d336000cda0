//! Levenberg–Marquardt on a residual closure.
//!
//! Marquardt's diagonal scaling makes the iteration invariant to rescaling
//! individual parameters, and the gradient test is the scale-free cosine
//! between each Jacobian column and the residual vector (as in MINPACK), so
//! a fit of `c * y` follows exactly the same path as a fit of `y`.

use nalgebra::{DMatrix, DVector};

use super::{Estimate, FitFlag, FitResult};
use crate::error::FitError;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
    pub fixed: bool,
}

impl ParamSpec {
    pub fn new(name: &str, initial: f64) -> Self {
        Self {
            name: name.to_owned(),
            initial,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            fixed: false,
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn fixed(mut self) -> Self {
        self.fixed = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Budget of trial steps (accepted or not).
    pub max_iterations: usize,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Gradient tolerance (cosine between residual and Jacobian columns).
    pub gtol: f64,
    pub initial_damping: f64,
    /// Residuals are already divided by known standard deviations, so the
    /// covariance is not rescaled by the reduced chi-square.
    pub absolute_sigma: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-9,
            gtol: 1e-9,
            initial_damping: 1e-3,
            absolute_sigma: false,
        }
    }
}

/// Relative finite-difference step for the Jacobian.
pub const DEFAULT_FD_STEP: f64 = 6.0554544523933395e-6; // cbrt(f64::EPSILON)

/// Central-difference Jacobian of `residuals` at `params`, perturbing only
/// the columns listed in `free`. `rel_step` scales with `|param|`.
pub fn jacobian<F>(
    residuals: &F,
    params: &[f64],
    free: &[usize],
    m: usize,
    rel_step: f64,
) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut jac = DMatrix::zeros(m, free.len());
    let mut p = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for (col, &j) in free.iter().enumerate() {
        let h = rel_step * params[j].abs().max(1e-8);
        p[j] = params[j] + h;
        residuals(&p, &mut plus);
        p[j] = params[j] - h;
        residuals(&p, &mut minus);
        p[j] = params[j];
        let width = 2.0 * h;
        for i in 0..m {
            jac[(i, col)] = (plus[i] - minus[i]) / width;
        }
    }
    jac
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn gradient_cosine(jac: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = jac.tr_mul(r);
    (0..jac.ncols())
        .map(|j| {
            let cn = jac.column(j).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[j].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimises `sum r_i(params)^2` for a residual closure writing `m` values.
pub fn least_squares<F>(
    residuals: F,
    m: usize,
    specs: &[ParamSpec],
    opts: &LmOptions,
) -> Result<FitResult, FitError>
where
    F: Fn(&[f64], &mut [f64]),
{
    for s in specs {
        if !s.initial.is_finite() || s.lower > s.upper || s.initial < s.lower || s.initial > s.upper
        {
            return Err(FitError::InvalidInput(format!(
                "parameter {} start {} outside [{}, {}]",
                s.name, s.initial, s.lower, s.upper
            )));
        }
    }
    let free: Vec<usize> = (0..specs.len()).filter(|&j| !specs[j].fixed).collect();
    if m < free.len() {
        return Err(FitError::InvalidInput(format!(
            "{m} residuals cannot constrain {} parameters",
            free.len()
        )));
    }

    let mut theta: Vec<f64> = specs.iter().map(|s| s.initial).collect();
    let mut r = vec![0.0; m];
    residuals(&theta, &mut r);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(FitError::InvalidInput(
            "non-finite residual at start point".into(),
        ));
    }
    let mut current = cost(&r);
    let mut history = vec![current];
    let mut lambda = opts.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; m];
    let mut grad_cos = f64::INFINITY;

    'outer: while iterations < opts.max_iterations && !free.is_empty() {
        let jac = jacobian(&residuals, &theta, &free, m, DEFAULT_FD_STEP);
        let rv = DVector::from_column_slice(&r);
        grad_cos = gradient_cosine(&jac, &rv);
        if current == 0.0 || grad_cos < opts.gtol {
            converged = true;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&rv);
        let max_diag = jtj.diagonal().max();
        let floor = (max_diag * 1e-15).max(f64::MIN_POSITIVE);

        loop {
            iterations += 1;
            let mut a = jtj.clone();
            for k in 0..free.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(floor);
            }
            let Some(step) = a
                .clone()
                .cholesky()
                .map(|c| c.solve(&(-&g)))
                .or_else(|| a.lu().solve(&(-&g)))
            else {
                lambda *= nu;
                nu *= 2.0;
                if iterations >= opts.max_iterations {
                    break 'outer;
                }
                continue;
            };
            let mut proposal = theta.clone();
            for (k, &j) in free.iter().enumerate() {
                proposal[j] = (theta[j] + step[k]).clamp(specs[j].lower, specs[j].upper);
            }
            let step_norm = free
                .iter()
                .map(|&j| (proposal[j] - theta[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            let theta_norm = free.iter().map(|&j| theta[j].powi(2)).sum::<f64>().sqrt();
            let tiny_step = step_norm <= opts.xtol * (theta_norm + opts.xtol);

            residuals(&proposal, &mut trial);
            let new_cost = cost(&trial);
            if new_cost.is_finite() && new_cost < current {
                let predicted = -(2.0 * g.dot(&step) + step.dot(&(&jtj * &step)));
                let gain = if predicted > 0.0 {
                    (current - new_cost) / predicted
                } else {
                    1.0
                };
                theta = proposal;
                std::mem::swap(&mut r, &mut trial);
                current = new_cost;
                history.push(current);
                lambda *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                if tiny_step {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if tiny_step {
                // No representable improvement left along the damped direction.
                converged = true;
                break 'outer;
            }
            lambda *= nu;
            nu *= 2.0;
            if iterations >= opts.max_iterations {
                break 'outer;
            }
        }
    }
    if free.is_empty() {
        converged = true;
        grad_cos = 0.0;
    } else if converged && current > 0.0 {
        // Damping leaves a small fraction of the last step on the table;
        // one undamped Gauss-Newton step removes it near the minimum.
        let jac = jacobian(&residuals, &theta, &free, m, DEFAULT_FD_STEP);
        let rv = DVector::from_column_slice(&r);
        if let Ok(step) = jac.clone().svd(true, true).solve(&(-&rv), 1e-14) {
            let mut proposal = theta.clone();
            for (k, &j) in free.iter().enumerate() {
                proposal[j] = (theta[j] + step[k]).clamp(specs[j].lower, specs[j].upper);
            }
            residuals(&proposal, &mut trial);
            let new_cost = cost(&trial);
            if new_cost < current {
                theta = proposal;
                std::mem::swap(&mut r, &mut trial);
                current = new_cost;
                history.push(current);
            }
        }
    }

    let jac = jacobian(&residuals, &theta, &free, m, DEFAULT_FD_STEP);
    let dof = m.saturating_sub(free.len());
    let scale = if opts.absolute_sigma {
        1.0
    } else if dof > 0 {
        current / dof as f64
    } else {
        f64::NAN
    };
    let (cov_free, singular) = covariance(&jac);
    let n = specs.len();
    let mut covariance_full = vec![vec![0.0; n]; n];
    for (a, &ja) in free.iter().enumerate() {
        for (b, &jb) in free.iter().enumerate() {
            covariance_full[ja][jb] = cov_free[(a, b)] * scale;
        }
    }
    let mut flags = Vec::new();
    let estimates = specs
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let sigma = match free.iter().position(|&f| f == j) {
                None => 0.0,
                Some(k) if singular[k] => {
                    flags.push(FitFlag::Unidentifiable {
                        name: s.name.clone(),
                    });
                    f64::INFINITY
                }
                Some(k) => (cov_free[(k, k)] * scale).max(0.0).sqrt(),
            };
            if !s.fixed && (theta[j] == s.lower || theta[j] == s.upper) {
                flags.push(FitFlag::AtBound {
                    name: s.name.clone(),
                });
            }
            Estimate {
                name: s.name.clone(),
                value: theta[j],
                sigma,
                fixed: s.fixed,
            }
        })
        .collect();
    if !converged {
        flags.push(FitFlag::MaxIterations);
    }
    Ok(FitResult {
        model: String::new(),
        params: estimates,
        derived: Vec::new(),
        residual_norm: current,
        dof,
        converged,
        iterations,
        gradient_norm: grad_cos,
        flags,
        covariance: covariance_full,
        history,
    })
}

/// `(J^T J)^-1` via SVD, plus a per-column flag for directions the data
/// does not constrain.
fn covariance(jac: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let k = jac.ncols();
    if k == 0 {
        return (DMatrix::zeros(0, 0), Vec::new());
    }
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let s_max = s.max();
    let cutoff = s_max * 1e-10 * (jac.nrows().max(k) as f64);
    let mut cov = DMatrix::zeros(k, k);
    let mut singular = vec![false; k];
    for (idx, &sv) in s.iter().enumerate() {
        let row = v_t.row(idx);
        if sv <= cutoff || sv == 0.0 {
            for j in 0..k {
                if row[j].abs() > 1e-6 {
                    singular[j] = true;
                }
            }
            continue;
        }
        let w = 1.0 / (sv * sv);
        for a in 0..k {
            for b in 0..k {
                cov[(a, b)] += row[a] * row[b] * w;
            }
        }
    }
    (cov, singular)
}

/// Weighted curve fit of `model(x, params)` to `(x, y)` with optional
/// standard deviations. With `sigma` the covariance is absolute.
pub fn curve_fit<M>(
    model: M,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    specs: &[ParamSpec],
    opts: &LmOptions,
) -> Result<FitResult, FitError>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != x.len()) {
        return Err(FitError::InvalidInput(
            "data arrays differ in length".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("non-finite data".into()));
    }
    if let Some(s) = sigma {
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(FitError::InvalidInput("sigmas must be positive".into()));
        }
    }
    let opts = LmOptions {
        absolute_sigma: sigma.is_some(),
        ..*opts
    };
    let residuals = |p: &[f64], out: &mut [f64]| {
        for i in 0..x.len() {
            let w = sigma.map_or(1.0, |s| s[i]);
            out[i] = (y[i] - model(x[i], p)) / w;
        }
    };
    least_squares(residuals, x.len(), specs, &opts)
}
