//! Antibunching-dip fits on normalised coincidence histograms.

use super::engine::{curve_fit, LmOptions, ParamSpec};
use super::{FitFlag, FitResult};
use crate::correlator::CoincidenceHistogram;
use crate::error::FitError;

const G2_ZERO_MAX: f64 = 1.5;
const MIN_RATE: f64 = 1e-12;

/// Reduced cw dip `1 - (1 - g0) exp(-w |tau|)` with `p = [g0, w]`.
pub fn g2_cw_model(tau: f64, p: &[f64]) -> f64 {
    1.0 - (1.0 - p[0]) * (-p[1] * tau.abs()).exp()
}

/// Pulsed dip through a background, `p = [rho, g0, w]`:
/// `1 - rho^2 + rho^2 exp(-2|tau|/tau_o) (1 - (1 - g0) exp(-w |tau|))`.
pub fn g2_pulsed_model(tau: f64, p: &[f64], tau_o: f64) -> f64 {
    let (rho2, g0, w) = (p[0] * p[0], p[1], p[2]);
    let t = tau.abs();
    1.0 - rho2 + rho2 * (-2.0 * t / tau_o).exp() * (1.0 - (1.0 - g0) * (-w * t).exp())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CwFitOptions {
    /// Only bins with `|tau| <= fit_window` enter the fit.
    pub fit_window: Option<f64>,
    /// Ignore the per-bin errors and fit unweighted.
    pub unweighted: bool,
    pub lm: Option<LmOptions>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PulsedFitOptions {
    /// Hold `rho` at this value instead of fitting it.
    pub rho_fixed: Option<f64>,
    pub fit_window: Option<f64>,
    pub unweighted: bool,
    pub lm: Option<LmOptions>,
}

struct Data {
    tau: Vec<f64>,
    y: Vec<f64>,
    sigma: Option<Vec<f64>>,
}

fn select(
    h: &CoincidenceHistogram,
    window: Option<f64>,
    unweighted: bool,
) -> Result<Data, FitError> {
    let norm = h.norm.as_ref().ok_or(FitError::NotNormalized)?;
    let limit = window.unwrap_or(f64::INFINITY);
    if !(limit > 0.0) {
        return Err(FitError::InvalidInput(format!(
            "fit window {limit} must be > 0"
        )));
    }
    let mut d = Data {
        tau: Vec::new(),
        y: Vec::new(),
        sigma: (!unweighted).then(Vec::new),
    };
    for (i, c) in h.centers().into_iter().enumerate() {
        if c.abs() <= limit {
            d.tau.push(c);
            d.y.push(norm.values[i]);
            if let Some(s) = d.sigma.as_mut() {
                s.push(norm.errors[i]);
            }
        }
    }
    if d.tau.len() < 10 {
        return Err(FitError::InvalidInput(format!(
            "{} bins inside the fit window, need at least 10",
            d.tau.len()
        )));
    }
    if d.sigma
        .as_ref()
        .is_some_and(|s| s.iter().any(|v| !(*v > 0.0)))
    {
        d.sigma = None;
    }
    Ok(d)
}

/// Delay at which the data first climb back to `level`, scanning outwards.
fn recovery_delay(d: &Data, level: f64) -> Option<f64> {
    let mut idx: Vec<usize> = (0..d.tau.len()).collect();
    idx.sort_by(|&a, &b| d.tau[a].abs().total_cmp(&d.tau[b].abs()));
    idx.into_iter()
        .find(|&i| d.y[i] >= level)
        .map(|i| d.tau[i].abs())
}

fn min_value(y: &[f64]) -> f64 {
    y.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Reduced cw model fitted for `g2_0` and `w_p`; also reports `2/w_p`.
pub fn fit_g2_cw(h: &CoincidenceHistogram, opts: &CwFitOptions) -> Result<FitResult, FitError> {
    let d = select(h, opts.fit_window, opts.unweighted)?;
    let bw = h.bin_width;
    let flat =
        d.y.iter()
            .all(|&v| (v - d.y[0]).abs() <= 1e-12 * v.abs().max(1.0));

    let g0 = min_value(&d.y).clamp(0.0, G2_ZERO_MAX);
    let w0 = recovery_delay(&d, 0.5 * (1.0 + g0))
        .filter(|t| *t > 0.0)
        .map_or(1.0 / bw, |t| std::f64::consts::LN_2 / t);
    let specs = [
        ParamSpec::new("g2_0", g0).bounded(0.0, G2_ZERO_MAX),
        ParamSpec::new("w_p", w0.max(MIN_RATE)).bounded(MIN_RATE, f64::INFINITY),
    ];
    let lm = opts.lm.unwrap_or_default();
    let mut fit = curve_fit(g2_cw_model, &d.tau, &d.y, d.sigma.as_deref(), &specs, &lm)?;
    fit.model = "g2-cw".into();

    let (w, sw) = (fit.params[1].value, fit.params[1].sigma);
    fit.push_derived("dip_width_ns", 2.0 / w, 2.0 * sw / (w * w));
    let (g, sg) = (fit.params[0].value, fit.params[0].sigma);
    if flat || !sw.is_finite() || !((1.0 - g).abs() > 2.0 * sg) {
        fit.flags.push(FitFlag::DegenerateData);
    }
    Ok(fit)
}

/// Pulsed dip through an uncorrelated background with the envelope time
/// `tau_o` held fixed. Fits `rho`, `g2_0` and `w_p`, and reports `2/w_p`
/// and the measured zero-delay value `1 - rho^2 + rho^2 g2_0`.
pub fn fit_g2_pulsed(
    h: &CoincidenceHistogram,
    tau_o: f64,
    opts: &PulsedFitOptions,
) -> Result<FitResult, FitError> {
    if !(tau_o > 0.0 && tau_o.is_finite()) {
        return Err(FitError::InvalidInput(format!("tau_o {tau_o} must be > 0")));
    }
    if let Some(r) = opts.rho_fixed {
        if !(0.0..=1.0).contains(&r) {
            return Err(FitError::InvalidInput(format!(
                "fixed rho {r} outside [0, 1]"
            )));
        }
    }
    let d = select(h, opts.fit_window, opts.unweighted)?;
    let flat =
        d.y.iter()
            .all(|&v| (v - d.y[0]).abs() <= 1e-12 * v.abs().max(1.0));

    // Far from zero delay the envelope has died away and only 1 - rho^2 is left.
    let tail: Vec<f64> = d
        .tau
        .iter()
        .zip(&d.y)
        .filter(|(t, _)| t.abs() >= 5.0 * tau_o)
        .map(|(_, &y)| y)
        .collect();
    let rho0 = opts.rho_fixed.unwrap_or_else(|| {
        if tail.is_empty() {
            0.9
        } else {
            let floor = tail.iter().sum::<f64>() / tail.len() as f64;
            (1.0 - floor).clamp(0.01, 1.0).sqrt().min(0.999)
        }
    });
    let r2 = (rho0 * rho0).max(1e-6);
    let g0 = ((min_value(&d.y) - 1.0 + r2) / r2).clamp(0.0, G2_ZERO_MAX);

    let lm = opts.lm.unwrap_or_default();
    let model = |t: f64, p: &[f64]| g2_pulsed_model(t, p, tau_o);
    let mut best: Option<FitResult> = None;
    for w0 in [0.1, 0.3, 1.0, 3.0] {
        let mut rho = ParamSpec::new("rho", rho0).bounded(0.0, 1.0);
        if opts.rho_fixed.is_some() {
            rho = rho.fixed();
        }
        let specs = [
            rho,
            ParamSpec::new("g2_0", g0).bounded(0.0, G2_ZERO_MAX),
            ParamSpec::new("w_p", w0).bounded(MIN_RATE, f64::INFINITY),
        ];
        let fit = curve_fit(model, &d.tau, &d.y, d.sigma.as_deref(), &specs, &lm)?;
        let better = match &best {
            None => true,
            Some(b) => (fit.converged, -fit.residual_norm) > (b.converged, -b.residual_norm),
        };
        if better {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one start");
    fit.model = "g2-pulsed".into();

    let (w, sw) = (fit.params[2].value, fit.params[2].sigma);
    fit.push_derived("dip_width_ns", 2.0 / w, 2.0 * sw / (w * w));
    let (rho, g) = (fit.params[0].value, fit.params[1].value);
    let g_exp = 1.0 - rho * rho + rho * rho * g;
    let s_exp = fit.propagate(&[(0, 2.0 * rho * (g - 1.0)), (1, rho * rho)]);
    fit.push_derived("g2_exp_0", g_exp, s_exp);
    if flat || !sw.is_finite() {
        fit.flags.push(FitFlag::DegenerateData);
    }
    Ok(fit)
}
