//! Saturation curve `I(P) = A P / (P + P_sat) + beta P`.

use serde::{Deserialize, Serialize};

use super::engine::{curve_fit, LmOptions, ParamSpec};
use super::{FitFlag, FitResult};
use crate::error::{FitError, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Saturated emitter intensity (counts/s).
    pub amplitude: f64,
    /// Power at half the saturated emitter intensity (uW).
    pub saturation_power: f64,
    /// Linear background (counts/s per uW).
    pub background_slope: f64,
}

impl SaturationParams {
    pub fn new(
        amplitude: f64,
        saturation_power: f64,
        background_slope: f64,
    ) -> Result<Self, ModelError> {
        let p = Self {
            amplitude,
            saturation_power,
            background_slope,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, value, reason| {
            Err(ModelError::InvalidParameter {
                name,
                value,
                reason,
            })
        };
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return bad("amplitude", self.amplitude, "must be > 0");
        }
        if !(self.saturation_power.is_finite() && self.saturation_power > 0.0) {
            return bad("saturation_power", self.saturation_power, "must be > 0");
        }
        if !(self.background_slope.is_finite() && self.background_slope >= 0.0) {
            return bad("background_slope", self.background_slope, "must be >= 0");
        }
        Ok(())
    }

    /// Background-free emitter part `A P / (P + P_sat)`.
    pub fn emitter_intensity(&self, power: f64) -> f64 {
        self.amplitude * power / (power + self.saturation_power)
    }

    pub fn intensity(&self, power: f64) -> f64 {
        self.emitter_intensity(power) + self.background_slope * power
    }
}

/// `p = [A, P_sat, beta]`.
pub fn saturation_model(power: f64, p: &[f64]) -> f64 {
    p[0] * power / (power + p[1]) + p[2] * power
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationFit {
    pub result: FitResult,
    pub params: SaturationParams,
    /// `(P, A P / (P + P_sat))` at every input power.
    pub emitter_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct SaturationFitOptions {
    /// Relative noise level of the intensities. When set, points are
    /// weighted by `r * I_fit(P)` (iteratively reweighted from the
    /// unweighted solution), the maximum-likelihood choice for
    /// multiplicative noise.
    pub relative_noise: Option<f64>,
    pub lm: LmOptions,
}

/// Reweighting passes used with `relative_noise`.
const REWEIGHT_PASSES: usize = 3;

/// Unweighted fit of the saturation curve; needs at least four distinct
/// powers.
pub fn fit_saturation(data: &[(f64, f64)]) -> Result<SaturationFit, FitError> {
    fit_saturation_with(data, &SaturationFitOptions::default())
}

pub fn fit_saturation_with(
    data: &[(f64, f64)],
    opts: &SaturationFitOptions,
) -> Result<SaturationFit, FitError> {
    let lm = &opts.lm;
    if let Some(r) = opts.relative_noise {
        if !(r.is_finite() && r > 0.0) {
            return Err(FitError::InvalidInput(format!(
                "relative noise must be > 0, got {r}"
            )));
        }
    }
    if data
        .iter()
        .any(|(p, i)| !(p.is_finite() && *p > 0.0 && i.is_finite()))
    {
        return Err(FitError::InvalidInput(
            "powers must be > 0 and intensities finite".into(),
        ));
    }
    let mut pts = data.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut distinct = pts.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(FitError::InvalidInput(format!(
            "{} distinct powers, need at least 4",
            distinct.len()
        )));
    }
    let x: Vec<f64> = data.iter().map(|p| p.0).collect();
    let y: Vec<f64> = data.iter().map(|p| p.1).collect();

    // Tail slope over the top three powers bounds beta from above.
    let tail = &pts[pts.len() - 3..];
    let (mx, my) = tail
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 / 3.0, b + p.1 / 3.0));
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let tail_slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };

    let mut best: Option<FitResult> = None;
    for beta0 in [0.5 * tail_slope, 0.0] {
        let emitter: Vec<(f64, f64)> = pts.iter().map(|&(p, i)| (p, i - beta0 * p)).collect();
        let a0 = emitter
            .iter()
            .map(|e| e.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(a0 > 0.0) {
            continue;
        }
        let psat0 = emitter
            .windows(2)
            .find(|w| w[1].1 >= 0.5 * a0 && w[0].1 < 0.5 * a0)
            .map(|w| {
                let f = (0.5 * a0 - w[0].1) / (w[1].1 - w[0].1);
                w[0].0 + f * (w[1].0 - w[0].0)
            })
            .unwrap_or(emitter[0].0)
            .max(1e-3 * distinct[0]);
        // A P/(P + P_sat) only reaches A asymptotically; start above the data.
        let specs = [
            ParamSpec::new("amplitude", 1.2 * a0).bounded(1e-12 * a0, f64::INFINITY),
            ParamSpec::new("saturation_power", psat0).bounded(1e-12 * psat0, f64::INFINITY),
            ParamSpec::new("background_slope", beta0).bounded(0.0, f64::INFINITY),
        ];
        let fit = curve_fit(saturation_model, &x, &y, None, &specs, lm)?;
        let better = match &best {
            None => true,
            Some(b) => (fit.converged, -fit.residual_norm) > (b.converged, -b.residual_norm),
        };
        if better {
            best = Some(fit);
        }
    }
    let mut result =
        best.ok_or_else(|| FitError::InvalidInput("intensities carry no emitter signal".into()))?;
    if let Some(r) = opts.relative_noise {
        for _ in 0..REWEIGHT_PASSES {
            let p: Vec<f64> = result.params.iter().map(|e| e.value).collect();
            let sigma: Vec<f64> = x
                .iter()
                .map(|&xi| r * saturation_model(xi, &p).max(f64::MIN_POSITIVE))
                .collect();
            let specs = [
                ParamSpec::new("amplitude", p[0]).bounded(0.0, f64::INFINITY),
                ParamSpec::new("saturation_power", p[1]).bounded(0.0, f64::INFINITY),
                ParamSpec::new("background_slope", p[2]).bounded(0.0, f64::INFINITY),
            ];
            result = curve_fit(saturation_model, &x, &y, Some(&sigma), &specs, lm)?;
        }
    }
    result.model = "saturation".into();
    let params = SaturationParams {
        amplitude: result.params[0].value,
        saturation_power: result.params[1].value,
        background_slope: result.params[2].value,
    };
    if distinct[distinct.len() - 1] < 0.2 * params.saturation_power {
        result.flags.push(FitFlag::BelowSaturation);
    }
    let emitter_curve = x
        .iter()
        .map(|&p| (p, params.emitter_intensity(p)))
        .collect();
    Ok(SaturationFit {
        result,
        params,
        emitter_curve,
    })
}
