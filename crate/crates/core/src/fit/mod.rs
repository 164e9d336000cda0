//! Nonlinear least-squares fits of the autocorrelation and saturation models.

mod engine;
mod g2;
mod saturation;

use serde::Serialize;

use crate::error::FitError;

pub use engine::{curve_fit, jacobian, least_squares, LmOptions, ParamSpec, DEFAULT_FD_STEP};
pub use g2::{
    fit_g2_cw, fit_g2_pulsed, g2_cw_model, g2_pulsed_model, CwFitOptions, PulsedFitOptions,
};
pub use saturation::{
    fit_saturation, fit_saturation_with, saturation_model, SaturationFit, SaturationFitOptions,
    SaturationParams,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// One standard deviation; infinite when the data do not constrain it.
    pub sigma: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum FitFlag {
    /// No dip (or no curvature) in the data: the width is meaningless.
    DegenerateData,
    Unidentifiable {
        name: String,
    },
    AtBound {
        name: String,
    },
    /// Every power sits far below the fitted saturation power.
    BelowSaturation,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<Estimate>,
    /// Quantities computed from the parameters, with propagated errors.
    pub derived: Vec<Estimate>,
    /// Sum of squared (weighted) residuals.
    pub residual_norm: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Largest cosine between the residual vector and a Jacobian column.
    pub gradient_norm: f64,
    pub flags: Vec<FitFlag>,
    pub covariance: Vec<Vec<f64>>,
    /// Cost after every accepted step, starting point first.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl FitResult {
    fn find(&self, name: &str) -> Option<&Estimate> {
        self.params
            .iter()
            .chain(&self.derived)
            .find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.find(name).map(|e| e.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.find(name).map(|e| e.sigma)
    }

    pub fn has_flag(&self, flag: &FitFlag) -> bool {
        self.flags.contains(flag)
    }

    pub fn require_converged(self) -> Result<Self, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::NoConvergence {
                iterations: self.iterations,
            })
        }
    }

    /// First-order error propagation of `f(params)` given its gradient.
    fn propagate(&self, grad: &[(usize, f64)]) -> f64 {
        let mut var = 0.0;
        for &(a, ga) in grad {
            if self.params[a].sigma.is_infinite() && ga != 0.0 {
                return f64::INFINITY;
            }
            for &(b, gb) in grad {
                var += ga * gb * self.covariance[a][b];
            }
        }
        var.max(0.0).sqrt()
    }

    fn push_derived(&mut self, name: &str, value: f64, sigma: f64) {
        self.derived.push(Estimate {
            name: name.to_owned(),
            value,
            sigma,
            fixed: false,
        });
    }

    /// Pretty JSON report.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serialises")
    }
}
