//! Closed-form rate-equation model of a pumped three-level emitter.
//!
//! The intermediate level relaxes instantaneously into the emitting level,
//! so the dynamics reduce to a ground/excited pair driven by an effective
//! pump rate `w_p` and drained by spontaneous decay `gamma`. Every rate in
//! this crate is stored in 1/ns; a millisecond lifetime is `gamma = 1e-6`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Spontaneous decay rate for a ~1 ms radiative lifetime, in 1/ns.
pub const MILLISECOND_DECAY_RATE: f64 = 1.0e-6;

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ModelError> {
    if value.is_finite() && ok {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

/// Rates and initial conditions of the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Effective pump rate from ground into the emitting level (1/ns).
    pub pump_rate: f64,
    /// Spontaneous decay rate of the emitting level (1/ns).
    pub decay_rate: f64,
    /// Residual autocorrelation at zero delay.
    pub g2_zero: f64,
    /// Excited population at the start of the correlation interval.
    #[serde(default)]
    pub initial_excited: f64,
}

impl EmitterParams {
    pub fn new(pump_rate: f64, decay_rate: f64, g2_zero: f64) -> Result<Self, ModelError> {
        let p = Self {
            pump_rate,
            decay_rate,
            g2_zero,
            initial_excited: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_initial_excited(mut self, initial_excited: f64) -> Result<Self, ModelError> {
        self.initial_excited = initial_excited;
        self.validate()?;
        Ok(self)
    }

    /// A zero pump rate is accepted: it describes an emitter that is never
    /// driven, which the simulator turns into an empty photon stream.
    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            "pump_rate",
            self.pump_rate,
            self.pump_rate >= 0.0,
            "must be >= 0",
        )?;
        check(
            "decay_rate",
            self.decay_rate,
            self.decay_rate >= 0.0,
            "must be >= 0",
        )?;
        check(
            "g2_zero",
            self.g2_zero,
            (0.0..=1.0).contains(&self.g2_zero),
            "must lie in [0, 1]",
        )?;
        check(
            "initial_excited",
            self.initial_excited,
            (0.0..=1.0).contains(&self.initial_excited),
            "must lie in [0, 1]",
        )
    }

    /// Total relaxation rate `w_p + gamma`.
    pub fn total_rate(&self) -> f64 {
        self.pump_rate + self.decay_rate
    }

    /// Long-time excited population `w_p / (w_p + gamma)`.
    pub fn steady_state_population(&self) -> f64 {
        let total = self.total_rate();
        if total > 0.0 {
            self.pump_rate / total
        } else {
            self.initial_excited
        }
    }

    /// Photon emission rate in steady state, `gamma * w_p / (w_p + gamma)`.
    pub fn steady_state_emission_rate(&self) -> f64 {
        self.decay_rate * self.steady_state_population()
    }

    /// Dip width `2 / w_p` in ns.
    pub fn dip_width(&self) -> f64 {
        2.0 / self.pump_rate
    }
}

/// Shape parameters of the pulsed-excitation envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Envelope time constant (ns).
    pub tau_o: f64,
    /// Pulse repetition period (ns).
    pub period: f64,
}

impl PulseParams {
    pub fn new(tau_o: f64, period: f64) -> Result<Self, ModelError> {
        let p = Self { tau_o, period };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("tau_o", self.tau_o, self.tau_o > 0.0, "must be > 0")?;
        check(
            "period",
            self.period,
            self.period > self.tau_o,
            "must exceed the envelope time constant",
        )
    }

    /// Envelope factor `exp(-2 tau / tau_o)`.
    pub fn envelope(&self, tau: f64) -> f64 {
        (-2.0 * tau / self.tau_o).exp()
    }
}

/// Emitter share of the detected intensity, `rho = I_em / (I_em + I_bg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMix {
    pub rho: f64,
}

impl BackgroundMix {
    pub fn new(rho: f64) -> Result<Self, ModelError> {
        check("rho", rho, (0.0..=1.0).contains(&rho), "must lie in [0, 1]")?;
        Ok(Self { rho })
    }

    pub fn from_intensities(emitter: f64, background: f64) -> Result<Self, ModelError> {
        check("emitter intensity", emitter, emitter >= 0.0, "must be >= 0")?;
        check(
            "background intensity",
            background,
            background >= 0.0,
            "must be >= 0",
        )?;
        let total = emitter + background;
        if total <= 0.0 {
            return Err(ModelError::ZeroIntensity);
        }
        Ok(Self {
            rho: emitter / total,
        })
    }
}

fn non_negative_delay(tau: f64) -> Result<(), ModelError> {
    check("tau", tau, tau >= 0.0, "delay must be >= 0")
}

/// Excited-state population `rho_e(tau)` from the rate equation
/// `d rho_e / dt = w_p (1 - rho_e) - gamma rho_e`.
pub fn excited_population(p: &EmitterParams, tau: f64) -> Result<f64, ModelError> {
    p.validate()?;
    non_negative_delay(tau)?;
    let decay = (-p.total_rate() * tau).exp();
    Ok(p.steady_state_population() * (1.0 - decay) + p.initial_excited * decay)
}

/// Continuous-wave autocorrelation `1 - (1 - g2(0)) exp(-(w_p + gamma)|tau|)`.
///
/// The dip is symmetric, so negative delays are accepted.
pub fn g2_cw(p: &EmitterParams, tau: f64) -> Result<f64, ModelError> {
    p.validate()?;
    check("tau", tau, true, "must be finite")?;
    Ok(p.g2_zero - (1.0 - p.g2_zero) * (-p.total_rate() * tau.abs()).exp_m1())
}

/// Pulsed autocorrelation: the reduced cw dip (decay rate neglected) under
/// the excitation envelope `exp(-2 tau / tau_o)`.
pub fn g2_pulsed(p: &EmitterParams, pulse: &PulseParams, tau: f64) -> Result<f64, ModelError> {
    p.validate()?;
    pulse.validate()?;
    non_negative_delay(tau)?;
    Ok(pulse.envelope(tau) * (p.g2_zero - (1.0 - p.g2_zero) * (-p.pump_rate * tau).exp_m1()))
}

/// Autocorrelation measured through an uncorrelated background,
/// `1 - rho^2 + rho^2 g2`.
pub fn g2_background_mixed(g2: f64, mix: &BackgroundMix) -> Result<f64, ModelError> {
    check("g2", g2, g2 >= 0.0, "must be >= 0")?;
    let rho2 = mix.rho * mix.rho;
    Ok(1.0 - rho2 + rho2 * g2)
}

/// Background-corrected autocorrelation recovered from a measured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Corrected {
    pub value: f64,
    /// Noisy inputs can land below zero; the value is kept unclamped and
    /// this flag is raised instead.
    pub negative: bool,
}

/// Inverse of [`g2_background_mixed`]: `(g2_exp - 1 + rho^2) / rho^2`.
pub fn invert_background(g2_exp: f64, mix: &BackgroundMix) -> Result<Corrected, ModelError> {
    check("g2_exp", g2_exp, true, "must be finite")?;
    if mix.rho <= 0.0 {
        return Err(ModelError::DegenerateMix);
    }
    let rho2 = mix.rho * mix.rho;
    let value = (g2_exp - 1.0 + rho2) / rho2;
    Ok(Corrected {
        value,
        negative: value < 0.0,
    })
}

/// Zero-delay peak area of the pulsed autocorrelation normalised by the
/// envelope area: `1 - (1 + w_p tau_o / 2)^-1 (1 - g2(0))`.
pub fn g2_integrated_zero(p: &EmitterParams, pulse: &PulseParams) -> Result<f64, ModelError> {
    p.validate()?;
    pulse.validate()?;
    Ok(1.0 - (1.0 - p.g2_zero) / (1.0 + 0.5 * p.pump_rate * pulse.tau_o))
}

/// Dip width `2 / w_p` recovered from an integrated zero-delay value,
/// `tau_o (1 - g2_int) / (g2_int - g2(0))`.
pub fn pump_rate_from_integrated(g2_int: f64, g2_zero: f64, tau_o: f64) -> Result<f64, ModelError> {
    check("g2_int", g2_int, true, "must be finite")?;
    check("g2_zero", g2_zero, true, "must be finite")?;
    check("tau_o", tau_o, tau_o > 0.0, "must be > 0")?;
    if g2_int <= g2_zero {
        return Err(ModelError::DegenerateInput {
            reason: "integrated g2 must exceed g2(0)",
        });
    }
    Ok(tau_o * (1.0 - g2_int) / (g2_int - g2_zero))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rk4_population(p: &EmitterParams, tau: f64, dt: f64) -> f64 {
        let f = |x: f64| p.pump_rate * (1.0 - x) - p.decay_rate * x;
        let steps = (tau / dt).round() as usize;
        let h = tau / steps.max(1) as f64;
        let mut x = p.initial_excited;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn pulsed_reference() -> (EmitterParams, PulseParams) {
        (
            EmitterParams::new(2.0 / 2.6, 0.0, 0.1).unwrap(),
            PulseParams::new(6.0, 100.0).unwrap(),
        )
    }

    #[test]
    fn population_limits() {
        let p = EmitterParams::new(0.3, 0.3, 0.0).unwrap();
        assert!((excited_population(&p, 1e6).unwrap() - 0.5).abs() < 1e-12);
        let q = p.with_initial_excited(0.7).unwrap();
        assert_eq!(excited_population(&q, 0.0).unwrap(), 0.7);
    }

    #[test]
    fn population_matches_integrator() {
        let p = EmitterParams::new(0.5, 0.5, 0.0).unwrap();
        let oracle = rk4_population(&p, 1.0, 1e-4);
        assert!((oracle - 0.316_060_279_414_278_6).abs() < 1e-9);
        assert!((excited_population(&p, 1.0).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn cw_dip_values() {
        let p = EmitterParams::new(0.5, 0.0, 0.46).unwrap();
        assert_eq!(g2_cw(&p, 0.0).unwrap(), 0.46);
        assert!((g2_cw(&p, 1e4).unwrap() - 1.0).abs() < 1e-12);
        let expected = 1.0 - 0.54 * (-2.0f64).exp();
        assert!((g2_cw(&p, 4.0).unwrap() - expected).abs() < 1e-12);
        assert!((g2_cw(&p, 4.0).unwrap() - 0.9269).abs() < 1e-4);
        assert_eq!(g2_cw(&p, -4.0).unwrap(), g2_cw(&p, 4.0).unwrap());
    }

    #[test]
    fn pulsed_values() {
        let (p, pulse) = pulsed_reference();
        assert_eq!(g2_pulsed(&p, &pulse, 0.0).unwrap(), 0.1);
        let v = g2_pulsed(&p, &pulse, 2.6).unwrap();
        assert!((v - 0.369).abs() < 5e-4, "{v}");
        // independent evaluation at ten delays
        for i in 0..10 {
            let tau = 0.7 * i as f64;
            let direct = (-2.0 * tau / 6.0).exp() * (1.0 - 0.9 * (-tau / 1.3).exp());
            assert!((g2_pulsed(&p, &pulse, tau).unwrap() - direct).abs() < 1e-14);
        }
        assert!(g2_pulsed(&p, &pulse, -1.0).is_err());
    }

    #[test]
    fn long_envelope_reduces_to_cw() {
        let p = EmitterParams::new(0.4, 0.0, 0.2).unwrap();
        let pulse = PulseParams::new(1e12, 1e13).unwrap();
        for tau in [0.0f64, 0.5, 3.0, 10.0] {
            let reduced = 1.0 - 0.8 * (-0.4 * tau).exp();
            assert!((g2_pulsed(&p, &pulse, tau).unwrap() - reduced).abs() < 1e-9);
        }
    }

    #[test]
    fn background_mixing() {
        let mix = BackgroundMix::new(0.92).unwrap();
        assert!((g2_background_mixed(0.1, &mix).unwrap() - 0.238_24).abs() < 1e-12);
        assert_eq!(
            g2_background_mixed(0.3, &BackgroundMix::new(1.0).unwrap()).unwrap(),
            0.3
        );
        assert_eq!(
            g2_background_mixed(0.3, &BackgroundMix::new(0.0).unwrap()).unwrap(),
            1.0
        );

        let inv = invert_background(0.2, &mix).unwrap();
        assert!((inv.value - 0.0464 / 0.8464).abs() < 1e-12);
        assert!((inv.value - 0.055).abs() < 1e-3);
        assert!(!inv.negative);
        let half = BackgroundMix::new(0.5).unwrap();
        assert!((invert_background(1.0, &half).unwrap().value - 1.0).abs() < 1e-15);
        assert!(invert_background(0.0, &half).unwrap().negative);
        assert_eq!(
            invert_background(0.5, &BackgroundMix::new(0.0).unwrap()),
            Err(ModelError::DegenerateMix)
        );
    }

    #[test]
    fn integrated_zero_values() {
        let (p, pulse) = pulsed_reference();
        let v = g2_integrated_zero(&p, &pulse).unwrap();
        assert!((v - (1.0 - 0.9 / (1.0 + 6.0 / 2.6))).abs() < 1e-12);
        assert!((v - 0.728).abs() < 1e-3);

        let numeric = simpson(|t| g2_pulsed(&p, &pulse, t).unwrap(), 0.0, 300.0, 200_000)
            / simpson(|t| pulse.envelope(t), 0.0, 300.0, 200_000);
        assert!((numeric - v).abs() < 1e-3);

        let short = EmitterParams::new(1e-9, 0.0, 0.3).unwrap();
        assert!((g2_integrated_zero(&short, &pulse).unwrap() - 0.3).abs() < 1e-8);
        let long = EmitterParams::new(1e9, 0.0, 0.3).unwrap();
        assert!((g2_integrated_zero(&long, &pulse).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dip_width_inversion() {
        let w = pump_rate_from_integrated(0.31, 0.1, 6.0).unwrap();
        assert!((w - 19.714_285_714_285_715).abs() < 1e-9);
        assert!(w > 4.0 && w < 32.0, "outside the 18 +/- 14 ns band");
        // longer dips need a smaller integrated value; it diverges as g_int -> g2(0)
        assert!(pump_rate_from_integrated(0.99, 0.1, 6.0).unwrap() < w);
        assert!(pump_rate_from_integrated(0.1 + 1e-9, 0.1, 6.0).unwrap() > 1e9);
        assert!(pump_rate_from_integrated(0.1, 0.1, 6.0).is_err());
        assert!(pump_rate_from_integrated(0.05, 0.1, 6.0).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(EmitterParams::new(-1.0, 0.0, 0.0).is_err());
        assert!(EmitterParams::new(1.0, -1.0, 0.0).is_err());
        assert!(EmitterParams::new(1.0, 0.0, 1.2).is_err());
        assert!(EmitterParams::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(EmitterParams::new(1.0, 0.0, 0.0)
            .unwrap()
            .with_initial_excited(2.0)
            .is_err());
        assert!(PulseParams::new(6.0, 5.0).is_err());
        assert!(PulseParams::new(0.0, 5.0).is_err());
        assert!(BackgroundMix::new(1.01).is_err());
        assert_eq!(
            BackgroundMix::from_intensities(0.0, 0.0),
            Err(ModelError::ZeroIntensity)
        );
    }

    proptest! {
        #[test]
        fn mixing_round_trip(g in 0.0f64..1.0, rho in 0.01f64..=1.0) {
            let mix = BackgroundMix::new(rho).unwrap();
            let back = invert_background(g2_background_mixed(g, &mix).unwrap(), &mix).unwrap();
            prop_assert!((back.value - g).abs() < 1e-12);
        }

        #[test]
        fn cw_bounded_and_monotone(g0 in 0.0f64..=1.0, wp in 1e-3f64..5.0, gamma in 0.0f64..1.0,
                                   a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let p = EmitterParams::new(wp, gamma, g0).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let ga = g2_cw(&p, lo).unwrap();
            let gb = g2_cw(&p, -hi).unwrap();
            prop_assert!(ga >= g0 - 1e-15 && gb <= 1.0 + 1e-15);
            prop_assert!(gb >= ga - 1e-15);
        }

        #[test]
        fn population_tracks_rate_equation(wp in 0.01f64..2.0, gamma in 0.0f64..2.0,
                                           rho0 in 0.0f64..=1.0, tau in 0.0f64..5.0) {
            let p = EmitterParams::new(wp, gamma, 0.0).unwrap().with_initial_excited(rho0).unwrap();
            let closed = excited_population(&p, tau).unwrap();
            prop_assert!((0.0..=1.0).contains(&closed));
            prop_assert!((closed - rk4_population(&p, tau, 1e-3)).abs() < 1e-6);
        }

        #[test]
        fn integrated_inverse(g0 in 0.0f64..0.9, wp in 0.01f64..5.0, tau_o in 0.5f64..20.0) {
            let p = EmitterParams::new(wp, 0.0, g0).unwrap();
            let pulse = PulseParams::new(tau_o, 10.0 * tau_o).unwrap();
            let g_int = g2_integrated_zero(&p, &pulse).unwrap();
            let width = pump_rate_from_integrated(g_int, g0, tau_o).unwrap();
            prop_assert!((width - 2.0 / wp).abs() <= 1e-9 * (2.0 / wp));
        }
    }
}
