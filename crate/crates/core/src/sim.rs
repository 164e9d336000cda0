//! Event-driven photon generation and HBT detection.
//!
//! The emitter alternates between ground and excited states. From ground
//! it waits for an excitation drawn from the (possibly time-dependent)
//! pump hazard; from excited it waits an exponential time with rate
//! `gamma` and emits. Photons then pass a lossy 50/50 beam splitter onto
//! two detectors with Gaussian timing jitter, dark counts and background.
//!
//! Every random draw comes from a ChaCha stream keyed by the seed, with a
//! separate stream per stage so channel noise does not depend on how many
//! photons the emitter produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::{EmitterParams, PulseParams};
use crate::error::SimError;
use crate::fit::SaturationParams;

const EMISSION_STREAM: u64 = 0;
const DETECTION_STREAM: u64 = 1;
const NOISE_STREAM_BASE: u64 = 2;

/// Temporal profile of each excitation pulse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    /// `w_p exp(-2 (t - t_k) / tau_o)` from the start of every period.
    #[default]
    Exponential,
    /// Constant `w_p` for `tau_o` ns, then off until the next period.
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub emitter: EmitterParams,
    /// Absent for continuous-wave pumping.
    #[serde(default)]
    pub pulse: Option<PulseParams>,
    #[serde(default)]
    pub pulse_shape: PulseShape,
    /// Acquisition time (ns).
    pub duration: f64,
    pub seed: u64,
    /// Overall probability that an emitted photon is registered.
    pub detection_efficiency: f64,
    /// Dark counts per detector (1/ns).
    pub dark_rate_per_channel: f64,
    /// Uncorrelated background photons per detector (1/ns).
    pub background_rate: f64,
    /// Standard deviation of the Gaussian timing jitter (ns).
    pub jitter_sigma: f64,
    /// Non-paralysable detector dead time (ns).
    #[serde(default)]
    pub dead_time: f64,
}

impl SimConfig {
    /// Continuous-wave configuration with an ideal, noiseless detection chain.
    pub fn cw(emitter: EmitterParams, duration: f64, seed: u64) -> Self {
        Self {
            emitter,
            pulse: None,
            pulse_shape: PulseShape::Exponential,
            duration,
            seed,
            detection_efficiency: 1.0,
            dark_rate_per_channel: 0.0,
            background_rate: 0.0,
            jitter_sigma: 0.0,
            dead_time: 0.0,
        }
    }

    pub fn pulsed(emitter: EmitterParams, pulse: PulseParams, duration: f64, seed: u64) -> Self {
        Self {
            pulse: Some(pulse),
            ..Self::cw(emitter, duration, seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.emitter.validate()?;
        if let Some(pulse) = &self.pulse {
            pulse.validate()?;
        }
        let bad = |what: &str, v: f64| Err(SimError::InvalidConfig(format!("{what} = {v}")));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be > 0, got", self.duration);
        }
        if !(0.0..=1.0).contains(&self.detection_efficiency) {
            return bad(
                "detection_efficiency must lie in [0, 1], got",
                self.detection_efficiency,
            );
        }
        for (name, v) in [
            ("dark_rate_per_channel", self.dark_rate_per_channel),
            ("background_rate", self.background_rate),
            ("jitter_sigma", self.jitter_sigma),
            ("dead_time", self.dead_time),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be >= 0, got"), v);
            }
        }
        Ok(())
    }

    /// Expected detections per channel per ns in steady cw operation.
    pub fn expected_channel_rate(&self) -> f64 {
        0.5 * self.detection_efficiency * self.emitter.steady_state_emission_rate()
            + self.dark_rate_per_channel
            + self.background_rate
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Detection times from one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampStream {
    pub channel: u8,
    pub times: Vec<f64>,
    pub duration: f64,
}

impl TimestampStream {
    /// Checks that times increase strictly and lie inside `[0, duration]`.
    pub fn new(channel: u8, times: Vec<f64>, duration: f64) -> Result<Self, SimError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "stream duration {duration}"
            )));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidConfig(format!(
                "channel {channel}: times not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=duration).contains(*t)) {
            return Err(SimError::InvalidConfig(format!(
                "channel {channel}: time {t} outside [0, {duration}]"
            )));
        }
        Ok(Self {
            channel,
            times,
            duration,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean detection rate (1/ns).
    pub fn rate(&self) -> f64 {
        self.times.len() as f64 / self.duration
    }
}

/// Pump hazard over one repetition period.
#[derive(Debug, Clone, Copy)]
struct PulsedPump {
    peak: f64,
    tau_o: f64,
    period: f64,
    shape: PulseShape,
    per_period: f64,
    // reciprocals keep divisions off the serial dependency chain
    inv_period: f64,
    two_over_tau: f64,
    inv_half_area: f64,
    inv_peak: f64,
    inv_per_period: f64,
}

impl PulsedPump {
    fn new(peak: f64, tau_o: f64, period: f64, shape: PulseShape) -> Self {
        let mut pump = Self {
            peak,
            tau_o,
            period,
            shape,
            per_period: 0.0,
            inv_period: 1.0 / period,
            two_over_tau: 2.0 / tau_o,
            inv_half_area: 1.0 / (0.5 * peak * tau_o),
            inv_peak: 1.0 / peak,
            inv_per_period: 0.0,
        };
        pump.per_period = pump.cumulative(period);
        pump.inv_per_period = 1.0 / pump.per_period;
        pump
    }

    /// Integrated pump from the start of a period up to `phase`.
    fn cumulative(&self, phase: f64) -> f64 {
        match self.shape {
            // plain exp is markedly cheaper than exp_m1 in this hot path and
            // the absolute error is far below one ulp of the hazard budget
            PulseShape::Exponential => {
                0.5 * self.peak * self.tau_o * (1.0 - (-self.two_over_tau * phase).exp())
            }
            PulseShape::Rectangular => self.peak * phase.min(self.tau_o),
        }
    }

    /// Phase at which the integrated pump reaches `hazard` (< one period's worth).
    fn phase_at(&self, hazard: f64) -> f64 {
        let phase = match self.shape {
            PulseShape::Exponential => -0.5 * self.tau_o * (1.0 - hazard * self.inv_half_area).ln(),
            PulseShape::Rectangular => hazard * self.inv_peak,
        };
        phase.clamp(0.0, self.period)
    }

    /// Time of the next excitation for an emitter sitting in the ground state
    /// since `t`, given a unit-exponential hazard budget.
    fn next_excitation(&self, t: f64, mut budget: f64) -> f64 {
        let per_period = self.per_period;
        // both quotients are non-negative, so truncation is floor (and much
        // cheaper than the libm call on targets without SSE4.1)
        let mut k = (t * self.inv_period) as u64 as f64;
        let phase = t - k * self.period;
        let used = self.cumulative(phase);
        if budget < per_period - used {
            return k * self.period + self.phase_at(used + budget);
        }
        budget -= per_period - used;
        let skipped = (budget * self.inv_per_period) as u64 as f64;
        budget = (budget - skipped * per_period).max(0.0);
        k += 1.0 + skipped;
        k * self.period + self.phase_at(budget.min(per_period))
    }
}

/// Lazy sequence of emission times for one configuration.
pub struct Emissions {
    rng: ChaCha8Rng,
    t: f64,
    excited: bool,
    pump_rate: f64,
    decay_rate: f64,
    inv_pump: f64,
    inv_decay: f64,
    pulsed: Option<PulsedPump>,
    duration: f64,
    last: f64,
    done: bool,
}

impl Emissions {
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = cfg.rng(EMISSION_STREAM);
        let excited = rng.random::<f64>() < cfg.emitter.initial_excited;
        let pulsed = cfg
            .pulse
            .map(|p| PulsedPump::new(cfg.emitter.pump_rate, p.tau_o, p.period, cfg.pulse_shape));
        Ok(Self {
            rng,
            t: 0.0,
            excited,
            pump_rate: cfg.emitter.pump_rate,
            decay_rate: cfg.emitter.decay_rate,
            inv_pump: 1.0 / cfg.emitter.pump_rate,
            inv_decay: 1.0 / cfg.emitter.decay_rate,
            pulsed,
            duration: cfg.duration,
            last: f64::NEG_INFINITY,
            done: false,
        })
    }
}

impl Iterator for Emissions {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.done {
            return None;
        }
        if !self.excited {
            if self.pump_rate <= 0.0 {
                self.done = true;
                return None;
            }
            let budget: f64 = Exp1.sample(&mut self.rng);
            self.t = match &self.pulsed {
                Some(pump) => pump.next_excitation(self.t, budget),
                None => self.t + budget * self.inv_pump,
            };
            self.excited = true;
        }
        if self.decay_rate <= 0.0 || self.t > self.duration {
            self.done = true;
            return None;
        }
        let wait: f64 = Exp1.sample(&mut self.rng);
        self.t += wait * self.inv_decay;
        self.excited = false;
        if self.t > self.duration {
            self.done = true;
            return None;
        }
        if self.t <= self.last {
            self.t = self.last.next_up();
        }
        self.last = self.t;
        Some(self.t)
    }
}

/// All emission times of one run, strictly increasing.
pub fn simulate_emission(cfg: &SimConfig) -> Result<Vec<f64>, SimError> {
    Ok(Emissions::new(cfg)?.collect())
}

fn poisson_arrivals(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    out.reserve((rate * duration * 1.05) as usize + 16);
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate;
        if t > duration {
            return out;
        }
        out.push(t);
    }
}

/// Sorted union of photon detections and (already sorted) noise events,
/// clipped to the acquisition window.
fn finish_channel(
    channel: u8,
    mut photons: Vec<f64>,
    noise: Vec<f64>,
    cfg: &SimConfig,
) -> TimestampStream {
    photons.retain(|t| (0.0..=cfg.duration).contains(t));
    // jitter only swaps near neighbours; the stable sort finds the long
    // ascending runs and finishes in close to linear time
    photons.sort_by(f64::total_cmp);
    let mut times = Vec::with_capacity(photons.len() + noise.len());
    let (mut i, mut j) = (0, 0);
    while i < photons.len() && j < noise.len() {
        if photons[i] <= noise[j] {
            times.push(photons[i]);
            i += 1;
        } else {
            times.push(noise[j]);
            j += 1;
        }
    }
    times.extend_from_slice(&photons[i..]);
    times.extend_from_slice(&noise[j..]);
    drop(photons);
    times.dedup();
    if cfg.dead_time > 0.0 {
        let mut last = f64::NEG_INFINITY;
        times.retain(|&t| {
            let keep = t - last >= cfg.dead_time;
            if keep {
                last = t;
            }
            keep
        });
    }
    TimestampStream {
        channel,
        times,
        duration: cfg.duration,
    }
}

/// Beam splitter plus two detectors. Emissions must be sorted.
pub fn detect_hbt<I>(
    emissions: I,
    cfg: &SimConfig,
) -> Result<(TimestampStream, TimestampStream), SimError>
where
    I: IntoIterator<Item = f64>,
{
    cfg.validate()?;
    let mut rng = cfg.rng(DETECTION_STREAM);
    let noise_rate = cfg.dark_rate_per_channel + cfg.background_rate;
    let noise = [
        poisson_arrivals(noise_rate, cfg.duration, &mut cfg.rng(NOISE_STREAM_BASE)),
        poisson_arrivals(
            noise_rate,
            cfg.duration,
            &mut cfg.rng(NOISE_STREAM_BASE + 1),
        ),
    ];
    let mut channels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut previous = f64::NEG_INFINITY;
    for t in emissions {
        if t < previous {
            return Err(SimError::InvalidConfig(
                "emission times are not sorted".into(),
            ));
        }
        previous = t;
        if !rng.random_bool(cfg.detection_efficiency) {
            continue;
        }
        let side = usize::from(rng.random_bool(0.5));
        let jitter = if cfg.jitter_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.jitter_sigma * z
        } else {
            0.0
        };
        channels[side].push(t + jitter);
    }
    let [c1, c2] = channels;
    let [n1, n2] = noise;
    Ok((
        finish_channel(1, c1, n1, cfg),
        finish_channel(2, c2, n2, cfg),
    ))
}

/// Emitter plus detection chain in one pass, without materialising the
/// emission list.
pub fn simulate(cfg: &SimConfig) -> Result<(TimestampStream, TimestampStream), SimError> {
    detect_hbt(Emissions::new(cfg)?, cfg)
}

/// How [`pump_for_intensity_curve`] evaluates each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityMode {
    ClosedForm,
    /// Run the simulator at every power and report the total count rate.
    Simulated,
}

/// Fluorescence intensity (counts/s) against pump power (uW).
///
/// The pump rate scales linearly with power and equals the decay rate at
/// the saturation power; the background grows as `beta * P`. In simulated
/// mode the saturated amplitude is fixed by the emitter itself
/// (`detection_efficiency * gamma`), so `sat.amplitude` has to agree with it,
/// and the configured dark counts add a constant offset.
pub fn pump_for_intensity_curve(
    powers: &[f64],
    cfg: &SimConfig,
    sat: &SaturationParams,
    mode: IntensityMode,
) -> Result<Vec<(f64, f64)>, SimError> {
    sat.validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(SimError::InvalidConfig(format!("power {p} must be > 0")));
    }
    match mode {
        IntensityMode::ClosedForm => Ok(powers.iter().map(|&p| (p, sat.intensity(p))).collect()),
        IntensityMode::Simulated => {
            cfg.validate()?;
            let implied = cfg.detection_efficiency * cfg.emitter.decay_rate * 1e9;
            if (implied - sat.amplitude).abs() > 1e-6 * sat.amplitude {
                return Err(SimError::InvalidConfig(format!(
                    "amplitude {} cps disagrees with the emitter's saturated rate {implied} cps",
                    sat.amplitude
                )));
            }
            powers
                .par_iter()
                .enumerate()
                .map(|(i, &p)| {
                    let mut run = cfg.clone();
                    run.seed = split_seed(cfg.seed, i as u64);
                    run.emitter.pump_rate = cfg.emitter.decay_rate * p / sat.saturation_power;
                    run.background_rate =
                        cfg.background_rate + 0.5 * sat.background_slope * p * 1e-9;
                    let (a, b) = simulate(&run)?;
                    Ok((p, (a.len() + b.len()) as f64 / run.duration * 1e9))
                })
                .collect()
        }
    }
}

/// Closed-form saturation curve with independent Gaussian multiplicative
/// noise `I (1 + r z)`, reproducible from `seed`.
pub fn noisy_intensity_curve(
    powers: &[f64],
    sat: &SaturationParams,
    relative_noise: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, SimError> {
    if !(relative_noise.is_finite() && relative_noise >= 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "relative noise must be >= 0, got {relative_noise}"
        )));
    }
    let exact = pump_for_intensity_curve(
        powers,
        &SimConfig::cw(EmitterParams::new(0.0, 0.0, 0.0)?, 1.0, seed),
        sat,
        IntensityMode::ClosedForm,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(exact
        .into_iter()
        .map(|(p, i)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (p, i * (1.0 + relative_noise * z))
        })
        .collect())
}

/// Derives an independent seed for the `index`-th run of a sweep.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
