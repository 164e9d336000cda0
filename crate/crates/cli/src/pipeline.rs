//! `simulate -> correlate -> integrate/fit` chained from one JSON config.
//!
//! Repeated runs use seeds derived from the configured one, so a sweep is
//! reproducible from the config alone and independent of the worker count.

use std::path::Path;

use antibunch::acquire;
use antibunch::correlator::{
    estimate_flat_background, integrate_peaks, normalize_cw, CoincidenceHistogram,
    CorrelatorConfig, PeakIntegration, DEFAULT_PEAK_HALF_WIDTH,
};
use antibunch::fit::{
    fit_g2_cw, fit_g2_pulsed, fit_saturation_with, CwFitOptions, FitResult, PulsedFitOptions,
    SaturationFit, SaturationFitOptions, SaturationParams,
};
use antibunch::io::{histogram_csv, saturation_csv};
use antibunch::sim::{
    noisy_intensity_curve, pump_for_intensity_curve, split_seed, IntensityMode, SimConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::{ensure_dir, write_csv, write_json};

/// Default distance from every pulse peak beyond which histogram bins are
/// treated as flat background (ns).
pub const DEFAULT_BACKGROUND_GUARD: f64 = 40.0;

fn one() -> usize {
    1
}

fn default_half_width() -> f64 {
    DEFAULT_PEAK_HALF_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub simulation: SimConfig,
    pub correlator: CorrelatorConfig,
    /// Independent blocks each run is simulated in.
    #[serde(default = "one")]
    pub segments: usize,
    /// Repetitions with derived seeds.
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub peaks: Option<PeakOptions>,
    #[serde(default)]
    pub fit: Option<FitOptions>,
    #[serde(default)]
    pub saturation: Option<SaturationOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakBackground {
    None,
    /// Mean of the bins at least `guard` ns from every peak.
    Flat {
        guard: f64,
    },
    PerBin(f64),
}

impl Default for PeakBackground {
    fn default() -> Self {
        Self::Flat {
            guard: DEFAULT_BACKGROUND_GUARD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakOptions {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Defaults to the simulated pulse period.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub background: PeakBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DipModel {
    Cw,
    Pulsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub model: DipModel,
    #[serde(default)]
    pub fit_window: Option<f64>,
    #[serde(default)]
    pub rho_fixed: Option<f64>,
    #[serde(default)]
    pub unweighted: bool,
    /// Defaults to the simulated pulse width.
    #[serde(default)]
    pub tau_o: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaturationMode {
    #[default]
    ClosedForm,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationOptions {
    pub powers: Vec<f64>,
    pub params: SaturationParams,
    #[serde(default)]
    pub mode: SaturationMode,
    /// Multiplicative Gaussian noise on closed-form points; also used to
    /// weight the fit when positive.
    #[serde(default)]
    pub relative_noise: f64,
    /// Acquisition time per power in simulated mode (ns).
    #[serde(default)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub index: usize,
    pub seed: u64,
    pub channel_counts: [u64; 2],
    pub duration: f64,
    pub total_pairs: u64,
    pub peaks: Option<PeakIntegration>,
    pub fit: Option<FitResult>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub histogram: CoincidenceHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationOutput {
    pub data: Vec<(f64, f64)>,
    pub fit: SaturationFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub runs: Vec<RunOutput>,
    pub saturation: Option<SaturationOutput>,
}

impl PipelineReport {
    /// Whether every fit that was attempted converged.
    pub fn converged(&self) -> bool {
        self.runs
            .iter()
            .filter_map(|r| r.fit.as_ref())
            .all(|f| f.converged)
            && self
                .saturation
                .as_ref()
                .is_none_or(|s| s.fit.result.converged)
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.simulation.validate()?;
        if self.runs == 0 || self.segments == 0 {
            return Err(CliError::invalid("runs and segments must be >= 1"));
        }
        if let Some(s) = &self.saturation {
            s.params.validate()?;
            if s.mode == SaturationMode::Simulated && s.duration.is_none() {
                return Err(CliError::invalid("simulated saturation needs a duration"));
            }
        }
        Ok(())
    }

    /// Seed of the `index`-th run.
    pub fn run_seed(&self, index: usize) -> u64 {
        if self.runs == 1 {
            self.simulation.seed
        } else {
            split_seed(self.simulation.seed, index as u64)
        }
    }

    fn pulse_period(&self) -> Option<f64> {
        self.simulation.pulse.map(|p| p.period)
    }
}

/// Simulates, correlates and analyses one run.
pub fn run_one(cfg: &PipelineConfig, index: usize) -> Result<RunOutput, CliError> {
    let mut sim = cfg.simulation.clone();
    sim.seed = cfg.run_seed(index);
    let acq = acquire(&sim, &cfg.correlator, cfg.segments)?;
    let (r1, r2) = acq.rates();
    let mut warnings = Vec::new();
    let histogram = if r1 > 0.0 && r2 > 0.0 {
        normalize_cw(&acq.histogram, r1, r2, acq.duration)?
    } else {
        warnings.push("a channel recorded no events; histogram left unnormalised".to_owned());
        acq.histogram.clone()
    };

    let peaks = match &cfg.peaks {
        None => None,
        Some(p) => {
            let period = p
                .period
                .or(cfg.pulse_period())
                .ok_or_else(|| CliError::invalid("peak integration needs a period"))?;
            let bg = match p.background {
                PeakBackground::None => 0.0,
                PeakBackground::Flat { guard } => {
                    estimate_flat_background(&acq.histogram, period, guard)?
                }
                PeakBackground::PerBin(v) => v,
            };
            Some(integrate_peaks(&acq.histogram, p.half_width, period, bg)?)
        }
    };

    let fit = match &cfg.fit {
        None => None,
        Some(f) => Some(match f.model {
            DipModel::Cw => fit_g2_cw(
                &histogram,
                &CwFitOptions {
                    fit_window: f.fit_window,
                    unweighted: f.unweighted,
                    lm: None,
                },
            )?,
            DipModel::Pulsed => {
                let tau_o = f
                    .tau_o
                    .or(sim.pulse.map(|p| p.tau_o))
                    .ok_or_else(|| CliError::invalid("pulsed fit needs tau_o"))?;
                fit_g2_pulsed(
                    &histogram,
                    tau_o,
                    &PulsedFitOptions {
                        rho_fixed: f.rho_fixed,
                        fit_window: f.fit_window,
                        unweighted: f.unweighted,
                        lm: None,
                    },
                )?
            }
        }),
    };

    Ok(RunOutput {
        index,
        seed: sim.seed,
        channel_counts: acq.channel_counts,
        duration: acq.duration,
        total_pairs: acq.histogram.total_pairs,
        peaks,
        fit,
        warnings,
        histogram,
    })
}

pub fn run_saturation(
    cfg: &PipelineConfig,
    s: &SaturationOptions,
) -> Result<SaturationOutput, CliError> {
    let seed = split_seed(cfg.simulation.seed, u64::MAX);
    let data = match s.mode {
        SaturationMode::ClosedForm => {
            noisy_intensity_curve(&s.powers, &s.params, s.relative_noise, seed)?
        }
        SaturationMode::Simulated => {
            let mut sim = cfg.simulation.clone();
            sim.seed = seed;
            sim.duration = s.duration.unwrap_or(sim.duration);
            pump_for_intensity_curve(&s.powers, &sim, &s.params, IntensityMode::Simulated)?
        }
    };
    let opts = SaturationFitOptions {
        relative_noise: (s.relative_noise > 0.0).then_some(s.relative_noise),
        ..Default::default()
    };
    let fit = fit_saturation_with(&data, &opts)?;
    Ok(SaturationOutput { data, fit })
}

/// Runs everything on a pool of `workers` threads (all cores if `None`).
pub fn run(cfg: &PipelineConfig, workers: Option<usize>) -> Result<PipelineReport, CliError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::invalid("workers must be >= 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let runs = (0..cfg.runs)
            .into_par_iter()
            .map(|i| run_one(cfg, i))
            .collect::<Result<Vec<_>, _>>()?;
        let saturation = cfg
            .saturation
            .as_ref()
            .map(|s| run_saturation(cfg, s))
            .transpose()?;
        Ok(PipelineReport {
            config: cfg.clone(),
            runs,
            saturation,
        })
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'static str,
    file: &'a str,
    run: Option<usize>,
    seed: Option<u64>,
    config: &'a PipelineConfig,
}

/// Writes the report under `dir`. A single run goes straight into `dir`,
/// repeated runs into `run_000`, `run_001`, ...
pub fn write_report(report: &PipelineReport, dir: &Path) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let single = report.runs.len() == 1;
    for r in &report.runs {
        let sub = if single {
            dir.to_path_buf()
        } else {
            dir.join(format!("run_{:03}", r.index))
        };
        ensure_dir(&sub)?;
        let sidecar = |file| Sidecar {
            command: "pipeline",
            file,
            run: Some(r.index),
            seed: Some(r.seed),
            config: &report.config,
        };
        write_csv(
            &sub.join("histogram.csv"),
            &histogram_csv(&r.histogram),
            &sidecar("histogram"),
        )?;
        if let Some(p) = &r.peaks {
            write_json(&sub.join("peaks.json"), p)?;
        }
        if let Some(f) = &r.fit {
            write_json(&sub.join("fit.json"), f)?;
        }
    }
    if let Some(s) = &report.saturation {
        let sidecar = |file| Sidecar {
            command: "pipeline",
            file,
            run: None,
            seed: None,
            config: &report.config,
        };
        write_csv(
            &dir.join("saturation.csv"),
            &saturation_csv(&s.data),
            &sidecar("saturation"),
        )?;
        write_csv(
            &dir.join("emitter_curve.csv"),
            &saturation_csv(&s.fit.emitter_curve),
            &sidecar("emitter_curve"),
        )?;
        write_json(&dir.join("saturation_fit.json"), &s.fit)?;
    }
    write_json(&dir.join("pipeline.json"), report)
}
