use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antibunch::correlator::{
    cross_correlate_with, estimate_flat_background, integrate_peaks, normalize_cw, CorrelationMode,
    CorrelatorConfig, DEFAULT_BIN_WIDTH, DEFAULT_CW_WINDOW, DEFAULT_PEAK_HALF_WIDTH,
};
use antibunch::fiber::{
    channeling_efficiency, confinement_efficiency, confinement_sweep, critical_offset,
    tir_area_fraction, wgm_mode_numbers,
};
use antibunch::fit::{
    fit_g2_cw, fit_g2_pulsed, fit_saturation_with, CwFitOptions, FitResult, LmOptions,
    PulsedFitOptions, SaturationFitOptions,
};
use antibunch::io::{
    histogram_csv, read_histogram_csv, read_saturation_csv, read_stream_csv, saturation_csv,
    stream_csv, sweep_csv,
};
use antibunch::sim::{simulate, PulseShape, TimestampStream};
use antibunch::{EmitterParams, FiberGeometry, PulseParams, SimConfig};
use antibunch_cli::error::{CliError, ErrorKind};
use antibunch_cli::output::{ensure_dir, rounded, sidecar_path, write_csv, write_json};
use antibunch_cli::pipeline::{self, PipelineConfig, DEFAULT_BACKGROUND_GUARD};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Photon antibunching toolkit: simulate HBT streams, correlate, fit, and
/// evaluate tapered-fiber ray optics. Times are in ns, rates per ns unless
/// a flag name says otherwise.
#[derive(Parser)]
#[command(name = "antibunch", version)]
struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, env = "ANTIBUNCH_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single emitter observed by two detectors.
    Simulate(SimulateArgs),
    /// Histogram the delays between two detector streams.
    Correlate(CorrelateArgs),
    /// Fit a normalised histogram or a saturation curve.
    Fit(FitArgs),
    /// Ray-optics quantities of a tapered fiber.
    Geometry {
        #[command(subcommand)]
        command: GeometryCommand,
    },
    /// Run simulate, correlate and analysis from one JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Pump rate w_p (1/ns).
    #[arg(long, default_value_t = 1e-3)]
    wp: f64,
    /// Spontaneous decay rate gamma (1/ns).
    #[arg(long, default_value_t = 1e-6)]
    gamma: f64,
    /// Acquisition time (ns).
    #[arg(long, default_value_t = 1e9)]
    duration: f64,
    /// Pulsed instead of continuous-wave pumping.
    #[arg(long)]
    pulsed: bool,
    /// Pulse width (ns).
    #[arg(long, default_value_t = 6.0)]
    tau_o: f64,
    /// Pulse repetition period (ns).
    #[arg(long, default_value_t = 100.0)]
    period: f64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Exponential)]
    pulse_shape: ShapeArg,
    /// Probability that an emitted photon is detected.
    #[arg(long, default_value_t = 1.0)]
    efficiency: f64,
    /// Dark counts per detector (counts/s).
    #[arg(long, default_value_t = 0.0)]
    dark_cps: f64,
    /// Uncorrelated background per detector (counts/s).
    #[arg(long, default_value_t = 0.0)]
    background_cps: f64,
    /// Gaussian timing jitter (ns).
    #[arg(long, default_value_t = 0.0)]
    jitter_ns: f64,
    /// Detector dead time (ns).
    #[arg(long, default_value_t = 0.0)]
    dead_time_ns: f64,
    /// Output files are `<prefix>_ch1.csv` and `<prefix>_ch2.csv`.
    #[arg(long, default_value = "stream")]
    prefix: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Exponential,
    Rectangular,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    StartStop,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Two single-channel stream CSVs, or one CSV holding two channels.
    #[arg(required = true, num_args = 1..=2)]
    inputs: Vec<PathBuf>,
    /// Half-range of delays (ns).
    #[arg(long, default_value_t = DEFAULT_CW_WINDOW)]
    window: f64,
    /// Bin width (ns).
    #[arg(long = "bin", default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// Independent chunks of stream 1 processed in parallel.
    #[arg(long, default_value_t = 1)]
    chunks: usize,
    /// Acquisition time (ns); read from the stream sidecars when omitted.
    #[arg(long)]
    duration: Option<f64>,
    /// Leave the g2 columns empty.
    #[arg(long)]
    no_normalize: bool,
    /// Report the zero-delay peak area over the mean side-peak area.
    #[arg(long)]
    integrate_peaks: bool,
    /// Half-width of each peak integration window (ns).
    #[arg(long = "peak-halfwidth", default_value_t = DEFAULT_PEAK_HALF_WIDTH)]
    peak_half_width: f64,
    /// Pulse period for peak integration (ns).
    #[arg(long, default_value_t = 100.0)]
    period: f64,
    /// Bins at least this far from every peak estimate the flat background (ns).
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_GUARD)]
    background_guard: f64,
    /// Integrate peaks without subtracting any background.
    #[arg(long)]
    no_background: bool,
    #[arg(long, default_value = "histogram.csv")]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Cw,
    Pulsed,
    Saturation,
}

#[derive(Args)]
struct FitArgs {
    /// Histogram CSV (cw, pulsed) or saturation CSV.
    input: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Pulse width for the pulsed model (ns).
    #[arg(long, default_value_t = 6.0)]
    tau_o: f64,
    /// Fit only bins with |tau| up to this delay (ns).
    #[arg(long)]
    fit_window: Option<f64>,
    /// Hold rho at this value (pulsed model).
    #[arg(long)]
    rho_fixed: Option<f64>,
    /// Ignore the per-bin errors.
    #[arg(long)]
    unweighted: bool,
    /// Relative noise of saturation intensities, used as fit weights.
    #[arg(long)]
    relative_noise: Option<f64>,
    /// Iteration cap of the least-squares solver.
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value = "fit.json")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum GeometryCommand {
    /// Share of emission guided by total internal reflection, 1 - 1/n.
    Channeling {
        #[arg(long)]
        n: f64,
    },
    /// Trapped share of emission from an off-axis point.
    Confinement {
        #[arg(long)]
        n: f64,
        /// Offset over core radius.
        #[arg(long, required_unless_present = "sweep")]
        r_over_a: Option<f64>,
        /// Print a CSV of eta against r/a from 0 to 1 instead.
        #[arg(long)]
        sweep: bool,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Critical offset and the core area beyond it.
    Tir {
        #[arg(long)]
        n: f64,
    },
    /// Whispering-gallery mode numbers.
    Modes {
        /// Core radius (um).
        #[arg(long)]
        a: f64,
        /// Wavelength (um).
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        n: f64,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON pipeline config.
    config: PathBuf,
    /// Worker threads (all cores by default). Outputs do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct StreamSidecar {
    command: String,
    channel: u8,
    events: usize,
    duration_ns: f64,
    config: SimConfig,
}

fn cmd_simulate(a: &SimulateArgs, dir: &Path) -> Result<(), CliError> {
    let emitter = EmitterParams::new(a.wp, a.gamma, 0.0)?;
    let mut cfg = if a.pulsed {
        SimConfig::pulsed(
            emitter,
            PulseParams::new(a.tau_o, a.period)?,
            a.duration,
            a.seed,
        )
    } else {
        SimConfig::cw(emitter, a.duration, a.seed)
    };
    cfg.pulse_shape = match a.pulse_shape {
        ShapeArg::Exponential => PulseShape::Exponential,
        ShapeArg::Rectangular => PulseShape::Rectangular,
    };
    cfg.detection_efficiency = a.efficiency;
    cfg.dark_rate_per_channel = a.dark_cps * 1e-9;
    cfg.background_rate = a.background_cps * 1e-9;
    cfg.jitter_sigma = a.jitter_ns;
    cfg.dead_time = a.dead_time_ns;
    cfg.validate()?;
    let (s1, s2) = simulate(&cfg)?;
    ensure_dir(dir)?;
    for s in [&s1, &s2] {
        let path = dir.join(format!("{}_ch{}.csv", a.prefix, s.channel));
        let sidecar = StreamSidecar {
            command: "simulate".into(),
            channel: s.channel,
            events: s.len(),
            duration_ns: s.duration,
            config: cfg.clone(),
        };
        write_csv(&path, &stream_csv(s.channel, &s.times), &sidecar)?;
        println!(
            "{} events={} rate_cps={}",
            path.display(),
            s.len(),
            rounded(s.rate() * 1e9, 3)
        );
    }
    Ok(())
}

/// Duration of a stream file from its sidecar, if there is one.
fn sidecar_duration(path: &Path) -> Result<Option<f64>, CliError> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let s: StreamSidecar = antibunch::io::read_json(&side)?;
    Ok(Some(s.duration_ns))
}

fn load_streams(a: &CorrelateArgs) -> Result<(TimestampStream, TimestampStream), CliError> {
    let mut chans: Vec<(u8, Vec<f64>, Option<f64>)> = Vec::new();
    for path in &a.inputs {
        let map: BTreeMap<u8, Vec<f64>> = read_stream_csv(path)?;
        let dur = sidecar_duration(path)?;
        if a.inputs.len() == 2 && map.len() > 1 {
            return Err(CliError::invalid(format!(
                "{}: expected one channel, found {}",
                path.display(),
                map.len()
            )));
        }
        if map.is_empty() {
            // An empty file still stands for one (silent) channel.
            chans.push((0, Vec::new(), dur));
        }
        chans.extend(map.into_iter().map(|(c, t)| (c, t, dur)));
    }
    if chans.len() != 2 {
        return Err(CliError::invalid(format!(
            "need exactly two channels, found {}",
            chans.len()
        )));
    }
    let (c2, t2, d2) = chans.pop().expect("two channels");
    let (c1, t1, d1) = chans.pop().expect("two channels");
    let (d1, d2) = match (a.duration, d1, d2) {
        (Some(d), _, _) => (d, d),
        (None, Some(x), Some(y)) => (x, y),
        _ => {
            return Err(CliError::invalid(
                "stream duration unknown: pass --duration or keep the .json sidecars",
            ))
        }
    };
    let mk = |c: u8, t: Vec<f64>, d: f64| TimestampStream::new(c, t, d).map_err(CliError::from);
    Ok((mk(c1, t1, d1)?, mk(c2, t2, d2)?))
}

#[derive(Serialize)]
struct CorrelateSidecar<'a> {
    command: &'static str,
    inputs: Vec<String>,
    config: CorrelatorConfig,
    duration_ns: f64,
    channel_counts: [usize; 2],
    normalized: bool,
    peaks: Option<&'a antibunch::correlator::PeakIntegration>,
}

fn cmd_correlate(a: &CorrelateArgs, dir: &Path) -> Result<(), CliError> {
    let (s1, s2) = load_streams(a)?;
    let mut cfg = CorrelatorConfig::new(a.window, a.bin_width);
    cfg.mode = match a.mode {
        ModeArg::Full => CorrelationMode::Full,
        ModeArg::StartStop => CorrelationMode::StartStop,
    };
    cfg.chunks = a.chunks;
    let raw = cross_correlate_with(&s1, &s2, &cfg)?;
    if raw.flags.empty_input {
        eprintln!("warning: empty input stream; histogram is all zero");
    }
    let can_normalize = !a.no_normalize && !s1.is_empty() && !s2.is_empty();
    let h = if can_normalize {
        normalize_cw(&raw, s1.rate(), s2.rate(), s1.duration)?
    } else {
        raw.clone()
    };
    let peaks = if a.integrate_peaks {
        let bg = if a.no_background {
            0.0
        } else {
            estimate_flat_background(&raw, a.period, a.background_guard)?
        };
        Some(integrate_peaks(&raw, a.peak_half_width, a.period, bg)?)
    } else {
        None
    };
    ensure_dir(dir)?;
    let out = dir.join(&a.output);
    let sidecar = CorrelateSidecar {
        command: "correlate",
        inputs: a.inputs.iter().map(|p| p.display().to_string()).collect(),
        config: cfg,
        duration_ns: s1.duration,
        channel_counts: [s1.len(), s2.len()],
        normalized: can_normalize,
        peaks: peaks.as_ref(),
    };
    write_csv(&out, &histogram_csv(&h), &sidecar)?;
    println!("{} pairs={}", out.display(), raw.total_pairs);
    if let Some(p) = &peaks {
        write_json(&out.with_extension("peaks.json"), p)?;
        println!(
            "g2_int={} sigma={}",
            rounded(p.g2_int, 4),
            rounded(p.sigma, 4)
        );
    }
    Ok(())
}

fn print_fit(f: &FitResult) {
    for e in f.params.iter().chain(&f.derived) {
        println!("{}={} sigma={}", e.name, e.value, e.sigma);
    }
    println!("converged={} iterations={}", f.converged, f.iterations);
}

fn cmd_fit(a: &FitArgs, dir: &Path) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let out = dir.join(&a.output);
    let lm = LmOptions {
        max_iterations: a.max_iterations,
        ..Default::default()
    };
    let fit = match a.model {
        ModelArg::Cw | ModelArg::Pulsed => {
            let h = read_histogram_csv(&a.input)?;
            if a.model == ModelArg::Cw {
                fit_g2_cw(
                    &h,
                    &CwFitOptions {
                        fit_window: a.fit_window,
                        unweighted: a.unweighted,
                        lm: Some(lm),
                    },
                )?
            } else {
                fit_g2_pulsed(
                    &h,
                    a.tau_o,
                    &PulsedFitOptions {
                        rho_fixed: a.rho_fixed,
                        fit_window: a.fit_window,
                        unweighted: a.unweighted,
                        lm: Some(lm),
                    },
                )?
            }
        }
        ModelArg::Saturation => {
            let data = read_saturation_csv(&a.input)?;
            let opts = SaturationFitOptions {
                relative_noise: a.relative_noise,
                lm,
            };
            let sat = fit_saturation_with(&data, &opts)?;
            #[derive(Serialize)]
            struct CurveSidecar<'a> {
                command: &'static str,
                input: String,
                params: &'a antibunch::SaturationParams,
            }
            let curve = out.with_file_name("emitter_curve.csv");
            let side = CurveSidecar {
                command: "fit",
                input: a.input.display().to_string(),
                params: &sat.params,
            };
            write_csv(&curve, &saturation_csv(&sat.emitter_curve), &side)?;
            sat.result
        }
    };
    write_json(&out, &fit)?;
    print_fit(&fit);
    if !fit.converged {
        return Err(CliError::new(
            ErrorKind::NoConvergence,
            format!(
                "fit did not converge after {} iterations; report written to {}",
                fit.iterations,
                out.display()
            ),
        ));
    }
    Ok(())
}

fn cmd_geometry(c: &GeometryCommand, dir: &Path) -> Result<(), CliError> {
    match *c {
        GeometryCommand::Channeling { n } => println!("{}", rounded(channeling_efficiency(n)?, 4)),
        GeometryCommand::Confinement {
            n,
            r_over_a,
            sweep,
            points,
        } => {
            if sweep {
                let pts = confinement_sweep(n, points, 1.0)?;
                let csv = sweep_csv(&pts);
                print!("{csv}");
                ensure_dir(dir)?;
                #[derive(Serialize)]
                struct SweepSidecar {
                    command: &'static str,
                    x: &'static str,
                    value: &'static str,
                    index: f64,
                    points: usize,
                }
                let side = SweepSidecar {
                    command: "geometry confinement --sweep",
                    x: "r_over_a",
                    value: "confinement_efficiency",
                    index: n,
                    points,
                };
                write_csv(&dir.join("confinement_sweep.csv"), &csv, &side)?;
            } else {
                let r = r_over_a.expect("clap requires r_over_a without --sweep");
                println!(
                    "{}",
                    rounded(
                        confinement_efficiency(&FiberGeometry::normalized(n, r)?)?,
                        4
                    )
                );
            }
        }
        GeometryCommand::Tir { n } => {
            let g = FiberGeometry::normalized(n, 0.0)?;
            println!(
                "r_c/a={} area_fraction={}",
                rounded(critical_offset(&g)?, 4),
                rounded(tir_area_fraction(&g)?, 4)
            );
        }
        GeometryCommand::Modes { a, lambda, n } => {
            println!(
                "{}",
                wgm_mode_numbers(&FiberGeometry::new(a, n, 0.0, lambda)?)?.summary()
            );
        }
    }
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs, dir: &Path) -> Result<(), CliError> {
    let cfg: PipelineConfig = antibunch::io::read_json(&a.config)?;
    let report = pipeline::run(&cfg, a.workers)?;
    pipeline::write_report(&report, dir)?;
    for r in &report.runs {
        let mut line = format!("run={} seed={} pairs={}", r.index, r.seed, r.total_pairs);
        if let Some(p) = &r.peaks {
            line += &format!(
                " g2_int={} sigma={}",
                rounded(p.g2_int, 4),
                rounded(p.sigma, 4)
            );
        }
        if let Some(f) = &r.fit {
            for e in &f.params {
                line += &format!(" {}={}", e.name, rounded(e.value, 4));
            }
        }
        println!("{line}");
        for w in &r.warnings {
            eprintln!("warning: run {}: {w}", r.index);
        }
    }
    if let Some(s) = &report.saturation {
        let p = &s.fit.params;
        println!(
            "saturation_power_uW={} amplitude_cps={} background_slope={}",
            rounded(p.saturation_power, 4),
            rounded(p.amplitude, 2),
            rounded(p.background_slope, 2)
        );
    }
    if !report.converged() {
        return Err(CliError::new(
            ErrorKind::NoConvergence,
            "at least one fit did not converge; reports written",
        ));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let dir = &cli.out_dir;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, dir),
        Command::Correlate(a) => cmd_correlate(a, dir),
        Command::Fit(a) => cmd_fit(a, dir),
        Command::Geometry { command } => cmd_geometry(command, dir),
        Command::Pipeline(a) => cmd_pipeline(a, dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            // The reason is the first paragraph of clap's message.
            let text = e.to_string();
            let reason: Vec<&str> = text
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(|l| l.trim().trim_start_matches("error: "))
                .collect();
            eprintln!(
                "{}",
                CliError::new(ErrorKind::Usage, reason.join(" ")).line()
            );
            eprint!("{}", e.render());
            return ExitCode::from(ErrorKind::Usage.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
