//! Coincidence histograms from two timestamp streams.
//!
//! Bins are aligned to zero delay: bin `K + m` holds delays in
//! `[m w, (m + 1) w)` and its mirror `K - m - 1` holds `(-(m + 1) w, -m w]`,
//! with `K = window / w`. Swapping the streams therefore mirrors the
//! histogram exactly (an exact zero delay lands in `[0, w)`), and doubling
//! the bin width sums neighbouring bins exactly. Delays of exactly
//! `+-window` fall into the outermost bins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::BackgroundMix;
use crate::error::{CorrelatorError, ModelError};
use crate::sim::TimestampStream;

pub const DEFAULT_CW_WINDOW: f64 = 100.0;
pub const DEFAULT_PULSED_WINDOW: f64 = 1000.0;
pub const DEFAULT_BIN_WIDTH: f64 = 1.0;
pub const DEFAULT_PEAK_HALF_WIDTH: f64 = 17.5;

/// Upper 1-sigma Poisson limit for zero observed counts.
const ZERO_COUNT_UPPER: f64 = 1.841;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    /// Every pair within the window.
    #[default]
    Full,
    /// Only the first stop after `start - window` for each start.
    StartStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorConfig {
    pub window: f64,
    pub bin_width: f64,
    #[serde(default)]
    pub mode: CorrelationMode,
    /// Stream 1 is split into this many contiguous chunks that are
    /// histogrammed independently and summed. The result does not depend
    /// on it.
    #[serde(default = "default_chunks")]
    pub chunks: usize,
}

fn default_chunks() -> usize {
    1
}

impl CorrelatorConfig {
    pub fn new(window: f64, bin_width: f64) -> Self {
        Self {
            window,
            bin_width,
            mode: CorrelationMode::Full,
            chunks: 1,
        }
    }

    /// Number of bins on each side of zero delay.
    fn half_bins(&self) -> Result<usize, CorrelatorError> {
        let (w, b) = (self.window, self.bin_width);
        if !(w.is_finite() && w > 0.0 && b.is_finite() && b > 0.0) {
            return Err(CorrelatorError::InvalidBinning(format!(
                "window {w} and bin width {b} must be positive"
            )));
        }
        let k = (w / b).round();
        if k < 1.0 || (k * b - w).abs() > 1e-9 * w || k > 1e8 {
            return Err(CorrelatorError::InvalidBinning(format!(
                "window {w} is not a whole number of {b} ns bins"
            )));
        }
        if self.chunks == 0 {
            return Err(CorrelatorError::InvalidBinning(
                "chunks must be >= 1".into(),
            ));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramFlags {
    /// At least one input stream had no events.
    pub empty_input: bool,
    /// Too few counts for per-bin Gaussian errors.
    pub low_statistics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Bins with zero counts: `errors` holds the one-sided upper limit.
    pub upper_limit: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width: f64,
    pub window: f64,
    pub counts: Vec<u64>,
    pub total_pairs: u64,
    pub norm: Option<Normalization>,
    pub flags: HistogramFlags,
}

impl CoincidenceHistogram {
    pub fn empty(window: f64, bin_width: f64) -> Result<Self, CorrelatorError> {
        let k = CorrelatorConfig::new(window, bin_width).half_bins()?;
        Ok(Self {
            bin_width,
            window,
            counts: vec![0; 2 * k],
            total_pairs: 0,
            norm: None,
            flags: HistogramFlags::default(),
        })
    }

    /// Rebuilds a histogram from bin centres as written by the CSV exporter.
    pub fn from_centers(
        centers: &[f64],
        counts: Vec<u64>,
        norm: Option<Normalization>,
    ) -> Result<Self, CorrelatorError> {
        if centers.len() < 2 || centers.len() != counts.len() || !centers.len().is_multiple_of(2) {
            return Err(CorrelatorError::InvalidBinning(
                "need an even number (>= 2) of bin centres matching the counts".into(),
            ));
        }
        let bw = (centers[centers.len() - 1] - centers[0]) / (centers.len() - 1) as f64;
        let window = 0.5 * centers.len() as f64 * bw;
        let mut h = Self::empty(window, bw)?;
        for (i, (&c, &e)) in centers.iter().zip(h.centers().iter()).enumerate() {
            if (c - e).abs() > 1e-6 * bw {
                return Err(CorrelatorError::InvalidBinning(format!(
                    "bin {i} centre {c} is not on a uniform grid symmetric about zero"
                )));
            }
        }
        if let Some(n) = &norm {
            if n.values.len() != counts.len()
                || n.errors.len() != counts.len()
                || n.upper_limit.len() != counts.len()
            {
                return Err(CorrelatorError::InvalidBinning(
                    "normalisation length mismatch".into(),
                ));
            }
        }
        h.total_pairs = counts.iter().sum();
        h.counts = counts;
        h.norm = norm;
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn half_bins(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn edges(&self) -> Vec<f64> {
        let k = self.half_bins() as f64;
        (0..=self.counts.len())
            .map(|i| (i as f64 - k) * self.bin_width)
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let k = self.half_bins() as f64;
        (0..self.counts.len())
            .map(|i| (i as f64 - k + 0.5) * self.bin_width)
            .collect()
    }

    /// Bin index holding `delay`, if it is inside the window.
    pub fn bin_of(&self, delay: f64) -> Option<usize> {
        bin_index(delay, self.bin_width, self.window, self.half_bins())
    }
}

/// See the module docs for the bin convention.
fn bin_index(delay: f64, bw: f64, window: f64, k: usize) -> Option<usize> {
    let e = delay.abs();
    if !(e <= window) {
        return None;
    }
    let mut m = (e / bw).floor() as usize;
    while m > 0 && m as f64 * bw > e {
        m -= 1;
    }
    while (m + 1) as f64 * bw <= e {
        m += 1;
    }
    let m = m.min(k - 1);
    Some(if delay >= 0.0 { k + m } else { k - m - 1 })
}

fn check_sorted(s: &TimestampStream) -> Result<(), CorrelatorError> {
    match s.times.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(CorrelatorError::Unsorted {
            channel: s.channel,
            index: i + 1,
        }),
        None => Ok(()),
    }
}

fn sweep_full(starts: &[f64], stops: &[f64], bw: f64, window: f64, k: usize, counts: &mut [u64]) {
    let Some(&first) = starts.first() else {
        return;
    };
    let mut lo = stops.partition_point(|&t| t - first < -window);
    for &t1 in starts {
        while lo < stops.len() && stops[lo] - t1 < -window {
            lo += 1;
        }
        for &t2 in &stops[lo..] {
            let d = t2 - t1;
            if d > window {
                break;
            }
            if let Some(i) = bin_index(d, bw, window, k) {
                counts[i] += 1;
            }
        }
    }
}

fn sweep_start_stop(
    starts: &[f64],
    stops: &[f64],
    bw: f64,
    window: f64,
    k: usize,
    counts: &mut [u64],
) {
    let Some(&first) = starts.first() else {
        return;
    };
    let mut lo = stops.partition_point(|&t| t - first < -window);
    for &t1 in starts {
        while lo < stops.len() && stops[lo] - t1 < -window {
            lo += 1;
        }
        if let Some(&t2) = stops.get(lo) {
            if let Some(i) = bin_index(t2 - t1, bw, window, k) {
                counts[i] += 1;
            }
        }
    }
}

/// Histogram of `t2 - t1` over all pairs with `|t2 - t1| <= window`.
pub fn cross_correlate(
    s1: &TimestampStream,
    s2: &TimestampStream,
    window: f64,
    bin_width: f64,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    cross_correlate_with(s1, s2, &CorrelatorConfig::new(window, bin_width))
}

pub fn cross_correlate_with(
    s1: &TimestampStream,
    s2: &TimestampStream,
    cfg: &CorrelatorConfig,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    let k = cfg.half_bins()?;
    check_sorted(s1)?;
    check_sorted(s2)?;
    if (s1.duration - s2.duration).abs() > 1e-9 * s1.duration.max(s2.duration) {
        return Err(CorrelatorError::MismatchedDuration(
            s1.duration,
            s2.duration,
        ));
    }
    let mut h = CoincidenceHistogram::empty(cfg.window, cfg.bin_width)?;
    h.flags.empty_input = s1.is_empty() || s2.is_empty();
    let sweep = match cfg.mode {
        CorrelationMode::Full => sweep_full,
        CorrelationMode::StartStop => sweep_start_stop,
    };
    let (bw, window) = (cfg.bin_width, cfg.window);
    if cfg.chunks <= 1 || s1.len() < 2 * cfg.chunks {
        sweep(&s1.times, &s2.times, bw, window, k, &mut h.counts);
    } else {
        let chunk = s1.len().div_ceil(cfg.chunks);
        h.counts = s1
            .times
            .par_chunks(chunk)
            .map(|part| {
                let mut local = vec![0u64; 2 * k];
                sweep(part, &s2.times, bw, window, k, &mut local);
                local
            })
            .reduce(
                || vec![0u64; 2 * k],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
    }
    h.total_pairs = h.counts.iter().sum();
    h.flags.low_statistics = h.total_pairs == 0;
    Ok(h)
}

/// Divides by the uncorrelated expectation `r1 r2 w T` per bin.
pub fn normalize_cw(
    h: &CoincidenceHistogram,
    rate1: f64,
    rate2: f64,
    duration: f64,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    let denom = rate1 * rate2 * h.bin_width * duration;
    if !(rate1 > 0.0 && rate2 > 0.0 && duration > 0.0 && denom.is_finite()) {
        return Err(CorrelatorError::ZeroRate);
    }
    Ok(normalize_by(h, denom))
}

/// Divides every bin by `expected` uncorrelated counts per bin.
pub fn normalize_by(h: &CoincidenceHistogram, expected: f64) -> CoincidenceHistogram {
    let mut out = h.clone();
    let values = h.counts.iter().map(|&c| c as f64 / expected).collect();
    let errors = h
        .counts
        .iter()
        .map(|&c| {
            if c == 0 {
                ZERO_COUNT_UPPER / expected
            } else {
                (c as f64).sqrt() / expected
            }
        })
        .collect();
    let upper_limit = h.counts.iter().map(|&c| c == 0).collect();
    out.norm = Some(Normalization {
        values,
        errors,
        upper_limit,
    });
    out.flags.low_statistics = h.total_pairs == 0 || (h.total_pairs as f64) < h.counts.len() as f64;
    out
}

/// Peak-area analysis of a pulsed coincidence histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakIntegration {
    /// Half-width of each integration window (ns).
    pub peak_window: f64,
    pub period: f64,
    pub zero_peak_sum: u64,
    pub side_peak_sums: Vec<u64>,
    /// Expected uncorrelated coincidences per bin, removed from every peak.
    pub background_per_bin: f64,
    pub bins_per_peak: usize,
    pub g2_int: f64,
    pub sigma: f64,
}

/// Zero-delay peak area over the mean side-peak area, both after removing
/// `background_per_bin` from every bin. Only side peaks whose whole
/// integration window fits inside the histogram are used.
pub fn integrate_peaks(
    h: &CoincidenceHistogram,
    half_width: f64,
    period: f64,
    background_per_bin: f64,
) -> Result<PeakIntegration, CorrelatorError> {
    if !(period > 0.0 && half_width > 0.0 && half_width <= 0.5 * period) {
        return Err(CorrelatorError::InvalidBinning(format!(
            "peak half-width {half_width} must lie in (0, period/2] for period {period}"
        )));
    }
    if !(background_per_bin >= 0.0 && background_per_bin.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "background_per_bin",
            value: background_per_bin,
            reason: "must be >= 0",
        }
        .into());
    }
    let centers = h.centers();
    let sum_peak = |center: f64| -> (u64, usize) {
        centers
            .iter()
            .zip(&h.counts)
            .filter(|(c, _)| (**c - center).abs() <= half_width)
            .fold((0, 0), |(s, n), (_, &v)| (s + v, n + 1))
    };
    let (zero, bins) = sum_peak(0.0);
    let reach = ((h.window - half_width) / period + 1e-9).floor() as i64;
    let side: Vec<u64> = (-reach..=reach)
        .filter(|&j| j != 0)
        .map(|j| sum_peak(j as f64 * period).0)
        .collect();
    if side.len() < 2 {
        return Err(CorrelatorError::InsufficientPeaks { found: side.len() });
    }
    let bg = background_per_bin * bins as f64;
    let z = zero as f64 - bg;
    let n = side.len() as f64;
    let side_total: u64 = side.iter().sum();
    let s = side_total as f64 / n - bg;
    if s <= 0.0 {
        return Err(ModelError::DegenerateInput {
            reason: "side peaks vanish after background removal",
        }
        .into());
    }
    let var_z = zero as f64;
    let var_s = side_total as f64 / (n * n);
    let g2_int = z / s;
    let sigma = (var_z / (s * s) + z * z * var_s / s.powi(4)).sqrt();
    Ok(PeakIntegration {
        peak_window: half_width,
        period,
        zero_peak_sum: zero,
        side_peak_sums: side,
        background_per_bin,
        bins_per_peak: bins,
        g2_int,
        sigma,
    })
}

/// Mean counts per bin in the flat stretches between pulse peaks, i.e. in
/// bins whose centre is at least `guard` ns from every multiple of `period`.
pub fn estimate_flat_background(
    h: &CoincidenceHistogram,
    period: f64,
    guard: f64,
) -> Result<f64, CorrelatorError> {
    if !(period > 0.0 && guard >= 0.0 && guard < 0.5 * period) {
        return Err(CorrelatorError::InvalidBinning(format!(
            "guard {guard} must lie in [0, period/2) for period {period}"
        )));
    }
    let (sum, n) = h
        .centers()
        .iter()
        .zip(&h.counts)
        .filter(|(c, _)| {
            let off = c.rem_euclid(period);
            off.min(period - off) >= guard
        })
        .fold((0u64, 0usize), |(s, n), (_, &v)| (s + v, n + 1));
    if n == 0 {
        return Err(CorrelatorError::InvalidBinning(
            "no bins between the peaks".into(),
        ));
    }
    Ok(sum as f64 / n as f64)
}

/// Expected coincidences per bin that involve at least one background
/// event: `((r_em + r_bg)^2 - r_em^2) w T`.
pub fn background_coincidence_rate(
    rate_em: f64,
    rate_bg: f64,
    bin_width: f64,
    duration: f64,
) -> f64 {
    let total = rate_em + rate_bg;
    (total * total - rate_em * rate_em) * bin_width * duration
}

/// Emitter share of the total intensity.
pub fn intensity_ratio(rate_em: f64, rate_bg: f64) -> Result<BackgroundMix, ModelError> {
    BackgroundMix::from_intensities(rate_em, rate_bg)
}
