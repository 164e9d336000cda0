//! Long acquisitions simulated as consecutive independent blocks.
//!
//! A block of length `T / segments` is simulated and correlated on its own
//! with a seed derived from the run seed and the block index, and the
//! integer histograms are summed in block order. Pairs straddling a block
//! boundary are lost, a fraction of about `window / block` of the total.
//! The result depends only on the configuration, never on how many
//! threads process the blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::{cross_correlate_with, CoincidenceHistogram, CorrelatorConfig};
use crate::error::{AcquisitionError, SimError};
use crate::sim::{simulate, split_seed, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    /// Raw (unnormalised) coincidence histogram.
    pub histogram: CoincidenceHistogram,
    pub channel_counts: [u64; 2],
    pub duration: f64,
}

impl Acquisition {
    /// Mean detection rates of both channels (1/ns).
    pub fn rates(&self) -> (f64, f64) {
        (
            self.channel_counts[0] as f64 / self.duration,
            self.channel_counts[1] as f64 / self.duration,
        )
    }
}

pub fn acquire(
    sim: &SimConfig,
    corr: &CorrelatorConfig,
    segments: usize,
) -> Result<Acquisition, AcquisitionError> {
    sim.validate()?;
    if segments == 0 {
        return Err(SimError::InvalidConfig("segments must be >= 1".into()).into());
    }
    let block = sim.duration / segments as f64;
    if block <= corr.window {
        return Err(SimError::InvalidConfig(format!(
            "block length {block} ns must exceed the correlation window {}",
            corr.window
        ))
        .into());
    }
    let parts = (0..segments)
        .into_par_iter()
        .map(|i| {
            let mut cfg = sim.clone();
            cfg.duration = block;
            if segments > 1 {
                cfg.seed = split_seed(sim.seed, i as u64);
            }
            let (a, b) = simulate(&cfg)?;
            let h = cross_correlate_with(&a, &b, corr)?;
            Ok((h, [a.len() as u64, b.len() as u64]))
        })
        .collect::<Result<Vec<_>, AcquisitionError>>()?;

    let mut iter = parts.into_iter();
    let (mut histogram, mut channel_counts) = iter.next().expect("at least one block");
    for (h, c) in iter {
        histogram
            .counts
            .iter_mut()
            .zip(&h.counts)
            .for_each(|(x, y)| *x += y);
        histogram.total_pairs += h.total_pairs;
        histogram.flags.empty_input &= h.flags.empty_input;
        channel_counts[0] += c[0];
        channel_counts[1] += c[1];
    }
    histogram.flags.low_statistics = histogram.total_pairs == 0;
    Ok(Acquisition {
        histogram,
        channel_counts,
        duration: block * segments as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::EmitterParams;

    #[test]
    fn single_block_matches_direct_run() {
        let cfg = SimConfig::cw(EmitterParams::new(0.05, 0.05, 0.0).unwrap(), 1e6, 4);
        let corr = CorrelatorConfig::new(50.0, 1.0);
        let acq = acquire(&cfg, &corr, 1).unwrap();
        let (a, b) = simulate(&cfg).unwrap();
        assert_eq!(acq.histogram, cross_correlate_with(&a, &b, &corr).unwrap());
        assert_eq!(acq.channel_counts, [a.len() as u64, b.len() as u64]);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cfg = SimConfig::cw(EmitterParams::new(0.05, 0.05, 0.0).unwrap(), 4e6, 9);
        let corr = CorrelatorConfig::new(50.0, 1.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| acquire(&cfg, &corr, 6).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert!(one.histogram.total_pairs > 0);
    }

    #[test]
    fn rejects_short_blocks() {
        let cfg = SimConfig::cw(EmitterParams::new(0.05, 0.05, 0.0).unwrap(), 100.0, 9);
        assert!(acquire(&cfg, &CorrelatorConfig::new(50.0, 1.0), 4).is_err());
        assert!(acquire(&cfg, &CorrelatorConfig::new(50.0, 1.0), 0).is_err());
    }
}
