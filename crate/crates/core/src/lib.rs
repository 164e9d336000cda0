//! Single-photon emitter statistics: closed-form antibunching models, an
//! event-driven photon simulator with an HBT detection chain, coincidence
//! correlation, least-squares fitting and ray-optics fiber calculators.
//!
//! Times are in ns and rates in 1/ns throughout, except where a name says
//! otherwise (`_cps`, `_uW`, micrometres for fiber geometry).

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquire;
pub mod correlator;
pub mod emitter;
pub mod error;
pub mod fiber;
pub mod fit;
pub mod io;
pub mod sim;

pub use acquire::{acquire, Acquisition};
pub use correlator::{
    background_coincidence_rate, cross_correlate, cross_correlate_with, estimate_flat_background,
    integrate_peaks, intensity_ratio, normalize_by, normalize_cw, CoincidenceHistogram,
    CorrelationMode, CorrelatorConfig, PeakIntegration,
};
pub use emitter::{BackgroundMix, EmitterParams, PulseParams};
pub use error::{
    AcquisitionError, CorrelatorError, FitError, FormatError, GeometryError, ModelError, SimError,
};
pub use fiber::FiberGeometry;
pub use fit::{FitResult, SaturationParams};
pub use sim::{SimConfig, TimestampStream};
