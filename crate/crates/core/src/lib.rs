//! Photocount statistics of two photon-number-resolving multi-pixel
//! detectors with loss, optical crosstalk and readout saturation, and the
//! noise reduction factor of coherent and two-mode squeezed light.
//!
//! * [`fock`] builds truncated photon-number statistics of the input states.
//! * [`detector`] builds the per-detector photocount response.
//! * [`metrics`] combines the two into photocount moments and the NRF.
//! * [`mc`] is an independent per-pulse Monte Carlo simulator.
//! * [`fit`] recovers detector parameters from measured NRF curves.
//! * [`io`] handles CSV/JSON files and data-side corrections.

pub mod detector;
pub mod error;
pub mod fit;
pub mod fock;
pub mod io;
pub mod mc;
pub mod metrics;
mod pmf;

pub use detector::{DetectorParams, ResponseMatrix};
pub use error::{Error, Result};
pub use fock::{PhotonStatistics, StateKind, DEFAULT_TAIL_TOL};
pub use metrics::{Moments, PhotocountJoint};

/// Version string recorded in emitted summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
