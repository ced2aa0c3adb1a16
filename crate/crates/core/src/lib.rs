//! Absolute efficiency calibration of photon-number-resolving detectors with
//! a pulsed heralded single-photon source.
//!
//! The pipeline runs amplitude histograms through a Gaussian-mixture fit to
//! per-photon-number counts, turns heralded and background counts into one
//! efficiency estimate per photon number plus a click/no-click cross-check,
//! and propagates input uncertainties into contribution budgets. A Monte Carlo
//! model of the experiment closes the loop.

pub mod calibration;
pub mod error;
pub mod histogram;
pub mod io;
mod lm;
pub mod model;
pub mod report;
pub mod simulator;
pub mod uncertainty;

pub use error::{CalibError, Result};
