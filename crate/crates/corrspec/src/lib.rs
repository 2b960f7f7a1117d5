//! Simulation and estimation toolkit for correlation spectroscopy of optical
//! clocks.
//!
//! Two clocks interrogated by a common local oscillator acquire the same
//! (unknown, here deliberately randomized) laser phase during a Ramsey dark
//! time. Individually, each clock's excitation fraction carries no usable
//! fringe; the *parity of the pair* does: the probability that both clocks
//! give the same answer traces a fringe in the differential phase whose
//! contrast is set by the clocks' mutual coherence, not by the laser.
//!
//! The crate simulates that protocol end to end and estimates the quantities
//! a frequency-comparison experiment cares about:
//!
//! * [`physics`] — closed-form transition, correlation, contrast, instability
//!   and quality-factor expressions.
//! * [`protocol`] — per-probe simulation of a co-trapped ion pair, fringe
//!   scans over an applied differential phase, and dark-time scans.
//! * [`estimation`] — maximum-likelihood fringe fitting with profile-likelihood
//!   intervals, Bayesian coherence-time extraction, phase-drift regression and
//!   Allan statistics.
//! * [`detection`] — adaptive Bayesian state discrimination of the pair from
//!   photon-count cycles.
//! * [`remote`] — synchronized comparison of two remote atomic ensembles
//!   sharing a noisy oscillator, including fringe-branch disambiguation.
//! * [`scenario`] — on-disk run configuration and reproducibility manifests.
//! * [`cli`] — the `corrspec` command-line front end.
//!
//! All randomness flows from a single `u64` seed through counter-derived
//! substreams ([`rng`]), so every artifact the tool writes is reproducible
//! byte for byte regardless of thread count.

pub mod cli;
pub mod detection;
pub mod estimation;
pub mod physics;
pub mod protocol;
pub mod remote;
pub mod rng;
pub mod scenario;

use std::io;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (non-finite input,
    /// out-of-range parameter, malformed dataset).
    #[error("domain error: {0}")]
    Domain(String),
    /// Configuration file or flag rejected; the message names the offending
    /// key.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data cannot statistically constrain the requested quantity.
    #[error("non-identifiable: {0}")]
    NonIdentifiable(String),
    /// Filesystem or serialization failure.
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the CLI: configuration errors exit 2,
    /// statistical failures 3, I/O failures 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) => 2,
            Error::NonIdentifiable(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {value}")))
    }
}

/// Every code block in the guide (`book/`) and the README compiles and runs
/// as a doctest, so the prose can never drift from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(readme, "../../../README.md");
    chapter!(overview, "../../../book/src/overview.md");
    chapter!(fringes, "../../../book/src/fringes.md");
    chapter!(fitting, "../../../book/src/fitting.md");
    chapter!(coherence, "../../../book/src/coherence.md");
    chapter!(instability, "../../../book/src/instability.md");
    chapter!(detection, "../../../book/src/detection.md");
    chapter!(remote, "../../../book/src/remote.md");
    chapter!(scenarios, "../../../book/src/scenarios.md");
}
