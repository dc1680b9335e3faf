//! Quasiparticle bursts in superconducting qubits: the relaxation model, a
//! cycle-level readout simulation, waveform processing, Bayesian fits of
//! single and averaged pulses, and vertex and energy reconstruction across
//! qubits.
//!
//! The guide in `book/` walks through each module with runnable examples.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod physics;
pub mod readout;
pub mod recon;
pub mod waveform;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/pulse-model.md")]
    mod pulse_model {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
}
