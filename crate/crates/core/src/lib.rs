//! Heralded single-phonon generation and Hanbury Brown-Twiss analysis for a
//! pulsed optomechanical cavity.
//!
//! The crate is organised bottom-up:
//!
//! - [`hilbert`]: truncated Fock-space states, ladder operators, Gaussian
//!   channels and moment evaluation for one bosonic mode.
//! - [`dynamics`]: device constants, pulse schedules, the phenomenological
//!   heating model, Lindblad generators for the reduced (mechanics only) and
//!   full (cavity + mechanics) models, and an adaptive propagator.
//! - [`counting`]: heralded conditional states and intensity correlations
//!   from the photon-counting expansion of the master equation.
//! - [`trajectories`]: seeded Monte Carlo generation of detector click records.
//! - [`inference`]: g2 estimation, likelihood intervals and p-values.
//! - [`calibration`]: inversion of count rates into device parameters.
//! - [`gaussianbound`]: the displaced-squeezed thermal state exclusion bound.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod counting;
pub mod dynamics;
pub mod gaussianbound;
pub mod hilbert;
pub mod inference;
pub mod ode;
pub mod trajectories;

mod error;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Time window `[start, end]` in seconds, measured from the start of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}
