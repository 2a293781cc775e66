//! Open-system quantum annealing simulation.
//!
//! Engines: the adiabatic master equation ([`ame`]), its unravelling into
//! quantum trajectories ([`trajectories`]), an ensemble of classical 1/f
//! telegraph fluctuators ([`fluctuators`]) and spin-vector Monte Carlo
//! ([`svmc`]). Models and schedules live in [`model`]; eigenframes, baths and
//! Lindblad operators in [`spectral`].

pub mod ame;
pub mod cli;
pub mod error;
pub mod fluctuators;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod spectral;
pub mod stats;
pub mod svmc;
pub mod trajectories;

pub use error::{Error, Result};
