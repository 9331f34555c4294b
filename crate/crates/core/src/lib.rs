//! Simulation and analysis toolkit for ensemble-based quantum repeaters
//! built from collective atomic excitations and linear optics.

pub mod applications;
pub mod ensemble;
pub mod error;
pub mod fock;
pub mod montecarlo;
pub mod ode;
pub mod repeater;
pub mod scaling;

pub use error::{Error, Result};
