//! Spin physics of acceptor-bound holes in strained GaAs.

pub mod error;
pub mod fitting;
pub mod hamiltonian;
pub mod hyperfine;
pub mod lambda;
pub mod ode;
pub mod optics;
pub mod params;
pub mod phonon;
pub mod quadrature;
pub mod series;

pub use error::{Error, Result};
