//! Exact non-Markovian dynamics of a driven bosonic cavity coupled to a
//! structured environment (an inhomogeneously broadened spin ensemble plus a
//! flat leakage channel), and the transient thermodynamic observables built
//! on top of it: renormalized master-equation coefficients, internal energy,
//! work power and the dissipation/fluctuation heat currents.
//!
//! Internal units: time in ns, frequencies in rad/ns, `hbar = k_B = 1`.
//! Energies are therefore in `hbar * rad/ns` and powers in `hbar * rad/ns^2`.
//!
//! The pipeline is
//! [`spectral`] → [`greens`] → [`coefficients`] → [`thermo`],
//! orchestrated by [`scenario`]. [`oracle`] is an independent brute-force
//! check of the Green functions on a discretized bath.

pub mod coefficients;
pub mod diff;
pub mod error;
pub mod greens;
pub mod oracle;
pub mod output;
pub mod quadrature;
pub mod scenario;
pub mod spectral;
pub mod thermo;
pub mod toeplitz;
pub mod units;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
