//! Physical constants and unit conversions.
//!
//! Frequencies quoted in the literature as "X MHz" for angular quantities
//! (e.g. a coupling of 17.2π MHz) mean X·10⁶ rad/s, i.e. X·10⁻³ rad/ns.

/// Boltzmann constant, J/K (exact, SI 2019).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant, J·s (exact, SI 2019).
pub const HBAR: f64 = 1.054_571_817e-34;

/// k_B/ħ in rad·ns⁻¹·K⁻¹ (≈ 130.92).
pub const KB_OVER_HBAR: f64 = BOLTZMANN / HBAR * 1e-9;

/// Thermal frequency k_B·T/ħ in rad/ns.
pub fn thermal_scale(temperature_k: f64) -> f64 {
    KB_OVER_HBAR * temperature_k
}

/// Angular frequency given in rad/μs ("MHz") to rad/ns.
pub fn mhz(x: f64) -> f64 {
    x * 1e-3
}
