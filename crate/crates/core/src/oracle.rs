//! Brute-force reference: the environment as M discrete modes.
//!
//! The cavity plus M modes is a closed quadratic system, so its
//! single-particle propagator `U(t) = exp(−iHt)` is obtained exactly from one
//! symmetric eigendecomposition. In the frame rotating at ω_c,
//! `ū(t) = U₀₀(t)`, `v(t,t) = Σ_j n̄(ω_j)·|U₀ⱼ(t)|²`, and the driven mean
//! field follows from integrating the tone analytically in the eigenbasis.
//!
//! A finite comb revives at `t_rec = 2π/spacing`; comparisons with the
//! continuum solver are only meaningful for `t < t_rec/2`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::greens::{DriveProtocol, GreensSolution, TimeGrid};
use crate::quadrature::integrate_converged;
use crate::spectral::{bose_occupation, SpectralEnvironment};
use crate::{Error, Result, C64};

/// Fraction of the spin-spectrum weight the window must contain.
pub const MIN_COVERAGE: f64 = 0.999;
/// Default half-width of the discretization window, in FWHMs.
pub const DEFAULT_WINDOW_FWHMS: f64 = 10.0;
/// Comparisons stop at this fraction of the recurrence time.
pub const RECURRENCE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BathMode {
    /// ω_j (rad/ns).
    pub frequency: f64,
    /// g_j (rad/ns), real and ≥ 0.
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteBath {
    pub modes: Vec<BathMode>,
    pub temperature: f64,
    pub thermal_scale: f64,
    /// Uniform bin width (rad/ns).
    pub spacing: f64,
    /// Window weight over total spin weight.
    pub coverage: f64,
}

impl DiscreteBath {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Σ|g_j|² (rad²/ns²).
    pub fn total_strength(&self) -> f64 {
        self.modes.iter().map(|m| m.coupling * m.coupling).sum()
    }

    /// Revival time `2π/spacing` of the comb.
    pub fn recurrence_time(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.spacing
    }
}

/// ω_s ± 10·d, clipped at ω = 0.
pub fn default_window(env: &SpectralEnvironment) -> (f64, f64) {
    let half = DEFAULT_WINDOW_FWHMS * env.spin.fwhm;
    ((env.spin.center - half).max(0.0), env.spin.center + half)
}

/// Midpoint binning of J over `window` into `m` modes with
/// `|g_j|² = ∫_bin J(ω) dω/2π`. Leakage is left out unless `include_leakage`
/// is set, in which case the flat 2κ is added to every bin.
pub fn discretize(env: &SpectralEnvironment, m: usize, window: (f64, f64), include_leakage: bool) -> Result<DiscreteBath> {
    if m < 1 {
        return Err(Error::invalid("modes", "need at least one mode"));
    }
    let (lo, hi) = window;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid("window", format!("need 0 ≤ low < high, got [{lo}, {hi}]")));
    }
    let spin = env.spin;
    let two_pi = 2.0 * std::f64::consts::PI;
    let total = spin.coupling * spin.coupling;
    let coverage = if total > 0.0 {
        let inside = integrate_converged(|w| spin.density(w) / two_pi, lo, hi, 1e-12, 1 << 16)
            .ok_or_else(|| Error::invalid("window", "spectral weight quadrature did not converge"))?;
        inside / total
    } else {
        1.0
    };
    if coverage < MIN_COVERAGE {
        return Err(Error::invalid(
            "window",
            format!("covers {:.5} of the spectral weight, need ≥ {MIN_COVERAGE}", coverage),
        ));
    }
    let spacing = (hi - lo) / m as f64;
    let flat = if include_leakage { 2.0 * env.kappa } else { 0.0 };
    let modes = (0..m)
        .map(|j| {
            let a = lo + j as f64 * spacing;
            let b = a + spacing;
            let weight = if total > 0.0 {
                integrate_converged(|w| spin.density(w) / two_pi, a, b, 1e-13, 1 << 12).unwrap_or(f64::NAN)
            } else {
                0.0
            } + flat * spacing / two_pi;
            BathMode {
                frequency: a + 0.5 * spacing,
                coupling: weight.max(0.0).sqrt(),
            }
        })
        .collect::<Vec<_>>();
    if modes.iter().any(|md| !md.coupling.is_finite()) {
        return Err(Error::invalid("window", "bin quadrature did not converge"));
    }
    Ok(DiscreteBath {
        modes,
        temperature: env.temperature,
        thermal_scale: env.thermal_scale,
        spacing,
        coverage,
    })
}

/// Eigendecomposition of the single-particle Hamiltonian in the frame
/// rotating at `frame` (index 0 is the cavity).
#[derive(Debug, Clone)]
pub struct DiscretePropagator {
    pub frame: f64,
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl DiscretePropagator {
    pub fn new(bath: &DiscreteBath, omega_c: f64, frame: f64) -> Self {
        let n = bath.len() + 1;
        let mut h = DMatrix::<f64>::zeros(n, n);
        h[(0, 0)] = omega_c - frame;
        for (j, md) in bath.modes.iter().enumerate() {
            h[(j + 1, j + 1)] = md.frequency - frame;
            h[(0, j + 1)] = md.coupling;
            h[(j + 1, 0)] = md.coupling;
        }
        let eig = SymmetricEigen::new(h);
        Self {
            frame,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Row `U₀ⱼ(t)`, j = 0..=M.
    pub fn cavity_row(&self, t: f64) -> Vec<C64> {
        let n = self.dim();
        let phases: Vec<C64> = (0..n)
            .map(|k| C64::from_polar(self.vectors[(0, k)], -self.eigenvalues[k] * t))
            .collect();
        (0..n)
            .map(|j| {
                let mut acc = C64::new(0.0, 0.0);
                for (k, p) in phases.iter().enumerate() {
                    acc += p * self.vectors[(j, k)];
                }
                acc
            })
            .collect()
    }

    /// Response of the cavity amplitude to a tone applied to the cavity:
    /// `−i ∫_{a}^{b} U₀₀(t−τ)·A·e^{iδτ} dτ` with `[a, b] = [t_on, min(t, t_off)]`.
    fn driven(&self, t: f64, amp: C64, detuning: f64, t_on: f64, t_off: f64) -> C64 {
        let b = t.min(t_off);
        if b <= t_on {
            return C64::new(0.0, 0.0);
        }
        let len = b - t_on;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..self.dim() {
            let w = self.vectors[(0, k)] * self.vectors[(0, k)];
            let lam = self.eigenvalues[k];
            let x = lam + detuning;
            // ∫_a^b e^{−iλ(t−τ)}e^{iδτ} dτ = e^{−iλt}·e^{ixa}·len·φ(x·len)
            let integral = C64::from_polar(1.0, -lam * t + x * t_on) * phi(x * len) * len;
            acc += integral * w;
        }
        C64::new(0.0, -1.0) * amp * acc
    }
}

/// `(e^{iθ} − 1)/(iθ)`, accurate for small θ.
fn phi(theta: f64) -> C64 {
    if theta.abs() < 1e-4 {
        let t2 = theta * theta;
        C64::new(1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        let s = (0.5 * theta).sin();
        C64::new(theta.sin(), 2.0 * s * s) / theta
    }
}

/// Oracle traces on a grid (rotating frame).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTraces {
    pub grid: TimeGrid,
    pub u: Vec<C64>,
    pub v: Vec<f64>,
    /// ⟨a⟩ for the given z₀ and drive.
    pub a_mean: Vec<C64>,
    /// max_t |Σ_j |U₀ⱼ|² − 1|.
    pub unitarity_drift: f64,
}

/// Propagate the discrete system over `grid` (times measured from t₀ = grid.t0).
pub fn propagate(
    bath: &DiscreteBath,
    omega_c: f64,
    grid: &TimeGrid,
    drive: &DriveProtocol,
    z0: C64,
) -> Result<OracleTraces> {
    let prop = DiscretePropagator::new(bath, omega_c, omega_c);
    let occupation: Vec<f64> = bath
        .modes
        .iter()
        .map(|md| bose_occupation(md.frequency, bath.thermal_scale))
        .collect::<Result<_>>()?;
    let amp = drive.complex_amplitude();
    let detuning = omega_c - drive.frequency;
    let rows: Vec<(C64, f64, C64, f64)> = (0..grid.n_steps)
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k) - grid.t0;
            let row = prop.cavity_row(t);
            let norm: f64 = row.iter().map(|x| x.norm_sqr()).sum();
            let v: f64 = row[1..].iter().zip(&occupation).map(|(x, n)| n * x.norm_sqr()).sum();
            let y = if drive.is_on() {
                // The drive phase is referenced to absolute time.
                let a = amp * C64::from_polar(1.0, detuning * grid.t0);
                prop.driven(t, a, detuning, drive.t_on - grid.t0, drive.t_off - grid.t0)
            } else {
                C64::new(0.0, 0.0)
            };
            (row[0], v, row[0] * z0 + y, (norm - 1.0).abs())
        })
        .collect();
    Ok(OracleTraces {
        grid: *grid,
        u: rows.iter().map(|r| r.0).collect(),
        v: rows.iter().map(|r| r.1).collect(),
        a_mean: rows.iter().map(|r| r.2).collect(),
        unitarity_drift: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

pub fn propagate_u(bath: &DiscreteBath, omega_c: f64, grid: &TimeGrid) -> Result<Vec<C64>> {
    Ok(propagate(bath, omega_c, grid, &DriveProtocol::off(), C64::new(0.0, 0.0))?.u)
}

pub fn propagate_v(bath: &DiscreteBath, omega_c: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    Ok(propagate(bath, omega_c, grid, &DriveProtocol::off(), C64::new(0.0, 0.0))?.v)
}

/// Maximum deviations between the solver and the oracle over `t < t_rec/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub modes: usize,
    pub recurrence_time: f64,
    /// Last compared time (ns).
    pub compared_until: f64,
    pub points: usize,
    pub u_deviation: f64,
    pub v_deviation: f64,
    /// Deviation of ȳ (the drive response); 0 when undriven.
    pub y_deviation: f64,
    pub unitarity_drift: f64,
}

/// Compare a solver run with the oracle for the same bath and drive.
/// Points at or beyond `RECURRENCE_FRACTION·t_rec` are never compared.
pub fn compare(bath: &DiscreteBath, omega_c: f64, sol: &GreensSolution, drive: &DriveProtocol) -> Result<OracleComparison> {
    let t_rec = bath.recurrence_time();
    let limit = RECURRENCE_FRACTION * t_rec;
    let grid = sol.grid;
    let n = (0..grid.n_steps).take_while(|&k| grid.time(k) - grid.t0 < limit).count();
    if n < 2 {
        return Err(Error::invalid("grid", format!("no points before t_rec/2 = {limit} ns")));
    }
    let short = TimeGrid::new(grid.t0, grid.dt, n)?;
    let oracle = propagate(bath, omega_c, &short, drive, C64::new(0.0, 0.0))?;
    let mut out = OracleComparison {
        modes: bath.len(),
        recurrence_time: t_rec,
        compared_until: short.end(),
        points: n,
        u_deviation: 0.0,
        v_deviation: 0.0,
        y_deviation: 0.0,
        unitarity_drift: oracle.unitarity_drift,
    };
    for k in 0..n {
        out.u_deviation = out.u_deviation.max((sol.u[k] - oracle.u[k]).norm());
        out.v_deviation = out.v_deviation.max((sol.v[k] - oracle.v[k]).abs());
        out.y_deviation = out.y_deviation.max((sol.y[k] - oracle.a_mean[k]).norm());
    }
    Ok(out)
}
