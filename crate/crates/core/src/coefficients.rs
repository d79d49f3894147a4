//! Time-dependent coefficients of the exact master equation.
//!
//! From the Green functions (rotating frame, `ħ = 1`):
//!
//! * `ω_r(t) = frame − Im[ū'/ū]`, `γ(t) = −Re[ū'/ū]`;
//! * `γ̃(t) = v̇(t,t) + 2γ(t)·v(t,t)`;
//! * `f̄_r(t) = i·[ȳ' − (ū'/ū)·ȳ]`.
//!
//! Near zeros of u these ratios are singular. Points with `|ū| < u_floor`
//! are flagged, their coefficients set to `NaN`, and excluded from all
//! derivative stencils.

use std::path::Path;

use crate::diff::derivative;
use crate::greens::{DriveProtocol, GreensSolution, TimeGrid};
use crate::{Error, Result, C64};

pub const DEFAULT_U_FLOOR: f64 = 1e-8;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct MasterEqCoefficients {
    pub grid: TimeGrid,
    pub frame_freq: f64,
    /// Renormalized frequency ω_c^r (rad/ns, lab value).
    pub omega_r: Vec<f64>,
    /// Dissipation coefficient γ (1/ns).
    pub gamma: Vec<f64>,
    /// Fluctuation coefficient γ̃ (1/ns).
    pub gamma_t: Vec<f64>,
    /// Renormalized drive f_r/ħ in the rotating frame (rad/ns).
    pub f_r: Vec<C64>,
    /// dω_r/dt.
    pub domega_r: Vec<f64>,
    /// Lab-frame df_r/dt, expressed in the rotating frame (multiplied by e^{i·frame·t}).
    pub df_r: Vec<C64>,
    /// False where |ū| is below the floor.
    pub valid: Vec<bool>,
    /// Lowest stencil order used by the two derivatives at each point
    /// (0 = unavailable).
    pub derivative_order: Vec<u8>,
}

impl MasterEqCoefficients {
    /// Lab-frame f_r(t)/ħ.
    pub fn f_r_lab(&self, k: usize) -> C64 {
        self.f_r[k] * C64::from_polar(1.0, -self.frame_freq * self.grid.time(k))
    }

    /// Points usable downstream: not flagged and with both derivatives.
    pub fn usable(&self, k: usize) -> bool {
        self.valid[k] && self.derivative_order[k] > 0
    }

    /// CSV with columns `t_ns, omega_r, gamma, gamma_tilde, re_fr, im_fr, flag`
    /// (f_r in the rotating frame; flag = 1 marks an excluded point).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::output::CsvWriter::create(path)?;
        w.header(&["t_ns", "omega_r", "gamma", "gamma_tilde", "re_fr", "im_fr", "flag"])?;
        for k in 0..self.grid.n_steps {
            w.row(&[
                self.grid.time(k),
                self.omega_r[k],
                self.gamma[k],
                self.gamma_t[k],
                self.f_r[k].re,
                self.f_r[k].im,
                if self.usable(k) { 0.0 } else { 1.0 },
            ])?;
        }
        w.finish()
    }
}

/// `(ω_r, γ, valid)` from the log-derivative of ū.
pub fn extract_rate_and_frequency(sol: &GreensSolution, u_floor: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = sol.grid.n_steps;
    let mut omega_r = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for k in 0..n {
        if sol.u[k].norm() < u_floor {
            omega_r.push(f64::NAN);
            gamma.push(f64::NAN);
            valid.push(false);
            continue;
        }
        let ratio = sol.udot[k] / sol.u[k];
        omega_r.push(sol.frame_freq - ratio.im);
        gamma.push(-ratio.re);
        valid.push(true);
    }
    (omega_r, gamma, valid)
}

/// `γ̃ = v̇ − [(u̇/u)·v + c.c.] = v̇ + 2γ·v`.
pub fn extract_gamma_tilde(sol: &GreensSolution, gamma: &[f64]) -> Vec<f64> {
    sol.v_dot
        .iter()
        .zip(&sol.v)
        .zip(gamma)
        .map(|((vd, v), g)| vd + 2.0 * g * v)
        .collect()
}

/// Renormalized drive in the rotating frame, `f̄_r = i·[ȳ' − (ū'/ū)·ȳ]`.
pub fn extract_f_r(sol: &GreensSolution, valid: &[bool]) -> Vec<C64> {
    (0..sol.grid.n_steps)
        .map(|k| {
            if !valid[k] {
                return C64::new(f64::NAN, f64::NAN);
            }
            if sol.y[k] == C64::new(0.0, 0.0) && sol.ydot[k] == C64::new(0.0, 0.0) {
                return C64::new(0.0, 0.0);
            }
            I * (sol.ydot[k] - sol.udot[k] / sol.u[k] * sol.y[k])
        })
        .collect()
}

/// `(dω_r/dt, df_r/dt, order)`.
///
/// f_r is demodulated at the drive frequency before differencing, so the
/// fast carrier is differentiated analytically:
/// `f_r = e^{−iω_d t}·f̂_r` ⇒ `ḟ_r = e^{−iω_d t}·(f̂_r' − iω_d f̂_r)`.
pub fn coefficient_derivatives(
    grid: &TimeGrid,
    frame_freq: f64,
    demod_freq: f64,
    omega_r: &[f64],
    f_r: &[C64],
    valid: &[bool],
    breaks: &[usize],
) -> (Vec<f64>, Vec<C64>, Vec<u8>) {
    let dw = derivative(omega_r, grid.dt, Some(valid), breaks);
    let shift = frame_freq - demod_freq;
    let envelope: Vec<C64> = f_r
        .iter()
        .enumerate()
        .map(|(k, f)| f * C64::from_polar(1.0, -shift * grid.time(k)))
        .collect();
    let de = derivative(&envelope, grid.dt, Some(valid), breaks);
    let df: Vec<C64> = (0..grid.n_steps)
        .map(|k| {
            let lab_env = de.values[k] - I * demod_freq * envelope[k];
            lab_env * C64::from_polar(1.0, shift * grid.time(k))
        })
        .collect();
    let order = dw.order.iter().zip(&de.order).map(|(a, b)| *a.min(b)).collect();
    (dw.values, df, order)
}

/// All coefficients and their derivatives for one solution.
pub fn compute_coefficients(sol: &GreensSolution, drive: &DriveProtocol, u_floor: f64) -> Result<MasterEqCoefficients> {
    if !(u_floor >= 0.0) {
        return Err(Error::invalid("u_floor", "must be ≥ 0"));
    }
    let (omega_r, gamma, valid) = extract_rate_and_frequency(sol, u_floor);
    let gamma_t = extract_gamma_tilde(sol, &gamma);
    let f_r = extract_f_r(sol, &valid);
    let demod = if drive.is_on() { drive.frequency } else { sol.frame_freq };
    let breaks = drive.breakpoints(&sol.grid)?;
    let (domega_r, df_r, derivative_order) =
        coefficient_derivatives(&sol.grid, sol.frame_freq, demod, &omega_r, &f_r, &valid, &breaks);
    Ok(MasterEqCoefficients {
        grid: sol.grid,
        frame_freq: sol.frame_freq,
        omega_r,
        gamma,
        gamma_t,
        f_r,
        domega_r,
        df_r,
        valid,
        derivative_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::solve;
    use crate::spectral::{KernelQuadrature, QGaussianSpectrum, SpectralEnvironment};
    use std::f64::consts::PI;

    const WC: f64 = 2.0 * PI * 2.69;

    fn run(omega: f64, kappa: f64, horizon: f64, drive: &DriveProtocol) -> (GreensSolution, MasterEqCoefficients) {
        run_dt(omega, kappa, 0.25, horizon, drive)
    }

    fn run_dt(
        omega: f64,
        kappa: f64,
        dt: f64,
        horizon: f64,
        drive: &DriveProtocol,
    ) -> (GreensSolution, MasterEqCoefficients) {
        let s = QGaussianSpectrum::new(omega, WC, 1.39, 18.8 * PI * 1e-3).unwrap();
        let env = SpectralEnvironment::new(s, kappa, 0.1).unwrap();
        let grid = TimeGrid::with_horizon(dt, horizon).unwrap();
        let sol = solve(&env, &grid, drive, WC, &KernelQuadrature::default()).unwrap();
        let c = compute_coefficients(&sol, drive, DEFAULT_U_FLOOR).unwrap();
        (sol, c)
    }

    #[test]
    fn closed_cavity_coefficients_are_bare() {
        let drive = DriveProtocol::tone(0.3, WC - 0.02, 0.0, 60.0, 0.4).unwrap();
        let (_, c) = run(0.0, 0.0, 60.0, &drive);
        for k in 0..c.grid.n_steps {
            let t = c.grid.time(k);
            assert_eq!(c.omega_r[k], WC);
            assert_eq!(c.gamma[k], 0.0);
            assert_eq!(c.gamma_t[k], 0.0);
            assert_eq!(c.domega_r[k], 0.0);
            let f = drive.value(t);
            assert!((c.f_r_lab(k) - f).norm() < 1e-12, "t={t}");
            // df/dt = −iω_d f, reported in the rotating frame
            let df = -I * drive.frequency * drive.rotating(t, WC);
            assert!((c.df_r[k] - df).norm() < 1e-10, "t={t}: {} vs {df}", c.df_r[k]);
        }
    }

    #[test]
    fn leakage_only_gives_constant_rate() {
        let kappa = 0.8 * PI * 1e-3;
        let (_, c) = run(0.0, kappa, 50.0, &DriveProtocol::off());
        for k in 0..c.grid.n_steps {
            assert!((c.gamma[k] - kappa).abs() < 1e-15);
            assert_eq!(c.omega_r[k], WC);
        }
    }

    #[test]
    fn decomposition_reconstructs_log_derivative() {
        let (sol, c) = run(17.2 * PI * 1e-3, 0.8 * PI * 1e-3, 300.0, &DriveProtocol::off());
        for k in 0..c.grid.n_steps {
            let ratio = sol.udot[k] / sol.u[k];
            let rebuilt = -(I * (c.omega_r[k] - WC) + c.gamma[k]);
            assert!((rebuilt - ratio).norm() <= 1e-10 * ratio.norm().max(1e-300));
        }
    }

    fn log_derivative(c: &MasterEqCoefficients) -> Vec<C64> {
        (0..c.grid.n_steps).map(|k| -(I * (c.omega_r[k] - WC) + c.gamma[k])).collect()
    }

    #[test]
    fn integrating_the_log_derivative_returns_u_weak() {
        let (sol, c) = run(1.72 * PI * 1e-3, 0.8 * PI * 1e-3, 500.0, &DriveProtocol::off());
        let dt = c.grid.dt;
        let h = log_derivative(&c);
        let mut acc = C64::new(0.0, 0.0);
        for k in 1..c.grid.n_steps {
            acc += (h[k - 1] + h[k]) * (0.5 * dt);
            let rel = (acc.exp() - sol.u[k]).norm() / sol.u[k].norm();
            assert!(rel < 1e-6, "t={}: {rel}", c.grid.time(k));
        }
    }

    #[test]
    fn integrating_the_log_derivative_returns_u_strong() {
        // Near-zeros of u make exp∫ ill-conditioned, so integrate
        // u' = h·u with the trapezoidal rule in product form instead.
        let (sol, c) = run(17.2 * PI * 1e-3, 0.8 * PI * 1e-3, 500.0, &DriveProtocol::off());
        let half = 0.5 * c.grid.dt;
        let h = log_derivative(&c);
        let mut u = C64::new(1.0, 0.0);
        for k in 1..c.grid.n_steps {
            u = u * (1.0 + h[k - 1] * half) / (1.0 - h[k] * half);
            if sol.u[k].norm() > 1e-3 {
                let rel = (u - sol.u[k]).norm() / sol.u[k].norm();
                assert!(rel < 1e-6, "t={}: {rel}", c.grid.time(k));
            }
        }
    }

    #[test]
    fn fluctuation_identity() {
        let (sol, c) = run(17.2 * PI * 1e-3, 0.8 * PI * 1e-3, 200.0, &DriveProtocol::off());
        for k in 0..c.grid.n_steps {
            let lhs = c.gamma_t[k] - 2.0 * c.gamma[k] * sol.v[k];
            let scale = c.gamma_t[k].abs().max(sol.v_dot[k].abs()).max(1e-300);
            assert!((lhs - sol.v_dot[k]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn weak_coupling_barely_renormalizes_the_drive() {
        let drive = DriveProtocol::tone(0.1 * WC, WC, 0.0, 300.0, 0.0).unwrap();
        let f = drive.complex_amplitude();
        let worst = |omega: f64| {
            let (_, c) = run(omega, 0.8 * PI * 1e-3, 300.0, &drive);
            (1..c.grid.n_steps)
                .filter(|&k| c.valid[k])
                .map(|k| (c.f_r[k] - f).norm() / f.norm())
                .fold(0.0, f64::max)
        };
        let (weak, strong) = (worst(1.72 * PI * 1e-3), worst(17.2 * PI * 1e-3));
        assert!(weak < 0.1, "{weak}");
        assert!(weak < 0.2 * strong, "{weak} vs {strong}");
    }

    #[test]
    fn zeros_of_u_are_flagged_and_skipped() {
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let mut u: Vec<C64> = (0..7).map(|k| C64::new(1.0 - 0.1 * k as f64, 0.0)).collect();
        u[3] = C64::new(0.0, 0.0);
        let sol = GreensSolution {
            grid,
            frame_freq: WC,
            udot: vec![C64::new(-0.1, 0.0); 7],
            u,
            y: vec![C64::new(0.0, 0.0); 7],
            ydot: vec![C64::new(0.0, 0.0); 7],
            v: vec![0.0; 7],
            v_dot: vec![0.0; 7],
        };
        let c = compute_coefficients(&sol, &DriveProtocol::off(), DEFAULT_U_FLOOR).unwrap();
        assert!(!c.valid[3] && c.gamma[3].is_nan() && c.omega_r[3].is_nan());
        assert!(!c.usable(3));
        // neighbours use one-sided stencils that avoid the gap
        assert!(c.usable(2) && c.usable(4));
        assert!(c.domega_r[2].is_finite() && c.domega_r[4].is_finite());
    }

    #[test]
    fn constant_frequency_has_zero_derivative() {
        let grid = TimeGrid::new(0.0, 0.5, 20).unwrap();
        let w = vec![3.0; 20];
        let f = vec![C64::new(0.0, 0.0); 20];
        let (dw, _, order) = coefficient_derivatives(&grid, WC, WC, &w, &f, &[true; 20], &[]);
        assert!(dw.iter().all(|x| *x == 0.0));
        assert!(order.iter().all(|o| *o == 2));
    }
}
