//! Renormalized internal energy, work power and heat currents.
//!
//! With `ħ = 1`, `ā = ū·z₀ + ȳ` (rotating frame), `N = |ā|² + v(t,t)` and
//! `R = Re[f̄_r*·ā]`:
//!
//! * `E^r = ω_r·N + 2R`, and `E^r|_{T=0} = ω_r·|ā|² + 2R`;
//! * `P_w^e = N·dω_r/dt`, `P_w^d = 2Re[ā·(df_r/dt)*]`;
//! * `I_h^F = ω_r·v̇`, `I_h^D = −2γ·(E^r|_{T=0} − R)`;
//! * `I_h = ω_r·γ̃ − 2γ·(E^r − R)`, which must equal `I_h^D + I_h^F`.
//!
//! Products such as `2Re[f_r*·a]` are frame-invariant, so everything is
//! evaluated from rotating-frame series.

use std::path::Path;

use serde::Serialize;

use crate::coefficients::MasterEqCoefficients;
use crate::diff::derivative;
use crate::greens::{GreensSolution, TimeGrid};
use crate::{Error, Result, C64};

/// Relative tolerance of the channel-sum identity `I_h^D + I_h^F = I_h`.
pub const CHANNEL_SUM_TOLERANCE: f64 = 1e-9;

/// First and second moments of the cavity field.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrace {
    pub z0: C64,
    /// ⟨a(t)⟩ in the rotating frame.
    pub a_mean: Vec<C64>,
    /// ⟨a†a⟩(t).
    pub n_mean: Vec<f64>,
}

impl MomentTrace {
    pub fn from_solution(sol: &GreensSolution, z0: C64) -> Self {
        let a_mean: Vec<C64> = sol.u.iter().zip(&sol.y).map(|(u, y)| u * z0 + y).collect();
        let n_mean = a_mean.iter().zip(&sol.v).map(|(a, v)| a.norm_sqr() + v).collect();
        Self { z0, a_mean, n_mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermoTrace {
    pub grid: TimeGrid,
    /// Frequency used for the ħω_c normalization at output.
    pub omega_c: f64,
    pub e_r: Vec<f64>,
    pub e_r_t0: Vec<f64>,
    pub p_w_e: Vec<f64>,
    pub p_w_d: Vec<f64>,
    pub i_h_d: Vec<f64>,
    pub i_h_f: Vec<f64>,
    /// Total heat current evaluated directly from γ̃ and γ.
    pub i_h: Vec<f64>,
    pub de_dt: Vec<f64>,
    pub balance_residual: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ThermoTrace {
    pub fn p_w(&self, k: usize) -> f64 {
        self.p_w_e[k] + self.p_w_d[k]
    }

    /// CSV with internal-unit columns followed by the same quantities in
    /// units of ħω_c (energy) and ħω_c/ns (powers). The second line is a
    /// units row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::output::CsvWriter::create(path)?;
        let base = ["E_r", "P_w_e", "P_w_d", "I_h_D", "I_h_F", "I_h", "balance_residual"];
        let mut header = vec!["t_ns".to_string()];
        header.extend(base.iter().map(|s| s.to_string()));
        header.push("flag".into());
        header.extend(base.iter().map(|s| format!("{s}_hwc")));
        w.raw_row(&header)?;
        let mut units = vec!["ns".to_string(), "hbar*rad/ns".to_string()];
        units.extend(std::iter::repeat_n("hbar*rad/ns^2".to_string(), 6));
        units.push("1=excluded".into());
        units.push("hbar*omega_c".into());
        units.extend(std::iter::repeat_n("hbar*omega_c/ns".to_string(), 6));
        w.raw_row(&units)?;
        let scale = 1.0 / self.omega_c;
        for k in 0..self.grid.n_steps {
            let vals = [
                self.e_r[k],
                self.p_w_e[k],
                self.p_w_d[k],
                self.i_h_d[k],
                self.i_h_f[k],
                self.i_h[k],
                self.balance_residual[k],
            ];
            let mut row = vec![self.grid.time(k)];
            row.extend(vals);
            row.push(if self.valid[k] { 0.0 } else { 1.0 });
            row.extend(vals.iter().map(|v| v * scale));
            w.row(&row)?;
        }
        w.finish()
    }
}

fn nan_unless(ok: bool, x: f64) -> f64 {
    if ok {
        x
    } else {
        f64::NAN
    }
}

/// `(E^r, E^r|_{T=0})`.
pub fn internal_energy(coeffs: &MasterEqCoefficients, moments: &MomentTrace) -> (Vec<f64>, Vec<f64>) {
    let n = coeffs.grid.n_steps;
    let mut e = Vec::with_capacity(n);
    let mut e0 = Vec::with_capacity(n);
    for k in 0..n {
        let ok = coeffs.valid[k];
        let a = moments.a_mean[k];
        let drive = 2.0 * (coeffs.f_r[k].conj() * a).re;
        e.push(nan_unless(ok, coeffs.omega_r[k] * moments.n_mean[k] + drive));
        e0.push(nan_unless(ok, coeffs.omega_r[k] * a.norm_sqr() + drive));
    }
    (e, e0)
}

/// `(P_w^e, P_w^d)`: intrinsic (energy renormalization) and driving-induced work power.
pub fn work_power(coeffs: &MasterEqCoefficients, moments: &MomentTrace) -> (Vec<f64>, Vec<f64>) {
    let n = coeffs.grid.n_steps;
    (0..n)
        .map(|k| {
            let ok = coeffs.usable(k);
            let pe = moments.n_mean[k] * coeffs.domega_r[k];
            let pd = 2.0 * (moments.a_mean[k] * coeffs.df_r[k].conj()).re;
            (nan_unless(ok, pe), nan_unless(ok, pd))
        })
        .unzip()
}

/// Heat currents `(I_h^D, I_h^F, I_h)`; errors if the two channels do not
/// sum to the directly evaluated total within [`CHANNEL_SUM_TOLERANCE`].
pub fn heat_currents(
    coeffs: &MasterEqCoefficients,
    moments: &MomentTrace,
    sol: &GreensSolution,
    e_r: &[f64],
    e_r_t0: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = coeffs.grid.n_steps;
    let mut d = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut total = Vec::with_capacity(n);
    for k in 0..n {
        if !coeffs.valid[k] {
            d.push(f64::NAN);
            f.push(f64::NAN);
            total.push(f64::NAN);
            continue;
        }
        let wr = coeffs.omega_r[k];
        let g = coeffs.gamma[k];
        let r = (coeffs.f_r[k].conj() * moments.a_mean[k]).re;
        let id = -2.0 * g * (e_r_t0[k] - r);
        let if_ = wr * sol.v_dot[k];
        let fluct = wr * coeffs.gamma_t[k];
        let diss = 2.0 * g * (e_r[k] - r);
        let it = fluct - diss;
        let scale = id.abs().max(if_.abs()).max(fluct.abs()).max(diss.abs());
        let err = (id + if_ - it).abs();
        if err > CHANNEL_SUM_TOLERANCE * scale {
            return Err(Error::Consistency {
                module: "thermo_quantities",
                index: k,
                detail: format!("I_D + I_F = {} but direct I_h = {it} (relative {:.3e})", id + if_, err / scale),
            });
        }
        d.push(id);
        f.push(if_);
        total.push(it);
    }
    Ok((d, f, total))
}

/// `(residual, dE/dt)` with `residual = dE/dt − (P_w^e + P_w^d + I_h^D + I_h^F)`;
/// dE/dt by finite differences that respect gaps and drive breakpoints.
pub fn balance_residual(
    grid: &TimeGrid,
    e_r: &[f64],
    p_w_e: &[f64],
    p_w_d: &[f64],
    i_h_d: &[f64],
    i_h_f: &[f64],
    valid: &[bool],
    breaks: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let de = derivative(e_r, grid.dt, Some(valid), breaks);
    let res = (0..grid.n_steps)
        .map(|k| de.values[k] - (p_w_e[k] + p_w_d[k] + i_h_d[k] + i_h_f[k]))
        .collect();
    (res, de.values)
}

/// Full thermodynamic trace for one run.
pub fn compute_thermo(
    sol: &GreensSolution,
    coeffs: &MasterEqCoefficients,
    moments: &MomentTrace,
    omega_c: f64,
    breaks: &[usize],
) -> Result<ThermoTrace> {
    let (e_r, e_r_t0) = internal_energy(coeffs, moments);
    let (p_w_e, p_w_d) = work_power(coeffs, moments);
    let (i_h_d, i_h_f, i_h) = heat_currents(coeffs, moments, sol, &e_r, &e_r_t0)?;
    let valid: Vec<bool> = (0..coeffs.grid.n_steps).map(|k| coeffs.usable(k)).collect();
    let (balance_residual, de_dt) =
        balance_residual(&coeffs.grid, &e_r, &p_w_e, &p_w_d, &i_h_d, &i_h_f, &coeffs.valid, breaks);
    Ok(ThermoTrace {
        grid: coeffs.grid,
        omega_c,
        e_r,
        e_r_t0,
        p_w_e,
        p_w_d,
        i_h_d,
        i_h_f,
        i_h,
        de_dt,
        balance_residual,
        valid,
    })
}

/// max|residual| / max|dE/dt| over usable points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceSummary {
    pub max_abs_residual: f64,
    pub max_abs_de_dt: f64,
    pub relative: f64,
    pub points: usize,
}

impl BalanceSummary {
    /// Points within `halo` steps of any index in `around` are skipped.
    pub fn of(trace: &ThermoTrace, around: &[usize], halo: usize) -> Self {
        let mut max_res: f64 = 0.0;
        let mut max_de: f64 = 0.0;
        let mut points = 0;
        for k in 0..trace.grid.n_steps {
            if !trace.valid[k] || around.iter().any(|&c| k.abs_diff(c) <= halo) {
                continue;
            }
            let (r, d) = (trace.balance_residual[k], trace.de_dt[k]);
            if !(r.is_finite() && d.is_finite()) {
                continue;
            }
            max_res = max_res.max(r.abs());
            max_de = max_de.max(d.abs());
            points += 1;
        }
        Self {
            max_abs_residual: max_res,
            max_abs_de_dt: max_de,
            relative: if max_de > 0.0 { max_res / max_de } else { max_res },
            points,
        }
    }
}

/// Analytic energy, work power and heat of the isolated cavity driven by
/// `f(t)/ħ = A·e^{−iω_d t}` from a coherent state `z₀`.
///
/// With `δ = ω_c − ω_d`:
/// `E = ω_c|z₀|² + 2Re[(A*z₀/δ)(ω_c − ω_d e^{−iδt})] + (2|A|²/δ²)·ω_d·(1 − cos δt)`,
/// `P_w = (2|A|²/δ)·ω_d·sin δt − 2Im[A*z₀ e^{−iδt}]·ω_d`, `I_h = 0`.
/// δ = 0 uses the limits `E = ω_c|z₀|² + 2Re[A*z₀(1 + iω_c t)] + |A|²ω_c t²`
/// and `P_w = 2|A|²ω_c t − 2Im[A*z₀]ω_c`.
pub fn closed_cavity_oracle(z0: C64, amplitude: C64, omega_c: f64, omega_d: f64, grid: &TimeGrid) -> ThermoTrace {
    let delta = omega_c - omega_d;
    let a2 = amplitude.norm_sqr();
    let az = amplitude.conj() * z0;
    let n = grid.n_steps;
    let mut e_r = Vec::with_capacity(n);
    let mut p_w = Vec::with_capacity(n);
    for t in grid.times() {
        let (e, p) = if delta == 0.0 {
            (
                omega_c * z0.norm_sqr() + 2.0 * (az * C64::new(1.0, omega_c * t)).re + a2 * omega_c * t * t,
                2.0 * a2 * omega_c * t - 2.0 * az.im * omega_c,
            )
        } else {
            let x = delta * t;
            let half = (0.5 * x).sin();
            // (1 − e^{−ix})/δ without cancellation
            let one_minus = C64::new(2.0 * half * half, x.sin()) / delta;
            let cross = 2.0 * (az * (C64::new(1.0, 0.0) + one_minus * omega_d)).re;
            let drive = 2.0 * a2 / (delta * delta) * omega_d * 2.0 * half * half;
            let p = 2.0 * a2 / delta * omega_d * x.sin() - 2.0 * (az * C64::from_polar(1.0, -x)).im * omega_d;
            (omega_c * z0.norm_sqr() + cross + drive, p)
        };
        e_r.push(e);
        p_w.push(p);
    }
    let zeros = vec![0.0; n];
    ThermoTrace {
        grid: *grid,
        omega_c,
        e_r_t0: e_r.clone(),
        e_r,
        p_w_e: zeros.clone(),
        de_dt: p_w.clone(),
        p_w_d: p_w,
        i_h_d: zeros.clone(),
        i_h_f: zeros.clone(),
        i_h: zeros.clone(),
        balance_residual: zeros,
        valid: vec![true; n],
    }
}
