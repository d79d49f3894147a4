//! Nonequilibrium Green functions of the cavity.
//!
//! Everything is computed in the frame rotating at `frame_freq` (normally
//! the bare cavity frequency), where `u(t, t₀) = e^{−i·frame·(t−t₀)}·ū(t)`.
//! With stationary kernels the two-time propagator is
//! `u(t, τ) = u(t − τ, 0)`, so one-argument series are sufficient:
//!
//! * `ū` solves `dū/dt = −κ·ū − ∫₀ᵗ ḡ(t−τ)·ū(τ) dτ`, `ū(0) = 1`;
//! * `ȳ(t) = −i ∫₀ᵗ ū(t−τ)·f̄(τ) dτ` with `f̄ = f·e^{i·frame·t}`;
//! * `v(t,t) = ∫₀ᵗ∫₀ᵗ ū(t−t₁)·g̃(t₁−t₂)·ū*(t−t₂) dt₁dt₂`.

use std::path::Path;

use serde::Serialize;

use crate::diff::derivative;
use crate::spectral::{build_kernels_with, KernelQuadrature, KernelTable, SpectralEnvironment};
use crate::toeplitz::causal_convolve;
use crate::{Error, Result, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Largest allowed |ω_d − frame|·dt (rad) for the rotating-frame drive.
pub const MAX_DRIVE_PHASE_PER_STEP: f64 = 0.5;

/// Uniform time grid `t_k = t0 + k·dt`, `k = 0..n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        if n_steps < 2 {
            return Err(Error::invalid("n_steps", format!("must be ≥ 2, got {n_steps}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0", "must be finite"));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid from 0 covering `[0, horizon]`.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
        }
        let steps = (horizon / dt).round() as usize + 1;
        Self::new(0.0, dt, steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_steps).map(|k| self.time(k))
    }

    /// Index of a grid-aligned time (to within 1e-6·dt).
    pub fn aligned_index(&self, t: f64) -> Option<i64> {
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        ((x - k).abs() < 1e-6).then_some(k as i64)
    }

    /// Same span with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            t0: self.t0,
            dt: 0.5 * self.dt,
            n_steps: 2 * self.n_steps - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveKind {
    Off,
    Tone,
}

/// External drive `f(t)/ħ = A·e^{iφ}·e^{−iω_d t}` on `[t_on, t_off]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriveProtocol {
    pub kind: DriveKind,
    /// |A| in rad/ns (the energy amplitude divided by ħ).
    pub amplitude: f64,
    /// ω_d in rad/ns.
    pub frequency: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub phase: f64,
}

impl DriveProtocol {
    pub fn off() -> Self {
        Self {
            kind: DriveKind::Off,
            amplitude: 0.0,
            frequency: 0.0,
            t_on: 0.0,
            t_off: 0.0,
            phase: 0.0,
        }
    }

    pub fn tone(amplitude: f64, frequency: f64, t_on: f64, t_off: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid("drive.amplitude", format!("must be ≥ 0, got {amplitude}")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::invalid("drive.frequency", format!("must be > 0, got {frequency}")));
        }
        if !(t_on < t_off) {
            return Err(Error::invalid("drive.t_off", format!("need t_on < t_off, got {t_on} ≥ {t_off}")));
        }
        Ok(Self {
            kind: DriveKind::Tone,
            amplitude,
            frequency,
            t_on,
            t_off,
            phase,
        })
    }

    pub fn is_on(&self) -> bool {
        self.kind == DriveKind::Tone && self.amplitude > 0.0
    }

    /// Complex amplitude `A·e^{iφ}`.
    pub fn complex_amplitude(&self) -> C64 {
        C64::from_polar(self.amplitude, self.phase)
    }

    /// Lab-frame `f(t)/ħ`; the support is the closed interval `[t_on, t_off]`.
    pub fn value(&self, t: f64) -> C64 {
        if !self.is_on() || t < self.t_on || t > self.t_off {
            return ZERO;
        }
        self.complex_amplitude() * C64::from_polar(1.0, -self.frequency * t)
    }

    /// `f̄(t) = f(t)·e^{i·frame·t}`.
    pub fn rotating(&self, t: f64, frame: f64) -> C64 {
        self.value(t) * C64::from_polar(1.0, frame * t)
    }

    /// Grid indices `(on, off)` of the drive edges, clamped to the grid;
    /// `None` if the drive never acts on the grid. Edges inside the grid must
    /// be grid-aligned.
    pub fn grid_support(&self, grid: &TimeGrid) -> Result<Option<(usize, usize)>> {
        if !self.is_on() {
            return Ok(None);
        }
        let last = grid.n_steps as i64 - 1;
        let edge = |t: f64, name: &str| -> Result<i64> {
            let x = (t - grid.t0) / grid.dt;
            if x <= 0.0 {
                return Ok(x.floor().max(-1.0) as i64);
            }
            if x >= last as f64 {
                return Ok(last + 1);
            }
            grid.aligned_index(t).ok_or_else(|| {
                Error::invalid(
                    format!("drive.{name}"),
                    format!("edge at t = {t} ns is not on the time grid (dt = {})", grid.dt),
                )
            })
        };
        let on = edge(self.t_on, "t_on")?.max(0);
        let off = edge(self.t_off, "t_off")?.min(last);
        if on > last || off < 0 || on > off {
            return Ok(None);
        }
        Ok(Some((on as usize, off as usize)))
    }

    /// Grid indices after which the drive (and hence `ẏ`, `f_r`) is discontinuous.
    pub fn breakpoints(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        if let Some((on, off)) = self.grid_support(grid)? {
            if on > 0 {
                out.push(on - 1);
            }
            if off + 1 < grid.n_steps {
                out.push(off);
            }
        }
        Ok(out)
    }
}

/// Solved Green functions on a grid, in the rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensSolution {
    pub grid: TimeGrid,
    pub frame_freq: f64,
    pub u: Vec<C64>,
    /// dū/dt from the right-hand side of the integro-differential equation.
    pub udot: Vec<C64>,
    pub y: Vec<C64>,
    /// dȳ/dt from the Leibniz-differentiated convolution.
    pub ydot: Vec<C64>,
    pub v: Vec<f64>,
    pub v_dot: Vec<f64>,
}

impl GreensSolution {
    /// Lab-frame `u(t, t₀)`.
    pub fn u_lab(&self, k: usize) -> C64 {
        self.u[k] * C64::from_polar(1.0, -self.frame_freq * (self.grid.time(k) - self.grid.t0))
    }

    /// CSV dump with columns `t_ns, re_u, im_u, re_y, im_y, v, v_dot`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::output::CsvWriter::create(path)?;
        w.header(&["t_ns", "re_u", "im_u", "re_y", "im_y", "v", "v_dot"])?;
        for k in 0..self.grid.n_steps {
            w.row(&[
                self.grid.time(k),
                self.u[k].re,
                self.u[k].im,
                self.y[k].re,
                self.y[k].im,
                self.v[k],
                self.v_dot[k],
            ])?;
        }
        w.finish()
    }
}

fn check_kernel_coverage(kernels: &KernelTable, grid: &TimeGrid) -> Result<()> {
    if kernels.n_steps() < grid.n_steps {
        return Err(Error::invalid(
            "kernels",
            format!("table covers {} lags, grid needs {}", kernels.n_steps(), grid.n_steps),
        ));
    }
    if (kernels.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::invalid(
            "kernels",
            format!("kernel dt {} differs from grid dt {}", kernels.dt, grid.dt),
        ));
    }
    Ok(())
}

/// Solve for ū with the implicit trapezoidal rule and trapezoidal memory
/// sums. The corrector equation is linear in the new value, so it is solved
/// in closed form rather than iterated.
pub fn solve_u(kernels: &KernelTable, grid: &TimeGrid) -> Result<Vec<C64>> {
    check_kernel_coverage(kernels, grid)?;
    let n = grid.n_steps;
    let dt = grid.dt;
    let g = &kernels.dissipation;
    let kappa = kernels.kappa_local;
    let mut u = vec![ZERO; n];
    u[0] = C64::new(1.0, 0.0);
    // F_k = dū/dt at step k
    let mut f_prev = C64::new(-kappa, 0.0);
    let denom = C64::new(1.0 + 0.5 * dt * kappa, 0.0) + g[0] * (0.25 * dt * dt);
    for m in 1..n {
        // Memory at step m without the u[m] term.
        let mut hist = g[m] * u[0] * 0.5;
        for j in 1..m {
            hist += g[m - j] * u[j];
        }
        hist *= dt;
        let um = (u[m - 1] + (f_prev - hist) * (0.5 * dt)) / denom;
        u[m] = um;
        f_prev = -um * kappa - hist - g[0] * um * (0.5 * dt);
    }
    for (k, x) in u.iter().enumerate() {
        if x.norm() > 1.0 + 1e-9 {
            return Err(Error::Consistency {
                module: "greens_solver",
                index: k,
                detail: format!("|u| = {} exceeds 1 for a passive environment", x.norm()),
            });
        }
    }
    Ok(u)
}

/// dū/dt evaluated from the right-hand side of the solved equation, with the
/// same trapezoidal memory sum the solver uses.
pub fn u_derivative(u: &[C64], kernels: &KernelTable, grid: &TimeGrid) -> Result<Vec<C64>> {
    check_kernel_coverage(kernels, grid)?;
    let n = grid.n_steps.min(u.len());
    let g = &kernels.dissipation[..n];
    let conv = causal_convolve(g, &u[..n]);
    let dt = grid.dt;
    Ok((0..n)
        .map(|m| {
            let memory = if m == 0 {
                ZERO
            } else {
                (conv[m] - (g[m] * u[0] + g[0] * u[m]) * 0.5) * dt
            };
            -u[m] * kernels.kappa_local - memory
        })
        .collect())
}

/// Product-integration weights for one cell of width `dt` against the
/// carrier `e^{iδs}`: `(∫(1−s/dt)e^{iδs}ds, ∫(s/dt)e^{iδs}ds)` over [0, dt].
/// Reduces to the trapezoidal weights (dt/2, dt/2) for δ = 0.
pub fn cell_weights(detuning: f64, dt: f64) -> (C64, C64) {
    let theta = detuning * dt;
    // Σ (iθ)^k / k! · 1/(k+1) and · 1/(k+2)
    let mut total = ZERO;
    let mut second = ZERO;
    let mut term = C64::new(1.0, 0.0);
    for k in 0..40 {
        let kf = k as f64;
        total += term / (kf + 1.0);
        second += term / (kf + 2.0);
        term = term * I * theta / (kf + 1.0);
        if term.norm() < 1e-18 {
            break;
        }
    }
    let beta = second * dt;
    let alpha = total * dt - beta;
    (alpha, beta)
}

/// Solve ȳ and dȳ/dt for the given drive.
///
/// ū is linear across each cell and the drive carrier is integrated
/// exactly (exponentially fitted trapezoid), so the closed cavity is
/// reproduced to rounding. Drive edges must lie on the grid.
pub fn solve_y(
    u: &[C64],
    udot: &[C64],
    drive: &DriveProtocol,
    grid: &TimeGrid,
    frame_freq: f64,
) -> Result<(Vec<C64>, Vec<C64>)> {
    let n = grid.n_steps;
    let Some((on, off)) = drive.grid_support(grid)? else {
        return Ok((vec![ZERO; n], vec![ZERO; n]));
    };
    let detuning = frame_freq - drive.frequency;
    if (detuning * grid.dt).abs() > MAX_DRIVE_PHASE_PER_STEP {
        return Err(Error::invalid(
            "drive.frequency",
            format!(
                "|ω_d − frame|·dt = {:.3} rad exceeds {MAX_DRIVE_PHASE_PER_STEP} rad; the rotating-frame drive is under-resolved",
                (detuning * grid.dt).abs()
            ),
        ));
    }
    let (alpha, beta) = cell_weights(detuning, grid.dt);
    let amp = drive.complex_amplitude();
    // f̄ at absolute time: A·e^{iφ}·e^{i(frame − ω_d)t}
    let carrier = |k: usize| amp * C64::from_polar(1.0, detuning * grid.time(k));
    let p: Vec<C64> = (0..n)
        .map(|c| if c >= on && c < off { carrier(c) } else { ZERO })
        .collect();
    let c1 = causal_convolve(&p, u);
    let c2 = causal_convolve(&p, udot);
    let mut y = vec![ZERO; n];
    let mut ydot = vec![ZERO; n];
    for m in 0..n {
        let (s1, s2) = if m == 0 {
            (ZERO, ZERO)
        } else {
            (
                alpha * (c1[m] - p[m] * u[0]) + beta * c1[m - 1],
                alpha * (c2[m] - p[m] * udot[0]) + beta * c2[m - 1],
            )
        };
        y[m] = -I * s1;
        let local = if m >= on && m <= off { carrier(m) * u[0] } else { ZERO };
        ydot[m] = -I * (local + s2);
    }
    Ok((y, ydot))
}

/// Diagonal thermal correlation v(t,t) and its time derivative.
///
/// With trapezoidal weights `c_p = w_p·ū_p` the double integral at step n is
/// the Hermitian form `Σ_{p,r≤n} c_p·G(r−p)·c_r*`, `G(k) = g̃(k·dt)`. Growing
/// n by one adds a diagonal term and a cross term `2·Re[c_n*·h_n]` with
/// `h_n = Σ_{p<n} G(n−p)·c_p`, a causal Toeplitz product evaluated once by
/// FFT for all n.
pub fn solve_v_diag(u: &[C64], kernels: &KernelTable, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    check_kernel_coverage(kernels, grid)?;
    let n = grid.n_steps;
    let dt = grid.dt;
    let gt = &kernels.thermal[..n];
    let mut v = vec![0.0; n];
    let has_kernel = gt.iter().any(|g| g.norm() > 0.0);
    if has_kernel {
        let g0 = gt[0].re;
        let c: Vec<C64> = (0..n).map(|p| u[p] * if p == 0 { 0.5 * dt } else { dt }).collect();
        let mut lag = gt.to_vec();
        lag[0] = ZERO;
        let h = causal_convolve(&lag, &c);
        // full[m]: quadratic form over 0..=m with unhalved last weight
        let mut full = g0 * c[0].norm_sqr();
        for m in 1..n {
            let half = c[m] * 0.5;
            v[m] = full + g0 * half.norm_sqr() + 2.0 * (half.conj() * h[m]).re;
            full += g0 * c[m].norm_sqr() + 2.0 * (c[m].conj() * h[m]).re;
        }
    }
    if kernels.thermal_local > 0.0 {
        let mut acc = 0.0;
        for m in 1..n {
            acc += 0.5 * dt * (u[m - 1].norm_sqr() + u[m].norm_sqr());
            v[m] += kernels.thermal_local * acc;
        }
    }
    for (k, &x) in v.iter().enumerate() {
        if x < -1e-10 || !x.is_finite() {
            return Err(Error::NegativeOccupation { index: k, value: x });
        }
    }
    let v_dot = derivative(&v, dt, None, &[]).values;
    Ok((v, v_dot))
}

/// Brute-force O(n²) evaluation of the complex quadratic form at step `m`
/// (reference for [`solve_v_diag`]; the imaginary part should vanish).
pub fn v_quadratic_form_direct(u: &[C64], kernels: &KernelTable, dt: f64, m: usize) -> C64 {
    if m == 0 {
        return ZERO;
    }
    let w = |p: usize| if p == 0 || p == m { 0.5 * dt } else { dt };
    let g = |k: i64| {
        if k >= 0 {
            kernels.thermal[k as usize]
        } else {
            kernels.thermal[(-k) as usize].conj()
        }
    };
    let mut acc = ZERO;
    for p in 0..=m {
        for r in 0..=m {
            acc += u[p] * w(p) * g(r as i64 - p as i64) * u[r].conj() * w(r);
        }
    }
    acc
}

/// Run the three solvers on one kernel table.
pub fn solve_with_kernels(kernels: &KernelTable, grid: &TimeGrid, drive: &DriveProtocol) -> Result<GreensSolution> {
    let u = solve_u(kernels, grid)?;
    let udot = u_derivative(&u, kernels, grid)?;
    let (y, ydot) = solve_y(&u, &udot, drive, grid, kernels.frame_freq)?;
    let (v, v_dot) = solve_v_diag(&u, kernels, grid)?;
    Ok(GreensSolution {
        grid: *grid,
        frame_freq: kernels.frame_freq,
        u,
        udot,
        y,
        ydot,
        v,
        v_dot,
    })
}

/// Build kernels for the environment and solve.
pub fn solve(
    env: &SpectralEnvironment,
    grid: &TimeGrid,
    drive: &DriveProtocol,
    frame_freq: f64,
    quad: &KernelQuadrature,
) -> Result<GreensSolution> {
    let kernels = build_kernels_with(env, grid.dt, grid.n_steps, frame_freq, quad)?;
    solve_with_kernels(&kernels, grid, drive)
}

/// Maximum changes of ū, ȳ and v(t,t) on the coarse grid when dt is halved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepHalvingReport {
    pub u_change: f64,
    pub y_change: f64,
    pub v_change: f64,
}

impl StepHalvingReport {
    pub fn compare(coarse: &GreensSolution, fine: &GreensSolution) -> Self {
        let mut r = Self {
            u_change: 0.0,
            y_change: 0.0,
            v_change: 0.0,
        };
        for k in 0..coarse.grid.n_steps {
            let j = 2 * k;
            r.u_change = r.u_change.max((coarse.u[k] - fine.u[j]).norm());
            r.y_change = r.y_change.max((coarse.y[k] - fine.y[j]).norm());
            r.v_change = r.v_change.max((coarse.v[k] - fine.v[j]).abs());
        }
        r
    }

    /// Error if any series changed by more than `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        for (series, change) in [("u", self.u_change), ("y", self.y_change), ("v", self.v_change)] {
            if change > tol {
                return Err(Error::StepHalving {
                    series,
                    change,
                    tolerance: tol,
                });
            }
        }
        Ok(())
    }
}

/// Solve on `grid` and on its halved-step refinement.
pub fn solve_step_halving(
    env: &SpectralEnvironment,
    grid: &TimeGrid,
    drive: &DriveProtocol,
    frame_freq: f64,
    quad: &KernelQuadrature,
) -> Result<(GreensSolution, GreensSolution, StepHalvingReport)> {
    let coarse = solve(env, grid, drive, frame_freq, quad)?;
    let fine = solve(env, &grid.refined(), drive, frame_freq, quad)?;
    let report = StepHalvingReport::compare(&coarse, &fine);
    Ok((coarse, fine, report))
}
