//! Environment spectra and the time-domain memory kernels.
//!
//! The spin ensemble has a q-Gaussian line shape; free-space leakage is a
//! flat spectrum `2κ`. The leakage never enters numerical quadrature: its
//! dissipation kernel is a delta function and is carried as a local damping
//! rate (`KernelTable::kappa_local`).

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::quadrature::GaussLegendre;
use crate::{units, Error, Result, C64};

/// Default half-width of the frequency integration window, in FWHMs.
pub const DEFAULT_WINDOW_FWHMS: f64 = 50.0;

/// q-Gaussian spin-ensemble spectral density
/// `J_s(ω) = 2πΩ²C·[1 + (q−1)(ω−ω_s)²/Δ²]^(−1/(q−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QGaussianSpectrum {
    /// Collective coupling Ω (rad/ns).
    pub coupling: f64,
    /// Ensemble center frequency ω_s (rad/ns).
    pub center: f64,
    /// Shape parameter, 1 < q < 2.
    pub q: f64,
    /// Full width at half maximum d (rad/ns).
    pub fwhm: f64,
    /// Width parameter Δ (rad/ns), derived from `fwhm` and `q`.
    pub width: f64,
    /// Normalization C (ns): the bracketed line shape times C integrates to 1.
    pub norm: f64,
}

impl QGaussianSpectrum {
    /// Coupling zero is allowed (it describes an absent ensemble); every
    /// other parameter must be strictly positive.
    pub fn new(coupling: f64, center: f64, q: f64, fwhm: f64) -> Result<Self> {
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::invalid("Omega", format!("must be ≥ 0, got {coupling}")));
        }
        if !(center > 0.0 && center.is_finite()) {
            return Err(Error::invalid("omega_s", format!("must be > 0, got {center}")));
        }
        if !(q > 1.0 && q < 2.0) {
            return Err(Error::invalid(
                "q",
                format!("must lie in the open interval (1, 2), got {q}"),
            ));
        }
        if !(fwhm > 0.0 && fwhm.is_finite()) {
            return Err(Error::invalid("d", format!("must be > 0, got {fwhm}")));
        }
        let width = Self::width_from_fwhm(q, fwhm);
        let norm = 1.0 / Self::line_integral(q, width);
        Ok(Self {
            coupling,
            center,
            q,
            fwhm,
            width,
            norm,
        })
    }

    /// Δ from the FWHM: inverts `d = 2Δ·sqrt((2^q − 2)/(2q − 2))`.
    pub fn width_from_fwhm(q: f64, fwhm: f64) -> f64 {
        fwhm / (2.0 * ((2f64.powf(q) - 2.0) / (2.0 * q - 2.0)).sqrt())
    }

    pub fn fwhm_from_width(q: f64, width: f64) -> f64 {
        2.0 * width * ((2f64.powf(q) - 2.0) / (2.0 * q - 2.0)).sqrt()
    }

    /// ∫ [1 + (q−1)x²/Δ²]^(−1/(q−1)) dx over the real line.
    fn line_integral(q: f64, width: f64) -> f64 {
        let m = 1.0 / (q - 1.0);
        width * (PI / (q - 1.0)).sqrt() * libm::tgamma(m - 0.5) / libm::tgamma(m)
    }

    /// Unnormalized bracket `[1 + (q−1)x²/Δ²]^(−1/(q−1))` at offset x = ω − ω_s.
    pub fn bracket(&self, offset: f64) -> f64 {
        let s = offset / self.width;
        (1.0 + (self.q - 1.0) * s * s).powf(-1.0 / (self.q - 1.0))
    }

    /// Peak value `J_s(ω_s) = 2πΩ²C`.
    pub fn peak(&self) -> f64 {
        2.0 * PI * self.coupling * self.coupling * self.norm
    }

    /// `J_s` at offset x = ω − ω_s.
    pub fn density_at_offset(&self, offset: f64) -> f64 {
        self.peak() * self.bracket(offset)
    }

    pub fn density(&self, omega: f64) -> f64 {
        self.density_at_offset(omega - self.center)
    }
}

/// Spin ensemble + flat leakage at an initial temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralEnvironment {
    pub spin: QGaussianSpectrum,
    /// Leakage decay constant κ (rad/ns); the flat spectrum is 2κ.
    pub kappa: f64,
    /// Initial temperature T₀ (K).
    pub temperature: f64,
    /// k_B·T₀/ħ (rad/ns).
    pub thermal_scale: f64,
    pub cut_low: f64,
    pub cut_high: f64,
    /// Include the leakage channel in the thermal kernel as a local
    /// (Markovian) term weighted by the occupation at the frame frequency.
    pub thermal_leakage: bool,
}

impl SpectralEnvironment {
    /// Environment with the default window ω_s ± 50·d, clipped at ω = 0.
    pub fn new(spin: QGaussianSpectrum, kappa: f64, temperature: f64) -> Result<Self> {
        let half = DEFAULT_WINDOW_FWHMS * spin.fwhm;
        let low = (spin.center - half).max(0.0);
        let high = spin.center + half;
        Self::with_cutoffs(spin, kappa, temperature, low, high)
    }

    pub fn with_cutoffs(
        spin: QGaussianSpectrum,
        kappa: f64,
        temperature: f64,
        cut_low: f64,
        cut_high: f64,
    ) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("kappa", format!("must be ≥ 0, got {kappa}")));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::invalid("T0", format!("must be ≥ 0, got {temperature}")));
        }
        let five = 5.0 * spin.fwhm;
        if !(cut_low >= 0.0
            && cut_low < spin.center - five
            && spin.center + five < cut_high
            && cut_high.is_finite())
        {
            return Err(Error::invalid(
                "omega_cut",
                format!(
                    "need 0 ≤ low < ω_s − 5d < ω_s + 5d < high, got [{cut_low}, {cut_high}] for ω_s = {}, d = {}",
                    spin.center, spin.fwhm
                ),
            ));
        }
        Ok(Self {
            spin,
            kappa,
            temperature,
            thermal_scale: units::thermal_scale(temperature),
            cut_low,
            cut_high,
            thermal_leakage: false,
        })
    }

    pub fn with_thermal_leakage(mut self, on: bool) -> Self {
        self.thermal_leakage = on;
        self
    }

    /// Total spectral density `J(ω) = J_s(ω) + 2κ` for ω > 0.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        self.spin.density(omega) + 2.0 * self.kappa
    }
}

/// Bose–Einstein occupation `1/(exp(ω/θ) − 1)` with θ = k_B·T/ħ.
/// Zero temperature (θ = 0) gives 0.
pub fn bose_occupation(omega: f64, thermal_scale: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid(
            "omega",
            format!("Bose occupation diverges for ω ≤ 0 (got {omega})"),
        ));
    }
    if thermal_scale < 0.0 {
        return Err(Error::invalid("thermal_scale", "must be ≥ 0"));
    }
    if thermal_scale == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (omega / thermal_scale).exp_m1())
}

/// Quadrature controls for [`build_kernels_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelQuadrature {
    pub nodes_per_panel: usize,
    /// Upper bound on the phase (ω-offset × max lag) swept across one panel.
    pub max_phase_per_panel: f64,
    /// Minimum panels per width parameter Δ of the line shape.
    pub panels_per_width: f64,
    /// Panel refinement factor (1 = default; 2 halves the panel width).
    pub refinement: usize,
    /// Tolerance for the panel-halving self-check, relative to max |ḡ|.
    /// `None` skips the check.
    pub tolerance: Option<f64>,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self {
            nodes_per_panel: 10,
            max_phase_per_panel: 4.0,
            panels_per_width: 4.0,
            refinement: 1,
            tolerance: Some(1e-8),
        }
    }
}

/// Memory kernels sampled at lags `k·dt`, in the frame rotating at
/// `frame_freq`: `ḡ(τ) = ∫ dω/2π J_s(ω) e^{−i(ω − frame)τ}` and the same with
/// the Bose occupation as an extra weight for the thermal kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub dt: f64,
    pub frame_freq: f64,
    pub dissipation: Vec<C64>,
    pub thermal: Vec<C64>,
    /// Local leakage damping rate κ.
    pub kappa_local: f64,
    /// Weight of the local thermal kernel `2κ·n̄(frame)·δ(τ)` (0 unless the
    /// environment opts in to thermal leakage).
    pub thermal_local: f64,
}

impl KernelTable {
    pub fn n_steps(&self) -> usize {
        self.dissipation.len()
    }

    /// CSV dump with columns `lag_ns, re_g, im_g, re_gt, im_gt`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::output::CsvWriter::create(path)?;
        w.header(&["lag_ns", "re_g", "im_g", "re_gt", "im_gt"])?;
        for (k, (g, gt)) in self.dissipation.iter().zip(&self.thermal).enumerate() {
            w.row(&[k as f64 * self.dt, g.re, g.im, gt.re, gt.im])?;
        }
        w.finish()
    }
}

/// Quadrature nodes (as offsets from ω_s) and weights for the window.
#[derive(Debug, Clone)]
struct FrequencyNodes {
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

fn frequency_nodes(env: &SpectralEnvironment, panel: f64, order: usize) -> FrequencyNodes {
    let center = env.spin.center;
    let mut lo = env.cut_low - center;
    let hi = env.cut_high - center;
    // Keep a symmetric window bitwise symmetric so that the imaginary part of
    // ḡ cancels for a resonant frame.
    if (lo + hi).abs() <= 1e-12 * hi.abs() {
        lo = -hi;
    }
    let rule = GaussLegendre::new(order);
    let k_lo = (lo / panel).floor() as i64;
    let k_hi = (hi / panel).ceil() as i64;
    let mut offsets = Vec::with_capacity(((k_hi - k_lo) as usize) * order);
    let mut weights = Vec::with_capacity(offsets.capacity());
    for k in k_lo..k_hi {
        let a = (k as f64 * panel).max(lo);
        let b = ((k + 1) as f64 * panel).min(hi);
        if b <= a {
            continue;
        }
        // Interior panels use exact midpoints so mirrored panels mirror exactly.
        let (mid, half) = if a == k as f64 * panel && b == (k + 1) as f64 * panel {
            ((k as f64 + 0.5) * panel, 0.5 * panel)
        } else {
            (0.5 * (a + b), 0.5 * (b - a))
        };
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            offsets.push(mid + half * x);
            weights.push(half * w);
        }
    }
    FrequencyNodes { offsets, weights }
}

/// Build kernels with default quadrature controls.
pub fn build_kernels(
    env: &SpectralEnvironment,
    dt: f64,
    n_steps: usize,
    frame_freq: f64,
) -> Result<KernelTable> {
    build_kernels_with(env, dt, n_steps, frame_freq, &KernelQuadrature::default())
}

pub fn build_kernels_with(
    env: &SpectralEnvironment,
    dt: f64,
    n_steps: usize,
    frame_freq: f64,
    quad: &KernelQuadrature,
) -> Result<KernelTable> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(frame_freq > 0.0 && frame_freq.is_finite()) {
        return Err(Error::invalid("frame_freq", format!("must be > 0, got {frame_freq}")));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps", "must be ≥ 1"));
    }
    let thermal_local = if env.thermal_leakage && env.thermal_scale > 0.0 {
        2.0 * env.kappa * bose_occupation(frame_freq, env.thermal_scale)?
    } else {
        0.0
    };
    let zero = C64::new(0.0, 0.0);
    if env.spin.coupling == 0.0 {
        return Ok(KernelTable {
            dt,
            frame_freq,
            dissipation: vec![zero; n_steps],
            thermal: vec![zero; n_steps],
            kappa_local: env.kappa,
            thermal_local,
        });
    }

    let panel = panel_width(env, dt, n_steps, quad);
    let nodes = frequency_nodes(env, panel, quad.nodes_per_panel);
    let (dissipation, thermal) = sample_kernels(env, &nodes, dt, frame_freq, LagSet::range(n_steps), true);

    if let Some(tol) = quad.tolerance {
        // Re-evaluate a subset of lags with panels halved.
        let fine = frequency_nodes(env, 0.5 * panel, quad.nodes_per_panel);
        let scale = dissipation.iter().map(|g| g.norm()).fold(0.0, f64::max);
        let stride = 16;
        let mut lags = LagSet {
            start: 0,
            stride,
            count: n_steps.div_ceil(stride),
        };
        let (coarse_check, _) = sample_kernels(env, &fine, dt, frame_freq, lags, false);
        let mut checks: Vec<(usize, f64)> = coarse_check
            .iter()
            .enumerate()
            .map(|(i, g)| (i * stride, (g - dissipation[i * stride]).norm() / scale))
            .collect();
        if (n_steps - 1) % stride != 0 {
            lags = LagSet {
                start: n_steps - 1,
                stride: 1,
                count: 1,
            };
            let (last, _) = sample_kernels(env, &fine, dt, frame_freq, lags, false);
            checks.push((n_steps - 1, (last[0] - dissipation[n_steps - 1]).norm() / scale));
        }
        if let Some(&(lag, change)) = checks.iter().find(|(_, c)| *c > tol) {
            return Err(Error::Quadrature {
                lag,
                change,
                tolerance: tol,
            });
        }
    }

    Ok(KernelTable {
        dt,
        frame_freq,
        dissipation,
        thermal,
        kappa_local: env.kappa,
        thermal_local,
    })
}

fn panel_width(env: &SpectralEnvironment, dt: f64, n_steps: usize, quad: &KernelQuadrature) -> f64 {
    let max_lag = (n_steps.max(2) - 1) as f64 * dt;
    let by_shape = env.spin.width / quad.panels_per_width;
    let by_phase = quad.max_phase_per_panel / max_lag;
    by_shape.min(by_phase) / quad.refinement.max(1) as f64
}

/// Lags are processed in fixed-size chunks: each chunk seeds its phasors with
/// exact exponentials and advances them by multiplication. The chunking does
/// not depend on the thread count, so the output is bitwise reproducible.
const LAG_CHUNK: usize = 128;

/// Lags `start + i·stride` for `i < count`.
#[derive(Debug, Clone, Copy)]
struct LagSet {
    start: usize,
    stride: usize,
    count: usize,
}

impl LagSet {
    fn range(n: usize) -> Self {
        Self {
            start: 0,
            stride: 1,
            count: n,
        }
    }
}

fn sample_kernels(
    env: &SpectralEnvironment,
    nodes: &FrequencyNodes,
    dt: f64,
    frame_freq: f64,
    lags: LagSet,
    with_thermal: bool,
) -> (Vec<C64>, Vec<C64>) {
    let center = env.spin.center;
    let shift = center - frame_freq;
    let n = nodes.offsets.len();
    let mut wg = Vec::with_capacity(n);
    let mut wt = Vec::with_capacity(n);
    let mut step = Vec::with_capacity(n);
    let thermal_on = with_thermal && env.thermal_scale > 0.0;
    for (&x, &w) in nodes.offsets.iter().zip(&nodes.weights) {
        let j = env.spin.density_at_offset(x) * w / (2.0 * PI);
        wg.push(j);
        let occ = if thermal_on {
            bose_occupation(center + x, env.thermal_scale).unwrap_or(0.0)
        } else {
            0.0
        };
        wt.push(j * occ);
        let theta = (x + shift) * dt * lags.stride as f64;
        step.push(C64::new(theta.cos(), -theta.sin()));
    }

    let starts: Vec<usize> = (0..lags.count).step_by(LAG_CHUNK).collect();
    let chunks: Vec<Vec<(C64, C64)>> = starts
        .par_iter()
        .map(|&i0| {
            let i1 = (i0 + LAG_CHUNK).min(lags.count);
            let k0 = lags.start + i0 * lags.stride;
            let mut phasor: Vec<C64> = nodes
                .offsets
                .iter()
                .map(|&x| {
                    let theta = (x + shift) * dt * k0 as f64;
                    C64::new(theta.cos(), -theta.sin())
                })
                .collect();
            let mut out = Vec::with_capacity(i1 - i0);
            for _ in i0..i1 {
                let mut g = C64::new(0.0, 0.0);
                let mut gt = C64::new(0.0, 0.0);
                for i in 0..n {
                    let p = phasor[i];
                    g += p * wg[i];
                    if thermal_on {
                        gt += p * wt[i];
                    }
                    phasor[i] = p * step[i];
                }
                out.push((g, gt));
            }
            out
        })
        .collect();
    chunks.into_iter().flatten().unzip()
}
