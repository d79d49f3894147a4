//! Scenario configuration, presets, the run pipeline and parameter sweeps.
//!
//! A scenario is one JSON document. Angular frequencies (`Omega`, `kappa`,
//! `d`) are given in MHz (10⁶ rad/s) and may be written as `"17.2pi"`; the
//! cavity frequency `omega_c` is an ordinary frequency in GHz. Drive
//! amplitudes `f_m` are in units of ħω_c. Everything is converted to rad/ns
//! with ħ = k_B = 1 before the solver sees it.
//!
//! Presets are partial documents merged over [`defaults`]; a config file is
//! merged over the preset.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use crate::coefficients::{compute_coefficients, MasterEqCoefficients};
use crate::greens::{solve_with_kernels, DriveProtocol, GreensSolution, StepHalvingReport, TimeGrid};
use crate::oracle::{self, OracleComparison};
use crate::output::write_json;
use crate::spectral::{build_kernels_with, KernelQuadrature, KernelTable, QGaussianSpectrum, SpectralEnvironment};
use crate::thermo::{compute_thermo, BalanceSummary, MomentTrace, ThermoTrace};
use crate::{units, Error, Result, C64};

pub const PRESET_NAMES: [&str; 8] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];
pub const SWEEP_PARAMS: [&str; 5] = ["Omega", "omega_s_ratio", "T0", "omega_d", "f_m"];
/// Grid points on either side of a drive edge left out of the balance summary.
pub const BALANCE_HALO: usize = 2;
/// Fraction of the horizon averaged for `omega_r_steady`.
pub const STEADY_FRACTION: f64 = 0.2;
const MAX_STEPS: usize = 400_000;

/// Number or `"<x>pi"` / `"<x>*pi"` / `"<x>π"`.
fn pi_number<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(de)? {
        Raw::Num(x) => Ok(x),
        Raw::Text(s) => parse_pi(&s).map_err(serde::de::Error::custom),
    }
}

/// Parse `"17.2pi"`-style numbers.
pub fn parse_pi(text: &str) -> std::result::Result<f64, String> {
    let s = text.trim();
    let (num, factor) = if let Some(p) = s.strip_suffix("pi").or_else(|| s.strip_suffix('π')) {
        (p.trim().trim_end_matches('*').trim(), std::f64::consts::PI)
    } else {
        (s, 1.0)
    };
    let x: f64 = if num.is_empty() {
        1.0
    } else {
        num.parse().map_err(|_| format!("cannot parse {text:?} as a number or multiple of pi"))?
    };
    Ok(x * factor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physical {
    /// Cavity frequency ω_c/2π in GHz.
    pub omega_c: f64,
    pub omega_s_ratio: f64,
    /// Coupling Ω in MHz (angular).
    #[serde(rename = "Omega", deserialize_with = "pi_number")]
    pub coupling: f64,
    /// Leakage κ in MHz (angular).
    #[serde(deserialize_with = "pi_number")]
    pub kappa: f64,
    /// Initial temperature in K.
    #[serde(rename = "T0")]
    pub temperature: f64,
    pub q: f64,
    /// FWHM d in MHz (angular).
    #[serde(deserialize_with = "pi_number")]
    pub d: f64,
    /// Let the leakage channel carry thermal noise (local approximation).
    #[serde(default)]
    pub thermal_leakage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveKindSpec {
    Off,
    Tone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedFrequency {
    OmegaC,
    OmegaRSteady,
}

/// Drive frequency: the cavity frequency, the steady renormalized frequency
/// of an undriven pre-run, or an explicit value in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriveFrequency {
    Named(NamedFrequency),
    Explicit(f64),
}

impl Default for DriveFrequency {
    fn default() -> Self {
        DriveFrequency::Named(NamedFrequency::OmegaC)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub kind: DriveKindSpec,
    /// Amplitude in units of ħω_c.
    #[serde(default)]
    pub f_m: f64,
    #[serde(default)]
    pub omega_d: DriveFrequency,
    #[serde(default)]
    pub t_on: f64,
    /// Turn-off time (ns); `null` keeps the drive on to the horizon.
    #[serde(default)]
    pub t_s: Option<f64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Vacuum,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub kind: StateKind,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dt_ns: f64,
    pub horizon_ns: f64,
}

fn default_quadrature() -> Option<f64> {
    Some(1e-8)
}

fn default_u_floor() -> f64 {
    crate::coefficients::DEFAULT_U_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Kernel panel-halving tolerance; `null` disables the check.
    #[serde(default = "default_quadrature")]
    pub quadrature: Option<f64>,
    /// Step-halving tolerance; the change is always reported, and enforced
    /// only when set.
    #[serde(default)]
    pub step_halving: Option<f64>,
    #[serde(default = "default_u_floor")]
    pub u_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            quadrature: default_quadrature(),
            step_halving: None,
            u_floor: default_u_floor(),
        }
    }
}

/// Output file names relative to the run directory; `null` skips a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub greens: Option<String>,
    pub coefficients: Option<String>,
    pub thermo: Option<String>,
    #[serde(default)]
    pub kernels: Option<String>,
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    /// Preset this document was merged over (informational once loaded).
    #[serde(default)]
    pub preset: Option<String>,
    pub physical: Physical,
    pub drive: DriveSpec,
    pub initial_state: InitialState,
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub outputs: Outputs,
}

/// Everything in internal units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub omega_c: f64,
    pub omega_s: f64,
    pub coupling: f64,
    pub kappa: f64,
    pub fwhm: f64,
    pub q: f64,
    pub temperature: f64,
    pub thermal_scale: f64,
    pub thermal_leakage: bool,
    pub drive: Option<ResolvedDrive>,
    pub z0: C64,
    pub dt: f64,
    pub horizon: f64,
    pub quadrature: KernelQuadrature,
    pub step_halving: Option<f64>,
    pub u_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedDrive {
    /// |f|/ħ in rad/ns.
    pub amplitude: f64,
    pub frequency: DriveFrequency,
    pub t_on: f64,
    pub t_off: f64,
    pub phase: f64,
}

fn check_range(field: &str, x: f64, lo: f64, hi: f64, unit: &str) -> Result<()> {
    if !(x.is_finite() && x >= lo && x <= hi) {
        return Err(Error::invalid(
            field,
            format!("{x} outside the accepted range [{lo}, {hi}] {unit}"),
        ));
    }
    Ok(())
}

impl Scenario {
    /// Validate and convert to internal units.
    pub fn resolve(&self) -> Result<Resolved> {
        let p = &self.physical;
        // Ranges are wide but catch GHz/MHz mix-ups.
        check_range("physical.omega_c", p.omega_c, 1e-3, 1e3, "GHz")?;
        check_range("physical.omega_s_ratio", p.omega_s_ratio, 0.5, 2.0, "")?;
        check_range("physical.T0", p.temperature, 0.0, 1e3, "K")?;
        if !(p.q > 1.0 && p.q < 2.0) {
            return Err(Error::invalid("physical.q", format!("q must lie in (1, 2), got {}", p.q)));
        }
        let omega_c = 2.0 * std::f64::consts::PI * p.omega_c;
        let omega_c_mhz = omega_c * 1e3;
        check_range("physical.Omega", p.coupling, 0.0, 0.1 * omega_c_mhz, "MHz")?;
        check_range("physical.kappa", p.kappa, 0.0, 0.1 * omega_c_mhz, "MHz")?;
        if !(p.d > 0.0) {
            return Err(Error::invalid("physical.d", format!("must be > 0, got {}", p.d)));
        }
        check_range("physical.d", p.d, 0.0, 0.1 * omega_c_mhz, "MHz")?;

        let g = &self.grid;
        check_range("grid.dt_ns", g.dt_ns, 1e-6, 10.0, "ns")?;
        if !(g.horizon_ns > g.dt_ns && g.horizon_ns.is_finite()) {
            return Err(Error::invalid("grid.horizon_ns", format!("must exceed dt, got {}", g.horizon_ns)));
        }
        if g.horizon_ns / g.dt_ns > MAX_STEPS as f64 {
            return Err(Error::invalid(
                "grid",
                format!("{} steps exceed the limit of {MAX_STEPS}", (g.horizon_ns / g.dt_ns).round()),
            ));
        }

        let d = &self.drive;
        let drive = match d.kind {
            DriveKindSpec::Off => None,
            DriveKindSpec::Tone => {
                check_range("drive.f_m", d.f_m, 0.0, 10.0, "ħω_c")?;
                if let DriveFrequency::Explicit(w) = d.omega_d {
                    if !(w > 0.0 && w.is_finite()) {
                        return Err(Error::invalid("drive.omega_d", format!("must be > 0 rad/ns, got {w}")));
                    }
                }
                let t_off = d.t_s.unwrap_or(g.horizon_ns);
                if !(d.t_on >= 0.0 && d.t_on < t_off) {
                    return Err(Error::invalid(
                        "drive.t_on",
                        format!("need 0 ≤ t_on < t_s, got t_on = {}, t_s = {t_off}", d.t_on),
                    ));
                }
                if t_off > g.horizon_ns {
                    return Err(Error::invalid(
                        "drive.t_s",
                        format!("t_s = {t_off} ns exceeds the horizon {} ns", g.horizon_ns),
                    ));
                }
                Some(ResolvedDrive {
                    amplitude: d.f_m * omega_c,
                    frequency: d.omega_d,
                    t_on: d.t_on,
                    t_off,
                    phase: d.phase,
                })
            }
        };

        let s = &self.initial_state;
        let z0 = match s.kind {
            StateKind::Vacuum => C64::new(0.0, 0.0),
            StateKind::Coherent => C64::new(s.re, s.im),
        };
        if !(z0.re.is_finite() && z0.im.is_finite()) {
            return Err(Error::invalid("initial_state", "z0 must be finite"));
        }

        let t = &self.tolerances;
        if let Some(tol) = t.quadrature {
            check_range("tolerances.quadrature", tol, 1e-15, 1.0, "")?;
        }
        if let Some(tol) = t.step_halving {
            check_range("tolerances.step_halving", tol, 0.0, 1.0, "")?;
        }
        check_range("tolerances.u_floor", t.u_floor, 0.0, 0.5, "")?;

        let resolved = Resolved {
            omega_c,
            omega_s: p.omega_s_ratio * omega_c,
            coupling: units::mhz(p.coupling),
            kappa: units::mhz(p.kappa),
            fwhm: units::mhz(p.d),
            q: p.q,
            temperature: p.temperature,
            thermal_scale: units::thermal_scale(p.temperature),
            thermal_leakage: p.thermal_leakage,
            drive,
            z0,
            dt: g.dt_ns,
            horizon: g.horizon_ns,
            quadrature: KernelQuadrature {
                tolerance: t.quadrature,
                ..KernelQuadrature::default()
            },
            step_halving: t.step_halving,
            u_floor: t.u_floor,
        };
        // Surface spectral and grid errors at load time.
        resolved.environment()?;
        let grid = resolved.grid()?;
        if let Some(dr) = &resolved.drive {
            resolved.drive_protocol(dr.frequency_value(omega_c, omega_c))?.grid_support(&grid)?;
        }
        Ok(resolved)
    }
}

impl ResolvedDrive {
    /// Drive frequency with `omega_r_steady` replaced by `steady`.
    pub fn frequency_value(&self, omega_c: f64, steady: f64) -> f64 {
        match self.frequency {
            DriveFrequency::Named(NamedFrequency::OmegaC) => omega_c,
            DriveFrequency::Named(NamedFrequency::OmegaRSteady) => steady,
            DriveFrequency::Explicit(w) => w,
        }
    }
}

impl Resolved {
    pub fn spectrum(&self) -> Result<QGaussianSpectrum> {
        QGaussianSpectrum::new(self.coupling, self.omega_s, self.q, self.fwhm)
    }

    pub fn environment(&self) -> Result<SpectralEnvironment> {
        Ok(SpectralEnvironment::new(self.spectrum()?, self.kappa, self.temperature)?
            .with_thermal_leakage(self.thermal_leakage))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_horizon(self.dt, self.horizon)
    }

    pub fn drive_protocol(&self, frequency: f64) -> Result<DriveProtocol> {
        match &self.drive {
            None => Ok(DriveProtocol::off()),
            Some(d) => DriveProtocol::tone(d.amplitude, frequency, d.t_on, d.t_off, d.phase),
        }
    }
}

/// Base document every preset and config is merged over.
pub fn defaults() -> Value {
    json!({
        "name": null,
        "preset": null,
        "physical": {
            "omega_c": 2.69,
            "omega_s_ratio": 1.0,
            "Omega": "17.2pi",
            "kappa": "0.8pi",
            "T0": 0.1,
            "q": 1.39,
            "d": "18.8pi",
            "thermal_leakage": false
        },
        "drive": { "kind": "off", "f_m": 0.0, "omega_d": "omega_c", "t_on": 0.0, "t_s": null, "phase": 0.0 },
        "initial_state": { "kind": "vacuum", "re": 0.0, "im": 0.0 },
        "grid": { "dt_ns": 0.25, "horizon_ns": 500.0 },
        "tolerances": { "quadrature": 1e-8, "step_halving": null, "u_floor": 1e-8 },
        "outputs": {
            "greens": "greens.csv",
            "coefficients": "coefficients.csv",
            "thermo": "thermo.csv",
            "kernels": null,
            "manifest": "manifest.json"
        }
    })
}

/// Partial document for a named preset.
pub fn preset(name: &str) -> Result<Value> {
    let undriven = |omega: &str, ratio: f64| {
        json!({
            "physical": { "Omega": omega, "omega_s_ratio": ratio },
            "initial_state": { "kind": "coherent", "re": 10.0, "im": 0.0 },
            "grid": { "horizon_ns": 500.0 }
        })
    };
    let driven = |omega: &str, ratio: f64, omega_d: &str| {
        json!({
            "physical": { "Omega": omega, "omega_s_ratio": ratio },
            "drive": { "kind": "tone", "f_m": 0.1, "omega_d": omega_d, "t_on": 0.0, "t_s": 900.0 },
            "initial_state": { "kind": "vacuum" },
            "grid": { "horizon_ns": 1200.0 }
        })
    };
    let mut doc = match name {
        "fig2" => undriven("17.2pi", 1.0),
        "fig3" => undriven("1.72pi", 1.0),
        "fig4" => undriven("17.2pi", 0.998),
        "fig5" => undriven("1.72pi", 0.998),
        "fig6" => driven("17.2pi", 0.998, "omega_c"),
        "fig7" => driven("1.72pi", 0.998, "omega_c"),
        "fig8" => driven("17.2pi", 0.998, "omega_r_steady"),
        "fig9" => driven("17.2pi", 1.0, "omega_c"),
        other => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", ")),
            ))
        }
    };
    doc["name"] = json!(name);
    doc["preset"] = json!(name);
    Ok(doc)
}

/// Recursive merge: objects merge key by key, anything else is replaced.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Deserialize a full document, reporting schema errors with their path.
pub fn scenario_from_value(doc: Value) -> Result<Scenario> {
    serde_path_to_error::deserialize::<_, Scenario>(doc).map_err(|e| {
        let path = e.path().to_string();
        Error::invalid(if path == "." { "scenario".into() } else { path }, e.into_inner().to_string())
    })
}

/// Merge defaults, the preset (argument, else the document's `"preset"`
/// key) and `doc`, then validate.
pub fn scenario_from_document(doc: &Value, preset_name: Option<&str>) -> Result<Scenario> {
    if !doc.is_object() {
        return Err(Error::invalid("scenario", "config must be a JSON object"));
    }
    let name = preset_name.map(str::to_owned).or_else(|| doc.get("preset").and_then(Value::as_str).map(str::to_owned));
    let mut merged = defaults();
    if let Some(n) = &name {
        merge(&mut merged, &preset(n)?);
    }
    merge(&mut merged, doc);
    if let Some(n) = name {
        merged["preset"] = json!(n);
    }
    let s = scenario_from_value(merged)?;
    s.resolve()?;
    Ok(s)
}

pub fn load_scenario(path: &Path, preset_name: Option<&str>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
    scenario_from_document(&doc, preset_name)
}

pub fn preset_scenario(name: &str) -> Result<Scenario> {
    scenario_from_document(&json!({}), Some(name))
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub resolved: Resolved,
    pub environment: SpectralEnvironment,
    pub drive: DriveProtocol,
    /// Steady ω_r of the undriven pre-run, if the drive asked for it.
    pub omega_r_steady: Option<f64>,
    pub kernels: KernelTable,
    pub solution: GreensSolution,
    pub coefficients: MasterEqCoefficients,
    pub moments: MomentTrace,
    pub thermo: ThermoTrace,
    pub balance: BalanceSummary,
    /// Grid indices of drive edges excluded (± [`BALANCE_HALO`]) from the balance summary.
    pub drive_edges: Vec<usize>,
    pub step_halving: StepHalvingReport,
}

/// Mean of the valid ω_r samples over the final [`STEADY_FRACTION`] of the grid.
pub fn steady_frequency(coeffs: &MasterEqCoefficients) -> Result<f64> {
    let n = coeffs.grid.n_steps;
    let start = ((1.0 - STEADY_FRACTION) * (n - 1) as f64).floor() as usize;
    let vals: Vec<f64> = (start..n).filter(|&k| coeffs.valid[k]).map(|k| coeffs.omega_r[k]).collect();
    if vals.is_empty() {
        return Err(Error::Consistency {
            module: "scenarios_cli",
            index: start,
            detail: "no valid ω_r samples in the final part of the undriven run".into(),
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Run the pipeline without touching the filesystem.
pub fn execute(scenario: &Scenario) -> Result<RunResult> {
    let r = scenario.resolve()?;
    let env = r.environment()?;
    let grid = r.grid()?;
    let frame = r.omega_c;
    let kernels = build_kernels_with(&env, grid.dt, grid.n_steps, frame, &r.quadrature)?;

    let needs_steady = matches!(
        r.drive,
        Some(ResolvedDrive {
            frequency: DriveFrequency::Named(NamedFrequency::OmegaRSteady),
            ..
        })
    );
    let omega_r_steady = if needs_steady {
        let pre = solve_with_kernels(&kernels, &grid, &DriveProtocol::off())?;
        Some(steady_frequency(&compute_coefficients(&pre, &DriveProtocol::off(), r.u_floor)?)?)
    } else {
        None
    };
    let drive = match &r.drive {
        None => DriveProtocol::off(),
        Some(d) => r.drive_protocol(d.frequency_value(r.omega_c, omega_r_steady.unwrap_or(f64::NAN)))?,
    };

    let solution = solve_with_kernels(&kernels, &grid, &drive)?;
    let fine_grid = grid.refined();
    let fine_kernels = build_kernels_with(&env, fine_grid.dt, fine_grid.n_steps, frame, &r.quadrature)?;
    let fine = solve_with_kernels(&fine_kernels, &fine_grid, &drive)?;
    let step_halving = StepHalvingReport::compare(&solution, &fine);
    if let Some(tol) = r.step_halving {
        step_halving.check(tol)?;
    }

    let coefficients = compute_coefficients(&solution, &drive, r.u_floor)?;
    let moments = MomentTrace::from_solution(&solution, r.z0);
    let breaks = drive.breakpoints(&grid)?;
    let thermo = compute_thermo(&solution, &coefficients, &moments, r.omega_c, &breaks)?;
    let drive_edges = match drive.grid_support(&grid)? {
        Some((on, off)) => [(on > 0).then_some(on), (off + 1 < grid.n_steps).then_some(off)]
            .into_iter()
            .flatten()
            .collect(),
        None => Vec::new(),
    };
    let balance = BalanceSummary::of(&thermo, &drive_edges, BALANCE_HALO);
    Ok(RunResult {
        resolved: r,
        environment: env,
        drive,
        omega_r_steady,
        kernels,
        solution,
        coefficients,
        moments,
        thermo,
        balance,
        drive_edges,
        step_halving,
    })
}

/// Manifest describing a finished run; enough to reproduce it.
pub fn manifest(scenario: &Scenario, run: &RunResult, files: &[String]) -> Value {
    let min_u = run.solution.u.iter().map(|u| u.norm()).fold(f64::INFINITY, f64::min);
    let flagged = run.coefficients.valid.iter().filter(|v| !**v).count();
    let unusable = (0..run.coefficients.grid.n_steps).filter(|&k| !run.coefficients.usable(k)).count();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "resolved": run.resolved,
        "constants": { "kb_over_hbar_rad_per_ns_per_k": units::KB_OVER_HBAR },
        "frame_frequency": run.solution.frame_freq,
        "environment": run.environment,
        "grid": run.solution.grid,
        "drive": run.drive,
        "omega_r_steady": run.omega_r_steady,
        "diagnostics": {
            "step_halving": run.step_halving,
            "energy_balance": run.balance,
            "balance_excluded_edges": run.drive_edges,
            "min_abs_u": min_u,
            "flagged_points": flagged,
            "points_without_derivatives": unusable,
        },
        "files": files,
    })
}

fn write_outputs(scenario: &Scenario, run: &RunResult, out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let o = &scenario.outputs;
    let mut names = Vec::new();
    let mut target = |name: &Option<String>, written: &mut Vec<PathBuf>| {
        name.as_ref().map(|n| {
            let p = out.join(n);
            written.push(p.clone());
            names.push(n.clone());
            p
        })
    };
    if let Some(p) = target(&o.greens, written) {
        run.solution.write_csv(&p)?;
    }
    if let Some(p) = target(&o.coefficients, written) {
        run.coefficients.write_csv(&p)?;
    }
    if let Some(p) = target(&o.thermo, written) {
        run.thermo.write_csv(&p)?;
    }
    if let Some(p) = target(&o.kernels, written) {
        run.kernels.write_csv(&p)?;
    }
    if let Some(p) = target(&o.manifest, written) {
        let files = names.clone();
        write_json(&p, &manifest(scenario, run, &files))?;
    }
    Ok(())
}

/// Execute and write outputs into `out`. On failure nothing written by this
/// run is left behind.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunResult> {
    let result = execute(scenario)?;
    let mut written = Vec::new();
    if let Err(e) = write_outputs(scenario, &result, out, &mut written) {
        for p in written {
            let _ = std::fs::remove_file(p);
        }
        return Err(e);
    }
    Ok(result)
}

/// One point of a sweep as recorded in the index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub value: Value,
    pub dir: String,
    pub status: &'static str,
    pub error: Option<String>,
    /// 2 for validation errors, 3 for numerical failures.
    pub error_class: Option<u8>,
}

fn sweep_path(param: &str) -> Result<[&'static str; 2]> {
    Ok(match param {
        "Omega" => ["physical", "Omega"],
        "omega_s_ratio" => ["physical", "omega_s_ratio"],
        "T0" => ["physical", "T0"],
        "omega_d" => ["drive", "omega_d"],
        "f_m" => ["drive", "f_m"],
        other => {
            return Err(Error::invalid(
                "param",
                format!("cannot sweep {other:?}; expected one of {}", SWEEP_PARAMS.join(", ")),
            ))
        }
    })
}

/// Parse a command-line value: numbers stay numbers, anything else
/// (`"17.2pi"`, `"omega_c"`) is passed to the schema as a string.
pub fn sweep_value(text: &str) -> Value {
    match text.trim().parse::<f64>() {
        Ok(x) => json!(x),
        Err(_) => json!(text.trim()),
    }
}

/// Run `base` once per value of `param`, in parallel, each into
/// `out/point_NNN`. Failed points are recorded, not fatal. The index
/// (`out/index.json`) is written last via an atomic rename.
pub fn sweep(base: &Scenario, param: &str, values: &[Value], out: &Path) -> Result<Vec<SweepPoint>> {
    let path = sweep_path(param)?;
    if values.is_empty() {
        return Err(Error::invalid("values", "sweep needs at least one value"));
    }
    if path[0] == "drive" && base.drive.kind == DriveKindSpec::Off {
        return Err(Error::invalid("param", format!("{param} has no effect on an undriven scenario")));
    }
    base.resolve()?;
    let base_doc = serde_json::to_value(base)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let points: Vec<SweepPoint> = values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let dir = format!("point_{i:03}");
            let mut doc = base_doc.clone();
            doc[path[0]][path[1]] = v.clone();
            let outcome = scenario_from_value(doc).and_then(|s| {
                s.resolve()?;
                run(&s, &out.join(&dir))
            });
            let (status, error, class) = match outcome {
                Ok(_) => ("ok", None, None),
                Err(e) => ("failed", Some(e.to_string()), Some(if e.is_validation() { 2 } else { 3 })),
            };
            SweepPoint {
                index: i,
                value: v.clone(),
                dir,
                status,
                error,
                error_class: class,
            }
        })
        .collect();
    let index = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "param": param,
        "base": base,
        "points": points,
    });
    let tmp = out.join("index.json.tmp");
    write_json(&tmp, &index)?;
    let dest = out.join("index.json");
    std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    Ok(points)
}

/// Solver-versus-oracle deviations for `M` and `2M` modes over the same
/// window `t < t_rec(M)/2`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub modes: usize,
    pub window: (f64, f64),
    pub dt: f64,
    pub coarse: OracleComparison,
    pub doubled: OracleComparison,
    pub u_ratio: f64,
    pub v_ratio: f64,
    /// ω_j, ū, v traces of the M-mode oracle and the solver on the compared span.
    #[serde(skip)]
    pub traces: (oracle::OracleTraces, GreensSolution),
}

/// Compare the Volterra solver with M- and 2M-mode discretizations of the
/// scenario's spin spectrum. Leakage is dropped (κ = 0) and the solver uses
/// the oracle's window as its cutoffs, so both describe the same J.
pub fn oracle_report(scenario: &Scenario, modes: usize) -> Result<OracleReport> {
    let r = scenario.resolve()?;
    if modes < 2 {
        return Err(Error::invalid("modes", format!("need M ≥ 2, got {modes}")));
    }
    let spin = r.spectrum()?;
    let base = SpectralEnvironment::new(spin, 0.0, r.temperature)?;
    let window = oracle::default_window(&base);
    let env = SpectralEnvironment::with_cutoffs(spin, 0.0, r.temperature, window.0, window.1)?;
    let coarse_bath = oracle::discretize(&env, modes, window, false)?;
    let fine_bath = oracle::discretize(&env, 2 * modes, window, false)?;
    let limit = oracle::RECURRENCE_FRACTION * coarse_bath.recurrence_time();
    let horizon = r.horizon.min(limit - 0.5 * r.dt);
    let grid = TimeGrid::with_horizon(r.dt, horizon)?;
    let drive = match &r.drive {
        None => DriveProtocol::off(),
        Some(d) => match d.frequency {
            DriveFrequency::Named(NamedFrequency::OmegaRSteady) => {
                return Err(Error::invalid("drive.omega_d", "oracle comparison needs an explicit drive frequency"))
            }
            _ => {
                let t_off = d.t_off.min(grid.end());
                DriveProtocol::tone(d.amplitude, d.frequency_value(r.omega_c, r.omega_c), d.t_on, t_off, d.phase)?
            }
        },
    };
    let kernels = build_kernels_with(&env, grid.dt, grid.n_steps, r.omega_c, &r.quadrature)?;
    let sol = solve_with_kernels(&kernels, &grid, &drive)?;
    let coarse = oracle::compare(&coarse_bath, r.omega_c, &sol, &drive)?;
    let doubled = oracle::compare(&fine_bath, r.omega_c, &sol, &drive)?;
    let traces = oracle::propagate(&coarse_bath, r.omega_c, &grid, &drive, C64::new(0.0, 0.0))?;
    Ok(OracleReport {
        modes,
        window,
        dt: r.dt,
        u_ratio: coarse.u_deviation / doubled.u_deviation,
        v_ratio: coarse.v_deviation / doubled.v_deviation,
        coarse,
        doubled,
        traces: (traces, sol),
    })
}

/// Write `oracle_report.json` and `oracle_M.csv` (same columns as the
/// solver's debug dump) into `out`.
pub fn write_oracle_report(report: &OracleReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (tr, _) = &report.traces;
    let csv = out.join(format!("oracle_{}.csv", report.modes));
    let v_dot = crate::diff::derivative(&tr.v, tr.grid.dt, None, &[]).values;
    let mut w = crate::output::CsvWriter::create(&csv)?;
    w.header(&["t_ns", "re_u", "im_u", "re_y", "im_y", "v", "v_dot"])?;
    for k in 0..tr.grid.n_steps {
        w.row(&[
            tr.grid.time(k),
            tr.u[k].re,
            tr.u[k].im,
            tr.a_mean[k].re,
            tr.a_mean[k].im,
            tr.v[k],
            v_dot[k],
        ])?;
    }
    w.finish()?;
    write_json(&out.join("oracle_report.json"), &serde_json::to_value(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pi_multiples() {
        assert!((parse_pi("17.2pi").unwrap() - 17.2 * std::f64::consts::PI).abs() < 1e-12);
        assert!((parse_pi("0.8 * pi").unwrap() - 0.8 * std::f64::consts::PI).abs() < 1e-12);
        assert!((parse_pi("2π").unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(parse_pi("3.5").unwrap(), 3.5);
        assert!(parse_pi("abc").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"x": {"y": 1, "z": 2}, "w": 3});
        merge(&mut a, &json!({"x": {"y": 5}, "v": 4}));
        assert_eq!(a, json!({"x": {"y": 5, "z": 2}, "w": 3, "v": 4}));
    }

    #[test]
    fn every_preset_resolves() {
        for name in PRESET_NAMES {
            let s = preset_scenario(name).unwrap();
            s.resolve().unwrap();
        }
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let err = scenario_from_document(&json!({"physical": {"Omega": "lots"}}), None).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("physical.Omega"), "{err}");
        let err = scenario_from_document(&json!({"grid": {"dt": 0.1}}), None).unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
    }
}
