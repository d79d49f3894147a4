use cavity_thermo::scenario::{self, Scenario};
use cavity_thermo::spectral::bose_occupation;
use cavity_thermo::units;
use serde_json::{json, Value};

fn scenario(preset: &str, over: Value) -> Scenario {
    scenario::scenario_from_document(&over, Some(preset)).unwrap()
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let s = scenario(
        "fig6",
        json!({"grid": {"horizon_ns": 120}, "drive": {"t_s": 80}, "outputs": {"kernels": "kernels.csv"}}),
    );
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in [1, 3] {
        let out = dir.path().join(format!("t{threads}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| scenario::run(&s, &out)).unwrap();
        runs.push(files(&out));
    }
    assert_eq!(runs[0].len(), 4);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn manifest_reproduces_the_run() {
    let s = scenario("fig4", json!({"grid": {"horizon_ns": 80}}));
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    scenario::run(&s, &a).unwrap();
    let m: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for key in ["version", "scenario", "resolved", "constants", "environment", "grid", "drive", "diagnostics", "files"] {
        assert!(!m[key].is_null(), "manifest lacks {key}");
    }
    assert_eq!(m["constants"]["kb_over_hbar_rad_per_ns_per_k"], units::KB_OVER_HBAR);

    let again = scenario::scenario_from_value(m["scenario"].clone()).unwrap();
    let b = dir.path().join("b");
    scenario::run(&again, &b).unwrap();
    assert_eq!(files(&a), files(&b));
}

#[test]
fn steady_frequency_is_resolved_and_recorded() {
    let s = scenario("fig8", json!({"grid": {"horizon_ns": 200}, "drive": {"t_s": 150}}));
    let r = scenario::execute(&s).unwrap();
    let w = r.omega_r_steady.unwrap();
    // detuned spins pull the cavity frequency, but only slightly
    assert!(w != r.resolved.omega_c);
    assert!((w - r.resolved.omega_c).abs() / r.resolved.omega_c < 1e-2);
    assert_eq!(r.drive.frequency, w);
    let m = scenario::manifest(&s, &r, &[]);
    assert_eq!(m["omega_r_steady"], w);
}

#[test]
fn zero_temperature_has_no_fluctuation_current() {
    let s = scenario("fig3", json!({"grid": {"horizon_ns": 60}}));
    let dir = tempfile::tempdir().unwrap();
    let pts = scenario::sweep(&s, "T0", &[json!(0.0), json!(0.1)], dir.path()).unwrap();
    assert!(pts.iter().all(|p| p.status == "ok"));

    let col = |point: &str, name: &str| -> Vec<f64> {
        let text = std::fs::read_to_string(dir.path().join(point).join("thermo.csv")).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let i = header.iter().position(|h| *h == name).unwrap();
        lines.skip(1).map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
    };
    assert!(col("point_000", "I_h_F").iter().all(|x| *x == 0.0));
    assert!(col("point_001", "I_h_F").iter().any(|x| *x > 0.0));
}

#[test]
fn driving_the_weak_cavity_pumps_more_energy() {
    let over = json!({"grid": {"horizon_ns": 300}, "drive": {"t_s": 250}});
    let strong = scenario::execute(&scenario("fig6", over.clone())).unwrap();
    let weak = scenario::execute(&scenario("fig7", over)).unwrap();
    let late = |r: &scenario::RunResult| {
        let k = r.thermo.grid.aligned_index(240.0).unwrap() as usize;
        r.thermo.p_w_d[k]
    };
    assert!(late(&weak) > late(&strong));
    assert!(weak.thermo.e_r.iter().cloned().fold(0.0, f64::max) > strong.thermo.e_r.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn leakage_at_the_bath_temperature_thermalizes_a_lone_cavity() {
    // Ω → 0: only the flat leakage channel remains, and with thermal leakage
    // the occupation must relax to n̄(ω_c) as 1 − e^{−2κt}.
    let s = scenario(
        "fig3",
        json!({"physical": {"Omega": 0.0, "thermal_leakage": true}, "initial_state": {"kind": "vacuum"}, "grid": {"horizon_ns": 400}}),
    );
    let r = scenario::execute(&s).unwrap();
    let nbar = bose_occupation(r.resolved.omega_c, r.resolved.thermal_scale).unwrap();
    let kappa = r.resolved.kappa;
    for (k, t) in r.solution.grid.times().enumerate().step_by(40) {
        let expect = nbar * (1.0 - (-2.0 * kappa * t).exp());
        assert!((r.solution.v[k] - expect).abs() < 1e-4 * nbar, "t = {t}: {} vs {expect}", r.solution.v[k]);
    }
}
