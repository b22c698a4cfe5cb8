use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

use urban_canyon::distributions::ModelParams;

fn canyonsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canyonsim"))
        .args(args)
        .output()
        .expect("run canyonsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    scenario: PathBuf,
    params: PathBuf,
}

impl Fixture {
    fn new(n_snapshots: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("scenario.json");
        let params = dir.path().join("params.json");
        let doc = json!({
            "routes": [{"centerline": [[-100, 0], [3000, 0]], "half_width_m": 10}],
            "canyons": [
                {"side": "left", "width_m": 15, "extent_m": [120, 160]},
                {"side": "left", "width_m": 35, "extent_m": [160, 200]},
                {"side": "right", "width_m": 20, "extent_m": [120, 160]},
                {"side": "right", "width_m": 40, "extent_m": [160, 200]}
            ],
            "tx": {"waypoints": [[0, 0]]},
            "rx": {"waypoints": [[150, 0], [2500, 0]], "speed_mps": 20},
            "snapshot_rate_hz": 20,
            "n_snapshots": n_snapshots,
            "seed": 3
        });
        std::fs::write(&scenario, doc.to_string()).unwrap();
        ModelParams::illustrative().save(&params).unwrap();
        Fixture { dir, scenario, params }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let mut args = vec![
            "simulate",
            "--scenario",
            s(&self.scenario),
            "--params",
            s(&self.params),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        canyonsim(&args)
    }
}

#[test]
fn help_documents_schemas_and_exit_codes() {
    let o = canyonsim(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in ["MPC log CSV", "Assignment CSV", "Scatterer CSV", "Lifecycle CSV", "Stats CSV", "CIR binary", "EXIT CODES"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn simulate_writes_every_output() {
    let f = Fixture::new(200);
    let o = f.simulate("sim", &["--trace", "--cir-csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["mpc_log.csv", "assigned_truth.csv", "stats.csv", "cir.bin", "cir.csv", "lifecycle.csv"] {
        assert!(f.path("sim").join(name).exists(), "{name}");
    }
    let stats = std::fs::read_to_string(f.path("sim/stats.csv")).unwrap();
    assert!(stats.starts_with("snapshot,rms_ds_s,aoa_spread,n_mpcs,region\n"));
    assert!(stats.lines().skip(1).all(|l| l.ends_with(",LosSameRoad")));
    assert_eq!(stats.lines().count(), 201);
    let trace = std::fs::read_to_string(f.path("sim/lifecycle.csv")).unwrap();
    assert!(trace.starts_with("snapshot,cluster_id,path_id,state,side,width_m\n"));
}

#[test]
fn seed_flag_controls_output() {
    let f = Fixture::new(100);
    for (out, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        assert!(f.simulate(out, &["--seed", seed, "--no-cir"]).status.success());
    }
    let read = |d: &str| std::fs::read(f.path(d).join("mpc_log.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn pipeline_closes_the_loop() {
    let f = Fixture::new(4000);
    assert!(f.simulate("sim", &["--no-cir"]).status.success());
    let o = canyonsim(&[
        "identify",
        "--log",
        s(&f.path("sim/mpc_log.csv")),
        "--scenario",
        s(&f.scenario),
        "--out",
        s(&f.path("id")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let assigned = std::fs::read_to_string(f.path("id/assignments.csv")).unwrap();
    assert!(assigned.starts_with("snapshot,power_db,delay_s,aoa_deg,eoa_deg,phase_rad,side,width_m,residual_s\n"));
    let log_rows = std::fs::read_to_string(f.path("sim/mpc_log.csv")).unwrap().lines().count();
    let scat_rows = std::fs::read_to_string(f.path("id/scatterers.csv")).unwrap().lines().count();
    assert_eq!(assigned.lines().count(), log_rows);
    assert!(scat_rows <= log_rows);

    let o = canyonsim(&[
        "calibrate",
        "--log",
        s(&f.path("id/assignments.csv")),
        "--scenario",
        s(&f.scenario),
        "--out",
        s(&f.path("cal")),
        // identify recovers few reflections on the wide facades of a simulated log
        "--min-samples",
        "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("largescale_nlos absent"));
    let p = ModelParams::load(f.path("cal/params.json")).unwrap();
    assert!(p.largescale_nlos.is_none());
    let report = std::fs::read_to_string(f.path("cal/fit_report.csv")).unwrap();
    assert!(report.starts_with("side,width_m,n,used,"));

    let o = canyonsim(&[
        "validate",
        "--params",
        s(&f.path("cal/params.json")),
        "--scenario",
        s(&f.scenario),
        "--reference",
        s(&f.path("sim/mpc_log.csv")),
        "--out",
        s(&f.path("val")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(f.path("val/validation.csv")).unwrap();
    assert!(table.starts_with("metric,n_reference,n_simulated,d_ks\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn truth_log_round_trip_recovers_power_map() {
    let f = Fixture::new(4000);
    assert!(f.simulate("sim", &["--no-cir"]).status.success());
    let o = canyonsim(&[
        "calibrate",
        "--log",
        s(&f.path("sim/assigned_truth.csv")),
        "--scenario",
        s(&f.scenario),
        "--out",
        s(&f.path("cal")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = ModelParams::load(f.path("cal/params.json")).unwrap();
    let truth = ModelParams::illustrative();
    assert!((p.power.alpha_beta / truth.power.alpha_beta - 1.0).abs() < 0.2, "{}", p.power.alpha_beta);
    assert!((p.largescale_los.gamma / truth.largescale_los.gamma - 1.0).abs() < 0.05);
}

#[test]
fn validate_identical_logs_gives_zero_distance() {
    let f = Fixture::new(300);
    assert!(f.simulate("sim", &["--seed", "8", "--no-cir"]).status.success());
    let o = canyonsim(&[
        "validate",
        "--params",
        s(&f.params),
        "--scenario",
        s(&f.scenario),
        "--reference",
        s(&f.path("sim/mpc_log.csv")),
        "--out",
        s(&f.path("val")),
        "--seed",
        "8",
    ]);
    assert!(o.status.success());
    let table = std::fs::read_to_string(f.path("val/validation.csv")).unwrap();
    for line in table.lines().skip(1) {
        assert!(line.ends_with(",0.0"), "{line}");
    }
}

#[test]
fn validate_rejects_log_beyond_scenario() {
    let f = Fixture::new(300);
    assert!(f.simulate("sim", &["--no-cir"]).status.success());
    let short = f.path("short.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&f.scenario).unwrap()).unwrap();
    doc["n_snapshots"] = json!(100);
    std::fs::write(&short, doc.to_string()).unwrap();
    let o = canyonsim(&[
        "validate",
        "--params",
        s(&f.params),
        "--scenario",
        s(&short),
        "--reference",
        s(&f.path("sim/mpc_log.csv")),
        "--out",
        s(&f.path("val")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_command_reports_every_snapshot() {
    let f = Fixture::new(50);
    assert!(f.simulate("sim", &["--no-cir"]).status.success());
    let o = canyonsim(&[
        "stats",
        "--log",
        s(&f.path("sim/mpc_log.csv")),
        "--scenario",
        s(&f.scenario),
        "--out",
        s(&f.path("st")),
    ]);
    assert!(o.status.success());
    let a = std::fs::read_to_string(f.path("st/stats.csv")).unwrap();
    let b = std::fs::read_to_string(f.path("sim/stats.csv")).unwrap();
    assert_eq!(a, b);
    assert!(f.path("st/log_rms_ds_cdf.csv").exists());
}

#[test]
fn exit_codes() {
    let f = Fixture::new(50);
    let bad = f.path("bad.json");
    std::fs::write(&bad, r#"{"routes": []}"#).unwrap();
    let o = canyonsim(&["simulate", "--scenario", s(&bad), "--params", s(&f.params), "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let invalid = f.path("invalid_params.json");
    let mut p = ModelParams::illustrative();
    p.power.b_beta = -1.0;
    std::fs::write(&invalid, serde_json::to_string(&p).unwrap()).unwrap();
    let o = canyonsim(&["simulate", "--scenario", s(&f.scenario), "--params", s(&invalid), "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("power.b_beta"));

    let missing = f.path("missing.json");
    let o = canyonsim(&["simulate", "--scenario", s(&missing), "--params", s(&f.params), "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(4));

    let empty = f.path("empty.csv");
    std::fs::write(&empty, "snapshot,power_db,delay_s,aoa_deg,eoa_deg,phase_rad,side,width_m,residual_s\n").unwrap();
    let o = canyonsim(&["calibrate", "--log", s(&empty), "--scenario", s(&f.scenario), "--out", s(&f.path("cal"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!f.path("cal/params.json").exists());

    let o = canyonsim(&["identify", "--log", s(&empty), "--scenario", s(&f.scenario), "--out", s(&f.path("id"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn identify_counts_malformed_rows() {
    let f = Fixture::new(50);
    let log = f.path("log.csv");
    std::fs::write(
        &log,
        "snapshot,power_db,delay_s,aoa_deg,eoa_deg,phase_rad\n0,-60,5e-7,90,90,0\n0,-70,bad,30,90,0\n0,-72,6e-7,30,90,0\n",
    )
    .unwrap();
    let o = canyonsim(&["identify", "--log", s(&log), "--scenario", s(&f.scenario), "--out", s(&f.path("id"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("2 MPCs read, 1 malformed rows skipped"));
}

#[test]
fn footprints_emit_canyon_entries() {
    let f = Fixture::new(50);
    let buildings = f.path("buildings.json");
    std::fs::write(
        &buildings,
        "[[[0,12],[50,12],[50,40],[0,40]], [[60,-25],[120,-25],[120,-60],[60,-60]]]",
    )
    .unwrap();
    let out = f.path("canyons.json");
    let o = canyonsim(&[
        "footprints",
        "--buildings",
        s(&buildings),
        "--scenario",
        s(&f.scenario),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let widths: Vec<f64> = v.as_array().unwrap().iter().map(|c| c["width_m"].as_f64().unwrap()).collect();
    assert_eq!(widths.len(), 2);
    assert!(widths.contains(&12.0) && widths.contains(&25.0));
}
