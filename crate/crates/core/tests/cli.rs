use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbm"))
        .args(args)
        .env("SBM_WORKERS", "1")
        .output()
        .expect("sbm binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path) -> Output {
    sbm(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn heat_simulation_matches_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "heat.json",
        r#"{"experiment": "simulate", "rho": 0, "gamma": 0, "dx": 0.05, "T": 1, "seed": 1}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x,u,v,lambda"));
    let res: Value =
        serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    let err = res["replicas"][0]["heat_sup_error"].as_f64().unwrap();
    assert!(err <= 2.0 * 0.05, "{err}");

    let manifest: Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["manifest_version"], 1);
    assert_eq!(manifest["config"]["experiment"], "simulate");
    assert!(manifest["wall_clock_seconds"].as_f64().is_some());
}

#[test]
fn missing_rho_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"experiment": "simulate", "gamma": 1, "dx": 0.1, "T": 1}"#,
    );
    let o = run(&cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"rho\""), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_params_are_line_addressed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        "{\n  \"experiment\": \"simulate\",\n  \"rho\": 1.5,\n  \"gamma\": 1,\n  \"dx\": 0.1,\n  \"T\": 1\n}\n",
    );
    let o = run(&cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c.json:3:"), "{}", stderr(&o));

    let cfg = write_config(
        tmp.path(),
        "d.json",
        "{\n  \"experiment\": \"simulate\",\n  \"rho\": 0,\n  \"gamma\": 1,\n  \"dx\": 0.1,\n  \"dt\": 0.01,\n  \"T\": 1\n}\n",
    );
    let o = run(&cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("d.json:6:"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "e.json", r#"{"experiment": "sample"}"#);
    assert_eq!(run(&cfg, &tmp.path().join("out")).status.code(), Some(1));
}

#[test]
fn underpowered_duality_suite_is_inconclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sbm(&[
        "verify",
        "duality",
        "--replicas",
        "100",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["verdict"], "inconclusive");
    let ids: Vec<u64> = rep["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [2, 3, 9]);
    assert!(stderr(&o).contains("overall: Inconclusive"));
}

#[test]
fn heat_suite_prints_report_on_stdout() {
    let o = sbm(&["verify", "heat"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["verdict"], "pass");
    let c = &rep["criteria"][0];
    assert_eq!(c["id"], 1);
    assert!(c["checks"][0]["measured"].as_f64().is_some());
    assert!(c["checks"][0]["tolerance"].as_f64().is_some());
    assert_eq!(sbm(&["verify", "everything"]).status.code(), Some(1));
}

#[test]
fn manifest_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.json",
        r#"{"experiment": "interface", "params": {"rho": -0.5, "gamma": 2, "dx": 0.1, "half_width": 3},
            "T": 0.2, "record_times": [0.1, 0.2], "n_replicas": 6, "seed": 9}"#,
    );
    let first = tmp.path().join("first");
    let o = run(&cfg, &first);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let second = tmp.path().join("second");
    let o = run(&first.join("manifest.json"), &second);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["results.csv", "results.json"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let m1: Value =
        serde_json::from_slice(&std::fs::read(first.join("manifest.json")).unwrap()).unwrap();
    let m2: Value =
        serde_json::from_slice(&std::fs::read(second.join("manifest.json")).unwrap()).unwrap();
    let strip = |mut m: Value| {
        m["config"].as_object_mut().unwrap().remove("output_dir");
        m["config"].clone()
    };
    assert_eq!(strip(m1), strip(m2));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        r#"{"experiment": "simulate", "rho": -0.8, "gamma": 1, "dx": 0.1, "half_width": 2,
            "T": 0.1, "n_replicas": 5, "seed": 4}"#,
    );
    let mut outs = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join(format!("w{w}"));
        let o = Command::new(env!("CARGO_BIN_EXE_sbm"))
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("SBM_WORKERS", w)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outs.push(out);
    }
    for f in [
        "results.csv",
        "results.json",
        "trajectories/replica_00004.csv",
    ] {
        assert_eq!(
            std::fs::read(outs[0].join(f)).unwrap(),
            std::fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}
