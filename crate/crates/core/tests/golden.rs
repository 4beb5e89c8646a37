//! Output schemas are pinned by the files under `tests/golden`: CSV outputs
//! byte for byte, JSON outputs by their top-level key layout. Set
//! `UPDATE_GOLDEN=1` to rewrite them after an intended change.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const EXPERIMENTS: [&str; 7] = [
    "simulate",
    "dual-moment",
    "interface",
    "moments",
    "self-duality",
    "scaling",
    "brownian",
];

const CSV_HEADERS: [(&str, &str); 4] = [
    ("simulate", "t,x,u,v,lambda"),
    ("dual-moment", "eps,value,std_error,n_replicas"),
    ("interface", "t,R,L,L_eps,R_eps,width"),
    ("moments", "op,T,value,std_error,trend_verdict"),
];

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(experiment: &str, out: &Path) {
    let cfg = golden_dir().join(format!("configs/{experiment}.json"));
    let o = Command::new(env!("CARGO_BIN_EXE_sbm"))
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{experiment}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Top-level key layout, one line per key; arrays are described by their
/// first element.
fn layout(v: &Value) -> String {
    let obj = match v {
        Value::Array(a) => a.first().cloned().unwrap_or(Value::Null),
        other => other.clone(),
    };
    let mut s = String::new();
    if let Value::Object(m) = obj {
        for (k, v) in m {
            let kind = match v {
                Value::Null => "null",
                Value::Bool(_) => "bool",
                Value::Number(_) => "number",
                Value::String(_) => "string",
                Value::Array(_) => "array",
                Value::Object(_) => "object",
            };
            s.push_str(&format!("{k}: {kind}\n"));
        }
    }
    s
}

fn check(path: &Path, actual: &[u8], update: bool) {
    if update {
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read(path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert!(
        expected == actual,
        "{} differs:\n--- expected\n{}\n--- actual\n{}",
        path.display(),
        String::from_utf8_lossy(&expected),
        String::from_utf8_lossy(actual)
    );
}

#[test]
fn outputs_match_golden_files() {
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let tmp = tempfile::tempdir().unwrap();
    for e in EXPERIMENTS {
        let out = tmp.path().join(e);
        run(e, &out);
        let csv = out.join("results.csv");
        if let Some((_, header)) = CSV_HEADERS.iter().find(|(name, _)| *name == e) {
            let bytes = std::fs::read(&csv).unwrap();
            let text = String::from_utf8(bytes.clone()).unwrap();
            assert_eq!(text.lines().next(), Some(*header), "{e}");
            let cols = header.split(',').count();
            assert!(
                text.lines().all(|l| l.split(',').count() == cols),
                "{e}: ragged rows"
            );
            check(&golden_dir().join(format!("{e}.csv")), &bytes, update);
        } else {
            assert!(!csv.exists(), "{e} wrote an undocumented CSV");
        }
        let json: Value =
            serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
        check(
            &golden_dir().join(format!("{e}.keys")),
            layout(&json).as_bytes(),
            update,
        );
    }
}
