use std::path::{Path, PathBuf};
use std::process::Command;

use nrdil::cli::{parse_matrix, serialize_matrix};
use nrdil::matcore::{c64, CMatrix};
use serde_json::Value;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn matrix(&self, name: &str, m: &CMatrix) -> PathBuf {
        let p = self.path(name);
        serialize_matrix(m, &p).unwrap();
        p
    }

    fn raw(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn nrdil(args: &[&dyn AsRef<std::ffi::OsStr>]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_nrdil")).args(args.iter().map(|a| a.as_ref())).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let report: Value = serde_json::from_str(stdout.trim()).unwrap_or_else(|e| panic!("bad report {stdout:?}: {e}"));
    (out.status.code().unwrap(), report)
}

fn segment() -> CMatrix {
    CMatrix::from_real_diag(&[1.0, 0.0])
}

fn nilpotent() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| if (i, j) == (0, 1) { c64(2.0, 0.0) } else { c64(0.0, 0.0) })
}

fn half() -> CMatrix {
    CMatrix::scalar(c64(0.5, 0.0))
}

fn assert_status(report: &Value, code: i32, status: &str, expected: i32) {
    assert_eq!(report["status"], status, "{report}");
    assert_eq!(code, expected, "{report}");
}

#[test]
fn classify_codes() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &segment());
    let (code, rep) = nrdil(&[&"classify", &"-A", &a]);
    assert_status(&rep, code, "ok", 0);
    assert_eq!(rep["case"]["name"], "normal2");

    let quad = f.matrix("q.json", &CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0), c64(-1.0, 0.0), c64(0.0, -1.0)]));
    let (code, rep) = nrdil(&[&"classify", &"-A", &quad]);
    assert_status(&rep, code, "unsupported", 2);

    let (code, rep) = nrdil(&[&"classify", &"-A", &f.path("missing.json")]);
    assert_status(&rep, code, "io_error", 3);
}

#[test]
fn missing_cols_is_reported_with_field_name() {
    let f = Fixture::new();
    let a = f.raw("a.json", r#"{"rows": 1, "data": [[[1.0, 0.0]]]}"#);
    let (code, rep) = nrdil(&[&"classify", &"-A", &a]);
    assert_status(&rep, code, "io_error", 3);
    assert!(rep["error"].as_str().unwrap().contains("cols"), "{rep}");
}

#[test]
fn range_writes_csv() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &nilpotent());
    let out = f.path("w.csv");
    let (code, rep) = nrdil(&[&"range", &"-A", &a, &"--points", &"16", &"--out", &out]);
    assert_status(&rep, code, "ok", 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,re,im,h"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
    assert!(rows[0][0] >= -std::f64::consts::PI && rows[15][0] < std::f64::consts::PI);
    for r in rows {
        assert!((r[1].hypot(r[2]) - 1.0).abs() < 1e-9);
        assert!((r[3] - 1.0).abs() < 1e-10);
    }

    let (code, rep) = nrdil(&[&"range", &"-A", &a, &"--points", &"3", &"--out", &out]);
    assert_status(&rep, code, "io_error", 3);
}

#[test]
fn radius_reports_bounds() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &nilpotent());
    let (code, rep) = nrdil(&[&"radius", &"-A", &a]);
    assert_status(&rep, code, "ok", 0);
    let (lo, hi) = (rep["lower"].as_f64().unwrap(), rep["upper"].as_f64().unwrap());
    assert!(lo <= hi && (lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
}

#[test]
fn include_codes() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &segment());
    let b = f.matrix("b.json", &half());
    let (code, rep) = nrdil(&[&"include", &"-A", &a, &"-B", &b, &"--certified"]);
    assert_status(&rep, code, "ok", 0);
    // Flat range: both supports vanish at θ = ±π/2.
    assert!(rep["margin"].as_f64().unwrap().abs() < 1e-9);

    let nil = f.matrix("n.json", &nilpotent());
    let (code, rep) = nrdil(&[&"include", &"-A", &a, &"-B", &nil]);
    assert_status(&rep, code, "not_included", 1);
    assert!((rep["margin"].as_f64().unwrap() + 1.0).abs() < 1e-9);
}

#[test]
fn dilate_then_verify() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &segment());
    let b = f.matrix("b.json", &half());
    let v = f.path("v.json");
    let report = f.path("report.json");
    let (code, rep) = nrdil(&[&"dilate", &"-A", &a, &"-B", &b, &"--out", &v, &"--report", &report]);
    assert_status(&rep, code, "ok", 0);
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(stored, rep);

    let vm = parse_matrix(&v).unwrap();
    assert_eq!(vm.rows(), 2 * rep["k"].as_u64().unwrap() as usize);
    let (code, rep) = nrdil(&[&"verify", &"-A", &a, &"-B", &b, &"-V", &v]);
    assert_status(&rep, code, "ok", 0);

    // Wrong B for the same V.
    let other = f.matrix("o.json", &CMatrix::scalar(c64(0.9, 0.0)));
    let (code, rep) = nrdil(&[&"verify", &"-A", &a, &"-B", &other, &"-V", &v]);
    assert_status(&rep, code, "numerical_failure", 4);
}

#[test]
fn dilate_failure_codes() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &segment());
    let nil = f.matrix("n.json", &nilpotent());
    let (code, rep) = nrdil(&[&"dilate", &"-A", &a, &"-B", &nil]);
    assert_status(&rep, code, "not_included", 1);

    let quad = f.matrix("q.json", &CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0), c64(-1.0, 0.0), c64(0.0, -1.0)]));
    let zero = f.matrix("z.json", &CMatrix::scalar(c64(0.0, 0.0)));
    let (code, rep) = nrdil(&[&"dilate", &"-A", &quad, &"-B", &zero]);
    assert_status(&rep, code, "unsupported", 2);

    let (code, rep) = nrdil(&[&"dilate", &"-A", &a]);
    assert_status(&rep, code, "io_error", 3);
}

fn gen(a: &Path, n: &str, k: &str, seed: &str, out: &Path) -> (i32, Value) {
    nrdil(&[&"gen", &"-A", &a, &"-n", &n, &"-k", &k, &"--seed", &seed, &"--out", &out])
}

#[test]
fn gen_is_deterministic_and_dilatable() {
    let f = Fixture::new();
    let a = f.matrix("a.json", &nilpotent());
    let (b1, b2) = (f.path("b1.json"), f.path("b2.json"));
    let (code, rep) = gen(&a, "3", "2", "42", &b1);
    assert_status(&rep, code, "ok", 0);
    gen(&a, "3", "2", "42", &b2);
    assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b2).unwrap());

    let (code, rep) = nrdil(&[&"include", &"-A", &a, &"-B", &b1]);
    assert_status(&rep, code, "ok", 0);
    let (code, rep) = nrdil(&[&"dilate", &"-A", &a, &"-B", &b1]);
    assert_status(&rep, code, "ok", 0);

    let (code, rep) = gen(&a, "5", "2", "1", &b1);
    assert_status(&rep, code, "io_error", 3);
}

#[test]
fn demo_cases() {
    for case in ["interval", "triangle", "disk", "cone"] {
        let (code, rep) = nrdil(&[&"demo", &"--case", &case]);
        assert_status(&rep, code, "ok", 0);
        for run in rep["runs"].as_array().unwrap() {
            assert!(run["isometry_residual"].as_f64().unwrap() <= 1e-8, "{run}");
        }
    }
    let (code, rep) = nrdil(&[&"demo", &"--case", &"cone", &"--r", &"0.5"]);
    assert_status(&rep, code, "io_error", 3);
    let (code, _) = nrdil(&[&"demo", &"--case", &"sphere"]);
    assert_eq!(code, 3);
}
