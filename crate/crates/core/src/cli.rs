//! Command-line front end.
//!
//! Every invocation prints one JSON object on standard output and exits with
//! the code of its status: `ok` 0, `not_included` 1, `unsupported` 2,
//! `io_error` 3, `numerical_failure` 4.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::cpbuild::PSource;
use crate::dilation::{dilate_traced, random_compression, verify_dilation, DilationError, DilationTrace};
use crate::matcore::{c64, CMatrix, LinalgError};
use crate::normform::{classify, CaseTag, DEFAULT_TOL};
use crate::numrange::{boundary, cone_matrix, disk_generator, includes, numerical_radius_bounds, DEFAULT_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotIncluded,
    Unsupported,
    IoError,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::NotIncluded => 1,
            Status::Unsupported => 2,
            Status::IoError => 3,
            Status::NumericalFailure => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub status: Status,
    pub payload: Map<String, Value>,
}

impl RunReport {
    fn new(command: &str, status: Status) -> Self {
        Self { command: command.to_string(), status, payload: Map::new() }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.payload.insert(key.to_string(), value);
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("command".into(), json!(self.command));
        obj.insert("status".into(), serde_json::to_value(self.status).expect("status serializes"));
        for (k, v) in &self.payload {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dilation(#[from] DilationError),
}

impl CliError {
    fn status(&self) -> Status {
        match self {
            CliError::Io { .. } | CliError::Usage(_) => Status::IoError,
            CliError::Dilation(DilationError::UnsupportedCase { .. }) => Status::Unsupported,
            CliError::Dilation(DilationError::NotIncluded { .. }) => Status::NotIncluded,
            CliError::Dilation(DilationError::NumericalFailure { .. }) => Status::NumericalFailure,
            CliError::Dilation(DilationError::InvalidInput(_)) => Status::IoError,
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// On-disk matrix: `{"rows": r, "cols": c, "data": [[[re, im], ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<Vec<f64>>>,
}

impl MatrixFile {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let data = (0..m.rows()).map(|i| (0..m.cols()).map(|j| vec![m[(i, j)].re, m[(i, j)].im]).collect()).collect();
        Self { rows: m.rows(), cols: m.cols(), data }
    }

    pub fn to_matrix(&self) -> Result<CMatrix, String> {
        if self.data.len() != self.rows {
            return Err(format!("field `data` has {} rows but `rows` is {}", self.data.len(), self.rows));
        }
        let mut entries = Vec::with_capacity(self.rows * self.cols);
        for (i, row) in self.data.iter().enumerate() {
            if row.len() != self.cols {
                return Err(format!("field `data[{i}]` has {} entries but `cols` is {}", row.len(), self.cols));
            }
            for (j, z) in row.iter().enumerate() {
                if z.len() != 2 {
                    return Err(format!("field `data[{i}][{j}]` must be [re, im], got {} numbers", z.len()));
                }
                entries.push(c64(z[0], z[1]));
            }
        }
        CMatrix::new(self.rows, self.cols, entries).map_err(|e| e.to_string())
    }
}

pub fn parse_matrix(path: &Path) -> Result<CMatrix, CliError> {
    let io = |message: String| CliError::Io { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let file: MatrixFile = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
    file.to_matrix().map_err(io)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |message: String| CliError::Io { path: path.to_path_buf(), message };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io(e.to_string()))?;
    tmp.write_all(contents).map_err(|e| io(e.to_string()))?;
    tmp.flush().map_err(|e| io(e.to_string()))?;
    tmp.persist(path).map_err(|e| io(e.error.to_string()))?;
    Ok(())
}

pub fn serialize_matrix(m: &CMatrix, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string(&MatrixFile::from_matrix(m)).expect("matrix serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Parser)]
#[command(name = "nrdil", about = "Numerical ranges, inclusion certificates and explicit I⊗A dilations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoCase {
    Interval,
    Triangle,
    Disk,
    Cone,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report which canonical case A falls into.
    Classify {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Export boundary points of W(A) as CSV.
    Range {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerical radius with certified bounds.
    Radius {
        #[arg(short = 'A')]
        a: PathBuf,
    },
    /// Test W(B) ⊆ W(A).
    Include {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(short = 'B')]
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        #[arg(long)]
        certified: bool,
    },
    /// Construct V with V*V = I and V*(I⊗A)V = B.
    Dilate {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(short = 'B')]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the JSON report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a claimed dilation.
    Verify {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(short = 'B')]
        b: PathBuf,
        #[arg(short = 'V')]
        v: PathBuf,
    },
    /// Write a seeded random compression of A.
    Gen {
        #[arg(short = 'A')]
        a: PathBuf,
        #[arg(short = 'n')]
        n: usize,
        #[arg(short = 'k', default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run bundled worked examples.
    Demo {
        #[arg(long = "case", value_enum)]
        case: DemoCase,
        #[arg(long, default_value_t = 2.0)]
        r: f64,
    },
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Classify { .. } => "classify",
        Command::Range { .. } => "range",
        Command::Radius { .. } => "radius",
        Command::Include { .. } => "include",
        Command::Dilate { .. } => "dilate",
        Command::Verify { .. } => "verify",
        Command::Gen { .. } => "gen",
        Command::Demo { .. } => "demo",
    }
}

fn tag_json(tag: &CaseTag) -> Value {
    let mut v = json!({ "name": tag.name() });
    match *tag {
        CaseTag::Normal3Collinear { r } => v["r"] = json!(r),
        CaseTag::NonNormal2PlusReducing { mu, r } => {
            v["mu"] = json!([mu.re, mu.im]);
            v["r"] = json!(r);
        }
        _ => {}
    }
    v
}

fn matrix_json(m: &CMatrix) -> Value {
    serde_json::to_value(MatrixFile::from_matrix(m)).expect("matrix serializes")
}

fn trace_json(t: &DilationTrace) -> Value {
    let r = &t.report;
    let mut v = json!({
        "case": tag_json(&r.case),
        "k": r.k,
        "isometry_residual": r.isometry_residual,
        "compression_residual": r.compression_residual,
        "inclusion_margin": t.margin,
    });
    if let Some(cert) = &t.certificate {
        v["choi_psd_gap"] = json!(cert.psd_gap);
        v["unital_residual"] = json!(cert.unital_residual);
        if let Some(d) = &cert.cone {
            v["cone"] = json!({
                "r": d.r,
                "tolerance": d.tolerance,
                "wedge_gap": d.wedge_gap,
                "cap_gap": d.cap_gap,
                "contraction_overshoot": d.contraction_overshoot,
                "contraction_residual": d.contraction_residual,
                "k_envelope_gap": d.k_envelope_gap,
                "clamp_envelope_gap": d.clamp_envelope_gap,
                "envelope_gap": d.envelope_gap,
                "pencil_gap": d.pencil_gap,
                "p_source": match d.p_source {
                    PSource::SpectralClamp => "spectral_clamp",
                    PSource::LmiRepair => "lmi_repair",
                },
            });
        }
    }
    v
}

fn execute(command: Command) -> Result<RunReport, CliError> {
    let name = command_name(&command);
    match command {
        Command::Classify { a, tol } => {
            let m = parse_matrix(&a)?;
            let tag = classify(&m, tol);
            let status = if tag.is_supported() { Status::Ok } else { Status::Unsupported };
            Ok(RunReport::new(name, status).with("case", tag_json(&tag)).with("dim", json!(m.rows())))
        }
        Command::Range { a, points, out } => {
            let m = parse_matrix(&a)?;
            let pts = boundary(&m, points).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut csv = String::from("theta,re,im,h\n");
            for p in &pts {
                csv.push_str(&format!("{:?},{:?},{:?},{:?}\n", p.theta, p.point.re, p.point.im, p.h));
            }
            write_atomic(&out, csv.as_bytes())?;
            Ok(RunReport::new(name, Status::Ok)
                .with("points", json!(pts.len()))
                .with("out", json!(out.display().to_string())))
        }
        Command::Radius { a } => {
            let m = parse_matrix(&a)?;
            let (lo, hi) = numerical_radius_bounds(&m)?;
            Ok(RunReport::new(name, Status::Ok).with("radius", json!(lo)).with("lower", json!(lo)).with("upper", json!(hi)))
        }
        Command::Include { a, b, points, certified } => {
            let (ma, mb) = (parse_matrix(&a)?, parse_matrix(&b)?);
            let rep = includes(&ma, &mb, points, certified).map_err(|e| CliError::Usage(e.to_string()))?;
            let status = if rep.included { Status::Ok } else { Status::NotIncluded };
            Ok(RunReport::new(name, status)
                .with("included", json!(rep.included))
                .with("margin", json!(rep.margin))
                .with("certified", json!(rep.certified))
                .with("grid_step", json!(rep.grid_step))
                .with("worst_theta", json!(rep.worst_theta)))
        }
        Command::Dilate { a, b, out, report } => {
            let (ma, mb) = (parse_matrix(&a)?, parse_matrix(&b)?);
            let trace = dilate_traced(&ma, &mb)?;
            let mut rep = RunReport::new(name, Status::Ok);
            if let Value::Object(fields) = trace_json(&trace) {
                rep.payload.extend(fields);
            }
            if let Some(out) = out {
                serialize_matrix(&trace.report.v, &out)?;
                rep = rep.with("out", json!(out.display().to_string()));
            }
            if let Some(path) = report {
                rep = rep.with("report", json!(path.display().to_string()));
                let mut text = serde_json::to_string_pretty(&rep.to_json()).expect("report serializes");
                text.push('\n');
                write_atomic(&path, text.as_bytes())?;
            }
            Ok(rep)
        }
        Command::Verify { a, b, v } => {
            let (ma, mb, mv) = (parse_matrix(&a)?, parse_matrix(&b)?, parse_matrix(&v)?);
            let r = verify_dilation(&mv, &ma, &mb)?;
            let status = if r.is_success() { Status::Ok } else { Status::NumericalFailure };
            Ok(RunReport::new(name, status)
                .with("k", json!(r.k))
                .with("isometry_residual", json!(r.isometry_residual))
                .with("compression_residual", json!(r.compression_residual))
                .with("case", tag_json(&r.case)))
        }
        Command::Gen { a, n, k, seed, out } => {
            let m = parse_matrix(&a)?;
            let b = random_compression(&m, n, k, seed)?;
            serialize_matrix(&b, &out)?;
            Ok(RunReport::new(name, Status::Ok)
                .with("n", json!(n))
                .with("k", json!(k))
                .with("seed", json!(seed))
                .with("rng", json!("chacha8"))
                .with("out", json!(out.display().to_string())))
        }
        Command::Demo { case, r } => demo(case, r),
    }
}

fn demo(case: DemoCase, r: f64) -> Result<RunReport, CliError> {
    let s = |re: f64, im: f64| CMatrix::scalar(c64(re, im));
    let (label, a, bs): (&str, CMatrix, Vec<CMatrix>) = match case {
        DemoCase::Interval => ("interval", CMatrix::from_real_diag(&[1.0, 0.0]), vec![s(0.5, 0.0), s(1.0, 0.0)]),
        DemoCase::Triangle => (
            "triangle",
            CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0), c64(0.0, 0.0)]),
            vec![s(0.25, 0.25), CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0)])],
        ),
        DemoCase::Disk => ("disk", disk_generator(), vec![s(0.0, 0.0), s(1.0, 0.0)]),
        DemoCase::Cone => {
            if !r.is_finite() || r <= 1.0 {
                return Err(CliError::Usage(format!("--r must exceed 1, got {r}")));
            }
            ("cone", cone_matrix(r), vec![s(r + 1.0, 0.0), s(0.0, 0.0)])
        }
    };
    let mut runs = Vec::new();
    let mut status = Status::Ok;
    for b in &bs {
        match dilate_traced(&a, b) {
            Ok(t) => {
                let mut v = trace_json(&t);
                v["B"] = matrix_json(b);
                runs.push(v);
            }
            Err(e) => {
                status = CliError::from(e.clone()).status();
                runs.push(json!({ "B": matrix_json(b), "error": e.to_string() }));
            }
        }
    }
    Ok(RunReport::new("demo", status).with("case", json!(label)).with("A", matrix_json(&a)).with("runs", Value::Array(runs)))
}

/// Parses `argv` (including the program name) and runs one command.
pub fn run<I, T>(argv: I) -> RunReport
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                return RunReport::new("help", Status::Ok).with("help", json!(e.render().to_string()));
            }
            return RunReport::new("usage", Status::IoError).with("error", json!(e.render().to_string()));
        }
    };
    let name = command_name(&cli.command);
    match execute(cli.command) {
        Ok(rep) => rep,
        Err(e) => RunReport::new(name, e.status()).with("error", json!(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file() {
        let f: MatrixFile = serde_json::from_str(r#"{"rows":1,"cols":1,"data":[[[3.0,0.0]]]}"#).unwrap();
        assert_eq!(f.to_matrix().unwrap(), CMatrix::scalar(c64(3.0, 0.0)));
    }

    #[test]
    fn missing_field_is_named() {
        let err = serde_json::from_str::<MatrixFile>(r#"{"rows":1,"data":[[[3.0,0.0]]]}"#).unwrap_err();
        assert!(err.to_string().contains("cols"), "{err}");
    }

    #[test]
    fn bad_entries_are_located() {
        let f: MatrixFile = serde_json::from_str(r#"{"rows":1,"cols":2,"data":[[[1,0],[2]]]}"#).unwrap();
        let err = f.to_matrix().unwrap_err();
        assert!(err.contains("data[0][1]"), "{err}");
        let f: MatrixFile = serde_json::from_str(r#"{"rows":2,"cols":1,"data":[[[1,0]]]}"#).unwrap();
        assert!(f.to_matrix().unwrap_err().contains("rows"));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = CMatrix::from_fn(3, 3, |i, j| c64(0.1 * (i as f64 + 1.0) / 3.0, -1e-300 * j as f64 + std::f64::consts::PI));
        serialize_matrix(&m, &path).unwrap();
        let back = parse_matrix(&path).unwrap();
        for (x, y) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn status_codes() {
        let codes: Vec<i32> = [Status::Ok, Status::NotIncluded, Status::Unsupported, Status::IoError, Status::NumericalFailure]
            .iter()
            .map(|s| s.exit_code())
            .collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
        assert_eq!(serde_json::to_value(Status::NotIncluded).unwrap(), json!("not_included"));
    }

    #[test]
    fn demo_cone_runs() {
        let rep = run(["nrdil", "demo", "--case", "cone", "--r", "2"]);
        assert_eq!(rep.status, Status::Ok, "{:?}", rep.to_json());
        let runs = rep.payload["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0]["k"], json!(1));
    }

    #[test]
    fn unknown_flag_is_io_error() {
        let rep = run(["nrdil", "radius", "--bogus"]);
        assert_eq!(rep.exit_code(), 3);
    }
}
