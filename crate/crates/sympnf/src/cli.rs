//! Command-line front end: `analyze`, `generate`, `compare`, `verify`.
//!
//! Documents are JSON with sorted keys, two-space indentation and every
//! float written with 17 significant digits, so the same input always gives
//! byte-identical output and residuals can be rechecked exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blocks::{
    analyze, build_block, conjugacy_equal, direct_sum_all, fingerprint_of, Fingerprint, NormalFormBlock,
    NormalFormResult, COND_BOUND,
};
use crate::error::Error;
use crate::numcore::{omega, pairing, RMat, ToleranceConfig};
use crate::synth::{build_from_params, BlockSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_SYMPLECTIC: i32 = 2;
pub const EXIT_AMBIGUOUS: i32 = 3;
pub const EXIT_NOT_CONJUGATE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;
/// The computation itself broke down (degenerate chain, residuals over bound).
pub const EXIT_NUMERICAL: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "sympnf", version, about = "Symplectic normal forms of real symplectic matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the normal form, basis and fingerprint of a matrix.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Build a matrix from block parameters and a seeded conjugator.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Decide whether two matrices are conjugate in Sp(2n, ℝ).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Recheck the residuals and structure of an `analyze` report.
    Verify { report: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    /// Comma-separated matrix rows; `analyze` writes N, a blank line, then P.
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct TolArgs {
    /// Residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    cluster_tol: Option<f64>,
    #[arg(long)]
    snap_tol: Option<f64>,
}

impl TolArgs {
    fn config(&self) -> Result<ToleranceConfig, Failure> {
        let mut cfg = ToleranceConfig::default();
        if let Some(t) = self.tol {
            cfg.residual_tol = t;
        }
        if let Some(t) = self.rank_tol {
            cfg.rank_rel_tol = t;
        }
        if let Some(t) = self.cluster_tol {
            cfg.eig_cluster_tol = t;
        }
        if let Some(t) = self.snap_tol {
            cfg.circle_snap_tol = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// An error message together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) => EXIT_INPUT,
            Error::NotSymplectic { .. } => EXIT_NOT_SYMPLECTIC,
            Error::ToleranceAmbiguity(_) => EXIT_AMBIGUOUS,
            _ => EXIT_NUMERICAL,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Parses `std::env::args` and runs the job; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: &Command) -> Result<i32, Failure> {
    match cmd {
        Command::Analyze { input, output, format, tol } => {
            let cfg = tol.config()?;
            let a = read_matrix(input)?;
            let res = analyze(&a, &cfg)?;
            let text = match format {
                Format::Json => to_canonical_json(&analysis_document(&a, &res, &cfg)),
                Format::Csv => format!("{}\n{}", csv_matrix(&res.n), csv_matrix(&res.p)),
            };
            emit(output.as_deref(), &text)?;
            Ok(EXIT_OK)
        }
        Command::Generate { spec, seed, output, format } => {
            let mut spec: BlockSpec = serde_json::from_str(&read_text(spec)?)
                .map_err(|e| Failure::input(format!("{}: {e}", spec.display())))?;
            spec.conjugator_seed = *seed;
            let (a, expected) = build_from_params(&spec)?;
            let text = match format {
                Format::Json => to_canonical_json(&json!({
                    "n": a.nrows() / 2,
                    "matrix": matrix_value(&a),
                    "spec": spec,
                    "expected_fingerprint": expected,
                })),
                Format::Csv => csv_matrix(&a),
            };
            emit(output.as_deref(), &text)?;
            Ok(EXIT_OK)
        }
        Command::Compare { a, b, output, tol } => {
            let cfg = tol.config()?;
            let ma = read_matrix(a)?;
            let mb = read_matrix(b)?;
            let report = conjugacy_equal(&ma, &mb, &cfg)?;
            emit(output.as_deref(), &to_canonical_json(&serde_json::to_value(&report).expect("serializable")))?;
            if let Some(d) = &report.discrepancy {
                eprintln!("not conjugate: {d}");
            }
            Ok(if report.conjugate { EXIT_OK } else { EXIT_NOT_CONJUGATE })
        }
        Command::Verify { report } => {
            let doc: Value = serde_json::from_str(&read_text(report)?)
                .map_err(|e| Failure::input(format!("{}: {e}", report.display())))?;
            let problems = verify_document(&doc)?;
            if problems.is_empty() {
                println!("ok");
                Ok(EXIT_OK)
            } else {
                for p in &problems {
                    eprintln!("verify: {p}");
                }
                Ok(EXIT_VERIFY)
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Reads a matrix document `{"n": k, "matrix": ...}` with the 2k×2k entries
/// either flat row-major or as nested rows. Files not starting with `{` are
/// read as comma-separated rows.
pub fn read_matrix(path: &Path) -> Result<RMat, Failure> {
    let text = read_text(path)?;
    parse_matrix(&text).map_err(|m| Failure::input(format!("{}: {m}", path.display())))
}

pub fn parse_matrix(text: &str) -> Result<RMat, String> {
    if !text.trim_start().starts_with('{') {
        return parse_csv(text);
    }
    #[derive(Deserialize)]
    struct Doc {
        n: usize,
        matrix: Value,
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let dim = 2 * doc.n;
    if dim == 0 {
        return Err("n must be positive".into());
    }
    let entries: Vec<f64> = match &doc.matrix {
        Value::Array(rows) if rows.iter().all(Value::is_array) => {
            if rows.len() != dim {
                return Err(format!("expected {dim} rows, found {}", rows.len()));
            }
            let mut out = Vec::with_capacity(dim * dim);
            for (i, r) in rows.iter().enumerate() {
                let r: Vec<f64> = serde_json::from_value(r.clone()).map_err(|e| format!("row {i}: {e}"))?;
                if r.len() != dim {
                    return Err(format!("row {i} has {} entries, expected {dim}", r.len()));
                }
                out.extend(r);
            }
            out
        }
        v => serde_json::from_value(v.clone()).map_err(|e| format!("matrix: {e}"))?,
    };
    if entries.len() != dim * dim {
        return Err(format!("expected {} entries, found {}", dim * dim, entries.len()));
    }
    if entries.iter().any(|x| !x.is_finite()) {
        return Err("matrix has non-finite entries".into());
    }
    Ok(RMat::from_row_slice(dim, dim, &entries))
}

fn parse_csv(text: &str) -> Result<RMat, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect())
        .collect::<Result<_, _>>()?;
    let dim = rows.len();
    if dim == 0 || !dim.is_multiple_of(2) || rows.iter().any(|r| r.len() != dim) {
        return Err("expected a square matrix of even dimension".into());
    }
    Ok(RMat::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn matrix_value(m: &RMat) -> Value {
    Value::Array((0..m.nrows()).map(|i| json!((0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())).collect())
}

fn csv_matrix(m: &RMat) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn analysis_document(a: &RMat, res: &NormalFormResult, cfg: &ToleranceConfig) -> Value {
    let rr = &res.residual_report;
    json!({
        "n": a.nrows() / 2,
        "A": matrix_value(a),
        "blocks": res.blocks,
        "N": matrix_value(&res.n),
        "P": matrix_value(&res.p),
        "residuals": {
            "symplecticity": rr.symplecticity,
            "reconstruction": rr.reconstruction,
            "condition_p": rr.condition_p,
        },
        "fingerprint": res.fingerprint,
        "snap_report": rr.snap_report,
        "tolerances": cfg,
    })
}

#[derive(Serialize, Deserialize)]
struct ReportResiduals {
    symplecticity: f64,
    reconstruction: f64,
}

/// Recomputes everything checkable in an `analyze` report. Returns the list
/// of failed checks; a malformed document is an input error.
pub fn verify_document(doc: &Value) -> Result<Vec<String>, Failure> {
    fn field<T: serde::de::DeserializeOwned>(doc: &Value, key: &str) -> Result<T, Failure> {
        let v = doc.get(key).ok_or_else(|| Failure::input(format!("report lacks field {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Failure::input(format!("field {key:?}: {e}")))
    }
    fn matrix(doc: &Value, key: &str, dim: usize) -> Result<RMat, Failure> {
        let rows: Vec<Vec<f64>> = field(doc, key)?;
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Failure::input(format!("field {key:?} is not {dim}x{dim}")));
        }
        Ok(RMat::from_fn(dim, dim, |i, j| rows[i][j]))
    }
    let half: usize = field(doc, "n")?;
    let dim = 2 * half;
    let a = matrix(doc, "A", dim)?;
    let n = matrix(doc, "N", dim)?;
    let p = matrix(doc, "P", dim)?;
    let blocks: Vec<NormalFormBlock> = field(doc, "blocks")?;
    let recorded: ReportResiduals = field(doc, "residuals")?;
    let fingerprint: Fingerprint = field(doc, "fingerprint")?;
    let cfg: ToleranceConfig = field(doc, "tolerances")?;
    cfg.validate()?;

    let mut problems = Vec::new();
    let sym = (pairing(&p, &p) - omega(dim)).norm();
    let rec = (&a * &p - &p * &n).norm();
    let sym_bound = cfg.residual_tol * half as f64;
    let rec_bound = cfg.residual_tol * a.norm().max(1.0) * COND_BOUND;
    if sym > sym_bound {
        problems.push(format!("symplecticity {sym:.3e} exceeds {sym_bound:.3e}"));
    }
    if rec > rec_bound {
        problems.push(format!("reconstruction {rec:.3e} exceeds {rec_bound:.3e}"));
    }
    for (name, got, want) in [("symplecticity", sym, recorded.symplecticity), ("reconstruction", rec, recorded.reconstruction)] {
        if (got - want).abs() > 1e-12 * want.abs().max(f64::MIN_POSITIVE) + 1e-300 {
            problems.push(format!("recorded {name} {want:.17e} differs from recomputed {got:.17e}"));
        }
    }

    let mut mats = Vec::with_capacity(blocks.len());
    for b in &blocks {
        match b.validate().and_then(|_| build_block(b)) {
            Ok(m) => mats.push(m),
            Err(e) => problems.push(format!("block {b:?}: {e}")),
        }
    }
    if mats.len() == blocks.len() {
        match direct_sum_all(&mats) {
            Ok(expected) if expected.shape() == n.shape() => {
                let diff = (&expected - &n).norm();
                if diff > 1e-12 * n.norm().max(1.0) {
                    problems.push(format!("N differs from the direct sum of its blocks by {diff:.3e}"));
                }
            }
            Ok(_) => problems.push("blocks do not add up to the dimension of N".into()),
            Err(e) => problems.push(format!("direct sum: {e}")),
        }
    }
    match fingerprint_of(&n, &cfg) {
        Ok(f) if f.matches(&fingerprint, cfg.eig_cluster_tol) => {}
        Ok(f) => problems.push(format!(
            "fingerprint of N disagrees with the report: {}",
            f.discrepancy(&fingerprint, cfg.eig_cluster_tol).unwrap_or_default()
        )),
        Err(e) => problems.push(format!("fingerprint of N: {e}")),
    }
    match fingerprint_of(&a, &cfg) {
        Ok(f) if f.matches(&fingerprint, cfg.eig_cluster_tol) => {}
        Ok(f) => problems.push(format!(
            "fingerprint of A disagrees with the report: {}",
            f.discrepancy(&fingerprint, cfg.eig_cluster_tol).unwrap_or_default()
        )),
        Err(e) => problems.push(format!("fingerprint of A: {e}")),
    }
    Ok(problems)
}

/// 17 significant digits: enough to round-trip every f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

/// Pretty-printed JSON with sorted keys and fixed float formatting.
pub fn to_canonical_json(v: &Value) -> String {
    let mut s = String::new();
    write_value(&mut s, v, 0);
    s.push('\n');
    s
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| {
        out.push('\n');
        out.extend(std::iter::repeat_n("  ", d));
    };
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&fmt_f64(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(|x| x.is_number()) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, x, depth + 1);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, depth + 1);
                write_value(out, x, depth + 1);
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, depth + 1);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*k], depth + 1);
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, -0.0, f64::MAX] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn canonical_json_sorts_keys_and_parses_back() {
        let v = json!({"b": [1.5, 2], "a": {"z": null, "y": [[0.25]]}, "c": []});
        let s = to_canonical_json(&v);
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"][0].as_f64(), Some(1.5));
        assert_eq!(back["b"][1].as_u64(), Some(2));
        assert_eq!(back["a"]["y"][0][0].as_f64(), Some(0.25));
    }

    #[test]
    fn matrix_documents() {
        let flat = parse_matrix(r#"{"n": 1, "matrix": [1, 1, 0, 1]}"#).unwrap();
        let nested = parse_matrix(r#"{"n": 1, "matrix": [[1, 1], [0, 1]]}"#).unwrap();
        let csv = parse_matrix("1,1\n0,1\n").unwrap();
        assert_eq!(flat, nested);
        assert_eq!(flat, csv);
        assert_eq!(flat[(0, 1)], 1.0);
        assert!(parse_matrix(r#"{"n": 1, "matrix": [1, 1, 0]}"#).is_err());
        assert!(parse_matrix(r#"{"n": 2, "matrix": [[1, 1], [0, 1]]}"#).is_err());
        assert!(parse_matrix(r#"{"n": 0, "matrix": []}"#).is_err());
        assert!(parse_matrix("1,2,3\n").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::InvalidInput("x".into())).code, EXIT_INPUT);
        assert_eq!(Failure::from(Error::NotSymplectic { residual: 1.0, bound: 0.0 }).code, EXIT_NOT_SYMPLECTIC);
        assert_eq!(Failure::from(Error::ToleranceAmbiguity("x".into())).code, EXIT_AMBIGUOUS);
        assert_eq!(Failure::from(Error::DegenerateChain(0)).code, EXIT_NUMERICAL);
    }

    #[test]
    fn verify_accepts_fresh_report_and_rejects_tampering() {
        let cfg = ToleranceConfig::default();
        let a = RMat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let res = analyze(&a, &cfg).unwrap();
        let doc = analysis_document(&a, &res, &cfg);
        let reparsed: Value = serde_json::from_str(&to_canonical_json(&doc)).unwrap();
        assert!(verify_document(&reparsed).unwrap().is_empty());
        let mut bad = reparsed.clone();
        bad["P"][0][0] = json!(2.0);
        assert!(!verify_document(&bad).unwrap().is_empty());
        let mut bad = reparsed;
        bad["blocks"][0]["sign"] = json!(-1);
        assert!(!verify_document(&bad).unwrap().is_empty());
    }
}
