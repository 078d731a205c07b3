//! Result files: JSON-lines with a metadata first line, and CSV twins whose
//! first line is `#` followed by the same metadata.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{BndlError, Result};
use crate::metrics::SweepPoint;
use crate::uncertainty::BinCurve;

pub const TOOL_NAME: &str = "bndl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance carried by every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: Value,
}

impl RunMeta {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| BndlError::Config(format!("config is not serializable: {e}")))?;
        Ok(Self {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command: command.to_string(),
            seed,
            config,
        })
    }

    fn json(&self) -> String {
        serde_json::to_string(self).expect("metadata serializes")
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| BndlError::Config(format!("cannot serialize record: {e}")))
}

/// Renders JSON-lines text: `{"meta": …}` then one object per record.
pub fn jsonl_string<T: Serialize>(meta: &RunMeta, records: &[T]) -> Result<String> {
    let mut out = format!("{{\"meta\":{}}}\n", meta.json());
    for r in records {
        out.push_str(&to_json(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, meta: &RunMeta, records: &[T]) -> Result<()> {
    write_text(path, &jsonl_string(meta, records)?)
}

/// Renders CSV text with a `#` metadata line and a header row.
pub fn csv_string(meta: &RunMeta, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# {}\n{}\n", meta.json(), header.join(","));
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, meta: &RunMeta, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_text(path, &csv_string(meta, header, rows))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BndlError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| BndlError::io(path, e))
}

/// `printf("%.9g")`-style rendering.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig9).unwrap_or_default()
}

pub const BIN_CSV_HEADER: [&str; 4] = ["bin", "mean_p", "accuracy", "count"];
pub const SWEEP_CSV_HEADER: [&str; 5] = ["alpha", "nnz", "accuracy", "pavpu", "status"];

pub fn bin_csv_rows(curve: &BinCurve) -> Vec<Vec<String>> {
    curve
        .bins
        .iter()
        .map(|b| {
            vec![
                b.bin.to_string(),
                fmt_sig9(b.mean_p),
                fmt_sig9(b.accuracy),
                b.count.to_string(),
            ]
        })
        .collect()
}

pub fn sweep_csv_rows(points: &[SweepPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                fmt_sig9(p.alpha_sparsity),
                opt(p.nnz),
                opt(p.accuracy),
                opt(p.pavpu),
                csv_field(&p.status),
            ]
        })
        .collect()
}

/// Quotes a free-text CSV field when needed.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
