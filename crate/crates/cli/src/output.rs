//! CSV and JSON rendering with a fixed number of significant digits.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u64 = 1;
pub const OUTPUT_DIR_VAR: &str = "DLCZ_OUTPUT_DIR";
const UNITS_NOTE: &str = "units: lengths in L_att, times in s, rates in 1/s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// What a subcommand produced: the JSON document and its tabular view.
/// `notes` are named scalars that only fit a CSV comment line.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub json: Map<String, Value>,
    pub table: Table,
    pub notes: Vec<(String, f64)>,
}

/// `%g`-style formatting with `digits` significant digits.
pub fn sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
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

/// Rounds every float in `v` to `digits` significant digits; non-finite
/// values become null.
pub fn round_json(v: &mut Value, digits: usize) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("float");
            *v = serde_json::Number::from_f64(sig(x, digits).parse().unwrap_or(x))
                .map(Value::Number)
                .unwrap_or(Value::Null);
        }
        Value::Array(items) => items.iter_mut().for_each(|i| round_json(i, digits)),
        Value::Object(map) => map.values_mut().for_each(|i| round_json(i, digits)),
        _ => {}
    }
}

pub fn render_json(report: &Report, digits: usize) -> String {
    let mut doc = Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    for (k, v) in &report.json {
        doc.insert(k.clone(), v.clone());
    }
    let mut doc = Value::Object(doc);
    round_json(&mut doc, digits);
    let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
    text.push('\n');
    text
}

pub fn render_csv(report: &Report, digits: usize) -> Result<String, CliError> {
    let mut text = format!("# schema_version={SCHEMA_VERSION}\n# {UNITS_NOTE}\n");
    for (name, v) in &report.notes {
        text.push_str(&format!("# {name}={}\n", sig(*v, digits)));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(&report.table.columns).map_err(io)?;
    for row in &report.table.rows {
        w.write_record(row.iter().map(|c| match c {
            Cell::Num(x) => sig(*x, digits),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }))
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    text.push_str(&String::from_utf8(bytes).expect("csv is utf-8"));
    Ok(text)
}

/// Where output goes: an explicit path, re-rooted under `DLCZ_OUTPUT_DIR` when
/// that is set; `default_name` in that directory; or stdout (`None`).
pub fn destination(explicit: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(OUTPUT_DIR_VAR).filter(|d| !d.is_empty()).map(PathBuf::from);
    match (dir, explicit) {
        (Some(dir), Some(p)) => Some(dir.join(p.file_name().unwrap_or(p.as_os_str()))),
        (Some(dir), None) => Some(dir.join(default_name)),
        (None, Some(p)) => Some(p.to_path_buf()),
        (None, None) => None,
    }
}

pub fn write(text: &str, dest: Option<&Path>) -> Result<(), CliError> {
    let Some(path) = dest else {
        print!("{text}");
        return Ok(());
    };
    let fail = |e: std::io::Error| CliError::Output(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(fail)?;
    }
    std::fs::write(path, text).map_err(fail)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig(2.0 * 2f64.sqrt(), 9), "2.82842712");
        assert_eq!(sig(100f64.exp(), 9), "2.68811714e43");
        assert_eq!(sig(2.0, 9), "2");
        assert_eq!(sig(1e-7, 3), "1e-7");
        assert_eq!(sig(0.0000121951963, 9), "1.21951963e-5");
        assert_eq!(sig(0.000123456, 3), "0.000123");
        assert_eq!(sig(-99999.96, 6), "-100000");
        assert_eq!(sig(f64::INFINITY, 9), "inf");
    }

    #[test]
    fn json_rounding_keeps_integers() {
        let mut v = serde_json::json!({"a": 1.23456789012, "n": 7, "x": f64::NAN});
        round_json(&mut v, 4);
        assert_eq!(v["a"], 1.235);
        assert_eq!(v["n"], 7);
    }
}
