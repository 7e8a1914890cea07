//! Design files, number formatting and table output.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use gbd_core::{Design, Factor, Matrix, StratumStructure};

use crate::CliError;

/// Formats `x` with 12 significant digits, `%g` style.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mant.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to 12 significant digits, or null when not finite.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        let r: f64 = fmt_g(x).parse().expect("round trip");
        serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
    } else {
        Value::Null
    }
}

pub fn design_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a design CSV whose header names every factor once, in any order,
/// and checks it against the factors and structure.
pub fn read_design(path: &Path, factors: &[Factor], structure: &StratumStructure) -> Result<Design, CliError> {
    let fail = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| fail(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if let Some((i, h)) = header.iter().enumerate().find(|(i, h)| header[..*i].contains(h)) {
        return Err(fail(format!("column `{h}` appears twice (column {})", i + 1)));
    }
    let mut column_of = Vec::with_capacity(factors.len());
    for f in factors {
        match header.iter().position(|h| h == f.name()) {
            Some(c) => column_of.push(c),
            None => return Err(fail(format!("missing column for factor `{}`", f.name()))),
        }
    }
    if let Some(extra) = header.iter().find(|h| !factors.iter().any(|f| f.name() == h.as_str())) {
        return Err(fail(format!("column `{extra}` is not a declared factor")));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        for (f, &c) in factors.iter().zip(&column_of) {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell
                .parse()
                .map_err(|_| fail(format!("run {} factor `{}`: `{cell}` is not a number", i + 1, f.name())))?;
            values.push(v);
        }
        rows += 1;
    }
    let settings = Matrix::from_row_slice(rows, factors.len(), &values).map_err(|e| fail(e.to_string()))?;
    let design = Design::new(settings);
    design.validate(factors, structure).map_err(|e| fail(e.to_string()))?;
    Ok(design)
}

pub fn design_csv(design: &Design, factors: &[Factor]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(factors.iter().map(Factor::name)).expect("in-memory write");
    for i in 0..design.n() {
        w.write_record(design.settings().row(i).iter().map(|&v| fmt_g(v)))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// A flat table of JSON values, written as CSV or as a JSON array of
/// records.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(cell_text)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self.header.iter().cloned().zip(row.iter().cloned()).collect();
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&records).expect("serializable");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), fmt_g),
        other => other.to_string(),
    }
}

/// Files to write once every computation has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, contents: String) {
        self.files.push((path, contents));
    }

    pub fn write(self) -> Result<Vec<PathBuf>, CliError> {
        let mut written = Vec::new();
        for (path, contents) in self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(&path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}
