//! File formats: unit and observation CSVs, fit tables (CSV or JSON lines),
//! comparison reports and sweep output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! table re-parses to bit-identical values. Figure tables use a fixed
//! 17-significant-digit scientific format instead.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics::ComparisonReport;
use crate::error::{invalid, Error, Result};
use crate::estimators::{FitResult, Method};
use crate::model::{Assignment, Dataset, ObservationRecord, UnitRecord};
use crate::sim::{FigureRow, SweepReport};

/// Serde adapter for floats that may be infinite or NaN, which JSON cannot
/// represent as numbers. Non-finite values are written as the strings
/// `"inf"`, `"-inf"` and `"NaN"`.
pub mod nonfinite {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct F64Visitor;

    impl Visitor<'_> for F64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"NaN\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "NaN" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64Visitor)
    }
}

/// Output format for fit tables and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" | "json" => Ok(Format::JsonLines),
            _ => Err(invalid(format!("unknown format `{s}` (expected csv or jsonl)"))),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Column lookup over a validated header.
struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, mandatory: &[&str], optional: &[&str]) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if !mandatory.contains(&h) && !optional.contains(&h) {
                return Err(invalid(format!("unknown column `{h}`")));
            }
            if index.insert(h.to_string(), i).is_some() {
                return Err(invalid(format!("column `{h}` appears twice")));
            }
        }
        if let Some(missing) = mandatory.iter().find(|c| !index.contains_key(**c)) {
            return Err(Error::SchemaError(missing.to_string()));
        }
        Ok(Columns { index })
    }
}

/// One data row plus the file line it came from, for error messages.
struct Row<'a> {
    record: &'a csv::StringRecord,
    columns: &'a Columns,
    line: u64,
}

impl Row<'_> {
    fn raw(&self, column: &str) -> Option<&str> {
        self.columns
            .index
            .get(column)
            .and_then(|&i| self.record.get(i))
    }

    fn fail(&self, column: &str, reason: impl Into<String>) -> Error {
        Error::ParseError {
            row: self.line,
            column: column.to_string(),
            value: self.raw(column).unwrap_or("").to_string(),
            reason: reason.into(),
        }
    }

    fn text(&self, column: &str) -> Result<String> {
        match self.raw(column) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(self.fail(column, "empty value")),
        }
    }

    fn parse<T: FromStr>(&self, column: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.raw(column).unwrap_or("");
        s.parse::<T>().map_err(|e| self.fail(column, e.to_string()))
    }

    fn finite(&self, column: &str) -> Result<f64> {
        let v: f64 = self.parse(column)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.fail(column, "not a finite number"))
        }
    }

    /// Blank or absent cells are `None`.
    fn optional_finite(&self, column: &str) -> Result<Option<f64>> {
        match self.raw(column) {
            None | Some("") => Ok(None),
            Some(_) => self.finite(column).map(Some),
        }
    }

    fn binary(&self, column: &str) -> Result<u8> {
        match self.raw(column) {
            Some("0") => Ok(0),
            Some("1") => Ok(1),
            _ => Err(self.fail(column, "expected 0 or 1")),
        }
    }
}

fn for_each_row(
    reader: impl Read,
    mandatory: &[&str],
    optional: &[&str],
    mut f: impl FnMut(&Row) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let columns = Columns::new(&headers, mandatory, optional)?;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map_or(0, |p| p.line());
        f(&Row {
            record: &record,
            columns: &columns,
            line,
        })?;
    }
    Ok(())
}

const UNIT_MANDATORY: [&str; 4] = ["unit_id", "assignment", "n_obs", "mean_response"];
const UNIT_OPTIONAL: [&str; 2] = ["trigger_intensity", "estimated_trigger_intensity"];

pub fn read_units(reader: impl Read) -> Result<Dataset> {
    let mut units = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for_each_row(reader, &UNIT_MANDATORY, &UNIT_OPTIONAL, |row| {
        let unit_id = row.text("unit_id")?;
        if seen.insert(unit_id.clone(), ()).is_some() {
            return Err(Error::DuplicateUnit(unit_id));
        }
        let assignment = Assignment::from_flag(row.binary("assignment")?).expect("0 or 1");
        let n_obs: u64 = row.parse("n_obs")?;
        if n_obs == 0 {
            return Err(row.fail("n_obs", "must be at least 1"));
        }
        let intensity = |col: &str| -> Result<Option<f64>> {
            let v = row.optional_finite(col)?;
            match v {
                Some(r) if !(0.0..=1.0).contains(&r) => Err(row.fail(col, "outside [0, 1]")),
                _ => Ok(v),
            }
        };
        units.push(UnitRecord {
            true_trigger_intensity: intensity("trigger_intensity")?,
            estimated_trigger_intensity: intensity("estimated_trigger_intensity")?,
            unit_id,
            assignment,
            n_obs,
            mean_response: row.finite("mean_response")?,
        });
        Ok(())
    })?;
    Dataset::new(units)
}

pub fn parse_unit_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_units(open(path.as_ref())?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a unit table. Optional intensity columns are emitted only when at
/// least one unit carries the value.
pub fn write_units(writer: impl Write, dataset: &Dataset) -> Result<()> {
    let units = dataset.units();
    let with_true = units.iter().any(|u| u.true_trigger_intensity.is_some());
    let with_est = units.iter().any(|u| u.estimated_trigger_intensity.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<&str> = UNIT_MANDATORY.to_vec();
    if with_true {
        header.push("trigger_intensity");
    }
    if with_est {
        header.push("estimated_trigger_intensity");
    }
    w.write_record(&header).map_err(csv_error)?;
    for u in units {
        let mut rec = vec![
            u.unit_id.clone(),
            u.assignment.flag().to_string(),
            u.n_obs.to_string(),
            u.mean_response.to_string(),
        ];
        if with_true {
            rec.push(opt(u.true_trigger_intensity));
        }
        if with_est {
            rec.push(opt(u.estimated_trigger_intensity));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unit_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_units(create(path.as_ref())?, dataset)
}

pub fn read_observations(reader: impl Read) -> Result<Vec<ObservationRecord>> {
    let mut out = Vec::new();
    for_each_row(reader, &["unit_id", "response"], &["trigger_status"], |row| {
        let trigger_status = match row.raw("trigger_status") {
            None | Some("") => None,
            Some(_) => Some(row.binary("trigger_status")? == 1),
        };
        out.push(ObservationRecord {
            unit_id: row.text("unit_id")?,
            response: row.finite("response")?,
            trigger_status,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_observation_csv(path: impl AsRef<Path>) -> Result<Vec<ObservationRecord>> {
    read_observations(open(path.as_ref())?)
}

pub fn write_observations(writer: impl Write, observations: &[ObservationRecord]) -> Result<()> {
    let with_status = observations.iter().any(|o| o.trigger_status.is_some());
    // Hand-rolled: this is the hot path of `simulate` and ids never need quoting.
    let mut w = BufWriter::new(writer);
    if with_status {
        writeln!(w, "unit_id,response,trigger_status")?;
    } else {
        writeln!(w, "unit_id,response")?;
    }
    for o in observations {
        if o.unit_id.contains([',', '"', '\n', '\r']) {
            return Err(invalid(format!("unit id `{}` needs CSV quoting", o.unit_id)));
        }
        if with_status {
            let s = o.trigger_status.map_or("", |t| if t { "1" } else { "0" });
            writeln!(w, "{},{},{}", o.unit_id, o.response, s)?;
        } else {
            writeln!(w, "{},{}", o.unit_id, o.response)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_observation_csv(path: impl AsRef<Path>, observations: &[ObservationRecord]) -> Result<()> {
    write_observations(create(path.as_ref())?, observations)
}

/// A fit tagged with the treatment it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub treatment_id: String,
    #[serde(flatten)]
    pub fit: FitResult,
}

const FIT_COLUMNS: [&str; 13] = [
    "treatment_id",
    "method",
    "coefficients",
    "ate",
    "residual_variance",
    "se_ate",
    "t_value",
    "ci_low",
    "ci_high",
    "ci_level",
    "dof",
    "n_units",
    "reduced_design",
];

pub fn write_fits(writer: impl Write, records: &[FitRecord], format: Format) -> Result<()> {
    match format {
        Format::JsonLines => {
            let mut w = BufWriter::new(writer);
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.to_string()))?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(FIT_COLUMNS).map_err(csv_error)?;
            for r in records {
                let f = &r.fit;
                let coefs: Vec<String> = f.coefficients.iter().map(f64::to_string).collect();
                w.write_record([
                    r.treatment_id.clone(),
                    f.method.as_str().to_string(),
                    coefs.join(";"),
                    f.ate.to_string(),
                    f.residual_variance.to_string(),
                    f.se_ate.to_string(),
                    f.t_value.to_string(),
                    f.ci.0.to_string(),
                    f.ci.1.to_string(),
                    f.ci_level.to_string(),
                    f.dof.to_string(),
                    f.n_units.to_string(),
                    f.reduced_design.to_string(),
                ])
                .map_err(csv_error)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn read_fits_csv(reader: impl Read) -> Result<Vec<FitRecord>> {
    let mut out = Vec::new();
    for_each_row(reader, &FIT_COLUMNS, &[], |row| {
        let method = Method::parse(&row.text("method")?).map_err(|_| row.fail("method", "unknown method"))?;
        let coefficients = row
            .text("coefficients")?
            .split(';')
            .map(|s| s.parse::<f64>().map_err(|e| row.fail("coefficients", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(FitRecord {
            treatment_id: row.text("treatment_id")?,
            fit: FitResult {
                method,
                coefficients,
                ate: row.parse("ate")?,
                residual_variance: row.parse("residual_variance")?,
                se_ate: row.parse("se_ate")?,
                t_value: row.parse("t_value")?,
                ci: (row.parse("ci_low")?, row.parse("ci_high")?),
                ci_level: row.parse("ci_level")?,
                dof: row.parse("dof")?,
                n_units: row.parse("n_units")?,
                reduced_design: row.parse("reduced_design")?,
            },
        });
        Ok(())
    })?;
    Ok(out)
}

fn read_fits_jsonl(text: &str) -> Result<Vec<FitRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::ParseError {
                row: i as u64 + 1,
                column: String::new(),
                value: String::new(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Read a fit table in either format; JSON lines are recognized by a leading `{`.
pub fn read_fits(mut reader: impl Read) -> Result<Vec<FitRecord>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    if text.trim_start().starts_with('{') {
        read_fits_jsonl(&text)
    } else {
        read_fits_csv(text.as_bytes())
    }
}

pub fn parse_fit_table(path: impl AsRef<Path>) -> Result<Vec<FitRecord>> {
    read_fits(open(path.as_ref())?)
}

/// A comparison report as `key,value` CSV or a single JSON object.
pub fn write_comparison(writer: impl Write, report: &ComparisonReport, format: Format) -> Result<()> {
    let kv = report.to_key_values();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(["key", "value"]).map_err(csv_error)?;
            for (k, v) in &kv {
                w.write_record([k, v]).map_err(csv_error)?;
            }
            w.flush()?;
        }
        Format::JsonLines => {
            let map: serde_json::Map<String, serde_json::Value> = kv
                .into_iter()
                .map(|(k, v)| {
                    let value = match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => serde_json::Value::from(x),
                        _ => serde_json::Value::String(v),
                    };
                    (k, value)
                })
                .collect();
            let mut w = BufWriter::new(writer);
            serde_json::to_writer(&mut w, &map).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

/// 17 significant digits.
fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn sci_opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

const SWEEP_COLUMNS: [&str; 18] = [
    "axis_value",
    "estimator",
    "n_ok",
    "n_failed",
    "failures",
    "true_rho",
    "mean_ate",
    "empirical_bias",
    "bias_se",
    "empirical_se",
    "empirical_var",
    "mean_reported_se",
    "mean_residual_variance",
    "bias_bound",
    "variance_gap",
    "variance_gap_se",
    "variance_gap_bound",
    "axis",
];

/// One row per (grid point, estimator). Failures are `Name:count` pairs
/// joined by `;`.
pub fn write_sweep_report(writer: impl Write, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_COLUMNS).map_err(csv_error)?;
    for r in &report.rows {
        let failures: Vec<String> = r.failures.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        w.write_record([
            sci(r.axis_value),
            r.estimator.as_str().to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            failures.join(";"),
            sci(r.true_rho),
            sci(r.mean_ate),
            sci(r.empirical_bias),
            sci(r.bias_se),
            sci(r.empirical_se),
            sci(r.empirical_var),
            sci(r.mean_reported_se),
            sci(r.mean_residual_variance),
            sci_opt(r.bias_bound),
            sci_opt(r.variance_gap),
            sci_opt(r.variance_gap_se),
            sci_opt(r.variance_gap_bound),
            report.axis.as_str().to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format plot table with header `axis,estimator,metric,value`.
pub fn write_figure(writer: impl Write, rows: &[FigureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["axis", "estimator", "metric", "value"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([sci(r.axis), r.estimator.as_str().to_string(), r.metric.to_string(), sci(r.value)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
