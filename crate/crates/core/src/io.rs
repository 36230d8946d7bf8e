//! Ensemble and time-series CSV files and JSON output.
//!
//! Every float is written with 17 significant digits, enough for an exact
//! round trip. CSV files start with a `#` comment line carrying the tool
//! version, the snapshot time `t` where applicable, and the resolved
//! configuration as `key=value` pairs.

use std::io::{Read, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::diagnostics::TimeSeries;
use crate::error::{Error, Result};
use crate::phase::{Ensemble, Particle};

pub const TOOL_NAME: &str = "shellcollapse";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const ENSEMBLE_COLUMNS: [&str; 5] = ["index", "R", "W", "L", "weight"];
pub const SERIES_COLUMNS: [&str; 8] = [
    "t",
    "sup_rho",
    "sup_field",
    "r_min",
    "r_max",
    "kinetic",
    "field_energy",
    "total_energy",
];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header_line(time: Option<f64>, config: &[(String, String)]) -> String {
    let mut line = format!("# {TOOL_NAME} {VERSION}");
    if let Some(t) = time {
        line.push_str(&format!(" t={}", fmt_f64(t)));
    }
    for (k, v) in config {
        line.push_str(&format!(" {k}={v}"));
    }
    line
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn write_ensemble_csv<W: Write>(
    out: &mut W,
    e: &Ensemble,
    config: &[(String, String)],
) -> Result<()> {
    writeln!(out, "{}", header_line(Some(e.time()), config))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENSEMBLE_COLUMNS).map_err(csv_error)?;
    for (i, p) in e.particles().iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(p.radius),
            fmt_f64(p.momentum),
            fmt_f64(p.ang_mom_sq),
            fmt_f64(p.weight),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field(s: &str, line: u64, column: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse {column} value {s:?}")))
}

/// Reads an ensemble written by [`write_ensemble_csv`]. The snapshot time
/// comes from the `t=` key of the comment line, defaulting to 0.
pub fn read_ensemble_csv<R: Read>(input: &mut R) -> Result<Ensemble> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::Format(format!("input is not UTF-8 text: {e}")))?;

    let mut time = 0.0;
    for line in text.lines().filter(|l| l.starts_with('#')) {
        if let Some(v) = line
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("t="))
        {
            time = parse_field(v, 1, "time")?;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().ne(ENSEMBLE_COLUMNS) {
        return Err(Error::Format(format!(
            "expected columns {}, found {:?}",
            ENSEMBLE_COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>()
        )));
    }

    let mut particles = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let index: usize = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad index {:?}", &record[0])))?;
        if index != particles.len() {
            return Err(Error::Format(format!(
                "line {line}: expected index {}, found {index}",
                particles.len()
            )));
        }
        particles.push(Particle::new(
            parse_field(&record[1], line, "R")?,
            parse_field(&record[2], line, "W")?,
            parse_field(&record[3], line, "L")?,
            parse_field(&record[4], line, "weight")?,
        ));
    }
    if particles.is_empty() {
        return Err(Error::Format("ensemble file contains no particles".into()));
    }
    Ensemble::new(particles, time).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_series_csv<W: Write>(
    out: &mut W,
    series: &TimeSeries,
    config: &[(String, String)],
) -> Result<()> {
    writeln!(out, "{}", header_line(None, config))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_COLUMNS).map_err(csv_error)?;
    for r in series.rows() {
        w.write_record(
            [
                r.t,
                r.sup_rho,
                r.sup_field,
                r.r_min,
                r.r_max,
                r.kinetic,
                r.field_energy,
                r.total_energy,
            ]
            .map(fmt_f64),
        )
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON formatter that writes floats with 17 significant digits.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty-printed JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
