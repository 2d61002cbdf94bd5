//! CSV and `key=value` files written and read by the CLI.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use cifs_core::calibration::{LambdaScore, LambdaTable};
use cifs_core::es::{EpochTrace, TraceRow};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 6] = ["epoch", "loss", "cifs_bytes", "regularizer", "criterion", "psnr"];

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(path, format!("line {line}: {e}"))
        }
    }
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `path` with the given header, handing each record and its line
/// number to `row`.
fn read_rows<T>(
    path: &Path,
    header: &[&str],
    comments: bool,
    mut row: impl FnMut(&csv::StringRecord, u64) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(comments.then_some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            format!("line 1: expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(row(&rec, line).map_err(|m| Error::parse(path, format!("line {line}: {m}")))?);
    }
    Ok(out)
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column `{name}`"))?;
    raw.parse().map_err(|_| format!("column `{name}`: cannot parse `{raw}`"))
}

pub fn write_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let psnr = r.psnr.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.cifs_bytes.to_string(),
            r.regularizer.to_string(),
            r.criterion.to_string(),
            psnr,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Rows exactly as stored; floats round-trip bit for bit.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    let rows = read_rows(path, &TRACE_HEADER, false, |rec, _| {
        let psnr = match rec.get(5) {
            None | Some("") => None,
            Some(_) => Some(field(rec, 5, "psnr")?),
        };
        Ok(TraceRow {
            epoch: field(rec, 0, "epoch")?,
            loss: field(rec, 1, "loss")?,
            cifs_bytes: field(rec, 2, "cifs_bytes")?,
            regularizer: field(rec, 3, "regularizer")?,
            criterion: field(rec, 4, "criterion")?,
            psnr,
        })
    })?;
    if rows.is_empty() {
        return Err(Error::parse(path, "trace has no rows"));
    }
    if let Some(w) = rows.windows(2).find(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::parse(path, format!("epochs not increasing at epoch {}", w[1].epoch)));
    }
    Ok(rows)
}

/// Rebuilds an [`EpochTrace`] for an image of the given size.
pub fn trace_from_rows(rows: Vec<TraceRow>, height: usize, width: usize, lambda: f64) -> EpochTrace {
    EpochTrace {
        height,
        width,
        lambda,
        rows,
    }
}

/// Ordered `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut out = KeyValues::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            out.push(k.trim(), v.trim());
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::parse(path, m))
    }
}

pub fn format_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

pub fn format_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn read_lambda_table(path: impl AsRef<Path>) -> Result<LambdaTable> {
    let path = path.as_ref();
    let rows = read_rows(path, &["sigma", "lambda"], true, |rec, _| {
        Ok((field::<f64>(rec, 0, "sigma")?, field::<f64>(rec, 1, "lambda")?))
    })?;
    LambdaTable::new(rows).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn parse_lambda_table(text: &str) -> std::result::Result<LambdaTable, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push((field(&rec, 0, "sigma")?, field(&rec, 1, "lambda")?));
    }
    LambdaTable::new(rows).map_err(|e| e.to_string())
}

pub fn write_lambda_table(path: impl AsRef<Path>, table: &LambdaTable, note: &str) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for line in note.lines() {
        text.push_str(&format!("# {line}\n"));
    }
    text.push_str("sigma,lambda\n");
    for (s, l) in table.rows() {
        text.push_str(&format!("{s},{l}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_calibration_report(path: impl AsRef<Path>, scores: &[LambdaScore]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["lambda", "mean_psnr", "std_psnr"]).map_err(|e| csv_err(path, e))?;
    for s in scores {
        w.write_record([s.lambda.to_string(), s.mean_psnr.to_string(), s.std_psnr.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_calibration_report(path: impl AsRef<Path>) -> Result<Vec<LambdaScore>> {
    read_rows(path.as_ref(), &["lambda", "mean_psnr", "std_psnr"], false, |rec, _| {
        Ok(LambdaScore {
            lambda: field(rec, 0, "lambda")?,
            mean_psnr: field(rec, 1, "mean_psnr")?,
            std_psnr: field(rec, 2, "std_psnr")?,
        })
    })
}

pub const REPORT_HEADER: [&str; 7] = ["image", "sigma", "psnr_es", "psnr_no_es", "psnr_peak", "t_star", "fallback"];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image: String,
    pub sigma: f64,
    pub psnr_es: f64,
    pub psnr_no_es: f64,
    pub psnr_peak: f64,
    pub t_star: usize,
    pub fallback: bool,
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            r.sigma.to_string(),
            r.psnr_es.to_string(),
            r.psnr_no_es.to_string(),
            r.psnr_peak.to_string(),
            r.t_star.to_string(),
            r.fallback.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_rows(path.as_ref(), &REPORT_HEADER, false, |rec, _| {
        Ok(ReportRow {
            image: field(rec, 0, "image")?,
            sigma: field(rec, 1, "sigma")?,
            psnr_es: field(rec, 2, "psnr_es")?,
            psnr_no_es: field(rec, 3, "psnr_no_es")?,
            psnr_peak: field(rec, 4, "psnr_peak")?,
            t_star: field(rec, 5, "t_star")?,
            fallback: field(rec, 6, "fallback")?,
        })
    })
}

pub fn write_aggregates(path: impl AsRef<Path>, rows: &[crate::bench::Aggregate]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record([
        "sigma", "count", "mean_psnr_es", "std_psnr_es", "mean_psnr_no_es", "std_psnr_no_es", "mean_psnr_peak",
        "std_psnr_peak",
    ])
    .map_err(|e| csv_err(path, e))?;
    for g in rows {
        w.write_record([
            g.sigma.to_string(),
            g.count.to_string(),
            g.es.mean.to_string(),
            g.es.std.to_string(),
            g.no_es.mean.to_string(),
            g.no_es.std.to_string(),
            g.peak.mean.to_string(),
            g.peak.std.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn write_failures(path: impl AsRef<Path>, rows: &[crate::bench::Failure]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["image", "sigma", "error"]).map_err(|e| csv_err(path, e))?;
    for f in rows {
        w.write_record([f.image.clone(), f.sigma.to_string(), f.error.clone()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}
