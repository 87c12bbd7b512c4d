//! File formats and data-side corrections.
//!
//! CSV files are comma separated UTF-8 with a mandatory header; lines
//! starting with `#` are ignored. Two layouts are recognized:
//!
//! * per-pulse photocounts, header `pulse,n_s,n_i`;
//! * aggregated NRF curves, header `mean_n,nrf[,nrf_err]` (the curve writer's
//!   `mean_photons` is accepted in place of `mean_n`).
//!
//! Numbers are written with 12 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::fit::{NrfDataset, NrfPoint};
use crate::fock::StateKind;
use crate::mc::{CountSums, CountTable};

/// One discriminated pulse: photocounts registered by both detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseRecord {
    pub pulse: u64,
    pub n_s: u64,
    pub n_i: u64,
}

/// One point of an already reduced NRF curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatedRecord {
    pub mean_n: f64,
    pub nrf: f64,
    pub nrf_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CountsFile {
    Pulses(Vec<PulseRecord>),
    Aggregated(Vec<AggregatedRecord>),
}

impl CountsFile {
    pub fn len(&self) -> usize {
        match self {
            CountsFile::Pulses(r) => r.len(),
            CountsFile::Aggregated(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Layout {
    Pulses { pulse: usize, n_s: usize, n_i: usize },
    Aggregated { mean: usize, nrf: usize, err: Option<usize> },
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads a per-pulse or aggregated CSV file.
pub fn ingest_counts_csv(path: impl AsRef<Path>) -> Result<CountsFile> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let layout = match (
        find(&["pulse"]),
        find(&["n_s"]),
        find(&["n_i"]),
        find(&["mean_n", "mean_photons"]),
        find(&["nrf"]),
    ) {
        (Some(pulse), Some(n_s), Some(n_i), _, _) => Layout::Pulses { pulse, n_s, n_i },
        (_, _, _, Some(mean), Some(nrf)) => Layout::Aggregated {
            mean,
            nrf,
            err: find(&["nrf_err"]),
        },
        _ => {
            return Err(parse_err(
                path,
                1,
                1,
                format!(
                    "unrecognized header `{}` (expected `pulse,n_s,n_i` or `mean_n,nrf[,nrf_err]`)",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ))
        }
    };

    let mut pulses = Vec::new();
    let mut aggregated = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |idx: usize| -> Result<&str> {
            row.get(idx)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| parse_err(path, line, idx + 1, "missing value"))
        };
        match layout {
            Layout::Pulses { pulse, n_s, n_i } => {
                let int = |idx: usize, name: &str| -> Result<u64> {
                    let raw = field(idx)?;
                    raw.parse::<i64>()
                        .map_err(|e| parse_err(path, line, idx + 1, format!("{name}: `{raw}`: {e}")))
                        .and_then(|v| {
                            u64::try_from(v).map_err(|_| {
                                parse_err(path, line, idx + 1, format!("{name} must be >= 0, got {v}"))
                            })
                        })
                };
                pulses.push(PulseRecord {
                    pulse: int(pulse, "pulse")?,
                    n_s: int(n_s, "n_s")?,
                    n_i: int(n_i, "n_i")?,
                });
            }
            Layout::Aggregated { mean, nrf, err } => {
                let real = |idx: usize, name: &str| -> Result<f64> {
                    let raw = field(idx)?;
                    let v: f64 = raw
                        .parse()
                        .map_err(|e| parse_err(path, line, idx + 1, format!("{name}: `{raw}`: {e}")))?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(parse_err(
                            path,
                            line,
                            idx + 1,
                            format!("{name} must be finite and >= 0, got {v}"),
                        ));
                    }
                    Ok(v)
                };
                let nrf_err = match err {
                    Some(idx) if row.get(idx).is_some_and(|s| !s.is_empty()) => {
                        Some(real(idx, "nrf_err")?)
                    }
                    _ => None,
                };
                aggregated.push(AggregatedRecord {
                    mean_n: real(mean, "mean_n")?,
                    nrf: real(nrf, "nrf")?,
                    nrf_err,
                });
            }
        }
    }

    let file = match layout {
        Layout::Pulses { .. } => CountsFile::Pulses(pulses),
        Layout::Aggregated { .. } => CountsFile::Aggregated(aggregated),
    };
    if file.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(file)
}

/// Reads a file that must hold per-pulse records.
pub fn ingest_pulses_csv(path: impl AsRef<Path>) -> Result<Vec<PulseRecord>> {
    let path = path.as_ref();
    match ingest_counts_csv(path)? {
        CountsFile::Pulses(r) => Ok(r),
        CountsFile::Aggregated(_) => Err(parse_err(path, 1, 1, "expected per-pulse records `pulse,n_s,n_i`")),
    }
}

/// Reads an aggregated NRF curve into a fit dataset.
pub fn ingest_dataset_csv(
    path: impl AsRef<Path>,
    state_kind: StateKind,
    fit_ceiling: f64,
) -> Result<NrfDataset> {
    let path = path.as_ref();
    match ingest_counts_csv(path)? {
        CountsFile::Aggregated(r) => Ok(records_to_dataset(&r, state_kind, fit_ceiling)),
        CountsFile::Pulses(_) => Err(parse_err(path, 1, 1, "expected aggregated records `mean_n,nrf[,nrf_err]`")),
    }
}

pub fn records_to_dataset(records: &[AggregatedRecord], state_kind: StateKind, fit_ceiling: f64) -> NrfDataset {
    let points = records
        .iter()
        .map(|r| NrfPoint {
            mean_photons: r.mean_n,
            nrf: r.nrf,
            nrf_error: r.nrf_err,
        })
        .collect();
    NrfDataset::new(state_kind, points).with_fit_ceiling(fit_ceiling)
}

/// Subtracts dark/ambient mean counts measured with the source blocked.
///
/// Only means are corrected; the background's contribution to the variance
/// is left in the data. Results below zero are clamped to zero.
pub fn subtract_background(mean_s: f64, mean_i: f64, dark_mean_s: f64, dark_mean_i: f64) -> (f64, f64) {
    let s = mean_s - dark_mean_s;
    let i = mean_i - dark_mean_i;
    if s < 0.0 || i < 0.0 {
        log::warn!(
            "background exceeds signal (signal {mean_s}, {mean_i}; dark {dark_mean_s}, {dark_mean_i}); clamping to 0"
        );
    }
    (s.max(0.0), i.max(0.0))
}

/// Mean photon number from mean photocounts, `counts / eta_E`.
pub fn counts_to_photons(mean_photocounts: f64, eta_effective: f64) -> Result<f64> {
    if !(eta_effective > 0.0 && eta_effective <= 2.0) {
        return Err(Error::invalid(
            "eta_effective",
            format!("must lie in (0, 2], got {eta_effective}"),
        ));
    }
    if !(mean_photocounts >= 0.0 && mean_photocounts.is_finite()) {
        return Err(Error::invalid(
            "mean_photocounts",
            format!("must be finite and >= 0, got {mean_photocounts}"),
        ));
    }
    Ok(mean_photocounts / eta_effective)
}

/// [`counts_to_photons`] with the relative uncertainty of `eta_E` carried
/// over to the photon number.
pub fn counts_to_photons_with_error(
    mean_photocounts: f64,
    eta_effective: f64,
    eta_effective_err: f64,
) -> Result<(f64, f64)> {
    if !(eta_effective_err >= 0.0) {
        return Err(Error::invalid("eta_effective_err", "must be >= 0"));
    }
    let photons = counts_to_photons(mean_photocounts, eta_effective)?;
    Ok((photons, photons * eta_effective_err / eta_effective))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalNrf {
    pub nrf: f64,
    pub mean_s: f64,
    pub mean_i: f64,
    /// Unbiased sample variance of `N_s - N_i`.
    pub variance: f64,
}

/// NRF of per-pulse records from their sample moments.
pub fn compute_nrf_from_records(records: &[PulseRecord]) -> Result<EmpiricalNrf> {
    if records.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 pulses, got {}",
            records.len()
        )));
    }
    let mut sums = CountSums::default();
    for r in records {
        sums.add(r.n_s as usize, r.n_i as usize);
    }
    let m = sums.moments();
    Ok(EmpiricalNrf {
        nrf: sums.nrf()?,
        mean_s: m.mean_s,
        mean_i: m.mean_i,
        variance: sums.variance_of_difference()?,
    })
}

pub fn records_to_table(records: &[PulseRecord]) -> CountTable {
    records
        .iter()
        .map(|r| (r.n_s as usize, r.n_i as usize))
        .collect()
}

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest decimal text of `x` rounded to 12 significant digits.
pub fn format_sig12(x: f64) -> String {
    format!("{}", round_sig12(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub mean_photons: f64,
    pub nrf: f64,
    pub nrf_err: Option<f64>,
}

/// Writes `mean_photons,nrf[,nrf_err]` rows.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("rows", "nothing to write"));
    }
    let with_err = rows.iter().any(|r| r.nrf_err.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_err {
        w.write_record(["mean_photons", "nrf", "nrf_err"])?;
    } else {
        w.write_record(["mean_photons", "nrf"])?;
    }
    for r in rows {
        let mut rec = vec![format_sig12(r.mean_photons), format_sig12(r.nrf)];
        if with_err {
            rec.push(r.nrf_err.map(format_sig12).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_curve_csv(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    write_curve_csv(rows, BufWriter::new(File::create(path)?))
}

/// Writes `pulse,n_s,n_i` rows numbered from 0.
pub fn write_pulses_csv<W: Write>(pulses: &[(usize, usize)], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "pulse,n_s,n_i")?;
    for (idx, (a, b)) in pulses.iter().enumerate() {
        writeln!(w, "{idx},{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_pulses_csv(pulses: &[(usize, usize)], path: impl AsRef<Path>) -> Result<()> {
    write_pulses_csv(pulses, File::create(path)?)
}

fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig12(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with every float rounded to 12 significant digits and keys
/// in sorted order.
pub fn summary_json_string<T: Serialize>(summary: &T) -> Result<String> {
    let value = round_json(serde_json::to_value(summary)?);
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_summary_json<T: Serialize>(summary: &T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, summary_json_string(summary)?)?;
    Ok(())
}

/// Mean-photon-number grid for curve generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub log: bool,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min.is_finite()) {
            return Err(Error::invalid("mean-min", format!("must be > 0, got {}", self.min)));
        }
        if !(self.max >= self.min && self.max.is_finite()) {
            return Err(Error::invalid(
                "mean-max",
                format!("must be >= mean-min, got {}", self.max),
            ));
        }
        if self.count < 1 {
            return Err(Error::invalid("points", "must be >= 1"));
        }
        Ok(())
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        self.validate()?;
        if self.count == 1 {
            return Ok(vec![self.min]);
        }
        let steps = (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| {
                let t = i as f64 / steps;
                if self.log {
                    (self.min.ln() + t * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + t * (self.max - self.min)
                }
            })
            .collect())
    }
}

/// Echo of a command-line run, recorded in JSON summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub state: StateKind,
    pub params_s: DetectorParams,
    pub params_i: DetectorParams,
    pub grid: Option<GridSpec>,
    pub mean: Option<f64>,
    pub pulses: Option<u64>,
    pub seed: Option<u64>,
    pub nmax_candidates: Vec<usize>,
    pub fit_ceiling: f64,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub tail_tol: f64,
}
