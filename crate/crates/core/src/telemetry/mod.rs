//! Utilization traces, their statistics, and the linear power model.
//!
//! Utilization is a fraction in `[0, 1]` throughout the API and a percent
//! only in traces and printed reports. Power follows
//! `P(u) = P_idle + u * (P_full - P_idle)`; the relative reduction between a
//! base and a loaded configuration is `1 - P_base / P_loaded`.

mod report;
mod sampler;

pub use report::{build_report, Basis, EnergyReport, TraceSummary};
pub use sampler::{collect, sample_host, HostSampler, ReplaySampler, Sample, Sampler};

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelemetryError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("{what} {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("power parameters need p_full > p_idle > 0, got idle {p_idle_w} W, full {p_full_w} W")]
    InvalidPower { p_idle_w: f64, p_full_w: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error("{0}")]
    Io(String),
    #[error("sampler unavailable: {0}")]
    Unavailable(String),
}

/// One sample: seconds since the trace start and utilization in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t_s: f64,
    pub util_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtilizationTrace {
    samples: Vec<TracePoint>,
    pub source_label: String,
}

pub const CSV_HEADER: [&str; 2] = ["t_s", "util_pct"];

impl UtilizationTrace {
    pub fn new(label: impl Into<String>) -> UtilizationTrace {
        UtilizationTrace {
            samples: Vec::new(),
            source_label: label.into(),
        }
    }

    /// Builds a trace sampled once per second from percentages.
    pub fn from_percentages(label: impl Into<String>, pcts: &[f64]) -> Result<UtilizationTrace, TelemetryError> {
        let mut t = UtilizationTrace::new(label);
        for (i, &u) in pcts.iter().enumerate() {
            t.push(i as f64, u)?;
        }
        Ok(t)
    }

    /// Appends a sample; time must not go backwards and `util_pct` must be
    /// within `[0, 100]`.
    pub fn push(&mut self, t_s: f64, util_pct: f64) -> Result<(), TelemetryError> {
        if !t_s.is_finite() || self.samples.last().is_some_and(|p| t_s < p.t_s) {
            return Err(TelemetryError::OutOfRange {
                what: "timestamp",
                value: t_s,
            });
        }
        if !(0.0..=100.0).contains(&util_pct) {
            return Err(TelemetryError::OutOfRange {
                what: "utilization percent",
                value: util_pct,
            });
        }
        self.samples.push(TracePoint { t_s, util_pct });
        Ok(())
    }

    pub fn samples(&self) -> &[TracePoint] {
        &self.samples
    }

    pub fn percentages(&self) -> Vec<f64> {
        self.samples.iter().map(|p| p.util_pct).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Parses the CSV trace format. Errors carry the 1-based line number.
    pub fn read_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<UtilizationTrace, TelemetryError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(TelemetryError::Csv {
                line: 1,
                reason: format!(
                    "expected header `{}`, found `{}`",
                    CSV_HEADER.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut trace = UtilizationTrace::new(label);
        let mut record = csv::StringRecord::new();
        let mut last_line = 1;
        loop {
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(csv_error(&e, last_line + 1)),
            }
            let line = record.position().map(|p| p.line()).unwrap_or(last_line + 1);
            last_line = line;
            let field = |i: usize, name: &str| -> Result<f64, TelemetryError> {
                let raw = record.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| TelemetryError::Csv {
                    line,
                    reason: format!("{name}: {raw:?} is not a number"),
                })
            };
            let t = field(0, "t_s")?;
            let u = field(1, "util_pct")?;
            trace.push(t, u).map_err(|e| TelemetryError::Csv {
                line,
                reason: e.to_string(),
            })?;
        }
        Ok(trace)
    }

    pub fn load_csv(path: &Path) -> Result<UtilizationTrace, TelemetryError> {
        let f = std::fs::File::open(path).map_err(|e| TelemetryError::Io(format!("{}: {e}", path.display())))?;
        UtilizationTrace::read_csv(f, path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TelemetryError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| TelemetryError::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io)?;
        for p in &self.samples {
            w.write_record([p.t_s.to_string(), p.util_pct.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| TelemetryError::Io(e.to_string()))
    }
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> TelemetryError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    TelemetryError::Csv {
        line,
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub mean_pct: f64,
    pub median_pct: f64,
    pub variance: f64,
    pub stddev_pct: f64,
}

/// Mean, median, population variance and standard deviation.
///
/// The standard deviation is computed first and the variance reported as
/// its square, so `stddev * stddev == variance` and
/// `variance.sqrt() == stddev` both hold exactly.
pub fn stats(trace: &UtilizationTrace) -> Result<TraceStats, TelemetryError> {
    stats_of(&trace.percentages())
}

pub fn stats_of(values: &[f64]) -> Result<TraceStats, TelemetryError> {
    if values.is_empty() {
        return Err(TelemetryError::EmptyTrace);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let raw_var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stddev = raw_var.sqrt();
    Ok(TraceStats {
        mean_pct: mean,
        median_pct: median,
        variance: stddev * stddev,
        stddev_pct: stddev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub p_idle_w: f64,
    pub p_full_w: f64,
}

impl PowerParams {
    pub fn new(p_idle_w: f64, p_full_w: f64) -> Result<PowerParams, TelemetryError> {
        let p = PowerParams { p_idle_w, p_full_w };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.p_idle_w > 0.0 && self.p_full_w > self.p_idle_w && self.p_full_w.is_finite() {
            Ok(())
        } else {
            Err(TelemetryError::InvalidPower {
                p_idle_w: self.p_idle_w,
                p_full_w: self.p_full_w,
            })
        }
    }
}

/// Estimated power at utilization fraction `u`.
pub fn power_at(u: f64, p: &PowerParams) -> Result<f64, TelemetryError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(TelemetryError::OutOfRange {
            what: "utilization fraction",
            value: u,
        });
    }
    p.validate()?;
    Ok(p.p_idle_w + u * (p.p_full_w - p.p_idle_w))
}

/// `1 - p_base / p_loaded`.
pub fn energy_reduction(p_base_w: f64, p_loaded_w: f64) -> Result<f64, TelemetryError> {
    if p_loaded_w <= 0.0 || p_loaded_w.is_nan() {
        return Err(TelemetryError::NonPositive("loaded power"));
    }
    Ok(1.0 - p_base_w / p_loaded_w)
}

/// `1 - u_off / u_on`, both in percent.
pub fn load_reduction(u_off_pct: f64, u_on_pct: f64) -> Result<f64, TelemetryError> {
    if u_on_pct <= 0.0 || u_on_pct.is_nan() {
        return Err(TelemetryError::NonPositive("onboard utilization"));
    }
    Ok(1.0 - u_off_pct / u_on_pct)
}
