//! CSV output for traces and benchmark tables.
//!
//! Trace files have one row per sampling instant and the header
//!
//! ```text
//! t,x1..xn,xm1..xmn,u1..um,stage_cost,value,latency,clamped,infeasible
//! ```
//!
//! where `x*` are true levels, `xm*` measured levels and `u*` the applied
//! absolute inputs. Floats are written in shortest round-trip form, so a
//! file read back reproduces the trace exactly.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::bench::BenchReport;
use crate::error::{AdpError, Result};
use crate::sim::{SimTrace, StepRecord};

fn csv_err(path: &Path, e: csv::Error) -> AdpError {
    AdpError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_owned()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xm{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend(["stage_cost", "value", "latency", "clamped", "infeasible"].map(String::from));
    h
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `trace`; an empty trace gives a header-only file with the given
/// dimensions.
pub fn write_trace_csv(trace: &SimTrace, n: usize, m: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(trace_header(n, m)).map_err(|e| csv_err(path, e))?;
    for r in &trace.records {
        let mut row = vec![num(r.t)];
        row.extend(r.x_true.iter().map(|v| num(*v)));
        row.extend(r.x_measured.iter().map(|v| num(*v)));
        row.extend(r.u.iter().map(|v| num(*v)));
        row.extend([num(r.stage_cost), num(r.value), num(r.latency)]);
        row.extend([(r.clamped as u8).to_string(), (r.infeasible as u8).to_string()]);
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AdpError::io(path, e))
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path, sample_time: f64) -> Result<SimTrace> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = header.iter().filter(|h| h.starts_with('x') && !h.starts_with("xm")).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header.iter().collect::<Vec<_>>() != trace_header(n, m) {
        return Err(AdpError::Format {
            line: 1,
            reason: format!("unexpected trace header in {}", path.display()),
        });
    }
    let mut records = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| AdpError::Format {
            line: i + 2,
            reason: format!("bad {what} in {}", path.display()),
        };
        let f: Vec<f64> = row
            .iter()
            .take(1 + 2 * n + m + 3)
            .map(|s| s.parse::<f64>().map_err(|_| bad("number")))
            .collect::<Result<_>>()?;
        let flag = |s: Option<&str>| match s {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            _ => Err(bad("flag")),
        };
        records.push(StepRecord {
            t: f[0],
            x_true: f[1..1 + n].to_vec(),
            x_measured: f[1 + n..1 + 2 * n].to_vec(),
            u: f[1 + 2 * n..1 + 2 * n + m].to_vec(),
            stage_cost: f[1 + 2 * n + m],
            value: f[2 + 2 * n + m],
            latency: f[3 + 2 * n + m],
            clamped: flag(row.get(4 + 2 * n + m))?,
            infeasible: flag(row.get(5 + 2 * n + m))?,
        });
    }
    Ok(SimTrace {
        strategy: None,
        sample_time,
        records,
        failure: None,
    })
}

/// Writes the benchmark table as CSV plus an aligned text copy next to it
/// (same stem, `.txt`).
pub fn write_bench(report: &BenchReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "strategy",
        "mean_latency_s",
        "median_latency_s",
        "p99_latency_s",
        "ise",
        "final_error",
        "total_variation",
        "set_size",
        "steps",
        "infeasible_steps",
        "failure",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in &report.rows {
        w.write_record([
            r.strategy.name().to_owned(),
            num(r.mean_latency),
            num(r.median_latency),
            num(r.p99_latency),
            num(r.ise),
            num(r.final_error),
            num(r.total_variation),
            r.set_size.to_string(),
            r.steps.to_string(),
            r.infeasible_steps.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AdpError::io(path, e))?;
    let txt = path.with_extension("txt");
    File::create(&txt)
        .and_then(|mut f| f.write_all(report.to_table().as_bytes()))
        .map_err(|e| AdpError::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trace_header(2, 1).join(","),
            "t,x1,x2,xm1,xm2,u1,stage_cost,value,latency,clamped,infeasible"
        );
    }
}
