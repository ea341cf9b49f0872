//! Side-by-side comparison of several controllers on one scenario.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerSpec, Strategy, ValueSource};
use crate::error::Result;
use crate::sim::{compute_ise, final_error, run_closed_loop, total_variation, Scenario, SimTrace};

/// Steps at the start of each run left out of the timing statistics.
pub const WARMUP_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p99_latency: f64,
    pub ise: f64,
    pub final_error: f64,
    pub total_variation: f64,
    /// Matrices evaluated per candidate (domain set for regional maps).
    pub set_size: usize,
    pub steps: usize,
    pub infeasible_steps: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, s: Strategy) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.strategy == s)
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10} {:>6} {:>7}  {}",
            "strategy", "mean [s]", "median [s]", "p99 [s]", "ISE", "final err", "TV(u)", "|P|", "steps", "status"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.6} {:>12.4e} {:>10.4} {:>6} {:>7}  {}",
                r.strategy.name(),
                r.mean_latency,
                r.median_latency,
                r.p99_latency,
                r.ise,
                r.final_error,
                r.total_variation,
                r.set_size,
                r.steps,
                r.failure.as_deref().unwrap_or("ok")
            );
        }
        out
    }
}

/// Mean, median and nearest-rank 99th percentile.
pub fn latency_stats(samples: &[f64]) -> (f64, f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let median = if s.len() % 2 == 1 {
        s[s.len() / 2]
    } else {
        0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
    };
    let rank = ((0.99 * s.len() as f64).ceil() as usize).clamp(1, s.len());
    (mean, median, s[rank - 1])
}

fn set_size(spec: &ControllerSpec) -> usize {
    match spec.value() {
        ValueSource::Set(s) => s.len(),
        ValueSource::Regions(r) => r.domain().len(),
    }
}

pub fn summarize(trace: &SimTrace, spec: &ControllerSpec, scenario: &Scenario) -> BenchRow {
    let x_r = scenario.setpoint.x_r.as_slice();
    let timed: Vec<f64> = trace.records.iter().skip(WARMUP_STEPS).map(|r| r.latency).collect();
    let (mean, median, p99) = latency_stats(&timed);
    BenchRow {
        strategy: spec.strategy(),
        mean_latency: mean,
        median_latency: median,
        p99_latency: p99,
        ise: compute_ise(trace, x_r),
        final_error: final_error(trace, x_r).unwrap_or(f64::NAN),
        total_variation: total_variation(trace),
        set_size: set_size(spec),
        steps: trace.len(),
        infeasible_steps: trace.infeasible_steps(),
        failure: trace.failure.clone(),
    }
}

/// Runs every spec on the same scenario. With `parallel` the runs share the
/// rayon pool, which is faster but perturbs the latency figures.
pub fn benchmark(scenario: &Scenario, specs: &[ControllerSpec], parallel: bool) -> Result<(BenchReport, Vec<SimTrace>)> {
    let run = |spec: &ControllerSpec| -> Result<(BenchRow, SimTrace)> {
        let trace = run_closed_loop(scenario, spec)?;
        Ok((summarize(&trace, spec, scenario), trace))
    };
    let results: Vec<Result<(BenchRow, SimTrace)>> = if parallel {
        specs.par_iter().map(run).collect()
    } else {
        specs.iter().map(run).collect()
    };
    let mut rows = Vec::with_capacity(specs.len());
    let mut traces = Vec::with_capacity(specs.len());
    for r in results {
        let (row, trace) = r?;
        rows.push(row);
        traces.push(trace);
    }
    Ok((BenchReport { rows }, traces))
}
