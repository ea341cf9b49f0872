//! A posteriori Lyapunov check of the closed loop on a state grid.
//!
//! With `J(x)` the controller objective at `x` and `x⁺ = f(x, v*(x))`, every
//! grid point outside a small ball around the origin gets
//! `c(x) = [J(x⁺) − J(x)] / ‖x‖²`. The decrease is certified on the grid when
//! `c₂ = −max c(x) > 0`; the claim holds only up to the grid resolution.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{decide, ControllerSpec};
use crate::error::{AdpError, Result};
use crate::linalg::{self, min_eigenvalue};
use crate::plant::NonlinearPlant;
use crate::polytope::{axis_points, tensor_product, Polytope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpec {
    /// Points per axis over the bounding box, ends included.
    PointsPerAxis(usize),
    /// Spacing per axis, e.g. `1e-3`.
    Step(f64),
}

#[derive(Debug, Clone)]
pub struct AuditConfig {
    /// Region to test, in the controller's (error) coordinates.
    pub region: Polytope,
    pub grid: GridSpec,
    pub exclusion_radius: f64,
    /// Log progress every tenth of the grid.
    pub progress: bool,
}

impl AuditConfig {
    pub fn new(region: Polytope) -> Self {
        AuditConfig {
            region,
            grid: GridSpec::PointsPerAxis(21),
            exclusion_radius: 1e-4,
            progress: false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.grid {
            GridSpec::PointsPerAxis(k) if k < 2 => {
                return Err(AdpError::invalid("audit grid", "needs at least two points per axis"))
            }
            GridSpec::Step(h) if !(h > 0.0) || !h.is_finite() => {
                return Err(AdpError::invalid("audit grid", format!("step {h} must be positive")))
            }
            _ => {}
        }
        if !(self.exclusion_radius > 0.0) || !self.exclusion_radius.is_finite() {
            return Err(AdpError::invalid(
                "exclusion radius",
                format!("{} must be positive", self.exclusion_radius),
            ));
        }
        Ok(())
    }

    /// Grid points inside the region and the largest per-axis spacing.
    pub fn points(&self) -> Result<(Vec<Vec<f64>>, f64)> {
        self.validate()?;
        let (lo, hi) = self.region.bounding_box()?;
        let counts: Vec<usize> = match self.grid {
            GridSpec::PointsPerAxis(k) => vec![k; lo.len()],
            GridSpec::Step(h) => lo.iter().zip(&hi).map(|(l, u)| ((u - l) / h).round() as usize + 1).collect(),
        };
        let axes: Vec<Vec<f64>> = (0..lo.len()).map(|i| axis_points(lo[i], hi[i], counts[i])).collect();
        let step = (0..lo.len())
            .map(|i| if counts[i] > 1 { (hi[i] - lo[i]) / (counts[i] - 1) as f64 } else { 0.0 })
            .fold(0.0, f64::max);
        let points = tensor_product(&axes)
            .into_iter()
            .filter(|x| self.region.contains(x))
            .collect();
        Ok((points, step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedDecrease,
    Violated,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::CertifiedDecrease => "certified-decrease",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `λ_min(Q)`, the lower-bound constant.
    pub c1: f64,
    /// `−max c(x)` over the tested points.
    pub c2: f64,
    /// State attaining `max c(x)`.
    pub worst_state: Vec<f64>,
    pub points_tested: usize,
    pub points_excluded: usize,
    /// Largest grid spacing and the number of decimal digits it resolves.
    pub grid_step: f64,
    pub precision_digits: i32,
    pub verdict: Verdict,
    /// `J(0)`; subtracted before checking `J(x) ≥ c₁‖x‖²`.
    pub value_at_origin: f64,
    /// Points where `J(x) − J(0) < c₁‖x‖²` (up to rounding).
    pub lower_bound_violations: usize,
    /// Sampled Lipschitz constant of the plant map over the grid.
    pub lipschitz: Option<f64>,
    /// States where `c(x)` could not be evaluated, with the reason.
    pub failures: Vec<(Vec<f64>, String)>,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict            {}", self.verdict)?;
        writeln!(f, "c1                 {:.6e}", self.c1)?;
        writeln!(f, "c2                 {:.6e}", self.c2)?;
        writeln!(f, "worst state        {:?}", self.worst_state)?;
        writeln!(f, "points tested      {} ({} excluded near the origin)", self.points_tested, self.points_excluded)?;
        writeln!(
            f,
            "grid step          {:.3e} (holds to {} digit(s) of precision)",
            self.grid_step, self.precision_digits
        )?;
        writeln!(f, "J(0) offset        {:.6e}", self.value_at_origin)?;
        writeln!(f, "lower-bound misses {}", self.lower_bound_violations)?;
        if let Some(l) = self.lipschitz {
            writeln!(f, "lipschitz (f)      {l:.6}")?;
        }
        for (x, why) in &self.failures {
            writeln!(f, "failed at {x:?}: {why}")?;
        }
        Ok(())
    }
}

/// Controller objective at `x`. For ADP laws this is
/// `L(x, v*) + x̄₊ᵀ P̄_{i*} x̄₊`; for the exhaustive search, its optimum.
pub fn closed_loop_cost(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<f64> {
    let d = decide(x, spec, plant)?;
    Ok(d.stage2_value.unwrap_or(d.stage1_value))
}

enum PointOutcome {
    Excluded,
    Tested { c: f64, below_bound: bool },
    Failed(String),
}

fn evaluate(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant, c1: f64, j0: f64, radius: f64) -> PointOutcome {
    let norm2 = linalg::norm_sq(x);
    if norm2.sqrt() <= radius {
        return PointOutcome::Excluded;
    }
    let run = || -> Result<(f64, bool)> {
        let d = decide(x, spec, plant)?;
        let j = d.stage2_value.unwrap_or(d.stage1_value);
        let mut next = vec![0.0; x.len()];
        plant.step_into(x, d.u_applied.as_slice(), &mut next)?;
        let j_next = closed_loop_cost(&next, spec, plant)?;
        let below = j - j0 < c1 * norm2 * (1.0 - 1e-12);
        Ok(((j_next - j) / norm2, below))
    };
    match run() {
        Ok((c, below_bound)) if c.is_finite() => PointOutcome::Tested { c, below_bound },
        Ok((c, _)) => PointOutcome::Failed(format!("non-finite decrease ratio {c}")),
        Err(e) => PointOutcome::Failed(e.to_string()),
    }
}

/// Evaluates the decrease ratio on every grid point of `config.region`.
/// Deterministic for any rayon pool size.
pub fn audit(config: &AuditConfig, spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<AuditReport> {
    spec.validate()?;
    let (points, step) = config.points()?;
    if points.is_empty() {
        return Err(AdpError::EmptyRegion { samples: 0 });
    }
    let c1 = min_eigenvalue(&spec.weights().q);
    let origin = vec![0.0; points[0].len()];
    let j0 = closed_loop_cost(&origin, spec, plant).unwrap_or(f64::NAN);
    let done = AtomicUsize::new(0);
    let tenth = (points.len() / 10).max(1);
    let outcomes: Vec<PointOutcome> = points
        .par_iter()
        .map(|x| {
            let out = evaluate(x, spec, plant, c1, if j0.is_finite() { j0 } else { 0.0 }, config.exclusion_radius);
            if config.progress {
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k % tenth == 0 {
                    log::info!("audit: {k}/{} points", points.len());
                }
            }
            out
        })
        .collect();

    let mut worst = f64::NEG_INFINITY;
    let mut worst_state = Vec::new();
    let mut tested = 0;
    let mut excluded = 0;
    let mut below = 0;
    let mut failures = Vec::new();
    for (x, o) in points.iter().zip(outcomes) {
        match o {
            PointOutcome::Excluded => excluded += 1,
            PointOutcome::Tested { c, below_bound } => {
                tested += 1;
                below += below_bound as usize;
                if c > worst {
                    worst = c;
                    worst_state = x.clone();
                }
            }
            PointOutcome::Failed(why) => failures.push((x.clone(), why)),
        }
    }
    let c2 = -worst;
    let verdict = if tested > 0 && c2 <= 0.0 {
        Verdict::Violated
    } else if !failures.is_empty() || tested == 0 || !j0.is_finite() {
        Verdict::Inconclusive
    } else {
        Verdict::CertifiedDecrease
    };
    let lipschitz = plant.lipschitz_estimate(&points, spec.levels()).ok();
    Ok(AuditReport {
        c1,
        c2,
        worst_state,
        points_tested: tested,
        points_excluded: excluded,
        grid_step: step,
        precision_digits: if step > 0.0 { (-step.log10()).floor() as i32 } else { 0 },
        verdict,
        value_at_origin: j0,
        lower_bound_violations: below,
        lipschitz,
        failures,
    })
}
