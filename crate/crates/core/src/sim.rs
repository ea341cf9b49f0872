//! Closed-loop simulation: measure, control in error coordinates, apply to
//! the true plant, record.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{decide, ControllerSpec, Strategy};
use crate::error::{check_dim, AdpError, Result};
use crate::model::Setpoint;
use crate::plant::NonlinearPlant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibilityPolicy {
    /// Apply the least-violating level and keep going.
    #[default]
    ApplyFallback,
    /// End the run at the first infeasible instant.
    Stop,
}

/// One closed-loop run. The plant is in absolute coordinates.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: NonlinearPlant,
    pub setpoint: Setpoint,
    pub initial_state: DVector<f64>,
    /// Seconds; the trace holds `round(duration / T_s) + 1` rows.
    pub duration: f64,
    /// Standard deviation of the additive measurement noise, plant units.
    pub noise_std: f64,
    pub seed: u64,
    pub infeasibility: InfeasibilityPolicy,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.plant.state_dim();
        check_dim("initial state", n, self.initial_state.len())?;
        check_dim("set-point state", n, self.setpoint.x_r.len())?;
        check_dim("set-point input", self.plant.input_dim(), self.setpoint.u_r.len())?;
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(AdpError::invalid("duration", format!("{} must be positive", self.duration)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(AdpError::invalid("noise", format!("{} must be non-negative", self.noise_std)));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.duration / self.plant.sample_time()).round() as usize + 1
    }

    /// The plant seen from the set-point, as the controllers expect it.
    pub fn error_plant(&self) -> Result<NonlinearPlant> {
        self.plant.shifted(self.setpoint.x_r.as_slice(), self.setpoint.u_r.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub x_true: Vec<f64>,
    pub x_measured: Vec<f64>,
    /// Applied input, absolute units.
    pub u: Vec<f64>,
    /// `L(e, δu)` on the true error.
    pub stage_cost: f64,
    /// Controller objective at the measured state.
    pub value: f64,
    pub latency: f64,
    pub clamped: bool,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub strategy: Option<Strategy>,
    pub sample_time: f64,
    pub records: Vec<StepRecord>,
    /// Why the run ended early, if it did.
    pub failure: Option<String>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn infeasible_steps(&self) -> usize {
        self.records.iter().filter(|r| r.infeasible).count()
    }
}

/// Runs `spec` on `scenario`. Plant blow-up or a stopping infeasibility ends
/// the run early; the trace so far is returned with `failure` set.
pub fn run_closed_loop(scenario: &Scenario, spec: &ControllerSpec) -> Result<SimTrace> {
    scenario.validate()?;
    spec.validate()?;
    let err_plant = scenario.error_plant()?;
    let x_r = scenario.setpoint.x_r.as_slice();
    let u_r = scenario.setpoint.u_r.as_slice();
    let n = x_r.len();
    let steps = scenario.num_steps();
    let ts = scenario.plant.sample_time();
    let noise = (scenario.noise_std > 0.0)
        .then(|| Normal::new(0.0, scenario.noise_std).expect("validated standard deviation"));
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut x = scenario.initial_state.as_slice().to_vec();
    let mut next = vec![0.0; n];
    let mut clamped = false;
    let mut records = Vec::with_capacity(steps);
    let mut failure = None;

    for k in 0..steps {
        let x_meas: Vec<f64> = match &noise {
            Some(d) => x.iter().map(|v| v + d.sample(&mut rng)).collect(),
            None => x.clone(),
        };
        let e_meas: Vec<f64> = x_meas.iter().zip(x_r).map(|(a, b)| a - b).collect();
        let (decision, infeasible) = match decide(&e_meas, spec, &err_plant) {
            Ok(d) => (d, false),
            Err(AdpError::Infeasible { fallback, .. }) => {
                if scenario.infeasibility == InfeasibilityPolicy::Stop {
                    failure = Some(format!("no feasible control at t = {:.4} s", k as f64 * ts));
                    break;
                }
                log::warn!("t = {:.4} s: no feasible control, applying least-violating level", k as f64 * ts);
                (*fallback, true)
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let du = decision.u_applied.as_slice();
        let u: Vec<f64> = du.iter().zip(u_r).map(|(a, b)| a + b).collect();
        let e_true: Vec<f64> = x.iter().zip(x_r).map(|(a, b)| a - b).collect();
        records.push(StepRecord {
            t: k as f64 * ts,
            x_true: x.clone(),
            x_measured: x_meas,
            u: u.clone(),
            stage_cost: spec.weights().stage_cost(&e_true, du),
            value: decision.stage2_value.unwrap_or(decision.stage1_value),
            latency: decision.latency,
            clamped,
            infeasible,
        });
        if k + 1 == steps {
            break;
        }
        match scenario.plant.step_into(&x, &u, &mut next) {
            Ok(c) => {
                clamped = c;
                std::mem::swap(&mut x, &mut next);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(SimTrace {
        strategy: Some(spec.strategy()),
        sample_time: ts,
        records,
        failure,
    })
}

/// `Σ_k ‖x_k − x_r‖²` over the true states.
pub fn compute_ise(trace: &SimTrace, x_r: &[f64]) -> f64 {
    trace
        .records
        .iter()
        .map(|r| r.x_true.iter().zip(x_r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// `Σ_k ‖u_k − u_{k−1}‖₁`.
pub fn total_variation(trace: &SimTrace) -> f64 {
    trace
        .records
        .windows(2)
        .map(|w| w[1].u.iter().zip(&w[0].u).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum()
}

/// Euclidean distance of the last true state from `x_r`.
pub fn final_error(trace: &SimTrace, x_r: &[f64]) -> Option<f64> {
    trace
        .records
        .last()
        .map(|r| r.x_true.iter().zip(x_r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}
