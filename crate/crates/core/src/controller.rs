//! Online control laws evaluated once per sampling instant.
//!
//! All strategies work in the plant's own coordinates; pass a plant shifted
//! to error coordinates together with a model linearized at the set point.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, AdpError, Result};
use crate::linalg;
use crate::model::{CostWeights, SwitchedAffineModel};
use crate::plant::NonlinearPlant;
use crate::polytope::{Polytope, CONTAINMENT_TOLERANCE};
use crate::synthesis::{RegionRiccatiMap, RiccatiSet};

type Buf = SmallVec<[f64; 8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Adp1,
    Adp2,
    Adp3,
    #[serde(rename = "nmpc")]
    NmpcExhaustive,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Adp1, Strategy::Adp2, Strategy::Adp3, Strategy::NmpcExhaustive];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adp1 => "adp1",
            Strategy::Adp2 => "adp2",
            Strategy::Adp3 => "adp3",
            Strategy::NmpcExhaustive => "nmpc",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = AdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "adp1" => Ok(Strategy::Adp1),
            "adp2" => Ok(Strategy::Adp2),
            "adp3" => Ok(Strategy::Adp3),
            "nmpc" | "nmpcexhaustive" => Ok(Strategy::NmpcExhaustive),
            _ => Err(AdpError::invalid("strategy", format!("unknown strategy {s:?}"))),
        }
    }
}

/// One-step model used to predict `x_{k+1}` for each candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    /// One sampling period of the plant itself.
    Plant,
    /// `x⁺ = A x + B u`, mainly for equivalence checks against the exact DP.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub enum ValueSource {
    Set(Arc<RiccatiSet>),
    Regions(Arc<RegionRiccatiMap>),
}

impl ValueSource {
    fn fingerprint(&self) -> &str {
        match self {
            ValueSource::Set(s) => s.fingerprint(),
            ValueSource::Regions(r) => r.parent().fingerprint(),
        }
    }

    /// Set used at state `x` and the region it came from.
    pub fn set_for(&self, x: &[f64]) -> (Option<usize>, &RiccatiSet) {
        match self {
            ValueSource::Set(s) => (None, s),
            ValueSource::Regions(r) => r.lookup(x),
        }
    }
}

/// Stage-2 grid `v* + q·Δu`, `q = −W..W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Refinement {
    pub half_width: usize,
    pub step: f64,
    /// Re-minimize over the whole set in stage 2 instead of reusing the
    /// stage-1 matrix.
    pub full_set_stage2: bool,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement {
            half_width: 2,
            step: 0.02,
            full_set_stage2: false,
        }
    }
}

impl Refinement {
    fn validate(&self) -> Result<()> {
        if self.half_width == 0 {
            return Err(AdpError::invalid("refinement", "half width W must be at least 1"));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(AdpError::invalid("refinement", format!("step {} must be positive", self.step)));
        }
        Ok(())
    }

    /// Offsets in the order `0, −1, +1, −2, +2, …`, so the unrefined level
    /// wins ties.
    pub fn offsets(&self) -> Vec<i64> {
        let w = self.half_width as i64;
        let mut out = vec![0];
        for q in 1..=w {
            out.push(-q);
            out.push(q);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ControllerSpec {
    strategy: Strategy,
    value: ValueSource,
    levels: Vec<DVector<f64>>,
    weights: CostWeights,
    refinement: Option<Refinement>,
    constraint: Option<Polytope>,
    predictor: Predictor,
    horizon: usize,
    budget: u128,
}

impl ControllerSpec {
    /// Spec for `strategy` using the control levels and weights of `model`.
    /// Fails if the value function was synthesized for a different model.
    pub fn new(strategy: Strategy, model: &SwitchedAffineModel, value: ValueSource, horizon: usize) -> Result<Self> {
        if value.fingerprint() != model.fingerprint() {
            return Err(AdpError::FingerprintMismatch {
                expected: model.fingerprint().to_owned(),
                found: value.fingerprint().to_owned(),
            });
        }
        if horizon == 0 {
            return Err(AdpError::invalid("horizon", "must be at least 1"));
        }
        Ok(ControllerSpec {
            strategy,
            value,
            levels: model.levels().to_vec(),
            weights: model.weights().clone(),
            refinement: matches!(strategy, Strategy::Adp2).then(Refinement::default),
            constraint: None,
            predictor: Predictor::Plant,
            horizon,
            budget: 10_000_000,
        })
    }

    pub fn with_refinement(mut self, refinement: Refinement) -> Result<Self> {
        refinement.validate()?;
        self.refinement = Some(refinement);
        Ok(self)
    }

    pub fn with_constraint(mut self, constraint: Polytope) -> Result<Self> {
        check_dim("constraint polytope", self.weights.state_dim(), constraint.dim())?;
        self.constraint = Some(constraint);
        Ok(self)
    }

    pub fn with_predictor(mut self, predictor: Predictor) -> Result<Self> {
        if let Predictor::Linear { a, b } = &predictor {
            let n = self.weights.state_dim();
            check_dim("linear predictor A", n, a.nrows())?;
            check_dim("linear predictor A", n, a.ncols())?;
            check_dim("linear predictor B rows", n, b.nrows())?;
            check_dim("linear predictor B cols", self.weights.input_dim(), b.ncols())?;
        }
        self.predictor = predictor;
        Ok(self)
    }

    /// Largest number of sequences the exhaustive search may enumerate.
    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }
    pub fn value(&self) -> &ValueSource {
        &self.value
    }
    pub fn levels(&self) -> &[DVector<f64>] {
        &self.levels
    }
    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }
    pub fn refinement(&self) -> Option<&Refinement> {
        self.refinement.as_ref()
    }
    pub fn constraint(&self) -> Option<&Polytope> {
        self.constraint.as_ref()
    }
    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Field consistency for the chosen strategy.
    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            Strategy::Adp2 => self
                .refinement
                .as_ref()
                .ok_or_else(|| AdpError::invalid("controller", "ADP-2 needs a refinement grid"))?
                .validate(),
            Strategy::Adp3 if self.constraint.is_none() => {
                Err(AdpError::invalid("controller", "ADP-3 needs a constraint polytope"))
            }
            _ => Ok(()),
        }
    }

    fn predict(&self, plant: &NonlinearPlant, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.predictor {
            Predictor::Plant => {
                plant.step_into(x, u, out)?;
            }
            Predictor::Linear { a, b } => {
                for i in 0..out.len() {
                    let mut s = 0.0;
                    for j in 0..x.len() {
                        s += a[(i, j)] * x[j];
                    }
                    for j in 0..u.len() {
                        s += b[(i, j)] * u[j];
                    }
                    out[i] = s;
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(AdpError::PlantBlowup { state: x.to_vec() });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one controller evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u_applied: DVector<f64>,
    /// Position of the stage-1 choice in the quantized set.
    pub level_index: usize,
    pub stage1_value: f64,
    pub stage2_value: Option<f64>,
    /// Minimizing matrix at the predicted state; `None` for the exhaustive search.
    pub argmin_matrix_index: Option<usize>,
    pub feasible_count: usize,
    /// Region whose set was used, when a regional map is active.
    pub region: Option<usize>,
    /// Wall-clock seconds spent in [`decide`]; zero when a step function is
    /// called directly.
    pub latency: f64,
}

fn check_state(x: &[f64], spec: &ControllerSpec) -> Result<()> {
    check_dim("controller state", spec.weights.state_dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AdpError::invalid("state", format!("non-finite entry in {x:?}")));
    }
    Ok(())
}

fn augmented(x: &[f64]) -> Buf {
    let mut b: Buf = x.iter().copied().collect();
    b.push(1.0);
    b
}

struct Candidate {
    level: usize,
    value: f64,
    matrix: usize,
}

/// `L(x, v_j) + V(x̄_{k+1})` for every level, keeping the first minimizer
/// among those passing `filter`.
fn scan_levels(
    x: &[f64],
    spec: &ControllerSpec,
    plant: &NonlinearPlant,
    set: &RiccatiSet,
    filter: Option<&Polytope>,
) -> Result<(Option<Candidate>, usize, Option<(Candidate, f64)>)> {
    let mut next: Buf = SmallVec::from_elem(0.0, x.len());
    let mut best: Option<Candidate> = None;
    let mut least: Option<(Candidate, f64)> = None;
    let mut feasible = 0;
    for (j, v) in spec.levels.iter().enumerate() {
        spec.predict(plant, x, v.as_slice(), &mut next)?;
        let violation = filter.map_or(0.0, |p| p.max_violation(&next));
        let (tail, matrix) = set.eval_value(&augmented(&next));
        let value = spec.weights.stage_cost(x, v.as_slice()) + tail;
        let cand = Candidate {
            level: j,
            value,
            matrix,
        };
        if violation <= CONTAINMENT_TOLERANCE {
            feasible += 1;
            if best.as_ref().is_none_or(|b| value < b.value) {
                best = Some(cand);
            }
        } else if least.as_ref().is_none_or(|(_, w)| violation < *w) {
            least = Some((cand, violation));
        }
    }
    Ok((best, feasible, least))
}

/// Single-stage law: argmin over the quantized levels of stage cost plus
/// the min-of-quadratics value at the predicted state.
pub fn adp1_step(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<ControlDecision> {
    check_state(x, spec)?;
    let (region, set) = spec.value.set_for(x);
    let (best, feasible, _) = scan_levels(x, spec, plant, set, None)?;
    let best = best.expect("at least two levels");
    Ok(ControlDecision {
        u_applied: spec.levels[best.level].clone(),
        level_index: best.level,
        stage1_value: best.value,
        stage2_value: None,
        argmin_matrix_index: Some(best.matrix),
        feasible_count: feasible,
        region,
        latency: 0.0,
    })
}

/// Two-stage law: ADP-1, then a local search on `v* + q·Δu` (clipped to the
/// actuator box) scored with the stage-1 minimizing matrix.
pub fn adp2_step(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<ControlDecision> {
    let refinement = spec
        .refinement
        .ok_or_else(|| AdpError::invalid("controller", "ADP-2 needs a refinement grid"))?;
    refinement.validate()?;
    let stage1 = adp1_step(x, spec, plant)?;
    let (_, set) = spec.value.set_for(x);
    let p_star = &set.matrices()[stage1.argmin_matrix_index.expect("stage 1 sets a matrix")];
    let v_star = &spec.levels[stage1.level_index];
    let offsets = refinement.offsets();
    let m = v_star.len();
    let bounds = plant.control_box();
    let mut next: Buf = SmallVec::from_elem(0.0, x.len());
    let mut best_u = v_star.clone();
    let mut best_value = f64::INFINITY;
    let mut idx = vec![0usize; m];
    // product grid over input components, first component slowest
    loop {
        let mut u: Buf = (0..m)
            .map(|i| v_star[i] + offsets[idx[i]] as f64 * refinement.step)
            .collect();
        bounds.clip(&mut u);
        spec.predict(plant, x, &u, &mut next)?;
        let xbar = augmented(&next);
        let tail = if refinement.full_set_stage2 {
            set.eval_value(&xbar).0
        } else {
            linalg::quad_form(p_star, &xbar)
        };
        let value = spec.weights.stage_cost(x, &u) + tail;
        if value < best_value {
            best_value = value;
            best_u = DVector::from_column_slice(&u);
        }
        let mut axis = m;
        loop {
            if axis == 0 {
                return Ok(ControlDecision {
                    u_applied: best_u,
                    stage2_value: Some(best_value),
                    ..stage1
                });
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < offsets.len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Constrained law: only levels whose predicted state stays in `X` compete,
/// scored with the regional set containing `x`. With no feasible level the
/// error carries the level of least violation.
pub fn adp3_step(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<ControlDecision> {
    check_state(x, spec)?;
    let constraint = spec
        .constraint
        .as_ref()
        .ok_or_else(|| AdpError::invalid("controller", "ADP-3 needs a constraint polytope"))?;
    let (region, set) = spec.value.set_for(x);
    let (best, feasible, least) = scan_levels(x, spec, plant, set, Some(constraint))?;
    let decision = |c: Candidate| ControlDecision {
        u_applied: spec.levels[c.level].clone(),
        level_index: c.level,
        stage1_value: c.value,
        stage2_value: None,
        argmin_matrix_index: Some(c.matrix),
        feasible_count: feasible,
        region,
        latency: 0.0,
    };
    match best {
        Some(c) => Ok(decision(c)),
        None => {
            let (c, _) = least.expect("every level was infeasible");
            Err(AdpError::Infeasible {
                state: x.to_vec(),
                fallback: Box::new(decision(c)),
            })
        }
    }
}

/// Exact minimization of the N-step cost over all level sequences by
/// depth-first enumeration; returns the first move of the best sequence
/// (lexicographically first among ties).
pub fn nmpc_exhaustive_step(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<ControlDecision> {
    check_state(x, spec)?;
    let m = spec.levels.len() as u128;
    let sequences = m.checked_pow(spec.horizon as u32).unwrap_or(u128::MAX);
    if sequences > spec.budget {
        return Err(AdpError::EnumerationBudget {
            sequences,
            budget: spec.budget,
        });
    }
    let n = x.len();
    let depth = spec.horizon;
    // states[d] is the state before move d
    let mut states: Vec<Buf> = vec![SmallVec::from_elem(0.0, n); depth + 1];
    states[0].copy_from_slice(x);
    let mut costs = vec![0.0f64; depth + 1];
    let mut choice = vec![0usize; depth];
    let mut best = f64::INFINITY;
    let mut best_first = 0;
    let mut d = 0;
    loop {
        let v = &spec.levels[choice[d]];
        let (head, tail) = states.split_at_mut(d + 1);
        spec.predict(plant, &head[d], v.as_slice(), &mut tail[0])?;
        costs[d + 1] = costs[d] + spec.weights.stage_cost(&head[d], v.as_slice());
        if d + 1 == depth {
            let total = costs[depth] + spec.weights.terminal_cost(&states[depth]);
            if total < best {
                best = total;
                best_first = choice[0];
            }
        } else {
            d += 1;
            choice[d] = 0;
            continue;
        }
        // advance to the next sequence
        loop {
            choice[d] += 1;
            if choice[d] < spec.levels.len() {
                break;
            }
            if d == 0 {
                return Ok(ControlDecision {
                    u_applied: spec.levels[best_first].clone(),
                    level_index: best_first,
                    stage1_value: best,
                    stage2_value: None,
                    argmin_matrix_index: None,
                    feasible_count: spec.levels.len(),
                    region: None,
                    latency: 0.0,
                });
            }
            d -= 1;
        }
    }
}

/// Dispatches on the spec's strategy and records the wall-clock latency.
/// An infeasibility error carries its fallback with the latency filled in.
pub fn decide(x: &[f64], spec: &ControllerSpec, plant: &NonlinearPlant) -> Result<ControlDecision> {
    let start = Instant::now();
    let result = match spec.strategy {
        Strategy::Adp1 => adp1_step(x, spec, plant),
        Strategy::Adp2 => adp2_step(x, spec, plant),
        Strategy::Adp3 => adp3_step(x, spec, plant),
        Strategy::NmpcExhaustive => nmpc_exhaustive_step(x, spec, plant),
    };
    let latency = start.elapsed().as_secs_f64();
    match result {
        Ok(mut d) => {
            d.latency = latency;
            Ok(d)
        }
        Err(AdpError::Infeasible { state, mut fallback }) => {
            fallback.latency = latency;
            Err(AdpError::Infeasible { state, fallback })
        }
        Err(e) => Err(e),
    }
}
