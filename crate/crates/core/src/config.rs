//! Scenario files (TOML) and the objects built from them.
//!
//! Every field has a default, so an empty file describes the stock
//! multi-tank scenario; `configs/default.toml` spells all of them out.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audit::{AuditConfig, GridSpec};
use crate::controller::{ControllerSpec, Refinement, Strategy, ValueSource};
use crate::error::{AdpError, Result};
use crate::linalg;
use crate::model::{build_switched_model, linearize, CostWeights, Discretization, QuantizedControlSet, Setpoint, SwitchedAffineModel};
use crate::multitank::{solve_steady_input, steady_state_for_input, MultiTank, TankParams};
use crate::plant::{Integrator, NonlinearPlant};
use crate::polytope::Polytope;
use crate::sim::{InfeasibilityPolicy, Scenario};
use crate::synthesis::{build_p1_set, partition_regions, RegionRiccatiMap, RiccatiSet, SynthesisOptions};

/// The stock scenario, identical to `ScenarioConfig::default()`.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantConfig,
    pub setpoint: SetpointConfig,
    pub simulation: SimulationConfig,
    pub model: ModelConfig,
    pub synthesis: SynthesisOptions,
    pub regions: RegionConfig,
    pub controller: ControllerConfig,
    pub audit: AuditSection,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub tanks: TankParams,
    pub integrator: Integrator,
}

/// How to pick the set-point. `levels` and `input` take precedence over the
/// default `level_index`; giving both of them is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointConfig {
    /// Steady state of this quantized pump level, so that `δu = 0` is a level.
    pub level_index: Option<usize>,
    /// Steady state of this pump voltage.
    pub input: Option<f64>,
    /// Desired levels; the top level fixes the flow.
    pub levels: Option<Vec<f64>>,
}

impl Default for SetpointConfig {
    fn default() -> Self {
        SetpointConfig {
            level_index: Some(3),
            input: None,
            levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub sample_time: f64,
    pub duration: f64,
    pub initial_state: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub infeasibility: InfeasibilityPolicy,
    /// Lower and upper corners of the state constraint box `X`.
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            sample_time: 0.01,
            duration: 250.0,
            initial_state: vec![0.10, 0.07, 0.08],
            noise_std: 0.0,
            seed: 7,
            infeasibility: InfeasibilityPolicy::ApplyFallback,
            state_lower: vec![0.05; 3],
            state_upper: vec![0.3; 3],
        }
    }
}

/// Terminal weight: `"lyapunov"` (solution of `AᵀPA − P + Q = 0` for the
/// linearized `A`), `"stage"` (`Q_N = Q`) or an explicit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalWeight {
    Named(String),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of quantized pump levels `M`.
    pub levels: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub terminal: TerminalWeight,
    pub discretization: Discretization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 6,
            q: vec![1.0; 3],
            r: vec![0.1],
            terminal: TerminalWeight::Named("lyapunov".into()),
            discretization: Discretization::Zoh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    /// Number of cells `z`; 0 uses the single constrained set.
    pub partitions: usize,
    /// Sampling points per axis when restricting a set to a region.
    pub grid: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig { partitions: 8, grid: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub strategies: Vec<Strategy>,
    pub refinement: Refinement,
    /// Sequence budget of the exhaustive search.
    pub nmpc_budget: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            strategies: Strategy::ALL.to_vec(),
            refinement: Refinement::default(),
            nmpc_budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub strategy: Strategy,
    pub points_per_axis: usize,
    /// Overrides `points_per_axis` when set.
    pub grid_step: Option<f64>,
    pub exclusion: f64,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            strategy: Strategy::Adp1,
            points_per_axis: 21,
            grid_step: None,
            exclusion: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: ScenarioConfig = toml::from_str(text).map_err(|e| AdpError::Config(e.to_string()))?;
        let sp = &mut c.setpoint;
        if sp.input.is_some() || sp.levels.is_some() {
            sp.level_index = None;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AdpError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| AdpError::Config(format!("{}: {e}", path.display())))
    }

    /// Full configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Builds the plant, set-point and switched model.
    pub fn build(&self) -> Result<System> {
        System::new(self.clone())
    }
}

fn diag(v: &[f64], what: &str, n: usize) -> Result<DMatrix<f64>> {
    if v.len() != n {
        return Err(AdpError::Config(format!("{what} needs {n} diagonal entries, got {}", v.len())));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
}

/// Everything derived from a [`ScenarioConfig`].
#[derive(Debug, Clone)]
pub struct System {
    pub config: ScenarioConfig,
    pub tank: MultiTank,
    /// Plant in absolute coordinates.
    pub plant: NonlinearPlant,
    /// Same plant seen from the set-point.
    pub error_plant: NonlinearPlant,
    pub setpoint: Setpoint,
    /// Quantized levels in absolute volts.
    pub control_set: QuantizedControlSet,
    /// Linearization at the set-point, in error coordinates.
    pub model: SwitchedAffineModel,
}

impl System {
    fn new(config: ScenarioConfig) -> Result<Self> {
        let sim = &config.simulation;
        let tank = MultiTank::new(config.plant.tanks.clone())?;
        let state_set = Polytope::from_box(&sim.state_lower, &sim.state_upper)
            .map_err(|e| AdpError::Config(format!("state box: {e}")))?;
        let plant = tank.plant(state_set, sim.sample_time, config.plant.integrator)?;
        let control_set = QuantizedControlSet::uniform(plant.control_box(), config.model.levels)?;
        let steady = match (&config.setpoint.level_index, &config.setpoint.input, &config.setpoint.levels) {
            (Some(i), None, None) => {
                let u = control_set.levels().get(*i).ok_or_else(|| {
                    AdpError::Config(format!("set-point level {i} out of range for {} levels", control_set.len()))
                })?;
                steady_state_for_input(u[0], &tank.params)?
            }
            (None, Some(u), None) => steady_state_for_input(*u, &tank.params)?,
            (None, None, Some(x)) => solve_steady_input(x, &tank.params)?,
            _ => {
                return Err(AdpError::Config(
                    "set exactly one of setpoint.level_index, setpoint.input, setpoint.levels".into(),
                ));
            }
        };
        let setpoint = Setpoint {
            x_r: steady.state(),
            u_r: steady.input_vector(),
        };
        if !plant.state_set().contains(setpoint.x_r.as_slice()) {
            return Err(AdpError::Config(format!(
                "set-point {:?} lies outside the state box",
                setpoint.x_r.as_slice()
            )));
        }
        let error_plant = plant.shifted(setpoint.x_r.as_slice(), setpoint.u_r.as_slice())?;
        let n = plant.state_dim();
        let (a, b) = linearize(&error_plant, &vec![0.0; n], &vec![0.0; plant.input_dim()], config.model.discretization)?;
        let q = diag(&config.model.q, "model.q", n)?;
        let r = diag(&config.model.r, "model.r", plant.input_dim())?;
        let q_n = match &config.model.terminal {
            TerminalWeight::Named(s) if s == "lyapunov" => linalg::discrete_lyapunov(&a, &q)?,
            TerminalWeight::Named(s) if s == "stage" => q.clone(),
            TerminalWeight::Named(s) => {
                return Err(AdpError::Config(format!(
                    "unknown terminal weight {s:?}; use \"lyapunov\", \"stage\" or a diagonal"
                )))
            }
            TerminalWeight::Diagonal(d) => diag(d, "model.terminal", n)?,
        };
        let weights = CostWeights::new(q, r, q_n)?;
        let shifted = control_set.shifted(setpoint.u_r.as_slice());
        let model = build_switched_model(&a, &b, &shifted, &weights)?
            .with_operating_point(setpoint.x_r.clone(), setpoint.u_r.clone());
        Ok(System {
            config,
            tank,
            plant,
            error_plant,
            setpoint,
            control_set,
            model,
        })
    }

    /// State constraint set in error coordinates.
    pub fn error_state_set(&self) -> &Polytope {
        self.error_plant.state_set()
    }

    pub fn synthesize(&self) -> Result<RiccatiSet> {
        build_p1_set(&self.model, &self.config.synthesis)
    }

    /// Constrained and regional sets restricted from `parent`. With zero
    /// partitions the map has one cell covering `X`.
    pub fn regions(&self, parent: &RiccatiSet) -> Result<RegionRiccatiMap> {
        let z = self.config.regions.partitions.max(1);
        partition_regions(self.error_state_set(), z, parent, self.config.regions.grid)
    }

    /// Controller for `strategy`; ADP-3 uses `regions` (or its domain set
    /// when partitions are disabled).
    pub fn controller(
        &self,
        strategy: Strategy,
        set: &Arc<RiccatiSet>,
        regions: Option<&Arc<RegionRiccatiMap>>,
    ) -> Result<ControllerSpec> {
        let horizon = self.config.synthesis.horizon;
        let spec = match strategy {
            Strategy::Adp3 => {
                let map = regions.ok_or_else(|| AdpError::invalid("controller", "ADP-3 needs the regional sets"))?;
                let value = if self.config.regions.partitions == 0 {
                    ValueSource::Set(Arc::new(map.domain().clone()))
                } else {
                    ValueSource::Regions(map.clone())
                };
                ControllerSpec::new(strategy, &self.model, value, horizon)?
                    .with_constraint(self.error_state_set().clone())?
            }
            Strategy::Adp2 => ControllerSpec::new(strategy, &self.model, ValueSource::Set(set.clone()), horizon)?
                .with_refinement(self.config.controller.refinement)?,
            _ => ControllerSpec::new(strategy, &self.model, ValueSource::Set(set.clone()), horizon)?,
        };
        Ok(spec.with_budget(self.config.controller.nmpc_budget as u128))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let sim = &self.config.simulation;
        let scenario = Scenario {
            plant: self.plant.clone(),
            setpoint: self.setpoint.clone(),
            initial_state: DVector::from_column_slice(&sim.initial_state),
            duration: sim.duration,
            noise_std: sim.noise_std,
            seed: sim.seed,
            infeasibility: sim.infeasibility,
        };
        scenario.validate().map_err(|e| AdpError::Config(e.to_string()))?;
        Ok(scenario)
    }

    pub fn audit_config(&self) -> AuditConfig {
        let a = &self.config.audit;
        AuditConfig {
            region: self.error_state_set().clone(),
            grid: match a.grid_step {
                Some(h) => GridSpec::Step(h),
                None => GridSpec::PointsPerAxis(a.points_per_axis),
            },
            exclusion_radius: a.exclusion,
            progress: false,
        }
    }
}
