//! Approximate dynamic programming MPC built on a switched affine model.
//!
//! Offline, [`synthesis::build_p1_set`] turns a [`model::SwitchedAffineModel`]
//! into a set of quadratic forms whose pointwise minimum approximates the
//! cost-to-go. Online, [`controller`] evaluates that set for each candidate
//! control, [`audit`] checks the Lyapunov decrease a posteriori and [`sim`]
//! and [`bench`] run closed-loop comparisons on the [`multitank`] plant.

pub mod audit;
pub mod bench;
pub mod config;
pub mod controller;
pub mod error;
pub mod export;
pub mod linalg;
pub mod model;
pub mod multitank;
pub mod plant;
pub mod polytope;
pub mod pset;
pub mod sim;
pub mod synthesis;

pub use controller::{decide, ControlDecision, ControllerSpec, Predictor, Refinement, Strategy, ValueSource};
pub use error::{AdpError, Result};
pub use model::{CostWeights, QuantizedControlSet, Setpoint, SwitchedAffineModel};
pub use plant::{ControlBox, NonlinearPlant};
pub use polytope::Polytope;
pub use synthesis::{RegionRiccatiMap, RiccatiSet, SynthesisOptions};
