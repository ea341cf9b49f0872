//! Nonlinear plant abstraction with fixed-step integration.
//!
//! A [`NonlinearPlant`] wraps either a continuous-time right-hand side
//! (integrated with RK4 or Euler over one sampling period) or a discrete-time
//! linear map. Plants can be re-expressed in error coordinates around a
//! set-point; the offsets are applied inside [`NonlinearPlant::step_into`] so
//! callers always work in the plant's own coordinates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, AdpError, Result};
use crate::polytope::Polytope;

type Buf = SmallVec<[f64; 8]>;

/// Continuous-time dynamics `ẋ = f(x, u)` in absolute coordinates.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Analytic Jacobians `(∂f/∂x, ∂f/∂u)` when the model provides them.
    fn jacobian(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Rejects operating points where the linearization is undefined.
    fn check_operating_point(&self, _x: &[f64], _u: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// `ẋ = A x + B u + c`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_dim("linear dynamics A", a.nrows(), a.ncols())?;
        check_dim("linear dynamics B rows", a.nrows(), b.nrows())?;
        let c = DVector::zeros(a.nrows());
        Ok(LinearDynamics { a, b, c })
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for i in 0..self.a.nrows() {
            let mut s = self.c[i];
            for j in 0..x.len() {
                s += self.a[(i, j)] * x[j];
            }
            for j in 0..u.len() {
                s += self.b[(i, j)] * u[j];
            }
            dx[i] = s;
        }
    }
    fn jacobian(&self, _x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.a.clone(), self.b.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorMethod {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Integrator {
    pub method: IntegratorMethod,
    pub substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            method: IntegratorMethod::Rk4,
            substeps: 1,
        }
    }
}

/// Per-component actuator box.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ControlBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("control box", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(AdpError::invalid(
                "control box",
                format!("lower {:?} must be below upper {:?}", lower.as_slice(), upper.as_slice()),
            ));
        }
        Ok(ControlBox { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        ControlBox::new(DVector::from_element(1, lower), DVector::from_element(1, upper))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn clip(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn translated(&self, offset: &[f64]) -> ControlBox {
        let off = DVector::from_column_slice(offset);
        ControlBox {
            lower: &self.lower + &off,
            upper: &self.upper + &off,
        }
    }
}

#[derive(Debug, Clone)]
enum Flow {
    Ode(Arc<dyn Dynamics>),
    Map { a: DMatrix<f64>, b: DMatrix<f64> },
}

/// Result of one sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: DVector<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct NonlinearPlant {
    flow: Flow,
    n: usize,
    m: usize,
    state_set: Polytope,
    control_box: ControlBox,
    sample_time: f64,
    integrator: Integrator,
    /// Physical limits in absolute coordinates.
    clamp: Option<(Vec<f64>, Vec<f64>)>,
    state_offset: Vec<f64>,
    input_offset: Vec<f64>,
}

impl NonlinearPlant {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        state_set: Polytope,
        control_box: ControlBox,
        sample_time: f64,
        integrator: Integrator,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        check_dim("plant state set", n, state_set.dim())?;
        check_dim("plant control box", m, control_box.dim())?;
        if !(sample_time > 0.0) || !sample_time.is_finite() {
            return Err(AdpError::invalid("sample time", format!("{sample_time} must be positive")));
        }
        if integrator.substeps == 0 {
            return Err(AdpError::invalid("integrator", "substeps must be at least 1"));
        }
        Ok(NonlinearPlant {
            flow: Flow::Ode(dynamics),
            n,
            m,
            state_set,
            control_box,
            sample_time,
            integrator,
            clamp: None,
            state_offset: vec![0.0; n],
            input_offset: vec![0.0; m],
        })
    }

    /// Discrete-time linear plant `x⁺ = A x + B u`; `sample_time` is only metadata.
    pub fn discrete_linear(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_set: Polytope,
        control_box: ControlBox,
        sample_time: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        check_dim("discrete plant A", n, a.ncols())?;
        check_dim("discrete plant B rows", n, b.nrows())?;
        check_dim("plant state set", n, state_set.dim())?;
        check_dim("plant control box", m, control_box.dim())?;
        Ok(NonlinearPlant {
            flow: Flow::Map { a, b },
            n,
            m,
            state_set,
            control_box,
            sample_time,
            integrator: Integrator::default(),
            clamp: None,
            state_offset: vec![0.0; n],
            input_offset: vec![0.0; m],
        })
    }

    /// Clamp states to `[lower, upper]` (absolute coordinates) after every substep.
    pub fn with_clamp(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("clamp lower", self.n, lower.len())?;
        check_dim("clamp upper", self.n, upper.len())?;
        self.clamp = Some((lower, upper));
        Ok(self)
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Result<Self> {
        if integrator.substeps == 0 {
            return Err(AdpError::invalid("integrator", "substeps must be at least 1"));
        }
        self.integrator = integrator;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn input_dim(&self) -> usize {
        self.m
    }
    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }
    pub fn integrator(&self) -> Integrator {
        self.integrator
    }
    pub fn state_set(&self) -> &Polytope {
        &self.state_set
    }
    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }
    pub fn state_offset(&self) -> &[f64] {
        &self.state_offset
    }
    pub fn input_offset(&self) -> &[f64] {
        &self.input_offset
    }
    pub fn dynamics(&self) -> Option<&Arc<dyn Dynamics>> {
        match &self.flow {
            Flow::Ode(d) => Some(d),
            Flow::Map { .. } => None,
        }
    }

    /// The same plant seen in coordinates `e = x − x_r`, `δu = u − u_r`.
    pub fn shifted(&self, x_r: &[f64], u_r: &[f64]) -> Result<NonlinearPlant> {
        check_dim("state offset", self.n, x_r.len())?;
        check_dim("input offset", self.m, u_r.len())?;
        let neg_x: Vec<f64> = x_r.iter().map(|v| -v).collect();
        let neg_u: Vec<f64> = u_r.iter().map(|v| -v).collect();
        let mut out = self.clone();
        out.state_set = self.state_set.translated(&neg_x);
        out.control_box = self.control_box.translated(&neg_u);
        for i in 0..self.n {
            out.state_offset[i] = self.state_offset[i] + x_r[i];
        }
        for i in 0..self.m {
            out.input_offset[i] = self.input_offset[i] + u_r[i];
        }
        Ok(out)
    }

    /// Continuous right-hand side in this plant's coordinates.
    pub fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let Flow::Ode(dynamics) = &self.flow else {
            panic!("rhs requested from a discrete-time plant");
        };
        let xa: Buf = x.iter().zip(&self.state_offset).map(|(a, b)| a + b).collect();
        let ua: Buf = u.iter().zip(&self.input_offset).map(|(a, b)| a + b).collect();
        dynamics.rhs(&xa, &ua, dx);
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepResult> {
        check_dim("plant step state", self.n, x.len())?;
        check_dim("plant step input", self.m, u.len())?;
        let mut out = DVector::zeros(self.n);
        let clamped = self.step_into(x.as_slice(), u.as_slice(), out.as_mut_slice())?;
        Ok(StepResult {
            state: out,
            clamped,
        })
    }

    /// One sampling period without heap allocation for small plants.
    /// Returns whether the physical clamp was active.
    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<bool> {
        let n = self.n;
        let mut xa: Buf = x.iter().zip(&self.state_offset).map(|(a, b)| a + b).collect();
        let ua: Buf = u.iter().zip(&self.input_offset).map(|(a, b)| a + b).collect();
        let mut clamped = false;
        match &self.flow {
            Flow::Map { a, b } => {
                let mut next: Buf = SmallVec::from_elem(0.0, n);
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += a[(i, j)] * xa[j];
                    }
                    for j in 0..self.m {
                        s += b[(i, j)] * ua[j];
                    }
                    next[i] = s;
                }
                xa = next;
                clamped |= self.apply_clamp(&mut xa);
            }
            Flow::Ode(dynamics) => {
                let h = self.sample_time / self.integrator.substeps as f64;
                let mut k1: Buf = SmallVec::from_elem(0.0, n);
                let mut k2: Buf = SmallVec::from_elem(0.0, n);
                let mut k3: Buf = SmallVec::from_elem(0.0, n);
                let mut k4: Buf = SmallVec::from_elem(0.0, n);
                let mut tmp: Buf = SmallVec::from_elem(0.0, n);
                for _ in 0..self.integrator.substeps {
                    match self.integrator.method {
                        IntegratorMethod::Euler => {
                            dynamics.rhs(&xa, &ua, &mut k1);
                            for i in 0..n {
                                xa[i] += h * k1[i];
                            }
                        }
                        IntegratorMethod::Rk4 => {
                            dynamics.rhs(&xa, &ua, &mut k1);
                            for i in 0..n {
                                tmp[i] = xa[i] + 0.5 * h * k1[i];
                            }
                            dynamics.rhs(&tmp, &ua, &mut k2);
                            for i in 0..n {
                                tmp[i] = xa[i] + 0.5 * h * k2[i];
                            }
                            dynamics.rhs(&tmp, &ua, &mut k3);
                            for i in 0..n {
                                tmp[i] = xa[i] + h * k3[i];
                            }
                            dynamics.rhs(&tmp, &ua, &mut k4);
                            for i in 0..n {
                                xa[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                            }
                        }
                    }
                    clamped |= self.apply_clamp(&mut xa);
                }
            }
        }
        if xa.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::PlantBlowup { state: x.to_vec() });
        }
        for i in 0..n {
            out[i] = xa[i] - self.state_offset[i];
        }
        Ok(clamped)
    }

    fn apply_clamp(&self, xa: &mut [f64]) -> bool {
        let Some((lo, hi)) = &self.clamp else {
            return false;
        };
        let mut hit = false;
        for i in 0..xa.len() {
            let c = xa[i].clamp(lo[i], hi[i]);
            if c != xa[i] {
                hit = true;
                xa[i] = c;
            }
        }
        hit
    }

    /// Central finite-difference Jacobians of the continuous right-hand side,
    /// relative step `1e-6`.
    pub fn numeric_jacobian(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let m = self.m;
        let mut jx = DMatrix::zeros(n, n);
        let mut ju = DMatrix::zeros(n, m);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let abs_x: Vec<f64> = x.iter().zip(&self.state_offset).map(|(a, b)| a + b).collect();
        let abs_u: Vec<f64> = u.iter().zip(&self.input_offset).map(|(a, b)| a + b).collect();
        for j in 0..n {
            let h = fd_step(abs_x[j]);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            self.rhs(&xp, u, &mut fp);
            self.rhs(&xm, u, &mut fm);
            for i in 0..n {
                jx[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..m {
            let h = fd_step(abs_u[j]);
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[j] += h;
            um[j] -= h;
            self.rhs(x, &up, &mut fp);
            self.rhs(x, &um, &mut fm);
            for i in 0..n {
                ju[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        (jx, ju)
    }

    /// Numeric Lipschitz estimate of the sampled map in `x` over the given points:
    /// the largest `‖f(x₁,u) − f(x₂,u)‖ / ‖x₁ − x₂‖` over neighbouring pairs.
    pub fn lipschitz_estimate(&self, points: &[Vec<f64>], inputs: &[DVector<f64>]) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut a = vec![0.0; self.n];
        let mut b = vec![0.0; self.n];
        for u in inputs {
            for pair in points.windows(2) {
                let d: f64 = pair[0]
                    .iter()
                    .zip(&pair[1])
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                if d == 0.0 {
                    continue;
                }
                self.step_into(&pair[0], u.as_slice(), &mut a)?;
                self.step_into(&pair[1], u.as_slice(), &mut b)?;
                let num: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                worst = worst.max(num / d);
            }
        }
        Ok(worst)
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1e-3)
}
