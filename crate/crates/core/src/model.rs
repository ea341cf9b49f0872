//! Problem data: linearization, the quantized control set, the quadratic cost
//! and the switched affine model in augmented coordinates `x̄ = [x; 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, AdpError, Result};
use crate::linalg::{self, block_diag_scalar, max_asymmetry, min_eigenvalue, symmetrized};
use crate::plant::{ControlBox, NonlinearPlant};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Finite set of admissible control levels, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedControlSet {
    levels: Vec<DVector<f64>>,
}

impl QuantizedControlSet {
    pub fn new(mut levels: Vec<DVector<f64>>, bounds: &ControlBox) -> Result<Self> {
        if levels.len() < 2 {
            return Err(AdpError::invalid("control set", "needs at least two levels"));
        }
        for v in &levels {
            check_dim("control level", bounds.dim(), v.len())?;
            if !bounds.contains(v.as_slice(), 0.0) {
                return Err(AdpError::invalid(
                    "control set",
                    format!("level {:?} outside the actuator box", v.as_slice()),
                ));
            }
        }
        levels.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if levels.windows(2).any(|w| w[0] == w[1]) {
            return Err(AdpError::invalid("control set", "levels must be pairwise distinct"));
        }
        Ok(QuantizedControlSet { levels })
    }

    /// `count` evenly spaced levels per input, endpoints included; for
    /// several inputs the tensor product in lexicographic order.
    pub fn uniform(bounds: &ControlBox, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(AdpError::invalid("control set", "needs at least two levels"));
        }
        let axes: Vec<Vec<f64>> = (0..bounds.dim())
            .map(|i| crate::polytope::axis_points(bounds.lower[i], bounds.upper[i], count))
            .collect();
        let levels = crate::polytope::tensor_product(&axes)
            .into_iter()
            .map(DVector::from_vec)
            .collect();
        QuantizedControlSet::new(levels, bounds)
    }

    pub fn levels(&self) -> &[DVector<f64>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.levels[0].len()
    }

    /// The same levels expressed as deviations from `u_r`.
    pub fn shifted(&self, u_r: &[f64]) -> QuantizedControlSet {
        let off = DVector::from_column_slice(u_r);
        QuantizedControlSet {
            levels: self.levels.iter().map(|v| v - &off).collect(),
        }
    }
}

/// Stage weights `Q`, `R` and terminal weight `Q_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_n: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_n: DMatrix<f64>) -> Result<Self> {
        check_dim("Q columns", q.nrows(), q.ncols())?;
        check_dim("R columns", r.nrows(), r.ncols())?;
        check_dim("Q_N rows", q.nrows(), q_n.nrows())?;
        check_dim("Q_N columns", q.nrows(), q_n.ncols())?;
        for (name, m) in [("Q", &q), ("R", &r), ("Q_N", &q_n)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(AdpError::invalid("cost weights", format!("{name} has non-finite entries")));
            }
            if max_asymmetry(m) > SYMMETRY_TOLERANCE {
                return Err(AdpError::invalid("cost weights", format!("{name} is not symmetric")));
            }
        }
        if min_eigenvalue(&q) < -SYMMETRY_TOLERANCE || min_eigenvalue(&q_n) < -SYMMETRY_TOLERANCE {
            return Err(AdpError::invalid("cost weights", "Q and Q_N must be positive semidefinite"));
        }
        if !(min_eigenvalue(&r) > 0.0) {
            return Err(AdpError::invalid("cost weights", "R must be positive definite"));
        }
        Ok(CostWeights { q, r, q_n })
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// `xᵀQx + uᵀRu`.
    #[inline]
    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        linalg::quad_form(&self.q, x) + linalg::quad_form(&self.r, u)
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        linalg::quad_form(&self.q_n, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Exact matrix-exponential zero-order hold.
    #[default]
    Zoh,
    Euler,
}

/// Discrete-time linearization `(A, B)` of `plant` at `(x_o, u_o)` over the
/// plant's sampling period, from central finite differences.
pub fn linearize(
    plant: &NonlinearPlant,
    x_o: &[f64],
    u_o: &[f64],
    method: Discretization,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("linearization state", plant.state_dim(), x_o.len())?;
    check_dim("linearization input", plant.input_dim(), u_o.len())?;
    let Some(dynamics) = plant.dynamics() else {
        return Err(AdpError::invalid(
            "linearization",
            "discrete-time plants are already linear; use their matrices directly",
        ));
    };
    let abs_x: Vec<f64> = x_o.iter().zip(plant.state_offset()).map(|(a, b)| a + b).collect();
    let abs_u: Vec<f64> = u_o.iter().zip(plant.input_offset()).map(|(a, b)| a + b).collect();
    dynamics.check_operating_point(&abs_x, &abs_u)?;
    let (ac, bc) = plant.numeric_jacobian(x_o, u_o);
    if ac.iter().chain(bc.iter()).any(|v| !v.is_finite()) {
        return Err(AdpError::SingularLinearization(format!(
            "non-finite Jacobian at x = {abs_x:?}, u = {abs_u:?}"
        )));
    }
    let dt = plant.sample_time();
    Ok(match method {
        Discretization::Zoh => linalg::zoh(&ac, &bc, dt),
        Discretization::Euler => linalg::euler(&ac, &bc, dt),
    })
}

/// `x⁺ = A x + B v_σ` in augmented form with its stage costs.
#[derive(Debug, Clone)]
pub struct SwitchedAffineModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    levels: Vec<DVector<f64>>,
    abar: Vec<DMatrix<f64>>,
    qbar: Vec<DMatrix<f64>>,
    qbar_n: DMatrix<f64>,
    weights: CostWeights,
    operating_point: (DVector<f64>, DVector<f64>),
    fingerprint: String,
}

/// Assembles `Ā_σ = [[A, B v_σ], [0, 1]]`, `Q̄_σ = diag(Q, v_σᵀ R v_σ)`
/// and `Q̄_N = diag(Q_N, 0)`.
pub fn build_switched_model(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    control_set: &QuantizedControlSet,
    weights: &CostWeights,
) -> Result<SwitchedAffineModel> {
    SwitchedAffineModel::from_levels(a, b, control_set.levels(), weights)
}

impl SwitchedAffineModel {
    /// Like [`build_switched_model`] but without the control-set invariants,
    /// so repeated levels can be studied.
    pub fn from_levels(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        levels: &[DVector<f64>],
        weights: &CostWeights,
    ) -> Result<SwitchedAffineModel> {
        let n = a.nrows();
        let m = b.ncols();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("Q size", n, weights.state_dim())?;
        check_dim("R size", m, weights.input_dim())?;
        if levels.is_empty() {
            return Err(AdpError::invalid("switched model", "no control levels"));
        }
        let mut abar = Vec::with_capacity(levels.len());
        let mut qbar = Vec::with_capacity(levels.len());
        for v in levels {
            check_dim("control level", m, v.len())?;
            let mut ab = DMatrix::zeros(n + 1, n + 1);
            ab.view_mut((0, 0), (n, n)).copy_from(a);
            ab.view_mut((0, n), (n, 1)).copy_from(&(b * v));
            ab[(n, n)] = 1.0;
            abar.push(ab);
            let rv = linalg::quad_form(&weights.r, v.as_slice());
            qbar.push(symmetrized(block_diag_scalar(&weights.q, rv)));
        }
        let qbar_n = symmetrized(block_diag_scalar(&weights.q_n, 0.0));
        let fingerprint = fingerprint(a, b, levels, weights);
        Ok(SwitchedAffineModel {
            a: a.clone(),
            b: b.clone(),
            levels: levels.to_vec(),
            abar,
            qbar,
            qbar_n,
            weights: weights.clone(),
            operating_point: (DVector::zeros(n), DVector::zeros(m)),
            fingerprint,
        })
    }

    pub fn with_operating_point(mut self, x_o: DVector<f64>, u_o: DVector<f64>) -> Self {
        self.operating_point = (x_o, u_o);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn num_subsystems(&self) -> usize {
        self.levels.len()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn levels(&self) -> &[DVector<f64>] {
        &self.levels
    }
    pub fn abar(&self, sigma: usize) -> &DMatrix<f64> {
        &self.abar[sigma]
    }
    pub fn qbar(&self, sigma: usize) -> &DMatrix<f64> {
        &self.qbar[sigma]
    }
    pub fn qbar_n(&self) -> &DMatrix<f64> {
        &self.qbar_n
    }
    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }
    pub fn operating_point(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.operating_point.0, &self.operating_point.1)
    }
    /// Stable hash of `A`, `B`, the levels and the weights.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

fn fingerprint(a: &DMatrix<f64>, b: &DMatrix<f64>, levels: &[DVector<f64>], w: &CostWeights) -> String {
    let mut h = Sha256::new();
    let mut feed = |tag: &[u8], m: &[f64], rows: usize| {
        h.update(tag);
        h.update((rows as u64).to_le_bytes());
        for v in m {
            h.update(v.to_bits().to_le_bytes());
        }
    };
    feed(b"A", a.as_slice(), a.nrows());
    feed(b"B", b.as_slice(), b.nrows());
    for v in levels {
        feed(b"v", v.as_slice(), v.len());
    }
    feed(b"Q", w.q.as_slice(), w.q.nrows());
    feed(b"R", w.r.as_slice(), w.r.nrows());
    feed(b"QN", w.q_n.as_slice(), w.q_n.nrows());
    let digest = h.finalize();
    hex::encode(&digest[..8])
}

/// Set-point and the steady input that holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub x_r: DVector<f64>,
    pub u_r: DVector<f64>,
}

impl Setpoint {
    /// Checks the discrete fixed-point condition `‖f(x_r, u_r) − x_r‖ ≤ tol`.
    pub fn verify(&self, plant: &NonlinearPlant, tol: f64) -> Result<f64> {
        let next = plant.step(&self.x_r, &self.u_r)?;
        let gap = (&next.state - &self.x_r).norm();
        if gap > tol {
            return Err(AdpError::invalid(
                "set-point",
                format!("not a fixed point: one-step drift {gap:e} exceeds {tol:e}"),
            ));
        }
        Ok(gap)
    }
}

/// The plant in error coordinates `e = x − x_r`, `δu = u − u_r`; the origin is
/// an equilibrium under `δu = 0` and the state set and actuator box move along.
pub fn shift_to_error_coordinates(plant: &NonlinearPlant, sp: &Setpoint) -> Result<NonlinearPlant> {
    plant.shifted(sp.x_r.as_slice(), sp.u_r.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_weights() -> CostWeights {
        let one = DMatrix::from_element(1, 1, 1.0);
        CostWeights::new(one.clone(), one.clone(), one).unwrap()
    }

    fn scalar_set() -> QuantizedControlSet {
        let bounds = ControlBox::scalar(-1.0, 1.0).unwrap();
        QuantizedControlSet::uniform(&bounds, 3).unwrap()
    }

    #[test]
    fn zero_level_block() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let m = build_switched_model(&one, &one, &scalar_set(), &scalar_weights()).unwrap();
        assert_eq!(m.levels()[1][0], 0.0);
        assert_eq!(m.abar(1), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(m.qbar(1), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn unit_level_block() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let m = build_switched_model(&one, &one, &scalar_set(), &scalar_weights()).unwrap();
        assert_eq!(m.abar(2), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(m.qbar(2), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(m.qbar_n(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn six_pump_levels() {
        let bounds = ControlBox::scalar(0.54, 1.0).unwrap();
        let set = QuantizedControlSet::uniform(&bounds, 6).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.levels()[0][0], 0.54);
        assert_eq!(set.levels()[5][0], 1.0);
        let w = CostWeights::new(
            DMatrix::identity(3, 3),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let m = build_switched_model(&DMatrix::identity(3, 3), &DMatrix::zeros(3, 1), &set, &w).unwrap();
        assert_eq!(m.num_subsystems(), 6);
    }

    #[test]
    fn control_set_rejects_bad_levels() {
        let bounds = ControlBox::scalar(0.0, 1.0).unwrap();
        let v = |x: f64| DVector::from_element(1, x);
        assert!(QuantizedControlSet::new(vec![v(0.5)], &bounds).is_err());
        assert!(QuantizedControlSet::new(vec![v(0.5), v(0.5)], &bounds).is_err());
        assert!(QuantizedControlSet::new(vec![v(0.5), v(1.5)], &bounds).is_err());
        let s = QuantizedControlSet::new(vec![v(0.9), v(0.1)], &bounds).unwrap();
        assert_eq!(s.levels()[0][0], 0.1);
    }

    #[test]
    fn weights_validation() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        assert!(CostWeights::new(one.clone(), zero.clone(), one.clone()).is_err());
        assert!(CostWeights::new(-one.clone(), one.clone(), one.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(asym, one.clone(), DMatrix::identity(2, 2)).is_err());
        assert!(CostWeights::new(zero.clone(), one, zero).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let w = scalar_weights();
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(
            build_switched_model(&a, &b, &scalar_set(), &w),
            Err(AdpError::Dimension { .. })
        ));
    }

    #[test]
    fn fingerprint_tracks_levels() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let m1 = build_switched_model(&one, &one, &scalar_set(), &scalar_weights()).unwrap();
        let bounds = ControlBox::scalar(-1.0, 1.0).unwrap();
        let set5 = QuantizedControlSet::uniform(&bounds, 5).unwrap();
        let m2 = build_switched_model(&one, &one, &set5, &scalar_weights()).unwrap();
        assert_eq!(m1.fingerprint().len(), 16);
        assert_ne!(m1.fingerprint(), m2.fingerprint());
        let m3 = build_switched_model(&one, &one, &scalar_set(), &scalar_weights()).unwrap();
        assert_eq!(m1.fingerprint(), m3.fingerprint());
    }

    #[test]
    fn shifted_levels() {
        let set = scalar_set().shifted(&[0.25]);
        assert_relative_eq!(set.levels()[0][0], -1.25);
        assert_relative_eq!(set.levels()[2][0], 0.75);
    }
}
