//! Three-tank cascade: a constant-width top tank, a trapezoidal middle tank
//! and a cylindrical-section bottom tank, fed by a voltage-driven pump.
//!
//! Valve coefficients `C`, exponents `α` and the pump's full-scale flow are not
//! published for the reference rig. The defaults below are placeholders chosen
//! to give physically sensible levels and time constants; they are not
//! measured values.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::plant::{ControlBox, Dynamics, Integrator, NonlinearPlant};
use crate::polytope::Polytope;

/// Floor applied to the bottom tank level when evaluating its cross-section.
pub const BETA3_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpParams {
    /// Voltage at which the pump delivers no flow.
    pub u_min: f64,
    pub u_max: f64,
    /// Flow at `u_max`, m³/s. Placeholder.
    pub q_max: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        PumpParams {
            u_min: 0.54,
            u_max: 1.0,
            q_max: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankParams {
    /// Top tank width, m.
    pub a: f64,
    /// Middle tank trapezoid slope width, m.
    pub b: f64,
    /// Middle tank base width, m.
    pub c: f64,
    /// Tank depth, m.
    pub w_t: f64,
    /// Bottom tank radius, m.
    pub r: f64,
    pub h_max: [f64; 3],
    /// Valve outflow coefficients, m³/s per m^α. Placeholder.
    pub valve: [f64; 3],
    /// Valve flow exponents. Placeholder.
    pub alpha: [f64; 3],
    pub pump: PumpParams,
}

impl Default for TankParams {
    fn default() -> Self {
        TankParams {
            a: 0.25,
            b: 0.345,
            c: 0.10,
            w_t: 0.035,
            r: 0.365,
            h_max: [0.35; 3],
            valve: [1e-4; 3],
            alpha: [0.29, 0.2256, 0.2487],
            pump: PumpParams::default(),
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let geometric = [self.a, self.b, self.c, self.w_t, self.r];
        if geometric.iter().chain(&self.h_max).chain(&self.valve).any(|v| !(*v > 0.0)) {
            return Err(AdpError::invalid("tank parameters", "geometry and valve coefficients must be positive"));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(AdpError::invalid("tank parameters", format!("exponents {:?} must lie in (0, 1]", self.alpha)));
        }
        if !(self.pump.u_min < self.pump.u_max) || !(self.pump.q_max > 0.0) {
            return Err(AdpError::invalid("pump parameters", "need u_min < u_max and q_max > 0"));
        }
        Ok(())
    }

    pub fn beta1(&self) -> f64 {
        self.a * self.w_t
    }

    pub fn beta2(&self, h2: f64) -> f64 {
        self.c * self.w_t + h2 / self.h_max[1] * self.b * self.w_t
    }

    /// Bottom cross-section with the level floored at [`BETA3_FLOOR`] and capped below `2R`.
    pub fn beta3(&self, h3: f64) -> f64 {
        let h = h3.clamp(BETA3_FLOOR, 2.0 * self.r - BETA3_FLOOR);
        self.w_t * (self.r * self.r - (self.r - h) * (self.r - h)).sqrt()
    }

    /// Valve outflow `Cᵢ Hᵢ^αᵢ`; empty tanks do not drain.
    pub fn outflow(&self, i: usize, h: f64) -> f64 {
        self.valve[i] * h.max(0.0).powf(self.alpha[i])
    }
}

/// Level derivatives. The flag reports that the bottom cross-section was
/// evaluated at a clamped level.
pub fn tank_rhs(h: &[f64], q: f64, p: &TankParams) -> ([f64; 3], bool) {
    let f1 = p.outflow(0, h[0]);
    let f2 = p.outflow(1, h[1]);
    let f3 = p.outflow(2, h[2]);
    let degenerate = h[2] <= BETA3_FLOOR || h[2] >= 2.0 * p.r - BETA3_FLOOR;
    (
        [
            (q - f1) / p.beta1(),
            (f1 - f2) / p.beta2(h[1]),
            (f2 - f3) / p.beta3(h[2]),
        ],
        degenerate,
    )
}

/// Affine voltage-to-flow law; out-of-range voltages are clamped.
pub fn pump_map(u: f64, p: &PumpParams) -> f64 {
    let clamped = u.clamp(p.u_min, p.u_max);
    if clamped != u {
        log::warn!("pump voltage {u} outside [{}, {}], clamped", p.u_min, p.u_max);
    }
    p.q_max * (clamped - p.u_min) / (p.u_max - p.u_min)
}

pub fn pump_inverse(q: f64, p: &PumpParams) -> f64 {
    if q == p.q_max {
        return p.u_max;
    }
    p.u_min + q / p.q_max * (p.u_max - p.u_min)
}

#[derive(Debug, Clone)]
pub struct MultiTank {
    pub params: TankParams,
}

impl MultiTank {
    pub fn new(params: TankParams) -> Result<Self> {
        params.validate()?;
        Ok(MultiTank { params })
    }

    /// Sampled plant with the physical `[0, H_max]` clamp.
    pub fn plant(
        &self,
        state_set: Polytope,
        sample_time: f64,
        integrator: Integrator,
    ) -> Result<NonlinearPlant> {
        let p = &self.params;
        NonlinearPlant::new(
            Arc::new(self.clone()),
            state_set,
            ControlBox::scalar(p.pump.u_min, p.pump.u_max)?,
            sample_time,
            integrator,
        )?
        .with_clamp(vec![0.0; 3], p.h_max.to_vec())
    }

    /// Jacobian at a flow-balanced operating point, where the cross-section
    /// derivative terms vanish and only the valve slopes remain.
    pub fn steady_state_jacobian(&self, h0: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.params;
        let slope = |i: usize| p.valve[i] * p.alpha[i] / h0[i].powf(1.0 - p.alpha[i]);
        let b1 = p.beta1();
        let b2 = p.w_t * (p.c + p.b * h0[1] / p.h_max[1]);
        let b3 = p.w_t * (p.r * p.r - (p.r - h0[2]).powi(2)).sqrt();
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                -slope(0) / b1,
                0.0,
                0.0,
                slope(0) / b2,
                -slope(1) / b2,
                0.0,
                0.0,
                slope(1) / b3,
                -slope(2) / b3,
            ],
        );
        let b = DMatrix::from_column_slice(3, 1, &[self.pump_gain() / b1, 0.0, 0.0]);
        (a, b)
    }

    fn pump_gain(&self) -> f64 {
        let pp = &self.params.pump;
        pp.q_max / (pp.u_max - pp.u_min)
    }
}

impl Dynamics for MultiTank {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let q = pump_map(u[0], &self.params.pump);
        let (d, _) = tank_rhs(x, q, &self.params);
        dx[..3].copy_from_slice(&d);
    }

    /// Exact derivative, including the level-dependent cross-section terms.
    fn jacobian(&self, x: &[f64], _u: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let p = &self.params;
        let f = |i: usize| p.outflow(i, x[i]);
        let df = |i: usize| p.valve[i] * p.alpha[i] * x[i].powf(p.alpha[i] - 1.0);
        let b1 = p.beta1();
        let b2 = p.beta2(x[1]);
        let db2 = p.b * p.w_t / p.h_max[1];
        let b3 = p.beta3(x[2]);
        let s = (p.r * p.r - (p.r - x[2]).powi(2)).sqrt();
        let db3 = p.w_t * (p.r - x[2]) / s;
        let net2 = f(0) - f(1);
        let net3 = f(1) - f(2);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                -df(0) / b1,
                0.0,
                0.0,
                df(0) / b2,
                -df(1) / b2 - net2 * db2 / (b2 * b2),
                0.0,
                0.0,
                df(1) / b3,
                -df(2) / b3 - net3 * db3 / (b3 * b3),
            ],
        );
        let b = DMatrix::from_column_slice(3, 1, &[self.pump_gain() / b1, 0.0, 0.0]);
        Some((a, b))
    }

    fn check_operating_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        let p = &self.params;
        if x.iter().any(|h| !(*h > 0.0)) {
            return Err(AdpError::SingularLinearization(format!(
                "levels {x:?} must be positive (valve slope diverges at an empty tank)"
            )));
        }
        if x[2] >= 2.0 * p.r {
            return Err(AdpError::SingularLinearization(format!(
                "bottom level {} leaves the tank section (2R = {})",
                x[2],
                2.0 * p.r
            )));
        }
        if !(u[0] >= p.pump.u_min && u[0] <= p.pump.u_max) {
            return Err(AdpError::SingularLinearization(format!(
                "pump voltage {} outside [{}, {}]",
                u[0], p.pump.u_min, p.pump.u_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub levels: [f64; 3],
    pub inflow: f64,
    pub input: f64,
    /// True when the requested levels were not flow-balanced and the lower
    /// tanks were recomputed from the top level.
    pub adjusted: bool,
}

impl SteadyState {
    pub fn state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.levels)
    }
    pub fn input_vector(&self) -> DVector<f64> {
        DVector::from_element(1, self.input)
    }
}

fn level_for_flow(q: f64, i: usize, p: &TankParams) -> f64 {
    (q / p.valve[i]).powf(1.0 / p.alpha[i])
}

/// Steady state whose top level is `x_r[0]`. Lower levels are kept if they
/// balance the cascade to `1e-10` (relative) and recomputed otherwise.
pub fn solve_steady_input(x_r: &[f64], p: &TankParams) -> Result<SteadyState> {
    if x_r.len() != 3 || x_r.iter().zip(&p.h_max).any(|(h, m)| !(*h > 0.0 && h < m)) {
        return Err(AdpError::invalid("set-point", format!("levels {x_r:?} must be interior")));
    }
    let q = p.outflow(0, x_r[0]);
    if q > p.pump.q_max {
        return Err(AdpError::UnreachableSetpoint {
            required: q,
            available: p.pump.q_max,
        });
    }
    let balanced = (1..3).all(|i| (p.outflow(i, x_r[i]) - q).abs() <= 1e-10 * q);
    let levels = if balanced {
        [x_r[0], x_r[1], x_r[2]]
    } else {
        let l = [x_r[0], level_for_flow(q, 1, p), level_for_flow(q, 2, p)];
        if l.iter().zip(&p.h_max).any(|(h, m)| h >= m) {
            return Err(AdpError::invalid(
                "set-point",
                format!("flow-balanced levels {l:?} overflow the tanks"),
            ));
        }
        l
    };
    Ok(SteadyState {
        levels,
        inflow: q,
        input: pump_inverse(q, &p.pump),
        adjusted: !balanced,
    })
}

/// Steady state reached under a constant pump voltage.
pub fn steady_state_for_input(u: f64, p: &TankParams) -> Result<SteadyState> {
    if !(u > p.pump.u_min && u <= p.pump.u_max) {
        return Err(AdpError::invalid(
            "set-point input",
            format!("{u} must lie in ({}, {}]", p.pump.u_min, p.pump.u_max),
        ));
    }
    let q = pump_map(u, &p.pump);
    let levels = [level_for_flow(q, 0, p), level_for_flow(q, 1, p), level_for_flow(q, 2, p)];
    if levels.iter().zip(&p.h_max).any(|(h, m)| h >= m) {
        return Err(AdpError::invalid(
            "set-point input",
            format!("steady levels {levels:?} for {u} V overflow the tanks"),
        ));
    }
    Ok(SteadyState {
        levels,
        inflow: q,
        input: u,
        adjusted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn balanced_cascade_has_zero_derivative() {
        let p = TankParams::default();
        let ss = steady_state_for_input(0.8, &p).unwrap();
        let (d, degenerate) = tank_rhs(&ss.levels, ss.inflow, &p);
        assert!(!degenerate);
        for v in d {
            assert!(v.abs() < 1e-15, "{d:?}");
        }
    }

    #[test]
    fn middle_section_at_empty_is_base_width() {
        let p = TankParams::default();
        assert_relative_eq!(p.beta2(0.0), p.c * p.w_t);
    }

    #[test]
    fn bottom_section_floor() {
        let p = TankParams::default();
        assert!(p.beta3(0.0) > 0.0);
        assert_eq!(p.beta3(0.0), p.beta3(BETA3_FLOOR));
        let (_, degenerate) = tank_rhs(&[0.1, 0.1, 0.0], 0.0, &p);
        assert!(degenerate);
    }

    #[test]
    fn default_point_sign_pattern() {
        // H = 0.15 everywhere, q = 5e-5: the top tank receives less than it
        // loses, the middle tank drains slower than it fills, and so on.
        let p = TankParams::default();
        let h = [0.15, 0.15, 0.15];
        let (d, _) = tank_rhs(&h, 5e-5, &p);
        let f: Vec<f64> = (0..3).map(|i| p.outflow(i, h[i])).collect();
        assert!(d.iter().all(|v| v.is_finite()));
        assert_eq!(d[0] > 0.0, 5e-5 > f[0]);
        assert_eq!(d[1] > 0.0, f[0] > f[1]);
        assert_eq!(d[2] > 0.0, f[1] > f[2]);
        assert_relative_eq!(d[0], (5e-5 - f[0]) / p.beta1(), epsilon = 1e-18);
    }

    #[test]
    fn pump_endpoints_and_midpoint() {
        let p = PumpParams::default();
        assert_eq!(pump_map(p.u_min, &p), 0.0);
        assert_eq!(pump_map(p.u_max, &p), p.q_max);
        assert_relative_eq!(pump_map(0.5 * (p.u_min + p.u_max), &p), 0.5 * p.q_max, epsilon = 1e-18);
        assert_eq!(pump_map(2.0, &p), p.q_max);
    }

    #[test]
    fn inverse_pump_at_full_scale_is_exact() {
        let p = PumpParams::default();
        assert_eq!(pump_inverse(p.q_max, &p), p.u_max);
    }

    #[test]
    fn balanced_setpoint_is_returned_unchanged() {
        let p = TankParams::default();
        let ss = steady_state_for_input(0.75, &p).unwrap();
        let again = solve_steady_input(&ss.levels, &p).unwrap();
        assert!(!again.adjusted);
        assert_eq!(again.levels, ss.levels);
        assert_relative_eq!(again.input, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn unbalanced_setpoint_recomputes_lower_levels() {
        let p = TankParams::default();
        let ss = solve_steady_input(&[0.2, 0.15, 0.10], &p).unwrap();
        assert!(ss.adjusted);
        let expected_h2 = (p.valve[0] * 0.2f64.powf(p.alpha[0]) / p.valve[1]).powf(1.0 / p.alpha[1]);
        assert_relative_eq!(ss.levels[1], expected_h2, max_relative = 1e-14);
        for i in 1..3 {
            assert_relative_eq!(p.outflow(i, ss.levels[i]), ss.inflow, max_relative = 1e-10);
        }
    }

    #[test]
    fn unreachable_setpoint() {
        let mut p = TankParams::default();
        p.pump.q_max = 1e-5;
        assert!(matches!(
            solve_steady_input(&[0.2, 0.1, 0.1], &p),
            Err(AdpError::UnreachableSetpoint { .. })
        ));
    }

    #[test]
    fn empty_bottom_tank_is_singular() {
        let t = MultiTank::new(TankParams::default()).unwrap();
        assert!(matches!(
            t.check_operating_point(&[0.1, 0.1, 0.0], &[0.8]),
            Err(AdpError::SingularLinearization(_))
        ));
    }

    #[test]
    fn top_row_of_jacobian() {
        let p = TankParams::default();
        let t = MultiTank::new(p.clone()).unwrap();
        let (a, _) = t.jacobian(&[0.15, 0.15, 0.15], &[0.8]).unwrap();
        let expected = -p.valve[0] * p.alpha[0] / (p.a * p.w_t * 0.15f64.powf(1.0 - p.alpha[0]));
        assert_relative_eq!(a[(0, 0)], expected, max_relative = 1e-14);
        assert_eq!(a[(0, 1)], 0.0);
    }
}
