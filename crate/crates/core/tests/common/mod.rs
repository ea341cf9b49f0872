//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use adpmpc::config::{ScenarioConfig, System};
use adpmpc::{CostWeights, SwitchedAffineModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| uniform(rng, -0.7, 0.7));
    let mut p = &l * l.transpose() + DMatrix::identity(n, n) * floor;
    p = (&p + p.transpose()) * 0.5;
    p
}

/// Plain linear system with quantized inputs, described without the
/// augmented matrices so the oracle can simulate it directly.
#[derive(Debug, Clone)]
pub struct Instance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub levels: Vec<DVector<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_n: DMatrix<f64>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, count: usize) -> Self {
        let a = DMatrix::from_fn(n, n, |i, j| uniform(rng, -0.5, 0.5) + if i == j { 0.4 } else { 0.0 });
        let b = DMatrix::from_fn(n, m, |_, _| uniform(rng, -1.0, 1.0));
        let levels = (0..count)
            .map(|_| DVector::from_fn(m, |_, _| uniform(rng, -1.0, 1.0)))
            .collect();
        let r = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| uniform(rng, 0.05, 1.0)));
        Instance {
            q: random_psd(rng, n, 0.1),
            q_n: random_psd(rng, n, 0.0),
            a,
            b,
            levels,
            r,
        }
    }

    pub fn model(&self) -> SwitchedAffineModel {
        let w = CostWeights::new(self.q.clone(), self.r.clone(), self.q_n.clone()).unwrap();
        SwitchedAffineModel::from_levels(&self.a, &self.b, &self.levels, &w).unwrap()
    }

    fn stage(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (v.transpose() * &self.r * v)[(0, 0)]
    }

    /// Cost of applying `seq` from `x` and paying the terminal weight after it.
    pub fn sequence_cost(&self, x: &DVector<f64>, seq: &[usize]) -> f64 {
        let mut x = x.clone();
        let mut cost = 0.0;
        for &s in seq {
            let v = &self.levels[s];
            cost += self.stage(&x, v);
            x = &self.a * &x + &self.b * v;
        }
        cost + (x.transpose() * &self.q_n * &x)[(0, 0)]
    }

    /// Minimum of [`Self::sequence_cost`] over all `M^steps` sequences and the
    /// first element of a minimizing sequence (lowest index on ties).
    pub fn brute_force(&self, x: &DVector<f64>, steps: usize) -> (f64, Option<usize>) {
        let m = self.levels.len();
        let total = m.pow(steps as u32);
        let mut best = (f64::INFINITY, None);
        let mut seq = vec![0usize; steps];
        for code in 0..total {
            let mut c = code;
            for k in (0..steps).rev() {
                seq[k] = c % m;
                c /= m;
            }
            let cost = self.sequence_cost(x, &seq);
            if cost < best.0 {
                best = (cost, seq.first().copied());
            }
        }
        best
    }
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn default_system() -> System {
    ScenarioConfig::default().build().unwrap()
}

pub fn system_from(name: &str) -> System {
    ScenarioConfig::load(&config_path(name)).unwrap().build().unwrap()
}

pub fn approx_le(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol * b.abs().max(1.0)
}
