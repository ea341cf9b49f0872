//! Offline construction of the min-of-quadratics value function.
//!
//! Starting from `Q̄_N`, every matrix of a level spawns one child per
//! subsystem through `P = Q̄_σ + Ā_σᵀ P⁺ Ā_σ`. The children are pruned with the
//! single-dominator ε-redundancy test, so the level-1 set satisfies
//! `min_kept(x̄) ≤ min_all(x̄) + ε‖x̄‖²` for each pruned level.
//!
//! Matrices keep the lexicographic order of their generating switching
//! sequences (first move most significant); pruning is a stable filter, so
//! all tie-breaks are reproducible regardless of the rayon pool size.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::linalg::{self, min_eigenvalue, PSD_TOLERANCE};
use crate::model::SwitchedAffineModel;
use crate::polytope::Polytope;

/// Redundancy checks against fewer matrices than this stay on one thread.
const PAR_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PruneSchedule {
    /// Prune after expanding every level.
    #[default]
    EveryLevel,
    /// Expand the full tree and prune only the final (level-1) set.
    FinalLevel,
    /// Keep every matrix of the tree.
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    pub horizon: usize,
    pub epsilon: f64,
    /// Largest number of matrices a level may hold before pruning.
    pub budget: usize,
    pub schedule: PruneSchedule,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            horizon: 5,
            epsilon: 0.0,
            budget: 1_000_000,
            schedule: PruneSchedule::EveryLevel,
        }
    }
}

/// Size of one tree level before and after pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub generated: usize,
    pub kept: usize,
    pub pruned: bool,
}

/// Ordered set of symmetric PSD matrices `{P̄ᵢ}` defining `V(x̄) = minᵢ x̄ᵀP̄ᵢx̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSet {
    pub(crate) matrices: Vec<DMatrix<f64>>,
    pub(crate) epsilon: f64,
    pub(crate) horizon: usize,
    pub(crate) subsystems: usize,
    pub(crate) levels: Vec<LevelStats>,
    pub(crate) fingerprint: String,
    /// Positions in the set this one was restricted from, if any.
    pub(crate) parent_indices: Option<Vec<usize>>,
}

impl RiccatiSet {
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }
    pub fn len(&self) -> usize {
        self.matrices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
    /// Augmented dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn subsystems(&self) -> usize {
        self.subsystems
    }
    pub fn level_stats(&self) -> &[LevelStats] {
        &self.levels
    }
    /// Number of tree levels at which pruning was applied.
    pub fn pruned_levels(&self) -> usize {
        self.levels.iter().filter(|l| l.pruned).count()
    }
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
    pub fn parent_indices(&self) -> Option<&[usize]> {
        self.parent_indices.as_deref()
    }

    /// `minᵢ x̄ᵀP̄ᵢx̄` and the first index attaining it.
    pub fn eval_value(&self, xbar: &[f64]) -> (f64, usize) {
        debug_assert_eq!(xbar.len(), self.dim());
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (i, p) in self.matrices.iter().enumerate() {
            let v = linalg::quad_form(p, xbar);
            if v < best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    }

    /// [`eval_value`](Self::eval_value) at `[x; 1]`.
    pub fn eval_state(&self, x: &[f64]) -> (f64, usize) {
        let xbar = linalg::augment(x);
        self.eval_value(xbar.as_slice())
    }

    /// Builds a set from explicit matrices, e.g. for tests or external tools.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, epsilon: f64, horizon: usize, subsystems: usize, fingerprint: String) -> Result<Self> {
        validate_matrices(&matrices)?;
        Ok(RiccatiSet {
            matrices,
            epsilon,
            horizon,
            subsystems,
            levels: Vec::new(),
            fingerprint,
            parent_indices: None,
        })
    }
}

pub(crate) fn validate_matrices(matrices: &[DMatrix<f64>]) -> Result<()> {
    let first = matrices
        .first()
        .ok_or_else(|| AdpError::invalid("riccati set", "must not be empty"))?;
    let d = first.nrows();
    for m in matrices {
        if m.nrows() != d || m.ncols() != d {
            return Err(AdpError::invalid("riccati set", "matrices must share one square shape"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::invalid("riccati set", "non-finite entry"));
        }
    }
    Ok(())
}

/// `Q̄_σ + Ā_σᵀ P⁺ Ā_σ`, symmetrized.
pub fn riccati_step(p_next: &DMatrix<f64>, sigma: usize, model: &SwitchedAffineModel) -> DMatrix<f64> {
    let a = model.abar(sigma);
    let mut p = model.qbar(sigma) + a.transpose() * p_next * a;
    linalg::symmetrize(&mut p);
    p
}

/// Level-1 matrix set of the switching tree for horizon `N`, pruned per `opts`.
pub fn build_p1_set(model: &SwitchedAffineModel, opts: &SynthesisOptions) -> Result<RiccatiSet> {
    if opts.horizon == 0 {
        return Err(AdpError::invalid("horizon", "must be at least 1"));
    }
    if !(opts.epsilon >= 0.0) || !opts.epsilon.is_finite() {
        return Err(AdpError::invalid("epsilon", format!("{} must be finite and non-negative", opts.epsilon)));
    }
    let m = model.num_subsystems();
    let mut current = vec![model.qbar_n().clone()];
    let mut levels = Vec::with_capacity(opts.horizon.saturating_sub(1));
    for level in (1..opts.horizon).rev() {
        let generated = current.len().saturating_mul(m);
        if generated > opts.budget {
            return Err(AdpError::SynthesisOverflow {
                level,
                size: generated,
                budget: opts.budget,
            });
        }
        let children: Vec<Vec<DMatrix<f64>>> = (0..m)
            .into_par_iter()
            .map(|sigma| current.iter().map(|p| riccati_step(p, sigma, model)).collect())
            .collect();
        let next: Vec<DMatrix<f64>> = children.into_iter().flatten().collect();
        let prune_now = match opts.schedule {
            PruneSchedule::EveryLevel => true,
            PruneSchedule::FinalLevel => level == 1,
            PruneSchedule::Never => false,
        };
        current = if prune_now { prune(next, opts.epsilon) } else { next };
        log::debug!("level {level}: {generated} generated, {} kept", current.len());
        levels.push(LevelStats {
            level,
            generated,
            kept: current.len(),
            pruned: prune_now,
        });
    }
    Ok(RiccatiSet {
        matrices: current,
        epsilon: opts.epsilon,
        horizon: opts.horizon,
        subsystems: m,
        levels,
        fingerprint: model.fingerprint().to_owned(),
        parent_indices: None,
    })
}

/// Index of the first `Pᵢ` in `candidates` with `(P_j + εI) − Pᵢ ⪰ 0`, i.e.
/// one that dominates `P_j` up to `ε‖x̄‖²`.
pub fn is_eps_redundant(p_j: &DMatrix<f64>, candidates: &[DMatrix<f64>], epsilon: f64) -> Option<usize> {
    let shifted = {
        let mut s = p_j.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += epsilon;
        }
        s
    };
    let dominates = |p_i: &DMatrix<f64>| -> bool {
        let diff = &shifted - p_i;
        // a negative diagonal entry already rules out semidefiniteness
        if (0..diff.nrows()).any(|k| diff[(k, k)] < -PSD_TOLERANCE) {
            return false;
        }
        min_eigenvalue(&diff) >= -PSD_TOLERANCE
    };
    if candidates.len() < PAR_THRESHOLD {
        candidates.iter().position(dominates)
    } else {
        candidates.par_iter().position_first(dominates)
    }
}

/// Single pass in the given order; each matrix is dropped if a matrix kept
/// before it dominates it up to `ε`.
pub fn prune(set: Vec<DMatrix<f64>>, epsilon: f64) -> Vec<DMatrix<f64>> {
    let mut kept: Vec<DMatrix<f64>> = Vec::with_capacity(set.len());
    for p in set {
        if is_eps_redundant(&p, &kept, epsilon).is_none() {
            kept.push(p);
        }
    }
    kept
}

/// Matrices of `parent` that are the minimizer at some grid point of `region`
/// (`per_axis` samples per coordinate of its bounding box), in parent order.
pub fn restrict_to_region(parent: &RiccatiSet, region: &Polytope, per_axis: usize) -> Result<RiccatiSet> {
    if region.dim() + 1 != parent.dim() {
        return Err(AdpError::Dimension {
            context: "region dimension",
            expected: parent.dim() - 1,
            actual: region.dim(),
        });
    }
    if per_axis == 0 {
        return Err(AdpError::invalid("region grid", "needs at least one point per axis"));
    }
    let points = region.grid_points(per_axis)?;
    if points.is_empty() {
        return Err(AdpError::EmptyRegion {
            samples: per_axis.pow(region.dim() as u32),
        });
    }
    let winners: Vec<usize> = points.par_iter().map(|x| parent.eval_state(x).1).collect();
    let chosen: BTreeSet<usize> = winners.into_iter().collect();
    let local: Vec<usize> = chosen.into_iter().collect();
    let indices: Vec<usize> = match &parent.parent_indices {
        Some(up) => local.iter().map(|&i| up[i]).collect(),
        None => local.clone(),
    };
    Ok(RiccatiSet {
        matrices: local.iter().map(|&i| parent.matrices[i].clone()).collect(),
        epsilon: parent.epsilon,
        horizon: parent.horizon,
        subsystems: parent.subsystems,
        levels: parent.levels.clone(),
        fingerprint: parent.fingerprint.clone(),
        parent_indices: Some(indices),
    })
}

/// Regional value-function sets over an axis-aligned partition of `X`.
#[derive(Debug, Clone)]
pub struct RegionRiccatiMap {
    regions: Vec<Polytope>,
    sets: Vec<RiccatiSet>,
    domain: RiccatiSet,
    parent: RiccatiSet,
}

impl RegionRiccatiMap {
    pub fn regions(&self) -> &[Polytope] {
        &self.regions
    }
    pub fn sets(&self) -> &[RiccatiSet] {
        &self.sets
    }
    /// The set restricted to the whole constraint set.
    pub fn domain(&self) -> &RiccatiSet {
        &self.domain
    }
    /// The unconstrained set everything was restricted from.
    pub fn parent(&self) -> &RiccatiSet {
        &self.parent
    }

    /// Set for the lowest-index region containing `x`, else the domain set.
    pub fn lookup(&self, x: &[f64]) -> (Option<usize>, &RiccatiSet) {
        match self.regions.iter().position(|r| r.contains(x)) {
            Some(j) => (Some(j), &self.sets[j]),
            None => (None, &self.domain),
        }
    }

    pub fn from_parts(
        regions: Vec<Polytope>,
        sets: Vec<RiccatiSet>,
        domain: RiccatiSet,
        parent: RiccatiSet,
    ) -> Result<Self> {
        if regions.len() != sets.len() || regions.is_empty() {
            return Err(AdpError::invalid("region map", "needs one set per region"));
        }
        Ok(RegionRiccatiMap {
            regions,
            sets,
            domain,
            parent,
        })
    }
}

/// Splits `z` into per-axis cell counts, giving each prime factor (largest
/// first) to the axis with the fewest cells so far.
pub fn split_counts(z: usize, dim: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut rest = z.max(1);
    let mut f = 2;
    while f * f <= rest {
        while rest % f == 0 {
            factors.push(f);
            rest /= f;
        }
        f += 1;
    }
    if rest > 1 {
        factors.push(rest);
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let mut counts = vec![1usize; dim];
    for f in factors {
        let (axis, _) = counts
            .iter()
            .enumerate()
            .min_by_key(|(i, c)| (**c, *i))
            .expect("positive dimension");
        counts[axis] *= f;
    }
    counts
}

/// Partitions `X`'s bounding box into `z` boxes (intersected with `X`) and
/// restricts the domain set to each cell.
pub fn partition_regions(
    x_set: &Polytope,
    z: usize,
    parent: &RiccatiSet,
    per_axis: usize,
) -> Result<RegionRiccatiMap> {
    if z == 0 {
        return Err(AdpError::invalid("partitions", "need at least one region"));
    }
    let domain = restrict_to_region(parent, x_set, per_axis)?;
    let (lo, hi) = x_set.bounding_box()?;
    let counts = split_counts(z, x_set.dim());
    let edges: Vec<Vec<f64>> = (0..x_set.dim())
        .map(|i| crate::polytope::axis_points(lo[i], hi[i], counts[i] + 1))
        .collect();
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for axis in &edges {
        let mut next = Vec::new();
        for prefix in &cells {
            for w in axis.windows(2) {
                let mut c = prefix.clone();
                c.push((w[0], w[1]));
                next.push(c);
            }
        }
        cells = next;
    }
    let mut regions = Vec::with_capacity(cells.len());
    let mut sets = Vec::with_capacity(cells.len());
    for cell in cells {
        let (clo, chi): (Vec<f64>, Vec<f64>) = cell.into_iter().unzip();
        let region = Polytope::from_box(&clo, &chi)?.intersect(x_set)?;
        let set = restrict_to_region(&domain, &region, per_axis)?;
        regions.push(region);
        sets.push(set);
    }
    Ok(RegionRiccatiMap {
        regions,
        sets,
        domain,
        parent: parent.clone(),
    })
}

/// Error bound after pruning `levels` tree levels when every `Ā_σ` has
/// spectral norm at most `abar_norm`: `ε Σₖ ‖Ā‖²ᵏ`, which reduces to
/// `levels·ε` for non-expansive subsystems.
pub fn accumulated_bound_factor(epsilon: f64, levels: usize, abar_norm: f64) -> f64 {
    let g = (abar_norm * abar_norm).max(1.0);
    (0..levels).map(|k| epsilon * g.powi(k as i32)).sum()
}
