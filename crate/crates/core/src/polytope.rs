//! Half-space polytopes `{x : H x ≤ b}` in small dimension.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, AdpError, Result};

/// Containment tolerance used for state-constraint checks.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    /// Row-major normals, one row per half-space.
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl Polytope {
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        let dim = normals
            .first()
            .map(Vec::len)
            .ok_or_else(|| AdpError::invalid("polytope", "needs at least one half-space"))?;
        check_dim("polytope offsets", normals.len(), offsets.len())?;
        for row in &normals {
            check_dim("polytope normal", dim, row.len())?;
        }
        if normals.iter().flatten().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(AdpError::invalid("polytope", "non-finite coefficient"));
        }
        Ok(Polytope {
            dim,
            normals,
            offsets,
        })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
            return Err(AdpError::invalid("box", format!("lower {lower:?} exceeds upper {upper:?}")));
        }
        let n = lower.len();
        let mut normals = Vec::with_capacity(2 * n);
        let mut offsets = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            normals.push(row);
            offsets.push(upper[i]);
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            normals.push(row);
            offsets.push(-lower[i]);
        }
        Polytope::new(normals, offsets)
    }

    /// The whole space, expressed with a single trivially satisfied half-space.
    pub fn everything(dim: usize) -> Self {
        Polytope {
            dim,
            normals: vec![vec![0.0; dim]],
            offsets: vec![0.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_halfspaces(&self) -> usize {
        self.offsets.len()
    }

    pub fn halfspaces(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.normals
            .iter()
            .map(Vec::as_slice)
            .zip(self.offsets.iter().copied())
    }

    /// Largest `hᵢᵀx − bᵢ`; non-positive iff `x` is inside.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.halfspaces()
            .map(|(h, b)| h.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_with(x, CONTAINMENT_TOLERANCE)
    }

    pub fn contains_with(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim && self.max_violation(x) <= tol
    }

    /// `{x + offset : x ∈ self}`.
    pub fn translated(&self, offset: &[f64]) -> Polytope {
        let offsets = self
            .halfspaces()
            .map(|(h, b)| b + h.iter().zip(offset).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        Polytope {
            dim: self.dim,
            normals: self.normals.clone(),
            offsets,
        }
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        check_dim("polytope intersection", self.dim, other.dim)?;
        let mut normals = self.normals.clone();
        normals.extend(other.normals.iter().cloned());
        let mut offsets = self.offsets.clone();
        offsets.extend(other.offsets.iter().copied());
        Polytope::new(normals, offsets)
    }

    /// Vertices found by intersecting every `dim`-subset of bounding hyperplanes.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.dim;
        let rows = self.normals.len();
        let mut out: Vec<Vec<f64>> = Vec::new();
        let mut pick: Vec<usize> = (0..n).collect();
        if rows < n {
            return out;
        }
        loop {
            let a = DMatrix::from_fn(n, n, |i, j| self.normals[pick[i]][j]);
            let b = DVector::from_fn(n, |i, _| self.offsets[pick[i]]);
            if let Some(x) = a.lu().solve(&b) {
                let x: Vec<f64> = x.iter().copied().collect();
                if x.iter().all(|v| v.is_finite())
                    && self.contains_with(&x, 1e-9)
                    && !out
                        .iter()
                        .any(|v| v.iter().zip(&x).all(|(p, q)| (p - q).abs() <= 1e-12))
                {
                    out.push(x);
                }
            }
            // next combination in lexicographic order
            let mut i = n;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if pick[i] < rows - n + i {
                    pick[i] += 1;
                    for k in (i + 1)..n {
                        pick[k] = pick[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Axis-aligned bounding box. Fails for unbounded or empty polytopes.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let verts = self.vertices();
        if verts.is_empty() {
            return Err(AdpError::invalid("polytope", "empty or unbounded (no vertices)"));
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in &verts {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        // cones and slabs still have vertices; probe past each face of the box
        for i in 0..self.dim {
            for (coord, step) in [(hi[i], 1.0), (lo[i], -1.0)] {
                let mut probe: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
                probe[i] = coord + step * (1.0 + (hi[i] - lo[i]).abs());
                if self.contains_with(&probe, 0.0) {
                    return Err(AdpError::invalid("polytope", "unbounded along an axis"));
                }
            }
        }
        Ok((lo, hi))
    }

    /// Deterministic tensor grid over the bounding box, filtered to the polytope.
    pub fn grid_points(&self, per_axis: usize) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.bounding_box()?;
        Ok(tensor_grid(&lo, &hi, per_axis)
            .into_iter()
            .filter(|p| self.contains(p))
            .collect())
    }
}

/// Tensor grid with `per_axis` points per coordinate, first axis varying slowest.
/// A single point per axis sits at the midpoint.
pub fn tensor_grid(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(&l, &h)| axis_points(l, h, per_axis))
        .collect();
    tensor_product(&axes)
}

pub(crate) fn axis_points(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|k| {
                if k + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

pub(crate) fn tensor_product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_containment_and_violation() {
        let b = Polytope::from_box(&[0.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(b.contains(&[0.5, 0.0]));
        assert!(b.contains(&[1.0, 1.0]));
        assert!(!b.contains(&[1.1, 0.0]));
        assert!((b.max_violation(&[1.5, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangle_bounding_box_from_vertices() {
        // x ≥ 0, y ≥ 0, x + y ≤ 2
        let t = Polytope::new(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            vec![0.0, 0.0, 2.0],
        )
        .unwrap();
        assert_eq!(t.vertices().len(), 3);
        let (lo, hi) = t.bounding_box().unwrap();
        assert_eq!(lo, vec![0.0, 0.0]);
        assert_eq!(hi, vec![2.0, 2.0]);
    }

    #[test]
    fn halfplane_is_unbounded() {
        let h = Polytope::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, 1.0]).unwrap();
        assert!(h.bounding_box().is_err());
    }

    #[test]
    fn translation_moves_box() {
        let b = Polytope::from_box(&[0.0], &[1.0]).unwrap().translated(&[-0.8]);
        let (lo, hi) = b.bounding_box().unwrap();
        assert!((lo[0] + 0.8).abs() < 1e-15 && (hi[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn grid_has_expected_size_and_order() {
        let g = tensor_grid(&[0.0, 0.0], &[1.0, 2.0], 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[1], vec![0.0, 1.0]);
        assert_eq!(g[8], vec![1.0, 2.0]);
    }
}
