//! Small dense linear-algebra helpers shared by the synthesis and control code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AdpError, Result};

/// Eigenvalue floor used by every positive-semidefiniteness test.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_TOLERANCE
}

/// `xᵀ P x` without allocating. `p` must be square with side `x.len()`.
#[inline]
pub fn quad_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let data = p.as_slice();
    let mut acc = 0.0;
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * x[i];
        }
        acc += s * x[j];
    }
    acc
}

/// Appends the constant 1 used by the affine embedding.
pub fn augment(x: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 1);
    v.as_mut_slice()[..x.len()].copy_from_slice(x);
    v[x.len()] = 1.0;
    v
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Exact zero-order-hold discretization of `ẋ = Ac x + Bc u` over `dt`.
pub fn zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ac.nrows();
    let m = bc.ncols();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    block.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = block.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Forward-Euler discretization, kept for cross-checking the exact hold.
pub fn euler(ac: &DMatrix<f64>, bc: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ac.nrows();
    (DMatrix::identity(n, n) + ac * dt, bc * dt)
}

/// Solves `Aᵀ P A − P + Q = 0` for a Schur-stable `A`.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let radius = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max);
    if radius >= 1.0 {
        return Err(AdpError::invalid(
            "terminal weight",
            format!("discrete Lyapunov solution needs a stable A, spectral radius is {radius}"),
        ));
    }
    let at = a.transpose();
    let lhs = DMatrix::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| {
        AdpError::invalid("terminal weight", "Lyapunov system is singular")
    })?;
    Ok(symmetrized(DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Block-diagonal `[[a, 0], [0, corner]]`.
pub fn block_diag_scalar(a: &DMatrix<f64>, corner: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out[(n, n)] = corner;
    out
}
