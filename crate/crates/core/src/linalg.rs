//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for numerical rank decisions.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    assert!(m.is_square(), "sym_eigenvalues needs a square matrix");
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(ev)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest absolute entry (0 for empty matrices).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Outcome of a numerical rank computation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest singular value counted in the rank (0 when rank is 0).
    pub sigma_min_retained: f64,
    /// Smallest singular value overall (0 if fewer singular values than rows).
    pub sigma_min: f64,
}

/// Numerical rank with the relative rule `sigma > rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> RankInfo {
    let sv = singular_values(m);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let threshold = rel_tol * sigma_max;
    let retained: Vec<f64> = sv.iter().copied().filter(|s| *s > threshold && *s > 0.0).collect();
    let sigma_min = if sv.len() < m.nrows().min(m.ncols()) {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    };
    RankInfo {
        rank: retained.len(),
        sigma_max,
        sigma_min_retained: retained.last().copied().unwrap_or(0.0),
        sigma_min,
    }
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (RANK_REL_TOL * sigma_max).max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps).expect("svd computed with u and v_t")
}

/// Orthonormal basis of the right null space of `m` (columns).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    let projector = DMatrix::<f64>::identity(cols, cols) - pinv(m) * m;
    let svd = projector.svd(true, false);
    let u = svd.u.expect("requested u");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 0.5)
        .collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    basis
}

pub fn blockdiag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Place matrices with equal row counts side by side.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Positive definiteness through a Cholesky attempt on the symmetric part.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.nrows() > 0 && ((m + m.transpose()) * 0.5).cholesky().is_some()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= tol
}

/// 2-norm condition number of a square matrix (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_dependent_rows() {
        let m = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(numerical_rank(&m, RANK_REL_TOL).rank, 2);
    }

    #[test]
    fn null_space_is_orthonormal_and_annihilated() {
        let m = DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 2.0, -1.0, 3.0, 0.0, 1.0, 1.0, 1.0, -2.0]);
        let n = null_space(&m);
        assert_eq!(n.ncols(), 3);
        assert!(max_abs(&(&m * &n)) < 1e-12);
        let gram = n.transpose() * &n;
        assert!(max_abs(&(gram - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn blockdiag_and_stack_shapes() {
        let a = DMatrix::from_element(1, 2, 1.0);
        let b = DMatrix::from_element(2, 1, 2.0);
        let d = blockdiag(&[&a, &b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(1, 2)], 2.0);
        assert_eq!(d[(0, 2)], 0.0);
        assert_eq!(vstack(&[&a, &a]).shape(), (2, 2));
        assert_eq!(hstack(&[&b, &b]).shape(), (2, 2));
    }

    #[test]
    fn pd_check() {
        assert!(is_positive_definite(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])));
        assert!(!is_positive_definite(&DMatrix::from_row_slice(1, 1, &[-1.0])));
    }
}
