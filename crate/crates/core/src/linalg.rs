//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value tolerance used for every rank decision.
pub const RANK_RTOL: f64 = 1e-10;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Log-determinant of an SPD matrix via Cholesky, `None` if not SPD.
pub fn spd_logdet(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..a.nrows() {
        s += l[(i, i)].ln();
    }
    Some(2.0 * s)
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.is_square() && a.iter().all(|v| v.is_finite()) && a.clone().cholesky().is_some()
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.clone().svd(false, false).singular_values
}

/// Numerical rank with singular values above `RANK_RTOL * sigma_max`.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let s = singular_values(a);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_RTOL * smax).count()
}

/// Rank with singular values above `RANK_RTOL * reference`.
pub fn rank_relative_to(a: &DMatrix<f64>, reference: f64) -> usize {
    if reference <= 0.0 {
        return 0;
    }
    singular_values(a)
        .iter()
        .filter(|&&v| v > RANK_RTOL * reference)
        .count()
}

/// Orthonormal basis (as columns) of the column span of `a`.
pub fn column_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len())
        .filter(|&i| smax > 0.0 && s[i] > RANK_RTOL * smax)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Orthonormal basis (as columns) of the kernel of `a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to a square matrix so the full right singular basis is returned.
    let mut padded = DMatrix::zeros(a.nrows().max(n), n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let null: Vec<usize> = (0..s.len())
        .filter(|&i| smax == 0.0 || s[i] <= RANK_RTOL * smax)
        .collect();
    let mut out = DMatrix::zeros(n, null.len());
    for (c, &i) in null.iter().enumerate() {
        out.set_column(c, &vt.row(i).transpose());
    }
    out
}

/// Orthogonal projector onto the span of orthonormal columns `q`.
pub fn projector(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

/// Orthonormal basis of `span(a) + span(b)`.
pub fn subspace_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    column_space(&m)
}

/// Orthonormal basis of `span(a) ∩ span(b)` for orthonormal inputs.
pub fn subspace_intersection(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || b.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    // x in both spans iff (I - P_a) x = 0 and (I - P_b) x = 0.
    let id = DMatrix::<f64>::identity(n, n);
    let ca = &id - projector(a);
    let cb = &id - projector(b);
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&ca);
    stacked.view_mut((n, 0), (n, n)).copy_from(&cb);
    null_space(&stacked)
}

/// Orthonormal basis of the orthogonal complement of `span(q)`.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    if q.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    null_space(&q.transpose())
}

pub fn same_subspace(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.ncols() == b.ncols() && (projector(a) - projector(b)).amax() <= tol
}

pub fn sym_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    symmetrize(a).symmetric_eigen()
}

/// Spectral norm (largest singular value).
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).iter().cloned().fold(0.0, f64::max)
}

/// Spectral condition number of an SPD matrix.
pub fn spd_condition(a: &DMatrix<f64>) -> f64 {
    let e = sym_eigen(a).eigenvalues;
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigen(a).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigen(a)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// SPD matrix power `a^t` through the eigendecomposition.
pub fn spd_power(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let e = sym_eigen(a);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.powf(t)));
    symmetrize(&(&e.eigenvectors * d * e.eigenvectors.transpose()))
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Build a matrix from row vectors; `cols` is used when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    let c = rows.first().map(|r| r.len()).unwrap_or(cols);
    if rows.iter().any(|r| r.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        assert_relative_eq!(spd_logdet(&a).unwrap(), 11f64.ln(), epsilon = 1e-14);
        assert!(spd_logdet(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_none());
    }

    #[test]
    fn null_space_of_projection() {
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let k = null_space(&l);
        assert_eq!(k.ncols(), 1);
        assert_relative_eq!(k[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_eq!(rank(&l), 1);
    }

    #[test]
    fn sums_and_intersections() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let xy = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let yz = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(subspace_sum(&x, &yz).ncols(), 3);
        let i = subspace_intersection(&xy, &yz);
        assert_eq!(i.ncols(), 1);
        assert_relative_eq!(i[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_eq!(orthogonal_complement(&xy).ncols(), 1);
    }

    #[test]
    fn power_inverts() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = spd_power(&a, 0.5);
        assert_relative_eq!(&h * &h, a, epsilon = 1e-12);
    }
}
