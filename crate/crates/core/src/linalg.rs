//! Dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result, SglmmError};

/// Relative eigenvalue cutoff: anything below `EIG_DROP_TOL * lambda_max`
/// is treated as zero wherever a (pseudo-)inverse is formed.
pub const EIG_DROP_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(a.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Moore-Penrose inverse of a symmetric PSD matrix plus the log of its
/// pseudo-determinant and its numerical rank.
pub fn psd_pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, f64, usize) {
    let (values, vectors) = sorted_symmetric_eigen(a);
    let cutoff = EIG_DROP_TOL * values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut log_pdet = 0.0;
    let mut rank = 0;
    for (k, &lam) in values.iter().enumerate() {
        if lam > cutoff {
            let v = vectors.column(k);
            inv += (v * v.transpose()) / lam;
            log_pdet += lam.ln();
            rank += 1;
        }
    }
    (inv, log_pdet, rank)
}

/// Verifies that `x` has full column rank via its Gram matrix spectrum.
pub fn check_full_column_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() == 0 {
        return invalid("design matrix has no columns");
    }
    if x.ncols() > x.nrows() {
        return invalid(format!("design matrix has more columns ({}) than rows ({})", x.ncols(), x.nrows()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("design matrix has non-finite entries");
    }
    let gram = x.transpose() * x;
    let (values, _) = sorted_symmetric_eigen(&gram);
    let top = values[0];
    let bottom = values[values.len() - 1];
    if top <= 0.0 || bottom <= 1e-10 * top {
        return invalid("design matrix is rank deficient");
    }
    Ok(())
}

/// Residual projector `I - X (X'X)^{-1} X'` onto the orthogonal complement of
/// the column space of `x`.
pub fn residual_projector(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_full_column_rank(x)?;
    let n = x.nrows();
    let gram = x.transpose() * x;
    let chol = gram.cholesky().ok_or_else(|| SglmmError::InvalidInput("design Gram matrix not invertible".into()))?;
    let hat = x * chol.solve(&x.transpose());
    let mut p = DMatrix::identity(n, n) - hat;
    symmetrize(&mut p);
    Ok(p)
}

/// Applies the residual projector to the columns of `b` without forming the
/// n x n projector.
pub fn project_out(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_full_column_rank(x)?;
    let gram = x.transpose() * x;
    let chol = gram.cholesky().ok_or_else(|| SglmmError::InvalidInput("design Gram matrix not invertible".into()))?;
    let coef = chol.solve(&(x.transpose() * b));
    Ok(b - x * coef)
}

/// Inverse of a symmetric negative-definite matrix's negation, i.e. `(-a)^{-1}`,
/// or the smallest eigenvalue of `-a` when it is not positive definite.
pub fn neg_inverse(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let mut neg = -a.clone();
    symmetrize(&mut neg);
    match neg.clone().cholesky() {
        Some(ch) => {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            Ok(inv)
        }
        None => {
            let (values, _) = sorted_symmetric_eigen(&neg);
            Err(values[values.len() - 1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_eigen_descends() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (v, vec) = sorted_symmetric_eigen(&a);
        assert_eq!(v.as_slice(), &[5.0, 2.0, 1.0]);
        assert!((vec[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_of_singular_matrix() {
        // rank-one ones matrix: pinv = J / n^2
        let a = DMatrix::from_element(3, 3, 1.0);
        let (inv, log_pdet, rank) = psd_pseudo_inverse(&a);
        assert_eq!(rank, 1);
        assert!((log_pdet - 3f64.ln()).abs() < 1e-12);
        assert!((inv[(0, 1)] - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn projector_annihilates_design() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let p = residual_projector(&x).unwrap();
        assert!((&p * &x).norm() < 1e-12);
        let b = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.37 - 1.0);
        assert!((project_out(&x, &b).unwrap() - &p * &b).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(check_full_column_rank(&x).is_err());
    }
}
