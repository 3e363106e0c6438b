//! Dense solves with row equilibration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` after scaling every row of `a` (and `b`) by the inverse of its max-abs entry.
pub fn solve_equilibrated(mut a: DMatrix<f64>, mut b: DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "square solve needs {n}x{n} and {n}, got {}x{} and {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    for i in 0..n {
        let s = a.row(i).amax();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::SingularJacobian);
        }
        a.row_mut(i).scale_mut(1.0 / s);
        b[i] /= s;
    }
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(Error::SingularJacobian)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularJacobian)
    }
}

/// Unit null vector of the `m x (m+1)` matrix `j`, normalized so that `<v, reference> > 0`.
///
/// Solves the bordered system `[j; reference^T] v = e_{m+1}`.
pub fn null_vector_bordered(j: &DMatrix<f64>, reference: &DVector<f64>) -> Result<DVector<f64>> {
    let m = j.nrows();
    if j.ncols() != m + 1 || reference.len() != m + 1 {
        return Err(Error::Dimension("bordered null vector needs m x (m+1)".into()));
    }
    let mut a = j.clone().insert_row(m, 0.0);
    a.row_mut(m).copy_from(&reference.transpose());
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let v = solve_equilibrated(a, rhs)?;
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::SingularJacobian);
    }
    Ok(v / norm)
}

/// Unit null vector of an `m x (m+1)` matrix via the SVD of the zero-padded square matrix.
pub fn null_vector_svd(j: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = j.nrows();
    if j.ncols() != m + 1 {
        return Err(Error::Dimension("null vector needs m x (m+1)".into()));
    }
    let mut a = j.clone().insert_row(m, 0.0);
    for i in 0..m {
        let s = a.row(i).amax();
        if s > 0.0 {
            a.row_mut(i).scale_mut(1.0 / s);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::SingularJacobian)?;
    let (imin, _) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: DVector<f64> = v_t.row(imin).transpose();
    Ok(v.normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn badly_scaled_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[1e-14, 2e-14, 3.0, 1.0]);
        let b = DVector::from_vec(vec![5e-14, 5.0]);
        let x = solve_equilibrated(a, b).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve_equilibrated(a, DVector::from_vec(vec![1.0, 1.0])).is_err());
        let z = DMatrix::zeros(2, 2);
        assert!(solve_equilibrated(z, DVector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn null_vectors_agree() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, -1.0]);
        let v = null_vector_svd(&j).unwrap();
        assert!((&j * &v).amax() < 1e-12);
        let w = null_vector_bordered(&j, &DVector::from_vec(vec![-1.0, 0.0, 0.0])).unwrap();
        assert!((&j * &w).amax() < 1e-12);
        assert!(w[0] < 0.0);
        assert_abs_diff_eq!(v.dot(&w).abs(), 1.0, epsilon = 1e-12);
    }
}
