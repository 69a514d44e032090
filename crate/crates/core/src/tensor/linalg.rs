//! Small dense solvers used by the query decomposition.

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Gram matrices with a larger condition number are treated as singular.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape(format!("eigenvalues of non-square {}x{}", n, m.cols())));
    }
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        let scale: f64 = a.data().iter().map(|v| v * v).sum();
        if off <= scale * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Condition number of a symmetric positive semi-definite matrix; infinite if singular.
pub fn spd_condition_number(m: &Matrix) -> Result<f64> {
    let eig = symmetric_eigenvalues(m)?;
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if lo <= 0.0 || hi <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(hi / lo)
}

/// Lower Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape(format!("cholesky of non-square {}x{}", n, m.cols())));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if d <= 0.0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
                limit: GRAM_CONDITION_LIMIT,
            });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Solves `m X = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if rhs.rows() != m.rows() {
        return Err(m.dim_err("spd_solve", rhs));
    }
    let l = cholesky(m)?;
    let n = m.rows();
    let mut x = rhs.clone();
    for col in 0..rhs.cols() {
        // L y = b
        for i in 0..n {
            let mut s = x.get(i, col);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, col);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// `s · k · (kᵀk)⁻¹`, the projection that undoes a right factor `kᵀ`.
///
/// If `s = g · kᵀ` and `k` has full column rank the result is `g`.
pub fn pinv_project(s: &Matrix, k: &Matrix) -> Result<Matrix> {
    if s.cols() != k.rows() {
        return Err(s.dim_err("pinv_project", k));
    }
    let gram = k.matmul_tn(k)?;
    let condition = spd_condition_number(&gram)?;
    if !(condition <= GRAM_CONDITION_LIMIT) {
        return Err(Error::Singular {
            condition,
            limit: GRAM_CONDITION_LIMIT,
        });
    }
    let sk = s.matmul(k)?;
    // X G = SK with G symmetric  <=>  G Xᵀ = (SK)ᵀ
    let xt = spd_solve(&gram, &sk.transpose())?;
    Ok(xt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_key_returns_input() {
        let s = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]]);
        let out = pinv_project(&s, &Matrix::identity(3)).unwrap();
        assert!(out.sub(&s).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn diagonal_key_hand_example() {
        let s = Matrix::from_rows(&[[1.0, 4.0]]);
        let k = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        // s·k = [[1, 8]], (kᵀk)⁻¹ = diag(1, 1/4).
        let out = pinv_project(&s, &k).unwrap();
        assert!(out.sub(&Matrix::from_rows(&[[1.0, 2.0]])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn duplicate_columns_are_singular() {
        let k = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let s = Matrix::zeros(2, 3);
        assert!(matches!(pinv_project(&s, &k), Err(Error::Singular { .. })));
    }

    #[test]
    fn wide_key_is_singular() {
        // 2 tokens, 3 features: kᵀk is rank 2.
        let k = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]]);
        assert!(matches!(pinv_project(&Matrix::zeros(1, 2), &k), Err(Error::Singular { .. })));
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spd_solve_round_trip() {
        let m = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.0], [0.5, 3.0]]);
        let b = m.matmul(&x).unwrap();
        let got = spd_solve(&m, &b).unwrap();
        assert!(got.sub(&x).unwrap().max_abs() < 1e-13);
    }
}
