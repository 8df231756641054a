//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Largest condition number accepted before a system is declared singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// A linear system that could not be solved reliably.
#[derive(Debug, Clone, PartialEq)]
pub struct Singular {
    pub condition: f64,
    /// Columns carrying most of the weight of the near-null direction.
    pub directions: Vec<usize>,
}

/// Rescale a symmetric matrix to unit diagonal. Zero or negative diagonal
/// entries are left unscaled so the degeneracy still shows up.
fn unit_diagonal(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let scale = DVector::from_iterator(
        m.nrows(),
        (0..m.nrows()).map(|i| {
            let d = m[(i, i)].abs();
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] *= scale[i] * scale[j];
        }
    }
    (out, scale)
}

/// Condition number of a symmetric matrix after equilibration, with the
/// columns that dominate the weakest eigenvector.
pub fn symmetric_condition(m: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let (scaled, _) = unit_diagonal(m);
    let sym = (&scaled + scaled.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = 0;
    let mut hi = 0;
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i].abs() < eig.eigenvalues[lo].abs() {
            lo = i;
        }
        if eig.eigenvalues[i].abs() > eig.eigenvalues[hi].abs() {
            hi = i;
        }
    }
    let smallest = eig.eigenvalues[lo].abs();
    let largest = eig.eigenvalues[hi].abs();
    let condition = if smallest == 0.0 || !smallest.is_finite() {
        f64::INFINITY
    } else {
        largest / smallest
    };
    let vec = eig.eigenvectors.column(lo);
    let peak = vec.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let directions = vec
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= 0.3 * peak && peak > 0.0)
        .map(|(i, _)| i)
        .collect();
    (condition, directions)
}

/// Solve `m x = rhs` for a symmetric (definite or not) matrix, refusing
/// systems whose equilibrated condition number exceeds `limit`.
pub fn solve_symmetric(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    limit: f64,
) -> Result<DVector<f64>, Singular> {
    let (condition, directions) = symmetric_condition(m);
    if !(condition <= limit) {
        return Err(Singular { condition, directions });
    }
    let (scaled, s) = unit_diagonal(m);
    let b = rhs.component_mul(&s);
    let y = match scaled.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => {
            let neg = -&scaled;
            match neg.cholesky() {
                Some(c) => -c.solve(&b),
                None => scaled
                    .lu()
                    .solve(&b)
                    .ok_or(Singular { condition, directions: Vec::new() })?,
            }
        }
    };
    Ok(y.component_mul(&s))
}

/// Inverse of a symmetric matrix under the same conditioning rule.
pub fn inverse_symmetric(m: &DMatrix<f64>, limit: f64) -> Result<DMatrix<f64>, Singular> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        out.set_column(j, &solve_symmetric(m, &e, limit)?);
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Inverse of a general square matrix, refusing it when the ratio of extreme
/// singular values (after row/column equilibration) exceeds `limit`.
pub fn inverse_general(m: &DMatrix<f64>, limit: f64) -> Result<DMatrix<f64>, Singular> {
    let n = m.nrows();
    // Equilibrate rows then columns by max-abs so blocks of very different
    // magnitude do not dominate the condition estimate.
    let row_scale: Vec<f64> = (0..n)
        .map(|i| {
            let r = m.row(i).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if r > 0.0 { 1.0 / r } else { 1.0 }
        })
        .collect();
    let mut scaled = m.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= row_scale[i];
        }
    }
    let col_scale: Vec<f64> = (0..n)
        .map(|j| {
            let c = scaled.column(j).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if c > 0.0 { 1.0 / c } else { 1.0 }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= col_scale[j];
        }
    }
    let sv = scaled.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= limit) {
        return Err(Singular { condition, directions: Vec::new() });
    }
    let inv = scaled
        .try_inverse()
        .ok_or(Singular { condition, directions: Vec::new() })?;
    // m = R^-1 S C^-1  =>  m^-1 = C S^-1 R
    let mut out = inv;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] *= col_scale[i] * row_scale[j];
        }
    }
    Ok(out)
}

/// Logistic function evaluated without overflow.
pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_solve_matches_direct() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = solve_symmetric(&m, &b, CONDITION_LIMIT).unwrap();
        assert!((&m * &x - &b).amax() < 1e-14);
        let neg = -&m;
        let y = solve_symmetric(&neg, &b, CONDITION_LIMIT).unwrap();
        assert!((&y + &x).amax() < 1e-14);
    }

    #[test]
    fn collinear_columns_are_named() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        let err = solve_symmetric(&m, &DVector::zeros(3), CONDITION_LIMIT).unwrap_err();
        assert_eq!(err.directions, vec![0, 1]);
    }

    #[test]
    fn general_inverse_handles_mixed_scales() {
        let m = DMatrix::from_row_slice(2, 2, &[1e-6, 3.0, 0.0, 2e5]);
        let inv = inverse_general(&m, CONDITION_LIMIT).unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0);
        assert!((expit(800.0) - 1.0).abs() < 1e-300 + f64::EPSILON);
        assert!((logit(expit(1.3)) - 1.3).abs() < 1e-12);
    }
}
