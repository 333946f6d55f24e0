//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// 2-norm condition number, `inf` for singular input.
pub fn condition(a: &CMat) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    SVD::new(a.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Solves `a x = b` by partial-pivoting LU.
pub fn solve(a: &CMat, b: &[C64]) -> Result<Vec<C64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot solve a {}x{} system with a right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let rhs = DVector::from_column_slice(b);
    a.clone()
        .lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Conditioning("singular linear system".into()))
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("matrix is not invertible".into()))
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn is_diagonal(a: &CMat) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == ZERO))
}

/// Eigenvalues and unit-norm eigenvectors (as columns) of a square matrix.
///
/// Exactly diagonal input is returned as is, with the identity as
/// eigenvector matrix, so diagonal families keep exact leading data.
pub fn eig(a: &CMat) -> Result<(Vec<C64>, CMat)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("eig of a {}x{} matrix", n, a.ncols())));
    }
    if is_diagonal(a) {
        return Ok(((0..n).map(|i| a[(i, i)]).collect(), identity(n)));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Conditioning("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
    let mut vectors = CMat::zeros(n, n);
    for k in 0..n {
        // back-substitution for (T - t_kk) y = 0 with y_k = 1
        let mut y = vec![ZERO; n];
        y[k] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let s: C64 = (j + 1..=k).map(|l| t[(j, l)] * y[l]).sum();
            let mut d = t[(j, j)] - values[k];
            if d.norm() < f64::EPSILON * scale {
                d = C64::new(f64::EPSILON * scale, 0.0);
            }
            y[j] = -s / d;
        }
        let v = &q * DVector::from_vec(y);
        let norm = v.norm();
        vectors.set_column(k, &(v / C64::new(norm, 0.0)));
    }
    Ok((values, vectors))
}

/// Solves the Sylvester equation `a x - x b = c` through its Kronecker
/// vectorisation `(I (x) a - b^T (x) I) vec x = vec c`.
pub fn sylvester(a: &CMat, b: &CMat, c: &CMat) -> Result<CMat> {
    let (p, q) = (a.nrows(), b.nrows());
    if a.ncols() != p || b.ncols() != q || c.nrows() != p || c.ncols() != q {
        return Err(Error::Dimension(format!(
            "Sylvester shapes a {}x{}, b {}x{}, c {}x{}",
            p,
            a.ncols(),
            q,
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let n = p * q;
    let mut k = CMat::zeros(n, n);
    // vec is column-major: index (i, j) -> i + p j
    for j in 0..q {
        for i in 0..p {
            let row = i + p * j;
            for l in 0..p {
                k[(row, l + p * j)] += a[(i, l)];
            }
            for l in 0..q {
                k[(row, i + p * l)] -= b[(l, j)];
            }
        }
    }
    let x = solve(&k, c.as_slice())?;
    Ok(CMat::from_column_slice(p, q, &x))
}
