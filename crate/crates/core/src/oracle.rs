//! Independent reference computations: adaptive Laplace quadrature, direct
//! Newton solves at fixed `hbar` and dense eigensolves. They deliberately
//! share no numerics with the resummation engine.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::borel::{BorelPart, CoefficientFunction};
use crate::error::{Error, Result};
use crate::formal::{sup_norm, ProblemSpec};
use crate::hbar::BorelTerm;
use crate::linalg::{self, CMat};
use crate::matrix::MatrixFamily;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const MAX_LEVEL: usize = 22;
const MAX_PANELS: usize = 20_000;

/// Romberg integration of `f` over `[a, b]`: trapezoid halving with
/// Richardson extrapolation.
fn romberg(f: &dyn Fn(f64) -> C64, a: f64, b: f64, tol: f64) -> Result<C64> {
    let width = b - a;
    let mut prev = vec![(f(a) + f(b)) * (0.5 * width)];
    for level in 1..=MAX_LEVEL {
        let count = 1usize << (level - 1);
        let h = width / (2 * count) as f64;
        let sum: C64 = (0..count).map(|k| f(a + (2 * k + 1) as f64 * h)).sum();
        let mut row = Vec::with_capacity(level + 1);
        row.push(prev[0] * 0.5 + sum * h);
        let mut factor = 1.0;
        for j in 1..=level {
            factor *= 4.0;
            let r = row[j - 1] + (row[j - 1] - prev[j - 1]) / (factor - 1.0);
            row.push(r);
        }
        if level >= 4 && (row[level] - prev[level - 1]).norm() <= tol {
            return Ok(row[level]);
        }
        prev = row;
    }
    Err(Error::Oracle(format!(
        "Romberg quadrature on [{a}, {b}] did not reach {tol:e} within {MAX_LEVEL} halvings"
    )))
}

/// `int_0^{inf e^{i theta}} e^{-xi/hbar} f(xi) dxi` by panelled Romberg
/// quadrature, cut off where the integrand falls below `tol / 100`.
pub fn reference_laplace_fn(
    f: &dyn Fn(C64) -> C64,
    hbar: C64,
    theta: f64,
    tol: f64,
) -> Result<C64> {
    if hbar == ZERO {
        return Ok(ZERO);
    }
    let dir = C64::from_polar(1.0, theta);
    let lambda = dir / hbar;
    if !(lambda.re > 0.0) {
        return Err(Error::Oracle(format!(
            "ray direction {theta} does not decay for hbar = {hbar}"
        )));
    }
    let integrand = |s: f64| dir * (-lambda * s).exp() * f(dir * s);
    let width = (1.0 / lambda.re).min(1.0);
    let panel_tol = tol / 200.0;
    let mut total = ZERO;
    let mut small = 0;
    for p in 0..MAX_PANELS {
        let a = p as f64 * width;
        let b = a + width;
        total += romberg(&integrand, a, b, panel_tol)?;
        let edge = integrand(b).norm();
        if !edge.is_finite() {
            return Err(Error::Oracle(format!("integrand not finite at s = {b}")));
        }
        if edge * width < tol / 100.0 && b * lambda.re > 5.0 {
            small += 1;
            if small >= 3 {
                return Ok(total);
            }
        } else {
            small = 0;
        }
    }
    Err(Error::Oracle(format!(
        "integrand did not decay below {:e} within {MAX_PANELS} panels",
        tol / 100.0
    )))
}

/// `L[I^s R](hbar) = hbar^s L[R](hbar)` along direction `theta`.
pub fn reference_laplace_term(term: &BorelTerm, hbar: C64, theta: f64, tol: f64) -> Result<C64> {
    let scale = hbar.powu(term.integrations);
    if scale == ZERO {
        return Ok(ZERO);
    }
    let r = &term.rational;
    let v = reference_laplace_fn(&|xi| r.eval(xi), hbar, theta, tol / scale.norm().max(1e-300))?;
    Ok(scale * v)
}

/// Laplace transform of the Borel part of `alpha` along `arg(hbar)`.
pub fn reference_laplace(alpha: &CoefficientFunction, hbar: C64, target_tol: f64) -> Result<C64> {
    reference_laplace_along(alpha, hbar, hbar.arg(), target_tol)
}

pub fn reference_laplace_along(
    alpha: &CoefficientFunction,
    hbar: C64,
    theta: f64,
    target_tol: f64,
) -> Result<C64> {
    match &alpha.borel {
        BorelPart::None => Ok(ZERO),
        BorelPart::Terms(terms) => {
            let tol = target_tol / terms.len().max(1) as f64;
            terms
                .iter()
                .map(|t| reference_laplace_term(t, hbar, theta, tol))
                .sum()
        }
        BorelPart::Samples(_) => Err(Error::InvalidInput(
            "the reference quadrature needs an analytic Borel part".into(),
        )),
    }
}

/// `F(hbar, z)` with Borel parts evaluated by the reference quadrature.
pub fn evaluate_problem(p: &ProblemSpec, hbar: C64, z: &[C64]) -> Result<Vec<C64>> {
    let sys = p.at_hbar(hbar, |t, h| reference_laplace_term(t, h, h.arg(), 1e-13))?;
    if z.len() != sys.dim {
        return Err(Error::Dimension(format!(
            "point has {} components, problem has {}",
            z.len(),
            sys.dim
        )));
    }
    Ok(sys.eval(z))
}

/// `||F(hbar, z)||_inf`.
pub fn implicit_residual(p: &ProblemSpec, hbar: C64, z: &[C64]) -> Result<f64> {
    Ok(sup_norm(&evaluate_problem(p, hbar, z)?))
}

/// Damped Newton on `F(hbar, .)` at fixed `hbar`.
pub fn newton_direct(p: &ProblemSpec, hbar: C64, seed: &[C64], tol: f64) -> Result<Vec<C64>> {
    let sys = p.at_hbar(hbar, |t, h| reference_laplace_term(t, h, h.arg(), 1e-14))?;
    sys.newton(seed, tol, 100).map_err(|e| match e {
        Error::NoSolution {
            iterations,
            residual,
        } => Error::Oracle(format!(
            "Newton did not converge at hbar = {hbar} ({iterations} iterations, residual {residual:e})"
        )),
        other => other,
    })
}

/// Eigenvalues and unit eigenvectors of `A(hbar)`, ordered so that entry `i`
/// is the one nearest to the `i`-th leading eigenvalue (leading eigenvalues
/// sorted by real, then imaginary part).
pub fn eig_direct(a: &MatrixFamily, hbar: C64) -> Result<(Vec<C64>, CMat)> {
    let leading = sorted_eigenvalues(&a.order(0))?;
    let (values, vectors) = linalg::eig(&a.eval(hbar)?)?;
    let mut used = vec![false; values.len()];
    let mut order = Vec::with_capacity(values.len());
    for l in &leading {
        let best = (0..values.len())
            .filter(|j| !used[*j])
            .min_by(|&x, &y| (values[x] - l).norm().total_cmp(&(values[y] - l).norm()))
            .ok_or_else(|| Error::Internal("eigenvalue pairing ran out of candidates".into()))?;
        used[best] = true;
        order.push(best);
    }
    let paired: Vec<C64> = order.iter().map(|&j| values[j]).collect();
    let vecs = CMat::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    Ok((paired, vecs))
}

/// Eigenvalues sorted by real part, then imaginary part.
pub fn sorted_eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    let (mut v, _) = linalg::eig(m)?;
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(v)
}

/// One engine-versus-oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub hbar: C64,
    pub value: Vec<C64>,
    pub oracle: Vec<C64>,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
    pub oracle_residual: Option<f64>,
}

impl VerificationRecord {
    pub fn new(hbar: C64, value: Vec<C64>, oracle: Vec<C64>, oracle_residual: Option<f64>) -> Self {
        let abs_deviation = value
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let scale = sup_norm(&oracle);
        let rel_deviation = if scale > 0.0 { abs_deviation / scale } else { abs_deviation };
        Self {
            hbar,
            value,
            oracle,
            abs_deviation,
            rel_deviation,
            oracle_residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub records: Vec<VerificationRecord>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationReport {
    /// Summarises records; passes when the largest absolute deviation is
    /// within `tolerance`.
    pub fn new(records: Vec<VerificationRecord>, tolerance: f64) -> Self {
        let max_deviation = records
            .iter()
            .map(|r| r.abs_deviation)
            .fold(0.0, f64::max);
        Self {
            passed: max_deviation <= tolerance,
            records,
            max_deviation,
            tolerance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Rational;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    const EULER_AT_TENTH: f64 = 0.091_563_333_939_788_08;

    #[test]
    fn euler_function_value() {
        let r = Rational::new(vec![c(1.0)], vec![c(1.0), c(1.0)]).unwrap();
        let alpha = CoefficientFunction::rational(c(0.0), r, 0.0).unwrap();
        let v = reference_laplace(&alpha, c(0.1), 1e-12).unwrap();
        assert!((v - c(EULER_AT_TENTH)).norm() < 1e-12);
    }

    #[test]
    fn monomials_are_exact() {
        let mut fact = 1.0;
        for n in 0..=6 {
            if n > 0 {
                fact *= n as f64;
            }
            let mut num = vec![c(0.0); n + 1];
            num[n] = c(1.0 / fact);
            let alpha = CoefficientFunction::rational(c(0.0), Rational::polynomial(num), 0.0).unwrap();
            for h in [0.05, 0.1, 0.2] {
                let v = reference_laplace(&alpha, c(h), 1e-13).unwrap();
                assert!((v - c(h.powi(n as i32 + 1))).norm() < 1e-13, "n = {n}, hbar = {h}");
            }
        }
    }

    #[test]
    fn integrated_terms_pick_up_powers_of_hbar() {
        let t = BorelTerm {
            rational: Rational::constant(c(1.0)),
            integrations: 2,
        };
        let v = reference_laplace_term(&t, c(0.2), 0.0, 1e-13).unwrap();
        assert!((v - c(0.008)).norm() < 1e-14);
    }

    #[test]
    fn direct_newton_examples() {
        let catalan = ProblemSpec::scalar(&[(0, 1, 1.0), (0, 0, -1.0), (1, 2, -1.0)]);
        let z = newton_direct(&catalan, c(0.1), &[c(1.0)], 1e-14).unwrap();
        assert!((z[0] - c((1.0 - 0.6f64.sqrt()) / 0.2)).norm() < 1e-13);
        let z = newton_direct(&catalan, c(1e-6), &[c(1.0)], 1e-15).unwrap();
        assert!((z[0] - c(1.0)).norm() < 1e-5);
        let constant = ProblemSpec::scalar(&[(0, 1, 1.0), (0, 0, -2.5)]);
        assert!((newton_direct(&constant, c(0.3), &[c(0.0)], 1e-14).unwrap()[0] - c(2.5)).norm() < 1e-15);
        // no real root and no way off the real axis
        let none = ProblemSpec::scalar(&[(0, 2, 1.0), (0, 0, 1.0)]);
        assert!(matches!(newton_direct(&none, c(0.1), &[c(0.0)], 1e-12), Err(Error::Oracle(_))));
    }

    #[test]
    fn report_summary() {
        let r = VerificationRecord::new(c(0.1), vec![c(1.0)], vec![c(1.0 + 1e-9)], None);
        let rep = VerificationReport::new(vec![r], 1e-8);
        assert!(rep.passed && rep.max_deviation > 0.0);
        assert!(!VerificationReport::new(rep.records.clone(), 1e-10).passed);
    }
}
