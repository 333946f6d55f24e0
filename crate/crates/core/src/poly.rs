//! Dense complex polynomials (ascending coefficients) and rational functions
//! of the Borel variable.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig, CMat};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn eval(p: &[C64], x: C64) -> C64 {
    p.iter().rev().fold(ZERO, |acc, &c| acc * x + c)
}

pub fn derivative(p: &[C64]) -> Vec<C64> {
    if p.len() <= 1 {
        return vec![ZERO];
    }
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| c * k as f64)
        .collect()
}

pub fn mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; a.len().max(b.len())];
    for (k, &x) in a.iter().enumerate() {
        out[k] += x;
    }
    for (k, &y) in b.iter().enumerate() {
        out[k] += y;
    }
    out
}

pub fn scale(p: &[C64], s: C64) -> Vec<C64> {
    p.iter().map(|&c| c * s).collect()
}

/// Drops trailing coefficients that are exactly zero (keeps at least one).
pub fn trim(p: &[C64]) -> Vec<C64> {
    let len = p.iter().rposition(|c| *c != ZERO).map_or(1, |k| k + 1);
    let mut out = p[..len.min(p.len())].to_vec();
    if out.is_empty() {
        out.push(ZERO);
    }
    out
}

/// Roots through the eigenvalues of the companion matrix.
pub fn roots(p: &[C64]) -> Result<Vec<C64>> {
    let p = trim(p);
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p[deg];
    let mut comp = CMat::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / lead;
    }
    Ok(eig(&comp)?.0)
}

/// Distance from `z` to the ray `e^{i theta} [0, inf)`.
pub fn distance_to_ray(z: C64, theta: f64) -> f64 {
    let r = z * C64::from_polar(1.0, -theta);
    if r.re >= 0.0 {
        r.im.abs()
    } else {
        r.norm()
    }
}

/// Taylor coefficients at 0 of `num / den` through degree `n - 1`.
pub fn taylor_quotient(num: &[C64], den: &[C64], n: usize) -> Vec<C64> {
    let mut q = vec![ZERO; n];
    for k in 0..n {
        let mut acc = num.get(k).copied().unwrap_or(ZERO);
        for j in 1..den.len().min(k + 1) {
            acc -= den[j] * q[k - j];
        }
        q[k] = acc / den[0];
    }
    q
}

/// A rational function `num(xi) / den(xi)` with `den(0) != 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rational {
    pub num: Vec<C64>,
    pub den: Vec<C64>,
}

impl Rational {
    pub fn new(num: Vec<C64>, den: Vec<C64>) -> Result<Self> {
        if num.is_empty() {
            return Err(Error::InvalidInput("rational numerator is empty".into()));
        }
        match den.first() {
            None => Err(Error::InvalidInput("rational denominator is empty".into())),
            Some(d0) if *d0 == ZERO => Err(Error::InvalidInput(
                "rational denominator vanishes at xi = 0".into(),
            )),
            _ => Ok(Self { num, den }),
        }
    }

    pub fn polynomial(num: Vec<C64>) -> Self {
        Self {
            num,
            den: vec![C64::new(1.0, 0.0)],
        }
    }

    pub fn constant(c: C64) -> Self {
        Self::polynomial(vec![c])
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.iter().skip(1).all(|c| *c == ZERO)
    }

    pub fn eval(&self, xi: C64) -> C64 {
        eval(&self.num, xi) / eval(&self.den, xi)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            num: scale(&self.num, s),
            den: self.den.clone(),
        }
    }

    pub fn derivative(&self) -> Self {
        let num = add(
            &mul(&derivative(&self.num), &self.den),
            &scale(&mul(&self.num, &derivative(&self.den)), C64::new(-1.0, 0.0)),
        );
        if self.is_polynomial() {
            return Self::polynomial(scale(&derivative(&self.num), 1.0 / self.den[0]));
        }
        Self {
            num: trim(&num),
            den: mul(&self.den, &self.den),
        }
    }

    /// Taylor coefficients `r_0 .. r_{n-1}` at the origin.
    pub fn taylor(&self, n: usize) -> Vec<C64> {
        taylor_quotient(&self.num, &self.den, n)
    }

    /// Rejects denominators with a root within `radius` of the ray.
    pub fn check_ray(&self, theta: f64, radius: f64) -> Result<()> {
        if self.is_polynomial() {
            return Ok(());
        }
        for r in roots(&self.den)? {
            let d = distance_to_ray(r, theta);
            if d < radius {
                return Err(Error::PoleNearRay {
                    location: r,
                    distance: d,
                    radius,
                });
            }
        }
        Ok(())
    }

    /// Whether `other` has the same denominator, so numerators can be added.
    pub fn same_denominator(&self, other: &Rational) -> bool {
        trim(&self.den) == trim(&other.den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn roots_of_quadratic() {
        let mut r: Vec<f64> = roots(&[c(-2.0), c(-1.0), c(1.0)])
            .unwrap()
            .iter()
            .map(|z| z.re)
            .collect();
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 1.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_distance() {
        assert!((distance_to_ray(C64::new(3.0, 0.05), 0.0) - 0.05).abs() < 1e-15);
        assert!((distance_to_ray(c(-1.0), 0.0) - 1.0).abs() < 1e-15);
        assert!((distance_to_ray(C64::new(0.0, 2.0), std::f64::consts::FRAC_PI_2)).abs() < 1e-15);
    }

    #[test]
    fn pole_near_ray_rejected() {
        // pole at xi = 0.05
        let r = Rational::new(vec![c(1.0)], vec![c(0.05), c(-1.0)]).unwrap();
        match r.check_ray(0.0, 0.1) {
            Err(Error::PoleNearRay { location, .. }) => assert!((location - c(0.05)).norm() < 1e-12),
            other => panic!("expected pole rejection, got {other:?}"),
        }
        let ok = Rational::new(vec![c(1.0)], vec![c(1.0), c(1.0)]).unwrap();
        assert!(ok.check_ray(0.0, 0.1).is_ok());
        assert!(Rational::new(vec![c(1.0)], vec![c(0.0), c(1.0)]).is_err());
    }

    #[test]
    fn geometric_taylor_and_derivative() {
        let r = Rational::new(vec![c(1.0)], vec![c(1.0), c(1.0)]).unwrap();
        let t = r.taylor(5);
        for (k, x) in t.iter().enumerate() {
            assert_eq!(*x, c(if k % 2 == 0 { 1.0 } else { -1.0 }));
        }
        let d = r.derivative();
        let xi = c(0.7);
        assert!((d.eval(xi) + 1.0 / (1.7 * 1.7)).norm() < 1e-14);
    }
}
