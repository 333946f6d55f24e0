//! Functions of `hbar` of the form `p(hbar) + sum L[I^s R]`, where `p` is a
//! polynomial, `R` a rational function of the Borel variable, `I` the
//! primitive from the origin and `L` the Laplace transform.
//!
//! This class is closed under the operations the standard-form
//! transformation needs: sums, products with polynomials in `hbar`
//! (`hbar L[phi] = L[I phi]`) and division by `hbar` of a function that
//! vanishes at the origin (`hbar^{-1} L[R] = R(0) + L[R']`).

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{self, Rational};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `I^s R`, the `s`-fold primitive of a rational function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BorelTerm {
    pub rational: Rational,
    pub integrations: u32,
}

// 5-point Gauss-Legendre rule on [0, 1]
const GL_X: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
const GL_W: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

impl BorelTerm {
    pub fn new(rational: Rational) -> Self {
        Self {
            rational,
            integrations: 0,
        }
    }

    /// Coefficients of `hbar^0 .. hbar^order` in the formal expansion
    /// `L[I^s R] = sum_n n! r_n hbar^{n+1+s}`.
    pub fn formal_coeffs(&self, order: usize) -> Vec<C64> {
        let mut out = vec![ZERO; order + 1];
        let shift = 1 + self.integrations as usize;
        if order < shift {
            return out;
        }
        let r = self.rational.taylor(order + 1 - shift);
        let mut fact = 1.0;
        for (n, rn) in r.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            out[n + shift] = rn * fact;
        }
        out
    }

    /// Samples `I^s R` at `xi_j = e^{i theta} j h`, `j < nodes`.
    pub fn sample(&self, theta: f64, h: f64, nodes: usize) -> Vec<C64> {
        let dir = C64::from_polar(1.0, theta);
        let s = self.integrations as usize;
        if s == 0 {
            return (0..nodes)
                .map(|j| self.rational.eval(dir * (j as f64 * h)))
                .collect();
        }
        // moments M_q(u) = int_0^u t^q R(e^{i theta} t) dt, cumulative per cell
        let mut moments = vec![ZERO; s];
        let mut out = Vec::with_capacity(nodes);
        let mut inv_fact = vec![1.0; s];
        for q in 1..s {
            inv_fact[q] = inv_fact[q - 1] / q as f64;
        }
        let rot = dir.powu(s as u32);
        for j in 0..nodes {
            if j > 0 {
                let a = (j - 1) as f64 * h;
                for (x, w) in GL_X.iter().zip(GL_W) {
                    let t = a + x * h;
                    let v = self.rational.eval(dir * t) * (w * h);
                    let mut tq = 1.0;
                    for m in moments.iter_mut() {
                        *m += v * tq;
                        tq *= t;
                    }
                }
            }
            let u = j as f64 * h;
            // I^s R = e^{i s theta} sum_q u^{s-1-q} (-1)^q / (q! (s-1-q)!) M_q(u)
            let mut acc = ZERO;
            for (q, m) in moments.iter().enumerate() {
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                acc += m * (sign * u.powi((s - 1 - q) as i32) * inv_fact[q] * inv_fact[s - 1 - q]);
            }
            out.push(acc * rot);
        }
        out
    }
}

/// `poly(hbar) + sum_t L[I^{s_t} R_t](hbar)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HbarFunction {
    pub poly: Vec<C64>,
    pub terms: Vec<BorelTerm>,
}

impl HbarFunction {
    pub fn constant(c: C64) -> Self {
        Self {
            poly: vec![c],
            terms: Vec::new(),
        }
    }

    pub fn from_poly(poly: Vec<C64>) -> Self {
        Self {
            poly,
            terms: Vec::new(),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn at_zero(&self) -> C64 {
        self.poly.first().copied().unwrap_or(ZERO)
    }

    pub fn add_term(&mut self, term: BorelTerm) {
        if let Some(t) = self.terms.iter_mut().find(|t| {
            t.integrations == term.integrations && t.rational.same_denominator(&term.rational)
        }) {
            t.rational.num = poly::add(&t.rational.num, &term.rational.num);
        } else {
            self.terms.push(term);
        }
    }

    pub fn add(&self, other: &HbarFunction) -> HbarFunction {
        let mut out = HbarFunction {
            poly: poly::add(&self.poly, &other.poly),
            terms: self.terms.clone(),
        };
        for t in &other.terms {
            out.add_term(t.clone());
        }
        out
    }

    pub fn scale(&self, s: C64) -> HbarFunction {
        HbarFunction {
            poly: poly::scale(&self.poly, s),
            terms: self
                .terms
                .iter()
                .map(|t| BorelTerm {
                    rational: t.rational.scale(s),
                    integrations: t.integrations,
                })
                .collect(),
        }
    }

    /// Product with a polynomial in `hbar`.
    pub fn mul_poly(&self, p: &[C64]) -> HbarFunction {
        let mut out = HbarFunction {
            poly: poly::mul(&self.poly, p),
            terms: Vec::new(),
        };
        for (j, &pj) in p.iter().enumerate() {
            if pj == ZERO {
                continue;
            }
            for t in &self.terms {
                out.add_term(BorelTerm {
                    rational: t.rational.scale(pj),
                    integrations: t.integrations + j as u32,
                });
            }
        }
        out
    }

    /// Division by `hbar`. The value at `hbar = 0` must vanish up to
    /// `tol`; it is then discarded.
    pub fn div_hbar(&self, tol: f64) -> Result<HbarFunction> {
        let c0 = self.at_zero();
        if c0.norm() > tol {
            return Err(Error::Inconsistent(format!(
                "expected a removable factor of hbar but the value at hbar = 0 is {c0} (tolerance {tol:e})"
            )));
        }
        let mut out = HbarFunction {
            poly: if self.poly.len() > 1 {
                self.poly[1..].to_vec()
            } else {
                vec![ZERO]
            },
            terms: Vec::new(),
        };
        for t in &self.terms {
            if t.integrations > 0 {
                out.add_term(BorelTerm {
                    rational: t.rational.clone(),
                    integrations: t.integrations - 1,
                });
            } else {
                out.poly[0] += t.rational.eval(ZERO);
                out.add_term(BorelTerm::new(t.rational.derivative()));
            }
        }
        Ok(out)
    }

    /// Formal `hbar`-expansion through `order`.
    pub fn formal_coeffs(&self, order: usize) -> Vec<C64> {
        let mut out = vec![ZERO; order + 1];
        for (k, c) in self.poly.iter().take(order + 1).enumerate() {
            out[k] += c;
        }
        for t in &self.terms {
            for (o, c) in out.iter_mut().zip(t.formal_coeffs(order)) {
                *o += c;
            }
        }
        out
    }

    /// Largest polynomial degree (its formal expansion is exact beyond
    /// this order only when there are no Borel terms).
    pub fn degree(&self) -> usize {
        poly::trim(&self.poly).len() - 1
    }

    pub fn magnitude(&self) -> f64 {
        let p = self.poly.iter().map(|c| c.norm()).fold(0.0, f64::max);
        self.terms
            .iter()
            .map(|t| t.rational.eval(ZERO).norm())
            .fold(p, f64::max)
    }
}
