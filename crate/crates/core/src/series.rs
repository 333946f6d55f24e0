//! Truncated formal power series in `hbar` and the multi-index combinatorics
//! used by the perturbative recursions.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// A finite `hbar`-jet `c_0 + c_1 hbar + ... + c_K hbar^K` whose coefficients
/// are vectors in `C^dim` (`dim == 1` for scalar series).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSeries {
    dim: usize,
    coeffs: Vec<Vec<C64>>,
}

impl TruncatedSeries {
    /// Builds a series from per-order coefficient vectors.
    pub fn new(coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let dim = coeffs
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("series needs at least one coefficient".into()))?;
        if dim == 0 {
            return Err(Error::Dimension("series components must be at least 1".into()));
        }
        if let Some(n) = coeffs.iter().position(|c| c.len() != dim) {
            return Err(Error::Dimension(format!(
                "coefficient {n} has {} components, expected {dim}",
                coeffs[n].len()
            )));
        }
        Ok(Self { dim, coeffs })
    }

    pub fn scalar(coeffs: Vec<C64>) -> Self {
        assert!(!coeffs.is_empty(), "scalar series needs at least one coefficient");
        Self {
            dim: 1,
            coeffs: coeffs.into_iter().map(|c| vec![c]).collect(),
        }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::scalar(coeffs.iter().map(|&c| C64::new(c, 0.0)).collect())
    }

    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            coeffs: vec![vec![ZERO; dim]; order + 1],
        }
    }

    /// The constant series `1` (scalar).
    pub fn one(order: usize) -> Self {
        let mut s = Self::zeros(1, order);
        s.coeffs[0][0] = ONE;
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeff(&self, n: usize) -> &[C64] {
        &self.coeffs[n]
    }

    pub fn coeff_mut(&mut self, n: usize) -> &mut [C64] {
        &mut self.coeffs[n]
    }

    pub fn coeffs(&self) -> &[Vec<C64>] {
        &self.coeffs
    }

    /// Coefficient `n` of a scalar series.
    pub fn c(&self, n: usize) -> C64 {
        self.coeffs[n][0]
    }

    /// Component `i` as a scalar series.
    pub fn component(&self, i: usize) -> TruncatedSeries {
        Self::scalar(self.coeffs.iter().map(|c| c[i]).collect())
    }

    /// Stacks scalar series into a vector series.
    pub fn stack(components: &[TruncatedSeries]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("no components to stack".into()))?;
        let order = first.order();
        if components.iter().any(|c| c.order() != order || c.dim != 1) {
            return Err(Error::Dimension("stacked series must be scalar with equal order".into()));
        }
        Self::new(
            (0..=order)
                .map(|n| components.iter().map(|c| c.c(n)).collect())
                .collect(),
        )
    }

    pub fn truncate(&self, order: usize) -> TruncatedSeries {
        let mut coeffs: Vec<Vec<C64>> = self.coeffs.iter().take(order + 1).cloned().collect();
        coeffs.resize(order + 1, vec![ZERO; self.dim]);
        Self { dim: self.dim, coeffs }
    }

    /// Partial sum at `hbar`.
    pub fn eval(&self, hbar: C64) -> Vec<C64> {
        let mut acc = vec![ZERO; self.dim];
        for c in self.coeffs.iter().rev() {
            for (a, &ci) in acc.iter_mut().zip(c) {
                *a = *a * hbar + ci;
            }
        }
        acc
    }

    pub fn scale(&self, factor: C64) -> TruncatedSeries {
        Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.iter().map(|&x| x * factor).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &TruncatedSeries) -> Result<TruncatedSeries> {
        self.check_compatible(other)?;
        Ok(Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    /// Largest coefficient modulus at each order (max over components).
    pub fn norms(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.iter().map(|x| x.norm()).fold(0.0, f64::max))
            .collect()
    }

    fn check_compatible(&self, other: &TruncatedSeries) -> Result<()> {
        if self.order() != other.order() {
            return Err(Error::Dimension(format!(
                "series orders differ: {} vs {}",
                self.order(),
                other.order()
            )));
        }
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "series dimensions differ: {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// Cauchy product of two scalar coefficient slices, truncated to `a.len()`.
pub(crate) fn cauchy(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len();
    let mut out = vec![ZERO; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == ZERO {
            continue;
        }
        for (o, &bj) in out[i..].iter_mut().zip(b) {
            *o += ai * bj;
        }
    }
    out
}

/// Truncated product. Vector series multiply componentwise.
pub fn ts_mul(a: &TruncatedSeries, b: &TruncatedSeries) -> Result<TruncatedSeries> {
    a.check_compatible(b)?;
    let comps: Vec<Vec<C64>> = (0..a.dim)
        .map(|i| {
            let ai: Vec<C64> = a.coeffs.iter().map(|c| c[i]).collect();
            let bi: Vec<C64> = b.coeffs.iter().map(|c| c[i]).collect();
            cauchy(&ai, &bi)
        })
        .collect();
    TruncatedSeries::new(
        (0..=a.order())
            .map(|n| comps.iter().map(|c| c[n]).collect())
            .collect(),
    )
}

/// Multi-index `m = (m_1, ..., m_N)` over the components of a vector unknown.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(parts: Vec<u32>) -> Self {
        Self(parts)
    }

    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn unit(n: usize, c: usize) -> Self {
        let mut parts = vec![0; n];
        parts[c] = 1;
        Self(parts)
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|m| = m_1 + ... + m_N`.
    pub fn weight(&self) -> u32 {
        self.0.iter().sum()
    }

    /// First component with a nonzero entry.
    pub fn leading_component(&self) -> Option<usize> {
        self.0.iter().position(|&p| p > 0)
    }

    /// `m - e_c`, if `m_c > 0`.
    pub fn lower(&self, c: usize) -> Option<MultiIndex> {
        (self.0[c] > 0).then(|| {
            let mut parts = self.0.clone();
            parts[c] -= 1;
            MultiIndex(parts)
        })
    }
}

/// All `m in N^n_parts` with `|m| = total`, in lexicographic order.
///
/// Their count is `binom(total + n_parts - 1, n_parts - 1)`, the number of
/// weak compositions of `total` into `n_parts` parts.
pub fn multiindex_enumerate(n_parts: usize, total: u32) -> Vec<MultiIndex> {
    fn rec(prefix: &mut Vec<u32>, left: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
        if left == 1 {
            prefix.push(remaining);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in 0..=remaining {
            prefix.push(first);
            rec(prefix, left - 1, remaining - first, out);
            prefix.pop();
        }
    }
    assert!(n_parts >= 1, "multi-indices need at least one part");
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n_parts), n_parts, total, &mut out);
    out
}

/// `binom(n, k)` as a float.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Normalisation weight `rho_m = 1 / binom(m + N - 1, N - 1)`.
pub fn rho(n_parts: usize, total: u32) -> f64 {
    1.0 / binomial(total as u64 + n_parts as u64 - 1, n_parts as u64 - 1)
}

/// `hat f^m = prod_c (hat f_c)^{m_c}`, truncated at the order of `v`.
pub fn ts_pow_multi(v: &TruncatedSeries, m: &MultiIndex) -> Result<TruncatedSeries> {
    if v.dim() != m.len() {
        return Err(Error::Dimension(format!(
            "multi-index has {} parts but the series has {} components",
            m.len(),
            v.dim()
        )));
    }
    let order = v.order();
    let mut acc: Vec<C64> = TruncatedSeries::one(order).coeffs.into_iter().map(|c| c[0]).collect();
    for (c, &power) in m.parts().iter().enumerate() {
        if power == 0 {
            continue;
        }
        let comp: Vec<C64> = v.coeffs.iter().map(|x| x[c]).collect();
        for _ in 0..power {
            acc = cauchy(&acc, &comp);
        }
    }
    Ok(TruncatedSeries::scalar(acc))
}

/// Formal Borel transform `phi_k = f_{k+1} / k!`; `f_0` is carried separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BorelSeries {
    dim: usize,
    constant_term: Vec<C64>,
    coeffs: Vec<Vec<C64>>,
}

impl BorelSeries {
    pub fn new(constant_term: Vec<C64>, coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let dim = constant_term.len();
        if dim == 0 || coeffs.iter().any(|c| c.len() != dim) {
            return Err(Error::Dimension("Borel coefficients must match the constant term".into()));
        }
        Ok(Self {
            dim,
            constant_term,
            coeffs,
        })
    }

    pub fn scalar(constant_term: C64, coeffs: Vec<C64>) -> Self {
        Self {
            dim: 1,
            constant_term: vec![constant_term],
            coeffs: coeffs.into_iter().map(|c| vec![c]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn constant_term(&self) -> &[C64] {
        &self.constant_term
    }

    pub fn coeff(&self, k: usize) -> &[C64] {
        &self.coeffs[k]
    }

    /// Scalar coefficient `phi_k` (zero past the stored length).
    pub fn c(&self, k: usize) -> C64 {
        self.coeffs.get(k).map_or(ZERO, |c| c[0])
    }

    pub fn component(&self, i: usize) -> BorelSeries {
        Self::scalar(
            self.constant_term[i],
            self.coeffs.iter().map(|c| c[i]).collect(),
        )
    }

    /// Evaluates the (convergent) Borel series at `xi` for component `i`.
    pub fn eval(&self, i: usize, xi: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * xi + c[i])
    }
}

pub fn formal_borel(f: &TruncatedSeries) -> BorelSeries {
    let mut fact = 1.0;
    let coeffs = (0..f.order())
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            f.coeff(k + 1).iter().map(|&x| x / fact).collect()
        })
        .collect();
    BorelSeries {
        dim: f.dim(),
        constant_term: f.coeff(0).to_vec(),
        coeffs,
    }
}

/// Witness constants for a Gevrey or exponential growth estimate.
///
/// `prefactor` plays the role of `C`, `D` or `A`; `rate` the role of `M`,
/// `K` or `L` depending on the estimate that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub prefactor: f64,
    pub rate: f64,
    pub fit_residual: f64,
    pub degenerate: bool,
}

impl GrowthBound {
    pub fn degenerate() -> Self {
        Self {
            prefactor: 0.0,
            rate: 0.0,
            fit_residual: 0.0,
            degenerate: true,
        }
    }
}

/// Ordinary least squares `y ~ intercept + slope x`; returns
/// `(intercept, slope, rms residual)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.len() == 1 {
        return (ys[0], 0.0, 0.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (intercept, slope, rms)
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Fits `|f_n| ~ C M^n n!` by least squares on `log(|f_n| / n!)`.
pub fn gevrey_fit(f: &TruncatedSeries) -> Result<GrowthBound> {
    if f.order() < 4 {
        return Err(Error::InvalidInput(format!(
            "Gevrey fit needs order >= 4, got {}",
            f.order()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = f
        .norms()
        .into_iter()
        .enumerate()
        .filter(|(_, a)| *a > 0.0)
        .map(|(n, a)| (n as f64, a.ln() - ln_factorial(n)))
        .unzip();
    if xs.is_empty() {
        return Ok(GrowthBound::degenerate());
    }
    let (intercept, slope, rms) = linear_fit(&xs, &ys);
    Ok(GrowthBound {
        prefactor: intercept.exp(),
        rate: slope.exp(),
        fit_residual: rms,
        degenerate: xs.len() < 2,
    })
}
