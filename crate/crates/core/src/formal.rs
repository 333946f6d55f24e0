//! Formal perturbation theory: leading-order solve, the order-by-order
//! recursion for the formal solution, the standard form `w = hbar G(hbar, w)`
//! and its recursion, and Gevrey majorants.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::borel::CoefficientFunction;
use crate::error::{Error, Result};
use crate::hbar::{BorelTerm, HbarFunction};
use crate::linalg::{self, CMat};
use crate::series::{
    linear_fit, multiindex_enumerate, rho, ts_pow_multi, GrowthBound, MultiIndex, TruncatedSeries,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Threshold above which the leading Jacobian counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Sparse coefficient table keyed by `(k, m, i)`: `hbar`-order, multi-index
/// of the monomial in the unknowns, and (0-based) equation index.
pub type CoeffTable = BTreeMap<(usize, MultiIndex, usize), C64>;

/// An implicit equation `F^i(hbar, z) = sum_{k,m} F^i_{km} hbar^k z^m`.
///
/// Entries may additionally carry Laplace transforms of rational Borel
/// functions, so that `F^i_m(hbar)` is polynomial plus `L[alpha]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    dim: usize,
    coeffs: CoeffTable,
    borel: BTreeMap<(MultiIndex, usize), Vec<BorelTerm>>,
}

impl ProblemSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("problem dimension must be at least 1".into()));
        }
        Ok(Self {
            dim,
            coeffs: BTreeMap::new(),
            borel: BTreeMap::new(),
        })
    }

    /// Builds a scalar problem from `(k, power, value)` triples.
    pub fn scalar(entries: &[(usize, u32, f64)]) -> Self {
        let mut p = Self::new(1).expect("dimension 1");
        for &(k, m, v) in entries {
            p.insert(k, MultiIndex::new(vec![m]), 0, C64::new(v, 0.0))
                .expect("scalar entry");
        }
        p
    }

    fn check_key(&self, m: &MultiIndex, i: usize) -> Result<()> {
        if m.len() != self.dim {
            return Err(Error::Dimension(format!(
                "multi-index {:?} has {} parts, problem dimension is {}",
                m.parts(),
                m.len(),
                self.dim
            )));
        }
        if i >= self.dim {
            return Err(Error::Dimension(format!(
                "equation index {} out of range 1..={}",
                i + 1,
                self.dim
            )));
        }
        Ok(())
    }

    /// Adds `v` to the coefficient `F^i_{km}` (0-based `i`).
    pub fn insert(&mut self, k: usize, m: MultiIndex, i: usize, v: C64) -> Result<()> {
        self.check_key(&m, i)?;
        *self.coeffs.entry((k, m, i)).or_insert(ZERO) += v;
        Ok(())
    }

    /// Adds `L[term]` to the coefficient function of `z^m` in equation `i`.
    pub fn insert_borel(&mut self, m: MultiIndex, i: usize, term: BorelTerm) -> Result<()> {
        self.check_key(&m, i)?;
        self.borel.entry((m, i)).or_default().push(term);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &CoeffTable {
        &self.coeffs
    }

    pub fn borel_terms(&self) -> &BTreeMap<(MultiIndex, usize), Vec<BorelTerm>> {
        &self.borel
    }

    pub fn max_k(&self) -> usize {
        self.coeffs.keys().map(|(k, _, _)| *k).max().unwrap_or(0)
    }

    pub fn max_m(&self) -> u32 {
        self.coeffs
            .keys()
            .map(|(_, m, _)| m.weight())
            .chain(self.borel.keys().map(|(m, _)| m.weight()))
            .max()
            .unwrap_or(0)
    }

    /// Coefficient function of `z^m` in equation `i`.
    pub fn entry(&self, m: &MultiIndex, i: usize) -> HbarFunction {
        let mut poly = Vec::new();
        for ((k, mm, ii), v) in &self.coeffs {
            if mm == m && *ii == i {
                if poly.len() <= *k {
                    poly.resize(k + 1, ZERO);
                }
                poly[*k] += v;
            }
        }
        let mut f = HbarFunction::from_poly(poly);
        for t in self.borel.get(&(m.clone(), i)).into_iter().flatten() {
            f.add_term(t.clone());
        }
        f
    }

    /// All nonempty coefficient functions.
    pub fn entries(&self) -> BTreeMap<(MultiIndex, usize), HbarFunction> {
        let keys: BTreeSet<(MultiIndex, usize)> = self
            .coeffs
            .keys()
            .map(|(_, m, i)| (m.clone(), *i))
            .chain(self.borel.keys().cloned())
            .collect();
        keys.into_iter()
            .map(|(m, i)| {
                let f = self.entry(&m, i);
                ((m, i), f)
            })
            .collect()
    }

    /// Formal coefficient table through `hbar^order`, Borel parts expanded.
    pub fn formal_table(&self, order: usize) -> CoeffTable {
        let mut table: CoeffTable = self
            .coeffs
            .iter()
            .filter(|((k, _, _), _)| *k <= order)
            .map(|(key, v)| (key.clone(), *v))
            .collect();
        for ((m, i), terms) in &self.borel {
            for t in terms {
                for (k, c) in t.formal_coeffs(order).into_iter().enumerate() {
                    if c != ZERO {
                        *table.entry((k, m.clone(), *i)).or_insert(ZERO) += c;
                    }
                }
            }
        }
        table
    }

    /// The `hbar^k` layer of the formal table as a polynomial system.
    pub fn layer(&self, k: usize) -> PolySystem {
        let terms = self
            .formal_table(k)
            .into_iter()
            .filter(|((kk, _, _), _)| *kk == k)
            .map(|((_, m, i), v)| (m, i, v))
            .collect();
        PolySystem {
            dim: self.dim,
            terms,
        }
    }

    /// The polynomial system `z -> F(hbar, z)` at fixed `hbar`; Borel parts
    /// are Laplace-transformed with the supplied evaluator.
    pub fn at_hbar<L>(&self, hbar: C64, mut laplace: L) -> Result<PolySystem>
    where
        L: FnMut(&BorelTerm, C64) -> Result<C64>,
    {
        let mut collapsed: BTreeMap<(MultiIndex, usize), C64> = BTreeMap::new();
        for ((k, m, i), v) in &self.coeffs {
            *collapsed.entry((m.clone(), *i)).or_insert(ZERO) += v * hbar.powu(*k as u32);
        }
        for ((m, i), terms) in &self.borel {
            for t in terms {
                *collapsed.entry((m.clone(), *i)).or_insert(ZERO) += laplace(t, hbar)?;
            }
        }
        Ok(PolySystem {
            dim: self.dim,
            terms: collapsed.into_iter().map(|((m, i), v)| (m, i, v)).collect(),
        })
    }
}

/// A system of polynomial equations `sum c z^m = 0` in `C^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolySystem {
    pub dim: usize,
    pub terms: Vec<(MultiIndex, usize, C64)>,
}

fn monomial(z: &[C64], m: &MultiIndex) -> C64 {
    z.iter()
        .zip(m.parts())
        .fold(ONE, |acc, (zc, &p)| acc * zc.powu(p))
}

pub(crate) fn sup_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

impl PolySystem {
    pub fn eval(&self, z: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim];
        for (m, i, c) in &self.terms {
            out[*i] += c * monomial(z, m);
        }
        out
    }

    pub fn jacobian(&self, z: &[C64]) -> CMat {
        let mut j = CMat::zeros(self.dim, self.dim);
        for (m, i, c) in &self.terms {
            for col in 0..self.dim {
                if let Some(lower) = m.lower(col) {
                    j[(*i, col)] += c * m.parts()[col] as f64 * monomial(z, &lower);
                }
            }
        }
        j
    }

    /// Largest coefficient modulus, the scale against which singularity of
    /// the Jacobian is judged.
    pub fn scale(&self) -> f64 {
        self.terms.iter().map(|(_, _, c)| c.norm()).fold(0.0, f64::max)
    }

    /// Damped Newton iteration with backtracking on the residual norm.
    pub fn newton(&self, seed: &[C64], tol: f64, max_iter: usize) -> Result<Vec<C64>> {
        if seed.len() != self.dim {
            return Err(Error::Dimension(format!(
                "seed has {} components, system has {}",
                seed.len(),
                self.dim
            )));
        }
        let mut z = seed.to_vec();
        let mut fz = self.eval(&z);
        let mut res = sup_norm(&fz);
        let mut iterations = 0;
        while iterations < max_iter && !(res <= tol) {
            iterations += 1;
            let neg: Vec<C64> = fz.iter().map(|x| -x).collect();
            let step = match linalg::solve(&self.jacobian(&z), &neg) {
                Ok(s) if s.iter().all(|x| x.re.is_finite() && x.im.is_finite()) => s,
                _ => break,
            };
            let mut t = 1.0;
            loop {
                let trial: Vec<C64> = z.iter().zip(&step).map(|(a, d)| a + d * t).collect();
                let ft = self.eval(&trial);
                let rt = sup_norm(&ft);
                if rt < res || t < 1e-6 {
                    z = trial;
                    fz = ft;
                    res = rt;
                    break;
                }
                t *= 0.5;
            }
        }
        if !(res <= tol) {
            return Err(Error::NoSolution {
                iterations,
                residual: res,
            });
        }
        // a few polishing steps while they keep improving the residual
        for _ in 0..3 {
            let neg: Vec<C64> = fz.iter().map(|x| -x).collect();
            let Ok(step) = linalg::solve(&self.jacobian(&z), &neg) else {
                break;
            };
            let trial: Vec<C64> = z.iter().zip(&step).map(|(a, d)| a + d).collect();
            let ft = self.eval(&trial);
            let rt = sup_norm(&ft);
            if rt < res {
                z = trial;
                fz = ft;
                res = rt;
            } else {
                break;
            }
        }
        Ok(z)
    }
}

/// Condition number of `j` relative to the coefficient scale `scale`, so
/// that a uniformly tiny Jacobian also counts as singular.
fn relative_condition(j: &CMat, scale: f64) -> f64 {
    let sv = linalg::singular_values(j);
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max.max(scale) / min
    }
}

/// Solves `F_0(z) = 0` by Newton from `seed`; returns the root and `dF_0/dz`.
pub fn solve_leading(p: &ProblemSpec, seed: &[C64], tol: f64) -> Result<(Vec<C64>, CMat)> {
    let f0 = p.layer(0);
    let z = f0.newton(seed, tol, 200)?;
    let j0 = f0.jacobian(&z);
    let condition = relative_condition(&j0, f0.scale());
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularJacobian { condition });
    }
    Ok((z, j0))
}

/// Formal solution `f_0 + f_1 hbar + ... + f_K hbar^K` together with the
/// leading Jacobian used in the recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalSolution {
    pub series: TruncatedSeries,
    pub leading_jacobian: CMat,
    pub seed: Vec<C64>,
    pub condition: f64,
}

/// Distinct multi-indices per equation, grouped for the recursion.
fn grouped(table: &CoeffTable) -> BTreeMap<MultiIndex, Vec<(usize, usize, C64)>> {
    let mut out: BTreeMap<MultiIndex, Vec<(usize, usize, C64)>> = BTreeMap::new();
    for ((k, m, i), v) in table {
        out.entry(m.clone()).or_default().push((*k, *i, *v));
    }
    out
}

/// `[hbar^n] sum_{k,m} T^i_{km} hbar^k v^m` for every `n <= order` of `v`.
fn substitute(
    groups: &BTreeMap<MultiIndex, Vec<(usize, usize, C64)>>,
    v: &TruncatedSeries,
    n: usize,
) -> Result<Vec<C64>> {
    let mut out = vec![ZERO; v.dim()];
    for (m, entries) in groups {
        if entries.iter().all(|(k, _, _)| *k > n) {
            continue;
        }
        let pw = ts_pow_multi(v, m)?;
        for &(k, i, c) in entries {
            if k <= n {
                out[i] += c * pw.c(n - k);
            }
        }
    }
    Ok(out)
}

/// Order-by-order solution: `f_n = -J_0^{-1} R_n`, where `R_n` is the
/// order-`n` coefficient of `F(hbar, f)` computed with `f_n = 0`.
pub fn formal_ift(p: &ProblemSpec, seed: &[C64], order: usize) -> Result<FormalSolution> {
    let layer0 = p.layer(0);
    let tol = 1e-13 * layer0.scale().max(1.0);
    let (f0, j0) = solve_leading(p, seed, tol)?;
    let condition = relative_condition(&j0, layer0.scale());
    let j0_inv = linalg::inverse(&j0)?;
    let groups = grouped(&p.formal_table(order));
    let dim = p.dim();
    let mut coeffs = vec![f0];
    for n in 1..=order {
        let mut trial = coeffs.clone();
        trial.push(vec![ZERO; dim]);
        let r = substitute(&groups, &TruncatedSeries::new(trial)?, n)?;
        let rv = nalgebra::DVector::from_vec(r);
        let fn_: Vec<C64> = (-(&j0_inv * rv)).iter().copied().collect();
        coeffs.push(fn_);
    }
    Ok(FormalSolution {
        series: TruncatedSeries::new(coeffs)?,
        leading_jacobian: j0,
        seed: seed.to_vec(),
        condition,
    })
}

/// Largest relative coefficient residual of `F(hbar, f)` through the order
/// of `sol`, measured against the sum of moduli of the contributing terms.
pub fn formal_residual(p: &ProblemSpec, sol: &FormalSolution) -> Result<f64> {
    let order = sol.series.order();
    let table = p.formal_table(order);
    let groups = grouped(&table);
    let abs_groups: BTreeMap<MultiIndex, Vec<(usize, usize, C64)>> = groups
        .iter()
        .map(|(m, e)| {
            (
                m.clone(),
                e.iter().map(|&(k, i, c)| (k, i, C64::new(c.norm(), 0.0))).collect(),
            )
        })
        .collect();
    let abs_series = TruncatedSeries::new(
        sol.series
            .coeffs()
            .iter()
            .map(|c| c.iter().map(|x| C64::new(x.norm(), 0.0)).collect())
            .collect(),
    )?;
    let mut worst: f64 = 0.0;
    for n in 0..=order {
        let r = substitute(&groups, &sol.series, n)?;
        let mag = substitute(&abs_groups, &abs_series, n)?;
        for (ri, mi) in r.iter().zip(&mag) {
            let denom = mi.re.max(f64::MIN_POSITIVE);
            if ri.norm() > 0.0 {
                worst = worst.max(ri.norm() / denom);
            }
        }
    }
    Ok(worst)
}

/// The standard form `w = hbar G(hbar, w)`, with `G^i = sum G^i_{km} hbar^k w^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardFormProblem {
    pub dim: usize,
    /// Order through which `coeffs` is complete for entries that have
    /// Borel parts (purely polynomial entries are stored exactly).
    pub table_order: usize,
    pub coeffs: CoeffTable,
    pub borel_coeffs: Option<BTreeMap<(MultiIndex, usize), CoefficientFunction>>,
}

impl StandardFormProblem {
    /// A polynomial standard form from its coefficient table.
    pub fn from_table(dim: usize, coeffs: CoeffTable) -> Result<Self> {
        for (_, m, i) in coeffs.keys() {
            if m.len() != dim || *i >= dim {
                return Err(Error::Dimension(format!(
                    "key (m = {:?}, i = {}) does not fit dimension {dim}",
                    m.parts(),
                    i + 1
                )));
            }
        }
        let table_order = coeffs.keys().map(|(k, _, _)| *k).max().unwrap_or(0);
        Ok(Self {
            dim,
            table_order,
            coeffs,
            borel_coeffs: None,
        })
    }

    /// Scalar polynomial standard form from `(k, power, value)` triples.
    pub fn scalar(entries: &[(usize, u32, f64)]) -> Self {
        let coeffs = entries
            .iter()
            .map(|&(k, m, v)| ((k, MultiIndex::new(vec![m]), 0), C64::new(v, 0.0)))
            .collect();
        Self::from_table(1, coeffs).expect("scalar table")
    }

    /// Builds the form from coefficient functions, expanding Borel parts
    /// through `order`.
    pub fn from_functions(
        dim: usize,
        entries: &BTreeMap<(MultiIndex, usize), HbarFunction>,
        order: usize,
    ) -> Result<Self> {
        let mut coeffs = CoeffTable::new();
        let mut borel = BTreeMap::new();
        for ((m, i), f) in entries {
            let upto = if f.is_polynomial() { f.degree() } else { order };
            for (k, c) in f.formal_coeffs(upto).into_iter().enumerate() {
                if c != ZERO {
                    coeffs.insert((k, m.clone(), *i), c);
                }
            }
            if !f.is_polynomial() {
                borel.insert((m.clone(), *i), CoefficientFunction::from_hbar_function(f));
            }
        }
        let mut s = Self::from_table(dim, coeffs)?;
        s.table_order = order;
        if !borel.is_empty() {
            s.borel_coeffs = Some(borel);
        }
        s.validate()?;
        Ok(s)
    }

    /// Checks that Borel constants agree with the `k = 0` table entries.
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.borel_coeffs {
            for ((m, i), cf) in b {
                if m.len() != self.dim || *i >= self.dim {
                    return Err(Error::Dimension(format!(
                        "Borel entry (m = {:?}, i = {}) does not fit dimension {}",
                        m.parts(),
                        i + 1,
                        self.dim
                    )));
                }
                let a0 = self
                    .coeffs
                    .get(&(0, m.clone(), *i))
                    .copied()
                    .unwrap_or(ZERO);
                if (a0 - cf.constant).norm() > 1e-12 * a0.norm().max(1.0) {
                    return Err(Error::Inconsistent(format!(
                        "constant part {} of entry (m = {:?}, i = {}) disagrees with the table value {}",
                        cf.constant,
                        m.parts(),
                        i + 1,
                        a0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Coefficient functions `A^i_m = a^i_m + L[alpha^i_m]` for every entry.
    pub fn coefficient_functions(&self) -> BTreeMap<(MultiIndex, usize), CoefficientFunction> {
        let mut polys: BTreeMap<(MultiIndex, usize), Vec<C64>> = BTreeMap::new();
        for ((k, m, i), v) in &self.coeffs {
            let p = polys.entry((m.clone(), *i)).or_default();
            if p.len() <= *k {
                p.resize(k + 1, ZERO);
            }
            p[*k] += v;
        }
        let mut out: BTreeMap<(MultiIndex, usize), CoefficientFunction> = polys
            .into_iter()
            .map(|(key, p)| (key, CoefficientFunction::from_hbar_function(&HbarFunction::from_poly(p))))
            .collect();
        if let Some(b) = &self.borel_coeffs {
            for (key, cf) in b {
                out.insert(key.clone(), cf.clone());
            }
        }
        out
    }

    /// Coefficient table through `order`, extending Borel entries formally
    /// when `order` exceeds the stored table.
    pub fn table_to(&self, order: usize) -> Result<CoeffTable> {
        let mut table: CoeffTable = self
            .coeffs
            .iter()
            .filter(|((k, _, _), _)| *k <= order)
            .map(|(key, v)| (key.clone(), *v))
            .collect();
        if order > self.table_order {
            if let Some(b) = &self.borel_coeffs {
                for ((m, i), cf) in b {
                    let ext = cf.formal_coeffs(order)?;
                    for (k, c) in ext.into_iter().enumerate().skip(self.table_order + 1) {
                        if c != ZERO {
                            table.insert((k, m.clone(), *i), c);
                        }
                    }
                }
            }
        }
        Ok(table)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Expands `prod_c (u_c(hbar) + hbar w_c)^{m_c}` as polynomials in `hbar`
/// keyed by the power of `w`.
fn shifted_power(u: &[Vec<C64>], m: &MultiIndex) -> BTreeMap<MultiIndex, Vec<C64>> {
    let n = u.len();
    let mut acc: BTreeMap<MultiIndex, Vec<C64>> = BTreeMap::new();
    acc.insert(MultiIndex::zero(n), vec![ONE]);
    for (c, &power) in m.parts().iter().enumerate() {
        for _ in 0..power {
            let mut next: BTreeMap<MultiIndex, Vec<C64>> = BTreeMap::new();
            for (wm, p) in &acc {
                let a = crate::poly::mul(p, &u[c]);
                let e = next.entry(wm.clone()).or_default();
                *e = crate::poly::add(e, &a);
                let mut up = wm.clone();
                up.0[c] += 1;
                let b = crate::poly::mul(p, &[ZERO, ONE]);
                let e = next.entry(up).or_default();
                *e = crate::poly::add(e, &b);
            }
            acc = next;
        }
    }
    acc
}

/// Rewrites `F = 0` under `z = f_0 + hbar (f_1 + w)` as `w = hbar G(hbar, w)`
/// with `G = hbar^{-1} (w - hbar^{-1} J_0^{-1} F(hbar, f_0 + hbar (f_1 + w)))`.
pub fn to_standard_form(p: &ProblemSpec, sol: &FormalSolution) -> Result<StandardFormProblem> {
    if sol.series.order() < 1 {
        return Err(Error::InvalidInput(
            "standard form needs the formal solution through order 1".into(),
        ));
    }
    let dim = p.dim();
    let f0 = sol.series.coeff(0);
    let f1 = sol.series.coeff(1);
    let u: Vec<Vec<C64>> = (0..dim).map(|c| vec![f0[c], f1[c]]).collect();
    let j0_inv = linalg::inverse(&sol.leading_jacobian)?;

    let zscale = 1.0 + crate::formal::sup_norm(f0) + crate::formal::sup_norm(f1);
    let mut scale: f64 = 1.0;
    let mut h: BTreeMap<(MultiIndex, usize), HbarFunction> = BTreeMap::new();
    for ((m, i), f) in p.entries() {
        scale = scale.max(f.magnitude() * zscale.powi(m.weight() as i32));
        for (wm, poly) in shifted_power(&u, &m) {
            let piece = f.mul_poly(&poly);
            let e = h.entry((wm, i)).or_default();
            *e = e.add(&piece);
        }
    }
    scale *= linalg::max_abs(&j0_inv).max(1.0) * dim as f64;
    let tol = 1e-9 * scale;

    let wkeys: BTreeSet<MultiIndex> = h
        .keys()
        .map(|(m, _)| m.clone())
        .chain((0..dim).map(|c| MultiIndex::unit(dim, c)))
        .collect();
    let mut g: BTreeMap<(MultiIndex, usize), HbarFunction> = BTreeMap::new();
    for wm in &wkeys {
        for i in 0..dim {
            let mut v = HbarFunction::default();
            for j in 0..dim {
                if let Some(hj) = h.get(&(wm.clone(), j)) {
                    v = v.add(&hj.scale(-j0_inv[(i, j)]));
                }
            }
            let mut inner = v.div_hbar(tol).map_err(|e| stage_cancel(e, wm, i, 0))?;
            if *wm == MultiIndex::unit(dim, i) {
                inner = inner.add(&HbarFunction::constant(ONE));
            }
            let mut gi = inner.div_hbar(tol).map_err(|e| stage_cancel(e, wm, i, 1))?;
            for c in gi.poly.iter_mut() {
                if c.norm() <= 1e-15 * scale {
                    *c = ZERO;
                }
            }
            gi.poly = crate::poly::trim(&gi.poly);
            if gi.poly.iter().all(|c| *c == ZERO) && gi.terms.is_empty() {
                continue;
            }
            g.insert((wm.clone(), i), gi);
        }
    }
    StandardFormProblem::from_functions(dim, &g, sol.series.order())
}

fn stage_cancel(e: Error, m: &MultiIndex, i: usize, which: usize) -> Error {
    match e {
        Error::Inconsistent(msg) => Error::Inconsistent(format!(
            "{} cancellation failed for w^{:?} in equation {}: {msg}; f_0 and f_1 do not solve orders 0 and 1",
            if which == 0 { "hbar^0" } else { "hbar^1" },
            m.parts(),
            i + 1
        )),
        other => other,
    }
}

/// Formal solution of the standard form: `g_0 = 0` and
/// `g_{n+1} = sum_{k <= n} sum_m G_{km} [hbar^{n-k}] g^m`.
pub fn g_recursion(s: &StandardFormProblem, order: usize) -> Result<TruncatedSeries> {
    let dim = s.dim;
    let groups = grouped(&s.table_to(order.saturating_sub(1))?);
    let mut coeffs = vec![vec![ZERO; dim]];
    for n in 0..order {
        let current = TruncatedSeries::new(coeffs.clone())?;
        let next = substitute(&groups, &current, n)?;
        coeffs.push(next);
    }
    TruncatedSeries::new(coeffs)
}

/// Scalar fast path following the explicit single-equation formulas.
pub mod scalar {
    use super::*;

    fn table_value(table: &CoeffTable, k: usize, m: u32) -> C64 {
        table
            .get(&(k, MultiIndex::new(vec![m]), 0))
            .copied()
            .unwrap_or(ZERO)
    }

    /// Sums `prod f_{i_j}` over compositions `i_1 + ... + i_m = total` with
    /// every part at most `max_part`.
    fn composition_sum(f: &[C64], m: u32, total: usize, max_part: usize) -> C64 {
        if m == 0 {
            return if total == 0 { ONE } else { ZERO };
        }
        (0..=total.min(max_part))
            .map(|first| f[first] * composition_sum(f, m - 1, total - first, max_part))
            .sum()
    }

    /// Order-by-order recursion with explicit composition sums; `N = 1` only.
    pub fn formal_series(p: &ProblemSpec, seed: C64, order: usize) -> Result<TruncatedSeries> {
        if p.dim() != 1 {
            return Err(Error::Dimension("scalar recursion needs a scalar problem".into()));
        }
        let layer0 = p.layer(0);
        let (f0, j0) = solve_leading(p, &[seed], 1e-13 * layer0.scale().max(1.0))?;
        let j0 = j0[(0, 0)];
        let table = p.formal_table(order);
        let max_m = p.max_m();
        let mut f = vec![f0[0]];
        for n in 1..=order {
            f.push(ZERO);
            let mut acc = ZERO;
            for m in 0..=max_m {
                for k in 0..=n {
                    let c = table_value(&table, k, m);
                    if c != ZERO {
                        acc += c * composition_sum(&f, m, n - k, n - 1);
                    }
                }
            }
            f[n] = -acc / j0;
        }
        Ok(TruncatedSeries::scalar(f))
    }

    fn multinomial(m: u32, i: u32, j: u32, k: u32) -> f64 {
        let fact = |n: u32| (1..=n).fold(1.0, |a, b| a * b as f64);
        fact(m) / (fact(i) * fact(j) * fact(k))
    }

    /// Coefficients `C_k(hbar)` of `G = sum_k C_k w^k` through `hbar^order`,
    /// as a table `[w-power][hbar-power]`.
    ///
    /// The leading factor is `-J_0^{-1}`: it is what multiplying
    /// `0 = J_0 w hbar + hbar^2 (...)` through by `hbar^{-1}` and solving
    /// for `w` produces.
    pub fn c_table(p: &ProblemSpec, sol: &FormalSolution, order: usize) -> Result<Vec<Vec<C64>>> {
        if p.dim() != 1 {
            return Err(Error::Dimension("scalar formula needs a scalar problem".into()));
        }
        let f0 = sol.series.c(0);
        let f1 = sol.series.c(1);
        let j0 = sol.leading_jacobian[(0, 0)];
        let max_m = p.max_m();
        let table = p.formal_table(order + 2);
        let mut out = vec![vec![ZERO; order + 1]; max_m as usize + 1];
        let mut add = |k: u32, power: i64, value: C64| {
            if power >= 0 && (power as usize) <= order {
                out[k as usize][power as usize] += value;
            }
        };
        for k in 0..=max_m {
            for m in k..=max_m {
                for i in 0..=(m - k) {
                    let j = m - k - i;
                    let w = multinomial(m, i, j, k) * f0.powu(i) * f1.powu(j);
                    let (mi, ii) = (m as i64, i as i64);
                    if ii <= mi - 2 {
                        add(k, mi - 2 - ii, w * table_value(&table, 0, m));
                    }
                    if ii <= mi - 1 {
                        add(k, mi - 1 - ii, w * table_value(&table, 1, m));
                    }
                    // B_m = sum_{l >= 2} F_{lm} hbar^{l-2}
                    for l in 2..=order + 2 {
                        add(k, mi - ii + l as i64 - 2, w * table_value(&table, l, m));
                    }
                }
            }
        }
        for row in out.iter_mut() {
            for c in row.iter_mut() {
                *c = -*c / j0;
            }
        }
        Ok(out)
    }
}

/// Majorant sequence `M_0 .. M_K` for the standard-form recursion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorantSequence {
    pub values: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// `M_0 = 0`, `M_{n+1} = A sum_k B^k sum_m sum_{|m|=m} sum_{|n|=n-k}
/// rho_m B^m M^m_n`.
///
/// Because `sum_{|m|=m} rho_m = 1` and `sum_{|n|=q} M^m_n = [t^q] p(t)^m`
/// with `p(t) = sum M_j t^j`, the inner sums collapse to coefficients of
/// powers of `p`; the result does not depend on `N`.
pub fn majorant_sequence(a: f64, b: f64, n: usize, order: usize) -> MajorantSequence {
    let mut values = vec![0.0; order + 1];
    for next in 1..=order {
        let q = next - 1;
        // powers[m][t] = [t^t] p^m using M_0..M_q
        let mut power = vec![0.0; q + 1];
        power[0] = 1.0;
        let mut inner = vec![0.0; q + 1]; // sum_m B^m [t^j] p^m
        let mut bm = 1.0;
        for m in 0..=q {
            for (j, x) in inner.iter_mut().enumerate() {
                *x += bm * power[j];
            }
            // power <- power * p
            let mut np = vec![0.0; q + 1];
            for (j, pj) in power.iter().enumerate() {
                if *pj == 0.0 {
                    continue;
                }
                for l in 1..=(q - j) {
                    np[j + l] += pj * values[l];
                }
            }
            power = np;
            bm *= b;
            if m >= q {
                break;
            }
        }
        let mut total = 0.0;
        let mut bk = 1.0;
        for k in 0..=q {
            total += bk * inner[q - k];
            bk *= b;
        }
        values[next] = a * total;
    }
    MajorantSequence { values, a, b, n }
}

/// First index where `|g^i_{n+1}| > M_{n+1} n!`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorantViolation {
    pub n: usize,
    pub component: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorantReport {
    pub checked: usize,
    pub passed: bool,
    pub first_violation: Option<MajorantViolation>,
}

/// Checks `|g^i_{n+1}| <= M_{n+1} n!` for `n + 1 <= min(order(g), K)`.
pub fn majorant_check(g: &TruncatedSeries, m: &MajorantSequence) -> MajorantReport {
    let top = g.order().min(m.values.len() - 1);
    let mut fact = 1.0;
    let mut checked = 0;
    for n in 0..top {
        if n > 0 {
            fact *= n as f64;
        }
        let bound = m.values[n + 1] * fact;
        for (i, v) in g.coeff(n + 1).iter().enumerate() {
            checked += 1;
            let value = v.norm();
            if value > bound * (1.0 + 1e-12) + 1e-300 {
                return MajorantReport {
                    checked,
                    passed: false,
                    first_violation: Some(MajorantViolation {
                        n,
                        component: i,
                        value,
                        bound,
                    }),
                };
            }
        }
    }
    MajorantReport {
        checked,
        passed: true,
        first_violation: None,
    }
}

/// Constants with `|G^i_{km}| <= rho_m A B^{k+m} k!` for the given `B`.
pub fn certify_constants(s: &StandardFormProblem, b: f64) -> (f64, f64) {
    let mut a: f64 = 0.0;
    let mut fact = vec![1.0];
    for ((k, m, _), v) in &s.coeffs {
        while fact.len() <= *k {
            let n = fact.len() as f64;
            fact.push(fact[fact.len() - 1] * n);
        }
        let w = m.weight();
        let denom = rho(s.dim, w) * b.powi((*k as u32 + w) as i32) * fact[*k];
        a = a.max(v.norm() / denom);
    }
    (a, b)
}

/// Log-linear fit `M_n ~ D M^n` over the positive entries; `D` is then
/// raised to the smallest value making `M_n <= D M^n` hold everywhere.
pub fn majorant_growth_fit(m: &MajorantSequence) -> GrowthBound {
    let (xs, ys): (Vec<f64>, Vec<f64>) = m
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(n, v)| (n as f64, v.ln()))
        .unzip();
    if xs.len() < 2 {
        return GrowthBound::degenerate();
    }
    let (_, slope, rms) = linear_fit(&xs, &ys);
    let rate = slope.exp();
    let prefactor = m
        .values
        .iter()
        .enumerate()
        .map(|(n, v)| v / rate.powi(n as i32))
        .fold(0.0, f64::max);
    GrowthBound {
        prefactor,
        rate,
        fit_residual: rms,
        degenerate: false,
    }
}

/// All multi-indices of weight at most `max_weight`.
pub fn multiindices_upto(n: usize, max_weight: u32) -> Vec<MultiIndex> {
    (0..=max_weight)
        .flat_map(|w| multiindex_enumerate(n, w))
        .collect()
}
