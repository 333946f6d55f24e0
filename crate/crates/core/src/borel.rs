//! The Borel plane: sampled functions on a ray, end-corrected convolution, the
//! nonlinear convolution integral equation and growth estimates.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formal::StandardFormProblem;
use crate::hbar::{BorelTerm, HbarFunction};
use crate::kernels::{self, EndRule};
use crate::linalg::{self, CMat};
use crate::poly::{self, Rational};
use crate::series::{binomial, linear_fit, BorelSeries, GrowthBound, MultiIndex};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Rejection radius for rational poles near the ray.
pub const POLE_RADIUS: f64 = 0.1;

/// Largest node count for which the fixed-point residual is re-checked at
/// every node; longer rays are checked on an evenly strided subset.
pub const FULL_CHECK_NODES: usize = 8192;

/// Uniform discretisation `xi_j = j h e^{i theta}` of a truncated ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayGrid {
    pub theta: f64,
    pub xi_max: f64,
    pub h: f64,
}

impl RayGrid {
    pub fn new(theta: f64, xi_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("grid step must be positive, got {h}")));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidInput("ray direction must be finite".into()));
        }
        if !(xi_max >= 10.0 * h) || !xi_max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ray length {xi_max} must be at least 10 grid steps ({})",
                10.0 * h
            )));
        }
        Ok(Self { theta, xi_max, h })
    }

    pub fn len(&self) -> usize {
        (self.xi_max / self.h - 1e-9).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distance from the origin of node `j`.
    pub fn s(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn direction(&self) -> C64 {
        C64::from_polar(1.0, self.theta)
    }

    pub fn node(&self, j: usize) -> C64 {
        self.direction() * self.s(j)
    }

    /// Complex quadrature step `h e^{i theta}`.
    pub fn weight(&self) -> C64 {
        self.direction() * self.h
    }

    /// Largest node distance actually sampled.
    pub fn s_max(&self) -> f64 {
        self.s(self.len() - 1)
    }
}

/// Samples of a (vector-valued) function at the nodes of a ray grid,
/// stored component by component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayFunction {
    pub grid: RayGrid,
    components: Vec<Vec<C64>>,
}

impl RayFunction {
    pub fn new(grid: RayGrid, components: Vec<Vec<C64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Dimension("ray function needs a component".into()));
        }
        let n = grid.len();
        if let Some(c) = components.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension(format!(
                "ray function has {} samples but the grid has {n} nodes",
                c.len()
            )));
        }
        Ok(Self { grid, components })
    }

    pub fn scalar(grid: RayGrid, values: Vec<C64>) -> Result<Self> {
        Self::new(grid, vec![values])
    }

    /// Samples `f(xi)` at every node.
    pub fn from_fn(grid: RayGrid, f: impl Fn(C64) -> C64) -> Self {
        let values = (0..grid.len()).map(|j| f(grid.node(j))).collect();
        Self {
            grid,
            components: vec![values],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &[C64] {
        &self.components[i]
    }

    pub fn values(&self) -> &[C64] {
        &self.components[0]
    }

    pub fn components(&self) -> &[Vec<C64>] {
        &self.components
    }

    /// Largest component modulus at each node.
    pub fn envelope(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| {
                self.components
                    .iter()
                    .map(|c| c[j].norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

fn same_grid(a: &RayGrid, b: &RayGrid) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "ray grids differ: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Convolution `int_0^xi f(xi - y) g(y) dy` at every node (trapezoid with
/// Gregory end corrections),
/// componentwise for vector inputs.
pub fn convolve(f: &RayFunction, g: &RayFunction) -> Result<RayFunction> {
    same_grid(&f.grid, &g.grid)?;
    if f.dim() != g.dim() {
        return Err(Error::Dimension("convolution of functions with different dimension".into()));
    }
    let w = f.grid.weight();
    let components = f
        .components
        .iter()
        .zip(&g.components)
        .map(|(a, b)| kernels::convolve(a, b, w))
        .collect();
    RayFunction::new(f.grid, components)
}

/// Cumulative primitive `int_0^{xi_j} f` with the same quadrature rule.
pub(crate) fn cumulative(f: &[C64], w: C64) -> Vec<C64> {
    let mut out = Vec::with_capacity(f.len());
    let mut interior = ZERO;
    out.push(ZERO);
    for j in 1..f.len() {
        if j >= 2 {
            interior += f[j - 1];
        }
        out.push(w * primitive_sum(f, f[j], j, interior));
    }
    out
}

/// `sum_l w_l f_l` over nodes `0..=j` of the end-corrected rule, with
/// `f_j` passed separately and `interior = sum_{l=1}^{j-1} f_l`.
fn primitive_sum(f: &[C64], fj: C64, j: usize, interior: C64) -> C64 {
    let rule = EndRule::new(j);
    let corr = rule
        .corrections()
        .iter()
        .fold(ZERO, |acc, &(l, w)| acc + w * f[l]);
    rule.end * (f[0] + fj) + interior + corr
}

/// The Borel part of a coefficient function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BorelPart {
    None,
    /// A sum of `I^s R` terms with rational `R`.
    Terms(Vec<BorelTerm>),
    /// Raw samples on a fixed grid.
    Samples(RayFunction),
}

/// `A(hbar) = a + L[alpha](hbar)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFunction {
    pub constant: C64,
    pub borel: BorelPart,
    /// Optional `(A, L)` with `|alpha(xi)| <= A e^{L |xi|}`.
    pub growth: Option<(f64, f64)>,
}

impl CoefficientFunction {
    pub fn constant(a: C64) -> Self {
        Self {
            constant: a,
            borel: BorelPart::None,
            growth: None,
        }
    }

    /// `a + L[num / den]`; rejects denominators with a root near the ray.
    pub fn rational(a: C64, rational: Rational, theta: f64) -> Result<Self> {
        rational.check_ray(theta, POLE_RADIUS)?;
        Ok(Self {
            constant: a,
            borel: BorelPart::Terms(vec![BorelTerm::new(rational)]),
            growth: None,
        })
    }

    /// Raw samples; optional growth constants are verified on the samples.
    pub fn sampled(a: C64, samples: RayFunction, growth: Option<(f64, f64)>) -> Result<Self> {
        if samples.dim() != 1 {
            return Err(Error::Dimension("sampled Borel part must be scalar".into()));
        }
        if let Some((amp, rate)) = growth {
            for (j, v) in samples.values().iter().enumerate() {
                let bound = amp * (rate * samples.grid.s(j)).exp();
                if v.norm() > bound * (1.0 + 1e-12) {
                    return Err(Error::InvalidInput(format!(
                        "sample {j} has modulus {} above the declared growth bound {bound}",
                        v.norm()
                    )));
                }
            }
        }
        Ok(Self {
            constant: a,
            borel: BorelPart::Samples(samples),
            growth,
        })
    }

    /// Splits `p(hbar) + sum L[...]` as `p(0) + L[sum_k p_k xi^{k-1}/(k-1)! + ...]`.
    pub fn from_hbar_function(f: &HbarFunction) -> Self {
        let mut terms = Vec::new();
        if f.poly.len() > 1 && f.poly[1..].iter().any(|c| *c != ZERO) {
            let mut fact = 1.0;
            let num: Vec<C64> = f.poly[1..]
                .iter()
                .enumerate()
                .map(|(q, c)| {
                    if q > 0 {
                        fact *= q as f64;
                    }
                    c / fact
                })
                .collect();
            terms.push(BorelTerm::new(Rational::polynomial(num)));
        }
        terms.extend(f.terms.iter().cloned());
        Self {
            constant: f.at_zero(),
            borel: if terms.is_empty() {
                BorelPart::None
            } else {
                BorelPart::Terms(terms)
            },
            growth: None,
        }
    }

    pub fn has_borel_part(&self) -> bool {
        match &self.borel {
            BorelPart::None => false,
            BorelPart::Terms(t) => !t.is_empty(),
            BorelPart::Samples(_) => true,
        }
    }

    /// Formal `hbar`-expansion through `order`.
    pub fn formal_coeffs(&self, order: usize) -> Result<Vec<C64>> {
        let mut out = vec![ZERO; order + 1];
        out[0] = self.constant;
        match &self.borel {
            BorelPart::None => {}
            BorelPart::Terms(terms) => {
                for t in terms {
                    for (o, c) in out.iter_mut().zip(t.formal_coeffs(order)) {
                        *o += c;
                    }
                }
            }
            BorelPart::Samples(_) => {
                return Err(Error::InvalidInput(
                    "a sampled Borel part has no formal expansion".into(),
                ))
            }
        }
        Ok(out)
    }

    /// Borel part as a single polynomial in `xi`, when it is one.
    fn polynomial(&self) -> Option<Vec<C64>> {
        let BorelPart::Terms(terms) = &self.borel else {
            return None;
        };
        let mut acc = vec![ZERO];
        for t in terms {
            if t.integrations != 0 || !t.rational.is_polynomial() {
                return None;
            }
            acc = poly::add(&acc, &poly::scale(&t.rational.num, 1.0 / t.rational.den[0]));
        }
        Some(acc)
    }

    /// Borel part sampled on `grid`; `None` when absent.
    pub fn sample(&self, grid: &RayGrid) -> Result<Option<Vec<C64>>> {
        match &self.borel {
            BorelPart::None => Ok(None),
            BorelPart::Terms(terms) if terms.is_empty() => Ok(None),
            BorelPart::Terms(terms) => {
                let n = grid.len();
                let mut out = vec![ZERO; n];
                for t in terms {
                    if t.integrations == 0 {
                        t.rational.check_ray(grid.theta, POLE_RADIUS)?;
                    }
                    for (o, v) in out.iter_mut().zip(t.sample(grid.theta, grid.h, n)) {
                        *o += v;
                    }
                }
                Ok(Some(out))
            }
            BorelPart::Samples(f) => {
                same_grid(&f.grid, grid)?;
                Ok(Some(f.values().to_vec()))
            }
        }
    }
}

/// How the convolution `alpha * P_m` is evaluated during the march.
enum AlphaKernel {
    /// General samples: an O(j) reversed dot product per node.
    Samples(Vec<C64>),
    /// Polynomial `alpha(xi) = sum c_p xi^p`: running moments of `P_m`.
    Poly { coeffs: Vec<C64>, samples: Vec<C64> },
}

impl AlphaKernel {
    fn samples(&self) -> &[C64] {
        match self {
            AlphaKernel::Samples(s) => s,
            AlphaKernel::Poly { samples, .. } => samples,
        }
    }
}

struct Entry {
    i: usize,
    a: C64,
    alpha: Option<AlphaKernel>,
}

/// Precomputed layout of the integral equation on a grid.
struct Layout {
    dim: usize,
    a0: Vec<C64>,
    alpha0: Vec<Option<Vec<C64>>>,
    /// Products `P_m = sigma^{*m}` needed, ordered by weight.
    products: Vec<MultiIndex>,
    /// For `|m| >= 2`: (leading component c, index of `m - e_c`).
    chain: Vec<Option<(usize, usize)>>,
    /// Equation entries per product.
    entries: Vec<Vec<Entry>>,
    max_poly_degree: usize,
}

fn build_layout(s: &StandardFormProblem, grid: &RayGrid) -> Result<Layout> {
    s.validate()?;
    let dim = s.dim;
    let cfs = s.coefficient_functions();
    let mut a0 = vec![ZERO; dim];
    let mut alpha0 = vec![None; dim];
    let mut needed: BTreeSet<MultiIndex> = BTreeSet::new();
    for ((m, i), cf) in &cfs {
        if m.weight() == 0 {
            a0[*i] = cf.constant;
            alpha0[*i] = cf.sample(grid)?;
        } else if cf.constant != ZERO || cf.has_borel_part() {
            needed.insert(m.clone());
        }
    }
    // close under m -> m - e_c for the leading component
    let mut stack: Vec<MultiIndex> = needed.iter().cloned().collect();
    while let Some(m) = stack.pop() {
        if m.weight() >= 2 {
            let c = m.leading_component().expect("nonzero multi-index");
            let lower = m.lower(c).expect("positive part");
            if needed.insert(lower.clone()) {
                stack.push(lower);
            }
        }
    }
    let mut products: Vec<MultiIndex> = needed.into_iter().collect();
    products.sort_by_key(|m| (m.weight(), m.clone()));
    let index: BTreeMap<MultiIndex, usize> = products
        .iter()
        .enumerate()
        .map(|(k, m)| (m.clone(), k))
        .collect();
    let chain = products
        .iter()
        .map(|m| {
            (m.weight() >= 2).then(|| {
                let c = m.leading_component().expect("nonzero multi-index");
                (c, index[&m.lower(c).expect("positive part")])
            })
        })
        .collect();
    let mut entries: Vec<Vec<Entry>> = products.iter().map(|_| Vec::new()).collect();
    let mut max_poly_degree = 0;
    for ((m, i), cf) in &cfs {
        if m.weight() == 0 {
            continue;
        }
        let Some(&k) = index.get(m) else { continue };
        let alpha = match cf.sample(grid)? {
            None => None,
            Some(samples) => Some(match cf.polynomial() {
                Some(coeffs) if coeffs.len() <= 6 => {
                    max_poly_degree = max_poly_degree.max(coeffs.len() - 1);
                    AlphaKernel::Poly { coeffs, samples }
                }
                _ => AlphaKernel::Samples(samples),
            }),
        };
        entries[k].push(Entry {
            i: *i,
            a: cf.constant,
            alpha,
        });
    }
    Ok(Layout {
        dim,
        a0,
        alpha0,
        products,
        chain,
        entries,
        max_poly_degree,
    })
}

/// Iteration statistics of a Picard solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardStats {
    pub max_node_iterations: usize,
    pub residual: f64,
    pub checked_nodes: usize,
}

/// Picard state: the unknown, the products and the integrand, node by node.
struct March<'a> {
    layout: &'a Layout,
    grid: RayGrid,
    w: C64,
    sigma: Vec<Vec<C64>>,
    prod: Vec<Vec<C64>>,
    integrand: Vec<Vec<C64>>,
    /// `sum_{l=1}^{j-1} iota_l` per component, for the node being solved.
    interior_sum: Vec<C64>,
    /// Running interior moments `sum_{l=1}^{j-1} s_l^q P_m(l)` per product.
    moments: Vec<Vec<C64>>,
}

impl<'a> March<'a> {
    fn new(layout: &'a Layout, grid: RayGrid) -> Self {
        let n = grid.len();
        let dim = layout.dim;
        Self {
            layout,
            grid,
            w: grid.weight(),
            sigma: vec![vec![ZERO; n]; dim],
            prod: vec![vec![ZERO; n]; layout.products.len()],
            integrand: vec![vec![ZERO; n]; dim],
            interior_sum: vec![ZERO; dim],
            moments: vec![vec![ZERO; layout.max_poly_degree + 1]; layout.products.len()],
        }
    }

    /// Product values at node `j` from `sigma_j` and precomputed known parts.
    fn products_at(&mut self, j: usize, known: &[C64]) {
        let end_w = EndRule::new(j).end * self.w;
        for (k, m) in self.layout.products.iter().enumerate() {
            let v = match self.layout.chain[k] {
                None => {
                    let c = m.leading_component().expect("unit index");
                    self.sigma[c][j]
                }
                Some((c, lower)) => {
                    if j == 0 {
                        ZERO
                    } else {
                        known[k]
                            + end_w
                                * (self.sigma[c][j] * self.prod[lower][0]
                                    + self.sigma[c][0] * self.prod[lower][j])
                    }
                }
            };
            self.prod[k][j] = v;
        }
    }

    /// `alpha * P_k` at node `j`, given the part that does not involve node `j`.
    fn alpha_conv(&self, alpha: &AlphaKernel, k: usize, j: usize, known: C64) -> C64 {
        if j == 0 {
            return ZERO;
        }
        let p = &self.prod[k];
        let rule = EndRule::new(j);
        match alpha {
            AlphaKernel::Samples(a) => known + rule.end * self.w * (a[j] * p[0] + a[0] * p[j]),
            AlphaKernel::Poly { coeffs, .. } => {
                let sj = self.grid.s(j);
                let dir = self.grid.direction();
                let mom = &self.moments[k];
                let mut acc = ZERO;
                let mut rot = C64::new(1.0, 0.0);
                for (pdeg, c) in coeffs.iter().enumerate() {
                    if *c != ZERO {
                        let mut inner = ZERO;
                        for q in 0..=pdeg {
                            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                            let mut full = mom[q] + rule.end * sj.powi(q as i32) * p[j];
                            if q == 0 {
                                full += rule.end * p[0];
                            }
                            for &(l, wl) in rule.corrections() {
                                full += wl * self.grid.s(l).powi(q as i32) * p[l];
                            }
                            inner += full
                                * (binomial(pdeg as u64, q as u64)
                                    * sj.powi((pdeg - q) as i32)
                                    * sign);
                        }
                        acc += c * rot * inner;
                    }
                    rot *= dir;
                }
                acc * self.w
            }
        }
    }

    fn integrand_at(&self, j: usize, alpha_known: &[Vec<C64>]) -> Vec<C64> {
        let lay = self.layout;
        let mut out: Vec<C64> = (0..lay.dim)
            .map(|i| lay.alpha0[i].as_ref().map_or(ZERO, |a| a[j]))
            .collect();
        for (k, entries) in lay.entries.iter().enumerate() {
            let pk = self.prod[k][j];
            for (e, entry) in entries.iter().enumerate() {
                let mut v = entry.a * pk;
                if let Some(alpha) = &entry.alpha {
                    v += self.alpha_conv(alpha, k, j, alpha_known[k].get(e).copied().unwrap_or(ZERO));
                }
                out[entry.i] += v;
            }
        }
        out
    }

    /// Convolution terms at node `j` that do not depend on the unknown value
    /// at `j`: nodes `1 .. j-1` with their quadrature weights.
    fn interiors(&self, j: usize) -> (Vec<C64>, Vec<Vec<C64>>) {
        let lay = self.layout;
        let rule = EndRule::new(j);
        let known = |a: &[C64], b: &[C64]| {
            self.w * (kernels::rev_dot(a, b, j, 1, j) + kernels::corrected_terms(&rule, a, b, j))
        };
        let prod_known = lay
            .chain
            .iter()
            .map(|ch| match ch {
                Some((c, lower)) if j >= 2 => known(&self.sigma[*c], &self.prod[*lower]),
                _ => ZERO,
            })
            .collect();
        let alpha_known = lay
            .entries
            .iter()
            .enumerate()
            .map(|(k, entries)| {
                entries
                    .iter()
                    .map(|e| match &e.alpha {
                        Some(AlphaKernel::Samples(a)) if j >= 2 => known(a, &self.prod[k]),
                        _ => ZERO,
                    })
                    .collect()
            })
            .collect();
        (prod_known, alpha_known)
    }

    fn set_sigma(&mut self, j: usize, v: &[C64]) {
        for (c, x) in v.iter().enumerate() {
            self.sigma[c][j] = *x;
        }
    }

    fn finish_node(&mut self, j: usize, iota: Vec<C64>) {
        if j > 0 {
            for (acc, x) in self.interior_sum.iter_mut().zip(&iota) {
                *acc += x;
            }
            let sj = self.grid.s(j);
            for (k, mom) in self.moments.iter_mut().enumerate() {
                let pj = self.prod[k][j];
                let mut sq = 1.0;
                for m in mom.iter_mut() {
                    *m += pj * sq;
                    sq *= sj;
                }
            }
        }
        for (i, x) in iota.into_iter().enumerate() {
            self.integrand[i][j] = x;
        }
    }

    fn run(&mut self, tol: f64, n_max: usize) -> Result<usize> {
        let lay = self.layout;
        let n = self.grid.len();
        let dim = lay.dim;
        let target = (1e-3 * tol).max(8.0 * f64::EPSILON);
        let mut max_iter = 0;

        let a0 = lay.a0.clone();
        self.set_sigma(0, &a0);
        self.products_at(0, &vec![ZERO; lay.products.len()]);
        let iota0 = self.integrand_at(0, &vec![Vec::new(); lay.products.len()]);
        self.finish_node(0, iota0);

        for j in 1..n {
            let (prod_known, alpha_known) = self.interiors(j);
            let mut guess: Vec<C64> = (0..dim)
                .map(|c| {
                    if j >= 2 {
                        2.0 * self.sigma[c][j - 1] - self.sigma[c][j - 2]
                    } else {
                        self.sigma[c][j - 1]
                    }
                })
                .collect();
            let mut last_inc = f64::INFINITY;
            let mut stagnant = 0;
            let mut iterations = 0;
            let iota = loop {
                iterations += 1;
                self.set_sigma(j, &guess);
                self.products_at(j, &prod_known);
                let iota = self.integrand_at(j, &alpha_known);
                let next: Vec<C64> = (0..dim)
                    .map(|i| {
                        a0[i] + self.w
                            * primitive_sum(&self.integrand[i], iota[i], j, self.interior_sum[i])
                    })
                    .collect();
                if next.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                    return Err(Error::Resolution(format!(
                        "solution overflowed at xi = {}; shorten the ray",
                        self.grid.s(j)
                    )));
                }
                let inc = next
                    .iter()
                    .zip(&guess)
                    .map(|(a, b)| (a - b).norm() / (1.0 + a.norm()))
                    .fold(0.0, f64::max);
                guess = next;
                if inc <= target {
                    self.set_sigma(j, &guess);
                    self.products_at(j, &prod_known);
                    break self.integrand_at(j, &alpha_known);
                }
                if inc >= last_inc {
                    stagnant += 1;
                    if inc > 2.0 * last_inc && stagnant >= 3 {
                        return Err(Error::Divergence {
                            node: j,
                            xi: self.grid.s(j),
                            increment: inc,
                            iterations,
                        });
                    }
                }
                if iterations >= n_max {
                    if inc <= tol {
                        self.set_sigma(j, &guess);
                        self.products_at(j, &prod_known);
                        break self.integrand_at(j, &alpha_known);
                    }
                    if stagnant > 0 {
                        return Err(Error::Resolution(format!(
                            "fixed-point increment stagnates at {inc:e} > {tol:e} at node {j}; refine the grid"
                        )));
                    }
                    return Err(Error::Divergence {
                        node: j,
                        xi: self.grid.s(j),
                        increment: inc,
                        iterations,
                    });
                }
                last_inc = inc;
            };
            max_iter = max_iter.max(iterations);
            self.finish_node(j, iota);
        }
        Ok(max_iter)
    }

    /// Re-substitutes the final samples at a set of nodes, recomputing every
    /// convolution from scratch with sampled kernels.
    fn residual(&self) -> (f64, usize) {
        let lay = self.layout;
        let n = self.grid.len();
        let stride = if n <= FULL_CHECK_NODES {
            1
        } else {
            n.div_ceil(FULL_CHECK_NODES / 2)
        };
        // prefix[i][j] = sum_{l=1}^{j-1} iota^i_l
        let prefix: Vec<Vec<C64>> = self
            .integrand
            .iter()
            .map(|f| {
                let mut acc = ZERO;
                let mut out = Vec::with_capacity(n);
                for j in 0..n {
                    out.push(acc);
                    if j >= 1 {
                        acc += f[j];
                    }
                }
                out
            })
            .collect();
        let nodes: Vec<usize> = (1..n).step_by(stride).chain(std::iter::once(n - 1)).collect();
        let worst = kernels::map(&nodes, |&j| {
            let rule = EndRule::new(j);
            let conv = |a: &[C64], b: &[C64], bj: C64| {
                let interior = if j >= 2 { kernels::seq::rev_dot(a, b, j, 1, j) } else { ZERO };
                self.w
                    * (interior
                        + kernels::corrected_terms(&rule, a, b, j)
                        + rule.end * (a[j] * b[0] + a[0] * bj))
            };
            let mut prod_j = vec![ZERO; lay.products.len()];
            for (k, m) in lay.products.iter().enumerate() {
                prod_j[k] = match lay.chain[k] {
                    None => self.sigma[m.leading_component().expect("unit index")][j],
                    Some((c, lower)) => {
                        let g = &self.prod[lower];
                        conv(&self.sigma[c], g, g[j])
                    }
                };
            }
            let mut iota: Vec<C64> = (0..lay.dim)
                .map(|i| lay.alpha0[i].as_ref().map_or(ZERO, |a| a[j]))
                .collect();
            for (k, entries) in lay.entries.iter().enumerate() {
                for e in entries {
                    let mut v = e.a * prod_j[k];
                    if let Some(alpha) = &e.alpha {
                        v += conv(alpha.samples(), &self.prod[k], prod_j[k]);
                    }
                    iota[e.i] += v;
                }
            }
            (0..lay.dim)
                .map(|i| {
                    let rhs = lay.a0[i]
                        + self.w * primitive_sum(&self.integrand[i], iota[i], j, prefix[i][j]);
                    (self.sigma[i][j] - rhs).norm() / (1.0 + self.sigma[i][j].norm())
                })
                .fold(0.0, f64::max)
        });
        (worst.into_iter().fold(0.0, f64::max), nodes.len())
    }
}

/// Solves `sigma^i = a^i_0 + int_0^xi [alpha^i_0 + sum_{|m|>=1} (a^i_m sigma^{*m}
/// + alpha^i_m * sigma^{*m})]` on the grid by marching node by node with a
/// fixed-point iteration at each node.
pub fn picard_solve(
    s: &StandardFormProblem,
    grid: &RayGrid,
    tol: f64,
    n_max: usize,
) -> Result<RayFunction> {
    picard_solve_with_stats(s, grid, tol, n_max).map(|(f, _)| f)
}

pub fn picard_solve_with_stats(
    s: &StandardFormProblem,
    grid: &RayGrid,
    tol: f64,
    n_max: usize,
) -> Result<(RayFunction, PicardStats)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if n_max == 0 {
        return Err(Error::InvalidInput("iteration budget must be positive".into()));
    }
    let layout = build_layout(s, grid)?;
    let mut march = March::new(&layout, *grid);
    let max_node_iterations = march.run(tol, n_max)?;
    let (residual, checked_nodes) = march.residual();
    if !(residual < tol) {
        return Err(Error::Resolution(format!(
            "re-substitution residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    let f = RayFunction::new(*grid, march.sigma)?;
    Ok((
        f,
        PicardStats {
            max_node_iterations,
            residual,
            checked_nodes,
        },
    ))
}

/// The graded terms `sigma_0 .. sigma_n` of the successive-approximation
/// construction, with `Q^c_{p,q}` the `p`-fold convolution powers of
/// component `c` of total grade `q`.
pub fn successive_terms(
    s: &StandardFormProblem,
    grid: &RayGrid,
    n: usize,
) -> Result<Vec<RayFunction>> {
    s.validate()?;
    let dim = s.dim;
    let len = grid.len();
    let w = grid.weight();
    let cfs = s.coefficient_functions();
    let mut a0 = vec![ZERO; dim];
    let mut alpha0: Vec<Option<Vec<C64>>> = vec![None; dim];
    let mut rest: Vec<(MultiIndex, usize, C64, Option<Vec<C64>>)> = Vec::new();
    for ((m, i), cf) in &cfs {
        if m.weight() == 0 {
            a0[*i] = cf.constant;
            alpha0[*i] = cf.sample(grid)?;
        } else {
            rest.push((m.clone(), *i, cf.constant, cf.sample(grid)?));
        }
    }
    // terms[q][c]: sigma^c_q
    let mut terms: Vec<Vec<Vec<C64>>> = vec![(0..dim).map(|i| vec![a0[i]; len]).collect()];
    // q_pow[c][p][q]: Q^c_{p,q} (p >= 1)
    let mut q_pow: Vec<Vec<Vec<Vec<C64>>>> = vec![vec![Vec::new()]; dim];
    let max_p = rest.iter().map(|(m, ..)| m.weight() as usize).max().unwrap_or(0);

    let q_entry = |q_pow: &Vec<Vec<Vec<Vec<C64>>>>, c: usize, p: usize, q: usize| -> Vec<C64> {
        q_pow[c][p][q].clone()
    };

    for order in 1..=n {
        // extend Q^c_{p, order-1} for all p (needed grades are < order)
        let q = order - 1;
        for c in 0..dim {
            for p in 1..=max_p.max(1) {
                if q_pow[c].len() <= p {
                    q_pow[c].push(Vec::new());
                }
                let v = if p == 1 {
                    terms[q][c].clone()
                } else {
                    let mut acc = vec![ZERO; len];
                    for a in 0..=q {
                        let lower = &q_pow[c][p - 1][q - a];
                        let conv = kernels::convolve(&terms[a][c], lower, w);
                        for (x, y) in acc.iter_mut().zip(conv) {
                            *x += y;
                        }
                    }
                    acc
                };
                q_pow[c][p].push(v);
            }
        }
        // S^m_r = sum over grade splits of the componentwise convolution powers
        let s_m = |m: &MultiIndex, r: usize| -> Vec<C64> {
            let parts: Vec<(usize, usize)> = m
                .parts()
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0)
                .map(|(c, p)| (c, *p as usize))
                .collect();
            fn rec(
                parts: &[(usize, usize)],
                r: usize,
                w: C64,
                get: &dyn Fn(usize, usize, usize) -> Vec<C64>,
            ) -> Option<Vec<C64>> {
                let (c, p) = parts[0];
                if parts.len() == 1 {
                    return Some(get(c, p, r));
                }
                let mut acc: Option<Vec<C64>> = None;
                for a in 0..=r {
                    let head = get(c, p, a);
                    if let Some(tail) = rec(&parts[1..], r - a, w, get) {
                        let conv = kernels::convolve(&head, &tail, w);
                        acc = Some(match acc {
                            None => conv,
                            Some(mut x) => {
                                for (u, v) in x.iter_mut().zip(conv) {
                                    *u += v;
                                }
                                x
                            }
                        });
                    }
                }
                acc
            }
            let get = |c: usize, p: usize, q: usize| q_entry(&q_pow, c, p, q);
            rec(&parts, r, w, &get).unwrap_or_else(|| vec![ZERO; len])
        };
        let mut integrand: Vec<Vec<C64>> = vec![vec![ZERO; len]; dim];
        if order == 1 {
            for i in 0..dim {
                if let Some(a) = &alpha0[i] {
                    for (x, y) in integrand[i].iter_mut().zip(a) {
                        *x += y;
                    }
                }
            }
        }
        for (m, i, a, alpha) in &rest {
            let mw = m.weight() as usize;
            if mw > order {
                continue;
            }
            if *a != ZERO {
                let sm = s_m(m, order - mw);
                for (x, y) in integrand[*i].iter_mut().zip(sm) {
                    *x += a * y;
                }
            }
            if let Some(al) = alpha {
                if order > mw {
                    let sm = s_m(m, order - mw - 1);
                    let conv = kernels::convolve(al, &sm, w);
                    for (x, y) in integrand[*i].iter_mut().zip(conv) {
                        *x += y;
                    }
                }
            }
        }
        terms.push(integrand.iter().map(|f| cumulative(f, w)).collect());
    }
    terms
        .into_iter()
        .map(|t| RayFunction::new(*grid, t))
        .collect()
}

/// Fits `|f(xi_j)| <= D e^{K |xi_j|}` from the running maximum of the
/// modulus over the second half of the ray.
pub fn growth_estimate(f: &RayFunction) -> GrowthBound {
    let env = f.envelope();
    let grid = f.grid;
    if env.iter().all(|v| *v == 0.0) {
        return GrowthBound::degenerate();
    }
    let mut running = 0.0f64;
    let running_max: Vec<f64> = env
        .iter()
        .map(|v| {
            running = running.max(*v);
            running
        })
        .collect();
    let start = env.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..env.len())
        .filter(|&j| running_max[j] > 0.0)
        .map(|j| (grid.s(j), running_max[j].ln()))
        .unzip();
    let (slope, rms) = if xs.len() >= 2 {
        let (_, slope, rms) = linear_fit(&xs, &ys);
        (slope, rms)
    } else {
        (0.0, 0.0)
    };
    let rate = slope.max(0.0);
    let prefactor = env
        .iter()
        .enumerate()
        .map(|(j, v)| v * (-rate * grid.s(j)).exp())
        .fold(0.0, f64::max);
    GrowthBound {
        prefactor,
        rate,
        fit_residual: rms,
        degenerate: false,
    }
}

/// Largest relative deviation `|c_k - phi_k| / max(1, |phi_k|)`, `k <= j_max`,
/// between Taylor coefficients of `sigma` at the origin (from polynomial
/// interpolation of equispaced samples) and the formal Borel coefficients.
pub fn taylor_match(sigma: &RayFunction, phi: &BorelSeries, j_max: usize) -> Result<f64> {
    if j_max > 6 {
        return Err(Error::Resolution(format!(
            "Taylor matching supports orders up to 6, asked for {j_max}"
        )));
    }
    if sigma.dim() != phi.dim() {
        return Err(Error::Dimension("Borel series and samples differ in dimension".into()));
    }
    let grid = sigma.grid;
    let degree = j_max + 6;
    let stride = ((0.05 / grid.h).round() as usize).max(1);
    if degree * stride >= grid.len() {
        return Err(Error::Resolution(format!(
            "ray of {} nodes is too short to resolve order {j_max}",
            grid.len()
        )));
    }
    let span = (degree * stride) as f64 * grid.h;
    let vander = CMat::from_fn(degree + 1, degree + 1, |r, c| {
        C64::new((r as f64 / degree as f64).powi(c as i32), 0.0)
    });
    let mut worst: f64 = 0.0;
    for i in 0..sigma.dim() {
        let samples: Vec<C64> = (0..=degree).map(|r| sigma.component(i)[r * stride]).collect();
        let b = linalg::solve(&vander, &samples)?;
        for (k, bk) in b.iter().enumerate().take(j_max + 1) {
            // sigma(e^{i theta} s) = sum phi_k e^{i k theta} s^k
            let ck = bk / span.powi(k as i32) * C64::from_polar(1.0, -(k as f64) * grid.theta);
            let phik = if k < phi.len() { phi.coeff(k)[i] } else { ZERO };
            worst = worst.max((ck - phik).norm() / phik.norm().max(1.0));
        }
    }
    Ok(worst)
}
