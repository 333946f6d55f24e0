//! Block diagonalisation of matrix families `A(hbar) = sum A_k hbar^k`:
//! the quadratic equations for the off-diagonal blocks, their order-by-order
//! Sylvester solves, recursive splitting and eigenvalue resummation.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::borel::CoefficientFunction;
use crate::error::{Error, Result};
use crate::formal::ProblemSpec;
use crate::laplace::{resum_implicit_solution, ResumParams, ResummationResult, SectorSpec};
use crate::linalg::{self, CMat};
use crate::oracle;
use crate::series::MultiIndex;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Default separation below which leading eigenvalues share a group.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Eigenvector matrices with a larger condition number count as defective.
pub const MAX_EIGVEC_CONDITION: f64 = 1e10;

/// A polynomial matrix family, optionally with Laplace-transformed entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFamily {
    pub n: usize,
    pub orders: Vec<CMat>,
    /// Per-entry `a + L[alpha]` added to the polynomial part, keyed by
    /// 0-based `(row, column)`.
    pub borel_parts: BTreeMap<(usize, usize), CoefficientFunction>,
}

impl MatrixFamily {
    pub fn new(orders: Vec<CMat>) -> Result<Self> {
        let n = orders
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::InvalidInput("matrix family needs at least A_0".into()))?;
        if n == 0 {
            return Err(Error::Dimension("matrix size must be positive".into()));
        }
        if let Some(k) = orders.iter().position(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::Dimension(format!(
                "A_{k} is {}x{}, expected {n}x{n}",
                orders[k].nrows(),
                orders[k].ncols()
            )));
        }
        Ok(Self {
            n,
            orders,
            borel_parts: BTreeMap::new(),
        })
    }

    /// Family from nested real rows, one matrix per order.
    pub fn from_real(orders: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mats = orders
            .iter()
            .map(|rows| {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension("matrix rows must have equal length".into()));
                }
                Ok(CMat::from_fn(n, n, |r, c| C64::new(rows[r][c], 0.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn with_borel_part(mut self, row: usize, col: usize, f: CoefficientFunction) -> Result<Self> {
        if row >= self.n || col >= self.n {
            return Err(Error::Dimension(format!(
                "entry ({}, {}) outside a {}x{} family",
                row + 1,
                col + 1,
                self.n,
                self.n
            )));
        }
        self.borel_parts.insert((row, col), f);
        Ok(self)
    }

    /// `A_k`, including formal coefficients of Borel parts when present.
    pub fn order(&self, k: usize) -> CMat {
        let mut m = self
            .orders
            .get(k)
            .cloned()
            .unwrap_or_else(|| CMat::zeros(self.n, self.n));
        for ((r, c), f) in &self.borel_parts {
            if let Ok(coeffs) = f.formal_coeffs(k) {
                m[(*r, *c)] += coeffs[k];
            }
        }
        m
    }

    /// `A_0 .. A_order`.
    pub fn formal_orders(&self, order: usize) -> Result<Vec<CMat>> {
        for f in self.borel_parts.values() {
            f.formal_coeffs(0)?;
        }
        Ok((0..=order).map(|k| self.order(k)).collect())
    }

    pub fn degree(&self) -> usize {
        self.orders.len() - 1
    }

    /// `A(hbar)`; Borel parts are evaluated with the reference quadrature.
    pub fn eval(&self, hbar: C64) -> Result<CMat> {
        let mut m = series_eval(&self.orders, hbar);
        for ((r, c), f) in &self.borel_parts {
            m[(*r, *c)] += f.constant + oracle::reference_laplace(f, hbar, 1e-13)?;
        }
        Ok(m)
    }
}

/// `sum_k M_k hbar^k`.
pub fn series_eval(series: &[CMat], hbar: C64) -> CMat {
    let n = series.first().map_or(0, |m| m.nrows());
    let c = series.first().map_or(0, |m| m.ncols());
    series
        .iter()
        .rev()
        .fold(CMat::zeros(n, c), |acc, m| acc * hbar + m)
}

/// Cauchy product of matrix series; `order = None` keeps every term.
pub fn series_mul(a: &[CMat], b: &[CMat], order: Option<usize>) -> Vec<CMat> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = match order {
        Some(k) => k + 1,
        None => a.len() + b.len() - 1,
    };
    (0..len)
        .map(|k| {
            let mut acc = CMat::zeros(a[0].nrows(), b[0].ncols());
            for i in 0..=k.min(a.len() - 1) {
                if k - i < b.len() {
                    acc += &a[i] * &b[k - i];
                }
            }
            acc
        })
        .collect()
}

fn block(m: &CMat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> CMat {
    m.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

fn block_diag(a: &CMat, b: &CMat) -> CMat {
    let (n1, n2) = (a.nrows(), b.nrows());
    let mut out = CMat::zeros(n1 + n2, n1 + n2);
    out.view_mut((0, 0), (n1, n1)).copy_from(a);
    out.view_mut((n1, n1), (n2, n2)).copy_from(b);
    out
}

/// Grouping of leading eigenvalues into spectrally separated clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    /// Eigenvalues in the block order used by `P00`.
    pub eigenvalues: Vec<C64>,
    /// Index ranges of the groups in that order.
    pub groups: Vec<Vec<usize>>,
    /// `(n', n'')`: the first group against the rest.
    pub sizes: (usize, usize),
    pub leading_blocks: (CMat, CMat),
}

impl BlockPartition {
    /// Smallest distance between eigenvalues of different groups.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (a, ga) in self.groups.iter().enumerate() {
            for gb in &self.groups[a + 1..] {
                for &i in ga {
                    for &j in gb {
                        gap = gap.min((self.eigenvalues[i] - self.eigenvalues[j]).norm());
                    }
                }
            }
        }
        gap
    }
}

/// Single-linkage clusters: eigenvalues closer than `gap_tol` share a group.
fn cluster(values: &[C64], gap_tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() < gap_tol {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut label, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Diagonalises `A00` (columns grouped by eigenvalue cluster) and returns
/// `P00 = V^{-1}` with `P00 A00 P00^{-1} = Lambda00`.
pub fn leading_split(a00: &CMat, gap_tol: f64) -> Result<(CMat, CMat, BlockPartition)> {
    let n = a00.nrows();
    if a00.ncols() != n {
        return Err(Error::Dimension("leading matrix must be square".into()));
    }
    let (values, vectors) = linalg::eig(a00)?;
    let cond = linalg::condition(&vectors);
    if !(cond <= MAX_EIGVEC_CONDITION) {
        return Err(Error::Defective(format!(
            "eigenvector matrix has condition number {cond:e}; supply an exact P00 for a non-diagonalisable leading matrix"
        )));
    }
    // order eigenvalues by real part, then imaginary part, before clustering
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .re
            .total_cmp(&values[j].re)
            .then(values[i].im.total_cmp(&values[j].im))
    });
    let sorted: Vec<C64> = order.iter().map(|&i| values[i]).collect();
    let clusters = cluster(&sorted, gap_tol);
    let flat: Vec<usize> = clusters.iter().flatten().copied().collect();
    let v = CMat::from_fn(n, n, |r, c| vectors[(r, order[flat[c]])]);
    let eigenvalues: Vec<C64> = flat.iter().map(|&i| sorted[i]).collect();
    let mut groups = Vec::new();
    let mut start = 0;
    for c in &clusters {
        groups.push((start..start + c.len()).collect());
        start += c.len();
    }
    let p00 = linalg::inverse(&v)?;
    let lambda00 = &p00 * a00 * &v;
    let n1 = clusters[0].len();
    let partition = BlockPartition {
        leading_blocks: (block(&lambda00, 0..n1, 0..n1), block(&lambda00, n1..n, n1..n)),
        sizes: (n1, n - n1),
        eigenvalues,
        groups,
    };
    Ok((p00, lambda00, partition))
}

/// A partition with caller-chosen groups of an already block-diagonal
/// leading matrix; rejects groups that are not separated by `gap_tol`.
pub fn partition_with(a0: &CMat, first: usize, gap_tol: f64) -> Result<BlockPartition> {
    let n = a0.nrows();
    if first == 0 || first >= n {
        return Err(Error::InvalidInput(format!("first block size {first} out of 1..{n}")));
    }
    let l1 = block(a0, 0..first, 0..first);
    let l2 = block(a0, first..n, first..n);
    let (e1, _) = linalg::eig(&l1)?;
    let (e2, _) = linalg::eig(&l2)?;
    let part = BlockPartition {
        eigenvalues: e1.iter().chain(&e2).copied().collect(),
        groups: vec![(0..first).collect(), (first..n).collect()],
        sizes: (first, n - first),
        leading_blocks: (l1, l2),
    };
    let gap = part.min_gap();
    if !(gap >= gap_tol) {
        return Err(Error::Gap(format!(
            "blocks share eigenvalues to within {gap:e} < {gap_tol:e}"
        )));
    }
    Ok(part)
}

fn sylvester_checked(a: &CMat, b: &CMat, rhs: &CMat) -> Result<CMat> {
    let x = linalg::sylvester(a, b, rhs)?;
    let residual = linalg::max_abs(&(a * &x - &x * b - rhs));
    let scale = linalg::max_abs(rhs).max(1.0) * (1.0 + linalg::max_abs(&x));
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Conditioning(format!(
            "Sylvester residual {residual:e}; the spectral gap is numerically too small"
        )));
    }
    Ok(x)
}

/// Order-`k` coefficient of `sum_{a+b+c=k, a,c>=1} X_a Y_b X_c`.
fn quadratic_term(x: &[CMat], y: &[CMat], k: usize) -> CMat {
    let mut acc = CMat::zeros(x[1].nrows(), x[1].ncols());
    for a in 1..k {
        for c in 1..k - a + 1 {
            let b = k - a - c;
            if b < y.len() {
                acc += &x[a] * &y[b] * &x[c];
            }
        }
    }
    acc
}

/// Off-diagonal blocks `S` (n' x n'') and `T` (n'' x n') through order `k_max`
/// for a family whose leading matrix is block diagonal with respect to the
/// split at `n1`:
///
/// `A_12 + S A_22 - A_11 S - S A_21 S = 0`,
/// `A_21 + T A_11 - A_22 T - T A_12 T = 0`.
pub fn solve_st_formal(a: &[CMat], n1: usize, k_max: usize) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let n = a[0].nrows();
    let n2 = n - n1;
    let get = |k: usize| a.get(k).cloned().unwrap_or_else(|| CMat::zeros(n, n));
    let a11: Vec<CMat> = (0..=k_max).map(|k| block(&get(k), 0..n1, 0..n1)).collect();
    let a12: Vec<CMat> = (0..=k_max).map(|k| block(&get(k), 0..n1, n1..n)).collect();
    let a21: Vec<CMat> = (0..=k_max).map(|k| block(&get(k), n1..n, 0..n1)).collect();
    let a22: Vec<CMat> = (0..=k_max).map(|k| block(&get(k), n1..n, n1..n)).collect();
    let mut s = vec![CMat::zeros(n1, n2)];
    let mut t = vec![CMat::zeros(n2, n1)];
    for k in 1..=k_max {
        // A11_0 S_k - S_k A22_0 = A12_k + sum_j (S_j A22_{k-j} - A11_{k-j} S_j) - quadratic
        s.push(CMat::zeros(n1, n2));
        let mut rhs_s = a12[k].clone();
        for j in 1..k {
            rhs_s += &s[j] * &a22[k - j] - &a11[k - j] * &s[j];
        }
        rhs_s -= quadratic_term(&s, &a21, k);
        s[k] = sylvester_checked(&a11[0], &a22[0], &rhs_s).map_err(|e| stage_order(e, "S", k))?;

        t.push(CMat::zeros(n2, n1));
        let mut rhs_t = a21[k].clone();
        for j in 1..k {
            rhs_t += &t[j] * &a11[k - j] - &a22[k - j] * &t[j];
        }
        rhs_t -= quadratic_term(&t, &a12, k);
        t[k] = sylvester_checked(&a22[0], &a11[0], &rhs_t).map_err(|e| stage_order(e, "T", k))?;
    }
    Ok((s, t))
}

fn stage_order(e: Error, which: &str, k: usize) -> Error {
    match e {
        Error::Conditioning(msg) => Error::Conditioning(format!("{which}_{k}: {msg}")),
        other => other,
    }
}

/// One node of the recursive splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionNode {
    pub path: String,
    pub eigenvalues: Vec<C64>,
    pub children: Vec<PartitionNode>,
}

/// `P A P^{-1} = Lambda` as truncated matrix series.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecomposition {
    pub p: Vec<CMat>,
    pub lambda: Vec<CMat>,
    pub s: Vec<CMat>,
    pub t: Vec<CMat>,
    /// Sizes of the diagonal blocks of `lambda`, in order.
    pub blocks: Vec<usize>,
    pub tree: PartitionNode,
}

impl BlockDecomposition {
    pub fn order(&self) -> usize {
        self.p.len() - 1
    }

    /// Whether every entry outside the diagonal blocks is exactly zero.
    pub fn off_block_zero(&self) -> bool {
        let mut owner = Vec::new();
        for (b, size) in self.blocks.iter().enumerate() {
            owner.extend(std::iter::repeat(b).take(*size));
        }
        self.lambda.iter().all(|m| {
            (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| owner[r] == owner[c] || m[(r, c)] == ZERO))
        })
    }
}

/// `P = [[I, S], [T, I]]` and `Lambda = diag(A_11 + S A_21, A_22 + T A_12)`;
/// checks `P A - Lambda P = 0` coefficientwise through the order of `S`.
pub fn assemble_p_lambda(s: &[CMat], t: &[CMat], a: &[CMat]) -> Result<BlockDecomposition> {
    let k_max = s.len() - 1;
    let n1 = s[0].nrows();
    let n = a[0].nrows();
    let get = |k: usize| a.get(k).cloned().unwrap_or_else(|| CMat::zeros(n, n));
    let mut p = Vec::with_capacity(k_max + 1);
    let mut lambda = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let mut pk = if k == 0 { linalg::identity(n) } else { CMat::zeros(n, n) };
        pk.view_mut((0, n1), (n1, n - n1)).copy_from(&s[k]);
        pk.view_mut((n1, 0), (n - n1, n1)).copy_from(&t[k]);
        p.push(pk);
        let ak = get(k);
        let mut l1 = block(&ak, 0..n1, 0..n1);
        let mut l2 = block(&ak, n1..n, n1..n);
        for j in 1..=k {
            let aj = get(k - j);
            l1 += &s[j] * block(&aj, n1..n, 0..n1);
            l2 += &t[j] * block(&aj, 0..n1, n1..n);
        }
        lambda.push(block_diag(&l1, &l2));
    }
    let a_trunc: Vec<CMat> = (0..=k_max).map(get).collect();
    let lhs = series_mul(&p, &a_trunc, Some(k_max));
    let rhs = series_mul(&lambda, &p, Some(k_max));
    let scale = a_trunc.iter().map(linalg::max_abs).fold(1.0, f64::max);
    for (k, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
        let res = linalg::max_abs(&(l - r));
        if !(res < 1e-9 * scale) {
            return Err(Error::Internal(format!(
                "P A - Lambda P has residual {res:e} at order {k}"
            )));
        }
    }
    Ok(BlockDecomposition {
        p,
        lambda,
        s: s.to_vec(),
        t: t.to_vec(),
        blocks: vec![n1, n - n1],
        tree: PartitionNode {
            path: "root".into(),
            eigenvalues: Vec::new(),
            children: Vec::new(),
        },
    })
}

fn conjugate(series: &[CMat], p: &CMat, p_inv: &CMat) -> Vec<CMat> {
    series.iter().map(|m| p * m * p_inv).collect()
}

fn split_recursive(a: &[CMat], k_max: usize, gap_tol: f64, path: &str) -> Result<BlockDecomposition> {
    let n = a[0].nrows();
    let (p00, _, part) = leading_split(&a[0], gap_tol).map_err(|e| e.at_stage(path))?;
    let v = linalg::inverse(&p00).map_err(|e| e.at_stage(path))?;
    let conj = conjugate(a, &p00, &v);
    let constant = |m: CMat| {
        let mut out = vec![m];
        out.resize(k_max + 1, CMat::zeros(n, n));
        out
    };
    if part.groups.len() == 1 {
        return Ok(BlockDecomposition {
            p: constant(p00),
            lambda: conj,
            s: Vec::new(),
            t: Vec::new(),
            blocks: vec![n],
            tree: PartitionNode {
                path: path.to_string(),
                eigenvalues: part.eigenvalues,
                children: Vec::new(),
            },
        });
    }
    let n1 = part.sizes.0;
    let (s, t) = solve_st_formal(&conj, n1, k_max).map_err(|e| e.at_stage(path))?;
    let stage = assemble_p_lambda(&s, &t, &conj).map_err(|e| e.at_stage(path))?;

    // the first group is a single cluster; split the remainder further
    let lower: Vec<CMat> = stage.lambda.iter().map(|m| block(m, n1..n, n1..n)).collect();
    let upper: Vec<CMat> = stage.lambda.iter().map(|m| block(m, 0..n1, 0..n1)).collect();
    let child_path = format!("{path}/{}", part.groups.len());
    let sub = split_recursive(&lower, k_max, gap_tol, &child_path)?;

    let embed: Vec<CMat> = (0..=k_max)
        .map(|k| {
            let id = if k == 0 { linalg::identity(n1) } else { CMat::zeros(n1, n1) };
            block_diag(&id, &sub.p[k])
        })
        .collect();
    let p = series_mul(&series_mul(&embed, &stage.p, Some(k_max)), &constant(p00), Some(k_max));
    let lambda: Vec<CMat> = (0..=k_max).map(|k| block_diag(&upper[k], &sub.lambda[k])).collect();
    let mut blocks = vec![n1];
    blocks.extend(&sub.blocks);
    Ok(BlockDecomposition {
        p,
        lambda,
        s,
        t,
        blocks,
        tree: PartitionNode {
            path: path.to_string(),
            eigenvalues: part.eigenvalues[..n1].to_vec(),
            children: vec![sub.tree],
        },
    })
}

/// Splits the family down to single eigenvalue clusters; `P` is the ordered
/// product of the stage transformations.
pub fn recursive_block_diagonalize(a: &MatrixFamily, k_max: usize, gap_tol: f64) -> Result<BlockDecomposition> {
    let orders = a.formal_orders(k_max)?;
    split_recursive(&orders, k_max, gap_tol, "root")
}

/// `||P A P^{-1} - Lambda||_max` at `hbar`, with `P A - Lambda P` formed from
/// the full (untruncated) polynomial products.
pub fn similarity_residual(dec: &BlockDecomposition, a: &MatrixFamily, hbar: C64) -> Result<f64> {
    let orders = a.formal_orders(dec.order().max(a.degree()))?;
    let diff: Vec<CMat> = {
        let pa = series_mul(&dec.p, &orders, None);
        let lp = series_mul(&dec.lambda, &dec.p, None);
        let len = pa.len().max(lp.len());
        (0..len)
            .map(|k| {
                let z = CMat::zeros(a.n, a.n);
                pa.get(k).unwrap_or(&z) - lp.get(k).unwrap_or(&z)
            })
            .collect()
    };
    let p_inv = linalg::inverse(&series_eval(&dec.p, hbar))?;
    Ok(linalg::max_abs(&(series_eval(&diff, hbar) * p_inv)))
}

/// Coefficients `c_0(hbar) .. c_n(hbar)` of `det(z I - A(hbar))` by the
/// Faddeev-LeVerrier recursion over polynomial matrices.
pub fn characteristic_polynomial(a: &[CMat]) -> Vec<Vec<C64>> {
    let n = a[0].nrows();
    let trace = |m: &[CMat]| -> Vec<C64> { m.iter().map(|x| x.trace()).collect() };
    let mut coeffs = vec![Vec::new(); n + 1];
    coeffs[n] = vec![ONE];
    let mut m: Vec<CMat> = vec![CMat::zeros(n, n)];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I
        let mut next = series_mul(a, &m, None);
        for (j, c) in coeffs[n - k + 1].iter().enumerate() {
            if next.len() <= j {
                next.push(CMat::zeros(n, n));
            }
            next[j] += linalg::identity(n) * *c;
        }
        m = next;
        let am = series_mul(a, &m, None);
        coeffs[n - k] = trace(&am).into_iter().map(|x| -x / k as f64).collect();
    }
    coeffs
        .into_iter()
        .map(|c| crate::poly::trim(&c))
        .collect()
}

/// `det(z I - A(hbar)) = 0` as a scalar implicit problem.
pub fn characteristic_problem(a: &MatrixFamily) -> Result<ProblemSpec> {
    if !a.borel_parts.is_empty() {
        return Err(Error::InvalidInput(
            "eigenvalue resummation needs a polynomial family".into(),
        ));
    }
    let chi = characteristic_polynomial(&a.orders);
    let mut p = ProblemSpec::new(1)?;
    for (j, poly) in chi.iter().enumerate() {
        for (k, c) in poly.iter().enumerate() {
            if *c != ZERO {
                p.insert(k, MultiIndex::new(vec![j as u32]), 0, *c)?;
            }
        }
    }
    Ok(p)
}

/// Each eigenvalue `lambda_i(hbar)` with `lambda_i(0) = a_i` resummed from
/// the characteristic equation.
pub fn eigen_resum(
    a: &MatrixFamily,
    sector: &SectorSpec,
    hbars: &[C64],
    params: &ResumParams,
    gap_tol: f64,
) -> Result<Vec<(C64, Vec<Result<ResummationResult>>)>> {
    let leading = oracle::sorted_eigenvalues(&a.orders[0])?;
    for i in 0..leading.len() {
        for j in i + 1..leading.len() {
            let d = (leading[i] - leading[j]).norm();
            if d < gap_tol {
                return Err(Error::Discriminant(format!(
                    "leading eigenvalues {} and {} are {d:e} apart",
                    leading[i], leading[j]
                )));
            }
        }
    }
    let p = characteristic_problem(a)?;
    leading
        .iter()
        .map(|&l| Ok((l, resum_implicit_solution(&p, &[l], sector, hbars, params)?)))
        .collect()
}
