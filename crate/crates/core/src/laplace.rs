//! Laplace transforms along a ray, Borel-disc geometry, Padé continuation of
//! Borel series and the resummation pipelines built on them.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::borel::{growth_estimate, picard_solve_with_stats, PicardStats, RayFunction, RayGrid};
use crate::error::{Error, Result};
use crate::formal::{formal_ift, to_standard_form, ProblemSpec, StandardFormProblem};
use crate::kernels;
use crate::linalg::CMat;
use crate::oracle;
use crate::poly::{self, Rational};
use crate::series::{formal_borel, gevrey_fit, BorelSeries, GrowthBound, TruncatedSeries};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Padé poles closer than this to the sampled ray segment are rejected.
pub const PADE_POLE_RADIUS: f64 = 0.1;

/// Longest ray the automatic truncation will pick.
pub const MAX_AUTO_XI: f64 = 200.0;

/// A Borel disc `Re(e^{i theta} / hbar) > 1 / R` bisected by `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub theta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

impl SectorSpec {
    pub fn new(theta: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sector needs a finite direction and a positive diameter, got theta = {theta}, R = {radius}"
            )));
        }
        Ok(Self { theta, radius })
    }

    /// `Re(e^{i theta} / hbar)`.
    pub fn reach(&self, hbar: C64) -> f64 {
        if hbar == ZERO {
            return f64::INFINITY;
        }
        (C64::from_polar(1.0, self.theta) / hbar).re
    }

    pub fn contains(&self, hbar: C64) -> bool {
        hbar != ZERO && self.reach(hbar) > 1.0 / self.radius
    }

    pub fn check(&self, hbar: C64) -> Result<()> {
        if self.contains(hbar) {
            Ok(())
        } else {
            Err(Error::Domain {
                hbar,
                lhs: self.reach(hbar),
                rhs: 1.0 / self.radius,
            })
        }
    }

    /// Opening arc `(theta - pi/2, theta + pi/2)`.
    pub fn opening_arc(&self) -> (f64, f64) {
        let half = std::f64::consts::FRAC_PI_2;
        (self.theta - half, self.theta + half)
    }
}

/// Value of a Laplace integral with its truncation estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceValue {
    pub value: Vec<C64>,
    pub tail_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumDiagnostics {
    pub growth: GrowthBound,
    pub xi_max: f64,
    pub h: f64,
    /// `||F(hbar, f(hbar))||` from the oracle, when available.
    pub residual: Option<f64>,
    pub picard: Option<PicardStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResummationResult {
    pub hbar: C64,
    pub value: Vec<C64>,
    pub tail_bound: f64,
    pub diagnostics: ResumDiagnostics,
}

/// `int_0^b e^{-z t} t^k dt` for `k = 0, 1, 2`.
fn moments(z: C64, b: f64) -> [C64; 3] {
    if z.norm() * b < 1.0 {
        let mut out = [ZERO; 3];
        for (k, o) in out.iter_mut().enumerate() {
            // sum_n (-z)^n / n! * b^{n+k+1} / (n+k+1)
            let mut term = C64::new(b.powi(k as i32 + 1), 0.0);
            let mut n = 0;
            loop {
                let add = term / (n + k + 1) as f64;
                *o += add;
                if add.norm() < 1e-18 * o.norm() || n > 60 {
                    break;
                }
                n += 1;
                term *= -z * b / n as f64;
            }
        }
        out
    } else {
        let e = (-z * b).exp();
        let j0 = (1.0 - e) / z;
        let j1 = (j0 - b * e) / z;
        let j2 = (2.0 * j1 - b * b * e) / z;
        [j0, j1, j2]
    }
}

/// Weights of `int e^{-z t} q(t) dt` for the quadratic `q` through
/// `t = 0, 1, 2`, over `[0, 2]` or over `[1, 2]`.
fn quadratic_weights(z: C64, upper_half_only: bool) -> [C64; 3] {
    let full = moments(z, 2.0);
    let j = if upper_half_only {
        let lower = moments(z, 1.0);
        [full[0] - lower[0], full[1] - lower[1], full[2] - lower[2]]
    } else {
        full
    };
    [
        (j[2] - 3.0 * j[1] + 2.0 * j[0]) * 0.5,
        2.0 * j[1] - j[2],
        (j[2] - j[1]) * 0.5,
    ]
}

/// Ray integral `e^{i theta} int_0^S e^{-lambda s} f(s) ds` by product
/// integration against the piecewise-quadratic interpolant of the samples.
pub(crate) fn product_quadrature(values: &[C64], grid: &RayGrid, lambda: C64) -> C64 {
    let h = grid.h;
    let n = values.len();
    let z = lambda * h;
    let w = quadratic_weights(z, false);
    let step = (-2.0 * z).exp();
    let mut acc = ZERO;
    let mut decay = C64::new(1.0, 0.0);
    let pairs = (n - 1) / 2;
    for p in 0..pairs {
        let b = 2 * p;
        acc += decay * (w[0] * values[b] + w[1] * values[b + 1] + w[2] * values[b + 2]);
        decay *= step;
    }
    if (n - 1) % 2 == 1 {
        let b = n - 3;
        let wl = quadratic_weights(z, true);
        let base = (-lambda * grid.s(b)).exp();
        acc += base * (wl[0] * values[b] + wl[1] * values[b + 1] + wl[2] * values[b + 2]);
    }
    grid.direction() * h * acc
}

/// `L[sigma](hbar) = int_0^{xi_max} e^{-xi/hbar} sigma(xi) dxi` along the
/// grid's ray, with the tail beyond `xi_max` bounded by the growth fit.
pub fn laplace(sigma: &RayFunction, hbar: C64, growth: &GrowthBound) -> Result<LaplaceValue> {
    let grid = sigma.grid;
    let lambda = if hbar == ZERO {
        return Err(Error::Domain {
            hbar,
            lhs: f64::NAN,
            rhs: growth.rate,
        });
    } else {
        grid.direction() / hbar
    };
    if !(lambda.re > growth.rate) {
        return Err(Error::Domain {
            hbar,
            lhs: lambda.re,
            rhs: growth.rate,
        });
    }
    let value = sigma
        .components()
        .iter()
        .map(|c| product_quadrature(c, &grid, lambda))
        .collect();
    Ok(LaplaceValue {
        value,
        tail_bound: tail_bound(growth, lambda.re, grid.s_max()),
    })
}

/// `D e^{-(Re lambda - K) S} / (Re lambda - K)`.
pub fn tail_bound(growth: &GrowthBound, reach: f64, s_max: f64) -> f64 {
    if growth.degenerate || growth.prefactor == 0.0 {
        return 0.0;
    }
    let gap = reach - growth.rate;
    growth.prefactor * (-gap * s_max).exp() / gap
}

/// Robust Padé approximant of type `[m / n]` from `coeffs[0 ..= m + n]`,
/// reducing the type when the Toeplitz block is rank deficient.
pub fn pade(coeffs: &[C64], m: usize, n: usize, tol: f64) -> Result<Rational> {
    if coeffs.len() < m + n + 1 {
        return Err(Error::InvalidInput(format!(
            "type [{m}/{n}] needs {} coefficients, got {}",
            m + n + 1,
            coeffs.len()
        )));
    }
    let c = &coeffs[..=m + n];
    // balance the coefficients by rescaling xi = gamma t
    let last = c.iter().rposition(|x| x.norm() > 0.0);
    let gamma = match last {
        Some(l) if l > 0 && c[0].norm() > 0.0 => (c[0].norm() / c[l].norm()).powf(1.0 / l as f64),
        _ => 1.0,
    };
    let d: Vec<C64> = c.iter().enumerate().map(|(k, x)| x * gamma.powi(k as i32)).collect();
    let norm = d.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if d[..=m].iter().all(|x| x.norm() <= tol * norm) {
        return Ok(Rational::constant(ZERO));
    }
    let abs_tol = tol * norm;
    let (mut m, mut n) = (m, n);
    let toeplitz = |r: usize, col: usize| if r >= col { d[r - col] } else { ZERO };
    let b: Vec<C64> = loop {
        if n == 0 {
            break vec![C64::new(1.0, 0.0)];
        }
        // rows m+1 ..= m+n, padded with a zero row to make the SVD square
        let z = CMat::from_fn(n + 1, n + 1, |r, col| {
            if r < n {
                toeplitz(m + 1 + r, col)
            } else {
                ZERO
            }
        });
        let svd = nalgebra::SVD::new(z, false, true);
        let rank = svd.singular_values.iter().filter(|s| **s > abs_tol).count();
        if rank == n {
            let v_t = svd.v_t.as_ref().ok_or_else(|| {
                Error::Conditioning("singular value decomposition failed".into())
            })?;
            let idx = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("nonempty");
            break (0..=n).map(|j| v_t[(idx, j)].conj()).collect();
        }
        m = m.saturating_sub(n - rank);
        n = rank;
    };
    let mut a: Vec<C64> = (0..=m)
        .map(|r| (0..=n.min(r)).map(|col| toeplitz(r, col) * b[col]).sum())
        .collect();
    let mut b = b;
    // drop common leading zeros
    while b.len() > 1 && b[0].norm() <= tol && a[0].norm() <= abs_tol {
        b.remove(0);
        a.remove(0);
        if a.is_empty() {
            a.push(ZERO);
        }
    }
    let b0 = b[0];
    if b0.norm() <= tol {
        return Err(Error::Conditioning(format!(
            "Padé denominator vanishes at the origin (|b_0| = {:e})",
            b0.norm()
        )));
    }
    let bmax = b.iter().map(|x| x.norm()).fold(0.0, f64::max);
    while b.len() > 1 && b[b.len() - 1].norm() <= tol * bmax {
        b.pop();
    }
    let amax = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
    while a.len() > 1 && a[a.len() - 1].norm() <= tol * amax {
        a.pop();
    }
    let num: Vec<C64> = a
        .iter()
        .enumerate()
        .map(|(k, x)| x / b0 / gamma.powi(k as i32))
        .collect();
    let den: Vec<C64> = b
        .iter()
        .enumerate()
        .map(|(k, x)| x / b0 / gamma.powi(k as i32))
        .collect();
    Rational::new(num, den)
}

/// Distance from `z` to the segment `[0, s_max e^{i theta}]`.
fn distance_to_segment(z: C64, theta: f64, s_max: f64) -> f64 {
    let r = z * C64::from_polar(1.0, -theta);
    if r.re > s_max {
        (r - s_max).norm()
    } else {
        poly::distance_to_ray(z, theta)
    }
}

/// Near-diagonal Padé approximant `[floor(n/2) / ceil(n/2)]` of each
/// component of `phi`, sampled on the grid.
pub fn pade_continue(phi: &BorelSeries, grid: &RayGrid) -> Result<RayFunction> {
    if phi.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "Padé continuation needs at least 4 Borel coefficients, got {}",
            phi.len()
        )));
    }
    let total = phi.len() - 1;
    let (m, n) = (total / 2, total - total / 2);
    let mut components = Vec::with_capacity(phi.dim());
    for i in 0..phi.dim() {
        let coeffs: Vec<C64> = (0..phi.len()).map(|k| phi.coeff(k)[i]).collect();
        let r = pade(&coeffs, m, n, 1e-14)?;
        if !r.is_polynomial() {
            for root in poly::roots(&r.den)? {
                let d = distance_to_segment(root, grid.theta, grid.s_max());
                if d < PADE_POLE_RADIUS {
                    return Err(Error::Continuation(format!(
                        "Padé pole at {root} lies {d:e} from the ray; the series is not summable in this direction at this resolution"
                    )));
                }
            }
        }
        components.push((0..grid.len()).map(|j| r.eval(grid.node(j))).collect());
    }
    RayFunction::new(*grid, components)
}

/// `f_0 + L[continued Borel transform]` of a Gevrey series.
pub fn resum_series(
    f: &TruncatedSeries,
    sector: &SectorSpec,
    hbar: C64,
    grid: &RayGrid,
) -> Result<ResummationResult> {
    sector.check(hbar)?;
    let f0 = f.coeff(0).to_vec();
    if f.coeffs().iter().skip(1).all(|c| c.iter().all(|x| *x == ZERO)) {
        return Ok(ResummationResult {
            hbar,
            value: f0,
            tail_bound: 0.0,
            diagnostics: ResumDiagnostics {
                growth: GrowthBound::degenerate(),
                xi_max: grid.xi_max,
                h: grid.h,
                residual: None,
                picard: None,
            },
        });
    }
    let fit = gevrey_fit(f)?;
    if !fit.rate.is_finite() {
        return Err(Error::InvalidInput("series is not Gevrey-1 (infinite growth rate)".into()));
    }
    let sigma = pade_continue(&formal_borel(f), grid)?;
    let growth = growth_estimate(&sigma);
    let l = laplace(&sigma, hbar, &growth)?;
    Ok(ResummationResult {
        hbar,
        value: f0.iter().zip(&l.value).map(|(a, b)| a + b).collect(),
        tail_bound: l.tail_bound,
        diagnostics: ResumDiagnostics {
            growth,
            xi_max: grid.xi_max,
            h: grid.h,
            residual: None,
            picard: None,
        },
    })
}

/// Numerical knobs of the implicit-equation pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumParams {
    pub order: usize,
    /// `None` picks the ray length from the target `hbar` and tolerance.
    pub xi_max: Option<f64>,
    pub h: f64,
    pub tol: f64,
    pub n_max: usize,
}

impl Default for ResumParams {
    fn default() -> Self {
        Self {
            order: 8,
            xi_max: Some(40.0),
            h: 1e-3,
            tol: 1e-10,
            n_max: 50,
        }
    }
}

/// Smallest ray length with `D e^{-(reach - K) xi} < tol / 10`.
pub fn auto_xi_max(growth: &GrowthBound, reach: f64, tol: f64) -> Option<f64> {
    let gap = reach - growth.rate;
    if !(gap > 0.0) {
        return None;
    }
    if growth.degenerate || growth.prefactor == 0.0 {
        return Some(0.0);
    }
    Some(((10.0 * growth.prefactor / tol).ln() / gap).max(0.0))
}

/// Solution of the standard form on a ray, ready for Laplace transforms.
#[derive(Clone, Debug)]
pub struct BorelSolution {
    pub sigma: RayFunction,
    pub growth: GrowthBound,
    pub stats: PicardStats,
}

/// Solves the Borel-plane equation of `s`, choosing the ray length
/// automatically when `params.xi_max` is `None`.
pub fn solve_borel(
    s: &StandardFormProblem,
    theta: f64,
    hbars: &[C64],
    params: &ResumParams,
) -> Result<BorelSolution> {
    let solve = |xi_max: f64| -> Result<BorelSolution> {
        let grid = RayGrid::new(theta, xi_max, params.h)?;
        let (sigma, stats) = picard_solve_with_stats(s, &grid, params.tol, params.n_max)?;
        let growth = growth_estimate(&sigma);
        Ok(BorelSolution { sigma, growth, stats })
    };
    match params.xi_max {
        Some(x) => solve(x),
        None => {
            let pilot_len = (10.0f64).max(10.0 * params.h);
            let pilot = solve(pilot_len)?;
            let dir = C64::from_polar(1.0, theta);
            let needed = hbars
                .iter()
                .filter(|h| **h != ZERO)
                .filter_map(|h| auto_xi_max(&pilot.growth, (dir / h).re, params.tol))
                .fold(0.0, f64::max)
                .clamp(10.0 * params.h, MAX_AUTO_XI);
            if needed <= pilot_len {
                // a shorter ray would do; keep the pilot solution, which
                // already satisfies the tail criterion
                Ok(pilot)
            } else {
                solve(needed)
            }
        }
    }
}

/// Resums the solution `z = f_0 + hbar (f_1 + w)`, `w = L[sigma]`, at each
/// `hbar`. Failures that concern a single `hbar` are reported per entry.
pub fn resum_from_standard_form(
    s: &StandardFormProblem,
    base: (&[C64], &[C64]),
    sector: &SectorSpec,
    hbars: &[C64],
    params: &ResumParams,
    residual: &(dyn Fn(C64, &[C64]) -> Option<f64> + Sync),
) -> Result<Vec<Result<ResummationResult>>> {
    let inside: Vec<C64> = hbars.iter().copied().filter(|h| sector.contains(*h)).collect();
    let solution = solve_borel(s, sector.theta, &inside, params)?;
    let (f0, f1) = base;
    let grid = solution.sigma.grid;
    Ok(kernels::map(hbars, |&hbar| {
        sector.check(hbar)?;
        let l = laplace(&solution.sigma, hbar, &solution.growth)?;
        let value: Vec<C64> = (0..s.dim)
            .map(|i| f0[i] + hbar * (f1[i] + l.value[i]))
            .collect();
        Ok(ResummationResult {
            hbar,
            diagnostics: ResumDiagnostics {
                growth: solution.growth,
                xi_max: grid.xi_max,
                h: grid.h,
                residual: residual(hbar, &value),
                picard: Some(solution.stats),
            },
            value,
            tail_bound: l.tail_bound,
        })
    }))
}

/// Borel resummation of the solution of `F(hbar, z) = 0` through the
/// standard form and its Borel-plane integral equation.
pub fn resum_implicit_solution(
    p: &ProblemSpec,
    seed: &[C64],
    sector: &SectorSpec,
    hbars: &[C64],
    params: &ResumParams,
) -> Result<Vec<Result<ResummationResult>>> {
    let sol = formal_ift(p, seed, params.order.max(1))?;
    let s = to_standard_form(p, &sol)?;
    let f0 = sol.series.coeff(0).to_vec();
    let f1 = sol.series.coeff(1).to_vec();
    resum_from_standard_form(&s, (&f0, &f1), sector, hbars, params, &|hbar, z| {
        oracle::implicit_residual(p, hbar, z).ok()
    })
}

/// `L[xi^n / n!](hbar)` through the engine on the given grid.
pub fn laplace_monomial(n: usize, hbar: C64, grid: &RayGrid) -> Result<C64> {
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    let f = RayFunction::from_fn(*grid, |xi| xi.powu(n as u32) / fact);
    let g = growth_estimate(&f);
    Ok(laplace(&f, hbar, &g)?.value[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    const EULER_AT_TENTH: f64 = 0.091_563_333_939_788_08;

    fn flat() -> GrowthBound {
        GrowthBound {
            prefactor: 1.0,
            rate: 0.0,
            fit_residual: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn laplace_examples() {
        let grid = RayGrid::new(0.0, 5.0, 1e-3).unwrap();
        let one = RayFunction::from_fn(grid, |_| c(1.0));
        let v = laplace(&one, c(0.1), &flat()).unwrap();
        assert!((v.value[0] - c(0.1)).norm() < 1e-8);
        let xi = RayFunction::from_fn(grid, |x| x);
        let v = laplace(&xi, c(0.1), &growth_estimate(&xi)).unwrap();
        assert!((v.value[0] - c(0.01)).norm() < 1e-8);
        let euler = RayFunction::from_fn(grid, |x| 1.0 / (1.0 + x));
        let v = laplace(&euler, c(0.1), &flat()).unwrap();
        assert!((v.value[0] - c(EULER_AT_TENTH)).norm() < 1e-8);
    }

    #[test]
    fn domain_boundary() {
        let grid = RayGrid::new(0.0, 5.0, 1e-2).unwrap();
        let one = RayFunction::from_fn(grid, |_| c(1.0));
        let g = GrowthBound {
            rate: 10.0,
            ..flat()
        };
        assert!(matches!(laplace(&one, c(0.1), &g), Err(Error::Domain { .. })));
        assert!(laplace(&one, c(0.099), &g).is_ok());
    }

    #[test]
    fn sector_membership() {
        let s = SectorSpec::new(0.0, 0.5).unwrap();
        assert!(s.contains(c(0.4)));
        assert!(!s.contains(c(0.5)));
        assert!(!s.contains(c(-0.1)));
        assert!(matches!(s.check(c(1.0)), Err(Error::Domain { .. })));
        assert!(SectorSpec::new(0.0, 0.0).is_err());
    }

    #[test]
    fn pade_examples() {
        let grid = RayGrid::new(0.0, 5.0, 1e-2).unwrap();
        let alternating = BorelSeries::scalar(c(0.0), (0..10).map(|k| c(if k % 2 == 0 { 1.0 } else { -1.0 })).collect());
        let f = pade_continue(&alternating, &grid).unwrap();
        for j in 0..grid.len() {
            let exact = 1.0 / (1.0 + grid.s(j));
            assert!((f.values()[j] - c(exact)).norm() < 1e-12);
        }
        let unit = BorelSeries::scalar(c(0.0), vec![c(1.0), c(0.0), c(0.0), c(0.0), c(0.0)]);
        let f = pade_continue(&unit, &grid).unwrap();
        assert!(f.values().iter().all(|v| (v - c(1.0)).norm() < 1e-14));
        let short = BorelSeries::scalar(c(0.0), vec![c(1.0); 3]);
        assert!(pade_continue(&short, &grid).is_err());
        // geometric series in xi has its pole at xi = 1
        let geometric = BorelSeries::scalar(c(0.0), vec![c(1.0); 8]);
        assert!(matches!(pade_continue(&geometric, &grid), Err(Error::Continuation(_))));
        let mut fact = 1.0;
        let exp_coeffs: Vec<C64> = (0..18)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                c(1.0 / fact)
            })
            .collect();
        let f = pade_continue(&BorelSeries::scalar(c(0.0), exp_coeffs), &grid).unwrap();
        let worst = (0..grid.len())
            .map(|j| (f.values()[j] - c(grid.s(j).exp())).norm() / grid.s(j).exp())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst:e}");
    }

    #[test]
    fn constant_series_resums_exactly() {
        let grid = RayGrid::new(0.0, 5.0, 1e-2).unwrap();
        let sector = SectorSpec::new(0.0, 1.0).unwrap();
        let f = TruncatedSeries::from_real(&[2.5, 0.0, 0.0]);
        let r = resum_series(&f, &sector, c(0.3), &grid).unwrap();
        assert_eq!(r.value, vec![c(2.5)]);
        assert_eq!(r.tail_bound, 0.0);
    }

    #[test]
    fn product_weights_reduce_to_simpson() {
        let w = quadratic_weights(c(0.0), false);
        assert!((w[0] - c(1.0 / 3.0)).norm() < 1e-15);
        assert!((w[1] - c(4.0 / 3.0)).norm() < 1e-15);
        assert!((w[2] - c(1.0 / 3.0)).norm() < 1e-15);
        // continuity of the two moment evaluations across |z| = 1
        let a = moments(C64::new(0.999_999, 0.0), 1.0);
        let b = moments(C64::new(1.000_001, 0.0), 1.0);
        for k in 0..3 {
            assert!((a[k] - b[k]).norm() < 1e-6);
        }
    }

    #[test]
    fn auto_truncation() {
        let g = GrowthBound {
            prefactor: 1.0,
            rate: 0.0,
            fit_residual: 0.0,
            degenerate: false,
        };
        let x = auto_xi_max(&g, 10.0, 1e-10).unwrap();
        assert!((g.prefactor * (-10.0 * x).exp() - 1e-11).abs() < 1e-20);
        assert!(auto_xi_max(&g, 0.0, 1e-10).is_none());
    }
}
