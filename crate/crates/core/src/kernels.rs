//! Data-parallel inner loops.
//!
//! Every reduction is split into fixed-size chunks whose partial sums are
//! combined left to right, so the sequential and the rayon-backed kernels
//! return bit-identical results independent of the thread count.

use num_complex::Complex64 as C64;

/// Reduction chunk length.
pub const CHUNK: usize = 1024;

/// Below this many terms a reduction is not worth splitting across threads.
pub const PAR_MIN_TERMS: usize = 16 * CHUNK;

#[inline]
fn chunk_rev_dot(a: &[C64], b: &[C64], j: usize, start: usize, end: usize) -> C64 {
    // sum_{l=start}^{end-1} a[j-l] * b[l]
    let (mut re, mut im) = (0.0, 0.0);
    let a_rev = &a[j + 1 - end..=j - start];
    for (x, y) in a_rev.iter().rev().zip(&b[start..end]) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    C64::new(re, im)
}

/// Gregory end corrections to the trapezoid weights, nodes `0, 1, 2` from
/// each end. With them the composite rule integrates cubics exactly.
pub const GREGORY: [f64; 3] = [-1.0 / 8.0, 1.0 / 6.0, -1.0 / 24.0];

/// Weights of the end-corrected trapezoid rule on `n` intervals: `end` at
/// nodes `0` and `n`, `1 + corr` at the listed interior nodes, `1` elsewhere.
///
/// For `n = 2` and `n = 3` this is Simpson's and the three-eighths rule;
/// a single interval falls back to the trapezoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndRule {
    pub end: f64,
    corr: [(usize, f64); 4],
    count: usize,
}

impl EndRule {
    pub fn new(n: usize) -> Self {
        let mut rule = Self {
            end: 0.5,
            corr: [(0, 0.0); 4],
            count: 0,
        };
        if n == 0 {
            rule.end = 0.0;
            return rule;
        }
        if n == 1 {
            return rule;
        }
        rule.end += GREGORY[0];
        for (l, w) in [(1, GREGORY[1]), (2, GREGORY[2]), (n - 1, GREGORY[1]), (n - 2, GREGORY[2])] {
            // for n = 2 the outer corrections land on the end nodes
            if l == n {
                rule.end += w;
            } else if l == 0 {
                continue;
            } else if let Some(slot) = rule.corr[..rule.count].iter_mut().find(|(k, _)| *k == l) {
                slot.1 += w;
            } else {
                rule.corr[rule.count] = (l, w);
                rule.count += 1;
            }
        }
        rule
    }

    /// Interior nodes whose weight differs from one, with the difference.
    pub fn corrections(&self) -> &[(usize, f64)] {
        &self.corr[..self.count]
    }

    /// Full weight of node `l`.
    pub fn weight(&self, n: usize, l: usize) -> f64 {
        if l == 0 || l == n {
            return self.end;
        }
        1.0 + self
            .corrections()
            .iter()
            .filter(|(k, _)| *k == l)
            .map(|(_, w)| w)
            .sum::<f64>()
    }
}

/// `sum_l corr_l a[j-l] b[l]` over the corrected interior nodes.
#[inline]
pub fn corrected_terms(rule: &EndRule, a: &[C64], b: &[C64], j: usize) -> C64 {
    rule.corrections()
        .iter()
        .fold(C64::new(0.0, 0.0), |acc, &(l, w)| acc + w * a[j - l] * b[l])
}

#[inline]
fn convolution_node(f: &[C64], g: &[C64], weight: C64, j: usize, dot: C64) -> C64 {
    if j == 0 {
        return C64::new(0.0, 0.0);
    }
    let rule = EndRule::new(j);
    weight * (rule.end * (f[j] * g[0] + f[0] * g[j]) + dot + corrected_terms(&rule, f, g, j))
}

/// Single-threaded kernels. Always compiled; used directly by the benches
/// and as the fallback when the `parallel` feature is off.
pub mod seq {
    use super::*;

    /// `sum_{l=lo}^{hi-1} a[j-l] * b[l]`.
    pub fn rev_dot(a: &[C64], b: &[C64], j: usize, lo: usize, hi: usize) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        let mut start = lo;
        while start < hi {
            let end = (start + CHUNK).min(hi);
            total += chunk_rev_dot(a, b, j, start, end);
            start = end;
        }
        total
    }

    /// End-corrected trapezoidal convolution on a uniform grid with step `weight`.
    pub fn convolve(f: &[C64], g: &[C64], weight: C64) -> Vec<C64> {
        (0..f.len())
            .map(|j| {
                let dot = if j >= 2 { rev_dot(f, g, j, 1, j) } else { C64::new(0.0, 0.0) };
                convolution_node(f, g, weight, j, dot)
            })
            .collect()
    }

    pub fn map<T: Sync, U: Send, F: Fn(&T) -> U + Sync>(items: &[T], f: F) -> Vec<U> {
        items.iter().map(f).collect()
    }
}

/// Rayon-backed kernels with the same reduction order as [`seq`].
#[cfg(feature = "parallel")]
pub mod par {
    use super::*;
    use rayon::prelude::*;

    pub fn rev_dot(a: &[C64], b: &[C64], j: usize, lo: usize, hi: usize) -> C64 {
        if hi <= lo || hi - lo < PAR_MIN_TERMS {
            return super::seq::rev_dot(a, b, j, lo, hi);
        }
        let starts: Vec<usize> = (lo..hi).step_by(CHUNK).collect();
        let partials: Vec<C64> = starts
            .par_iter()
            .map(|&s| chunk_rev_dot(a, b, j, s, (s + CHUNK).min(hi)))
            .collect();
        partials
            .into_iter()
            .fold(C64::new(0.0, 0.0), |acc, p| acc + p)
    }

    pub fn convolve(f: &[C64], g: &[C64], weight: C64) -> Vec<C64> {
        (0..f.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                let dot = if j >= 2 {
                    super::seq::rev_dot(f, g, j, 1, j)
                } else {
                    C64::new(0.0, 0.0)
                };
                convolution_node(f, g, weight, j, dot)
            })
            .collect()
    }

    pub fn map<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
        items.par_iter().map(f).collect()
    }
}

#[cfg(feature = "parallel")]
pub use par::{convolve, map, rev_dot};
#[cfg(not(feature = "parallel"))]
pub use seq::{convolve, map, rev_dot};
