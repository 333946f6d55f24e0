use exactpert_core::linalg::{self, CMat};
use exactpert_core::matrix::{
    recursive_block_diagonalize, similarity_residual, MatrixFamily, DEFAULT_GAP_TOL,
};
use exactpert_core::oracle::eig_direct;
use exactpert_core::C64;
use proptest::prelude::*;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn entries(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5..0.5f64, n * n)
}

/// `diag(0, 1, .., n-1) + hbar U + hbar^2 V` with random `U`, `V`.
fn family() -> impl Strategy<Value = MatrixFamily> {
    (2usize..=3).prop_flat_map(|n| (entries(n), entries(n))).prop_map(|(u, v)| {
        let n = (u.len() as f64).sqrt() as usize;
        let a0 = CMat::from_fn(n, n, |r, col| if r == col { c(r as f64) } else { c(0.0) });
        let a1 = CMat::from_fn(n, n, |r, col| c(u[r * n + col]));
        let a2 = CMat::from_fn(n, n, |r, col| c(v[r * n + col]));
        MatrixFamily::new(vec![a0, a1, a2]).unwrap()
    })
}

fn trace(m: &CMat) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn block_diagonal_with_matching_trace(a in family()) {
        let k = 5;
        let dec = recursive_block_diagonalize(&a, k, DEFAULT_GAP_TOL).unwrap();
        prop_assert!(dec.off_block_zero());
        prop_assert_eq!(dec.blocks.iter().sum::<usize>(), a.n);
        for j in 0..=k {
            let lhs = trace(&dec.lambda[j]);
            let rhs = if j < a.orders.len() { trace(&a.orders[j]) } else { c(0.0) };
            prop_assert!((lhs - rhs).norm() < 1e-10, "order {}", j);
        }
    }

    #[test]
    fn similarity_residual_decays_with_the_truncation_order(a in family()) {
        let k = 3;
        let dec = recursive_block_diagonalize(&a, k, DEFAULT_GAP_TOL).unwrap();
        let (h1, h2) = (0.02, 0.002);
        let (r1, r2) = (
            similarity_residual(&dec, &a, c(h1)).unwrap(),
            similarity_residual(&dec, &a, c(h2)).unwrap(),
        );
        let slope = (r1.ln() - r2.ln()) / (h1.ln() - h2.ln());
        prop_assert!(slope >= k as f64 + 0.5, "slope {} from {:e}, {:e}", slope, r1, r2);
    }

    #[test]
    fn sylvester_solution_has_small_residual(a in entries(2), b in entries(3), m in entries(6)) {
        let a = CMat::from_fn(2, 2, |r, col| c(a[r * 2 + col] + if r == col { 3.0 } else { 0.0 }));
        let b = CMat::from_fn(3, 3, |r, col| c(b[r * 3 + col]));
        let rhs = CMat::from_fn(2, 3, |r, col| c(m[r * 3 + col]));
        let x = linalg::sylvester(&a, &b, &rhs).unwrap();
        prop_assert!(linalg::max_abs(&(&a * &x - &x * &b - &rhs)) < 1e-12);
    }

    #[test]
    fn eigenvalues_approach_the_leading_diagonal(a in family()) {
        let hs = [1e-6, 1e-5, 1e-4];
        let dev: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let (vals, _) = eig_direct(&a, c(h)).unwrap();
                vals.iter()
                    .map(|v| (0..a.n).map(|i| (v - c(i as f64)).norm()).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max)
            })
            .collect();
        prop_assume!(dev[0] > 1e-12);
        let slope = (dev[2].ln() - dev[0].ln()) / (hs[2].ln() - hs[0].ln());
        // the hbar^2 term may bend the fitted line by O(hbar)
        prop_assert!(slope >= 1.0 - 1e-3, "slope {}", slope);
    }
}
