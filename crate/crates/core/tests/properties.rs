#![allow(clippy::needless_range_loop)]

use perron_chain::convergence::classify_recurrence;
use perron_chain::io::{read_matrix_market, write_matrix_market, Ingested};
use perron_chain::matrix::{build_kernel, build_qmatrix, scale_columns, taboo_powers};
use perron_chain::mc::{estimate_left, McConfig};
use perron_chain::metzler::{admissible_shift, spectral_bound, spectral_bound_with_shift};
use perron_chain::oracle::spectral_abscissa;
use perron_chain::series::{eigen_pair, Horizon};
use perron_chain::{convergence_parameter_finite, MatrixSource, MetzlerSource, StateId};
use proptest::prelude::*;

/// Square non-negative matrix with a cycle through all states, so it is
/// irreducible; about half of the other entries are zero.
fn irreducible(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.05f64..3.0], n), n).prop_map(
            move |mut rows| {
                for (i, row) in rows.iter_mut().enumerate() {
                    if row[(i + 1) % n] == 0.0 {
                        row[(i + 1) % n] = 0.5;
                    }
                }
                rows
            },
        )
    })
}

fn metzler(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (irreducible(max_n), prop::collection::vec(-4.0f64..1.0, max_n)).prop_map(|(mut rows, diag)| {
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = diag[i];
        }
        rows
    })
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn taboo_first_entrance_decomposition(rows in irreducible(6)) {
        const N: usize = 12;
        let n = rows.len();
        let src = MatrixSource::from_dense(&rows).unwrap();
        let mut powers = vec![(0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect::<Vec<f64>>()).collect::<Vec<_>>()];
        for p in 1..=N {
            powers.push(matmul(&powers[p - 1], &rows));
        }
        for i in 0..n {
            for j in 0..n {
                let t = taboo_powers(&src, StateId::from(j), StateId::from(i), N).unwrap();
                for step in 1..=N {
                    let sum: f64 = (1..=step).map(|m| t.get(m, StateId::from(j)) * powers[step - m][j][j]).sum();
                    prop_assert!(rel(powers[step][i][j], sum) <= 1e-10, "n={step} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn taboo_tables_are_non_negative(rows in irreducible(8), taboo in 0usize..8, origin in 0usize..8) {
        let n = rows.len();
        let src = MatrixSource::from_dense(&rows).unwrap();
        let t = taboo_powers(&src, StateId::from(taboo % n), StateId::from(origin % n), 40).unwrap();
        prop_assert!(t.values.iter().flatten().all(|&(_, v)| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn kernel_rows_are_stochastic(rows in irreducible(12)) {
        let src = MatrixSource::from_dense(&rows).unwrap();
        let kernel = build_kernel(&src).unwrap();
        for i in 0..rows.len() {
            let row = kernel.row(StateId::from(i)).unwrap();
            let s: f64 = row.probabilities.iter().map(|&(_, p)| p).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn column_scaling_matches_direct_matrix(rows in irreducible(6), alpha in prop::collection::vec(0.1f64..10.0, 6)) {
        let n = rows.len();
        let src = MatrixSource::from_dense(&rows).unwrap();
        let a = alpha.clone();
        let scaled = scale_columns(&src, move |j| a[j.0 as usize]).unwrap();
        let direct: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().enumerate().map(|(j, &v)| v * alpha[j]).collect()).collect();
        let direct = MatrixSource::from_dense(&direct).unwrap();
        for k in 0..n {
            let k = StateId::from(k);
            let t1 = taboo_powers(&scaled, k, k, 20).unwrap();
            let t2 = taboo_powers(&direct, k, k, 20).unwrap();
            for step in 1..=20 {
                for j in 0..n {
                    let j = StateId::from(j);
                    prop_assert!(rel(t1.get(step, j), t2.get(step, j)) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn q_matrices_are_conservative(rows in metzler(10)) {
        let g = MetzlerSource::from_dense(&rows).unwrap();
        let q = build_qmatrix(&g).to_dense().unwrap();
        for row in &q {
            let scale: f64 = row.iter().map(|v| v.abs()).sum();
            prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn matrix_market_round_trip(rows in irreducible(10)) {
        let src = MatrixSource::from_dense(&rows).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &src).unwrap();
        match read_matrix_market(&buf[..]).unwrap() {
            Ingested::NonNegative(back) => prop_assert_eq!(back.to_dense().unwrap(), rows),
            Ingested::Metzler(_) => prop_assert!(false, "non-negative input read back as Metzler"),
        }
    }

    #[test]
    fn r_matches_oracle_and_partial_sums_are_monotone(rows in irreducible(12)) {
        let src = MatrixSource::from_dense(&rows).unwrap();
        let rep = convergence_parameter_finite(&src, 1e-13).unwrap();
        let rho = spectral_abscissa(&rows).unwrap();
        prop_assert!((rep.r * rho - 1.0).abs() <= 1e-10);
        let mut last = 0.0;
        for n in [1, 2, 4, 8, 16, 64, 256] {
            let c = classify_recurrence(&src, rep.r, StateId(0), n, 1e-9).unwrap();
            prop_assert!(c.partial_sum >= last);
            prop_assert!(c.partial_sum <= 1.0 + 1e-9);
            last = c.partial_sum;
        }
    }

    #[test]
    fn scaled_matrix_pipeline_is_coherent(rows in irreducible(8), alpha in prop::collection::vec(0.2f64..5.0, 8)) {
        let src = MatrixSource::from_dense(&rows).unwrap();
        let a = alpha.clone();
        let scaled = scale_columns(&src, move |j| a[j.0 as usize]).unwrap();
        let direct: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().enumerate().map(|(j, &v)| v * alpha[j]).collect()).collect();
        let rep = convergence_parameter_finite(&scaled, 1e-13).unwrap();
        prop_assert!((rep.r * spectral_abscissa(&direct).unwrap() - 1.0).abs() <= 1e-10);
        let pair = eigen_pair(&scaled, rep.r, StateId(0), None, Horizon::adaptive(1e-10)).unwrap();
        prop_assert!(pair.residual_left.unwrap() <= 1e-6);
        prop_assert!(pair.residual_right.unwrap() <= 1e-6);
        prop_assert!(pair.u.values().chain(pair.y.values()).all(|&v| v > 0.0));
    }

    #[test]
    fn spectral_bound_is_shift_invariant(rows in metzler(10), extra in 0.0f64..20.0) {
        let g = MetzlerSource::from_dense(&rows).unwrap();
        let states = g.states().unwrap();
        let a = spectral_bound(&g, 1e-13).unwrap();
        let b = spectral_bound_with_shift(&g, admissible_shift(&g, &states).unwrap() + extra, 1e-13).unwrap();
        prop_assert!((a.lambda - b.lambda).abs() <= 1e-8);
        prop_assert!((a.lambda - spectral_abscissa(&rows).unwrap()).abs() <= 1e-8);
        prop_assert!(rows.iter().enumerate().all(|(i, r)| a.lambda > r[i]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mc_estimate_at_k_is_exactly_one(rows in irreducible(8), seed in any::<u64>()) {
        let src = MatrixSource::from_dense(&rows).unwrap();
        let r = convergence_parameter_finite(&src, 1e-13).unwrap().r;
        let kernel = build_kernel(&src).unwrap();
        let mut cfg = McConfig::new(StateId(0), 3200);
        cfg.seed = seed;
        let est = estimate_left(&kernel, r, &cfg).unwrap();
        prop_assert_eq!(est.get(StateId(0)).unwrap().estimate, 1.0);
        prop_assert_eq!(est.get(StateId(0)).unwrap().se, 0.0);
    }
}
