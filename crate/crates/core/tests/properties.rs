//! Property tests for the algebraic invariants of the geometry and kernel.

use nalgebra::DMatrix;
use proptest::prelude::*;

use kolmodiff::geometry::{
    chain_drift_3d, dilation, kalman_rank, multi_index_height, quasi_norm, BlockStructure,
    DriftMatrix, MultiIndex,
};
use kolmodiff::kernel::{covariance, mat_exp, GaussianKernelParams};

fn structure_strategy() -> impl Strategy<Value = BlockStructure> {
    prop_oneof![
        Just(BlockStructure::new(&[1, 1]).unwrap()),
        Just(BlockStructure::new(&[1, 1, 1]).unwrap()),
        Just(BlockStructure::new(&[2, 1]).unwrap()),
        Just(BlockStructure::new(&[2, 2, 1]).unwrap()),
    ]
}

proptest! {
    #[test]
    fn quasi_norm_is_exactly_homogeneous(
        s in structure_strategy(),
        seed in any::<u64>(),
        lambda in 1e-2_f64..1e2,
    ) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 8.0 - 4.0
        };
        let x: Vec<f64> = (0..s.d).map(|_| next()).collect();
        let scaled = dilation(lambda, &x, &s).unwrap();
        let lhs = quasi_norm(&scaled, &s);
        let rhs = lambda * quasi_norm(&x, &s);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
    }

    #[test]
    fn quasi_norm_triangle_inequality(
        s in structure_strategy(),
        raw in proptest::collection::vec(-5.0_f64..5.0, 10),
    ) {
        let x: Vec<f64> = raw.iter().take(s.d).cloned().collect();
        let y: Vec<f64> = raw.iter().skip(5).take(s.d).cloned().collect();
        prop_assume!(x.len() == s.d && y.len() == s.d);
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(
            quasi_norm(&sum, &s) <= quasi_norm(&x, &s) + quasi_norm(&y, &s) + 1e-12
        );
    }

    #[test]
    fn height_is_additive(
        s in structure_strategy(),
        raw in proptest::collection::vec(0u32..6, 10),
    ) {
        let beta = MultiIndex(raw.iter().take(s.d).cloned().collect());
        let gamma = MultiIndex(raw.iter().skip(5).take(s.d).cloned().collect());
        prop_assume!(beta.0.len() == s.d && gamma.0.len() == s.d);
        let sum = MultiIndex(
            beta.0.iter().zip(&gamma.0).map(|(a, b)| a + b).collect(),
        );
        prop_assert_eq!(
            multi_index_height(&sum, &s).unwrap(),
            multi_index_height(&beta, &s).unwrap() + multi_index_height(&gamma, &s).unwrap()
        );
    }

    #[test]
    fn kalman_rank_scale_invariant(c in prop_oneof![-1e3_f64..-1e-3, 1e-3_f64..1e3]) {
        let b = chain_drift_3d();
        let scaled = DriftMatrix::new(b.matrix.clone() * c, 1);
        prop_assert_eq!(kalman_rank(&scaled, 1), kalman_rank(&b, 1));
    }

    #[test]
    fn flow_group_property(t1 in -2.0_f64..2.0, t2 in -2.0_f64..2.0, a in -1.0_f64..1.0) {
        // Block-triangular with a free diagonal entry in the star block.
        let b = DMatrix::from_row_slice(2, 2, &[a, 0.0, 1.0, a / 2.0]);
        let lhs = mat_exp(&b, t1 + t2);
        let rhs = mat_exp(&b, t1) * mat_exp(&b, t2);
        let scale = lhs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        prop_assert!((lhs - rhs).iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn covariance_composition_law(u in 1e-3_f64..0.5, v in 1e-3_f64..0.5) {
        let params = GaussianKernelParams::new(
            chain_drift_3d(),
            1.0,
            BlockStructure::new(&[1, 1, 1]).unwrap(),
        )
        .unwrap();
        let cu = covariance(u, &params).unwrap().matrix;
        let cv = covariance(v, &params).unwrap().matrix;
        let cuv = covariance(u + v, &params).unwrap().matrix;
        let flow = mat_exp(&params.drift.matrix, v);
        let composed = &flow * cu * flow.transpose() + cv;
        let scale = cuv.iter().fold(1e-300_f64, |m, w| m.max(w.abs()));
        prop_assert!((composed - cuv).iter().all(|w| w.abs() <= 1e-10 * scale));
    }

    #[test]
    fn admissible_set_is_finite_and_consistent(
        s in structure_strategy(),
        n in 0u32..7,
    ) {
        let pairs = kolmodiff::geometry::admissible_pairs(n, &s);
        // Every pair satisfies the constraint, no duplicates, and the count
        // matches a brute-force scan of the bounding box.
        let mut seen = std::collections::BTreeSet::new();
        for (k, beta) in &pairs {
            prop_assert!(2 * k + multi_index_height(beta, &s).unwrap() <= n);
            prop_assert!(seen.insert((*k, beta.clone())));
        }
        let mut count = 0usize;
        let bound = n + 1;
        let mut beta = vec![0u32; s.d];
        'scan: loop {
            let height: u32 = beta
                .iter()
                .enumerate()
                .map(|(i, &b)| s.exponent_of(i) * b)
                .sum();
            for k in 0..=(n / 2) {
                if 2 * k + height <= n {
                    count += 1;
                }
            }
            let mut i = 0;
            loop {
                beta[i] += 1;
                if beta[i] < bound {
                    break;
                }
                beta[i] = 0;
                i += 1;
                if i == s.d {
                    break 'scan;
                }
            }
        }
        prop_assert_eq!(pairs.len(), count);
    }
}
