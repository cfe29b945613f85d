use super::*;
use crate::grid::make_grid;
use crate::linalg::{dot, max_abs, max_abs_diff};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORDERS: [SbpOrder; 2] = [SbpOrder::Order2, SbpOrder::Order4];

fn unit_kappa(grid: &Arc<Grid1D>) -> GridFunction {
    GridFunction::constant(grid, 1.0).unwrap()
}

fn set(n: usize, order: SbpOrder, construction: SecondDerivConstruction) -> SbpOperatorSet {
    let g = make_grid(1.0, n).unwrap();
    SbpOperatorSet::new(&g, order, &unit_kappa(&g), construction).unwrap()
}

#[test]
fn first_derivative_exactness() {
    for order in ORDERS {
        for n in [8, 17, 33, 65, 129] {
            if n < order.min_nodes() {
                continue;
            }
            let g = make_grid(1.0, n).unwrap();
            let d = build_first_derivative(&g, order).unwrap();
            let ones = vec![1.0; n];
            assert!(max_abs(&d.apply(&ones)) <= 1e-12, "{order} n={n}");
            let dx = d.apply(g.nodes());
            assert!(max_abs_diff(&dx, &ones) <= 1e-10, "{order} n={n}");
        }
    }
}

#[test]
fn q_plus_qt_is_b() {
    for order in ORDERS {
        let s = set(33, order, SecondDerivConstruction::WideFullyCompatible);
        let q = s.first.q().to_dense();
        let sum = &q + q.transpose();
        for i in 0..33 {
            for j in 0..33 {
                let b = if i == j && i == 0 {
                    -1.0
                } else if i == j && i == 32 {
                    1.0
                } else {
                    0.0
                };
                assert!((sum[(i, j)] - b).abs() <= 1e-13);
            }
        }
    }
}

#[test]
fn order2_norm_weights() {
    let g = make_grid(1.0, 11).unwrap();
    let d = build_first_derivative(&g, SbpOrder::Order2).unwrap();
    let dx = g.dx();
    assert_eq!(d.h()[0], 0.5 * dx);
    assert_eq!(d.h()[10], 0.5 * dx);
    assert!(d.h()[1..10].iter().all(|&h| h == dx));
}

#[test]
fn quadrature_integrates_constants() {
    for order in ORDERS {
        for n in [8, 9, 50, 333] {
            let g = make_grid(2.5, n).unwrap();
            let d = build_first_derivative(&g, order).unwrap();
            let total: f64 = d.h().iter().sum();
            assert!((total - 2.5).abs() <= 1e-12 * 2.5);
        }
    }
}

#[test]
fn rejects_small_grids() {
    let g = make_grid(1.0, 4).unwrap();
    let err = build_first_derivative(&g, SbpOrder::Order4).unwrap_err();
    assert!(matches!(err, Error::GridTooSmall { min: 8, n: 4, .. }));
    assert!(err.to_string().contains("n >= 8"));
    let g = make_grid(1.0, 2).unwrap();
    assert!(build_first_derivative(&g, SbpOrder::Order2).is_ok());
}

#[test]
fn second_derivative_null_space() {
    for order in ORDERS {
        for construction in [
            SecondDerivConstruction::WideFullyCompatible,
            SecondDerivConstruction::NarrowCompatible,
        ] {
            let s = set(33, order, construction);
            let n = 33;
            assert!(max_abs(&s.second.apply(&vec![1.0; n])) <= 1e-12);
            let g = s.grid().clone();
            assert!(
                max_abs(&s.second.apply(g.nodes())) <= 1e-10,
                "{order} {construction}"
            );
        }
    }
}

#[test]
fn order2_quadratic_interior_is_exact() {
    for construction in [
        SecondDerivConstruction::WideFullyCompatible,
        SecondDerivConstruction::NarrowCompatible,
    ] {
        let s = set(21, SbpOrder::Order2, construction);
        let u: Vec<f64> = s.grid().nodes().iter().map(|x| x * x).collect();
        let y = s.second.apply(&u);
        // wide interior rows use D∘D which needs one row of clearance
        for yi in &y[2..19] {
            assert!((yi - 2.0).abs() <= 1e-10, "{construction}: {yi}");
        }
    }
}

#[test]
fn wide_construction_has_zero_remainder() {
    for order in ORDERS {
        let s = set(40, order, SecondDerivConstruction::WideFullyCompatible);
        let m = s.second.m().to_dense();
        let d = s.first.d().to_dense();
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(s.h()));
        let diff = &m - d.transpose() * h * &d;
        assert!(max_abs_entry(&diff) <= 1e-12);
        assert_eq!(max_abs_entry(&s.second.r().to_dense()), 0.0);
    }
}

#[test]
fn variable_kappa_wide_certifies() {
    for order in ORDERS {
        let g = make_grid(1.0, 41).unwrap();
        let kappa = GridFunction::from_fn(&g, |x| 1.0 + 0.5 * (3.0 * x).sin()).unwrap();
        let first = build_first_derivative(&g, order).unwrap();
        let second =
            build_second_derivative(&first, &kappa, SecondDerivConstruction::WideFullyCompatible)
                .unwrap();
        let report = verify_operator_set(&first, &second).unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn narrow_order2_variable_kappa_is_compatible() {
    let g = make_grid(1.0, 41).unwrap();
    let kappa = GridFunction::from_fn(&g, |x| 0.2 + x * x).unwrap();
    let first = build_first_derivative(&g, SbpOrder::Order2).unwrap();
    let second =
        build_second_derivative(&first, &kappa, SecondDerivConstruction::NarrowCompatible).unwrap();
    let report = verify_operator_set(&first, &second).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn narrow_order4_requires_constant_kappa() {
    let g = make_grid(1.0, 41).unwrap();
    let kappa = GridFunction::from_fn(&g, |x| 1.0 + x).unwrap();
    let first = build_first_derivative(&g, SbpOrder::Order4).unwrap();
    let err = build_second_derivative(&first, &kappa, SecondDerivConstruction::NarrowCompatible)
        .unwrap_err();
    assert!(matches!(err, Error::UnsupportedConstruction(_)));
}

#[test]
fn negative_kappa_rejected() {
    let g = make_grid(1.0, 20).unwrap();
    let mut k = vec![1.0; 20];
    k[7] = -1e-3;
    let kappa = GridFunction::new(&g, k).unwrap();
    let first = build_first_derivative(&g, SbpOrder::Order2).unwrap();
    let err =
        build_second_derivative(&first, &kappa, SecondDerivConstruction::default()).unwrap_err();
    assert!(matches!(err, Error::NegativeKappa { node: 7, .. }));
}

#[test]
fn mismatched_grids_rejected() {
    let a = set(20, SbpOrder::Order2, SecondDerivConstruction::default());
    let b = set(21, SbpOrder::Order2, SecondDerivConstruction::default());
    assert!(matches!(
        verify_operator_set(&a.first, &b.second),
        Err(Error::GridMismatch)
    ));
}

#[test]
fn valid_pairs_pass_verification() {
    for order in ORDERS {
        for construction in [
            SecondDerivConstruction::WideFullyCompatible,
            SecondDerivConstruction::NarrowCompatible,
        ] {
            for n in [17, 33, 65] {
                let s = set(n, order, construction);
                let report = verify_operator_set(&s.first, &s.second).unwrap();
                assert!(report.passed(), "{report}");
            }
        }
    }
}

#[test]
fn perturbed_q_is_detected() {
    let g = make_grid(1.0, 33).unwrap();
    let op = build_first_derivative(&g, SbpOrder::Order2).unwrap();
    let mut q = op.q().to_dense();
    q[(5, 6)] += 1e-6;
    let bad = FirstDerivOperator::from_parts(&g, SbpOrder::Order2, op.h().to_vec(), &q).unwrap();
    let report = verify_first_derivative(&bad, Scaling::Absolute);
    let check = report.get("Q+Qt=B").unwrap();
    assert!(!check.passed);
    assert!((check.residual - 1e-6).abs() < 1e-12, "{}", check.residual);
    assert!(!report.passed());
}

#[test]
fn order4_m_is_semidefinite() {
    let s = set(
        65,
        SbpOrder::Order4,
        SecondDerivConstruction::WideFullyCompatible,
    );
    let (min_eig, norm) = min_eig_and_norm(&s.second.m().to_dense());
    assert!(min_eig >= -1e-10 * norm, "min eig {min_eig}, norm {norm}");
    // the constant vector spans the null space
    assert!(min_eig.abs() <= 1e-10 * norm);
}

#[test]
fn m_quadratic_form_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for order in ORDERS {
        for construction in [
            SecondDerivConstruction::WideFullyCompatible,
            SecondDerivConstruction::NarrowCompatible,
        ] {
            let s = set(49, order, construction);
            let (_, norm) = min_eig_and_norm(&s.second.m().to_dense());
            for _ in 0..100 {
                let u: Vec<f64> = (0..49).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q = dot(&u, &s.second.m().apply(&u));
                assert!(q >= -1e-10 * norm * dot(&u, &u));
            }
        }
    }
}

#[test]
fn dense_and_banded_storage_agree() {
    let n = 2100;
    let g = make_grid(1.0, n).unwrap();
    let kappa = GridFunction::from_fn(&g, |x| 1.0 + x).unwrap();
    let u: Vec<f64> = g.nodes().iter().map(|x| (7.0 * x).sin()).collect();
    for order in ORDERS {
        let banded = build_first_derivative(&g, order).unwrap();
        assert!(!banded.d().is_dense());
        let dense = build_first_derivative_with(&g, order, StoragePolicy::Dense).unwrap();
        assert!(dense.d().is_dense());
        let scale = row_norm_inf(banded.d());
        assert!(max_abs_diff(&banded.apply(&u), &dense.apply(&u)) <= 1e-13 * scale);

        let c = SecondDerivConstruction::WideFullyCompatible;
        let sb = build_second_derivative(&banded, &kappa, c).unwrap();
        let sd = build_second_derivative_with(&dense, &kappa, c, StoragePolicy::Dense).unwrap();
        let scale = row_norm_inf(sb.d_xx());
        assert!(max_abs_diff(&sb.apply(&u), &sd.apply(&u)) <= 1e-13 * scale);
        assert!(max_abs_diff(&sb.m().apply(&u), &sd.m().apply(&u)) <= 1e-13 * scale);
    }
}

/// Max interior truncation error of `D_x` and `D_xx` on `sin(πx)`.
fn interior_errors(order: SbpOrder, n: usize) -> (f64, f64) {
    use std::f64::consts::PI;
    let s = set(n, order, SecondDerivConstruction::WideFullyCompatible);
    let x = s.grid().nodes().to_vec();
    let u: Vec<f64> = x.iter().map(|x| (PI * x).sin()).collect();
    let du = s.first.apply(&u);
    let ddu = s.second.apply(&u);
    let mut e1: f64 = 0.0;
    let mut e2: f64 = 0.0;
    for j in (0..n).filter(|&j| (0.25..=0.75).contains(&x[j])) {
        e1 = e1.max((du[j] - PI * (PI * x[j]).cos()).abs());
        e2 = e2.max((ddu[j] + PI * PI * (PI * x[j]).sin()).abs());
    }
    (e1, e2)
}

#[test]
fn interior_truncation_slopes() {
    for order in ORDERS {
        let (a1, a2) = interior_errors(order, 41);
        let (b1, b2) = interior_errors(order, 81);
        let ratio = (40.0f64 / 80.0).ln().abs();
        let p1 = (a1 / b1).ln() / ratio;
        let p2 = (a2 / b2).ln() / ratio;
        let expect = order.interior_order() as f64;
        assert!((p1 - expect).abs() <= 0.3, "{order} Dx slope {p1}");
        assert!((p2 - expect).abs() <= 0.3, "{order} Dxx slope {p2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summation_by_parts_identity(
        n in 8usize..60,
        use4 in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let order = if use4 { SbpOrder::Order4 } else { SbpOrder::Order2 };
        let g = make_grid(1.0, n).unwrap();
        let d = build_first_derivative(&g, order).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let du = d.apply(&u);
        let dv = d.apply(&v);
        let h = d.h();
        let lhs: f64 = (0..n).map(|i| u[i] * h[i] * dv[i] + du[i] * h[i] * v[i]).sum();
        let rhs = v[n - 1] * u[n - 1] - v[0] * u[0];
        prop_assert!((lhs - rhs).abs() <= 1e-11 * crate::linalg::norm2(&u) * crate::linalg::norm2(&v));
    }
}
