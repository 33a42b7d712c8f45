use std::sync::Arc;

use hamrearr_core::functional::{minkowski_functional, ri_norm, Mode, SupportFamily};
use hamrearr_core::measure::{equidistributed, DiscreteFunction, MeasureSpace};
use hamrearr_core::quadratic::{
    compose_linear, det_invariant, poisson_bracket, symplectic_defect, symplectic_rotation, symplectic_shear_x,
    symplectic_shear_y, t_invariant, QuadraticForm,
};
use hamrearr_core::rearrange::{brute_force_sup, katok_transport, sup_pairing, transport_error};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn counting(n: usize) -> Arc<MeasureSpace> {
    Arc::new(MeasureSpace::counting(n).unwrap())
}

fn function(values: Vec<f64>) -> DiscreteFunction {
    DiscreteFunction::new(counting(values.len()), values).unwrap()
}

/// Small integers keep ties frequent and sums exact.
fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-4i32..=4).prop_map(f64::from), n)
}

fn pair_of(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| (values(n), values(n)))
}

fn with_permutation(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1..=max).prop_flat_map(|n| (values(n), Just((0..n).collect::<Vec<_>>()).prop_shuffle()))
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn form(n: usize) -> impl Strategy<Value = QuadraticForm> {
    symmetric(2 * n).prop_map(|a| QuadraticForm::new(a).unwrap())
}

/// Products of rotations and shears, all symplectic.
fn symplectic(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-3.0f64..3.0, n), symmetric(n), symmetric(n)).prop_map(move |(angles, kx, ky)| {
        let mut s = symplectic_shear_x(&(kx * 0.5)) * symplectic_shear_y(&(ky * 0.5));
        for (k, a) in angles.into_iter().enumerate() {
            s = symplectic_rotation(n, k, a) * s;
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn permutation_preserves_distribution((v, perm) in with_permutation(8)) {
        let f = function(v);
        let g = f.permuted(&perm);
        prop_assert!(equidistributed(&f, &g));
        prop_assert_eq!(f.decreasing_rearrangement(), g.decreasing_rearrangement());
    }

    #[test]
    fn sorted_pairing_matches_permutation_search((a, b) in pair_of(6)) {
        let (phi, psi) = (function(a), function(b));
        let fast = sup_pairing(&phi, &psi).unwrap();
        let brute = brute_force_sup(&phi, &psi).unwrap();
        prop_assert_eq!(fast.value, brute.value);
        prop_assert!(equidistributed(&phi, &phi.permuted(&fast.witness)));
    }

    #[test]
    fn evaluate_over_rearrangements_ignores_permutation(
        (v, perm) in with_permutation(7),
        a in -1.0f64..1.0,
    ) {
        let xi = function(v);
        let f = xi.map(|x| (x * 0.7).sin());
        let family = SupportFamily::new(vec![(a, f.clone()), (0.0, f.neg())], true).unwrap();
        let p = family.evaluate(&xi, Mode::OverRearrangements).unwrap();
        let q = family.evaluate(&xi.permuted(&perm), Mode::OverRearrangements).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn evaluate_is_convex((a, b) in pair_of(7), t in 0.0f64..=1.0) {
        let (x, y) = (function(a), function(b));
        let f = x.map(|v| v.cos());
        let family = SupportFamily::new(vec![(0.25, f.clone()), (-0.5, f.abs())], true).unwrap();
        let mode = Mode::OverRearrangements;
        let mix = x.zip(&y, |u, v| t * u + (1.0 - t) * v).unwrap();
        let lhs = family.evaluate(&mix, mode).unwrap();
        let rhs = t * family.evaluate(&x, mode).unwrap() + (1.0 - t) * family.evaluate(&y, mode).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn gauge_is_positively_homogeneous(v in values(6), lambda in 0.1f64..10.0) {
        let xi = function(v);
        prop_assume!(xi.sup_norm() > 0.0);
        let f = function(vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let family = SupportFamily::new(vec![(0.0, f)], true).unwrap();
        let g1 = minkowski_functional(&family, 1.0, &xi).unwrap();
        let g2 = minkowski_functional(&family, 1.0, &xi.scale(lambda)).unwrap();
        prop_assert!((g2 - lambda * g1).abs() <= 1e-8 * g2.max(1.0), "{g2} vs {}", lambda * g1);
    }

    #[test]
    fn ri_norm_is_invariant_and_subadditive((v, perm) in with_permutation(7), w in values(7)) {
        let zeta = function(v);
        let n = zeta.len();
        let other = zeta.with_values(w[..n].to_vec()).unwrap();
        let f = zeta.map(|x| x.abs() + 1.0);
        let family = SupportFamily::new(vec![(0.0, f)], true).unwrap();
        let q = ri_norm(&family, &zeta).unwrap();
        prop_assert_eq!(q, ri_norm(&family, &zeta.permuted(&perm)).unwrap());
        prop_assert_eq!(q, ri_norm(&family, &zeta.neg()).unwrap());
        let sum = zeta.zip(&other, |a, b| a + b).unwrap();
        prop_assert!(ri_norm(&family, &sum).unwrap() <= q + ri_norm(&family, &other).unwrap() + 1e-9);
    }

    #[test]
    fn theta_values_are_prefix_masses(v in prop::collection::hash_set(-50i32..50, 1..10)) {
        let xi = function(v.into_iter().map(f64::from).collect());
        let theta = xi.reparameterize_theta().unwrap();
        let mut got = theta.values().to_vec();
        got.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..xi.len()).map(|k| k as f64).collect();
        prop_assert_eq!(got, expected);
        for i in 0..xi.len() {
            for j in 0..xi.len() {
                prop_assert_eq!(xi.values()[i] < xi.values()[j], theta.values()[i] < theta.values()[j]);
            }
        }
    }

    #[test]
    fn transport_error_within_epsilon((v, perm) in with_permutation(9), eps in 0.01f64..2.0) {
        let xi = function(v.iter().map(|x| x * 0.37).collect());
        let eta = xi.permuted(&perm);
        let plan = katok_transport(&xi, &eta, eps).unwrap();
        let err = transport_error(&xi, &eta, &plan.permutation);
        prop_assert!((err - plan.error).abs() <= 1e-12);
        prop_assert!(err <= eps, "{err} > {eps}");
    }

    #[test]
    fn jacobi_identity(a in form(2), b in form(2), c in form(2)) {
        let cyc = |x: &QuadraticForm, y: &QuadraticForm, z: &QuadraticForm| {
            poisson_bracket(x, &poisson_bracket(y, z).unwrap()).unwrap()
        };
        let total = cyc(&a, &b, &c).add(&cyc(&b, &c, &a)).unwrap().add(&cyc(&c, &a, &b)).unwrap();
        prop_assert!(total.matrix().amax() <= 1e-10, "{}", total.matrix().amax());
    }

    #[test]
    fn invariants_survive_symplectic_change(q in form(2), s in symplectic(2)) {
        prop_assert!(symplectic_defect(&s) <= 1e-10);
        let moved = compose_linear(&q, &s).unwrap();
        let (t0, t1) = (t_invariant(&q), t_invariant(&moved));
        prop_assert!((t0 - t1).abs() <= 1e-8 * t0.abs().max(1.0), "t {t0} vs {t1}");
        let (d0, d1) = (det_invariant(&q), det_invariant(&moved));
        prop_assert!((d0 - d1).abs() <= 1e-8 * d0.abs().max(1.0), "det {d0} vs {d1}");
    }

    #[test]
    fn determinant_composes(q in form(1), s in symplectic(1), m in symmetric(2)) {
        let m = m + DMatrix::identity(2, 2) * 3.0;
        let lhs = det_invariant(&compose_linear(&compose_linear(&q, &s).unwrap(), &m).unwrap());
        let rhs = det_invariant(&q) * m.determinant().powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
