use ddreg::linalg;
use ddreg::regulator::InternalModelParams;
use ddreg::simulate::integrate;
use ddreg::synthesis::gain_from;
use ddreg::verify::{check_internal_model_passivity, solve_linear_regulator_equations};
use ddreg::{Exosystem, FunctionLibrary, InputSignal};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn exo(freqs: Vec<f64>, consts: usize) -> Exosystem {
    let q = 2 * freqs.len() + consts;
    Exosystem::new(freqs, consts, DVector::from_fn(q, |i, _| 0.3 * i as f64 - 0.4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn transition_is_a_semigroup(s in 0.1f64..4.0, t in 0.0f64..5.0, u in 0.0f64..5.0) {
        let e = exo(vec![s, 0.5 * s + 0.3], 1);
        let lhs = e.transition(t + u);
        let rhs = e.transition(t) * e.transition(u);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn transition_matches_integration(s in 0.1f64..3.0) {
        let e = exo(vec![s], 1);
        let sm = e.s_matrix();
        let xs = integrate(|_, w: &DVector<f64>| &sm * w, e.w0().clone(), 0.0, 1e-3, 2000).unwrap();
        prop_assert!((xs.last().unwrap() - e.state(2.0)).amax() < 1e-9);
    }

    #[test]
    fn data_factorization_is_exact(s in 0.2f64..3.0, period in 0.1f64..0.9) {
        let e = exo(vec![s], 1);
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * period).collect();
        let m0 = ddreg::data::build_m0(&e, &ts);
        let w0 = DMatrix::from_columns(&ts.iter().map(|&t| e.state(t)).collect::<Vec<_>>());
        let gamma = &w0 * linalg::pinv(&m0);
        prop_assert!((&w0 - gamma * &m0).norm() < 1e-9);
    }

    #[test]
    fn library_jacobian_matches_differences(x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let lib = FunctionLibrary::parse(2, &["x1", "x2", "sin(x1)", "cos(x2)-1", "x1^2*x2"]).unwrap();
        let x = DVector::from_vec(vec![x1, x2]);
        let j = lib.jacobian(&x);
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (lib.eval(&xp) - lib.eval(&xm)) / (2.0 * h);
            prop_assert!((fd - j.column(k)).amax() < 1e-6);
        }
    }

    #[test]
    fn gain_is_invariant_to_joint_scaling(c in 0.01f64..100.0, seed in 0u64..1000) {
        let f = |i: usize, j: usize| (((seed as usize + 7 * i + 13 * j) % 17) as f64) / 8.0 - 1.0;
        let u0 = DMatrix::from_fn(1, 6, f);
        let y = DMatrix::from_fn(6, 2, |i, j| f(i + 3, j + 1));
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let k = gain_from(&u0, &y, &p);
        let kc = gain_from(&u0, &(&y * c), &(&p * c));
        prop_assert!((k - &kc).amax() <= 1e-10 * (1.0 + kc.amax()));
    }

    #[test]
    fn internal_model_is_lossless(alpha in 0.1f64..40.0, s in 0.2f64..3.0, a in -1.0f64..1.0) {
        let e = exo(vec![s], 1);
        let im = InternalModelParams::from_exosystem(&e, DMatrix::from_element(3, 1, 1.0), alpha).unwrap();
        let ea = DVector::from_vec(vec![a, 0.2, -0.1]);
        let eb = DVector::from_vec(vec![0.0, -a, 0.5]);
        let ua = [InputSignal::sine(1.0, 0.7, 0.0)];
        let ub = [InputSignal::constant(a)];
        let c = check_internal_model_passivity(&im, [&ea, &eb], [&ua, &ub], 2.0, 1e-3).unwrap();
        prop_assert!(c.passed, "{:?}", c);
    }

    #[test]
    fn regulator_equations_hold_for_stable_plants(d in 0.5f64..3.0, s in 0.2f64..3.0, g in -1.0f64..1.0) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -d, -1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let e = DMatrix::from_row_slice(2, 3, &[g, 0.0, 0.0, 0.0, 1.0, 0.5]);
        let f = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 0.0]);
        let sm = exo(vec![s], 1).s_matrix();
        let r = solve_linear_regulator_equations(&a, &b, &c, &e, &f, &sm).unwrap();
        prop_assert!(r.solvable && r.unique);
        let pi = r.pi.unwrap();
        let gamma = r.gamma.unwrap();
        prop_assert!((&pi * &sm - &a * &pi - &b * &gamma - &e).amax() < 1e-8);
        prop_assert!((&c * &pi + &f).amax() < 1e-8);
    }
}
