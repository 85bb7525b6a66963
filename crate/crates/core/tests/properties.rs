use nalgebra::DVector;
use proptest::prelude::*;

use symact::algebra::SemidirectAlgebra;
use symact::dynamics::{controlled_field, forced_field, ReducedState};
use symact::linalg::vec_max_abs;
use symact::matching::{choose_s, synthesize_controlled};
use symact::model::curvature_pairing;
use symact::presets::{self, SatelliteParams};

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-2.0..2.0f64).prop_map(|a| DVector::from_column_slice(&a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ad_star_is_dual_to_bracket(x in vec3(), y in vec3(), p in vec3()) {
        for name in ["so3", "so3_semidirect_r3", "satellite"] {
            let alg = SemidirectAlgebra::preset(name).unwrap();
            let lhs = alg.m.ad_star(&x, &p).unwrap().dot(&y);
            let rhs = p.dot(&alg.m.bracket(&x, &y).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn diamond_is_adjoint_to_action(u in vec3(), x in vec3(), p in vec3()) {
        let alg = SemidirectAlgebra::preset("so3_semidirect_r3").unwrap();
        let lhs = alg.rep.diamond(&x, &p).unwrap().dot(&u);
        let rhs = p.dot(&alg.rep.rho_inf(&u, &x).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn curvature_pairing_is_linear_in_p(u in vec3(), p in vec3(), q in vec3(), s in -3.0..3.0f64) {
        let alg = SemidirectAlgebra::preset("so3_semidirect_r3").unwrap();
        let a0 = presets::dense_a0();
        let lhs = curvature_pairing(&alg, &a0, &u, &(&p + &q * s)).unwrap();
        let rhs = curvature_pairing(&alg, &a0, &u, &p).unwrap() + curvature_pairing(&alg, &a0, &u, &q).unwrap() * s;
        prop_assert!(vec_max_abs(&(lhs - rhs)) <= 1e-12);
    }

    #[test]
    fn matched_fields_are_conjugate(nu in vec3(), qt in vec3(), gamma in -0.4..0.6f64) {
        let model = presets::semidirect_gamma_model(gamma).unwrap();
        let cd = synthesize_controlled(&model, &choose_s(&model).unwrap().s).unwrap();
        let f = forced_field(&model, &ReducedState::new(nu.clone(), qt.clone())).unwrap();
        let g = controlled_field(&model, &cd, &ReducedState::new(&cd.phi_c * &nu, &cd.s * &qt)).unwrap();
        prop_assert!(vec_max_abs(&(&cd.phi_c * &f.nu_dot - &g.nu_dot)) <= 1e-12);
        prop_assert!(vec_max_abs(&(&cd.s * &f.qt_dot - &g.qt_dot)) <= 1e-12);
    }

    #[test]
    fn satellite_body_covector_is_frozen(nu in vec3(), qt in -1.0..1.0f64, k in -0.5..0.95f64) {
        let model = presets::satellite_model(&SatelliteParams::reference(k)).unwrap();
        let s = ReducedState::new(nu, DVector::from_element(1, qt));
        prop_assert_eq!(forced_field(&model, &s).unwrap().qt_dot[0], 0.0);
    }

    #[test]
    fn forced_field_is_quadratic(nu in vec3(), qt in vec3(), c in -3.0..3.0f64) {
        let model = presets::semidirect_dense_model(0.4).unwrap();
        let f1 = forced_field(&model, &ReducedState::new(nu.clone(), qt.clone())).unwrap();
        let fc = forced_field(&model, &ReducedState::new(&nu * c, &qt * c)).unwrap();
        let scale = 1.0 + vec_max_abs(&f1.nu_dot) * c * c;
        prop_assert!(vec_max_abs(&(fc.nu_dot - f1.nu_dot * (c * c))) <= 1e-12 * scale);
    }
}
