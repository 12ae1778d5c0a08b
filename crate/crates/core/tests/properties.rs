mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{binding, char_poly, declared, derivative_gap, random_expr, rel_dev};
use sodegeom::conjugate::{find_conjugate_points, ConjugateOptions};
use sodegeom::expr::parse;
use sodegeom::flow::{
    integrate_curve, integrate_jacobi_matrix, integrate_jacobi_with, options_for_tol, JacobiForm,
};
use sodegeom::gallery::{
    euler_angle_frame, rigid_body_lifted, rigid_body_reduced, se2_canonical, se2_frame, torus,
    torus_geodesic_state, worked_example,
};
use sodegeom::geometry;
use sodegeom::liegroup::{
    frame_nabla_phi, frame_phi, lift_to_group, releq_conjugate_times, LieAlgebraData, ReducedSystem,
};
use sodegeom::{Matrix, SodeSystem, TangentState};

fn expr_and_point() -> impl Strategy<Value = (String, Vec<f64>)> {
    (any::<u64>(), prop::collection::vec(-1.0f64..1.0, 4)).prop_map(|(seed, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_expr(&mut rng, 4), p)
    })
}

fn state(n: usize) -> impl Strategy<Value = TangentState> {
    (
        prop::collection::vec(-1.0f64..1.0, n),
        prop::collection::vec(-1.0f64..1.0, n),
    )
        .prop_map(|(q, v)| TangentState::new(q, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivative_matches_differences((src, p) in expr_and_point()) {
        prop_assert!(derivative_gap(&src, &p) < 1e-6, "{src}");
    }

    #[test]
    fn print_parse_round_trip((src, p) in expr_and_point()) {
        let e = parse(&src, &declared()).unwrap();
        let back = parse(&e.to_string(), &declared()).unwrap();
        let (a, b) = (e.eval(&binding(&p)).unwrap(), back.eval(&binding(&p)).unwrap());
        prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0), "{src} -> {e}");
    }

    #[test]
    fn fold_preserves_value((src, p) in expr_and_point()) {
        let e = parse(&src, &declared()).unwrap();
        for d in [e.clone(), e.diff("x"), e.diff("vy")] {
            let (a, b) = (d.eval(&binding(&p)).unwrap(), d.fold().eval(&binding(&p)).unwrap());
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }
}

fn gallery_systems() -> Vec<(SodeSystem, TangentState)> {
    vec![
        // y' + x x' = 1 keeps the worked example off its finite-time blow-up
        (
            worked_example(),
            TangentState::new(vec![0.1, 0.0], vec![0.2, 0.98]),
        ),
        (
            torus(2.0, 1.0),
            TangentState::new(vec![0.3, 0.0], vec![0.5, 0.2]),
        ),
        (
            rigid_body_lifted(1.0, 2.0, 3.0),
            TangentState::new(vec![0.0, 1.3, 0.2], vec![0.1, 0.2, 1.0]),
        ),
        (
            se2_canonical(),
            TangentState::new(vec![0.0; 3], vec![0.4, -0.3, 1.0]),
        ),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn covariant_and_variational_forms_agree(k in 0usize..4, t_end in 0.5f64..3.0) {
        let (sys, s0) = gallery_systems().swap_remove(k);
        let n = sys.dim();
        let opts = options_for_tol(1e-11).unwrap();
        let id = Matrix::identity(n, n);
        let z = Matrix::zeros(n, n);
        for (y0, yd0) in [(&z, &id), (&id, &z)] {
            let a = integrate_jacobi_with(&sys, &s0, y0, yd0, t_end, &opts, JacobiForm::Variational).unwrap();
            let b = integrate_jacobi_with(&sys, &s0, y0, yd0, t_end, &opts, JacobiForm::Covariant).unwrap();
            prop_assert!(rel_dev(&a.y(a.len() - 1), &b.y(b.len() - 1)) < 1e-7);
            prop_assert!(rel_dev(&a.ydot(a.len() - 1), &b.ydot(b.len() - 1)) < 1e-7);
        }
    }

    #[test]
    fn jacobi_superposition(
        k in 0usize..2,
        s0 in state(2),
        c in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let sys = [worked_example(), torus(2.0, 1.0)][k].clone();
        let mut s0 = s0;
        if k == 0 {
            s0.v[1] = 1.0 - s0.q[0] * s0.v[0];
        }
        let traj = integrate_curve(&sys, &s0, 2.0, 1e-12).unwrap();
        let a0 = Matrix::from_row_slice(2, 2, &c[0..4]);
        let a1 = Matrix::from_row_slice(2, 2, &c[4..8]);
        // basis solutions, then one solution started from (a0, a1)
        let u = integrate_jacobi_matrix(&traj, &Matrix::identity(2, 2), &Matrix::zeros(2, 2)).unwrap();
        let v = integrate_jacobi_matrix(&traj, &Matrix::zeros(2, 2), &Matrix::identity(2, 2)).unwrap();
        let w = integrate_jacobi_matrix(&traj, &a0, &a1).unwrap();
        let (iu, iv, iw) = (u.len() - 1, v.len() - 1, w.len() - 1);
        let combo = u.y(iu) * &a0 + v.y(iv) * &a1;
        prop_assert!(rel_dev(&w.y(iw), &combo) < 1e-9);
    }

    #[test]
    fn spray_velocity_field_is_jacobi(k in 0usize..3, s in state(3)) {
        let (sys, mut s0) = match k {
            0 => (torus(2.0, 1.0), TangentState::new(s.q[..2].to_vec(), s.v[..2].to_vec())),
            1 => (se2_canonical(), s),
            _ => (rigid_body_lifted(1.0, 2.0, 3.0), s),
        };
        if k == 2 {
            s0.q[1] = 1.4 + 0.2 * s0.q[1];
        }
        let n = sys.dim();
        let report = geometry::spray_check(&sys, std::slice::from_ref(&s0)).unwrap();
        prop_assert!(report.max_nabla_t < 1e-9 && report.max_phi_t < 1e-9);
        let traj = integrate_curve(&sys, &s0, 1.0, 1e-11).unwrap();
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(n, n), &Matrix::identity(n, n)).unwrap();
        let v0 = Matrix::from_column_slice(n, 1, &s0.v);
        for i in 0..sol.len() {
            let t = sol.times()[i];
            let j = sol.y(i) * &v0;
            let base = sol.base(i);
            for r in 0..n {
                prop_assert!((j[(r, 0)] - t * base.v[r]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn free_particle_determinant(n in 1usize..5, v in prop::collection::vec(-1.0f64..1.0, 4)) {
        let names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let sys = SodeSystem::parse(&refs, &vec!["0"; n], &[]).unwrap();
        let s0 = TangentState::new(vec![0.0; n], v[..n].to_vec());
        let traj = integrate_curve(&sys, &s0, 4.0, 1e-10).unwrap();
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(n, n), &Matrix::identity(n, n)).unwrap();
        for i in 0..sol.len() {
            let t = sol.times()[i];
            prop_assert!((sol.det(i) - t.powi(n as i32)).abs() < 1e-10 * t.powi(n as i32).max(1.0));
        }
        let r = find_conjugate_points(&sys, &s0, 4.0, &ConjugateOptions::default()).unwrap();
        prop_assert!(r.events.is_empty());
    }

    #[test]
    fn conjugate_multiplicity_bounded_for_sprays(alpha in 0.2f64..1.5) {
        let sys = torus(2.0, 1.0);
        let s0 = torus_geodesic_state(2.0, 1.0, alpha);
        let r = find_conjugate_points(&sys, &s0, 12.0, &ConjugateOptions::default()).unwrap();
        prop_assert!(r.events.iter().all(|e| e.multiplicity <= 1));
    }
}

/// `γ = (w2 w3 + a w1, -w1 w3 + b w2, w1 w2)` on `alg`.
fn sample_reduced(alg: LieAlgebraData, a: f64, b: f64) -> ReducedSystem {
    ReducedSystem::parse(
        alg,
        &["w2*w3 + a*w1", "-w1*w3 + b*w2", "w1*w2"],
        &[("a", a), ("b", b)],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn se2_frame_and_coordinate_spectra_agree(s in state(3)) {
        let sys = se2_canonical();
        let red = ReducedSystem::canonical(LieAlgebraData::se2());
        let e = se2_frame().matrix(&s.q).unwrap();
        let w = e.clone().try_inverse().unwrap() * Matrix::from_column_slice(3, 1, &s.v);
        let phi = frame_phi(&red, w.as_slice()).unwrap();
        let coord = geometry::jacobi_endomorphism(&sys, &s).unwrap();
        let (pa, pb) = (char_poly(&phi), char_poly(&coord));
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
        }
        let e_inv = e.clone().try_inverse().unwrap();
        prop_assert!(rel_dev(&(&e * &phi * &e_inv), &coord) < 1e-8);
    }

    #[test]
    fn frame_nabla_phi_matches_lifted_coordinates(
        so3 in any::<bool>(),
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        s in state(3),
    ) {
        let (alg, frame) = if so3 {
            (LieAlgebraData::so3(), euler_angle_frame())
        } else {
            (LieAlgebraData::se2(), se2_frame())
        };
        let red = sample_reduced(alg, a, b);
        let sys = lift_to_group(&red, &frame).unwrap();
        let mut s = s;
        if so3 {
            s.q[1] = 1.2 + 0.3 * s.q[1];
        }
        let e = frame.matrix(&s.q).unwrap();
        let e_inv = e.clone().try_inverse().unwrap();
        let w = &e_inv * Matrix::from_column_slice(3, 1, &s.v);
        let psi = frame_nabla_phi(&red, w.as_slice()).unwrap();
        let coord = geometry::nabla_phi(&sys, &s).unwrap();
        prop_assert!(rel_dev(&(&e * &psi * &e_inv), &coord) < 1e-8);
    }

    #[test]
    fn frame_phi_rate_matches_differences(a in -1.0f64..1.0, w in prop::collection::vec(-1.0f64..1.0, 3)) {
        let red = sample_reduced(LieAlgebraData::so3(), a, 0.5);
        let g = red.eval_gamma(&w).unwrap();
        let h = 1e-5;
        let at = |s: f64| {
            let p: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x + s * d).collect();
            frame_phi(&red, &p).unwrap()
        };
        let rate = (at(h) - at(-h)) / (2.0 * h);
        let sym = sodegeom::liegroup::frame_phi_rate(&red, &w).unwrap();
        prop_assert!(rel_dev(&sym, &rate) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reduced_and_lifted_conjugate_times_agree(i1 in 0.8f64..1.5, i3 in 0.5f64..2.5, omega in 1.0f64..2.5) {
        let red = rigid_body_reduced(i1, i1, i3);
        let expected = 2.0 * std::f64::consts::PI * i1 / (i3 * omega);
        let rep = releq_conjugate_times(&red, &[0.0, 0.0, omega], expected + 1.0).unwrap();
        let first = rep.report.events.first().expect("Euler top has a conjugate point").t;
        let sys = rigid_body_lifted(i1, i1, i3);
        let s0 = sodegeom::gallery::rigid_body_spin_state(omega);
        let r = find_conjugate_points(&sys, &s0, first + 0.5, &ConjugateOptions::default()).unwrap();
        let lifted = r.events.first().expect("lifted event");
        prop_assert!((lifted.t - first).abs() < 1e-5);
        prop_assert_eq!(lifted.multiplicity, 2);
        prop_assert!((first - expected).abs() < 1e-9);
    }
}
