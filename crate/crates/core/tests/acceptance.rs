//! One pass/fail line per acceptance criterion.

mod common;

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sodegeom::conjugate::{
    find_conjugate_points, predictor_times, verify_predictor, ConjugateOptions,
};
use sodegeom::flow::{
    exp_jacobian_fd, exponential_map, integrate_curve, integrate_jacobi_matrix,
    integrate_jacobi_with, options_for_tol, JacobiForm,
};
use sodegeom::gallery::{
    euler_top_transport_error, rigid_body_commutator_error, rigid_body_lifted, rigid_body_reduced,
    rigid_body_spin_state, se2_canonical, se2_det, se2_frame, torus, torus_geodesic_state,
    worked_example,
};
use sodegeom::geometry::{self, max_abs, random_states};
use sodegeom::liegroup::{frame_phi, releq_conjugate_times, LieAlgebraData, ReducedSystem};
use sodegeom::spectral::track_spectrum;
use sodegeom::{Matrix, Result, SodeSystem, TangentState};

struct Criterion {
    checks: Vec<(String, bool, String)>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { checks: Vec::new() }
    }

    fn check(&mut self, label: &str, value: f64, tol: f64) {
        self.checks.push((
            label.into(),
            value <= tol,
            format!("{value:.3e} <= {tol:.0e}"),
        ));
    }

    fn truth(&mut self, label: &str, ok: bool, detail: String) {
        self.checks.push((label.into(), ok, detail));
    }

    fn run(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.checks
                .push((label.into(), false, format!("error: {e}")));
        }
    }

    fn report(&self, n: usize) -> bool {
        let ok = self.checks.iter().all(|c| c.1);
        println!("criterion {n}: {}", if ok { "PASS" } else { "FAIL" });
        for (label, pass, detail) in &self.checks {
            println!(
                "    [{}] {label}: {detail}",
                if *pass { "ok" } else { "FAIL" }
            );
        }
        ok
    }
}

fn times_error(times: &[f64], want: &[f64]) -> f64 {
    if times.len() != want.len() {
        return f64::INFINITY;
    }
    times
        .iter()
        .zip(want)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn criterion_1() -> Criterion {
    let mut c = Criterion::new();
    let sys = worked_example();
    let s0 = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
    c.run("shooting times", |c| {
        let r = find_conjugate_points(&sys, &s0, 10.0, &ConjugateOptions::default())?;
        c.check(
            "conjugate times {π, 2π, 3π}",
            times_error(&r.times(), &[PI, 2.0 * PI, 3.0 * PI]),
            1e-6,
        );
        Ok(())
    });
    c.run("phi", |c| {
        let phi = geometry::jacobi_endomorphism(&sys, &s0)?;
        let want = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.25]);
        c.check("Φ = diag(1, -9/4)", max_abs(&(phi - want)), 1e-9);
        Ok(())
    });
    c.run("commutator", |c| {
        let mut worst = 0.0f64;
        for s in random_states(2, 20, 1.0, 1) {
            worst = worst.max(max_abs(&geometry::commutator_nabla_phi_phi(&sys, &s)?));
        }
        c.check("[∇Φ,Φ] at 20 random states", worst, 1e-9);
        Ok(())
    });
    c.run("jacobi field", |c| {
        let traj = integrate_curve(&sys, &s0, 2.0 * PI, 1e-10)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(2, 2), &Matrix::identity(2, 2))?;
        let mut err = 0.0f64;
        for k in 0..sol.len() {
            let (t, y) = (sol.times()[k], sol.y(k));
            err = err.max((y[(0, 0)] - t.sin()).abs()).max(y[(1, 0)].abs());
        }
        c.check("J = (sin t, 0)", err, 1e-7);
        Ok(())
    });
    c
}

fn criterion_2() -> Criterion {
    let mut c = Criterion::new();
    let (a, b) = (2.0, 1.0);
    let sys = torus(a, b);
    c.run("first conjugate time", |c| {
        let s0 = torus_geodesic_state(a, b, PI / 2.0);
        let r = find_conjugate_points(&sys, &s0, 6.0, &ConjugateOptions::default())?;
        let t = r.events.first().map_or(f64::INFINITY, |e| e.t);
        c.check(
            "equator first conjugate time π√3",
            (t - PI * 3f64.sqrt()).abs(),
            1e-5,
        );
        Ok(())
    });
    c.run("curvature branch", |c| {
        let kappa = |ph: f64| b * ph.cos() / (a + b * ph.cos());
        let mut err = 0.0f64;
        // sin α ≥ 0.8 keeps cos φ ≥ 0.4, so the branch never meets the zero eigenvalue
        for sin_alpha in [0.8f64, 0.9, 0.95] {
            let traj = integrate_curve(
                &sys,
                &torus_geodesic_state(a, b, sin_alpha.asin()),
                8.0,
                1e-10,
            )?;
            let trace = track_spectrum(&traj)?;
            // the other branch is the 0 eigenvalue along the velocity
            let br = if trace.values[0][0].re.abs() < trace.values[0][1].re.abs() {
                1
            } else {
                0
            };
            for k in 0..traj.len() {
                err = err.max((trace.values[k][br].re - kappa(traj.node(k)[0])).abs());
            }
        }
        c.check("tracked eigenvalue = -f''/f on three geodesics", err, 1e-6);
        Ok(())
    });
    c.run("commutator", |c| {
        let mut worst = 0.0f64;
        for s in random_states(2, 50, 2.0, 2) {
            worst = worst.max(max_abs(&geometry::commutator_nabla_phi_phi(&sys, &s)?));
        }
        c.check("[∇Φ,Φ] at 50 random states", worst, 1e-9);
        Ok(())
    });
    c
}

fn criterion_3() -> Criterion {
    let mut c = Criterion::new();
    c.run("euler top", |c| {
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 1.0, 1.5), &[0.0, 0.0, 2.0], 3.0)?;
        let e = r.report.events.first();
        c.check(
            "Euler top time 2π/3",
            e.map_or(f64::INFINITY, |e| (e.t - 2.0 * PI / 3.0).abs()),
            1e-5,
        );
        c.truth(
            "Euler top multiplicity 2",
            e.is_some_and(|e| e.multiplicity == 2),
            format!("{:?}", e.map(|e| e.multiplicity)),
        );
        let lifted = find_conjugate_points(
            &rigid_body_lifted(1.0, 1.0, 1.5),
            &rigid_body_spin_state(2.0),
            3.0,
            &ConjugateOptions::default(),
        )?;
        c.check(
            "lifted Euler top time",
            times_error(&lifted.times(), &[2.0 * PI / 3.0]),
            1e-5,
        );
        Ok(())
    });
    c.run("flat body", |c| {
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 2.0, 3.0), &[0.0, 0.0, 1.0], 4.0)?;
        c.check(
            "flat body time π",
            times_error(&r.report.times(), &[PI]),
            1e-5,
        );
        Ok(())
    });
    c.run("generic commutator", |c| {
        c.check(
            "generic (1, 2, 0.9) commutator, relative",
            rigid_body_commutator_error(1.0, 2.0, 0.9, 1.0)?,
            1e-8,
        );
        c.check(
            "same at Ω = 1.7",
            rigid_body_commutator_error(1.0, 2.0, 0.9, 1.7)?,
            1e-8,
        );
        Ok(())
    });
    c
}

fn criterion_4() -> Criterion {
    let mut c = Criterion::new();
    let sys = se2_canonical();
    let z0 = 1.0;
    let s0 = TangentState::new(vec![0.0; 3], vec![0.0, 0.0, z0]);
    c.run("det", |c| {
        let traj = integrate_curve(&sys, &s0, 13.0, 1e-10)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(3, 3), &Matrix::identity(3, 3))?;
        let mut err = 0.0f64;
        for k in 0..sol.len() {
            let t = sol.times()[k];
            if t >= 0.1 {
                let f = se2_det(z0, t);
                err = err.max((sol.det(k) - f).abs() / f.abs().max(1.0));
            }
        }
        c.check("det Y = (2t/ż0²)(1 - cos ż0 t) on [0.1, 13]", err, 1e-6);
        Ok(())
    });
    c.run("events", |c| {
        let r = find_conjugate_points(&sys, &s0, 13.0, &ConjugateOptions::default())?;
        c.check(
            "events at 2π, 4π",
            times_error(&r.times(), &[2.0 * PI, 4.0 * PI]),
            1e-6,
        );
        c.truth(
            "multiplicity 2",
            r.events.iter().all(|e| e.multiplicity == 2),
            format!(
                "{:?}",
                r.events.iter().map(|e| e.multiplicity).collect::<Vec<_>>()
            ),
        );
        Ok(())
    });
    c.run("exp jacobian", |c| {
        let traj = integrate_curve(&sys, &s0, 5.0, 1e-10)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(3, 3), &Matrix::identity(3, 3))?;
        let mut err = 0.0f64;
        for t in [1.0, 2.5, 5.0] {
            let y = sol.at(t).0;
            let fd = exp_jacobian_fd(&sys, &s0.q, &s0.v, t, 1e-5)?;
            err = err.max(max_abs(&(fd - y)));
        }
        c.check("finite-difference exp Jacobian vs Y(t)", err, 1e-4);
        Ok(())
    });
    c.run("frame eigenvalues", |c| {
        let red = ReducedSystem::canonical(LieAlgebraData::se2());
        let phi = frame_phi(&red, &[0.0, 0.0, z0])?;
        let mut ev: Vec<f64> = phi.complex_eigenvalues().iter().map(|x| x.re).collect();
        ev.sort_by(f64::total_cmp);
        let want = [0.0, z0 * z0 / 4.0, z0 * z0 / 4.0];
        c.check(
            "frame φ eigenvalues {ż0²/4 ×2, 0}",
            times_error(&ev, &want),
            1e-12,
        );
        Ok(())
    });
    c.run("group point", |c| {
        let mut err = 0.0f64;
        for (vx, vy) in [(0.0, 0.0), (0.3, -0.7), (1.1, 0.4)] {
            let end = exponential_map(&sys, &[0.0; 3], &[vx, vy, 1.0], 2.0 * PI)?;
            err = err
                .max(end[0].abs())
                .max(end[1].abs())
                .max((end[2] - 2.0 * PI).abs());
        }
        c.check("geodesics with ż0 = 1 meet at (0, 0, 2π)", err, 1e-6);
        Ok(())
    });
    c
}

fn criterion_5() -> Criterion {
    let mut c = Criterion::new();
    c.run("(a) covariant vs variational", |c| {
        let mut worst = 0.0f64;
        // generic states: at the default ones both forms round identically
        let cases = [
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
        ];
        let opts = options_for_tol(1e-11)?;
        for (sys, s0) in &cases {
            let n = sys.dim();
            let (z, id) = (Matrix::zeros(n, n), Matrix::identity(n, n));
            let a = integrate_jacobi_with(sys, s0, &z, &id, 3.0, &opts, JacobiForm::Variational)?;
            let b = integrate_jacobi_with(sys, s0, &z, &id, 3.0, &opts, JacobiForm::Covariant)?;
            worst = worst.max(common::rel_dev(&a.y(a.len() - 1), &b.y(b.len() - 1)));
        }
        c.check(
            "(a) covariant and variational forms, all gallery systems",
            worst,
            1e-7,
        );
        Ok(())
    });
    c.run("(b) superposition", |c| {
        let sys = torus(2.0, 1.0);
        let traj = integrate_curve(&sys, &torus_geodesic_state(2.0, 1.0, 0.7), 3.0, 1e-12)?;
        let (a0, a1) = (
            Matrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 0.2]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.4, -0.6, 0.9]),
        );
        let u = integrate_jacobi_matrix(&traj, &Matrix::identity(2, 2), &Matrix::zeros(2, 2))?;
        let v = integrate_jacobi_matrix(&traj, &Matrix::zeros(2, 2), &Matrix::identity(2, 2))?;
        let w = integrate_jacobi_matrix(&traj, &a0, &a1)?;
        let combo = u.y(u.len() - 1) * &a0 + v.y(v.len() - 1) * &a1;
        c.check(
            "(b) Y(a0, a1) = Y(I, 0) a0 + Y(0, I) a1",
            common::rel_dev(&w.y(w.len() - 1), &combo),
            1e-9,
        );
        Ok(())
    });
    c.run("(c) sprays", |c| {
        let sprays: Vec<(SodeSystem, usize)> = vec![
            (torus(2.0, 1.0), 2),
            (se2_canonical(), 3),
            (rigid_body_lifted(1.0, 2.0, 3.0), 3),
        ];
        let mut worst = 0.0f64;
        let mut tc = 0.0f64;
        for (sys, n) in &sprays {
            let mut states = random_states(*n, 30, 1.0, 5);
            for s in &mut states {
                if sys.coordinates().len() == 3 && sys.coordinates()[1] == "th" {
                    s.q[1] = 1.2 + 0.2 * s.q[1];
                }
            }
            let r = geometry::spray_check(sys, &states)?;
            worst = worst.max(r.max_nabla_t).max(r.max_phi_t);
            let s0 = &states[0];
            let traj = integrate_curve(sys, s0, 1.5, 1e-11)?;
            let sol =
                integrate_jacobi_matrix(&traj, &Matrix::zeros(*n, *n), &Matrix::identity(*n, *n))?;
            let v0 = Matrix::from_column_slice(*n, 1, &s0.v);
            for k in 0..sol.len() {
                let j = sol.y(k) * &v0;
                let (t, base) = (sol.times()[k], sol.base(k));
                for i in 0..*n {
                    tc = tc.max((j[(i, 0)] - t * base.v[i]).abs());
                }
            }
        }
        c.check(
            "(c) |∇T|, |Φ(T)| on torus, SE(2), lifted rigid body",
            worst,
            1e-9,
        );
        c.check("(c) t·ċ(t) solves the Jacobi equation", tc, 1e-8);
        let worked = geometry::spray_check(&worked_example(), &random_states(2, 10, 1.0, 5))?;
        c.truth(
            "(c) worked example is not a spray",
            !worked.is_spray,
            format!("max |Φ(T)| = {:.3e}", worked.max_phi_t),
        );
        Ok(())
    });
    c.run("(d) free particle", |c| {
        let mut err = 0.0f64;
        let mut events = 0;
        for n in 1..=4usize {
            let names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let sys = SodeSystem::parse(&refs, &vec!["0"; n], &[])?;
            let s0 =
                TangentState::new(vec![0.0; n], (0..n).map(|i| 0.3 * i as f64 - 0.2).collect());
            let traj = integrate_curve(&sys, &s0, 5.0, 1e-10)?;
            let sol =
                integrate_jacobi_matrix(&traj, &Matrix::zeros(n, n), &Matrix::identity(n, n))?;
            for k in 0..sol.len() {
                let t = sol.times()[k];
                err = err.max((sol.det(k) - t.powi(n as i32)).abs() / t.powi(n as i32).max(1.0));
            }
            events += find_conjugate_points(&sys, &s0, 5.0, &ConjugateOptions::default())?
                .events
                .len();
        }
        c.check("(d) det Y = t^n, n = 1..4", err, 1e-10);
        c.truth(
            "(d) no conjugate events",
            events == 0,
            format!("{events} events"),
        );
        Ok(())
    });
    c.run("(e) derivatives", |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let src = common::random_expr(&mut rng, 4);
            let p: Vec<f64> = (0..4)
                .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect();
            worst = worst.max(common::derivative_gap(&src, &p));
        }
        c.check(
            "(e) symbolic vs finite differences, 100 random expressions",
            worst,
            1e-6,
        );
        Ok(())
    });
    c.run("(f) frame spectra", |c| {
        let sys = se2_canonical();
        let red = ReducedSystem::canonical(LieAlgebraData::se2());
        let mut worst = 0.0f64;
        for s in random_states(3, 30, 1.5, 9) {
            let e = se2_frame().matrix(&s.q)?;
            let w = e.clone().try_inverse().expect("frame invertible")
                * Matrix::from_column_slice(3, 1, &s.v);
            let a = common::char_poly(&frame_phi(&red, w.as_slice())?);
            let b = common::char_poly(&geometry::jacobi_endomorphism(&sys, &s)?);
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs() / x.abs().max(1.0));
            }
        }
        c.check(
            "(f) frame vs coordinate characteristic polynomials on SE(2)",
            worst,
            1e-8,
        );
        Ok(())
    });
    c.run("(g) transport", |c| {
        c.check(
            "(g) transport = cos(At) Ê1 - sin(At) Ê2",
            euler_top_transport_error(1.0, 1.5, 2.0, 5.0, 1e-10)?,
            1e-6,
        );
        Ok(())
    });
    c
}

fn criterion_6() -> Criterion {
    let mut c = Criterion::new();
    for lambda in [-2.25, 0.0] {
        let refused = predictor_times(lambda, 10.0).is_err();
        c.truth(
            &format!("predictor refuses λ = {lambda}"),
            refused,
            format!("refused = {refused}"),
        );
    }
    c.run("negative branch", |c| {
        let sys = worked_example();
        let s0 = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let traj = integrate_curve(&sys, &s0, 10.0, 1e-10)?;
        let trace = track_spectrum(&traj)?;
        let b = (0..2)
            .find(|&i| trace.values[0][i].re < 0.0)
            .expect("negative branch");
        let cmp = verify_predictor(&sys, &s0, &trace, b, 10.0, &ConjugateOptions::default())?;
        c.truth(
            "λ2 = -9/4 branch has no predicted times",
            cmp.refused.is_some() && cmp.predicted.is_empty(),
            format!("{:?}", cmp.refused),
        );
        // shooting events come from the λ1 = 1 direction only: Y(t) ∂y stays away from zero
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(2, 2), &Matrix::identity(2, 2))?;
        let r = find_conjugate_points(&sys, &s0, 10.0, &ConjugateOptions::default())?;
        let mut smallest = f64::INFINITY;
        for e in &r.events {
            let y = sol.at(e.t).0;
            smallest = smallest.min(y.column(1).norm());
        }
        c.truth(
            "no event kernel along the λ2 eigenvector",
            smallest > 1e-2,
            format!("min |Y(t_k) e2| = {smallest:.3e}"),
        );
        Ok(())
    });
    c.run("generic flag", |c| {
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 2.0, 0.9), &[0.0, 0.0, 1.0], 10.0)?;
        c.truth(
            "generic rigid body marked invalid",
            !r.valid && !r.report.warnings.is_empty(),
            format!(
                "valid = {}, commutator residual = {:.3e}",
                r.valid, r.commutator_residual
            ),
        );
        Ok(())
    });
    c
}

#[test]
fn acceptance() {
    let criteria = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
    ];
    let results: Vec<bool> = criteria
        .iter()
        .enumerate()
        .map(|(k, c)| c.report(k + 1))
        .collect();
    assert!(
        results.iter().all(|&ok| ok),
        "failing criteria: {:?}",
        results
            .iter()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(k, _)| k + 1)
            .collect::<Vec<_>>()
    );
}
