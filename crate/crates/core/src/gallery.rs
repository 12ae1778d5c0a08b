//! Built-in example systems with closed-form expectations.
//!
//! | name | system | headline value |
//! |------|--------|----------------|
//! | `worked-example` | `x'' = -x`, `y'' = (y' + x x')³ - x'² + x² - 1` | conjugate times `kπ` |
//! | `torus` | geodesics of `φ'² + (a + b cos φ)² θ'²` | first conjugate time `π/√K(0)` |
//! | `rigid-body` | Euler equations on so(3), lifted to Euler angles | `2π I1/(I3 Ω)` and `π/Ω` |
//! | `se2-canonical` | canonical connection on SE(2) | conjugate times `2kπ/ż0` |
//!
//! [`gallery_verify`] runs the full pipeline on an entry and compares each
//! result against its stored expectation.

use std::f64::consts::PI;

use serde::Serialize;

use crate::conjugate::{find_conjugate_points, verify_predictor, ConjugateOptions};
use crate::flow::{
    default_fd_step, exp_jacobian_fd, integrate_curve, integrate_jacobi_matrix, parallel_transport,
};
use crate::geometry::{
    commutator_nabla_phi_phi, jacobi_endomorphism, max_abs, nabla_phi, phi_t, random_states,
    spray_check,
};
use crate::liegroup::{
    frame_commutator, frame_phi, lift_to_group, releq_conjugate_times, Frame, LieAlgebraData,
    ReducedSystem,
};
use crate::spectral::{decompose, track_spectrum};
use crate::{Error, Matrix, Result, SodeSystem, TangentState};

pub const NAMES: [&str; 4] = ["worked-example", "torus", "rigid-body", "se2-canonical"];

/// A stored expectation and where it comes from.
#[derive(Debug, Clone, Serialize)]
pub struct Expected {
    pub label: String,
    pub value: f64,
    pub provenance: String,
}

#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub name: String,
    pub description: String,
    pub system: SodeSystem,
    pub reduced: Option<ReducedSystem>,
    pub frame: Option<Frame>,
    /// Distinguished initial states; the first is the default.
    pub states: Vec<(String, TangentState)>,
    pub expected: Vec<Expected>,
}

impl GalleryEntry {
    pub fn default_state(&self) -> &TangentState {
        &self.states[0].1
    }

    pub fn expected(&self, label: &str) -> &Expected {
        self.expected
            .iter()
            .find(|e| e.label == label)
            .expect("expectation is registered")
    }
}

fn expect(label: &str, value: f64, provenance: &str) -> Expected {
    Expected {
        label: label.into(),
        value,
        provenance: provenance.into(),
    }
}

pub fn gallery_list() -> Vec<&'static str> {
    NAMES.to_vec()
}

pub fn lookup(name: &str) -> Result<GalleryEntry> {
    match name {
        "worked-example" => Ok(worked_example_entry()),
        "torus" => Ok(torus_entry(2.0, 1.0)),
        "rigid-body" => Ok(rigid_body_entry()),
        "se2-canonical" => Ok(se2_entry(1.0)),
        _ => Err(Error::NotFound(name.into())),
    }
}

pub fn worked_example() -> SodeSystem {
    SodeSystem::parse(&["x", "y"], &["-x", "(vy + x*vx)^3 - vx^2 + x^2 - 1"], &[]).expect("valid")
}

/// Geodesics of the torus of revolution with radii `a > b > 0`.
pub fn torus(a: f64, b: f64) -> SodeSystem {
    SodeSystem::parse(
        &["ph", "th"],
        &[
            "-(a + b*cos(ph))*b*sin(ph)*vth^2",
            "2*b*sin(ph)/(a + b*cos(ph))*vph*vth",
        ],
        &[("a", a), ("b", b)],
    )
    .expect("valid")
}

/// Euler equations of the free rigid body.
pub fn rigid_body_reduced(i1: f64, i2: f64, i3: f64) -> ReducedSystem {
    ReducedSystem::parse(
        LieAlgebraData::so3(),
        &[
            "(I2 - I3)/I1*w2*w3",
            "(I3 - I1)/I2*w3*w1",
            "(I1 - I2)/I3*w1*w2",
        ],
        &[("I1", i1), ("I2", i2), ("I3", i3)],
    )
    .expect("valid")
}

/// Left-invariant frame on SO(3) in Euler angles `(ph, th, ps)`, dual to the
/// body angular velocity; singular at `sin th = 0`.
pub fn euler_angle_frame() -> Frame {
    Frame::parse(
        &["ph", "th", "ps"],
        &[
            &["sin(ps)/sin(th)", "cos(ps)", "-cos(th)*sin(ps)/sin(th)"],
            &["cos(ps)/sin(th)", "-sin(ps)", "-cos(th)*cos(ps)/sin(th)"],
            &["0", "0", "1"],
        ],
        Some(&[
            &["sin(th)*sin(ps)", "cos(ps)", "0"],
            &["sin(th)*cos(ps)", "-sin(ps)", "0"],
            &["cos(th)", "0", "1"],
        ]),
    )
    .expect("valid")
}

pub fn rigid_body_lifted(i1: f64, i2: f64, i3: f64) -> SodeSystem {
    lift_to_group(&rigid_body_reduced(i1, i2, i3), &euler_angle_frame())
        .expect("frame is invertible")
}

/// Lifted state of the relative equilibrium `w = (0, 0, Ω)` at `th = π/2`.
pub fn rigid_body_spin_state(omega: f64) -> TangentState {
    TangentState::new(vec![0.0, PI / 2.0, 0.0], vec![0.0, 0.0, omega])
}

/// Left-invariant frame on SE(2) in `(x, y, z)`.
pub fn se2_frame() -> Frame {
    Frame::parse(
        &["x", "y", "z"],
        &[
            &["cos(z)", "-sin(z)", "0"],
            &["sin(z)", "cos(z)", "0"],
            &["0", "0", "1"],
        ],
        Some(&[
            &["cos(z)", "-sin(z)", "0"],
            &["sin(z)", "cos(z)", "0"],
            &["0", "0", "1"],
        ]),
    )
    .expect("valid")
}

/// Geodesics of the canonical connection on SE(2).
pub fn se2_canonical() -> SodeSystem {
    SodeSystem::parse(&["x", "y", "z"], &["vy*vz", "-vx*vz", "0"], &[]).expect("valid")
}

fn worked_example_entry() -> GalleryEntry {
    GalleryEntry {
        name: "worked-example".into(),
        description:
            "x'' = -x, y'' = (y' + x x')^3 - x'^2 + x^2 - 1 along the relative equilibrium (0, t)"
                .into(),
        system: worked_example(),
        reduced: None,
        frame: None,
        states: vec![(
            "relative equilibrium".into(),
            TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]),
        )],
        expected: vec![
            expect(
                "conjugate times",
                PI,
                "t = kπ, where the Jacobi field sin t ∂/∂x vanishes",
            ),
            expect("phi_11", 1.0, "Φ^1_1 = 1 at (0,0,0,1)"),
            expect(
                "phi_22",
                -2.25,
                "Φ^2_2 = 3(ẏ+xẋ)(¼(ẏ+xẋ)³ - 1) = -9/4 at (0,0,0,1)",
            ),
            expect("commutator", 0.0, "[∇Φ,Φ] = 0 identically"),
            expect("phi_t", 2.25, "Φ(T) = (0, -9/4) at (0,0,0,1): not a spray"),
            expect(
                "jacobi field",
                0.0,
                "J(t) = sin t ∂/∂x solves the Jacobi equation",
            ),
            expect(
                "family",
                0.0,
                "c_s(t) = (s sin t, t - ½ s² sin² t) are base integral curves",
            ),
            expect("predictor gap", 0.0, "λ1 = 1 predicts t = kπ"),
        ],
    }
}

fn torus_entry(a: f64, b: f64) -> GalleryEntry {
    let k0 = b / (a + b);
    GalleryEntry {
        name: "torus".into(),
        description: format!("geodesics of the torus f(φ) = a + b cos φ with a = {a}, b = {b}"),
        system: torus(a, b),
        reduced: None,
        frame: None,
        states: vec![(
            "unit-speed equator".into(),
            TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0 / (a + b)]),
        )],
        expected: vec![
            expect(
                "first conjugate time",
                PI / k0.sqrt(),
                "π/√K(0) with K(0) = b/(a+b)",
            ),
            expect(
                "curvature branch",
                0.0,
                "nonzero eigenvalue of Φ equals K(φ) = -f''/f on unit-speed geodesics",
            ),
            expect("commutator", 0.0, "[Φ,∇Φ] = 0 at every point"),
            expect(
                "spray",
                0.0,
                "geodesic equations are quadratic in velocities",
            ),
            expect("unit speed", 0.0, "φ'² + f²θ'² is conserved"),
        ],
    }
}

fn rigid_body_entry() -> GalleryEntry {
    let omega = 2.0;
    GalleryEntry {
        name: "rigid-body".into(),
        description: "free rigid body: Euler equations on so(3) and their lift to Euler angles (Euler top I = (1, 1, 3/2), Ω = 2)"
            .into(),
        system: rigid_body_lifted(1.0, 1.0, 1.5),
        reduced: Some(rigid_body_reduced(1.0, 1.0, 1.5)),
        frame: Some(euler_angle_frame()),
        states: vec![("spin about the third axis".into(), rigid_body_spin_state(omega))],
        expected: vec![
            expect("euler top time", 2.0 * PI / 3.0, "conjugate point at (I1/(I3 Ω)) 2π, double eigenvalue (I3Ω/2I1)²"),
            expect("flat body time", PI, "conjugate point at π/Ω for I = (1, 2, 3), Ω = 1"),
            expect(
                "generic commutator",
                0.0,
                "[Φ,∇Φ] at (0,0,Ω) has off-diagonal entries ±(Ω⁵/2I1²I2²)(I1-I2)²(I1+I2-I3)³/I_k",
            ),
            expect("generic validity", 0.0, "the commutator hypothesis fails for I = (1, 2, 0.9)"),
            expect("lifted time", 2.0 * PI / 3.0, "shooting on the lifted system reproduces the Euler-top time"),
            expect("transport", 0.0, "V(t) = cos(At) Ê1 - sin(At) Ê2 with A = Ω(2I1 - I3)/(2I1)"),
        ],
    }
}

fn se2_entry(z0: f64) -> GalleryEntry {
    GalleryEntry {
        name: "se2-canonical".into(),
        description: format!(
            "canonical connection on SE(2): x'' = y'z', y'' = -x'z', z'' = 0, ż0 = {z0}"
        ),
        system: se2_canonical(),
        reduced: Some(ReducedSystem::canonical(LieAlgebraData::se2())),
        frame: Some(se2_frame()),
        states: vec![(
            "rotation".into(),
            TangentState::new(vec![0.0; 3], vec![0.0, 0.0, z0]),
        )],
        expected: vec![
            expect("det formula", 0.0, "det Y(t) = (2t/ż0²)(1 - cos ż0 t)"),
            expect(
                "conjugate times",
                2.0 * PI / z0,
                "t = 2kπ/ż0 with multiplicity 2",
            ),
            expect("exp jacobian", 0.0, "d exp agrees with the shooting matrix"),
            expect(
                "frame eigenvalue",
                z0 * z0 / 4.0,
                "φ has eigenvalues ż0²/4 (double) and 0",
            ),
            expect(
                "group point",
                0.0,
                "all geodesics with ż0 = 1 pass through (0, 0, 2π) at t = 2π",
            ),
            expect("nabla phi", 0.0, "∇Φ = 0"),
        ],
    }
}

/// One verification line.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub expected: f64,
    pub observed: f64,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub provenance: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Integration tolerance.
    pub tol: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: 1e-10,
            seed: 7,
        }
    }
}

struct Checks<'a> {
    entry: &'a GalleryEntry,
    out: Vec<Check>,
}

impl Checks<'_> {
    /// Record `|observed - expected| <= tolerance`.
    fn value(&mut self, label: &str, observed: f64, tolerance: f64) {
        let e = self.entry.expected(label);
        self.push(
            label,
            e.value,
            observed,
            (observed - e.value).abs(),
            tolerance,
        );
    }

    /// Record a precomputed error against `tolerance`.
    fn error(&mut self, label: &str, observed: f64, error: f64, tolerance: f64) {
        let e = self.entry.expected(label);
        self.push(label, e.value, observed, error, tolerance);
    }

    fn push(&mut self, label: &str, expected: f64, observed: f64, error: f64, tolerance: f64) {
        let provenance = self.entry.expected(label).provenance.clone();
        self.out.push(Check {
            label: label.into(),
            expected,
            observed,
            error,
            tolerance,
            passed: error <= tolerance,
            provenance,
        });
    }

    /// Record a failure caused by an error in the pipeline.
    fn failed(&mut self, label: &str, err: &Error) {
        let e = self.entry.expected(label);
        self.out.push(Check {
            label: label.into(),
            expected: e.value,
            observed: f64::NAN,
            error: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
            provenance: format!("{} (pipeline error: {err})", e.provenance),
        });
    }

    fn run(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.failed(label, &e);
        }
    }
}

pub fn gallery_verify(name: &str, opts: &VerifyOptions) -> Result<VerifyReport> {
    let entry = lookup(name)?;
    let mut c = Checks {
        entry: &entry,
        out: Vec::new(),
    };
    let copts = ConjugateOptions::with_tol(opts.tol)?;
    match name {
        "worked-example" => verify_worked(&mut c, opts, &copts),
        "torus" => verify_torus(&mut c, opts, &copts),
        "rigid-body" => verify_rigid(&mut c, opts, &copts),
        _ => verify_se2(&mut c, opts, &copts),
    }
    let checks = c.out;
    Ok(VerifyReport {
        name: name.into(),
        passed: checks.iter().all(|k| k.passed),
        checks,
    })
}

fn max_dev(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).abs().max()
}

fn verify_worked(c: &mut Checks, o: &VerifyOptions, copts: &ConjugateOptions) {
    let sys = c.entry.system.clone();
    let s0 = c.entry.default_state().clone();
    c.run("conjugate times", |c| {
        let r = find_conjugate_points(&sys, &s0, 10.0, copts)?;
        let mut err = if r.events.len() == 3 {
            0.0
        } else {
            f64::INFINITY
        };
        for (k, e) in r.events.iter().enumerate() {
            err = err.max((e.t - (k + 1) as f64 * PI).abs());
            if e.multiplicity != 1 {
                err = f64::INFINITY;
            }
        }
        c.error(
            "conjugate times",
            r.events.first().map_or(f64::NAN, |e| e.t),
            err,
            1e-6,
        );
        Ok(())
    });
    c.run("phi_11", |c| {
        let phi = jacobi_endomorphism(&sys, &s0)?;
        c.value("phi_11", phi[(0, 0)], 1e-9);
        c.value("phi_22", phi[(1, 1)], 1e-9);
        Ok(())
    });
    c.run("commutator", |c| {
        let mut worst = 0.0f64;
        for s in random_states(2, 20, 1.0, o.seed) {
            worst = worst.max(max_abs(&commutator_nabla_phi_phi(&sys, &s)?));
        }
        c.value("commutator", worst, 1e-9);
        Ok(())
    });
    c.run("phi_t", |c| {
        let pt = phi_t(&sys, &s0)?;
        let spray = spray_check(&sys, &random_states(2, 50, 1.0, o.seed))?;
        let err = (pt[1] + 2.25).abs().max(pt[0].abs())
            + if spray.is_spray { f64::INFINITY } else { 0.0 };
        c.error("phi_t", -pt[1], err, 1e-9);
        Ok(())
    });
    c.run("jacobi field", |c| {
        let traj = integrate_curve(&sys, &s0, PI, o.tol)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(2, 2), &Matrix::identity(2, 2))?;
        let mut err = 0.0f64;
        for k in 0..sol.len() {
            let y = sol.y(k);
            let t = sol.times()[k];
            err = err.max((y[(0, 0)] - t.sin()).abs()).max(y[(1, 0)].abs());
        }
        c.value("jacobi field", err, 1e-7);
        Ok(())
    });
    c.run("family", |c| {
        let mut err = 0.0f64;
        for s in [0.05, 0.1, 0.2] {
            // u = y' + x x' obeys u' = u³ - 1, so errors grow like e^{3t}; stay on [0, π]
            let traj = integrate_curve(
                &sys,
                &TangentState::new(vec![0.0, 0.0], vec![s, 1.0]),
                PI,
                o.tol,
            )?;
            for k in 1..=20 {
                let t = k as f64 * PI / 20.0;
                let q = traj.at(t).q;
                let (x, y) = (s * t.sin(), t - 0.5 * s * s * t.sin().powi(2));
                err = err.max((q[0] - x).abs()).max((q[1] - y).abs());
            }
        }
        c.value("family", err, 1e-7);
        Ok(())
    });
    c.run("predictor gap", |c| {
        let traj = integrate_curve(&sys, &s0, 10.0, o.tol)?;
        let trace = track_spectrum(&traj)?;
        let b = (0..trace.branches.len())
            .min_by(|&i, &j| {
                (trace.values[0][i].re - 1.0)
                    .abs()
                    .total_cmp(&(trace.values[0][j].re - 1.0).abs())
            })
            .expect("two branches");
        let cmp = verify_predictor(&sys, &s0, &trace, b, 10.0, copts)?;
        let gap = cmp.gaps.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let err = if cmp.predicted.len() == 3 && cmp.refused.is_none() {
            gap
        } else {
            f64::INFINITY
        };
        c.value("predictor gap", err, 1e-6);
        Ok(())
    });
}

/// Unit-speed geodesic from the equator at heading `alpha` from the meridian.
pub fn torus_geodesic_state(a: f64, b: f64, alpha: f64) -> TangentState {
    TangentState::new(vec![0.0, 0.0], vec![alpha.cos(), alpha.sin() / (a + b)])
}

fn verify_torus(c: &mut Checks, o: &VerifyOptions, copts: &ConjugateOptions) {
    let sys = c.entry.system.clone();
    let (a, b) = (2.0, 1.0);
    let s0 = c.entry.default_state().clone();
    let expected = c.entry.expected("first conjugate time").value;
    c.run("first conjugate time", |c| {
        let r = find_conjugate_points(&sys, &s0, expected + 0.5, copts)?;
        let t = r.events.first().map_or(f64::NAN, |e| e.t);
        c.value(
            "first conjugate time",
            if t.is_nan() { f64::INFINITY } else { t },
            1e-5,
        );
        Ok(())
    });
    c.run("curvature branch", |c| {
        let mut err = 0.0f64;
        for s in [0.8f64, 0.9, 0.95] {
            let st = torus_geodesic_state(a, b, s.asin());
            let traj = integrate_curve(&sys, &st, 10.0, o.tol)?;
            let trace = track_spectrum(&traj)?;
            let kappa = |ph: f64| b * ph.cos() / (a + b * ph.cos());
            let br = (0..2)
                .min_by(|&i, &j| {
                    (trace.values[0][i].re - kappa(0.0))
                        .abs()
                        .total_cmp(&(trace.values[0][j].re - kappa(0.0)).abs())
                })
                .expect("two branches");
            for k in 0..traj.len() {
                err = err.max((trace.values[k][br].re - kappa(traj.node(k)[0])).abs());
            }
        }
        c.value("curvature branch", err, 1e-6);
        Ok(())
    });
    c.run("commutator", |c| {
        let mut worst = 0.0f64;
        for s in random_states(2, 20, 1.0, o.seed) {
            worst = worst.max(max_abs(&commutator_nabla_phi_phi(&sys, &s)?));
        }
        c.value("commutator", worst, 1e-9);
        Ok(())
    });
    c.run("spray", |c| {
        let r = spray_check(&sys, &random_states(2, 50, 1.0, o.seed))?;
        c.value("spray", r.max_nabla_t.max(r.max_phi_t), 1e-9);
        Ok(())
    });
    c.run("unit speed", |c| {
        let mut err = 0.0f64;
        for alpha in [PI / 2.0, 0.9f64.asin(), 0.3] {
            let traj = integrate_curve(&sys, &torus_geodesic_state(a, b, alpha), 10.0, o.tol)?;
            for k in 0..traj.len() {
                let y = traj.node(k);
                let f = a + b * y[0].cos();
                err = err.max((y[2] * y[2] + f * f * y[3] * y[3] - 1.0).abs());
            }
        }
        c.value("unit speed", err, 1e-8);
        Ok(())
    });
}

/// Relative deviation of the frame commutator at `(0, 0, Ω)` from its closed form.
pub fn rigid_body_commutator_error(i1: f64, i2: f64, i3: f64, omega: f64) -> Result<f64> {
    let m = frame_commutator(&rigid_body_reduced(i1, i2, i3), &[0.0, 0.0, omega])?;
    let k = omega.powi(5) * (i1 - i2).powi(2) * (i1 + i2 - i3).powi(3) / (2.0 * i1 * i1 * i2 * i2);
    let mut expected = Matrix::zeros(3, 3);
    expected[(0, 1)] = -k / i1;
    expected[(1, 0)] = k / i2;
    Ok(max_dev(&m, &expected) / k.abs().max(f64::MIN_POSITIVE))
}

fn verify_rigid(c: &mut Checks, o: &VerifyOptions, copts: &ConjugateOptions) {
    c.run("euler top time", |c| {
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 1.0, 1.5), &[0.0, 0.0, 2.0], 3.0)?;
        let e = r.report.events.first();
        let t = e
            .filter(|e| e.multiplicity == 2 && r.valid)
            .map_or(f64::INFINITY, |e| e.t);
        c.value("euler top time", t, 1e-5);
        Ok(())
    });
    c.run("flat body time", |c| {
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 2.0, 3.0), &[0.0, 0.0, 1.0], 4.0)?;
        c.value(
            "flat body time",
            r.report.events.first().map_or(f64::INFINITY, |e| e.t),
            1e-5,
        );
        Ok(())
    });
    c.run("generic commutator", |c| {
        c.value(
            "generic commutator",
            rigid_body_commutator_error(1.0, 2.0, 0.9, 1.0)?,
            1e-8,
        );
        let r = releq_conjugate_times(&rigid_body_reduced(1.0, 2.0, 0.9), &[0.0, 0.0, 1.0], 10.0)?;
        c.value("generic validity", if r.valid { 1.0 } else { 0.0 }, 0.0);
        Ok(())
    });
    let sys = c.entry.system.clone();
    let s0 = c.entry.default_state().clone();
    c.run("lifted time", |c| {
        let r = find_conjugate_points(&sys, &s0, 3.0, copts)?;
        let t = r
            .events
            .first()
            .filter(|e| e.multiplicity == 2)
            .map_or(f64::INFINITY, |e| e.t);
        c.value("lifted time", t, 1e-5);
        Ok(())
    });
    c.run("transport", |c| {
        c.value(
            "transport",
            euler_top_transport_error(1.0, 1.5, 2.0, 5.0, o.tol)?,
            1e-6,
        );
        Ok(())
    });
}

/// Largest deviation of the parallel transport of `Ê1` along the lifted
/// Euler-top spin from `cos(At) Ê1 - sin(At) Ê2`.
pub fn euler_top_transport_error(
    i1: f64,
    i3: f64,
    omega: f64,
    t_end: f64,
    tol: f64,
) -> Result<f64> {
    let sys = rigid_body_lifted(i1, i1, i3);
    let frame = euler_angle_frame();
    let s0 = rigid_body_spin_state(omega);
    let traj = integrate_curve(&sys, &s0, t_end, tol)?;
    let e0 = frame.matrix(&s0.q)?;
    let tr = parallel_transport(&traj, &e0.column(0).iter().copied().collect::<Vec<_>>())?;
    let a = omega * (2.0 * i1 - i3) / (2.0 * i1);
    let mut err = 0.0f64;
    for (k, &t) in tr.t.iter().enumerate() {
        let e = frame.matrix(&tr.base[k].q)?;
        let want = e.column(0) * (a * t).cos() - e.column(1) * (a * t).sin();
        for i in 0..3 {
            err = err.max((tr.field[k][i] - want[i]).abs());
        }
    }
    Ok(err)
}

/// `(2t/ż0²)(1 - cos ż0 t)`.
pub fn se2_det(z0: f64, t: f64) -> f64 {
    2.0 * t / (z0 * z0) * (1.0 - (z0 * t).cos())
}

fn verify_se2(c: &mut Checks, o: &VerifyOptions, copts: &ConjugateOptions) {
    let sys = c.entry.system.clone();
    let s0 = c.entry.default_state().clone();
    let z0 = s0.v[2];
    c.run("det formula", |c| {
        let traj = integrate_curve(&sys, &s0, 13.0, o.tol)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(3, 3), &Matrix::identity(3, 3))?;
        let mut err = 0.0f64;
        for k in 0..sol.len() {
            let t = sol.times()[k];
            if t >= 0.1 {
                let want = se2_det(z0, t);
                err = err.max((sol.det(k) - want).abs() / want.abs().max(1.0));
            }
        }
        c.value("det formula", err, 1e-6);
        Ok(())
    });
    c.run("conjugate times", |c| {
        let r = find_conjugate_points(&sys, &s0, 13.0, copts)?;
        let step = 2.0 * PI / z0;
        let mut err = if r.events.len() == 2 {
            0.0
        } else {
            f64::INFINITY
        };
        for (k, e) in r.events.iter().enumerate() {
            err = err.max((e.t - (k + 1) as f64 * step).abs());
            if e.multiplicity != 2 {
                err = f64::INFINITY;
            }
        }
        c.error(
            "conjugate times",
            r.events.first().map_or(f64::NAN, |e| e.t),
            err,
            1e-6,
        );
        Ok(())
    });
    c.run("exp jacobian", |c| {
        let traj = integrate_curve(&sys, &s0, 5.0, o.tol)?;
        let sol = integrate_jacobi_matrix(&traj, &Matrix::zeros(3, 3), &Matrix::identity(3, 3))?;
        let mut err = 0.0f64;
        for t in [1.0, 2.5, 4.0] {
            let fd = exp_jacobian_fd(&sys, &s0.q, &s0.v, t, default_fd_step(&s0.v))?;
            err = err.max(max_dev(&fd, &sol.at(t).0));
        }
        c.value("exp jacobian", err, 1e-4);
        Ok(())
    });
    c.run("frame eigenvalue", |c| {
        let red = c
            .entry
            .reduced
            .clone()
            .expect("se2 entry has a reduced system");
        let spec = decompose(&frame_phi(&red, &[0.0, 0.0, z0])?);
        let mut vals: Vec<f64> = spec.values.iter().map(|v| v.re).collect();
        vals.sort_by(f64::total_cmp);
        let imag = spec.values.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
        let q = z0 * z0 / 4.0;
        let err = vals[0]
            .abs()
            .max((vals[1] - q).abs())
            .max((vals[2] - q).abs())
            .max(imag);
        c.error("frame eigenvalue", vals[2], err, 1e-12);
        Ok(())
    });
    c.run("group point", |c| {
        let mut err = 0.0f64;
        let t = 2.0 * PI / z0;
        for v in [[0.3, -0.2], [-0.5, 0.7], [1.0, 1.0]] {
            let traj = integrate_curve(
                &sys,
                &TangentState::new(vec![0.0; 3], vec![v[0], v[1], z0]),
                t,
                o.tol,
            )?;
            let q = traj.last().q;
            err = err
                .max(q[0].abs())
                .max(q[1].abs())
                .max((q[2] - 2.0 * PI).abs());
        }
        c.value("group point", err, 1e-6);
        Ok(())
    });
    c.run("nabla phi", |c| {
        let mut worst = 0.0f64;
        for s in random_states(3, 20, 1.0, o.seed) {
            worst = worst.max(max_abs(&nabla_phi(&sys, &s)?));
        }
        c.value("nabla phi", worst, 1e-9);
        Ok(())
    });
}
