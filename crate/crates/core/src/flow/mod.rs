//! Integral curves, parallel transport, Jacobi fields and the exponential map.

mod dopri;
mod jacobi;

use std::fmt::Write as _;

pub use dopri::{integrate, Dense, Options, Stopped};
pub(crate) use jacobi::integrate_jacobi_partial;
pub use jacobi::{
    advance_jacobi, integrate_jacobi_matrix, integrate_jacobi_replay, integrate_jacobi_with,
    JacobiForm, JacobiMatrixSolution,
};

use crate::{format_float, Error, Matrix, Result, SodeSystem, TangentState};

/// Integrator options for a scalar tolerance: `rtol = tol`, `atol = tol/100`.
pub fn options_for_tol(tol: f64) -> Result<Options> {
    if !(1e-14..=1e-3).contains(&tol) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} outside [1e-14, 1e-3]"
        )));
    }
    Ok(Options {
        rtol: tol,
        atol: tol * 1e-2,
        ..Options::default()
    })
}

pub(crate) fn check_horizon(t_end: f64) -> Result<()> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "end time must be positive, got {t_end}"
        )));
    }
    Ok(())
}

/// Dense numerical solution `(q(t), v(t))` of a base integral curve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    system: SodeSystem,
    dense: Dense,
    pub rtol: f64,
    pub atol: f64,
}

impl Trajectory {
    pub fn system(&self) -> &SodeSystem {
        &self.system
    }

    pub fn times(&self) -> &[f64] {
        &self.dense.t
    }

    pub fn len(&self) -> usize {
        self.dense.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.t.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self
            .dense
            .t
            .last()
            .expect("trajectory has its initial node")
    }

    /// Flat `[q, v]` at node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.dense.y[i]
    }

    pub fn state(&self, i: usize) -> TangentState {
        TangentState::from_flat(&self.dense.y[i]).expect("even length")
    }

    /// Interpolated state; exact at nodes.
    pub fn at(&self, t: f64) -> TangentState {
        TangentState::from_flat(&self.dense.eval(t)).expect("even length")
    }

    pub fn initial(&self) -> TangentState {
        self.state(0)
    }

    pub fn last(&self) -> TangentState {
        self.state(self.len() - 1)
    }

    pub fn options(&self) -> Options {
        Options {
            rtol: self.rtol,
            atol: self.atol,
            ..Options::default()
        }
    }

    /// CSV with header `t,q1..qn,v1..vn`.
    pub fn to_csv(&self) -> String {
        let n = self.system.dim();
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",q{i}").unwrap();
        }
        for i in 1..=n {
            write!(out, ",v{i}").unwrap();
        }
        out.push('\n');
        for (t, y) in self.dense.t.iter().zip(&self.dense.y) {
            out.push_str(&format_float(*t));
            for x in y {
                out.push(',');
                out.push_str(&format_float(*x));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn truncated(stop: Stopped, partial: Option<Trajectory>) -> Error {
    Error::Truncated {
        t: stop.t,
        reason: stop.reason,
        partial: partial.map(Box::new),
    }
}

/// Integrate `q'' = f(q, q')` from `s0` over `[0, t_end]`.
pub fn integrate_curve(
    sys: &SodeSystem,
    s0: &TangentState,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory> {
    integrate_curve_with(sys, s0, t_end, &options_for_tol(tol)?)
}

pub fn integrate_curve_with(
    sys: &SodeSystem,
    s0: &TangentState,
    t_end: f64,
    opts: &Options,
) -> Result<Trajectory> {
    sys.check_state(s0)?;
    check_horizon(t_end)?;
    let n = sys.dim();
    let derived = sys.derived();
    let mut stack = Vec::new();
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[..n].copy_from_slice(&y[n..]);
        lift(derived.forces_into(y, &mut dy[n..], &mut stack))
    };
    let (dense, stop) = integrate(rhs, 0.0, &s0.flat(), t_end, opts);
    let traj = Trajectory {
        system: sys.clone(),
        dense,
        rtol: opts.rtol,
        atol: opts.atol,
    };
    match stop {
        None => Ok(traj),
        Some(s) => Err(truncated(s, Some(traj))),
    }
}

/// A vector field along a trajectory, sampled on the trajectory grid.
#[derive(Debug, Clone)]
pub struct Transport {
    pub t: Vec<f64>,
    pub field: Vec<Vec<f64>>,
    /// `V'` at the same nodes.
    pub rate: Vec<Vec<f64>>,
    /// Base states at the same nodes.
    pub base: Vec<TangentState>,
}

/// Solve `V' + Γ(c(t))·V = 0` with `V(0) = w0` along `traj`.
///
/// The base curve is re-integrated alongside `V` from the trajectory's initial
/// state, with every trajectory node forced onto the grid.
pub fn parallel_transport(traj: &Trajectory, w0: &[f64]) -> Result<Transport> {
    let sys = traj.system();
    let n = sys.dim();
    if w0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: w0.len(),
        });
    }
    let derived = sys.derived();
    let mut stack = Vec::new();
    let mut dq = vec![0.0; n * n];
    let mut dv = vec![0.0; n * n];
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| {
        let base = &y[..2 * n];
        out[..n].copy_from_slice(&y[n..2 * n]);
        lift(derived.forces_into(base, &mut out[n..2 * n], &mut stack))?;
        lift(derived.jacobians_into(base, &mut dq, &mut dv, &mut stack))?;
        let field = &y[2 * n..];
        for i in 0..n {
            // Γ = -½ ∂f/∂v
            out[2 * n + i] = (0..n).map(|j| 0.5 * dv[i * n + j] * field[j]).sum();
        }
        Ok(())
    };
    let mut y0 = traj.node(0).to_vec();
    y0.extend_from_slice(w0);
    let opts = Options {
        stops: traj.times().to_vec(),
        blowup_prefix: Some(2 * n),
        ..traj.options()
    };
    let (dense, stop) = integrate(rhs, traj.times()[0], &y0, traj.t_end(), &opts);
    if let Some(s) = stop {
        return Err(truncated(s, None));
    }
    let mut out = Transport {
        t: Vec::new(),
        field: Vec::new(),
        rate: Vec::new(),
        base: Vec::new(),
    };
    let mut k = 0;
    for &t in traj.times() {
        while dense.t[k] < t {
            k += 1;
        }
        out.t.push(t);
        out.field.push(dense.y[k][2 * n..].to_vec());
        out.rate.push(dense.dy[k][2 * n..].to_vec());
        out.base
            .push(TangentState::from_flat(&dense.y[k][..2 * n]).expect("even length"));
    }
    Ok(out)
}

pub(crate) fn lift(r: Result<()>) -> std::result::Result<(), crate::expr::ExprError> {
    r.map_err(|e| match e {
        Error::Expr(e) => e,
        other => unreachable!("{other}"),
    })
}

/// Configuration reached at `t1` by the solution through `(m0, v)`.
pub fn exponential_map(sys: &SodeSystem, m0: &[f64], v: &[f64], t1: f64) -> Result<Vec<f64>> {
    exponential_map_with(sys, m0, v, t1, &Options::default())
}

pub fn exponential_map_with(
    sys: &SodeSystem,
    m0: &[f64],
    v: &[f64],
    t1: f64,
    opts: &Options,
) -> Result<Vec<f64>> {
    let s0 = TangentState::new(m0.to_vec(), v.to_vec());
    sys.check_state(&s0)?;
    if t1 == 0.0 {
        return Ok(m0.to_vec());
    }
    let traj = integrate_curve_with(sys, &s0, t1, opts)?;
    Ok(traj.last().q)
}

/// Default central-difference step `1e-5·max(1, |v|)`.
pub fn default_fd_step(v: &[f64]) -> f64 {
    1e-5 * v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0)
}

/// `T_v exp` by central differences: column `k` is
/// `(exp(v + h e_k) - exp(v - h e_k)) / 2h`.
pub fn exp_jacobian_fd(sys: &SodeSystem, m0: &[f64], v: &[f64], t1: f64, h: f64) -> Result<Matrix> {
    if !(1e-8..=1e-2).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-8, 1e-2]"
        )));
    }
    let n = sys.dim();
    let opts = Options {
        rtol: 1e-12,
        atol: 1e-14,
        ..Options::default()
    };
    let mut jac = Matrix::zeros(n, n);
    for k in 0..n {
        let mut vp = v.to_vec();
        let mut vm = v.to_vec();
        vp[k] += h;
        vm[k] -= h;
        let ep = exponential_map_with(sys, m0, &vp, t1, &opts)?;
        let em = exponential_map_with(sys, m0, &vm, t1, &opts)?;
        for i in 0..n {
            jac[(i, k)] = (ep[i] - em[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn worked() -> SodeSystem {
        SodeSystem::parse(&["x", "y"], &["-x", "(vy + x*vx)^3 - vx^2 + x^2 - 1"], &[]).unwrap()
    }

    #[test]
    fn worked_relative_equilibrium() {
        let s0 = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let tr = integrate_curve(&worked(), &s0, PI, 1e-10).unwrap();
        let end = tr.last();
        assert!(end.q[0].abs() < 1e-8 && (end.q[1] - PI).abs() < 1e-8);
        assert!(end.v[0].abs() < 1e-8 && (end.v[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn free_particle_is_linear() {
        let sys = SodeSystem::parse(&["a", "b"], &["0", "0"], &[]).unwrap();
        let s0 = TangentState::new(vec![1.0, -2.0], vec![0.5, 3.0]);
        let tr = integrate_curve(&sys, &s0, 4.0, 1e-10).unwrap();
        let end = tr.last();
        assert!((end.q[0] - 3.0).abs() < 1e-13 && (end.q[1] - 10.0).abs() < 1e-13);
    }

    #[test]
    fn transport_along_worked_equilibrium_keeps_first_axis() {
        let s0 = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let tr = integrate_curve(&worked(), &s0, 5.0, 1e-10).unwrap();
        let v = parallel_transport(&tr, &[1.0, 0.0]).unwrap();
        for f in &v.field {
            assert!((f[0] - 1.0).abs() < 1e-10 && f[1].abs() < 1e-10);
        }
        let zero = parallel_transport(&tr, &[0.0, 0.0]).unwrap();
        assert!(zero.field.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn blowup_is_truncated_with_partial_result() {
        let sys = SodeSystem::parse(&["x"], &["2*x^3"], &[]).unwrap();
        let s0 = TangentState::new(vec![1.0], vec![1.0]);
        match integrate_curve(&sys, &s0, 5.0, 1e-10) {
            Err(Error::Truncated {
                t,
                partial: Some(p),
                ..
            }) => {
                // x = 1/(1 - t)
                assert!((t - 1.0).abs() < 1e-4);
                assert!(p.len() > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn domain_error_mid_flight_carries_time() {
        let sys = SodeSystem::parse(&["x"], &["-1/sqrt(x)"], &[]).unwrap();
        let s0 = TangentState::new(vec![1.0], vec![0.0]);
        let err = integrate_curve(&sys, &s0, 10.0, 1e-8).unwrap_err();
        assert!(
            err.is_domain() || matches!(err, Error::Truncated { .. }),
            "{err}"
        );
    }

    #[test]
    fn exp_map_at_zero_time_is_constant() {
        let m0 = [0.3, -0.2];
        assert_eq!(
            exponential_map(&worked(), &m0, &[4.0, 1.0], 0.0).unwrap(),
            m0.to_vec()
        );
    }

    #[test]
    fn tolerance_range_is_enforced() {
        assert!(options_for_tol(1e-2).is_err());
        assert!(options_for_tol(1e-15).is_err());
        assert!(options_for_tol(1e-8).is_ok());
    }

    #[test]
    fn csv_header() {
        let s0 = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let tr = integrate_curve(&worked(), &s0, 0.5, 1e-8).unwrap();
        assert!(tr.to_csv().starts_with("t,q1,q2,v1,v2\n"));
    }
}
