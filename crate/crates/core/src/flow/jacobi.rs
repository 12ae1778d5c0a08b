use std::fmt::Write as _;

use super::{check_horizon, integrate, lift, truncated, Dense, Options, Stopped, Trajectory};
use crate::{format_float, Error, Matrix, Result, SodeSystem, TangentState};

/// Which form of the Jacobi equation to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobiForm {
    /// `J'' = (∂f/∂q) J + (∂f/∂v) J'`.
    Variational,
    /// `J'' + 2Γ J' + (D(Γ) + Γ² + Φ) J = 0`.
    Covariant,
}

/// Matrix solution `Y(t)` of the Jacobi equation, integrated together with the base curve.
///
/// The augmented state is `[q, v, Y, Y']` with `Y` row-major.
#[derive(Debug, Clone)]
pub struct JacobiMatrixSolution {
    system: SodeSystem,
    dense: Dense,
    pub form: JacobiForm,
    pub y0: Matrix,
    pub ydot0: Matrix,
    pub rtol: f64,
    pub atol: f64,
}

fn unpack(n: usize, flat: &[f64]) -> Matrix {
    Matrix::from_row_slice(n, n, flat)
}

impl JacobiMatrixSolution {
    pub fn system(&self) -> &SodeSystem {
        &self.system
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
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
        *self.dense.t.last().expect("initial node")
    }

    pub fn base(&self, i: usize) -> TangentState {
        let n = self.dim();
        TangentState::from_flat(&self.dense.y[i][..2 * n]).expect("even length")
    }

    pub fn y(&self, i: usize) -> Matrix {
        let n = self.dim();
        unpack(n, &self.dense.y[i][2 * n..2 * n + n * n])
    }

    pub fn ydot(&self, i: usize) -> Matrix {
        let n = self.dim();
        unpack(n, &self.dense.y[i][2 * n + n * n..])
    }

    /// `Y''` at node `i` as produced by the right-hand side.
    pub fn yddot(&self, i: usize) -> Matrix {
        let n = self.dim();
        unpack(n, &self.dense.dy[i][2 * n + n * n..])
    }

    /// Full augmented node `[q, v, Y, Y']`.
    pub fn augmented(&self, i: usize) -> &[f64] {
        &self.dense.y[i]
    }

    pub fn det(&self, i: usize) -> f64 {
        self.y(i).determinant()
    }

    /// Interpolated `(Y, Y')`; exact at nodes.
    pub fn at(&self, t: f64) -> (Matrix, Matrix) {
        let n = self.dim();
        let a = self.dense.eval(t);
        (
            unpack(n, &a[2 * n..2 * n + n * n]),
            unpack(n, &a[2 * n + n * n..]),
        )
    }

    /// Index of the node at exactly `t`, if any.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        self.dense.t.binary_search_by(|x| x.total_cmp(&t)).ok()
    }

    /// Index of the last node with time `<= t`.
    pub fn node_before(&self, t: f64) -> usize {
        self.dense.locate(t)
    }

    pub fn options(&self) -> Options {
        Options {
            rtol: self.rtol,
            atol: self.atol,
            ..Options::default()
        }
    }

    /// CSV with header `t,Y_11..Y_nn,det`.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::from("t");
        for i in 1..=n {
            for j in 1..=n {
                write!(out, ",Y_{i}{j}").unwrap();
            }
        }
        out.push_str(",det\n");
        for k in 0..self.len() {
            out.push_str(&format_float(self.dense.t[k]));
            let y = self.y(k);
            for i in 0..n {
                for j in 0..n {
                    out.push(',');
                    out.push_str(&format_float(y[(i, j)]));
                }
            }
            out.push(',');
            out.push_str(&format_float(y.determinant()));
            out.push('\n');
        }
        out
    }
}

struct Rhs<'a> {
    sys: &'a SodeSystem,
    form: JacobiForm,
    stack: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(sys: &'a SodeSystem, form: JacobiForm) -> Self {
        let n = sys.dim();
        Rhs {
            sys,
            form,
            stack: Vec::new(),
            a: vec![0.0; n * n],
            b: vec![0.0; n * n],
            c: vec![0.0; n * n],
        }
    }

    /// Fill `a`, `b` so that `Y'' = a·Y + b·Y'` at the base point.
    fn coefficients(&mut self, base: &[f64]) -> Result<()> {
        let n = self.sys.dim();
        let d = self.sys.derived();
        match self.form {
            JacobiForm::Variational => {
                d.jacobians_into(base, &mut self.a, &mut self.b, &mut self.stack)
            }
            JacobiForm::Covariant => {
                // a = -(DΓ + Γ² + Φ), b = -2Γ; reuse `c` for DΓ and `a` for Φ
                let mut gamma = std::mem::take(&mut self.b);
                d.connection_data_into(
                    base,
                    &mut gamma,
                    &mut self.c,
                    &mut self.a,
                    &mut self.stack,
                )?;
                for i in 0..n {
                    for j in 0..n {
                        let g2: f64 = (0..n).map(|k| gamma[i * n + k] * gamma[k * n + j]).sum();
                        self.a[i * n + j] = -(self.c[i * n + j] + g2 + self.a[i * n + j]);
                    }
                }
                gamma.iter_mut().for_each(|g| *g *= -2.0);
                self.b = gamma;
                Ok(())
            }
        }
    }

    fn matrix_part(&self, n: usize, y: &[f64], yd: &[f64], out: &mut [f64]) {
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.a[i * n + k] * y[k * n + j] + self.b[i * n + k] * yd[k * n + j];
                }
                out[i * n + j] = acc;
            }
        }
    }

    fn full(&mut self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.sys.dim();
        let nn = n * n;
        let base = &y[..2 * n];
        out[..n].copy_from_slice(&y[n..2 * n]);
        self.sys
            .derived()
            .forces_into(base, &mut out[n..2 * n], &mut self.stack)?;
        self.coefficients(base)?;
        out[2 * n..2 * n + nn].copy_from_slice(&y[2 * n + nn..]);
        let (ys, yds) = (&y[2 * n..2 * n + nn], &y[2 * n + nn..]);
        self.matrix_part(n, ys, yds, &mut out[2 * n + nn..]);
        Ok(())
    }
}

fn check_square(n: usize, m: &Matrix) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

fn augmented_start(s0: &TangentState, y0: &Matrix, ydot0: &Matrix) -> Vec<f64> {
    let mut y = s0.flat();
    y.extend(y0.transpose().iter());
    y.extend(ydot0.transpose().iter());
    y
}

/// Integrate base curve and Jacobi matrix together over `[0, t_end]`.
pub fn integrate_jacobi_with(
    sys: &SodeSystem,
    s0: &TangentState,
    y0: &Matrix,
    ydot0: &Matrix,
    t_end: f64,
    opts: &Options,
    form: JacobiForm,
) -> Result<JacobiMatrixSolution> {
    match integrate_jacobi_partial(sys, s0, y0, ydot0, t_end, opts, form)? {
        (sol, None) => Ok(sol),
        (_, Some(s)) => Err(truncated(s, None)),
    }
}

/// As [`integrate_jacobi_with`], but an early stop returns what was computed.
pub(crate) fn integrate_jacobi_partial(
    sys: &SodeSystem,
    s0: &TangentState,
    y0: &Matrix,
    ydot0: &Matrix,
    t_end: f64,
    opts: &Options,
    form: JacobiForm,
) -> Result<(JacobiMatrixSolution, Option<Stopped>)> {
    sys.check_state(s0)?;
    check_horizon(t_end)?;
    let n = sys.dim();
    check_square(n, y0)?;
    check_square(n, ydot0)?;
    let mut rhs = Rhs::new(sys, form);
    let f = |_t: f64, y: &[f64], out: &mut [f64]| lift(rhs.full(y, out));
    let opts = &Options {
        blowup_prefix: Some(2 * s0.dim()),
        ..opts.clone()
    };
    let (dense, stop) = integrate(f, 0.0, &augmented_start(s0, y0, ydot0), t_end, opts);
    let sol = JacobiMatrixSolution {
        system: sys.clone(),
        dense,
        form,
        y0: y0.clone(),
        ydot0: ydot0.clone(),
        rtol: opts.rtol,
        atol: opts.atol,
    };
    Ok((sol, stop))
}

/// Jacobi matrix along `traj` with the given initial data, integrated
/// simultaneously with the base curve; every trajectory node is a grid node.
pub fn integrate_jacobi_matrix(
    traj: &Trajectory,
    y0: &Matrix,
    ydot0: &Matrix,
) -> Result<JacobiMatrixSolution> {
    let opts = Options {
        stops: traj.times().to_vec(),
        ..traj.options()
    };
    integrate_jacobi_with(
        traj.system(),
        &traj.initial(),
        y0,
        ydot0,
        traj.t_end(),
        &opts,
        JacobiForm::Variational,
    )
}

/// Jacobi matrix integrated over the stored dense output of `traj`.
pub fn integrate_jacobi_replay(
    traj: &Trajectory,
    y0: &Matrix,
    ydot0: &Matrix,
) -> Result<JacobiMatrixSolution> {
    let sys = traj.system();
    let n = sys.dim();
    check_square(n, y0)?;
    check_square(n, ydot0)?;
    let nn = n * n;
    let mut rhs = Rhs::new(sys, JacobiForm::Variational);
    let f = |t: f64, y: &[f64], out: &mut [f64]| {
        let base = traj.at(t).flat();
        lift(rhs.coefficients(&base))?;
        out[..nn].copy_from_slice(&y[nn..]);
        rhs.matrix_part(n, &y[..nn], &y[nn..], &mut out[nn..]);
        Ok(())
    };
    let mut start: Vec<f64> = y0.transpose().iter().copied().collect();
    start.extend(ydot0.transpose().iter());
    // Y alone is linear; only non-finite values stop it
    let opts = Options {
        stops: traj.times().to_vec(),
        blowup_prefix: Some(0),
        ..traj.options()
    };
    let (mut dense, stop) = integrate(f, 0.0, &start, traj.t_end(), &opts);
    if let Some(s) = stop {
        return Err(truncated(s, None));
    }
    // splice the base curve back in so the solution has the usual layout
    for k in 0..dense.t.len() {
        let base = traj.at(dense.t[k]);
        let mut y = base.flat();
        y.extend_from_slice(&dense.y[k]);
        let mut dy = base.v.clone();
        dy.extend(sys.eval_forces(&base)?);
        dy.extend_from_slice(&dense.dy[k]);
        dense.y[k] = y;
        dense.dy[k] = dy;
    }
    Ok(JacobiMatrixSolution {
        system: sys.clone(),
        dense,
        form: JacobiForm::Variational,
        y0: y0.clone(),
        ydot0: ydot0.clone(),
        rtol: traj.rtol,
        atol: traj.atol,
    })
}

/// Advance an augmented `[q, v, Y, Y']` state from `t0` to `t1`.
pub fn advance_jacobi(
    sys: &SodeSystem,
    state: &[f64],
    t0: f64,
    t1: f64,
    opts: &Options,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    if state.len() != 2 * n + 2 * n * n {
        return Err(Error::Dimension {
            expected: 2 * n + 2 * n * n,
            got: state.len(),
        });
    }
    if t1 <= t0 {
        return Ok(state.to_vec());
    }
    let mut rhs = Rhs::new(sys, JacobiForm::Variational);
    let f = |_t: f64, y: &[f64], out: &mut [f64]| lift(rhs.full(y, out));
    let o = Options {
        stops: Vec::new(),
        blowup_prefix: Some(2 * sys.dim()),
        ..opts.clone()
    };
    let (dense, stop) = integrate(f, t0, state, t1, &o);
    if let Some(s) = stop {
        return Err(truncated(s, None));
    }
    Ok(dense.y.last().expect("initial node").clone())
}
