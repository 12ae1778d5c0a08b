//! Operators attached to a system at a tangent state.
//!
//! With `D(g) = v^k ∂g/∂q^k + f^k ∂g/∂v^k` the derivative along the flow:
//!
//! * `Γ^i_j = -½ ∂f^i/∂v^j`
//! * `Φ^i_j = -∂f^i/∂q^j - Γ^i_k Γ^k_j - D(Γ^i_j)`
//! * `(∇Φ)^i_j = D(Φ^i_j) + Γ^i_k Φ^k_j - Φ^i_k Γ^k_j`
//!
//! All entries are built symbolically once per system and compiled to tapes.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::{Compiled, Expr};
use crate::{Matrix, Result, SodeSystem, TangentState};

/// Threshold used by [`spray_check`].
pub const SPRAY_TOL: f64 = 1e-9;

#[derive(Debug)]
struct Table {
    exprs: Vec<Expr>,
    tapes: Vec<Compiled>,
}

impl Table {
    fn new(exprs: Vec<Expr>, slots: &[String]) -> Table {
        let none = Default::default();
        let tapes = exprs
            .iter()
            .map(|e| Compiled::new(e, slots, &none).expect("system names were validated"))
            .collect();
        Table { exprs, tapes }
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64], stack: &mut Vec<f64>) -> Result<()> {
        for (o, t) in out.iter_mut().zip(&self.tapes) {
            *o = t.eval_with_stack(x, stack)?;
        }
        Ok(())
    }

    fn matrix(&self, n: usize, x: &[f64]) -> Result<Matrix> {
        let mut vals = vec![0.0; n * n];
        self.eval_into(x, &mut vals, &mut Vec::new())?;
        Ok(Matrix::from_row_slice(n, n, &vals))
    }
}

#[derive(Debug)]
struct First {
    forces: Table,
    dfdq: Table,
    dfdv: Table,
}

#[derive(Debug)]
struct Second {
    d_gamma: Table,
    phi: Table,
}

/// Lazily built symbolic tables shared by clones of a system.
#[derive(Debug)]
pub(crate) struct Derived {
    n: usize,
    q_names: Vec<String>,
    v_names: Vec<String>,
    slots: Vec<String>,
    forces: Vec<Expr>,
    first: OnceLock<First>,
    second: OnceLock<Second>,
    nabla: OnceLock<Table>,
}

impl Derived {
    pub(crate) fn new(coordinates: &[String], forces: Vec<Expr>) -> Derived {
        let q_names = coordinates.to_vec();
        let v_names: Vec<String> = coordinates.iter().map(|c| format!("v{c}")).collect();
        let slots = q_names.iter().chain(&v_names).cloned().collect();
        Derived {
            n: coordinates.len(),
            q_names,
            v_names,
            slots,
            forces,
            first: OnceLock::new(),
            second: OnceLock::new(),
            nabla: OnceLock::new(),
        }
    }

    fn first(&self) -> &First {
        self.first.get_or_init(|| {
            let mut dq = Vec::with_capacity(self.n * self.n);
            let mut dv = Vec::with_capacity(self.n * self.n);
            for f in &self.forces {
                for j in 0..self.n {
                    dq.push(f.diff(&self.q_names[j]));
                    dv.push(f.diff(&self.v_names[j]));
                }
            }
            First {
                forces: Table::new(self.forces.clone(), &self.slots),
                dfdq: Table::new(dq, &self.slots),
                dfdv: Table::new(dv, &self.slots),
            }
        })
    }

    /// `D(g)` as an expression.
    fn along_flow(&self, g: &Expr) -> Expr {
        let mut terms = Vec::with_capacity(2 * self.n);
        for k in 0..self.n {
            let dq = g.diff(&self.q_names[k]);
            if !dq.is_zero() {
                terms.push(Expr::mul(Expr::var(&self.v_names[k]), dq));
            }
            let dv = g.diff(&self.v_names[k]);
            if !dv.is_zero() {
                terms.push(Expr::mul(self.forces[k].clone(), dv));
            }
        }
        Expr::sum(terms)
    }

    fn gamma_exprs(&self) -> Vec<Expr> {
        self.first()
            .dfdv
            .exprs
            .iter()
            .map(|e| Expr::scale(-0.5, e.clone()))
            .collect()
    }

    fn second(&self) -> &Second {
        self.second.get_or_init(|| {
            let n = self.n;
            let gamma = self.gamma_exprs();
            let dfdq = &self.first().dfdq.exprs;
            let d_gamma: Vec<Expr> = gamma.iter().map(|g| self.along_flow(g)).collect();
            let mut phi = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let square =
                        Expr::sum((0..n).map(|k| {
                            Expr::mul(gamma[i * n + k].clone(), gamma[k * n + j].clone())
                        }));
                    let e = Expr::sub(
                        Expr::sub(Expr::neg(dfdq[i * n + j].clone()), square),
                        d_gamma[i * n + j].clone(),
                    );
                    phi.push(e);
                }
            }
            Second {
                d_gamma: Table::new(d_gamma, &self.slots),
                phi: Table::new(phi, &self.slots),
            }
        })
    }

    fn nabla(&self) -> &Table {
        self.nabla.get_or_init(|| {
            let d_phi = self
                .second()
                .phi
                .exprs
                .iter()
                .map(|p| self.along_flow(p))
                .collect();
            Table::new(d_phi, &self.slots)
        })
    }

    pub(crate) fn forces_into(
        &self,
        x: &[f64],
        out: &mut [f64],
        stack: &mut Vec<f64>,
    ) -> Result<()> {
        self.first().forces.eval_into(x, out, stack)
    }

    /// Row-major `∂f/∂q` and `∂f/∂v` at `x = [q, v]`.
    pub(crate) fn jacobians_into(
        &self,
        x: &[f64],
        dq: &mut [f64],
        dv: &mut [f64],
        stack: &mut Vec<f64>,
    ) -> Result<()> {
        let first = self.first();
        first.dfdq.eval_into(x, dq, stack)?;
        first.dfdv.eval_into(x, dv, stack)
    }

    /// Row-major `Γ`, `D(Γ)` and `Φ` at `x`.
    pub(crate) fn connection_data_into(
        &self,
        x: &[f64],
        gamma: &mut [f64],
        d_gamma: &mut [f64],
        phi: &mut [f64],
        stack: &mut Vec<f64>,
    ) -> Result<()> {
        self.first().dfdv.eval_into(x, gamma, stack)?;
        gamma.iter_mut().for_each(|g| *g *= -0.5);
        let second = self.second();
        second.d_gamma.eval_into(x, d_gamma, stack)?;
        second.phi.eval_into(x, phi, stack)
    }

    pub(crate) fn phi_exprs(&self) -> &[Expr] {
        &self.second().phi.exprs
    }
}

fn site(sys: &SodeSystem, s: &TangentState) -> Result<Vec<f64>> {
    sys.check_state(s)?;
    Ok(s.flat())
}

/// `Γ^i_j` (row `i`, column `j`).
pub fn connection(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    Ok(sys.derived().first().dfdv.matrix(sys.dim(), &x)? * -0.5)
}

/// `D(Γ^i_j)`, the derivative of the connection coefficients along the flow.
pub fn connection_derivative(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    sys.derived().second().d_gamma.matrix(sys.dim(), &x)
}

/// `∂f^i/∂q^j`.
pub fn force_position_jacobian(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    sys.derived().first().dfdq.matrix(sys.dim(), &x)
}

/// `∂f^i/∂v^j`.
pub fn force_velocity_jacobian(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    sys.derived().first().dfdv.matrix(sys.dim(), &x)
}

/// The Jacobi endomorphism `Φ^i_j`.
pub fn jacobi_endomorphism(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    sys.derived().second().phi.matrix(sys.dim(), &x)
}

/// `Φ^i_j` as symbolic expressions, row-major.
pub fn jacobi_endomorphism_exprs(sys: &SodeSystem) -> Vec<Expr> {
    sys.derived().phi_exprs().to_vec()
}

/// The dynamical covariant derivative `∇Φ`.
pub fn nabla_phi(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let x = site(sys, s)?;
    let d = sys.derived();
    let n = sys.dim();
    let d_phi = d.nabla().matrix(n, &x)?;
    let gamma = d.first().dfdv.matrix(n, &x)? * -0.5;
    let phi = d.second().phi.matrix(n, &x)?;
    Ok(d_phi + &gamma * &phi - &phi * &gamma)
}

/// `[∇Φ, Φ] = ∇Φ·Φ - Φ·∇Φ`.
pub fn commutator_nabla_phi_phi(sys: &SodeSystem, s: &TangentState) -> Result<Matrix> {
    let phi = jacobi_endomorphism(sys, s)?;
    let nphi = nabla_phi(sys, s)?;
    Ok(&nphi * &phi - &phi * &nphi)
}

/// Everything at one state.
#[derive(Debug, Clone)]
pub struct OperatorPanel {
    pub gamma: Matrix,
    pub phi: Matrix,
    pub nabla_phi: Matrix,
    pub commutator: Matrix,
}

pub fn panel(sys: &SodeSystem, s: &TangentState) -> Result<OperatorPanel> {
    let gamma = connection(sys, s)?;
    let phi = jacobi_endomorphism(sys, s)?;
    let nabla_phi = nabla_phi(sys, s)?;
    let commutator = &nabla_phi * &phi - &phi * &nabla_phi;
    Ok(OperatorPanel {
        gamma,
        phi,
        nabla_phi,
        commutator,
    })
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Whether `m` is zero relative to `scale` (absolute when `scale` is tiny).
pub fn is_structural_zero(m: &Matrix, scale: f64, tol: f64) -> bool {
    max_abs(m) <= tol * scale.max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SprayReport {
    pub is_spray: bool,
    pub max_nabla_t: f64,
    pub max_phi_t: f64,
    pub samples: usize,
}

/// `∇T = f + Γ·v`.
pub fn nabla_t(sys: &SodeSystem, s: &TangentState) -> Result<Vec<f64>> {
    let f = sys.eval_forces(s)?;
    let gamma = connection(sys, s)?;
    let v = nalgebra::DVector::from_column_slice(&s.v);
    Ok((nalgebra::DVector::from_vec(f) + gamma * v)
        .iter()
        .copied()
        .collect())
}

/// `Φ(T) = Φ·v`.
pub fn phi_t(sys: &SodeSystem, s: &TangentState) -> Result<Vec<f64>> {
    let phi = jacobi_endomorphism(sys, s)?;
    Ok((phi * nalgebra::DVector::from_column_slice(&s.v))
        .iter()
        .copied()
        .collect())
}

/// Sampled test of `∇T = 0` and `Φ(T) = 0`.
pub fn spray_check(sys: &SodeSystem, states: &[TangentState]) -> Result<SprayReport> {
    if states.is_empty() {
        return Err(crate::Error::InvalidArgument(
            "spray check needs at least one state".into(),
        ));
    }
    let mut max_nabla_t = 0.0f64;
    let mut max_phi_t = 0.0f64;
    for s in states {
        max_nabla_t = nabla_t(sys, s)?
            .iter()
            .fold(max_nabla_t, |a, x| a.max(x.abs()));
        max_phi_t = phi_t(sys, s)?.iter().fold(max_phi_t, |a, x| a.max(x.abs()));
    }
    Ok(SprayReport {
        is_spray: max_nabla_t < SPRAY_TOL && max_phi_t < SPRAY_TOL,
        max_nabla_t,
        max_phi_t,
        samples: states.len(),
    })
}

/// Uniform random states in `[-scale, scale]^{2n}`, reproducible from `seed`.
pub fn random_states(n: usize, count: usize, scale: f64, seed: u64) -> Vec<TangentState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
            let v = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
            TangentState::new(q, v)
        })
        .collect()
}
