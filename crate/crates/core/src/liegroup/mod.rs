//! Invariant systems on Lie groups in quasi-velocities.
//!
//! A left-invariant SODE on a group `G` reduces to `w' = γ(w)` on the Lie
//! algebra, where `w^i` are the components of the velocity in a left-invariant
//! frame. With `C^k_ij` the structure constants, the frame coefficients of `Φ`
//! and of the connection are
//!
//! ```text
//! φ^l_j = ½ γ^i ∂²γ^l/∂w^i∂w^j + ½ γ^i C^l_ij - ¼ ∂γ^i/∂w^j ∂γ^l/∂w^i
//!         - ¾ C^k_ij w^i ∂γ^l/∂w^k + ¼ w^i C^l_ik ∂γ^k/∂w^j - ¼ w^m w^n C^k_mj C^l_nk
//! λ^k_i = -½ (∂γ^k/∂w^i - w^j C^k_ji)
//! ψ     = γ(φ) + λ·φ - φ·λ
//! ```
//!
//! with `γ(F) = γ^i ∂F/∂w^i` and `ψ` the frame matrix of `∇Φ`. All of them
//! depend on `w` only, so they are constant along relative equilibria.

mod algebra;
mod lift;

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::Serialize;

pub use algebra::{AlgebraDefinition, LieAlgebraData, JACOBI_TOL};
pub use lift::{frame_bracket_residual, lift_to_group, Frame};

use crate::conjugate::{ConjugateEvent, ConjugateReport, Method, Tolerances};
use crate::expr::{parse, Compiled, Expr};
use crate::spectral::decompose;
use crate::{Error, Matrix, Result};

#[derive(Debug)]
struct Tables {
    gamma: Vec<Compiled>,
    jac: Vec<Compiled>,
    phi: Vec<Expr>,
    phi_c: Vec<Compiled>,
    lambda_c: Vec<Compiled>,
    d_phi_c: Vec<Compiled>,
}

/// Reduced forces `γ(w)` over a Lie algebra.
#[derive(Debug)]
pub struct ReducedSystem {
    algebra: LieAlgebraData,
    gamma: Vec<Expr>,
    parameters: BTreeMap<String, f64>,
    names: Vec<String>,
    tables: OnceLock<Tables>,
}

impl Clone for ReducedSystem {
    fn clone(&self) -> Self {
        ReducedSystem {
            algebra: self.algebra.clone(),
            gamma: self.gamma.clone(),
            parameters: self.parameters.clone(),
            names: self.names.clone(),
            tables: OnceLock::new(),
        }
    }
}

/// Quasi-velocity names `w1..wn`.
pub fn w_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("w{i}")).collect()
}

impl ReducedSystem {
    pub fn new(
        algebra: LieAlgebraData,
        gamma: Vec<Expr>,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = algebra.dim();
        if gamma.len() != n {
            return Err(Error::InvalidSystem(format!(
                "expected {n} reduced forces, got {}",
                gamma.len()
            )));
        }
        let names = w_names(n);
        for (i, g) in gamma.iter().enumerate() {
            if let Some(bad) = g
                .variables()
                .into_iter()
                .find(|v| !names.contains(v) && !parameters.contains_key(v))
            {
                return Err(Error::InvalidSystem(format!(
                    "gamma {} references undeclared `{bad}`",
                    i + 1
                )));
            }
        }
        Ok(ReducedSystem {
            algebra,
            gamma,
            parameters,
            names,
            tables: OnceLock::new(),
        })
    }

    pub fn parse(
        algebra: LieAlgebraData,
        gamma: &[&str],
        parameters: &[(&str, f64)],
    ) -> Result<Self> {
        let n = algebra.dim();
        let params: BTreeMap<String, f64> = parameters
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let mut declared = w_names(n);
        declared.extend(params.keys().cloned());
        let exprs = gamma
            .iter()
            .map(|g| parse(g, &declared))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        ReducedSystem::new(algebra, exprs, params)
    }

    pub fn from_definition(def: &AlgebraDefinition) -> Result<Self> {
        let alg = def.algebra()?;
        let g: Vec<&str> = def.gamma.iter().map(String::as_str).collect();
        let p: Vec<(&str, f64)> = def
            .parameters
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .collect();
        ReducedSystem::parse(alg, &g, &p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: AlgebraDefinition = serde_json::from_str(text)?;
        Self::from_definition(&def)
    }

    /// Canonical connection: `γ ≡ 0`.
    pub fn canonical(algebra: LieAlgebraData) -> Self {
        let n = algebra.dim();
        ReducedSystem::new(algebra, vec![Expr::zero(); n], BTreeMap::new())
            .expect("zero forces are valid")
    }

    pub fn algebra(&self) -> &LieAlgebraData {
        &self.algebra
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn gamma(&self) -> &[Expr] {
        &self.gamma
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    /// `γ` with parameters replaced by their values.
    pub fn bound_gamma(&self) -> Vec<Expr> {
        self.gamma
            .iter()
            .map(|g| g.bind_constants(&self.parameters))
            .collect()
    }

    fn compile(&self, exprs: &[Expr]) -> Vec<Compiled> {
        let none = BTreeMap::new();
        exprs
            .iter()
            .map(|e| Compiled::new(e, &self.names, &none).expect("names validated"))
            .collect()
    }

    #[allow(clippy::needless_range_loop)]
    fn tables(&self) -> &Tables {
        self.tables.get_or_init(|| {
            let n = self.dim();
            let a = &self.algebra;
            let g = self.bound_gamma();
            let w: Vec<Expr> = self.names.iter().map(|s| Expr::var(s)).collect();
            // dg[l][j] = ∂γ^l/∂w^j
            let dg: Vec<Vec<Expr>> = g
                .iter()
                .map(|gl| self.names.iter().map(|wj| gl.diff(wj)).collect())
                .collect();
            let mut phi = Vec::with_capacity(n * n);
            let mut lambda = Vec::with_capacity(n * n);
            for l in 0..n {
                for j in 0..n {
                    let mut terms = Vec::new();
                    for i in 0..n {
                        let d2 = dg[l][i].diff(&self.names[j]);
                        terms.push(Expr::scale(0.5, Expr::mul(g[i].clone(), d2)));
                        if a.c(l, i, j) != 0.0 {
                            terms.push(Expr::scale(0.5 * a.c(l, i, j), g[i].clone()));
                        }
                        terms.push(Expr::scale(
                            -0.25,
                            Expr::mul(dg[i][j].clone(), dg[l][i].clone()),
                        ));
                        for k in 0..n {
                            if a.c(k, i, j) != 0.0 {
                                terms.push(Expr::scale(
                                    -0.75 * a.c(k, i, j),
                                    Expr::mul(w[i].clone(), dg[l][k].clone()),
                                ));
                            }
                            if a.c(l, i, k) != 0.0 {
                                terms.push(Expr::scale(
                                    0.25 * a.c(l, i, k),
                                    Expr::mul(w[i].clone(), dg[k][j].clone()),
                                ));
                            }
                        }
                    }
                    for m in 0..n {
                        for nn in 0..n {
                            let coef: f64 = (0..n).map(|k| a.c(k, m, j) * a.c(l, nn, k)).sum();
                            if coef != 0.0 {
                                terms.push(Expr::scale(
                                    -0.25 * coef,
                                    Expr::mul(w[m].clone(), w[nn].clone()),
                                ));
                            }
                        }
                    }
                    phi.push(Expr::sum(terms));
                    let bracket = Expr::sum(
                        (0..n)
                            .filter(|&jj| a.c(l, jj, j) != 0.0)
                            .map(|jj| Expr::scale(a.c(l, jj, j), w[jj].clone())),
                    );
                    lambda.push(Expr::scale(-0.5, Expr::sub(dg[l][j].clone(), bracket)));
                }
            }
            let d_phi: Vec<Expr> = phi
                .iter()
                .map(|p| Expr::sum((0..n).map(|i| Expr::mul(g[i].clone(), p.diff(&self.names[i])))))
                .collect();
            let jac: Vec<Expr> = dg.into_iter().flatten().collect();
            Tables {
                gamma: self.compile(&g),
                jac: self.compile(&jac),
                phi_c: self.compile(&phi),
                phi,
                lambda_c: self.compile(&lambda),
                d_phi_c: self.compile(&d_phi),
            }
        })
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn eval_matrix(&self, tapes: &[Compiled], w: &[f64]) -> Result<Matrix> {
        self.check(w)?;
        let n = self.dim();
        let mut stack = Vec::new();
        let mut vals = Vec::with_capacity(n * n);
        for t in tapes {
            vals.push(t.eval_with_stack(w, &mut stack)?);
        }
        Ok(Matrix::from_row_slice(n, n, &vals))
    }

    pub fn eval_gamma(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let mut stack = Vec::new();
        self.tables()
            .gamma
            .iter()
            .map(|t| Ok(t.eval_with_stack(w, &mut stack)?))
            .collect()
    }

    /// `∂γ^i/∂w^j`.
    pub fn gamma_jacobian(&self, w: &[f64]) -> Result<Matrix> {
        self.eval_matrix(&self.tables().jac, w)
    }

    /// `φ^l_j` as expressions in `w`, row-major.
    pub fn frame_phi_exprs(&self) -> &[Expr] {
        &self.tables().phi
    }
}

/// Frame matrix `φ^l_j` (row `l`, column `j`).
pub fn frame_phi(red: &ReducedSystem, w: &[f64]) -> Result<Matrix> {
    red.eval_matrix(&red.tables().phi_c, w)
}

/// Connection coefficients `λ^k_i` in the frame.
pub fn frame_lambda(red: &ReducedSystem, w: &[f64]) -> Result<Matrix> {
    red.eval_matrix(&red.tables().lambda_c, w)
}

/// `γ(φ)`, the derivative of `φ` along the reduced field.
pub fn frame_phi_rate(red: &ReducedSystem, w: &[f64]) -> Result<Matrix> {
    red.eval_matrix(&red.tables().d_phi_c, w)
}

/// Frame matrix `ψ` of `∇Φ`.
pub fn frame_nabla_phi(red: &ReducedSystem, w: &[f64]) -> Result<Matrix> {
    let phi = frame_phi(red, w)?;
    let lambda = frame_lambda(red, w)?;
    Ok(frame_phi_rate(red, w)? + &lambda * &phi - &phi * &lambda)
}

/// `ψ·φ - φ·ψ`.
pub fn frame_commutator(red: &ReducedSystem, w: &[f64]) -> Result<Matrix> {
    let phi = frame_phi(red, w)?;
    let psi = frame_nabla_phi(red, w)?;
    Ok(&psi * &phi - &phi * &psi)
}

#[derive(Debug, Clone, Serialize)]
pub struct RelativeEquilibrium {
    pub w0: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub seed: Vec<f64>,
    /// Unit kernel direction of `∂γ/∂w` at the root, when the root lies on a family.
    pub family_tangent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedFailure {
    pub seed: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSearch {
    pub equilibria: Vec<RelativeEquilibrium>,
    pub failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub dedup: f64,
    /// Singular values below `pinv_rel · σ_max` are dropped from the pseudo-inverse.
    pub pinv_rel: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 100,
            dedup: 1e-8,
            pinv_rel: 1e-10,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn converged(res: f64, w: &[f64]) -> bool {
    res < 1e-12 * (1.0 + norm(w))
}

/// Damped Newton iteration with a backtracking line search.
fn newton(
    red: &ReducedSystem,
    seed: &[f64],
    o: &NewtonOptions,
) -> std::result::Result<RelativeEquilibrium, String> {
    let n = red.dim();
    let mut w = seed.to_vec();
    let mut g = red.eval_gamma(&w).map_err(|e| e.to_string())?;
    let mut res = norm(&g);
    for it in 0..=o.max_iter {
        if converged(res, &w) {
            let jac = red.gamma_jacobian(&w).map_err(|e| e.to_string())?;
            let svd = jac.svd(false, true);
            let smax = svd.singular_values.max();
            let v_t = svd.v_t.expect("requested");
            let tangent = (0..n)
                .filter(|&k| svd.singular_values[k] <= 1e-8 * smax.max(1.0))
                .map(|k| v_t.row(k).iter().copied().collect::<Vec<f64>>())
                .next();
            return Ok(RelativeEquilibrium {
                w0: w,
                residual: res,
                iterations: it,
                seed: seed.to_vec(),
                family_tangent: tangent,
            });
        }
        if it == o.max_iter {
            break;
        }
        let jac = red.gamma_jacobian(&w).map_err(|e| e.to_string())?;
        if jac.iter().all(|&x| x == 0.0) {
            return Err("singular Jacobian (identically zero) at a non-equilibrium".into());
        }
        // Levenberg-Marquardt with μ = |γ|: keeps the iterates near the seed
        // when roots are not isolated, and is plain Newton in the limit.
        let gv = nalgebra::DVector::from_column_slice(&g);
        let jt = jac.transpose();
        let normal = &jt * &jac + Matrix::identity(n, n) * res;
        let rhs = &jt * &gv;
        let step = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let svd = normal.svd(true, true);
                svd.solve(&rhs, o.pinv_rel * svd.singular_values.max())
                    .map_err(|e| e.to_string())?
            }
        };
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = w
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a - alpha * s)
                .collect();
            match red.eval_gamma(&trial) {
                Ok(gt) if norm(&gt) < res || alpha < 1e-4 => {
                    w = trial;
                    g = gt;
                    res = norm(&g);
                    break;
                }
                _ => alpha *= 0.5,
            }
            if alpha < 1e-10 {
                return Err("line search failed".into());
            }
        }
    }
    Err(format!(
        "no convergence after {} iterations (residual {res:e})",
        o.max_iter
    ))
}

/// Roots of `γ(w) = 0` reached from `seeds`, deduplicated.
pub fn find_relative_equilibria(
    red: &ReducedSystem,
    seeds: &[Vec<f64>],
    o: &NewtonOptions,
) -> Result<EquilibriumSearch> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one seed is required".into(),
        ));
    }
    let mut out = EquilibriumSearch {
        equilibria: Vec::new(),
        failures: Vec::new(),
    };
    for s in seeds {
        red.check(s)?;
        match newton(red, s, o) {
            Ok(eq) => {
                let dup = out.equilibria.iter().any(|e| {
                    let d: f64 =
                        e.w0.iter()
                            .zip(&eq.w0)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt();
                    d < o.dedup
                });
                if !dup {
                    out.equilibria.push(eq);
                }
            }
            Err(reason) => out.failures.push(SeedFailure {
                seed: s.clone(),
                reason,
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReleqConjugateReport {
    pub w0: Vec<f64>,
    /// Spectrum of `φ(w0)` as `(re, im, multiplicity)`.
    pub eigenvalues: Vec<(f64, f64, usize)>,
    pub report: ConjugateReport,
    /// `|ψφ - φψ|` at `w0`, relative to `max(1, |ψ||φ|)`.
    pub commutator_residual: f64,
    /// Largest relative commutator residual on a small ball around `w0`.
    pub ball_residual: f64,
    /// The commutator hypothesis holds at `w0`.
    pub valid: bool,
    /// It holds at `w0` but not on the surrounding ball.
    pub only_at_equilibrium: bool,
}

pub const COMMUTATOR_TOL: f64 = 1e-8;

fn relative_commutator(red: &ReducedSystem, w: &[f64]) -> Result<f64> {
    let phi = frame_phi(red, w)?;
    let psi = frame_nabla_phi(red, w)?;
    let c = &psi * &phi - &phi * &psi;
    Ok(c.norm() / (psi.norm() * phi.norm()).max(1.0))
}

/// Conjugate times `kπ/√λ` along the relative equilibrium through `w0`, for
/// every positive eigenvalue `λ` of `φ(w0)`.
pub fn releq_conjugate_times(
    red: &ReducedSystem,
    w0: &[f64],
    t_max: f64,
) -> Result<ReleqConjugateReport> {
    crate::flow::check_horizon(t_max)?;
    let g = red.eval_gamma(w0)?;
    if !converged(norm(&g), w0) && norm(&g) > 1e-10 * (1.0 + norm(w0)) {
        return Err(Error::InvalidArgument(format!(
            "w0 is not a relative equilibrium (|γ| = {:e})",
            norm(&g)
        )));
    }
    let phi = frame_phi(red, w0)?;
    let spec = decompose(&phi);
    let scale = spec
        .spaces
        .iter()
        .map(|s| s.value.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    let eigenvalues: Vec<(f64, f64, usize)> = spec
        .spaces
        .iter()
        .map(|s| (s.value.re, s.value.im, s.multiplicity))
        .collect();
    let mut events: Vec<ConjugateEvent> = Vec::new();
    for s in &spec.spaces {
        if s.value.im != 0.0 || s.value.re <= 1e-12 * scale {
            continue;
        }
        for t in crate::conjugate::predictor_times(s.value.re, t_max)? {
            match events
                .iter_mut()
                .find(|e| (e.t - t).abs() <= 1e-12 * t.max(1.0))
            {
                Some(e) => e.multiplicity += s.multiplicity,
                None => events.push(ConjugateEvent {
                    t,
                    multiplicity: s.multiplicity,
                    method: Method::Predictor,
                    det_slope_or_gap: 0.0,
                    residual: 0.0,
                }),
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let commutator_residual = relative_commutator(red, w0)?;
    let radius = 1e-3 * (1.0 + norm(w0));
    let mut ball_residual = 0.0f64;
    let n = red.dim();
    for k in 0..n {
        for sign in [-1.0, 1.0] {
            let mut w = w0.to_vec();
            w[k] += sign * radius;
            if let Ok(r) = relative_commutator(red, &w) {
                ball_residual = ball_residual.max(r);
            }
        }
    }
    let valid = commutator_residual < COMMUTATOR_TOL;
    let mut notes = Vec::new();
    if events.is_empty() {
        notes.push("no positive eigenvalue of the frame Jacobi endomorphism: no predicted conjugate points".to_string());
    }
    let mut warnings = Vec::new();
    if !valid {
        warnings.push(format!("[∇Φ,Φ] does not vanish at w0 (relative residual {commutator_residual:e}); predicted times are not guaranteed"));
    } else if ball_residual >= COMMUTATOR_TOL {
        warnings.push(format!("[∇Φ,Φ] vanishes at w0 but not nearby (relative residual {ball_residual:e} at distance {radius:e})"));
    }
    let report = ConjugateReport {
        events,
        t_max,
        tolerances: Tolerances {
            rtol: 0.0,
            atol: 0.0,
            time_tol: 0.0,
            rank_rel: 0.0,
            rank_abs: 0.0,
            dip_rel: 0.0,
        },
        truncated_at: None,
        warnings,
        notes,
    };
    Ok(ReleqConjugateReport {
        w0: w0.to_vec(),
        eigenvalues,
        report,
        commutator_residual,
        ball_residual,
        valid,
        only_at_equilibrium: valid && ball_residual >= COMMUTATOR_TOL,
    })
}

/// Substitute `w = values` into expressions over `w1..wn`.
pub fn substitute_w(exprs: &[Expr], values: &[Expr]) -> Vec<Expr> {
    let map: HashMap<String, Expr> = w_names(values.len())
        .into_iter()
        .zip(values.iter().cloned())
        .collect();
    exprs.iter().map(|e| e.substitute(&map)).collect()
}
