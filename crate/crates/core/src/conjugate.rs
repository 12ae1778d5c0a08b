//! Conjugate points along a base integral curve.
//!
//! The shooting matrix `Y(t)` solves the Jacobi equation with `Y(0) = 0`,
//! `Y'(0) = I`; `c(t*)` is conjugate to `c(0)` exactly when `Y(t*)` is
//! singular. Zeros of `det Y` are located two ways:
//!
//! * sign changes on the adaptive grid, refined by bisection;
//! * local minima of `|det Y|` that do not change sign (even multiplicity),
//!   refined by golden-section search on the smallest singular value and
//!   accepted only on a confirmed rank drop.
//!
//! Every refinement re-integrates from the nearest stored node rather than
//! interpolating.

use std::fmt::Write as _;

use serde::Serialize;

use crate::flow::{
    self, advance_jacobi, integrate_jacobi_partial, JacobiForm, JacobiMatrixSolution, Options,
};
use crate::linalg::singular_values;
use crate::spectral::SpectrumTrace;
use crate::{format_float, Error, Matrix, Result, SodeSystem, StopReason, TangentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Shooting,
    Predictor,
    Expmap,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateEvent {
    pub t: f64,
    pub multiplicity: usize,
    pub method: Method,
    /// Determinant slope at a sign change, or the gap to the nearest
    /// shooting event for predicted times.
    pub det_slope_or_gap: f64,
    /// `σ_min / σ_max` of the matrix tested at `t`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub time_tol: f64,
    pub rank_rel: f64,
    pub rank_abs: f64,
    pub dip_rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateReport {
    pub events: Vec<ConjugateEvent>,
    pub t_max: f64,
    pub tolerances: Tolerances,
    /// Time at which integration stopped early, if it did.
    pub truncated_at: Option<f64>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl ConjugateReport {
    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConjugateOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Bisection stops at `time_tol_rel · t_max`.
    pub time_tol_rel: f64,
    /// Singular values below `max(rank_rel·σ_max, rank_abs)` count as zero.
    pub rank_rel: f64,
    pub rank_abs: f64,
    /// A non-sign-changing dip must reach `|det| < dip_rel · max|det|`.
    pub dip_rel: f64,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        ConjugateOptions {
            rtol: 1e-10,
            atol: 1e-12,
            time_tol_rel: 1e-10,
            rank_rel: 1e-7,
            rank_abs: 1e-12,
            dip_rel: 1e-9,
        }
    }
}

impl ConjugateOptions {
    pub fn with_tol(tol: f64) -> Result<Self> {
        let o = flow::options_for_tol(tol)?;
        Ok(ConjugateOptions {
            rtol: o.rtol,
            atol: o.atol,
            ..Default::default()
        })
    }

    fn integrator(&self) -> Options {
        Options {
            rtol: self.rtol,
            atol: self.atol,
            ..Options::default()
        }
    }

    fn tolerances(&self, t_max: f64) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
            time_tol: self.time_tol_rel * t_max,
            rank_rel: self.rank_rel,
            rank_abs: self.rank_abs,
            dip_rel: self.dip_rel,
        }
    }
}

/// The shooting matrix `Y` with `Y(0) = 0`, `Y'(0) = I` from `s0`.
pub fn shooting_matrix(
    sys: &SodeSystem,
    s0: &TangentState,
    t_max: f64,
    opts: &ConjugateOptions,
) -> Result<JacobiMatrixSolution> {
    let n = sys.dim();
    let o = opts.integrator();
    flow::integrate_jacobi_with(
        sys,
        s0,
        &Matrix::zeros(n, n),
        &Matrix::identity(n, n),
        t_max,
        &o,
        JacobiForm::Variational,
    )
}

struct Probe<'a> {
    sys: &'a SodeSystem,
    sol: &'a JacobiMatrixSolution,
    opts: Options,
}

impl Probe<'_> {
    /// `Y(t)` re-integrated from the last node at or before `t`.
    fn y(&self, t: f64) -> Result<Matrix> {
        let k = self.sol.node_before(t);
        let k = if self.sol.times()[k] > t {
            k.saturating_sub(1)
        } else {
            k
        };
        let t0 = self.sol.times()[k];
        if t0 == t {
            return Ok(self.sol.y(k));
        }
        let n = self.sys.dim();
        let a = advance_jacobi(self.sys, self.sol.augmented(k), t0, t, &self.opts)?;
        Ok(Matrix::from_row_slice(n, n, &a[2 * n..2 * n + n * n]))
    }
}

/// Rank deficiency of `y`, with singular values measured against `scale`
/// (the largest singular value nearby, since all of them may vanish at once).
fn multiplicity(y: &Matrix, scale: f64, opts: &ConjugateOptions) -> (usize, f64) {
    let s = singular_values(y);
    let smax = s[0].max(scale);
    let cut = (opts.rank_rel * smax).max(opts.rank_abs);
    let rank = s.iter().filter(|&&x| x > cut).count();
    let ratio = if smax > 0.0 {
        s[s.len() - 1] / smax
    } else {
        0.0
    };
    (y.nrows() - rank, ratio)
}

/// Find conjugate points of `c(0)` along the solution through `s0` on `(0, t_max]`.
pub fn find_conjugate_points(
    sys: &SodeSystem,
    s0: &TangentState,
    t_max: f64,
    opts: &ConjugateOptions,
) -> Result<ConjugateReport> {
    let n = sys.dim();
    let io = opts.integrator();
    let (sol, stop) = integrate_jacobi_partial(
        sys,
        s0,
        &Matrix::zeros(n, n),
        &Matrix::identity(n, n),
        t_max,
        &io,
        JacobiForm::Variational,
    )?;
    let mut report = ConjugateReport {
        events: Vec::new(),
        t_max,
        tolerances: opts.tolerances(t_max),
        truncated_at: None,
        warnings: Vec::new(),
        notes: Vec::new(),
    };
    if let Some(s) = &stop {
        if let StopReason::Domain(e) = &s.reason {
            return Err(Error::Truncated {
                t: s.t,
                reason: StopReason::Domain(e.clone()),
                partial: None,
            });
        }
        report.truncated_at = Some(s.t);
        report
            .warnings
            .push(format!("integration stopped at t = {}: {}", s.t, s.reason));
    }
    report.events = scan(sys, &sol, opts, t_max)?;
    let tol = opts.time_tol_rel * t_max;
    for w in report.events.windows(2) {
        if w[1].t - w[0].t < 1e3 * tol {
            report.warnings.push(format!(
                "events at {} and {} are closer than 1e3 x time tolerance",
                w[0].t, w[1].t
            ));
        }
    }
    Ok(report)
}

fn scan(
    sys: &SodeSystem,
    sol: &JacobiMatrixSolution,
    opts: &ConjugateOptions,
    t_max: f64,
) -> Result<Vec<ConjugateEvent>> {
    let probe = Probe {
        sys,
        sol,
        opts: opts.integrator(),
    };
    let times = sol.times();
    let m = times.len();
    let d: Vec<f64> = (0..m).map(|k| sol.det(k)).collect();
    let dmax = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let time_tol = opts.time_tol_rel * t_max;
    let mut events: Vec<ConjugateEvent> = Vec::new();

    // sign changes (node 0 has d = 0 by construction)
    for k in 1..m.saturating_sub(1) {
        let (a, b) = (d[k], d[k + 1]);
        if a == 0.0 && k > 1 {
            let (mult, ratio) = multiplicity(&sol.y(k), local_scale(sol, k, k), opts);
            events.push(ConjugateEvent {
                t: times[k],
                multiplicity: mult.max(1),
                method: Method::Shooting,
                det_slope_or_gap: 0.0,
                residual: ratio,
            });
            continue;
        }
        if a * b >= 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut dlo, mut dhi) = (times[k], times[k + 1], a, b);
        while hi - lo > time_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let dm = probe.y(mid)?.determinant();
            if dm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if dm * dlo < 0.0 {
                hi = mid;
                dhi = dm;
            } else {
                lo = mid;
                dlo = dm;
            }
        }
        let t = 0.5 * (lo + hi);
        let slope = if hi > lo {
            (dhi - dlo) / (hi - lo)
        } else {
            0.0
        };
        let (mult, ratio) = multiplicity(&probe.y(t)?, local_scale(sol, k, k + 1), opts);
        events.push(ConjugateEvent {
            t,
            multiplicity: mult.max(1),
            method: Method::Shooting,
            det_slope_or_gap: slope,
            residual: ratio,
        });
    }

    // dips without a sign change
    for k in 2..m.saturating_sub(1) {
        let (a, b, c) = (d[k - 1].abs(), d[k].abs(), d[k + 1].abs());
        if !(b <= a && b <= c) || d[k - 1] * d[k + 1] < 0.0 {
            continue;
        }
        if d[k - 1] * d[k] < 0.0 || d[k] * d[k + 1] < 0.0 {
            continue;
        }
        let (t_star, y_star) = golden_sigma_min(&probe, times[k - 1], times[k + 1], time_tol)?;
        let (mult, ratio) = multiplicity(&y_star, local_scale(sol, k - 1, k + 1), opts);
        if mult == 0 || y_star.determinant().abs() >= opts.dip_rel * dmax {
            continue;
        }
        if events
            .iter()
            .any(|e| (e.t - t_star).abs() < 1e4 * time_tol.max(1e-12))
        {
            continue;
        }
        events.push(ConjugateEvent {
            t: t_star,
            multiplicity: mult,
            method: Method::Shooting,
            det_slope_or_gap: 0.0,
            residual: ratio,
        });
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    events.dedup_by(|b, a| (b.t - a.t).abs() < 1e4 * time_tol.max(1e-12));
    Ok(events)
}

fn local_scale(sol: &JacobiMatrixSolution, lo: usize, hi: usize) -> f64 {
    let lo = lo.saturating_sub(1).max(1);
    let hi = (hi + 1).min(sol.len() - 1);
    (lo..=hi)
        .map(|k| singular_values(&sol.y(k))[0])
        .fold(0.0, f64::max)
}

fn golden_sigma_min(probe: &Probe, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, Matrix)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let sig = |t: f64| -> Result<(f64, Matrix)> {
        let y = probe.y(t)?;
        let s = singular_values(&y);
        Ok((s[s.len() - 1], y))
    };
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = sig(x1)?;
    let mut f2 = sig(x2)?;
    while b - a > tol {
        if f1.0 <= f2.0 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = sig(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = sig(x2)?;
        }
        if x2 - x1 <= 0.0 {
            break;
        }
    }
    Ok(if f1.0 <= f2.0 { (x1, f1.1) } else { (x2, f2.1) })
}

/// `{kπ/√λ0 : k ≥ 1} ∩ (0, t_max]`.
pub fn predictor_times(lambda0: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::PredictorRequiresPositive(lambda0));
    }
    let step = std::f64::consts::PI / lambda0.sqrt();
    Ok((1..)
        .map(|k| k as f64 * step)
        .take_while(|&t| t <= t_max)
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictorComparison {
    pub lambda0: f64,
    pub constancy_deviation: f64,
    /// `sup |Φ V - λ0 V| / |V|` for a transported initial eigenvector.
    pub eigen_residual: f64,
    pub predicted: Vec<f64>,
    pub shooting: Vec<f64>,
    /// For each predicted time, distance to the nearest shooting event.
    pub gaps: Vec<f64>,
    pub refused: Option<String>,
}

/// Compare the predictor on branch `branch` of `trace` against shooting.
pub fn verify_predictor(
    sys: &SodeSystem,
    s0: &TangentState,
    trace: &SpectrumTrace,
    branch: usize,
    t_max: f64,
    opts: &ConjugateOptions,
) -> Result<PredictorComparison> {
    let b = trace
        .branches
        .get(branch)
        .ok_or_else(|| Error::InvalidArgument(format!("no branch {branch}")))?;
    let lambda = trace.values[0][branch];
    let shooting = find_conjugate_points(sys, s0, t_max, opts)?.times();
    let mut out = PredictorComparison {
        lambda0: lambda.re,
        constancy_deviation: b.constancy_deviation,
        eigen_residual: f64::NAN,
        predicted: Vec::new(),
        shooting,
        gaps: Vec::new(),
        refused: None,
    };
    if lambda.im.abs() > 1e-9 * lambda.norm().max(1.0) {
        out.refused = Some("complex eigenvalue".into());
        return Ok(out);
    }
    match predictor_times(lambda.re, t_max) {
        Ok(p) => out.predicted = p,
        Err(e) => {
            out.refused = Some(e.to_string());
            return Ok(out);
        }
    }
    let v0: Vec<f64> = trace.vectors[0][branch].iter().map(|c| c.re).collect();
    let traj = flow::integrate_curve_with(sys, s0, t_max, &opts.integrator())?;
    let tr = flow::parallel_transport(&traj, &v0)?;
    let mut worst = 0.0f64;
    for (v, base) in tr.field.iter().zip(&tr.base) {
        let phi = crate::geometry::jacobi_endomorphism(sys, base)?;
        let vv = nalgebra::DVector::from_column_slice(v);
        let r = (&phi * &vv - &vv * lambda.re).norm() / vv.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(r);
    }
    out.eigen_residual = worst;
    out.gaps = out
        .predicted
        .iter()
        .map(|p| {
            out.shooting
                .iter()
                .map(|s| (s - p).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(out)
}

/// Re-test events with the finite-difference exponential-map Jacobian.
///
/// Each returned event carries `σ_min/σ_max` of `T_v exp` at the event time.
pub fn confirm_with_expmap(
    sys: &SodeSystem,
    s0: &TangentState,
    events: &[ConjugateEvent],
    h: f64,
) -> Result<Vec<ConjugateEvent>> {
    events
        .iter()
        .map(|e| {
            let j = flow::exp_jacobian_fd(sys, &s0.q, &s0.v, e.t, h)?;
            let s = singular_values(&j);
            let ratio = s[s.len() - 1] / s[0].max(f64::MIN_POSITIVE);
            let rank = s.iter().filter(|&&x| x > 1e-3 * s[0]).count();
            Ok(ConjugateEvent {
                t: e.t,
                multiplicity: sys.dim() - rank,
                method: Method::Expmap,
                det_slope_or_gap: 0.0,
                residual: ratio,
            })
        })
        .collect()
}

/// CSV trace `t,det,sigma_min` on the shooting grid.
pub fn trace_csv(sol: &JacobiMatrixSolution) -> String {
    let mut out = String::from("t,det,sigma_min\n");
    for k in 0..sol.len() {
        let y = sol.y(k);
        let s = singular_values(&y);
        writeln!(
            out,
            "{},{},{}",
            format_float(sol.times()[k]),
            format_float(y.determinant()),
            format_float(s[s.len() - 1])
        )
        .unwrap();
    }
    out
}
