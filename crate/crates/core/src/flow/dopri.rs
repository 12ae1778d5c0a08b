//! Dormand–Prince 5(4) with cubic Hermite dense output.

use crate::expr::ExprError;
use crate::StopReason;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    /// Times that must appear as grid nodes.
    pub stops: Vec<f64>,
    pub max_steps: usize,
    pub blowup: f64,
    /// Only the first `k` components are tested against `blowup`; linear
    /// variational parts may grow without bound.
    pub blowup_prefix: Option<usize>,
    pub h_max: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-10,
            atol: 1e-12,
            stops: Vec::new(),
            max_steps: 1_000_000,
            blowup: 1e12,
            blowup_prefix: None,
            h_max: f64::INFINITY,
        }
    }
}

/// Accepted grid with node values and slopes.
#[derive(Debug, Clone, Default)]
pub struct Dense {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

impl Dense {
    /// Interval index `k` with `t[k] <= t < t[k+1]` (clamped).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.t.len();
        if n < 2 {
            return 0;
        }
        match self.t.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let k = self.locate(t);
        if self.t.len() < 2 {
            return self.y[0].clone();
        }
        if t == self.t[k] {
            return self.y[k].clone();
        }
        if t == self.t[k + 1] {
            return self.y[k + 1].clone();
        }
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        (0..self.y[k].len())
            .map(|i| {
                h00 * self.y[k][i]
                    + h * h10 * self.dy[k][i]
                    + h01 * self.y[k + 1][i]
                    + h * h11 * self.dy[k + 1][i]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Stopped {
    pub t: f64,
    pub reason: StopReason,
}

fn wrms(err: &[f64], y0: &[f64], y1: &[f64], o: &Options) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = o.atol + o.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir_span: f64, o: &Options) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), ExprError>,
{
    let sc: Vec<f64> = y0.iter().map(|y| o.atol + o.rtol * y.abs()).collect();
    let norm = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / v.len().max(1) as f64)
            .sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(dir_span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    if f(t0 + h0, &y1, &mut f1).is_err() {
        return h0 * 1e-3;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(dir_span).min(o.h_max)
}

/// Integrate `y' = f(t, y)` from `t0` to `t1 > t0`.
///
/// Returns the accepted grid and, if the run stopped early, why and where.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, o: &Options) -> (Dense, Option<Stopped>)
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), ExprError>,
{
    let n = y0.len();
    let mut out = Dense::default();
    let mut f0 = vec![0.0; n];
    if let Err(e) = f(t0, y0, &mut f0) {
        out.t.push(t0);
        out.y.push(y0.to_vec());
        out.dy.push(vec![f64::NAN; n]);
        return (
            out,
            Some(Stopped {
                t: t0,
                reason: StopReason::Domain(e),
            }),
        );
    }
    out.t.push(t0);
    out.y.push(y0.to_vec());
    out.dy.push(f0.clone());
    if t1 <= t0 {
        return (out, None);
    }
    let span = t1 - t0;
    let mut stops: Vec<f64> = o
        .stops
        .iter()
        .copied()
        .filter(|&s| s > t0 && s < t1)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(t1);
    let mut next_stop = 0usize;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = initial_step(&mut f, t0, &y, &f0, span, o);
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    k[0].copy_from_slice(&f0);
    let h_min = 1e-14 * span;
    let mut steps = 0usize;
    let mut last_domain: Option<ExprError> = None;
    let mut rejected_last = false;

    loop {
        if steps >= o.max_steps {
            return (
                out,
                Some(Stopped {
                    t,
                    reason: StopReason::TooManySteps,
                }),
            );
        }
        steps += 1;
        let target = stops[next_stop];
        let mut hits_stop = false;
        h = h.min(o.h_max);
        if t + h >= target || target - (t + h) < 1e-3 * h {
            h = target - t;
            hits_stop = true;
        }
        if h < h_min && !hits_stop {
            let reason = last_domain
                .take()
                .map_or(StopReason::StepUnderflow, StopReason::Domain);
            return (out, Some(Stopped { t, reason }));
        }

        let mut failed: Option<ExprError> = None;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            if let Err(e) = f(t + C[s] * h, &stage, &mut k[s]) {
                failed = Some(e);
                break;
            }
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        if let Some(e) = failed {
            last_domain = Some(e);
            h *= 0.25;
            rejected_last = true;
            if h < h_min {
                let reason = StopReason::Domain(last_domain.take().unwrap());
                return (out, Some(Stopped { t, reason }));
            }
            continue;
        }
        for i in 0..n {
            err[i] = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        if y_new.iter().chain(k[6].iter()).any(|x| !x.is_finite()) {
            h *= 0.25;
            rejected_last = true;
            if h < h_min {
                return (
                    out,
                    Some(Stopped {
                        t,
                        reason: StopReason::NonFinite,
                    }),
                );
            }
            continue;
        }
        let e = wrms(&err, &y, &y_new, o);
        if e <= 1.0 {
            last_domain = None;
            t = if hits_stop { target } else { t + h };
            if hits_stop {
                next_stop += 1;
            }
            std::mem::swap(&mut y, &mut y_new);
            let fsal = k[6].clone();
            k[0].copy_from_slice(&fsal);
            out.t.push(t);
            out.y.push(y.clone());
            out.dy.push(fsal);
            if y[..o.blowup_prefix.unwrap_or(y.len()).min(y.len())]
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()))
                > o.blowup
            {
                return (
                    out,
                    Some(Stopped {
                        t,
                        reason: StopReason::BlowUp,
                    }),
                );
            }
            if next_stop >= stops.len() {
                return (out, None);
            }
            let mut factor = if e == 0.0 {
                5.0
            } else {
                (0.9 * e.powf(-0.2)).clamp(0.2, 5.0)
            };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            h *= factor;
        } else {
            h *= (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
            rejected_last = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_to_tight_tolerance() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
            Ok(())
        };
        let (sol, stop) = integrate(f, 0.0, &[0.0, 1.0], 10.0, &Options::default());
        assert!(stop.is_none());
        let y = sol.y.last().unwrap();
        assert_eq!(*sol.t.last().unwrap(), 10.0);
        assert!((y[0] - 10f64.sin()).abs() < 1e-9);
        assert!((y[1] - 10f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn stops_are_hit_exactly_and_interpolant_reproduces_nodes() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = -y[0];
            Ok(())
        };
        let o = Options {
            stops: vec![0.5, 1.25, 2.0],
            ..Options::default()
        };
        let (sol, _) = integrate(f, 0.0, &[1.0], 3.0, &o);
        for s in [0.5, 1.25, 2.0, 3.0] {
            assert!(sol.t.contains(&s));
        }
        for (i, &t) in sol.t.iter().enumerate() {
            assert_eq!(sol.eval(t), sol.y[i]);
        }
        assert!((sol.eval(0.77)[0] - (-0.77f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn finite_time_blowup_is_reported() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[0] * y[0];
            Ok(())
        };
        let (_, stop) = integrate(f, 0.0, &[1.0], 2.0, &Options::default());
        let s = stop.expect("y = 1/(1-t) escapes at t = 1");
        assert!(matches!(
            s.reason,
            StopReason::BlowUp | StopReason::StepUnderflow
        ));
        assert!((s.t - 1.0).abs() < 1e-6);
    }
}
