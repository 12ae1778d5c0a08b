//! Finite-difference oracles shared by the integration tests. They use only
//! force evaluation, never the symbolic derivative tables.

#![allow(dead_code)]

use sodegeom::{Matrix, SodeSystem, TangentState};

pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn forces_at(sys: &SodeSystem, flat: &[f64]) -> Vec<f64> {
    sys.eval_forces(&TangentState::from_flat(flat).unwrap())
        .unwrap()
}

/// `∂f^i/∂x^k` for `x = (q, v)` by central differences; `n × 2n`.
pub fn fd_force_jacobian(sys: &SodeSystem, flat: &[f64], h: f64) -> Matrix {
    let n = sys.dim();
    let mut out = Matrix::zeros(n, 2 * n);
    for k in 0..2 * n {
        let mut p = flat.to_vec();
        let mut m = flat.to_vec();
        p[k] += h;
        m[k] -= h;
        let (fp, fm) = (forces_at(sys, &p), forces_at(sys, &m));
        for i in 0..n {
            out[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

/// `Γ = -½ ∂f/∂v`.
pub fn fd_connection(sys: &SodeSystem, flat: &[f64], h: f64) -> Matrix {
    let n = sys.dim();
    fd_force_jacobian(sys, flat, h).columns(n, n).into_owned() * -0.5
}

/// `Φ = -∂f/∂q - Γ·Γ - D(Γ)`, with `D(Γ)` a central difference along the
/// vector field `(v, f)`.
pub fn fd_phi(sys: &SodeSystem, s: &TangentState) -> Matrix {
    let n = sys.dim();
    let flat = s.flat();
    let h = 1e-5;
    let jac = fd_force_jacobian(sys, &flat, h);
    let dfdq = jac.columns(0, n).into_owned();
    let gamma = jac.columns(n, n).into_owned() * -0.5;
    let f = sys.eval_forces(s).unwrap();
    let field: Vec<f64> = s.v.iter().chain(f.iter()).copied().collect();
    let e = 1e-4;
    let shift = |sign: f64| -> Vec<f64> {
        flat.iter()
            .zip(&field)
            .map(|(x, d)| x + sign * e * d)
            .collect()
    };
    let d_gamma =
        (fd_connection(sys, &shift(1.0), h) - fd_connection(sys, &shift(-1.0), h)) / (2.0 * e);
    -dfdq - &gamma * &gamma - d_gamma
}

/// Relative max-entry deviation.
pub fn rel_dev(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    (a - b).abs().max() / scale
}

/// Fourth-order central difference.
pub fn five_point(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

pub const EXPR_VARS: [&str; 4] = ["x", "y", "vx", "vy"];

/// Random expression over [`EXPR_VARS`] that is smooth and finite on the
/// cube `[-1, 1]^4`.
pub fn random_expr(rng: &mut impl rand::Rng, depth: u32) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.75) {
            EXPR_VARS[rng.random_range(0..4)].to_string()
        } else {
            ["0.5", "1", "2", "3", "1.25"][rng.random_range(0..5)].to_string()
        };
    }
    let a = random_expr(rng, depth - 1);
    match rng.random_range(0..12) {
        0 | 1 => format!("{a} + {}", random_expr(rng, depth - 1)),
        2 => format!("{a} - ({})", random_expr(rng, depth - 1)),
        3 | 4 => format!("({a})*({})", random_expr(rng, depth - 1)),
        5 => format!("({a})/(1 + ({})^2)", random_expr(rng, depth - 1)),
        6 => format!("({a})^{}", rng.random_range(2..4)),
        7 => format!("sin({a})"),
        8 => format!("cos({a})"),
        9 => format!("exp(sin({a}))"),
        10 => format!("sqrt(1 + ({a})^2) + ln(2 + cos({a}))"),
        _ => format!("-tan(0.5*sin({a}))"),
    }
}

pub fn binding(values: &[f64]) -> std::collections::HashMap<String, f64> {
    EXPR_VARS
        .iter()
        .zip(values)
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

pub fn declared() -> Vec<String> {
    EXPR_VARS.iter().map(|s| s.to_string()).collect()
}

/// Worst relative gap between symbolic partials of `src` and a five-point
/// difference, over every variable, at `point`.
pub fn derivative_gap(src: &str, point: &[f64]) -> f64 {
    use sodegeom::expr::parse;
    let e = parse(src, &declared()).unwrap();
    let mut worst = 0.0f64;
    for (k, name) in EXPR_VARS.iter().enumerate() {
        let sym = e.diff(name).eval(&binding(point)).unwrap();
        let fd = five_point(
            |x| {
                let mut p = point.to_vec();
                p[k] = x;
                e.eval(&binding(&p)).unwrap()
            },
            point[k],
            1e-3,
        );
        worst = worst.max((sym - fd).abs() / sym.abs().max(1.0));
    }
    worst
}

/// Coefficients of the characteristic polynomial, up to sign: the sums of
/// principal minors of each order.
pub fn char_poly(m: &Matrix) -> Vec<f64> {
    let n = m.nrows();
    (1..=n)
        .map(|k| {
            let mut total = 0.0;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize == k {
                    let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                    total += Matrix::from_fn(k, k, |r, c| m[(idx[r], idx[c])]).determinant();
                }
            }
            total
        })
        .collect()
}
