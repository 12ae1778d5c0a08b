//! Eigenstructure of the Jacobi endomorphism, at a state and along curves.

mod hungarian;

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

pub use hungarian::assign;

use crate::flow::Trajectory;
use crate::geometry::{jacobi_endomorphism, max_abs, nabla_phi};
use crate::linalg::{complex_null_space, complex_null_space_with_values, condition_number};
use crate::{format_float, Matrix, Result, SodeSystem, TangentState};

pub type C64 = Complex<f64>;

/// Eigenvalues closer than this times the spectral radius are one cluster.
pub const MERGE_REL: f64 = 1e-6;
/// Eigenvector matrices worse conditioned than this are flagged.
pub const CONDITION_LIMIT: f64 = 1e8;

/// One eigenvalue cluster and a basis of its eigenspace.
#[derive(Debug, Clone)]
pub struct Eigenspace {
    pub value: C64,
    pub multiplicity: usize,
    pub basis: Vec<DVector<C64>>,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// All `n` eigenvalues, sorted by real then imaginary part; clusters share a value.
    pub values: Vec<C64>,
    /// One unit eigenvector per entry of `values`.
    pub vectors: Vec<DVector<C64>>,
    pub spaces: Vec<Eigenspace>,
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl Spectrum {
    /// Largest `|Mx - λx| / |M|` over the reported pairs.
    pub fn residual(&self, m: &Matrix) -> f64 {
        let mc = m.map(|x| C64::new(x, 0.0));
        let scale = max_abs(m).max(f64::MIN_POSITIVE);
        self.values
            .iter()
            .zip(&self.vectors)
            .map(|(l, x)| (&mc * x - x * *l).norm() / scale)
            .fold(0.0, f64::max)
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.re).collect()
    }
}

fn normalize(mut x: DVector<C64>) -> DVector<C64> {
    let norm = x.norm();
    if norm > 0.0 {
        x /= C64::new(norm, 0.0);
    }
    // fix the phase: largest component real positive
    if let Some(big) = x
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
    {
        if big.norm() > 0.0 {
            let phase = big.conj() / big.norm();
            x *= phase;
        }
    }
    x
}

/// Full eigen-decomposition of a real square matrix.
pub fn decompose(m: &Matrix) -> Spectrum {
    let n = m.nrows();
    let mut raw: Vec<C64> = m.clone().complex_eigenvalues().iter().copied().collect();
    raw.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let radius = raw.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let merge = (MERGE_REL * radius).max(1e-14);
    let defect = 1e-5 * radius.max(max_abs(m)).max(1e-14);

    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for l in raw {
        match clusters.iter_mut().find(|c| (c[0] - l).norm() <= merge) {
            Some(c) => c.push(l),
            None => clusters.push(vec![l]),
        }
    }
    let mut spaces = Vec::new();
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for c in clusters {
        let mut value = c.iter().sum::<C64>() / c.len() as f64;
        if value.im.abs() <= merge {
            value.im = 0.0;
        }
        let shifted = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { value } else { C64::new(0.0, 0.0) };
            C64::new(m[(i, j)], 0.0) - d
        });
        let found = complex_null_space_with_values(&shifted, c.len());
        let good = found.iter().filter(|(_, sv)| *sv <= defect).count().max(1);
        // a defective cluster repeats its last genuine eigenvector, which
        // leaves the eigenvector matrix singular and trips the condition check
        let basis: Vec<DVector<C64>> = (0..c.len())
            .map(|i| found[i.min(good - 1)].0.clone())
            .map(|x| {
                if value.im == 0.0 {
                    // a real eigenvalue has a real eigenspace; drop the arbitrary phase
                    let re = x.map(|z| z.re);
                    let im = x.map(|z| z.im);
                    let pick = if re.norm() >= im.norm() { re } else { im };
                    normalize(pick.map(|r| C64::new(r, 0.0)))
                } else {
                    normalize(x)
                }
            })
            .collect();
        for x in &basis {
            values.push(value);
            vectors.push(x.clone());
        }
        spaces.push(Eigenspace {
            value,
            multiplicity: c.len(),
            basis,
        });
    }
    let v = DMatrix::from_fn(n, n, |i, j| vectors[j][i]);
    let svals = v.svd(false, false).singular_values;
    let smax = svals.iter().copied().fold(0.0, f64::max);
    let smin = svals.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let mut warnings = Vec::new();
    if condition > CONDITION_LIMIT {
        warnings.push(format!(
            "eigenvector matrix condition number {condition:.3e}: matrix may not be diagonalizable"
        ));
    }
    if spaces.iter().any(|s| s.value.im != 0.0) {
        warnings.push("complex eigenvalues present".into());
    }
    Spectrum {
        values,
        vectors,
        spaces,
        condition,
        warnings,
    }
}

/// Eigen-decomposition of `Φ` at `s`.
pub fn spectrum_at(sys: &SodeSystem, s: &TangentState) -> Result<Spectrum> {
    Ok(decompose(&jacobi_endomorphism(sys, s)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchInfo {
    /// `sup_t |λ(t) - λ(0)|`.
    pub constancy_deviation: f64,
    /// `sup_t |dλ/dt|` from differencing the branch; estimates `Γ(λ)`.
    pub flow_derivative: f64,
    pub multiplicity: usize,
    /// Set when a matching step was larger than half the local branch gap.
    pub crossing: bool,
}

#[derive(Debug, Clone)]
pub struct SpectrumTrace {
    pub t: Vec<f64>,
    /// `values[k][b]`: branch `b` at node `k`.
    pub values: Vec<Vec<C64>>,
    pub vectors: Vec<Vec<DVector<C64>>>,
    pub branches: Vec<BranchInfo>,
    /// `(node, branch, branch)` for ambiguous matchings; both orders are
    /// consistent with the data there.
    pub crossings: Vec<(usize, usize, usize)>,
    pub warnings: Vec<String>,
}

impl SpectrumTrace {
    pub fn branch(&self, b: usize) -> Vec<C64> {
        self.values.iter().map(|v| v[b]).collect()
    }

    /// CSV `t,re(λ1),im(λ1),...`.
    pub fn to_csv(&self) -> String {
        let n = self.values.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for b in 1..=n {
            write!(out, ",re(λ{b}),im(λ{b})").unwrap();
        }
        out.push('\n');
        for (t, row) in self.t.iter().zip(&self.values) {
            out.push_str(&format_float(*t));
            for c in row {
                write!(out, ",{},{}", format_float(c.re), format_float(c.im)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Follow the spectrum of `Φ` along `traj`, matching eigenvalues node to node.
pub fn track_spectrum(traj: &Trajectory) -> Result<SpectrumTrace> {
    let sys = traj.system();
    let n = sys.dim();
    let mut out = SpectrumTrace {
        t: Vec::new(),
        values: Vec::new(),
        vectors: Vec::new(),
        branches: Vec::new(),
        crossings: Vec::new(),
        warnings: Vec::new(),
    };
    for k in 0..traj.len() {
        let s = traj.state(k);
        let spec = spectrum_at(sys, &s)?;
        for w in &spec.warnings {
            if !out.warnings.contains(w) {
                out.warnings.push(w.clone());
            }
        }
        let (vals, vecs) = if let Some(prev) = out.values.last() {
            let cost: Vec<Vec<f64>> = prev
                .iter()
                .map(|p| spec.values.iter().map(|l| (p - l).norm()).collect())
                .collect();
            let a = assign(&cost);
            for b in 0..n {
                let gap = (0..n)
                    .filter(|&c| c != b)
                    .map(|c| (prev[b] - prev[c]).norm())
                    .filter(|&g| g > MERGE_REL * prev.iter().map(|z| z.norm()).fold(0.0, f64::max))
                    .fold(f64::INFINITY, f64::min);
                if gap.is_finite() && cost[b][a[b]] > 0.5 * gap {
                    let other = (0..n).filter(|&c| c != b).min_by(|&x, &y| {
                        (prev[b] - prev[x])
                            .norm()
                            .total_cmp(&(prev[b] - prev[y]).norm())
                    });
                    if let Some(o) = other {
                        out.crossings.push((k, b, o));
                    }
                }
            }
            (
                a.iter().map(|&j| spec.values[j]).collect::<Vec<_>>(),
                a.iter()
                    .map(|&j| spec.vectors[j].clone())
                    .collect::<Vec<_>>(),
            )
        } else {
            (spec.values.clone(), spec.vectors.clone())
        };
        out.t.push(traj.times()[k]);
        out.values.push(vals);
        out.vectors.push(vecs);
    }
    for b in 0..n {
        let first = out.values[0][b];
        let dev = out
            .values
            .iter()
            .map(|v| (v[b] - first).norm())
            .fold(0.0, f64::max);
        let mut rate = 0.0f64;
        for k in 1..out.t.len() {
            let dt = out.t[k] - out.t[k - 1];
            if dt > 0.0 {
                rate = rate.max((out.values[k][b] - out.values[k - 1][b]).norm() / dt);
            }
        }
        let merge = MERGE_REL * out.values[0].iter().map(|z| z.norm()).fold(0.0, f64::max);
        let multiplicity = out.values[0]
            .iter()
            .filter(|z| (**z - first).norm() <= merge.max(1e-14))
            .count();
        let crossing = out.crossings.iter().any(|c| c.1 == b || c.2 == b);
        out.branches.push(BranchInfo {
            constancy_deviation: dev,
            flow_derivative: rate,
            multiplicity,
            crossing,
        });
    }
    Ok(out)
}

/// Diagnostics for one eigendistribution at one state.
#[derive(Debug, Clone, Serialize)]
pub struct EigendistributionReport {
    pub value_re: f64,
    pub value_im: f64,
    pub multiplicity: usize,
    /// `|[∇Φ,Φ] X| / (|∇Φ| |Φ| |X|)`.
    pub commutator_residual: f64,
    /// Component of `(∇Φ) X` outside the eigenspace, relative to `|∇Φ| |X|`.
    pub invariance_residual: f64,
    /// `Γ(λ)` from left and right eigenvectors: `tr((UᴴX)⁻¹ Uᴴ ∇Φ X) / m`.
    pub flow_derivative: f64,
    /// `|∇Φ| / max(1, |Φ|)`.
    pub nabla_phi_norm: f64,
    pub commutes: bool,
    pub invariant: bool,
    pub locally_symmetric: bool,
}

pub const CHECK_TOL: f64 = 1e-7;

fn cmat(m: &Matrix) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

fn frob(m: &DMatrix<C64>) -> f64 {
    m.norm()
}

pub fn eigendistribution_checks(
    sys: &SodeSystem,
    s: &TangentState,
    space: &Eigenspace,
) -> Result<EigendistributionReport> {
    let phi = jacobi_endomorphism(sys, s)?;
    let nphi = nabla_phi(sys, s)?;
    let n = phi.nrows();
    let m = space.basis.len().max(1);
    let x = DMatrix::from_fn(n, space.basis.len(), |i, j| space.basis[j][i]);
    let (pc, nc) = (cmat(&phi), cmat(&nphi));
    let comm = &nc * &pc - &pc * &nc;
    let tiny = f64::MIN_POSITIVE;
    let commutator_residual = frob(&(&comm * &x)) / (frob(&nc) * frob(&pc) * frob(&x)).max(tiny);

    let nx = &nc * &x;
    let gram = x.adjoint() * &x;
    let proj = match gram.clone().try_inverse() {
        Some(g) => &x * g * x.adjoint(),
        None => DMatrix::zeros(n, n),
    };
    let outside = &nx - &proj * &nx;
    let invariance_residual = frob(&outside) / (frob(&nc) * frob(&x)).max(tiny);

    // left eigenvectors of Φ for λ are right null vectors of (Φ - λI)ᴴ
    let shifted_h = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j {
            space.value
        } else {
            C64::new(0.0, 0.0)
        };
        pc[(i, j)] - d
    })
    .adjoint();
    let u_vecs = complex_null_space(&shifted_h, space.basis.len());
    let u = DMatrix::from_fn(n, u_vecs.len(), |i, j| u_vecs[j][i]);
    let ux = u.adjoint() * &x;
    let flow_derivative = match ux.clone().try_inverse() {
        Some(inv) => (inv * u.adjoint() * &nx).trace().re / m as f64,
        None => f64::NAN,
    };
    let nabla_phi_norm = max_abs(&nphi) / max_abs(&phi).max(1.0);
    Ok(EigendistributionReport {
        value_re: space.value.re,
        value_im: space.value.im,
        multiplicity: space.multiplicity,
        commutator_residual,
        invariance_residual,
        flow_derivative,
        nabla_phi_norm,
        commutes: commutator_residual < CHECK_TOL,
        invariant: invariance_residual < CHECK_TOL,
        locally_symmetric: nabla_phi_norm < CHECK_TOL,
    })
}

/// Condition number of the real parts of the eigenvector matrix.
pub fn eigenvector_condition(spec: &Spectrum) -> f64 {
    let n = spec.vectors.len();
    let v = Matrix::from_fn(n, n, |i, j| spec.vectors[j][i].re);
    condition_number(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_spectrum() {
        let sys =
            SodeSystem::parse(&["x", "y"], &["-x", "(vy + x*vx)^3 - vx^2 + x^2 - 1"], &[]).unwrap();
        let s = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let spec = spectrum_at(&sys, &s).unwrap();
        let vals = spec.real_values();
        assert!((vals[0] + 2.25).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!(spec.residual(&jacobi_endomorphism(&sys, &s).unwrap()) < 1e-12);
    }

    #[test]
    fn double_eigenvalue_gets_two_vectors() {
        let m = Matrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let spec = decompose(&m);
        assert_eq!(spec.spaces.len(), 2);
        assert_eq!(spec.spaces[0].multiplicity, 2);
        assert!(spec.residual(&m) < 1e-12);
        assert!(spec.condition < 10.0);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let spec = decompose(&m);
        assert!((spec.values[0].im.abs() - 1.0).abs() < 1e-12);
        assert!(spec.residual(&m) < 1e-12);
        assert!(spec.warnings.iter().any(|w| w.contains("complex")));
    }

    #[test]
    fn jordan_block_is_flagged() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let spec = decompose(&m);
        assert!(spec.condition > CONDITION_LIMIT);
        assert!(!spec.warnings.is_empty());
    }

    #[test]
    fn free_particle_spectrum_is_zero() {
        let sys = SodeSystem::parse(&["a", "b"], &["0", "0"], &[]).unwrap();
        let spec = spectrum_at(&sys, &TangentState::new(vec![1.0, 2.0], vec![3.0, 4.0])).unwrap();
        assert!(spec.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn csv_header() {
        let sys = SodeSystem::parse(&["x"], &["-x"], &[]).unwrap();
        let tr =
            crate::flow::integrate_curve(&sys, &TangentState::new(vec![0.0], vec![1.0]), 1.0, 1e-8)
                .unwrap();
        assert!(track_spectrum(&tr)
            .unwrap()
            .to_csv()
            .starts_with("t,re(λ1),im(λ1)\n"));
    }
}
