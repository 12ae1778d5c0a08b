use std::collections::HashMap;

use crate::expr::{parse, Expr};
use crate::{Error, Matrix, Result, SodeSystem};

use super::{substitute_w, LieAlgebraData, ReducedSystem};

/// A frame of vector fields `E_j = E^i_j ∂/∂q^i` on a chart of the group.
#[derive(Debug, Clone)]
pub struct Frame {
    pub coordinates: Vec<String>,
    /// `E^i_j`, row `i`, column `j`, row-major.
    pub vectors: Vec<Expr>,
    /// Dual coframe `θ^j_i` with `w^j = θ^j_i q'^i`, row-major. Computed
    /// symbolically from `vectors` when absent.
    pub coframe: Option<Vec<Expr>>,
}

impl Frame {
    /// `vectors[j]` lists the components of `E_{j+1}`; `coframe[j]` the
    /// components of `θ^{j+1}`.
    pub fn parse(
        coordinates: &[&str],
        vectors: &[&[&str]],
        coframe: Option<&[&[&str]]>,
    ) -> Result<Self> {
        let n = coordinates.len();
        let names: Vec<String> = coordinates.iter().map(|s| s.to_string()).collect();
        let grid = |rows: &[&[&str]], what: &str| -> Result<Vec<Vec<Expr>>> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidSystem(format!("{what} must be {n}x{n}")));
            }
            rows.iter()
                .map(|r| {
                    r.iter()
                        .map(|s| Ok(parse(s, &names)?))
                        .collect::<Result<Vec<_>>>()
                })
                .collect()
        };
        let cols = grid(vectors, "frame")?;
        let vectors = (0..n)
            .flat_map(|i| cols.iter().map(move |c| c[i].clone()))
            .collect::<Vec<_>>();
        let coframe = match coframe {
            Some(rows) => Some(grid(rows, "coframe")?.into_iter().flatten().collect()),
            None => None,
        };
        Ok(Frame {
            coordinates: names,
            vectors,
            coframe,
        })
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.vectors[i * self.dim() + j]
    }

    fn eval(&self, exprs: &[Expr], q: &[f64]) -> Result<Matrix> {
        let n = self.dim();
        let env: HashMap<String, f64> = self
            .coordinates
            .iter()
            .cloned()
            .zip(q.iter().copied())
            .collect();
        let vals = exprs
            .iter()
            .map(|e| Ok(e.eval(&env)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Matrix::from_row_slice(n, n, &vals))
    }

    /// `E^i_j` at `q`.
    pub fn matrix(&self, q: &[f64]) -> Result<Matrix> {
        if q.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: q.len(),
            });
        }
        self.eval(&self.vectors, q)
    }

    /// The coframe expressions, given or derived from the adjugate.
    pub fn coframe_exprs(&self) -> Result<Vec<Expr>> {
        if let Some(c) = &self.coframe {
            return Ok(c.clone());
        }
        let n = self.dim();
        let m: Vec<Vec<Expr>> = (0..n)
            .map(|i| (0..n).map(|j| self.entry(i, j).clone()).collect())
            .collect();
        let det = determinant(&m);
        if det.is_zero() {
            return Err(Error::SingularFrame {
                at: "every point (determinant is identically zero)".into(),
            });
        }
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                // inverse[j][i] = cofactor(i, j) / det
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Expr::div(
                    Expr::scale(sign, determinant(&minor(&m, i, j))),
                    det.clone(),
                ));
            }
        }
        Ok(out)
    }

    /// Check that the frame is invertible at `q` and that the coframe is dual to it.
    pub fn check_at(&self, q: &[f64]) -> Result<f64> {
        let e = self.matrix(q)?;
        let s = crate::linalg::singular_values(&e);
        if s.last().copied().unwrap_or(0.0) <= 1e-12 * s[0].max(1.0) {
            return Err(Error::SingularFrame {
                at: format!("{q:?}"),
            });
        }
        let theta = self.eval(&self.coframe_exprs()?, q)?;
        Ok((theta * e - Matrix::identity(self.dim(), self.dim()))
            .abs()
            .max())
    }
}

fn minor(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect()
}

fn determinant(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        n => Expr::sum((0..n).filter(|&j| !m[0][j].is_zero()).map(|j| {
            let t = Expr::mul(m[0][j].clone(), determinant(&minor(m, 0, j)));
            if j % 2 == 0 {
                t
            } else {
                Expr::neg(t)
            }
        })),
    }
}

/// Largest `|[E_i, E_j] - C^k_ij E_k|` at `q`.
pub fn frame_bracket_residual(frame: &Frame, algebra: &LieAlgebraData, q: &[f64]) -> Result<f64> {
    let n = frame.dim();
    if algebra.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: algebra.dim(),
        });
    }
    let e = frame.matrix(q)?;
    // de[a][b] = ∂E^·_·/∂q^b entry a
    let env: HashMap<String, f64> = frame
        .coordinates
        .iter()
        .cloned()
        .zip(q.iter().copied())
        .collect();
    let mut d = vec![Matrix::zeros(n, n); n];
    for (b, name) in frame.coordinates.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                d[b][(i, j)] = frame.entry(i, j).diff(name).eval(&env)?;
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for a in 0..n {
                let mut br = 0.0;
                for b in 0..n {
                    br += e[(b, i)] * d[b][(a, j)] - e[(b, j)] * d[b][(a, i)];
                }
                let rhs: f64 = (0..n).map(|k| algebra.c(k, i, j) * e[(a, k)]).sum();
                worst = worst.max((br - rhs).abs());
            }
        }
    }
    Ok(worst)
}

/// The coordinate SODE `q'' = E γ(w) + (∂E/∂q^k q'^k) w` with `w = θ q'`.
pub fn lift_to_group(red: &ReducedSystem, frame: &Frame) -> Result<SodeSystem> {
    let n = frame.dim();
    if red.dim() != n {
        return Err(Error::Dimension {
            expected: red.dim(),
            got: n,
        });
    }
    let coords = &frame.coordinates;
    for name in coords {
        if red.parameters().contains_key(name) {
            return Err(Error::InvalidSystem(format!(
                "coordinate `{name}` clashes with a parameter"
            )));
        }
    }
    let theta = frame.coframe_exprs()?;
    let vel: Vec<Expr> = coords.iter().map(|c| Expr::var(&format!("v{c}"))).collect();
    let w: Vec<Expr> = (0..n)
        .map(|j| Expr::sum((0..n).map(|i| Expr::mul(theta[j * n + i].clone(), vel[i].clone()))))
        .collect();
    let gamma = substitute_w(red.gamma(), &w);
    let mut forces = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms = Vec::new();
        for j in 0..n {
            let eij = frame.entry(i, j);
            terms.push(Expr::mul(eij.clone(), gamma[j].clone()));
            let rate = Expr::sum((0..n).map(|k| Expr::mul(eij.diff(&coords[k]), vel[k].clone())));
            if !rate.is_zero() {
                terms.push(Expr::mul(rate, w[j].clone()));
            }
        }
        forces.push(Expr::sum(terms));
    }
    SodeSystem::new(coords.clone(), forces, red.parameters().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::jacobi_endomorphism;
    use crate::liegroup::frame_phi;
    use crate::TangentState;

    fn se2_frame() -> Frame {
        Frame::parse(
            &["x", "y", "z"],
            &[
                &["cos(z)", "-sin(z)", "0"],
                &["sin(z)", "cos(z)", "0"],
                &["0", "0", "1"],
            ],
            None,
        )
        .unwrap()
    }

    fn euler_frame(with_coframe: bool) -> Frame {
        let cof: &[&[&str]] = &[
            &["sin(th)*sin(ps)", "cos(ps)", "0"],
            &["sin(th)*cos(ps)", "-sin(ps)", "0"],
            &["cos(th)", "0", "1"],
        ];
        Frame::parse(
            &["ph", "th", "ps"],
            &[
                &["sin(ps)/sin(th)", "cos(ps)", "-cos(th)*sin(ps)/sin(th)"],
                &["cos(ps)/sin(th)", "-sin(ps)", "-cos(th)*cos(ps)/sin(th)"],
                &["0", "0", "1"],
            ],
            with_coframe.then_some(cof),
        )
        .unwrap()
    }

    #[test]
    fn frames_satisfy_their_brackets() {
        let q = [0.3, 1.1, -0.4];
        assert!(frame_bracket_residual(&se2_frame(), &LieAlgebraData::se2(), &q).unwrap() < 1e-14);
        assert!(
            frame_bracket_residual(&euler_frame(true), &LieAlgebraData::so3(), &q).unwrap() < 1e-13
        );
        assert!(euler_frame(true).check_at(&q).unwrap() < 1e-14);
        assert!(euler_frame(false).check_at(&q).unwrap() < 1e-13);
    }

    #[test]
    fn canonical_se2_lift() {
        let sys = lift_to_group(
            &ReducedSystem::canonical(LieAlgebraData::se2()),
            &se2_frame(),
        )
        .unwrap();
        let s = TangentState::new(vec![0.2, -0.5, 0.9], vec![0.7, 0.3, 1.3]);
        let f = sys.eval_forces(&s).unwrap();
        assert!((f[0] - 0.3 * 1.3).abs() < 1e-14);
        assert!((f[1] + 0.7 * 1.3).abs() < 1e-14);
        assert!(f[2].abs() < 1e-14);
    }

    fn assert_phi_matches(red: &ReducedSystem, frame: &Frame, s: &TangentState) {
        let sys = lift_to_group(red, frame).unwrap();
        let e = frame.matrix(&s.q).unwrap();
        let ei = e.clone().try_inverse().unwrap();
        let w: Vec<f64> = (&ei * nalgebra::DVector::from_column_slice(&s.v))
            .iter()
            .copied()
            .collect();
        let expected = &e * frame_phi(red, &w).unwrap() * &ei;
        let got = jacobi_endomorphism(&sys, s).unwrap();
        assert!(
            (&got - &expected).abs().max() < 1e-9 * (1.0 + expected.abs().max()),
            "{got}\n{expected}"
        );
    }

    #[test]
    fn frame_phi_agrees_with_coordinate_phi() {
        let red = ReducedSystem::parse(
            LieAlgebraData::so3(),
            &[
                "(I2 - I3)/I1*w2*w3",
                "(I3 - I1)/I2*w3*w1",
                "(I1 - I2)/I3*w1*w2",
            ],
            &[("I1", 1.0), ("I2", 2.0), ("I3", 3.0)],
        )
        .unwrap();
        let s = TangentState::new(vec![0.3, 1.1, -0.4], vec![0.5, -0.2, 0.8]);
        assert_phi_matches(&red, &euler_frame(true), &s);
        let se2 = ReducedSystem::parse(
            LieAlgebraData::se2(),
            &["w2*w3", "-w1*w3 + w2", "w1*w2"],
            &[],
        )
        .unwrap();
        assert_phi_matches(
            &se2,
            &se2_frame(),
            &TangentState::new(vec![0.1, 0.4, 0.7], vec![0.3, -0.6, 1.2]),
        );
    }
}
