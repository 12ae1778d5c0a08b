use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Structure constants `[E_i, E_j] = C^k_ij E_k` of a real Lie algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebraData {
    dim: usize,
    // c[(k * n + i) * n + j] = C^k_ij
    c: Vec<f64>,
    pub labels: Vec<String>,
}

pub const JACOBI_TOL: f64 = 1e-12;

impl LieAlgebraData {
    /// Build from a full tensor indexed `c[k][i][j] = C^k_ij`, validating
    /// antisymmetry and the Jacobi identity.
    pub fn from_tensor(c: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = c.len();
        if n == 0 {
            return Err(Error::InvalidAlgebra("dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(n * n * n);
        for (k, plane) in c.iter().enumerate() {
            if plane.len() != n || plane.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidAlgebra(format!(
                    "structure constants for k = {} are not {n}x{n}",
                    k + 1
                )));
            }
            flat.extend(plane.iter().flatten());
        }
        let alg = LieAlgebraData {
            dim: n,
            c: flat,
            labels: default_labels(n),
        };
        alg.validate()?;
        Ok(alg)
    }

    /// Build from 1-based `(i, j, k, C^k_ij)` entries; the `(j, i)` entries
    /// are completed by antisymmetry.
    pub fn from_entries(dim: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidAlgebra("dimension must be positive".into()));
        }
        let mut c = vec![0.0; dim * dim * dim];
        let mut set = vec![false; dim * dim * dim];
        let idx = |k: usize, i: usize, j: usize| (k * dim + i) * dim + j;
        for &(i, j, k, v) in entries {
            if !(1..=dim).contains(&i) || !(1..=dim).contains(&j) || !(1..=dim).contains(&k) {
                return Err(Error::InvalidAlgebra(format!(
                    "index out of range in entry [{i}, {j}, {k}]"
                )));
            }
            let (i, j, k) = (i - 1, j - 1, k - 1);
            if i == j {
                if v != 0.0 {
                    return Err(Error::InvalidAlgebra(format!(
                        "C^{}_{}{} must vanish by antisymmetry",
                        k + 1,
                        i + 1,
                        j + 1
                    )));
                }
                continue;
            }
            for (a, b, val) in [(i, j, v), (j, i, -v)] {
                let p = idx(k, a, b);
                if set[p] && c[p] != val {
                    return Err(Error::InvalidAlgebra(format!(
                        "conflicting entries for C^{}_{}{}",
                        k + 1,
                        a + 1,
                        b + 1
                    )));
                }
                c[p] = val;
                set[p] = true;
            }
        }
        let alg = LieAlgebraData {
            dim,
            c,
            labels: default_labels(dim),
        };
        alg.validate()?;
        Ok(alg)
    }

    pub fn abelian(dim: usize) -> Self {
        LieAlgebraData {
            dim,
            c: vec![0.0; dim * dim * dim],
            labels: default_labels(dim),
        }
    }

    /// se(2) with `[E1, E3] = E2`, `[E2, E3] = -E1`.
    pub fn se2() -> Self {
        let mut a = Self::from_entries(3, &[(1, 3, 2, 1.0), (2, 3, 1, -1.0)])
            .expect("se(2) is a Lie algebra");
        a.labels = vec!["E1".into(), "E2".into(), "E3".into()];
        a
    }

    /// so(3) with `[E_i, E_j] = ε_ijk E_k`.
    pub fn so3() -> Self {
        Self::from_entries(3, &[(1, 2, 3, 1.0), (2, 3, 1, 1.0), (3, 1, 2, 1.0)])
            .expect("so(3) is a Lie algebra")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `C^k_ij` (0-based).
    #[inline]
    pub fn c(&self, k: usize, i: usize, j: usize) -> f64 {
        self.c[(k * self.dim + i) * self.dim + j]
    }

    pub fn is_abelian(&self) -> bool {
        self.c.iter().all(|&x| x == 0.0)
    }

    pub fn jacobi_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let s: f64 = (0..n)
                            .map(|l| {
                                self.c(m, i, l) * self.c(l, j, k)
                                    + self.c(m, j, l) * self.c(l, k, i)
                                    + self.c(m, k, l) * self.c(l, i, j)
                            })
                            .sum();
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim;
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidAlgebra(
                "non-finite structure constant".into(),
            ));
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if self.c(k, i, j) != -self.c(k, j, i) {
                        return Err(Error::InvalidAlgebra(format!(
                            "antisymmetry fails: C^{}_{}{} = {} but C^{}_{}{} = {}",
                            k + 1,
                            i + 1,
                            j + 1,
                            self.c(k, i, j),
                            k + 1,
                            j + 1,
                            i + 1,
                            self.c(k, j, i)
                        )));
                    }
                }
            }
        }
        let d = self.jacobi_defect();
        if d > JACOBI_TOL {
            return Err(Error::InvalidAlgebra(format!(
                "Jacobi identity fails by {d:e}"
            )));
        }
        Ok(())
    }

    /// 1-based `[i, j, k, value]` entries with `i < j` and nonzero value.
    pub fn entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let n = self.dim;
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..n {
                    let v = self.c(k, i, j);
                    if v != 0.0 {
                        out.push((i + 1, j + 1, k + 1, v));
                    }
                }
            }
        }
        out
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("E{i}")).collect()
}

/// On-disk algebra plus reduced forces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraDefinition {
    pub dimension: usize,
    /// `[i, j, k, C^k_ij]`, 1-based.
    pub structure_constants: Vec<[f64; 4]>,
    pub gamma: Vec<String>,
    #[serde(default)]
    pub parameters: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub basis: Option<Vec<String>>,
}

impl AlgebraDefinition {
    pub fn algebra(&self) -> Result<LieAlgebraData> {
        let mut entries = Vec::with_capacity(self.structure_constants.len());
        for e in &self.structure_constants {
            let idx = |x: f64| -> Result<usize> {
                if x.fract() != 0.0 || x < 1.0 {
                    return Err(Error::InvalidAlgebra(format!(
                        "index {x} is not a positive integer"
                    )));
                }
                Ok(x as usize)
            };
            entries.push((idx(e[0])?, idx(e[1])?, idx(e[2])?, e[3]));
        }
        let mut alg = LieAlgebraData::from_entries(self.dimension, &entries)?;
        if let Some(b) = &self.basis {
            if b.len() != self.dimension {
                return Err(Error::InvalidAlgebra(format!(
                    "{} basis labels for dimension {}",
                    b.len(),
                    self.dimension
                )));
            }
            alg.labels = b.clone();
        }
        Ok(alg)
    }
}
