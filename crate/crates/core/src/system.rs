use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::{parse, Expr};
use crate::geometry::Derived;
use crate::{Error, Result};

/// A point `(q, q')` of the tangent bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl TangentState {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        TangentState { q, v }
    }

    /// Split a flat `[q1..qn, v1..vn]` slice.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || !flat.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "state needs 2n values, got {}",
                flat.len()
            )));
        }
        let n = flat.len() / 2;
        Ok(TangentState {
            q: flat[..n].to_vec(),
            v: flat[n..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.q.clone();
        out.extend_from_slice(&self.v);
        out
    }
}

/// On-disk system definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDefinition {
    pub dimension: usize,
    pub coordinates: Vec<String>,
    pub forces: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A system `q''^i = f^i(q, q')`.
///
/// Velocities are named by prefixing `v` to the coordinate name (`x` → `vx`).
/// The system is immutable; derived symbolic tables are built lazily and
/// shared between clones.
#[derive(Debug, Clone)]
pub struct SodeSystem {
    coordinates: Vec<String>,
    forces: Vec<Expr>,
    parameters: BTreeMap<String, f64>,
    derived: Arc<Derived>,
}

impl SodeSystem {
    pub fn new(
        coordinates: Vec<String>,
        forces: Vec<Expr>,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = coordinates.len();
        if n == 0 {
            return Err(Error::InvalidSystem("dimension must be positive".into()));
        }
        if forces.len() != n {
            return Err(Error::InvalidSystem(format!(
                "expected {n} force expressions, got {}",
                forces.len()
            )));
        }
        let declared = Self::declared_names(&coordinates, &parameters)?;
        for (i, f) in forces.iter().enumerate() {
            if let Some(bad) = f.variables().into_iter().find(|v| !declared.contains(v)) {
                return Err(Error::InvalidSystem(format!(
                    "force {} references undeclared `{bad}`",
                    i + 1
                )));
            }
        }
        let bound: Vec<Expr> = forces
            .iter()
            .map(|f| f.bind_constants(&parameters))
            .collect();
        let derived = Arc::new(Derived::new(&coordinates, bound));
        Ok(SodeSystem {
            coordinates,
            forces,
            parameters,
            derived,
        })
    }

    fn declared_names(
        coordinates: &[String],
        parameters: &BTreeMap<String, f64>,
    ) -> Result<BTreeSet<String>> {
        let mut declared = BTreeSet::new();
        let velocity: Vec<String> = coordinates.iter().map(|c| format!("v{c}")).collect();
        for name in coordinates.iter().chain(&velocity).chain(parameters.keys()) {
            if !is_identifier(name) {
                return Err(Error::InvalidSystem(format!(
                    "`{name}` is not a valid identifier"
                )));
            }
            if crate::expr::Func::from_name(name).is_some() {
                return Err(Error::InvalidSystem(format!(
                    "`{name}` is a reserved function name"
                )));
            }
            if !declared.insert(name.clone()) {
                return Err(Error::InvalidSystem(format!(
                    "name `{name}` declared twice"
                )));
            }
        }
        Ok(declared)
    }

    /// Parse force sources over the given coordinates and parameters.
    pub fn parse(
        coordinates: &[&str],
        forces: &[&str],
        parameters: &[(&str, f64)],
    ) -> Result<Self> {
        let coordinates: Vec<String> = coordinates.iter().map(|s| s.to_string()).collect();
        let parameters: BTreeMap<String, f64> = parameters
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let declared: Vec<String> = Self::declared_names(&coordinates, &parameters)?
            .into_iter()
            .collect();
        let forces = forces
            .iter()
            .map(|src| parse(src, &declared))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        SodeSystem::new(coordinates, forces, parameters)
    }

    pub fn from_definition(def: &SystemDefinition) -> Result<Self> {
        if def.coordinates.len() != def.dimension {
            return Err(Error::InvalidSystem(format!(
                "dimension {} but {} coordinates",
                def.dimension,
                def.coordinates.len()
            )));
        }
        let coords: Vec<&str> = def.coordinates.iter().map(String::as_str).collect();
        let forces: Vec<&str> = def.forces.iter().map(String::as_str).collect();
        let params: Vec<(&str, f64)> = def
            .parameters
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .collect();
        SodeSystem::parse(&coords, &forces, &params)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: SystemDefinition = serde_json::from_str(text)?;
        Self::from_definition(&def)
    }

    pub fn to_definition(&self) -> SystemDefinition {
        SystemDefinition {
            dimension: self.dim(),
            coordinates: self.coordinates.clone(),
            forces: self.forces.iter().map(|f| f.to_string()).collect(),
            parameters: self.parameters.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    pub fn coordinates(&self) -> &[String] {
        &self.coordinates
    }

    pub fn velocity_names(&self) -> Vec<String> {
        self.coordinates.iter().map(|c| format!("v{c}")).collect()
    }

    pub fn forces(&self) -> &[Expr] {
        &self.forces
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub(crate) fn derived(&self) -> &Derived {
        &self.derived
    }

    pub fn check_state(&self, s: &TangentState) -> Result<()> {
        let n = self.dim();
        if s.q.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: s.q.len(),
            });
        }
        if s.v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: s.v.len(),
            });
        }
        Ok(())
    }

    /// Evaluate `f(q, q')`.
    pub fn eval_forces(&self, s: &TangentState) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let mut out = vec![0.0; self.dim()];
        self.derived
            .forces_into(&s.flat(), &mut out, &mut Vec::new())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_undeclared_and_miscounted() {
        assert!(matches!(
            SodeSystem::parse(&["x"], &["-x", "0"], &[]),
            Err(Error::InvalidSystem(_))
        ));
        assert!(SodeSystem::parse(&["x"], &["-k*x"], &[]).is_err());
        assert!(SodeSystem::parse(&["x"], &["-k*x"], &[("k", 2.0)]).is_ok());
        assert!(matches!(
            SodeSystem::parse(&["x", "x"], &["0", "0"], &[]),
            Err(Error::InvalidSystem(_))
        ));
        assert!(matches!(
            SodeSystem::parse(&["sin"], &["0"], &[]),
            Err(Error::InvalidSystem(_))
        ));
    }

    #[test]
    fn velocity_twin_collisions_are_rejected() {
        // coordinate `vx` collides with the velocity twin of `x`
        assert!(SodeSystem::parse(&["x", "vx"], &["0", "0"], &[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"dimension": 2, "coordinates": ["phi", "theta"],
            "forces": ["-(a + b*cos(phi))*b*sin(phi)*vtheta^2", "2*b*sin(phi)*vphi*vtheta/(a + b*cos(phi))"],
            "parameters": {"a": 2, "b": 1}}"#;
        let sys = SodeSystem::from_json(text).unwrap();
        assert_eq!(sys.dim(), 2);
        let again = SodeSystem::from_definition(&sys.to_definition()).unwrap();
        let s = TangentState::new(vec![0.3, 0.1], vec![0.2, 0.5]);
        assert_eq!(sys.eval_forces(&s).unwrap(), again.eval_forces(&s).unwrap());
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = SodeSystem::from_json("{\"dimension\": 1,").unwrap_err();
        assert!(err.is_parse());
    }
}
