//! Geometry of systems of second-order ordinary differential equations.
//!
//! A system `q''^i = f^i(q, q')` is given by force expressions written in a
//! small expression language ([`expr`]). From those the crate builds, by exact
//! symbolic differentiation, the nonlinear connection `Γ`, the Jacobi
//! endomorphism `Φ` and its dynamical covariant derivative `∇Φ`
//! ([`geometry`]); integrates base curves, parallel transport and the matrix
//! Jacobi equation ([`flow`]); and locates conjugate points by three routes:
//! determinant shooting, the constant-eigenvalue predictor, and criticality of
//! the exponential map ([`conjugate`], [`spectral`]). Invariant systems on Lie
//! groups are handled in quasi-velocities in [`liegroup`]; [`gallery`] ships
//! four worked systems with their closed-form answers.
//!
//! Matrices follow one convention throughout: row index = upper index `i`,
//! column index = lower index `j`, so `Φ` acts on column vectors.
//!
//! ```
//! use sodegeom::{SodeSystem, TangentState, geometry};
//!
//! let sys = SodeSystem::parse(&["x", "y"], &["-x", "(vy + x*vx)^3 - vx^2 + x^2 - 1"], &[]).unwrap();
//! let s = TangentState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
//! let phi = geometry::jacobi_endomorphism(&sys, &s).unwrap();
//! assert!((phi[(0, 0)] - 1.0).abs() < 1e-12);
//! assert!((phi[(1, 1)] + 2.25).abs() < 1e-12);
//! ```

pub mod conjugate;
mod error;
pub mod expr;
pub mod flow;
pub mod gallery;
pub mod geometry;
pub mod liegroup;
pub mod linalg;
pub mod spectral;
mod system;

pub use error::{Error, Result, StopReason};
pub use system::{SodeSystem, SystemDefinition, TangentState};

/// Dense real matrix used for all operator panels.
pub type Matrix = nalgebra::DMatrix<f64>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/expressions.md")]
    mod expressions {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/jacobi-fields.md")]
    mod jacobi_fields {}
    #[doc = include_str!("../../../book/src/conjugate-points.md")]
    mod conjugate_points {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/lie-groups.md")]
    mod lie_groups {}
    #[doc = include_str!("../../../book/src/gallery.md")]
    mod gallery {}
}

/// Float formatting used by every report: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}
