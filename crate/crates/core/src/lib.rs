//! Numerical toolkit for controlled magnetic Hamiltonian systems on `T*R^n`.
//!
//! Phase points are `(q, p)` with `q, p ∈ R^n`; tangent vectors are `(δq, δp)`.
//! Two-forms on configuration space are carried as skew matrices `β` with the
//! pairing `B(x, y) = xᵀ β y`, and the magnetic symplectic matrix is
//! `S = [[-β, I], [-I, 0]]`.

pub mod checks;
pub mod diffcore;
pub mod dynamics;
pub mod equivalence;
pub mod error;
pub mod expr;
pub mod func;
pub mod hamilton_jacobi;
pub mod nonholonomic;
pub mod real;
pub mod reduction;
pub mod scenario;
pub mod symplectic;

pub use error::{Error, Result};
