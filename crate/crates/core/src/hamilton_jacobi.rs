//! Hamilton-Jacobi residuals for unconstrained systems.
//!
//! Type I:  `Tγ · Tπ · X̃(γ(q)) = X^B_H(γ(q))`.
//! Type II: `Tγ · Tπ · X̃(ε(z)) = X^B_H(ε(z))` and its partner
//!          `Tε · X^B_{H∘ε}(z) = Tλ · X̃(ε(z))`.
//!
//! On a single chart `Tπ` is onto, so "closed with respect to `Tπ`" is plain
//! closedness and `dγ = -B` is checked as `A(q) + β(q) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{max_abs, DerivativeEngine};
use crate::dynamics::{cmh_vf, magnetic_vf, CmhSystem};
use crate::error::{check_dim, Result};
use crate::func::{GenericFunc, VectorMap};
use crate::real::Real;
use crate::symplectic::{
    exterior_derivative_generic, exterior_derivative_matrix, omega_b, pullback_two_form, symplectic_matrix,
    MagneticField, OneFormSection,
};

/// `max |A(q) + β(q)|`.
pub fn dgamma_plus_b_residual(
    gamma: &OneFormSection,
    beta: &MagneticField,
    q: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    check_dim("one-form vs field", beta.n(), gamma.n())?;
    Ok(max_abs(&(exterior_derivative_matrix(gamma, q, eng)? + beta.matrix(q)?)))
}

/// `Tγ` at `q` as a `2n × n` matrix `[I; J]`.
pub fn section_tangent(gamma: &OneFormSection, q: &[f64], eng: &DerivativeEngine) -> Result<DMatrix<f64>> {
    let n = gamma.n();
    let j = eng.jacobian(&gamma.gammabar, q)?;
    let mut t = DMatrix::zeros(2 * n, n);
    t.view_mut((0, 0), (n, n)).fill_with_identity();
    t.view_mut((n, 0), (n, n)).copy_from(&j);
    Ok(t)
}

/// `Tλ` at a point whose base is `q`: `[[I, 0], [J, 0]]`.
pub fn lambda_tangent(gamma: &OneFormSection, q: &[f64], eng: &DerivativeEngine) -> Result<DMatrix<f64>> {
    let n = gamma.n();
    let mut t = DMatrix::zeros(2 * n, 2 * n);
    t.view_mut((0, 0), (2 * n, n)).copy_from(&section_tangent(gamma, q, eng)?);
    Ok(t)
}

/// `Tγ · Tπ · X̃(γ(q)) - X^B_H(γ(q))`.
pub fn hj1_residual(gamma: &OneFormSection, sys: &CmhSystem, q: &[f64]) -> Result<DVector<f64>> {
    let n = sys.n;
    check_dim("one-form dimension", n, gamma.n())?;
    let eng = &sys.engine;
    let z = gamma.section(q);
    let xt = cmh_vf(sys, &z)?;
    let base = xt.rows(0, n).into_owned();
    let lhs = section_tangent(gamma, q, eng)? * base;
    Ok(lhs - magnetic_vf(&sys.h, &sys.beta, &z, eng)?)
}

struct Compensating {
    gamma: OneFormSection,
    engine: DerivativeEngine,
}

impl GenericFunc for Compensating {
    fn in_dim(&self) -> usize {
        self.gamma.n()
    }
    fn out_dim(&self) -> usize {
        self.gamma.n() * self.gamma.n()
    }
    fn apply<R: Real>(&self, q: &[R]) -> Vec<R> {
        exterior_derivative_generic(&self.gamma, q, &self.engine)
            .into_iter()
            .flatten()
            .map(|v| -v)
            .collect()
    }
}

/// The field `β = -A`, i.e. `B = -dγ`.
pub fn compensating_magnetic_field(gamma: &OneFormSection, eng: &DerivativeEngine) -> MagneticField {
    let n = gamma.n();
    MagneticField::new(n, VectorMap::new(Compensating { gamma: gamma.clone(), engine: *eng }))
        .expect("dimensions fixed by construction")
}

/// `|ω^B_{ε(z)}(Tε v, Tε w) - ω^B_z(v, w)|`.
pub fn symplectic_residual(
    eps: &VectorMap,
    beta: &MagneticField,
    z: &[f64],
    v: &[f64],
    w: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let pulled = pullback_two_form(eps, beta, z, v, w, eng)?;
    Ok((pulled - omega_b(beta, z, v, w)?).abs())
}

/// `max |Tεᵀ S(ε(z)) Tε - S(z)|`, the basis-free version of [`symplectic_residual`].
pub fn symplectic_defect(eps: &VectorMap, beta: &MagneticField, z: &[f64], eng: &DerivativeEngine) -> Result<f64> {
    symplectic_defect_with(&eng.jacobian(eps, z)?, &eps.eval(z), beta, z)
}

/// Same as [`symplectic_defect`] with `Tε(z)` and `ε(z)` already evaluated.
pub fn symplectic_defect_with(t: &DMatrix<f64>, y: &[f64], beta: &MagneticField, z: &[f64]) -> Result<f64> {
    let n = beta.n();
    let s_y = symplectic_matrix(beta, &y[..n])?;
    let s_z = symplectic_matrix(beta, &z[..n])?;
    Ok(max_abs(&(t.transpose() * s_y * t - s_z)))
}

/// Residual pair of the Type II equation together with the symplecticity
/// defect of `ε` at the sample.
#[derive(Debug, Clone)]
pub struct Hj2Residuals {
    pub r1: DVector<f64>,
    pub r2: DVector<f64>,
    pub symplectic_defect: f64,
}

impl Hj2Residuals {
    pub fn verdicts(&self, tol: f64) -> (bool, bool) {
        (self.r1.amax() <= tol, self.r2.amax() <= tol)
    }
}

/// `X^B_{H∘ε}(z)`, using `∇(H∘ε)(z) = Tεᵀ ∇H(ε(z))`.
pub fn pulled_back_magnetic_vf(
    sys: &CmhSystem,
    eps: &VectorMap,
    tangent: &DMatrix<f64>,
    z: &[f64],
) -> Result<DVector<f64>> {
    let n = sys.n;
    let y = eps.eval(z);
    let g = tangent.transpose() * sys.engine.gradient(&sys.h, &y)?;
    let b = sys.beta.matrix(&z[..n])?;
    let gp = g.rows(n, n).into_owned();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(&gp);
    x.rows_mut(n, n).copy_from(&(-g.rows(0, n).into_owned() + b * gp));
    Ok(x)
}

/// Type II residuals at `z`:
///
/// ```text
/// r1 = Tγ · Tπ · X̃(ε(z)) - X^B_H(ε(z))
/// r2 = Tε · X^B_{H∘ε}(z) - Tλ · X̃(ε(z))
/// ```
pub fn hj2_residuals(gamma: &OneFormSection, eps: &VectorMap, sys: &CmhSystem, z: &[f64]) -> Result<Hj2Residuals> {
    let n = sys.n;
    check_dim("phase map input", 2 * n, eps.in_dim())?;
    check_dim("phase map output", 2 * n, eps.out_dim())?;
    let eng = &sys.engine;
    let y = eps.eval(z);
    let qy = &y[..n];
    let xt = cmh_vf(sys, &y)?;
    let r1 = section_tangent(gamma, qy, eng)? * xt.rows(0, n).into_owned() - magnetic_vf(&sys.h, &sys.beta, &y, eng)?;

    let t = eng.jacobian(eps, z)?;
    let lhs = &t * pulled_back_magnetic_vf(sys, eps, &t, z)?;
    let r2 = lhs - lambda_tangent(gamma, qy, eng)? * xt;
    let defect = symplectic_defect_with(&t, &y, &sys.beta, z)?;
    Ok(Hj2Residuals { r1, r2, symplectic_defect: defect })
}
