//! Transport of CMH data along a configuration diffeomorphism `φ: Q₁ -> Q₂`.
//!
//! ```text
//! φ*(q₂, p₂) = (φ⁻¹(q₂), Dφ(φ⁻¹ q₂)ᵀ p₂)      T*Q₂ -> T*Q₁
//! φ_*(q₁, p₁) = (φ(q₁), Dφ⁻¹(φ q₁)ᵀ p₁)       T*Q₁ -> T*Q₂
//! β₁ = Dφᵀ β₂(φ) Dφ,   γ̄₁ = Dφᵀ γ̄₂(φ),   ε₁ = φ* ∘ ε₂ ∘ φ_*
//! ```
//!
//! The coordinate vertical lift commutes with `φ*` only when `φ` is affine, so
//! conjugated pairs with nonzero force or control use affine maps.

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{jacobian_generic, mat_t_vec, DerivativeEngine};
use crate::dynamics::{cmh_vf, magnetic_vanishing_residual, magnetic_vf, CmhSystem, FiberMap};
use crate::error::{check_dim, Error, Result};
use crate::func::{GenericFunc, ScalarField, VectorMap};
use crate::hamilton_jacobi::{hj1_residual, hj2_residuals};
use crate::real::Real;
use crate::symplectic::{MagneticField, OneFormSection};

#[derive(Clone, Debug)]
pub struct ConfigDiffeo {
    pub phi: VectorMap,
    pub phi_inv: VectorMap,
}

impl ConfigDiffeo {
    pub fn new(phi: VectorMap, phi_inv: VectorMap) -> Result<Self> {
        let n = phi.in_dim();
        for (name, m) in [("diffeomorphism", &phi), ("inverse", &phi_inv)] {
            check_dim(&format!("{name} input"), n, m.in_dim())?;
            check_dim(&format!("{name} output"), n, m.out_dim())?;
        }
        Ok(ConfigDiffeo { phi, phi_inv })
    }

    pub fn identity(n: usize) -> Self {
        let id = VectorMap::new(crate::func::LinearMap::identity(n));
        ConfigDiffeo { phi: id.clone(), phi_inv: id }
    }

    pub fn n(&self) -> usize {
        self.phi.in_dim()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &ConfigDiffeo) -> ConfigDiffeo {
        ConfigDiffeo {
            phi: VectorMap::new(crate::func::Compose { outer: self.phi.clone(), inner: inner.phi.clone() }),
            phi_inv: VectorMap::new(crate::func::Compose { outer: inner.phi_inv.clone(), inner: self.phi_inv.clone() }),
        }
    }

    /// `max(|φ(φ⁻¹ q) - q|, |φ⁻¹(φ q) - q|)`.
    pub fn inverse_residual(&self, q: &[f64]) -> f64 {
        let a: Vec<f64> = self.phi.eval(&self.phi_inv.eval(q));
        let b: Vec<f64> = self.phi_inv.eval(&self.phi.eval(q));
        a.iter().chain(&b).zip(q.iter().chain(q)).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn jacobian_det(&self, q: &[f64], eng: &DerivativeEngine) -> Result<f64> {
        Ok(eng.jacobian(&self.phi, q)?.determinant())
    }

    fn lift_generic<R: Real>(&self, z2: &[R], eng: &DerivativeEngine) -> Vec<R> {
        let n = self.n();
        let q1 = self.phi_inv.eval(&z2[..n]);
        let d = jacobian_generic(&self.phi, &q1, eng);
        let mut out = q1;
        out.extend(mat_t_vec(&d, &z2[n..]));
        out
    }

    fn push_generic<R: Real>(&self, z1: &[R], eng: &DerivativeEngine) -> Vec<R> {
        let n = self.n();
        let q2 = self.phi.eval(&z1[..n]);
        let d = jacobian_generic(&self.phi_inv, &q2, eng);
        let mut out = q2;
        out.extend(mat_t_vec(&d, &z1[n..]));
        out
    }

    /// `φ*` as a differentiable map `T*Q₂ -> T*Q₁`.
    pub fn lift_map(&self, eng: &DerivativeEngine) -> VectorMap {
        VectorMap::new(Lift { phi: self.clone(), engine: *eng, forward: false })
    }

    /// `φ_*` as a differentiable map `T*Q₁ -> T*Q₂`.
    pub fn push_map(&self, eng: &DerivativeEngine) -> VectorMap {
        VectorMap::new(Lift { phi: self.clone(), engine: *eng, forward: true })
    }
}

struct Lift {
    phi: ConfigDiffeo,
    engine: DerivativeEngine,
    forward: bool,
}

impl GenericFunc for Lift {
    fn in_dim(&self) -> usize {
        2 * self.phi.n()
    }
    fn out_dim(&self) -> usize {
        2 * self.phi.n()
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        if self.forward {
            self.phi.push_generic(z, &self.engine)
        } else {
            self.phi.lift_generic(z, &self.engine)
        }
    }
}

pub fn cotangent_lift(phi: &ConfigDiffeo, z2: &[f64], eng: &DerivativeEngine) -> Result<Vec<f64>> {
    check_dim("phase point", 2 * phi.n(), z2.len())?;
    let n = phi.n();
    let q1 = phi.phi_inv.eval(&z2[..n]);
    let d = eng.jacobian(&phi.phi, &q1)?;
    if d.determinant().abs() <= 1e-10 {
        return Err(Error::degenerate("diffeomorphism Jacobian"));
    }
    let out = phi.lift_generic(z2, eng);
    crate::error::check_finite("cotangent lift", &out)?;
    Ok(out)
}

struct PulledField {
    phi: ConfigDiffeo,
    beta2: MagneticField,
    engine: DerivativeEngine,
}

impl GenericFunc for PulledField {
    fn in_dim(&self) -> usize {
        self.phi.n()
    }
    fn out_dim(&self) -> usize {
        self.phi.n() * self.phi.n()
    }
    fn apply<R: Real>(&self, q: &[R]) -> Vec<R> {
        let n = self.phi.n();
        let d = jacobian_generic(&self.phi.phi, q, &self.engine);
        let b = self.beta2.eval(&self.phi.phi.eval(q));
        let mut out = vec![R::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = R::zero();
                for k in 0..n {
                    for l in 0..n {
                        acc += d[k][i] * b[k][l] * d[l][j];
                    }
                }
                out[i * n + j] = acc;
            }
        }
        out
    }
}

/// `β₁(q) = Dφ(q)ᵀ β₂(φ(q)) Dφ(q)`.
pub fn pullback_magnetic_field(phi: &ConfigDiffeo, beta2: &MagneticField, eng: &DerivativeEngine) -> MagneticField {
    let n = phi.n();
    MagneticField::new(n, VectorMap::new(PulledField { phi: phi.clone(), beta2: beta2.clone(), engine: *eng }))
        .expect("dimensions fixed by construction")
}

struct PulledOneForm {
    phi: ConfigDiffeo,
    gamma2: OneFormSection,
    engine: DerivativeEngine,
}

impl GenericFunc for PulledOneForm {
    fn in_dim(&self) -> usize {
        self.phi.n()
    }
    fn out_dim(&self) -> usize {
        self.phi.n()
    }
    fn apply<R: Real>(&self, q: &[R]) -> Vec<R> {
        let d = jacobian_generic(&self.phi.phi, q, &self.engine);
        mat_t_vec(&d, &self.gamma2.gammabar.eval(&self.phi.phi.eval(q)))
    }
}

/// `γ̄₁(q) = Dφ(q)ᵀ γ̄₂(φ(q))`.
pub fn transport_one_form(phi: &ConfigDiffeo, gamma2: &OneFormSection, eng: &DerivativeEngine) -> OneFormSection {
    OneFormSection {
        gammabar: VectorMap::new(PulledOneForm { phi: phi.clone(), gamma2: gamma2.clone(), engine: *eng }),
    }
}

/// `ε₁ = φ* ∘ ε₂ ∘ φ_*`.
pub fn transport_phase_map(phi: &ConfigDiffeo, eps2: &VectorMap, eng: &DerivativeEngine) -> VectorMap {
    let inner = VectorMap::new(crate::func::Compose { outer: eps2.clone(), inner: phi.push_map(eng) });
    VectorMap::new(crate::func::Compose { outer: phi.lift_map(eng), inner })
}

struct ConjugatedFiber {
    phi: ConfigDiffeo,
    f2: FiberMap,
    engine: DerivativeEngine,
}

impl GenericFunc for ConjugatedFiber {
    fn in_dim(&self) -> usize {
        2 * self.phi.n()
    }
    fn out_dim(&self) -> usize {
        self.phi.n()
    }
    fn apply<R: Real>(&self, z1: &[R]) -> Vec<R> {
        let n = self.phi.n();
        let z2 = self.phi.push_generic(z1, &self.engine);
        let image = self.f2.apply(&z2);
        self.phi.lift_generic(&image, &self.engine)[n..].to_vec()
    }
}

/// `F₁ = φ* ∘ F₂ ∘ φ_*`.
pub fn conjugate_fiber_map(phi: &ConfigDiffeo, f2: &FiberMap, eng: &DerivativeEngine) -> FiberMap {
    let f = VectorMap::new(ConjugatedFiber { phi: phi.clone(), f2: f2.clone(), engine: *eng });
    FiberMap::new(phi.n(), f).expect("dimensions fixed by construction")
}

struct Composed {
    h: ScalarField,
    map: VectorMap,
}

impl GenericFunc for Composed {
    fn in_dim(&self) -> usize {
        self.map.in_dim()
    }
    fn out_dim(&self) -> usize {
        1
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        vec![self.h.eval(&self.map.eval(z))]
    }
}

/// `H ∘ map`.
pub fn compose_scalar(h: &ScalarField, map: &VectorMap) -> ScalarField {
    ScalarField::new(Composed { h: h.clone(), map: map.clone() })
}

/// System on `T*Q₁` obtained by conjugating every ingredient of `sys2` through `φ`.
pub fn conjugate_system(phi: &ConfigDiffeo, sys2: &CmhSystem) -> Result<CmhSystem> {
    check_dim("diffeomorphism dimension", sys2.n, phi.n())?;
    let eng = sys2.engine;
    let h1 = compose_scalar(&sys2.h, &phi.push_map(&eng));
    let beta1 = pullback_magnetic_field(phi, &sys2.beta, &eng);
    let f1 = conjugate_fiber_map(phi, &sys2.force, &eng);
    let u1 = conjugate_fiber_map(phi, &sys2.control, &eng);
    Ok(CmhSystem::new(h1, beta1, f1, u1)?.with_engine(eng))
}

#[derive(Clone, Debug)]
pub struct SystemPair {
    pub sys1: CmhSystem,
    pub sys2: CmhSystem,
    pub phi: ConfigDiffeo,
}

impl SystemPair {
    pub fn new(sys1: CmhSystem, sys2: CmhSystem, phi: ConfigDiffeo) -> Result<Self> {
        check_dim("system pair", sys1.n, sys2.n)?;
        check_dim("diffeomorphism", sys1.n, phi.n())?;
        Ok(SystemPair { sys1, sys2, phi })
    }

    /// Pair whose first system is the conjugate of `sys2`.
    pub fn conjugated(sys2: CmhSystem, phi: ConfigDiffeo) -> Result<Self> {
        let sys1 = conjugate_system(&phi, &sys2)?;
        SystemPair::new(sys1, sys2, phi)
    }

    fn transported(
        &self,
        z2: &[f64],
        field1: impl Fn(&[f64]) -> Result<DVector<f64>>,
        field2: impl Fn(&[f64]) -> Result<DVector<f64>>,
    ) -> Result<f64> {
        let eng = &self.sys2.engine;
        let z1 = cotangent_lift(&self.phi, z2, eng)?;
        let t = eng.jacobian(&self.phi.lift_map(eng), z2)?;
        Ok((field1(&z1)? - t * field2(z2)?).amax())
    }
}

/// `‖X̃₁(φ*(z₂)) - Tφ* · X̃₂(z₂)‖∞`.
pub fn cmh2_residual(pair: &SystemPair, z2: &[f64]) -> Result<f64> {
    pair.transported(z2, |z| cmh_vf(&pair.sys1, z), |z| cmh_vf(&pair.sys2, z))
}

/// Same correspondence for the magnetic Hamiltonian fields alone.
pub fn magnetic_correspondence_residual(pair: &SystemPair, z2: &[f64]) -> Result<f64> {
    let (s1, s2) = (&pair.sys1, &pair.sys2);
    pair.transported(
        z2,
        |z| magnetic_vf(&s1.h, &s1.beta, z, &s1.engine),
        |z| magnetic_vf(&s2.h, &s2.beta, z, &s2.engine),
    )
}

/// Correspondence of the magnetic vanishing residuals: `r₁(φ* z₂) = Tφ* r₂(z₂)`.
pub fn vanishing_correspondence_residual(pair: &SystemPair, z2: &[f64]) -> Result<f64> {
    pair.transported(
        z2,
        |z| magnetic_vanishing_residual(&pair.sys1, z),
        |z| magnetic_vanishing_residual(&pair.sys2, z),
    )
}

/// Residual of the symplecticity of `φ*` between `ω^{B₂}` and `ω^{B₁}`:
/// `max |Tφ*ᵀ S₁(φ* z) Tφ* - S₂(z)|`.
pub fn lift_symplectic_residual(pair: &SystemPair, z2: &[f64]) -> Result<f64> {
    let n = pair.sys1.n;
    let eng = &pair.sys2.engine;
    let t = eng.jacobian(&pair.phi.lift_map(eng), z2)?;
    let z1 = cotangent_lift(&pair.phi, z2, eng)?;
    let s1 = crate::symplectic::symplectic_matrix(&pair.sys1.beta, &z1[..n])?;
    let s2 = crate::symplectic::symplectic_matrix(&pair.sys2.beta, &z2[..n])?;
    Ok(crate::diffcore::max_abs(&(t.transpose() * s1 * &t - s2)))
}

/// `max |lift(φ∘ψ)(z) - lift(ψ)(lift(φ)(z))|`.
pub fn lift_functoriality_residual(
    phi: &ConfigDiffeo,
    psi: &ConfigDiffeo,
    z: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let direct = cotangent_lift(&phi.compose(psi), z, eng)?;
    let staged = cotangent_lift(psi, &cotangent_lift(phi, z, eng)?, eng)?;
    Ok(direct.iter().zip(&staged).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Object whose solution property is transported.
#[derive(Clone, Debug)]
pub enum TransportSource {
    /// Type I on a one-form of the second system.
    OneForm(OneFormSection),
    /// Type II on a phase map of the second system, with its one-form.
    PhaseMap { gamma: OneFormSection, eps: VectorMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReport {
    pub samples: usize,
    /// Largest hypothesis residual (CMH-2 and magnetic correspondence).
    pub hypothesis_residual: f64,
    pub hypothesis_ok: bool,
    pub source_max: f64,
    pub target_max: f64,
    pub source_pass: bool,
    pub target_pass: bool,
}

impl TransportReport {
    /// With hypotheses met the verdicts should agree.
    pub fn verdicts_match(&self) -> bool {
        self.source_pass == self.target_pass
    }
}

/// Evaluates the source object on the second system and its transport on the first
/// at the given points of `T*Q₂` (for one-forms only the base is used).
pub fn solution_transport_check(
    pair: &SystemPair,
    source: &TransportSource,
    points2: &[Vec<f64>],
    tol: f64,
) -> Result<TransportReport> {
    let n = pair.sys1.n;
    let eng = pair.sys2.engine;
    let mut hyp = 0.0_f64;
    for z2 in points2 {
        hyp = hyp.max(cmh2_residual(pair, z2)?).max(magnetic_correspondence_residual(pair, z2)?);
    }
    let hypothesis_ok = hyp <= tol;
    let (mut smax, mut tmax) = (0.0_f64, 0.0_f64);
    if hypothesis_ok {
        match source {
            TransportSource::OneForm(gamma2) => {
                let gamma1 = transport_one_form(&pair.phi, gamma2, &eng);
                for z2 in points2 {
                    let q2 = &z2[..n];
                    let q1 = pair.phi.phi_inv.eval(q2);
                    smax = smax.max(hj1_residual(gamma2, &pair.sys2, q2)?.amax());
                    tmax = tmax.max(hj1_residual(&gamma1, &pair.sys1, &q1)?.amax());
                }
            }
            TransportSource::PhaseMap { gamma, eps } => {
                let gamma1 = transport_one_form(&pair.phi, gamma, &eng);
                let eps1 = transport_phase_map(&pair.phi, eps, &eng);
                for z2 in points2 {
                    let z1 = cotangent_lift(&pair.phi, z2, &eng)?;
                    smax = smax.max(hj2_residuals(gamma, eps, &pair.sys2, z2)?.r1.amax());
                    tmax = tmax.max(hj2_residuals(&gamma1, &eps1, &pair.sys1, &z1)?.r1.amax());
                }
            }
        }
    }
    Ok(TransportReport {
        samples: points2.len(),
        hypothesis_residual: hyp,
        hypothesis_ok,
        source_max: smax,
        target_max: tmax,
        source_pass: hypothesis_ok && smax <= tol,
        target_pass: hypothesis_ok && tmax <= tol,
    })
}

/// `Dφ(q)` as a matrix, for callers building linear maps.
pub fn diffeo_jacobian(phi: &ConfigDiffeo, q: &[f64], eng: &DerivativeEngine) -> Result<DMatrix<f64>> {
    eng.jacobian(&phi.phi, q)
}
