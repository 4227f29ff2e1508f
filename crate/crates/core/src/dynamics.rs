//! Vector fields of a controlled magnetic Hamiltonian system and trajectory
//! integration.
//!
//! With `∇H = (g_q, g_p)`:
//!
//! ```text
//! X_H   = (g_p, -g_q)
//! X^B_H = (g_p, -g_q + β g_p)      (solves Sᵀ X = ∇H)
//! X̃    = X^B_H + vlift(F) X^B_H + vlift(u) X^B_H
//! ```

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{gradient_generic, jacobian_generic, DerivativeEngine};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::func::{ConstMap, GenericFunc, ScalarField, VectorMap};
use crate::real::Real;
use crate::symplectic::{symplectic_matrix, MagneticField};

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_dim("phase point momenta", q.len(), p.len())?;
        check_finite("phase point", &q)?;
        check_finite("phase point", &p)?;
        Ok(PhasePoint { q, p })
    }

    pub fn from_slice(z: &[f64]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::Invalid(format!("phase point has odd length {}", z.len())));
        }
        let n = z.len() / 2;
        PhasePoint::new(z[..n].to_vec(), z[n..].to_vec())
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [self.q.as_slice(), self.p.as_slice()].concat()
    }
}

/// Fibre-preserving map `(q, p) -> (q, f(q, p))`.
#[derive(Clone, Debug)]
pub struct FiberMap {
    n: usize,
    pub f: VectorMap,
}

impl FiberMap {
    pub fn new(n: usize, f: VectorMap) -> Result<Self> {
        check_dim("fibre map input", 2 * n, f.in_dim())?;
        check_dim("fibre map output", n, f.out_dim())?;
        Ok(FiberMap { n, f })
    }

    /// `f = 0`; its vertical lift vanishes identically.
    pub fn zero(n: usize) -> Self {
        FiberMap { n, f: VectorMap::new(ConstMap::new(2 * n, vec![0.0; n])) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The full phase-space image `(q, f(q, p))`.
    pub fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        let mut out = z[..self.n].to_vec();
        out.extend(self.f.eval(z));
        out
    }

    pub fn as_phase_map(&self) -> VectorMap {
        VectorMap::new(FiberAsPhaseMap(self.clone()))
    }
}

struct FiberAsPhaseMap(FiberMap);

impl GenericFunc for FiberAsPhaseMap {
    fn in_dim(&self) -> usize {
        2 * self.0.n
    }
    fn out_dim(&self) -> usize {
        2 * self.0.n
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.0.apply(z)
    }
}

/// `(T*R^n, ω^B, H, F, u)`.
#[derive(Clone, Debug)]
pub struct CmhSystem {
    pub n: usize,
    pub h: ScalarField,
    pub beta: MagneticField,
    pub force: FiberMap,
    pub control: FiberMap,
    pub engine: DerivativeEngine,
}

impl CmhSystem {
    pub fn new(h: ScalarField, beta: MagneticField, force: FiberMap, control: FiberMap) -> Result<Self> {
        let n = beta.n();
        check_dim("hamiltonian arity", 2 * n, h.arity())?;
        check_dim("force dimension", n, force.n())?;
        check_dim("control dimension", n, control.n())?;
        Ok(CmhSystem { n, h, beta, force, control, engine: DerivativeEngine::default() })
    }

    /// No force and no control.
    pub fn magnetic(h: ScalarField, beta: MagneticField) -> Result<Self> {
        let n = beta.n();
        CmhSystem::new(h, beta, FiberMap::zero(n), FiberMap::zero(n))
    }

    pub fn with_engine(mut self, engine: DerivativeEngine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_hamiltonian(&self, h: ScalarField) -> Result<Self> {
        let mut s = CmhSystem::new(h, self.beta.clone(), self.force.clone(), self.control.clone())?;
        s.engine = self.engine;
        Ok(s)
    }

    pub fn with_beta(&self, beta: MagneticField) -> Result<Self> {
        let mut s = CmhSystem::new(self.h.clone(), beta, self.force.clone(), self.control.clone())?;
        s.engine = self.engine;
        Ok(s)
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        check_dim("phase point", 2 * self.n, z.len())?;
        check_finite("phase point", z)
    }

    pub fn hamiltonian(&self, z: &[f64]) -> f64 {
        self.h.eval(z)
    }

    /// `X̃` as a differentiable map, e.g. for flow maps.
    pub fn cmh_field(&self) -> VectorMap {
        VectorMap::new(CmhField { sys: self.clone() })
    }

    pub fn magnetic_field(&self) -> VectorMap {
        VectorMap::new(MagneticVf { h: self.h.clone(), beta: self.beta.clone(), engine: self.engine })
    }
}

fn finish(context: &str, v: Vec<f64>) -> Result<DVector<f64>> {
    check_finite(context, &v)?;
    Ok(DVector::from_vec(v))
}

pub fn canonical_vf_generic<R: Real>(h: &ScalarField, z: &[R], eng: &DerivativeEngine) -> Vec<R> {
    let n = z.len() / 2;
    let g = gradient_generic(h, z, eng);
    let mut out = g[n..].to_vec();
    out.extend(g[..n].iter().map(|&v| -v));
    out
}

pub fn magnetic_vf_generic<R: Real>(
    h: &ScalarField,
    beta: &MagneticField,
    z: &[R],
    eng: &DerivativeEngine,
) -> Vec<R> {
    let n = z.len() / 2;
    let g = gradient_generic(h, z, eng);
    let b = beta.eval(&z[..n]);
    let mut out = g[n..].to_vec();
    for i in 0..n {
        let mut acc = -g[i];
        for j in 0..n {
            acc += b[i][j] * g[n + j];
        }
        out.push(acc);
    }
    out
}

/// `(0, J_f(F(z)) · X(F(z)))` where `J_f` is the full Jacobian of the fibre component.
pub fn vertical_lift_generic<R: Real>(
    map: &FiberMap,
    base: impl Fn(&[R]) -> Vec<R>,
    z: &[R],
    eng: &DerivativeEngine,
) -> Vec<R> {
    let n = map.n();
    let image = map.apply(z);
    let x = base(&image);
    let jf = jacobian_generic(&map.f, &image, eng);
    let mut out = vec![R::zero(); n];
    for row in &jf {
        out.push(row.iter().zip(&x).fold(R::zero(), |acc, (&a, &b)| acc + a * b));
    }
    out
}

pub fn cmh_vf_generic<R: Real>(sys: &CmhSystem, z: &[R]) -> Vec<R> {
    let eng = &sys.engine;
    let base = |y: &[R]| magnetic_vf_generic(&sys.h, &sys.beta, y, eng);
    let mut x = base(z);
    for map in [&sys.force, &sys.control] {
        let lift = vertical_lift_generic(map, base, z, eng);
        for (a, b) in x.iter_mut().zip(lift) {
            *a += b;
        }
    }
    x
}

pub fn canonical_vf(h: &ScalarField, z: &[f64], eng: &DerivativeEngine) -> Result<DVector<f64>> {
    check_dim("phase point", h.arity(), z.len())?;
    check_finite("phase point", z)?;
    finish("canonical field", canonical_vf_generic(h, z, eng))
}

pub fn magnetic_vf(h: &ScalarField, beta: &MagneticField, z: &[f64], eng: &DerivativeEngine) -> Result<DVector<f64>> {
    check_dim("phase point", 2 * beta.n(), z.len())?;
    check_dim("hamiltonian arity", 2 * beta.n(), h.arity())?;
    check_finite("phase point", z)?;
    finish("magnetic field", magnetic_vf_generic(h, beta, z, eng))
}

/// `X⁰ = X^B_H - X_H`.
pub fn magnetic_deviation_vf(
    h: &ScalarField,
    beta: &MagneticField,
    z: &[f64],
    eng: &DerivativeEngine,
) -> Result<DVector<f64>> {
    Ok(magnetic_vf(h, beta, z, eng)? - canonical_vf(h, z, eng)?)
}

/// Lift of `base` along `map`, with `base` any phase-space vector field.
pub fn vertical_lift(map: &FiberMap, base: &VectorMap, z: &[f64], eng: &DerivativeEngine) -> Result<DVector<f64>> {
    check_dim("phase point", 2 * map.n(), z.len())?;
    check_finite("phase point", z)?;
    finish("vertical lift", vertical_lift_generic(map, |y: &[f64]| base.eval(y), z, eng))
}

pub fn cmh_vf(sys: &CmhSystem, z: &[f64]) -> Result<DVector<f64>> {
    sys.check_point(z)?;
    finish("cmh field", cmh_vf_generic(sys, z))
}

/// The parts of `X̃`: `(X_H, X⁰, vlift(F) X^B_H, vlift(u) X^B_H)`.
pub fn decomposition(sys: &CmhSystem, z: &[f64]) -> Result<[DVector<f64>; 4]> {
    sys.check_point(z)?;
    let eng = &sys.engine;
    let base = sys.magnetic_field();
    Ok([
        canonical_vf(&sys.h, z, eng)?,
        magnetic_deviation_vf(&sys.h, &sys.beta, z, eng)?,
        vertical_lift(&sys.force, &base, z, eng)?,
        vertical_lift(&sys.control, &base, z, eng)?,
    ])
}

/// `r = X⁰ + vlift(F) X^B_H + vlift(u) X^B_H`; `r = 0` means `X̃ = X_H`.
pub fn magnetic_vanishing_residual(sys: &CmhSystem, z: &[f64]) -> Result<DVector<f64>> {
    let [_, x0, f, u] = decomposition(sys, z)?;
    Ok(x0 + f + u)
}

/// `‖X̃ - X_H - r‖∞`.
pub fn decomposition_residual(sys: &CmhSystem, z: &[f64]) -> Result<f64> {
    let xt = cmh_vf(sys, z)?;
    let xh = canonical_vf(&sys.h, z, &sys.engine)?;
    let r = magnetic_vanishing_residual(sys, z)?;
    Ok((xt - xh - r).amax())
}

/// `‖Sᵀ X^B_H - ∇H‖∞`, i.e. the defect of `i_X ω^B = dH`.
pub fn magnetic_defining_residual(
    h: &ScalarField,
    beta: &MagneticField,
    z: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let n = beta.n();
    let x = magnetic_vf(h, beta, z, eng)?;
    let s = symplectic_matrix(beta, &z[..n])?;
    let g = eng.gradient(h, z)?;
    Ok((s.transpose() * x - g).amax())
}

/// Defect of `i_{X_H} ω = dH` for the canonical form.
pub fn canonical_defining_residual(h: &ScalarField, z: &[f64], eng: &DerivativeEngine) -> Result<f64> {
    let n = z.len() / 2;
    magnetic_defining_residual(h, &MagneticField::zero(n), z, eng)
}

/// Defect of `i_{X⁰} ω = i_{X^B_H} π*B` as covectors.
pub fn magnetic_equation_residual(
    h: &ScalarField,
    beta: &MagneticField,
    z: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let n = beta.n();
    let x0 = magnetic_deviation_vf(h, beta, z, eng)?;
    let xb = magnetic_vf(h, beta, z, eng)?;
    let s0 = symplectic_matrix(&MagneticField::zero(n), &z[..n])?;
    let lhs = s0.transpose() * x0;
    let b = beta.matrix(&z[..n])?;
    let mut rhs = DVector::zeros(2 * n);
    rhs.rows_mut(0, n).copy_from(&(b.transpose() * xb.rows(0, n)));
    Ok((lhs - rhs).amax())
}

struct MagneticVf {
    h: ScalarField,
    beta: MagneticField,
    engine: DerivativeEngine,
}

impl GenericFunc for MagneticVf {
    fn in_dim(&self) -> usize {
        2 * self.beta.n()
    }
    fn out_dim(&self) -> usize {
        2 * self.beta.n()
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        magnetic_vf_generic(&self.h, &self.beta, z, &self.engine)
    }
}

struct CmhField {
    sys: CmhSystem,
}

impl GenericFunc for CmhField {
    fn in_dim(&self) -> usize {
        2 * self.sys.n
    }
    fn out_dim(&self) -> usize {
        2 * self.sys.n
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        cmh_vf_generic(&self.sys, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            other => Err(Error::Invalid(format!("unknown integration method `{other}`"))),
        }
    }
}

fn axpy<R: Real>(z: &[R], a: R, k: &[R]) -> Vec<R> {
    z.iter().zip(k).map(|(&x, &y)| x + a * y).collect()
}

pub fn step_generic<R: Real>(f: &dyn Fn(&[R]) -> Vec<R>, z: &[R], dt: f64, method: Method) -> Vec<R> {
    let h = R::cst(dt);
    match method {
        Method::Euler => axpy(z, h, &f(z)),
        Method::Rk4 => {
            let half = R::cst(0.5 * dt);
            let k1 = f(z);
            let k2 = f(&axpy(z, half, &k1));
            let k3 = f(&axpy(z, half, &k2));
            let k4 = f(&axpy(z, h, &k3));
            let sixth = R::cst(dt / 6.0);
            (0..z.len())
                .map(|i| z[i] + sixth * (k1[i] + R::cst(2.0) * (k2[i] + k3[i]) + k4[i]))
                .collect()
        }
    }
}

/// Integrates `ż = field(z)`; returns `steps + 1` states starting with `z0`.
pub fn integrate(field: &VectorMap, z0: &[f64], dt: f64, steps: usize, method: Method) -> Result<Vec<Vec<f64>>> {
    check_dim("initial state", field.in_dim(), z0.len())?;
    integrate_with(|z| Ok(field.eval(z)), |_, z| Ok(z), z0, dt, steps, method)
}

/// General driver: `rhs` gives the field, `post` may adjust each new state.
pub fn integrate_with(
    rhs: impl Fn(&[f64]) -> Result<Vec<f64>>,
    post: impl Fn(usize, Vec<f64>) -> Result<Vec<f64>>,
    z0: &[f64],
    dt: f64,
    steps: usize,
    method: Method,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Invalid("at least one step is required".into()));
    }
    check_finite("initial state", z0)?;
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(z0.to_vec());
    let mut z = z0.to_vec();
    for step in 1..=steps {
        let failure = std::cell::RefCell::new(None);
        let f = |x: &[f64]| match rhs(x) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![f64::NAN; x.len()]
            }
        };
        let next = step_generic(&f, &z, dt, method);
        if let Some(e) = failure.into_inner() {
            return Err(Error::Integration { step, reason: e.to_string() });
        }
        let next = post(step, next).map_err(|e| Error::Integration { step, reason: e.to_string() })?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step, reason: "non-finite state".into() });
        }
        traj.push(next.clone());
        z = next;
    }
    Ok(traj)
}

/// Time-`t` flow of a field, differentiable through the integrator.
pub struct FlowMap {
    pub field: VectorMap,
    pub t: f64,
    pub steps: usize,
}

impl FlowMap {
    pub fn new(field: VectorMap, t: f64, steps: usize) -> Self {
        FlowMap { field, t, steps }
    }
}

impl GenericFunc for FlowMap {
    fn in_dim(&self) -> usize {
        self.field.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.field.out_dim()
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        let dt = self.t / self.steps as f64;
        let f = |x: &[R]| self.field.eval(x);
        let mut state = z.to_vec();
        for _ in 0..self.steps {
            state = step_generic(&f, &state, dt, Method::Rk4);
        }
        state
    }
}

/// Jacobian helper returning the full `2n × 2n` tangent map of a phase map.
pub fn tangent_map(map: &VectorMap, z: &[f64], eng: &DerivativeEngine) -> Result<DMatrix<f64>> {
    eng.jacobian(map, z)
}
