//! Pfaffian constraints, the constraint submanifold `M`, the distributions
//! `TM`, `F`, `K = F ∩ TM` and the distributional CMH dynamics.
//!
//! Momentum form of `M`: `c(q, p) = A(q) M(q)⁻¹ p = 0`. At a point of `M`
//!
//! ```text
//! TM = ker Dc,   F = ker [A(q), 0],   K = ker [Dc; A(q), 0]
//! G  = B_Kᵀ S B_K                      (ω^B restricted to K)
//! τ_K = B_K G⁻ᵀ B_Kᵀ Sᵀ                (projection along the ω^B-complement)
//! X^B_K = B_K x,  Gᵀ x = B_Kᵀ ∇H       (equal to τ_K X^B_H)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{
    column_space, jacobian_generic, max_abs, null_space, projection_residual, rank, solve, solve_generic,
    subspace_intersect, DerivativeEngine, RANK_TOL,
};
use crate::dynamics::{
    canonical_vf, integrate_with, magnetic_vf, vertical_lift, CmhSystem, FiberMap, Method,
};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::func::{ConstMap, GenericFunc, ScalarField, VectorMap};
use crate::hamilton_jacobi::{lambda_tangent, pulled_back_magnetic_vf, section_tangent, symplectic_defect_with};
use crate::real::Real;
use crate::symplectic::{exterior_derivative_matrix, symplectic_matrix, MagneticField, OneFormSection};

/// `D_q = ker A(q)` with `A` stored row-major as a map `R^n -> R^{k·n}`.
#[derive(Clone, Debug)]
pub struct PfaffianDistribution {
    n: usize,
    k: usize,
    a: VectorMap,
}

impl PfaffianDistribution {
    pub fn new(n: usize, k: usize, a: VectorMap) -> Result<Self> {
        check_dim("constraint input", n, a.in_dim())?;
        check_dim("constraint output", k * n, a.out_dim())?;
        Ok(PfaffianDistribution { n, k, a })
    }

    pub fn unconstrained(n: usize) -> Self {
        PfaffianDistribution { n, k: 0, a: VectorMap::new(ConstMap::new(n, Vec::new())) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn map(&self) -> &VectorMap {
        &self.a
    }

    pub fn eval<R: Real>(&self, q: &[R]) -> Vec<Vec<R>> {
        if self.k == 0 {
            return Vec::new();
        }
        self.a.eval(q).chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("constraint point", self.n, q.len())?;
        let flat = self.a.eval(q);
        check_finite("constraint matrix", &flat)?;
        Ok(DMatrix::from_row_slice(self.k, self.n, &flat))
    }

    /// Orthonormal basis of `D_q`.
    pub fn basis(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        null_space(&self.matrix(q)?, RANK_TOL)
    }

    /// `σ_min ≥ 1e-8 σ_max`.
    pub fn full_rank(&self, q: &[f64]) -> Result<bool> {
        if self.k == 0 {
            return Ok(true);
        }
        let sv = self.matrix(q)?.singular_values();
        let max = sv.max();
        Ok(sv.len() == self.k && max > 0.0 && sv.min() >= 1e-8 * max)
    }
}

/// `L = ½ q̇ᵀ M(q) q̇ - V(q)`.
#[derive(Clone, Debug)]
pub struct MechanicalLagrangian {
    n: usize,
    pub mass: VectorMap,
    pub potential: ScalarField,
}

impl MechanicalLagrangian {
    pub fn new(n: usize, mass: VectorMap, potential: ScalarField) -> Result<Self> {
        check_dim("mass input", n, mass.in_dim())?;
        check_dim("mass output", n * n, mass.out_dim())?;
        check_dim("potential arity", n, potential.arity())?;
        Ok(MechanicalLagrangian { n, mass, potential })
    }

    /// Unit mass, zero potential.
    pub fn free(n: usize) -> Self {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        MechanicalLagrangian {
            n,
            mass: VectorMap::new(ConstMap::new(n, id)),
            potential: ScalarField::new(ConstMap::new(n, vec![0.0])),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass_generic<R: Real>(&self, q: &[R]) -> Vec<Vec<R>> {
        self.mass.eval(q).chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let flat = self.mass.eval(q);
        check_finite("mass matrix", &flat)?;
        Ok(DMatrix::from_row_slice(self.n, self.n, &flat))
    }

    /// Symmetric with positive smallest eigenvalue.
    pub fn is_spd(&self, q: &[f64]) -> Result<bool> {
        let m = self.mass_matrix(q)?;
        if max_abs(&(&m - m.transpose())) > 1e-12 * (1.0 + max_abs(&m)) {
            return Ok(false);
        }
        Ok(m.symmetric_eigenvalues().min() > 0.0)
    }

    /// `FL(q, v) = (q, M(q) v)`.
    pub fn legendre(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let p = self.mass_matrix(q)? * DVector::from_column_slice(v);
        Ok([q, p.as_slice()].concat())
    }

    /// `H(q, p) = ½ pᵀ M(q)⁻¹ p + V(q)`.
    pub fn hamiltonian(&self) -> ScalarField {
        ScalarField::new(LegendreHamiltonian { lag: self.clone() })
    }
}

struct LegendreHamiltonian {
    lag: MechanicalLagrangian,
}

impl GenericFunc for LegendreHamiltonian {
    fn in_dim(&self) -> usize {
        2 * self.lag.n
    }
    fn out_dim(&self) -> usize {
        1
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        let n = self.lag.n;
        let (q, p) = z.split_at(n);
        let v = solve_generic(self.lag.mass_generic(q), p.to_vec()).unwrap_or_else(|| vec![R::cst(f64::NAN); n]);
        let kinetic = p.iter().zip(&v).fold(R::zero(), |acc, (&a, &b)| acc + a * b);
        vec![R::cst(0.5) * kinetic + self.lag.potential.eval(q)]
    }
}

/// `(T*Q, ω^B, D, H, F, u)`.
#[derive(Clone, Debug)]
pub struct NonholonomicCmhSystem {
    pub sys: CmhSystem,
    pub lagrangian: MechanicalLagrangian,
    pub dist: PfaffianDistribution,
}

impl NonholonomicCmhSystem {
    /// Hamiltonian taken from the Lagrangian.
    pub fn new(
        lagrangian: MechanicalLagrangian,
        dist: PfaffianDistribution,
        beta: MagneticField,
        force: FiberMap,
        control: FiberMap,
    ) -> Result<Self> {
        check_dim("distribution dimension", lagrangian.n(), dist.n())?;
        let sys = CmhSystem::new(lagrangian.hamiltonian(), beta, force, control)?;
        Ok(NonholonomicCmhSystem { sys, lagrangian, dist })
    }

    pub fn with_hamiltonian(mut self, h: ScalarField) -> Result<Self> {
        self.sys = self.sys.with_hamiltonian(h)?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: MagneticField) -> Result<Self> {
        self.sys = self.sys.with_beta(beta)?;
        Ok(self)
    }

    pub fn with_engine(mut self, eng: DerivativeEngine) -> Self {
        self.sys.engine = eng;
        self
    }

    pub fn n(&self) -> usize {
        self.sys.n
    }

    pub fn k(&self) -> usize {
        self.dist.k()
    }

    pub fn engine(&self) -> &DerivativeEngine {
        &self.sys.engine
    }

    pub fn constraint_map(&self) -> VectorMap {
        VectorMap::new(ConstraintMap { lag: self.lagrangian.clone(), dist: self.dist.clone() })
    }
}

struct ConstraintMap {
    lag: MechanicalLagrangian,
    dist: PfaffianDistribution,
}

impl GenericFunc for ConstraintMap {
    fn in_dim(&self) -> usize {
        2 * self.dist.n()
    }
    fn out_dim(&self) -> usize {
        self.dist.k()
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        constraint_generic(&self.lag, &self.dist, z)
    }
}

fn constraint_generic<R: Real>(lag: &MechanicalLagrangian, dist: &PfaffianDistribution, z: &[R]) -> Vec<R> {
    let n = dist.n();
    if dist.k() == 0 {
        return Vec::new();
    }
    let (q, p) = z.split_at(n);
    let v = solve_generic(lag.mass_generic(q), p.to_vec()).unwrap_or_else(|| vec![R::cst(f64::NAN); n]);
    crate::diffcore::mat_vec(&dist.eval(q), &v)
}

/// `c(q, p) = A(q) M(q)⁻¹ p`.
pub fn constraint_functions(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<DVector<f64>> {
    let n = nh.n();
    check_dim("phase point", 2 * n, z.len())?;
    if nh.k() > 0 && !nh.lagrangian.is_spd(&z[..n])? {
        return Err(Error::degenerate("mass matrix (not positive definite)"));
    }
    let c = constraint_generic(&nh.lagrangian, &nh.dist, z);
    check_finite("constraint functions", &c)?;
    Ok(DVector::from_vec(c))
}

pub fn constraint_norm(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<f64> {
    Ok(constraint_functions(nh, z)?.norm())
}

/// Closest point of `M` over the same `q` in the `M(q)⁻¹` metric:
/// `p' = p - Aᵀ (A M⁻¹ Aᵀ)⁻¹ A M⁻¹ p`.
pub fn project_to_m(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<Vec<f64>> {
    let n = nh.n();
    check_dim("phase point", 2 * n, z.len())?;
    if nh.k() == 0 {
        return Ok(z.to_vec());
    }
    let q = &z[..n];
    if !nh.dist.full_rank(q)? {
        return Err(Error::degenerate("constraint matrix (rank loss)"));
    }
    let a = nh.dist.matrix(q)?;
    let m = nh.lagrangian.mass_matrix(q)?;
    let minv = m.clone().try_inverse().ok_or_else(|| Error::degenerate("mass matrix"))?;
    let p = DVector::from_column_slice(&z[n..]);
    let c = &a * &minv * &p;
    let schur = &a * &minv * a.transpose();
    let mu = solve(&schur, &c).ok_or_else(|| Error::degenerate("constraint Gram matrix"))?;
    let p_new = p - a.transpose() * mu;
    let mut out = q.to_vec();
    out.extend(p_new.iter());
    Ok(out)
}

/// Per-point bases and projector.
#[derive(Debug, Clone)]
pub struct ConstraintFrame {
    pub z: Vec<f64>,
    pub constraint_norm: f64,
    pub symplectic: DMatrix<f64>,
    pub basis_tm: DMatrix<f64>,
    pub basis_f: DMatrix<f64>,
    pub basis_k: DMatrix<f64>,
    pub basis_kperp: DMatrix<f64>,
    /// `B_Kᵀ S B_K`.
    pub gram: DMatrix<f64>,
    pub tau_k: DMatrix<f64>,
    /// `dim TM = rank F`.
    pub admissible: bool,
    /// `TM ∩ F^⊥ = {0}` and the Gram matrix is nonsingular.
    pub compatible: bool,
}

impl ConstraintFrame {
    pub fn dim_k(&self) -> usize {
        self.basis_k.ncols()
    }

    pub fn require_compatible(&self) -> Result<()> {
        if self.compatible {
            Ok(())
        } else {
            Err(Error::Incompatible(format!("frame at {:?}", self.z)))
        }
    }

    /// `τ_K v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.tau_k * v
    }

    /// Solves `ω^B(B_K x, k) = α(k)` for all `k ∈ K`, with covector `α`.
    pub fn restricted_solve(&self, covector: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_compatible()?;
        let rhs = self.basis_k.transpose() * covector;
        let x = solve(&self.gram.transpose(), &rhs).ok_or_else(|| Error::Incompatible("singular Gram matrix".into()))?;
        Ok(&self.basis_k * x)
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// `[A(q), 0]`: annihilator of `F`.
fn base_constraint(nh: &NonholonomicCmhSystem, q: &[f64]) -> Result<DMatrix<f64>> {
    let n = nh.n();
    let a = nh.dist.matrix(q)?;
    let mut c = DMatrix::zeros(nh.k(), 2 * n);
    c.view_mut((0, 0), (nh.k(), n)).copy_from(&a);
    Ok(c)
}

fn constraint_jacobian(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<DMatrix<f64>> {
    if nh.k() == 0 {
        return Ok(DMatrix::zeros(0, 2 * nh.n()));
    }
    nh.engine().jacobian(&nh.constraint_map(), z)
}

pub fn frame_at(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<ConstraintFrame> {
    let n = nh.n();
    check_dim("phase point", 2 * n, z.len())?;
    check_finite("phase point", z)?;
    let q = &z[..n];
    if !nh.dist.full_rank(q)? {
        return Err(Error::degenerate("constraint matrix (rank loss)"));
    }
    let cnorm = constraint_norm(nh, z)?;
    let dc = constraint_jacobian(nh, z)?;
    let cf = base_constraint(nh, q)?;
    let s = symplectic_matrix(&nh.sys.beta, q)?;

    let basis_tm = null_space(&dc, RANK_TOL)?;
    let basis_f = null_space(&cf, RANK_TOL)?;
    let basis_k = null_space(&stack(&dc, &cf), RANK_TOL)?;
    let gram = basis_k.transpose() * &s * &basis_k;
    let basis_kperp = null_space(&(basis_k.transpose() * &s), RANK_TOL)?;
    let f_perp = null_space(&(basis_f.transpose() * &s), RANK_TOL)?;
    let meet = subspace_intersect(&basis_tm, &f_perp, 1e-9)?;

    let admissible = basis_tm.ncols() == basis_f.ncols();
    let gram_ok = gram.ncols() == 0 || rank(&gram, RANK_TOL) == gram.ncols();
    let compatible = meet.ncols() == 0 && gram_ok;
    let tau_k = if gram_ok {
        let gt_inv = gram.transpose().try_inverse().ok_or_else(|| Error::Incompatible("singular Gram matrix".into()))?;
        &basis_k * gt_inv * basis_k.transpose() * s.transpose()
    } else {
        DMatrix::from_element(2 * n, 2 * n, f64::NAN)
    };
    Ok(ConstraintFrame {
        z: z.to_vec(),
        constraint_norm: cnorm,
        symplectic: s,
        basis_tm,
        basis_f,
        basis_k,
        basis_kperp,
        gram,
        tau_k,
        admissible,
        compatible,
    })
}

/// Solution of the restricted equation `i_X ω^B_K = dH_K` in `K`.
pub fn distributional_vf(nh: &NonholonomicCmhSystem, frame: &ConstraintFrame) -> Result<DVector<f64>> {
    let grad = nh.engine().gradient(&nh.sys.h, &frame.z)?;
    frame.restricted_solve(&grad)
}

/// Independent saddle solve: `X ∈ TM` with `Sᵀ X - ∇H` in the annihilator of `F`.
pub fn multiplier_oracle_vf(nh: &NonholonomicCmhSystem, z: &[f64]) -> Result<DVector<f64>> {
    let n = nh.n();
    let k = nh.k();
    let q = &z[..n];
    let s = symplectic_matrix(&nh.sys.beta, q)?;
    let dc = constraint_jacobian(nh, z)?;
    let cf = base_constraint(nh, q)?;
    let grad = nh.engine().gradient(&nh.sys.h, z)?;
    let dim = 2 * n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&s.transpose());
    kkt.view_mut((0, 2 * n), (2 * n, k)).copy_from(&(-cf.transpose()));
    kkt.view_mut((2 * n, 0), (k, 2 * n)).copy_from(&dc);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, 2 * n).copy_from(&grad);
    if rank(&kkt, RANK_TOL) < dim {
        return Err(Error::Incompatible("singular multiplier system".into()));
    }
    let sol = solve(&kkt, &rhs).ok_or_else(|| Error::Incompatible("singular multiplier system".into()))?;
    Ok(sol.rows(0, 2 * n).into_owned())
}

/// Parts of the distributional CMH field:
/// `(X_K = τ_K X_H, X⁰_K = τ_K (X^B_H - X_H), F^B_K, u^B_K)`.
pub fn distributional_decomposition(
    nh: &NonholonomicCmhSystem,
    frame: &ConstraintFrame,
) -> Result<[DVector<f64>; 4]> {
    frame.require_compatible()?;
    let sys = &nh.sys;
    let eng = &sys.engine;
    let z = &frame.z;
    let xh = canonical_vf(&sys.h, z, eng)?;
    let xb = magnetic_vf(&sys.h, &sys.beta, z, eng)?;
    let base = sys.magnetic_field();
    let f = vertical_lift(&sys.force, &base, z, eng)?;
    let u = vertical_lift(&sys.control, &base, z, eng)?;
    Ok([frame.project(&xh), frame.project(&(xb - &xh)), frame.project(&f), frame.project(&u)])
}

/// `X̃ = X^B_K + τ_K vlift(F) X^B_H + τ_K vlift(u) X^B_H`.
pub fn distributional_cmh_vf(nh: &NonholonomicCmhSystem, frame: &ConstraintFrame) -> Result<DVector<f64>> {
    let [_, _, f, u] = distributional_decomposition(nh, frame)?;
    Ok(distributional_vf(nh, frame)? + f + u)
}

/// `r_K = X⁰_K + F^B_K + u^B_K`.
pub fn dist_magnetic_vanishing_residual(nh: &NonholonomicCmhSystem, frame: &ConstraintFrame) -> Result<DVector<f64>> {
    let [_, x0, f, u] = distributional_decomposition(nh, frame)?;
    Ok(x0 + f + u)
}

/// `‖X̃ - X_K - r_K‖∞`.
pub fn dist_decomposition_residual(nh: &NonholonomicCmhSystem, frame: &ConstraintFrame) -> Result<f64> {
    let [xk, ..] = distributional_decomposition(nh, frame)?;
    let xt = distributional_cmh_vf(nh, frame)?;
    let r = dist_magnetic_vanishing_residual(nh, frame)?;
    Ok((xt - xk - r).amax())
}

/// Result of a bracket-generating test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BracketReport {
    pub generating: bool,
    pub rank: usize,
    pub depth: usize,
}

struct FrameField {
    dist: PfaffianDistribution,
    pivots: Vec<usize>,
    free: usize,
}

impl GenericFunc for FrameField {
    fn in_dim(&self) -> usize {
        self.dist.n()
    }
    fn out_dim(&self) -> usize {
        self.dist.n()
    }
    fn apply<R: Real>(&self, q: &[R]) -> Vec<R> {
        let n = self.dist.n();
        let a = self.dist.eval(q);
        let mut x = vec![R::zero(); n];
        x[self.free] = R::one();
        if !self.pivots.is_empty() {
            let ap: Vec<Vec<R>> = a.iter().map(|row| self.pivots.iter().map(|&j| row[j]).collect()).collect();
            let rhs: Vec<R> = a.iter().map(|row| -row[self.free]).collect();
            let sol = solve_generic(ap, rhs).unwrap_or_else(|| vec![R::cst(f64::NAN); self.pivots.len()]);
            for (&j, v) in self.pivots.iter().zip(sol) {
                x[j] = v;
            }
        }
        x
    }
}

struct Bracket {
    x: VectorMap,
    y: VectorMap,
    engine: DerivativeEngine,
}

impl GenericFunc for Bracket {
    fn in_dim(&self) -> usize {
        self.x.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.x.in_dim()
    }
    // [X, Y] = DY·X - DX·Y
    fn apply<R: Real>(&self, q: &[R]) -> Vec<R> {
        let xv = self.x.eval(q);
        let yv = self.y.eval(q);
        let dx = jacobian_generic(&self.x, q, &self.engine);
        let dy = jacobian_generic(&self.y, q, &self.engine);
        let a = crate::diffcore::mat_vec(&dy, &xv);
        let b = crate::diffcore::mat_vec(&dx, &yv);
        a.into_iter().zip(b).map(|(u, v)| u - v).collect()
    }
}

/// Column pivots of `A(q0)` by elimination with full pivoting.
fn pivot_columns(a: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (k, n) = a.shape();
    let mut m = a.clone();
    let mut used = vec![false; n];
    let mut piv = Vec::with_capacity(k);
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    for r in 0..k {
        let mut best = (0.0, 0, 0);
        for i in r..k {
            for j in 0..n {
                if !used[j] && m[(i, j)].abs() > best.0 {
                    best = (m[(i, j)].abs(), i, j);
                }
            }
        }
        if best.0 <= 1e-10 * scale {
            return Err(Error::degenerate("constraint frame selection"));
        }
        m.swap_rows(r, best.1);
        let j = best.2;
        used[j] = true;
        piv.push(j);
        for i in r + 1..k {
            let f = m[(i, j)] / m[(r, j)];
            for c in 0..n {
                m[(i, c)] -= f * m[(r, c)];
            }
        }
    }
    Ok(piv)
}

/// Spanning fields of `D` near `q0` from fixed pivot columns of `A(q0)`.
pub fn local_frame(dist: &PfaffianDistribution, q0: &[f64]) -> Result<Vec<VectorMap>> {
    let a = dist.matrix(q0)?;
    let pivots = if dist.k() == 0 { Vec::new() } else { pivot_columns(&a)? };
    Ok((0..dist.n())
        .filter(|j| !pivots.contains(j))
        .map(|free| VectorMap::new(FrameField { dist: dist.clone(), pivots: pivots.clone(), free }))
        .collect())
}

/// Whether iterated brackets up to `max_depth` span `R^n` at `q0`.
pub fn bracket_generating_check(
    dist: &PfaffianDistribution,
    q0: &[f64],
    max_depth: usize,
    eng: &DerivativeEngine,
) -> Result<BracketReport> {
    let n = dist.n();
    let frame = local_frame(dist, q0)?;
    let mut all: Vec<VectorMap> = frame.clone();
    let mut layer = frame.clone();
    let rank_of = |fields: &[VectorMap]| -> Result<usize> {
        let cols: Vec<f64> = fields.iter().flat_map(|f| f.eval(q0)).collect();
        check_finite("bracket fields", &cols)?;
        Ok(rank(&DMatrix::from_column_slice(n, fields.len(), &cols), RANK_TOL))
    };
    let mut r = if all.is_empty() { 0 } else { rank_of(&all)? };
    let mut depth = 1;
    while r < n && depth < max_depth.min(4) {
        let mut next = Vec::new();
        for x in &frame {
            for y in &layer {
                next.push(VectorMap::new(Bracket { x: x.clone(), y: y.clone(), engine: *eng }));
            }
        }
        all.extend(next.iter().cloned());
        layer = next;
        depth += 1;
        r = rank_of(&all)?;
    }
    Ok(BracketReport { generating: r == n, rank: r, depth })
}

/// `max |xᵀ (A + β) y|` over an orthonormal basis of `D_q`.
pub fn dgamma_plus_b_on_d_residual(
    gamma: &OneFormSection,
    beta: &MagneticField,
    dist: &PfaffianDistribution,
    q: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let d = dist.basis(q)?;
    let m = exterior_derivative_matrix(gamma, q, eng)? + beta.matrix(q)?;
    Ok(max_abs(&(d.transpose() * m * &d)))
}

/// Hypothesis diagnostics shared by the distributional Hamilton-Jacobi checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypotheses {
    /// `‖c‖` at the image point.
    pub image_in_m: f64,
    /// Distance of `Tγ(D_q)` from `K` at the image point (0 when not applicable).
    pub tangent_in_k: f64,
    /// Symplecticity defect of `ε` (0 when not applicable).
    pub symplectic_defect: f64,
}

impl Hypotheses {
    pub fn hold(&self, tol: f64) -> bool {
        self.image_in_m <= tol && self.tangent_in_k <= tol && self.symplectic_defect <= tol
    }
}

/// Distance of `Tγ(D_q)` from `K` at `γ(q)`.
pub fn tangent_in_k_residual(
    gamma: &OneFormSection,
    nh: &NonholonomicCmhSystem,
    q: &[f64],
    frame: &ConstraintFrame,
) -> Result<f64> {
    let t = section_tangent(gamma, q, nh.engine())? * nh.dist.basis(q)?;
    Ok(projection_residual(&t, &frame.basis_k))
}

/// Lemma-type check: `A(q) · Tπ · X^B_H` at an image point known (or required) to lie in `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaReport {
    pub max_residual: f64,
    pub max_image_in_m: f64,
    pub flagged: bool,
}

/// Image points are `γ(q)` for one-forms, `ε(z)` for phase maps; both must lie in `M`.
pub fn lemma63_check(nh: &NonholonomicCmhSystem, images: &[Vec<f64>], tol: f64) -> Result<LemmaReport> {
    let n = nh.n();
    let mut worst = 0.0_f64;
    let mut image = 0.0_f64;
    for y in images {
        image = image.max(constraint_norm(nh, y)?);
        let x = magnetic_vf(&nh.sys.h, &nh.sys.beta, y, nh.engine())?;
        let a = nh.dist.matrix(&y[..n])?;
        let r = if nh.k() == 0 { 0.0 } else { (a * x.rows(0, n)).amax() };
        worst = worst.max(r);
    }
    let flagged = image > tol;
    Ok(LemmaReport { max_residual: if flagged { f64::NAN } else { worst }, max_image_in_m: image, flagged })
}

#[derive(Debug, Clone)]
pub struct DistHj1 {
    pub residual: DVector<f64>,
    pub hypotheses: Hypotheses,
}

/// `Tγ · Tπ · X̃(γ(q)) - X^B_K(γ(q))` with the distributional CMH field.
pub fn hj1_dist_residual(gamma: &OneFormSection, nh: &NonholonomicCmhSystem, q: &[f64]) -> Result<DistHj1> {
    let n = nh.n();
    let z = gamma.section(q);
    let frame = frame_at(nh, &z)?;
    frame.require_compatible()?;
    let xt = distributional_cmh_vf(nh, &frame)?;
    let lhs = section_tangent(gamma, q, nh.engine())? * xt.rows(0, n).into_owned();
    let residual = lhs - distributional_vf(nh, &frame)?;
    let hypotheses = Hypotheses {
        image_in_m: frame.constraint_norm,
        tangent_in_k: tangent_in_k_residual(gamma, nh, q, &frame)?,
        symplectic_defect: 0.0,
    };
    Ok(DistHj1 { residual, hypotheses })
}

#[derive(Debug, Clone)]
pub struct DistHj2 {
    pub r1: DVector<f64>,
    pub r2: DVector<f64>,
    pub hypotheses: Hypotheses,
}

impl DistHj2 {
    pub fn verdicts(&self, tol: f64) -> (bool, bool) {
        (self.r1.amax() <= tol, self.r2.amax() <= tol)
    }
}

/// ```text
/// r1 = Tγ · Tπ · X̃(ε(z)) - X^B_K(ε(z))
/// r2 = τ_K · Tε · X^B_{H∘ε}(z) - Tλ · X̃(ε(z))
/// ```
pub fn hj2_dist_residuals(
    gamma: &OneFormSection,
    eps: &VectorMap,
    nh: &NonholonomicCmhSystem,
    z: &[f64],
) -> Result<DistHj2> {
    let n = nh.n();
    let eng = *nh.engine();
    let y = eps.eval(z);
    check_finite("phase map image", &y)?;
    let qy = &y[..n];
    let frame = frame_at(nh, &y)?;
    frame.require_compatible()?;
    let xt = distributional_cmh_vf(nh, &frame)?;
    let r1 = section_tangent(gamma, qy, &eng)? * xt.rows(0, n).into_owned() - distributional_vf(nh, &frame)?;

    let t = eng.jacobian(eps, z)?;
    let pushed = &t * pulled_back_magnetic_vf(&nh.sys, eps, &t, z)?;
    let r2 = frame.project(&pushed) - lambda_tangent(gamma, qy, &eng)? * xt;
    let hypotheses = Hypotheses {
        image_in_m: frame.constraint_norm,
        tangent_in_k: tangent_in_k_residual(gamma, nh, qy, &frame)?,
        symplectic_defect: symplectic_defect_with(&t, &y, &nh.sys.beta, z)?,
    };
    Ok(DistHj2 { r1, r2, hypotheses })
}

/// rk4 (or Euler) on the distributional CMH field, re-projecting to `M` after every step.
pub fn integrate_constrained(
    nh: &NonholonomicCmhSystem,
    z0: &[f64],
    dt: f64,
    steps: usize,
    method: Method,
) -> Result<Vec<Vec<f64>>> {
    let z0 = project_to_m(nh, z0)?;
    let rhs = |z: &[f64]| -> Result<Vec<f64>> {
        let frame = frame_at(nh, z)?;
        Ok(distributional_cmh_vf(nh, &frame)?.as_slice().to_vec())
    };
    integrate_with(rhs, |_, z| project_to_m(nh, &z), &z0, dt, steps, method)
}

/// Time-`t` flow of the distributional field with re-projection, as an opaque
/// phase map (derivatives by finite differences).
pub fn constrained_flow_map(nh: &NonholonomicCmhSystem, t: f64, steps: usize) -> VectorMap {
    let nh = nh.clone();
    let dim = 2 * nh.n();
    VectorMap::from_fn(dim, dim, move |z| match integrate_constrained(&nh, z, t / steps as f64, steps, Method::Rk4) {
        Ok(traj) => traj.last().cloned().unwrap_or_else(|| vec![f64::NAN; z.len()]),
        Err(_) => vec![f64::NAN; z.len()],
    })
}

/// Orthonormal basis of `span(a)`, re-exported for callers assembling frames.
pub fn orthonormal(a: &DMatrix<f64>) -> DMatrix<f64> {
    column_space(a, RANK_TOL)
}
