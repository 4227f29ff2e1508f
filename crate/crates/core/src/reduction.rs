//! Reduction of a distributional CMH system by translations along cyclic
//! coordinates. The quotient chart drops `q_S`; reduced points are lifted with
//! `q_S = 0` unless a shift is given.
//!
//! ```text
//! V  = span{(e_a, 0) : a ∈ S}
//! U  = {u ∈ K : ω^B(u, v) = 0 for v ∈ V ∩ K}
//! K̄  = Tπ(U)
//! ρ(w) = K̄ Ḡ⁻ᵀ Ũᵀ Sᵀ w     (Ũ: preimages in U of the K̄ basis, Ḡ = Ũᵀ S Ũ)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{max_abs, null_space, solve, subspace_intersect, DerivativeEngine, RANK_TOL};
use crate::dynamics::{canonical_vf, magnetic_vf, vertical_lift};
use crate::error::{check_dim, Error, Result};
use crate::func::VectorMap;
use crate::hamilton_jacobi::{lambda_tangent, pulled_back_magnetic_vf, section_tangent, symplectic_defect_with};
use crate::nonholonomic::{
    constraint_norm, distributional_cmh_vf, frame_at, tangent_in_k_residual, ConstraintFrame, Hypotheses,
    NonholonomicCmhSystem,
};
use crate::symplectic::OneFormSection;

/// Translations along the cyclic coordinates `S` (0-based, sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationSymmetry {
    n: usize,
    cyclic: Vec<usize>,
}

impl TranslationSymmetry {
    pub fn new(n: usize, mut cyclic: Vec<usize>) -> Result<Self> {
        cyclic.sort_unstable();
        cyclic.dedup();
        if let Some(&bad) = cyclic.iter().find(|&&a| a >= n) {
            return Err(Error::Invalid(format!("cyclic index {} out of range 1..={n}", bad + 1)));
        }
        Ok(TranslationSymmetry { n, cyclic })
    }

    pub fn none(n: usize) -> Self {
        TranslationSymmetry { n, cyclic: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.cyclic.len()
    }

    pub fn cyclic(&self) -> &[usize] {
        &self.cyclic
    }

    pub fn reduced_dim(&self) -> usize {
        2 * self.n - self.s()
    }

    /// Rows of the phase space kept by `π` (and `Tπ`).
    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..2 * self.n).filter(move |i| !self.cyclic.contains(i))
    }

    /// `Tπ` as a `(2n - s) × 2n` selection matrix.
    pub fn projection(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.reduced_dim(), 2 * self.n);
        for (r, c) in self.kept().enumerate() {
            p[(r, c)] = 1.0;
        }
        p
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.kept().map(|i| z[i]).collect()
    }

    pub fn project_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.project(v.as_slice()))
    }

    /// Lift with `q_S = shift`.
    pub fn lift(&self, zbar: &[f64], shift: &[f64]) -> Result<Vec<f64>> {
        check_dim("reduced point", self.reduced_dim(), zbar.len())?;
        check_dim("shift", self.s(), shift.len())?;
        let mut z = vec![0.0; 2 * self.n];
        for (i, v) in self.kept().zip(zbar) {
            z[i] = *v;
        }
        for (&a, v) in self.cyclic.iter().zip(shift) {
            z[a] = *v;
        }
        Ok(z)
    }

    pub fn shift_phase(&self, z: &[f64], shift: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        for (&a, v) in self.cyclic.iter().zip(shift) {
            out[a] += v;
        }
        out
    }

    pub fn shift_config(&self, q: &[f64], shift: &[f64]) -> Vec<f64> {
        self.shift_phase(q, shift)
    }

    /// `(e_a, 0)` for `a ∈ S`.
    pub fn vertical_basis(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(2 * self.n, self.s());
        for (j, &a) in self.cyclic.iter().enumerate() {
            v[(a, j)] = 1.0;
        }
        v
    }
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max change of `H`, `β`, `A`, `M`, `V`, force and control under the shifts.
pub fn invariance_residual(
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    samples: &[Vec<f64>],
    shifts: &[Vec<f64>],
) -> Result<f64> {
    let n = nh.n();
    if sym.s() == 0 {
        return Ok(0.0);
    }
    let mut worst = 0.0_f64;
    for z in samples {
        check_dim("phase point", 2 * n, z.len())?;
        for shift in shifts {
            check_dim("shift", sym.s(), shift.len())?;
            let w = sym.shift_phase(z, shift);
            let (q, qw) = (&z[..n], &w[..n]);
            worst = worst
                .max((nh.sys.h.eval(z) - nh.sys.h.eval(&w[..])).abs())
                .max(diff(&nh.sys.beta.map().eval(q), &nh.sys.beta.map().eval(qw)))
                .max(diff(&nh.lagrangian.mass.eval(q), &nh.lagrangian.mass.eval(qw)))
                .max((nh.lagrangian.potential.eval(q) - nh.lagrangian.potential.eval(qw)).abs())
                .max(diff(&nh.sys.force.f.eval(z), &nh.sys.force.f.eval(&w)))
                .max(diff(&nh.sys.control.f.eval(z), &nh.sys.control.f.eval(&w)));
            if nh.k() > 0 {
                worst = worst.max(diff(&nh.dist.map().eval(q), &nh.dist.map().eval(qw)));
            }
        }
    }
    Ok(worst)
}

/// `max |γ̄(q + shift) - γ̄(q)|`.
pub fn one_form_invariance_residual(
    gamma: &OneFormSection,
    sym: &TranslationSymmetry,
    q: &[f64],
    shifts: &[Vec<f64>],
) -> f64 {
    shifts
        .iter()
        .map(|s| diff(&gamma.gammabar.eval(q), &gamma.gammabar.eval(&sym.shift_config(q, s))))
        .fold(0.0, f64::max)
}

/// `max |ε(z + shift) - (ε(z) + shift)|`.
pub fn phase_map_equivariance_residual(
    eps: &VectorMap,
    sym: &TranslationSymmetry,
    z: &[f64],
    shifts: &[Vec<f64>],
) -> f64 {
    let ez = eps.eval(z);
    shifts
        .iter()
        .map(|s| diff(&eps.eval(&sym.shift_phase(z, s)), &sym.shift_phase(&ez, s)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct ReducedFrame {
    pub zbar: Vec<f64>,
    /// Lift used to build the frame.
    pub z: Vec<f64>,
    pub frame: ConstraintFrame,
    pub basis_v: DMatrix<f64>,
    pub basis_vk: DMatrix<f64>,
    pub basis_u: DMatrix<f64>,
    pub basis_kbar: DMatrix<f64>,
    /// Preimages in `U` of the `K̄` basis columns.
    pub preimages: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub compatible: bool,
}

impl ReducedFrame {
    pub fn dim_kbar(&self) -> usize {
        self.basis_kbar.ncols()
    }

    pub fn require_compatible(&self) -> Result<()> {
        if self.compatible {
            Ok(())
        } else {
            Err(Error::Incompatible(format!("reduced frame at {:?}", self.zbar)))
        }
    }

    /// `ρ(w)`: push a tangent vector at the lift down to `K̄`.
    pub fn push(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_compatible()?;
        if self.dim_kbar() == 0 {
            return Ok(DVector::zeros(self.zbar.len()));
        }
        let rhs = self.preimages.transpose() * self.frame.symplectic.transpose() * w;
        self.solve_bar(&rhs)
    }

    fn solve_bar(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let x = solve(&self.gram.transpose(), rhs)
            .ok_or_else(|| Error::Incompatible("singular reduced Gram matrix".into()))?;
        Ok(&self.basis_kbar * x)
    }

    /// Reduced two-form as a matrix on the reduced space, `K̄ Ḡ K̄ᵀ`.
    pub fn form_matrix(&self) -> DMatrix<f64> {
        &self.basis_kbar * &self.gram * self.basis_kbar.transpose()
    }

    /// Orthogonal projector onto `K̄`.
    pub fn kbar_projector(&self) -> DMatrix<f64> {
        &self.basis_kbar * self.basis_kbar.transpose()
    }
}

/// Frame at `zbar` lifted with `q_S = 0`.
pub fn reduced_frame_at(nh: &NonholonomicCmhSystem, sym: &TranslationSymmetry, zbar: &[f64]) -> Result<ReducedFrame> {
    reduced_frame_at_lift(nh, sym, zbar, &vec![0.0; sym.s()])
}

pub fn reduced_frame_at_lift(
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    zbar: &[f64],
    shift: &[f64],
) -> Result<ReducedFrame> {
    check_dim("symmetry dimension", nh.n(), sym.n())?;
    let z = sym.lift(zbar, shift)?;
    let frame = frame_at(nh, &z)?;
    frame.require_compatible()?;
    let s = &frame.symplectic;
    let k = &frame.basis_k;
    let basis_v = sym.vertical_basis();
    let basis_vk = if sym.s() == 0 { DMatrix::zeros(2 * nh.n(), 0) } else { subspace_intersect(&basis_v, k, 1e-9)? };
    let basis_u = if basis_vk.ncols() == 0 {
        k.clone()
    } else {
        k * null_space(&(basis_vk.transpose() * s.transpose() * k), RANK_TOL)?
    };

    let pu = sym.projection() * &basis_u;
    let svd = pu.clone().svd(true, true);
    let (w, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL)
        .collect();
    let rdim = sym.reduced_dim();
    let mut basis_kbar = DMatrix::zeros(rdim, idx.len());
    let mut preimages = DMatrix::zeros(2 * nh.n(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        basis_kbar.set_column(j, &w.column(i));
        let y = vt.row(i).transpose() / svd.singular_values[i];
        preimages.set_column(j, &(&basis_u * y));
    }
    let gram = preimages.transpose() * s * &preimages;
    let compatible = gram.ncols() == 0 || crate::diffcore::rank(&gram, RANK_TOL) == gram.ncols();
    Ok(ReducedFrame {
        zbar: zbar.to_vec(),
        z,
        frame,
        basis_v,
        basis_vk,
        basis_u,
        basis_kbar,
        preimages,
        gram,
        compatible,
    })
}

/// Max `|ω^B(u₁, u₂) - ω̄(Tπ u₁, Tπ u₂)|` over the `U` basis.
pub fn pullback_form_residual(sym: &TranslationSymmetry, rf: &ReducedFrame) -> f64 {
    let pu = sym.projection() * &rf.basis_u;
    let lhs = rf.basis_u.transpose() * &rf.frame.symplectic * &rf.basis_u;
    let rhs = pu.transpose() * rf.form_matrix() * pu;
    max_abs(&(lhs - rhs))
}

/// Solution of the reduced restricted equation `i_X ω̄ = dh` on `K̄`.
pub fn reduced_distributional_vf(nh: &NonholonomicCmhSystem, rf: &ReducedFrame) -> Result<DVector<f64>> {
    rf.require_compatible()?;
    if rf.dim_kbar() == 0 {
        return Ok(DVector::zeros(rf.zbar.len()));
    }
    let grad = nh.engine().gradient(&nh.sys.h, &rf.z)?;
    rf.solve_bar(&(rf.preimages.transpose() * grad))
}

/// `(X_K̄, X⁰_K̄, F^B_K̄, u^B_K̄)`, each pushed down from the lift.
pub fn reduced_decomposition(nh: &NonholonomicCmhSystem, rf: &ReducedFrame) -> Result<[DVector<f64>; 4]> {
    let sys = &nh.sys;
    let eng = &sys.engine;
    let z = &rf.z;
    let xh = canonical_vf(&sys.h, z, eng)?;
    let xb = magnetic_vf(&sys.h, &sys.beta, z, eng)?;
    let base = sys.magnetic_field();
    let f = rf.frame.project(&vertical_lift(&sys.force, &base, z, eng)?);
    let u = rf.frame.project(&vertical_lift(&sys.control, &base, z, eng)?);
    let xk = rf.push(&xh)?;
    Ok([xk.clone(), rf.push(&xb)? - xk, rf.push(&f)?, rf.push(&u)?])
}

/// `X̂ = X^B_K̄ + F^B_K̄ + u^B_K̄`.
pub fn reduced_cmh_vf(nh: &NonholonomicCmhSystem, rf: &ReducedFrame) -> Result<DVector<f64>> {
    let [_, _, f, u] = reduced_decomposition(nh, rf)?;
    Ok(reduced_distributional_vf(nh, rf)? + f + u)
}

/// `r̄ = X⁰_K̄ + F^B_K̄ + u^B_K̄`.
pub fn reduced_magnetic_vanishing_residual(nh: &NonholonomicCmhSystem, rf: &ReducedFrame) -> Result<DVector<f64>> {
    let [_, x0, f, u] = reduced_decomposition(nh, rf)?;
    Ok(x0 + f + u)
}

/// `‖X̂ - X_K̄ - r̄‖∞`.
pub fn reduced_decomposition_residual(nh: &NonholonomicCmhSystem, rf: &ReducedFrame) -> Result<f64> {
    let [xk, ..] = reduced_decomposition(nh, rf)?;
    let r = reduced_magnetic_vanishing_residual(nh, rf)?;
    Ok((reduced_cmh_vf(nh, rf)? - xk - r).amax())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relatedness {
    Plain,
    Cmh,
}

/// `‖X̄(π z) - Tπ X(z)‖∞` for the plain or controlled field.
pub fn relatedness_residual(
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    z: &[f64],
    which: Relatedness,
) -> Result<f64> {
    let frame = frame_at(nh, z)?;
    let rf = reduced_frame_at(nh, sym, &sym.project(z))?;
    let (full, reduced) = match which {
        Relatedness::Plain => (crate::nonholonomic::distributional_vf(nh, &frame)?, reduced_distributional_vf(nh, &rf)?),
        Relatedness::Cmh => (distributional_cmh_vf(nh, &frame)?, reduced_cmh_vf(nh, &rf)?),
    };
    Ok((reduced - sym.project_vec(&full)).amax())
}

/// Differences of the reduced form, `K̄` projector and reduced field between two lifts.
pub fn lift_independence_residual(
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    zbar: &[f64],
    shift_a: &[f64],
    shift_b: &[f64],
) -> Result<f64> {
    let a = reduced_frame_at_lift(nh, sym, zbar, shift_a)?;
    let b = reduced_frame_at_lift(nh, sym, zbar, shift_b)?;
    let form = max_abs(&(a.form_matrix() - b.form_matrix()));
    let proj = max_abs(&(a.kbar_projector() - b.kbar_projector()));
    let vf = (reduced_cmh_vf(nh, &a)? - reduced_cmh_vf(nh, &b)?).amax();
    Ok(form.max(proj).max(vf))
}

/// Hypotheses of the reduced Hamilton-Jacobi checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedHypotheses {
    pub base: Hypotheses,
    /// Invariance of `γ̄` (and equivariance of `ε`) under the shifts.
    pub invariance: f64,
}

impl ReducedHypotheses {
    pub fn hold(&self, tol: f64) -> bool {
        self.base.hold(tol) && self.invariance <= tol
    }
}

fn probe_shifts(s: usize) -> Vec<Vec<f64>> {
    vec![vec![0.7; s], (0..s).map(|i| -1.3 + 0.4 * i as f64).collect()]
}

#[derive(Debug, Clone)]
pub struct ReducedHj1 {
    pub residual: DVector<f64>,
    pub hypotheses: ReducedHypotheses,
}

/// `Tπ·Tγ·X̃^γ(q) - X^B_K̄(π γ(q))`.
pub fn reduced_hj1_residual(
    gamma: &OneFormSection,
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    q: &[f64],
) -> Result<ReducedHj1> {
    let n = nh.n();
    let z = gamma.section(q);
    let frame = frame_at(nh, &z)?;
    let xt = distributional_cmh_vf(nh, &frame)?;
    let lhs = sym.projection() * section_tangent(gamma, q, nh.engine())? * xt.rows(0, n).into_owned();
    let rf = reduced_frame_at(nh, sym, &sym.project(&z))?;
    let residual = lhs - reduced_distributional_vf(nh, &rf)?;
    let hypotheses = ReducedHypotheses {
        base: Hypotheses {
            image_in_m: frame.constraint_norm,
            tangent_in_k: tangent_in_k_residual(gamma, nh, q, &frame)?,
            symplectic_defect: 0.0,
        },
        invariance: one_form_invariance_residual(gamma, sym, q, &probe_shifts(sym.s())),
    };
    Ok(ReducedHj1 { residual, hypotheses })
}

#[derive(Debug, Clone)]
pub struct ReducedHj2 {
    pub r1: DVector<f64>,
    pub r2: DVector<f64>,
    pub hypotheses: ReducedHypotheses,
}

impl ReducedHj2 {
    pub fn verdicts(&self, tol: f64) -> (bool, bool) {
        (self.r1.amax() <= tol, self.r2.amax() <= tol)
    }
}

/// ```text
/// r1 = Tπ·Tγ·Tπ_Q·X̃(ε z) - X^B_K̄(π ε z)
/// r2 = ρ(Tε·X^B_{H∘ε}(z)) - Tπ·Tλ·X̃(ε z)
/// ```
pub fn reduced_hj2_residuals(
    gamma: &OneFormSection,
    eps: &VectorMap,
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    z: &[f64],
) -> Result<ReducedHj2> {
    let n = nh.n();
    let eng: DerivativeEngine = *nh.engine();
    let y = eps.eval(z);
    crate::error::check_finite("phase map image", &y)?;
    let qy = &y[..n];
    let frame = frame_at(nh, &y)?;
    frame.require_compatible()?;
    let xt = distributional_cmh_vf(nh, &frame)?;
    let p = sym.projection();
    let rf = reduced_frame_at(nh, sym, &sym.project(&y))?;
    let r1 = &p * section_tangent(gamma, qy, &eng)? * xt.rows(0, n).into_owned() - reduced_distributional_vf(nh, &rf)?;

    // push down at the image point itself so that no lift transport is needed
    let rf_y = reduced_frame_at_lift(nh, sym, &sym.project(&y), &sym.cyclic().iter().map(|&a| y[a]).collect::<Vec<_>>())?;
    let t = eng.jacobian(eps, z)?;
    let pushed = &t * pulled_back_magnetic_vf(&nh.sys, eps, &t, z)?;
    let r2 = rf_y.push(&pushed)? - &p * lambda_tangent(gamma, qy, &eng)? * xt;
    let shifts = probe_shifts(sym.s());
    let hypotheses = ReducedHypotheses {
        base: Hypotheses {
            image_in_m: constraint_norm(nh, &y)?,
            tangent_in_k: tangent_in_k_residual(gamma, nh, qy, &frame)?,
            symplectic_defect: symplectic_defect_with(&t, &y, &nh.sys.beta, z)?,
        },
        invariance: one_form_invariance_residual(gamma, sym, qy, &shifts)
            .max(phase_map_equivariance_residual(eps, sym, z, &shifts)),
    };
    Ok(ReducedHj2 { r1, r2, hypotheses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceReport {
    pub samples: usize,
    pub agreeing: usize,
    pub flagged: usize,
    pub unreduced_pass: usize,
    pub reduced_pass: usize,
    pub max_unreduced: f64,
    pub max_reduced: f64,
}

impl CorrespondenceReport {
    pub fn all_agree(&self) -> bool {
        self.agreeing == self.samples
    }
}

/// Compares the unreduced and reduced Type II verdicts (`r1 ≤ tol`) at each sample.
pub fn hj2_reduction_correspondence(
    gamma: &OneFormSection,
    eps: &VectorMap,
    nh: &NonholonomicCmhSystem,
    sym: &TranslationSymmetry,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CorrespondenceReport> {
    let mut rep = CorrespondenceReport {
        samples: samples.len(),
        agreeing: 0,
        flagged: 0,
        unreduced_pass: 0,
        reduced_pass: 0,
        max_unreduced: 0.0,
        max_reduced: 0.0,
    };
    for z in samples {
        let full = crate::nonholonomic::hj2_dist_residuals(gamma, eps, nh, z)?;
        let red = reduced_hj2_residuals(gamma, eps, nh, sym, z)?;
        if !red.hypotheses.hold(1e-8) {
            rep.flagged += 1;
        }
        let (a, b) = (full.r1.amax(), red.r1.amax());
        rep.max_unreduced = rep.max_unreduced.max(a);
        rep.max_reduced = rep.max_reduced.max(b);
        rep.unreduced_pass += usize::from(a <= tol);
        rep.reduced_pass += usize::from(b <= tol);
        rep.agreeing += usize::from((a <= tol) == (b <= tol));
    }
    Ok(rep)
}
