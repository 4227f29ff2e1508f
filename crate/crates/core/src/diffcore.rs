//! Differentiation and pointwise linear algebra.
//!
//! Derivatives come from the [`DerivativeEngine`]: exact forward-mode duals by
//! default, central differences with relative step `eps·(1+|x|)` as the
//! fallback. Subspaces are always handed out as matrices with orthonormal
//! columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::func::{GenericFunc, ScalarField, VectorMap};
use crate::real::Real;

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Environment variable selecting the derivative engine (`dual` or `fd`).
pub const DERIV_ENV: &str = "MAGNOMECH_DERIV";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    ForwardDual,
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeEngine {
    pub mode: DerivMode,
    /// Relative step for central differences.
    pub eps: f64,
}

impl Default for DerivativeEngine {
    fn default() -> Self {
        DerivativeEngine::dual()
    }
}

impl DerivativeEngine {
    pub fn dual() -> Self {
        DerivativeEngine { mode: DerivMode::ForwardDual, eps: 1e-6 }
    }

    pub fn central(eps: f64) -> Self {
        DerivativeEngine { mode: DerivMode::CentralDifference, eps }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "dual" => Ok(Self::dual()),
            "fd" => Ok(Self::central(1e-6)),
            other => Err(Error::Invalid(format!(
                "{DERIV_ENV} must be `dual` or `fd`, got `{other}`"
            ))),
        }
    }

    /// Engine selected by `MAGNOMECH_DERIV`; dual when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var(DERIV_ENV) {
            Ok(v) => Self::parse(&v),
            Err(_) => Ok(Self::dual()),
        }
    }

    pub fn gradient(&self, f: &ScalarField, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("gradient input", f.arity(), x.len())?;
        let g = gradient_generic(f, x, self);
        check_finite("gradient", &g)?;
        Ok(DVector::from_vec(g))
    }

    pub fn jacobian(&self, g: &VectorMap, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("jacobian input", g.in_dim(), x.len())?;
        let rows = jacobian_generic(g, x, self);
        let m = g.out_dim();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        check_finite("jacobian", &flat)?;
        Ok(DMatrix::from_row_slice(m, x.len(), &flat))
    }

    /// Jacobian of the gradient.
    pub fn hessian(&self, f: &ScalarField, x: &[f64]) -> Result<DMatrix<f64>> {
        let grad = VectorMap::new(GradientMap { field: f.clone(), engine: *self });
        self.jacobian(&grad, x)
    }
}

/// Gradient at any tower level.
pub fn gradient_generic<R: Real>(f: &ScalarField, x: &[R], engine: &DerivativeEngine) -> Vec<R> {
    R::jacobian(f.as_func(), x, engine).swap_remove(0)
}

/// Jacobian rows at any tower level.
pub fn jacobian_generic<R: Real>(g: &VectorMap, x: &[R], engine: &DerivativeEngine) -> Vec<Vec<R>> {
    R::jacobian(g.as_func(), x, engine)
}

/// The gradient of a scalar field, itself a differentiable map.
pub struct GradientMap {
    pub field: ScalarField,
    pub engine: DerivativeEngine,
}

impl GenericFunc for GradientMap {
    fn in_dim(&self) -> usize {
        self.field.arity()
    }
    fn out_dim(&self) -> usize {
        self.field.arity()
    }
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        gradient_generic(&self.field, x, &self.engine)
    }
}

fn check_matrix_finite(a: &DMatrix<f64>) -> Result<()> {
    check_finite("matrix", a.as_slice())
}

/// Right singular vectors and singular values, with `V` always square.
fn full_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    (sv, vt.transpose())
}

/// Orthonormal basis of `ker A`; singular values below `tol·σ_max` count as zero.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_matrix_finite(a)?;
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let (sv, v) = full_svd(a);
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let cut = tol * smax;
    let cols: Vec<DVector<f64>> = sv
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= cut)
        .map(|(i, _)| v.column(i).into_owned())
        .collect();
    Ok(columns_to_matrix(n, &cols))
}

/// Numerical rank with the relative cutoff `tol`.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Orthonormal basis of the column space of `a`.
pub fn column_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let m = a.nrows();
    if a.ncols() == 0 || m == 0 {
        return DMatrix::zeros(m, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().fold(0.0_f64, |x, &s| x.max(s));
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > tol * smax)
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    columns_to_matrix(m, &cols)
}

pub(crate) fn columns_to_matrix(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Orthonormal basis of `span(b1) ∩ span(b2)`, computed as the null space of
/// the stacked complementary projectors.
pub fn subspace_intersect(b1: &DMatrix<f64>, b2: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_dim("subspace_intersect ambient dimension", b1.nrows(), b2.nrows())?;
    let n = b1.nrows();
    let q1 = column_space(b1, RANK_TOL);
    let q2 = column_space(b2, RANK_TOL);
    let eye = DMatrix::<f64>::identity(n, n);
    let c1 = &eye - &q1 * q1.transpose();
    let c2 = &eye - &q2 * q2.transpose();
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&c1);
    stacked.view_mut((n, 0), (n, n)).copy_from(&c2);
    // Projector complements have unit singular values, so the cutoff is absolute.
    let (sv, v) = full_svd(&stacked);
    let cols: Vec<DVector<f64>> = sv
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol.max(1e-12))
        .map(|(i, _)| v.column(i).into_owned())
        .collect();
    Ok(columns_to_matrix(n, &cols))
}

/// Largest distance of a column of `a` from `span(b)` (orthonormal `b`).
pub fn projection_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let proj = b * (b.transpose() * &col);
        worst = worst.max((col - proj).norm());
    }
    worst
}

/// Mutual projection residual: zero iff both bases span the same space.
pub fn same_span_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return f64::INFINITY;
    }
    projection_residual(a, b).max(projection_residual(b, a))
}

/// Solves a dense square system; `None` when singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().full_piv_lu();
    let x = lu.solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Gaussian elimination with partial pivoting at any tower level.
/// Pivoting uses the primal values. Returns `None` on a (relatively) zero pivot.
pub fn solve_generic<R: Real>(mut a: Vec<Vec<R>>, mut b: Vec<R>) -> Option<Vec<R>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.re().abs()));
    if n == 0 {
        return Some(Vec::new());
    }
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].re().abs().total_cmp(&a[j][col].re().abs()))
            .expect("non-empty range");
        if a[piv][col].re().abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = R::one() / a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] * inv;
            if factor.re() == 0.0 {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = vec![R::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

pub fn mat_vec<R: Real>(a: &[Vec<R>], x: &[R]) -> Vec<R> {
    a.iter()
        .map(|row| row.iter().zip(x).fold(R::zero(), |acc, (&r, &v)| acc + r * v))
        .collect()
}

pub fn mat_t_vec<R: Real>(a: &[Vec<R>], x: &[R]) -> Vec<R> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut out = vec![R::zero(); cols];
    for (row, &xi) in a.iter().zip(x) {
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r * xi;
        }
    }
    out
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(m, n, |i, j| rows[i][j])
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
