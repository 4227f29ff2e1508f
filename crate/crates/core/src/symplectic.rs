//! Canonical and magnetic symplectic structure on `T*R^n`.
//!
//! A magnetic field is a skew-matrix-valued map `β(q)`; the two-form it stands
//! for pairs tangent vectors as `B(x, y) = xᵀ β y`. The magnetic symplectic
//! matrix at `z = (q, p)` is
//!
//! ```text
//! S(q) = [[-β(q), I], [-I, 0]],    ω(v, w) = vᵀ S w.
//! ```
//!
//! In the classical coordinate form `ṗ_i = -∂H/∂q^i - Σ_j B_ij ∂H/∂p_j` the
//! coefficient matrix is `B_ij = -β_ij`.

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{jacobian_generic, DerivativeEngine};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::func::{ConstMap, GenericFunc, VectorMap};
use crate::real::Real;

/// Skew-matrix-valued field `q -> β(q)`, stored row-major as a map `R^n -> R^{n²}`.
#[derive(Clone, Debug)]
pub struct MagneticField {
    n: usize,
    beta: VectorMap,
}

impl MagneticField {
    pub fn new(n: usize, beta: VectorMap) -> Result<Self> {
        check_dim("magnetic field input", n, beta.in_dim())?;
        check_dim("magnetic field output", n * n, beta.out_dim())?;
        Ok(MagneticField { n, beta })
    }

    pub fn zero(n: usize) -> Self {
        MagneticField { n, beta: VectorMap::new(ConstMap::new(n, vec![0.0; n * n])) }
    }

    pub fn constant(beta: &DMatrix<f64>) -> Result<Self> {
        let n = beta.nrows();
        check_dim("constant magnetic field columns", n, beta.ncols())?;
        let flat: Vec<f64> = (0..n * n).map(|k| beta[(k / n, k % n)]).collect();
        MagneticField::new(n, VectorMap::new(ConstMap::new(n, flat)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn map(&self) -> &VectorMap {
        &self.beta
    }

    pub fn eval<R: Real>(&self, q: &[R]) -> Vec<Vec<R>> {
        let flat = self.beta.eval(q);
        flat.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("magnetic field point", self.n, q.len())?;
        let flat = self.beta.eval(q);
        check_finite("magnetic field", &flat)?;
        Ok(DMatrix::from_row_slice(self.n, self.n, &flat))
    }

    /// `max |β + βᵀ|`.
    pub fn skewness_residual(&self, q: &[f64]) -> Result<f64> {
        let b = self.matrix(q)?;
        Ok(crate::diffcore::max_abs(&(&b + b.transpose())))
    }

    /// Largest `|∂_k β_ij + ∂_i β_jk + ∂_j β_ki|`; zero iff the two-form is closed at `q`.
    pub fn closedness_residual(&self, q: &[f64], eng: &DerivativeEngine) -> Result<f64> {
        let n = self.n;
        let jac = eng.jacobian(&self.beta, q)?;
        let d = |i: usize, j: usize, k: usize| jac[(i * n + j, k)];
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((d(i, j, k) + d(j, k, i) + d(k, i, j)).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// `S(q) = [[-β, I], [-I, 0]]` at any tower level.
pub fn symplectic_matrix_generic<R: Real>(beta: &MagneticField, q: &[R]) -> Vec<Vec<R>> {
    let n = beta.n();
    let b = beta.eval(q);
    let mut s = vec![vec![R::zero(); 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = -b[i][j];
        }
        s[i][n + i] = R::one();
        s[n + i][i] = -R::one();
    }
    s
}

pub fn symplectic_matrix(beta: &MagneticField, q: &[f64]) -> Result<DMatrix<f64>> {
    let n = beta.n();
    let b = beta.matrix(q)?;
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    s.view_mut((0, 0), (n, n)).copy_from(&(-b));
    for i in 0..n {
        s[(i, n + i)] = 1.0;
        s[(n + i, i)] = -1.0;
    }
    Ok(s)
}

/// `ω^B_z(v, w) = vᵀ S(q) w`.
pub fn omega_b(beta: &MagneticField, z: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let n = beta.n();
    check_dim("phase point", 2 * n, z.len())?;
    check_dim("tangent v", 2 * n, v.len())?;
    check_dim("tangent w", 2 * n, w.len())?;
    let s = symplectic_matrix(beta, &z[..n])?;
    let v = DVector::from_column_slice(v);
    let w = DVector::from_column_slice(w);
    Ok(v.dot(&(s * w)))
}

/// A one-form viewed as a section `q -> (q, γ̄(q))` of `T*R^n`.
#[derive(Clone, Debug)]
pub struct OneFormSection {
    pub gammabar: VectorMap,
}

impl OneFormSection {
    pub fn new(gammabar: VectorMap) -> Result<Self> {
        check_dim("one-form output", gammabar.in_dim(), gammabar.out_dim())?;
        Ok(OneFormSection { gammabar })
    }

    pub fn n(&self) -> usize {
        self.gammabar.in_dim()
    }

    pub fn section<R: Real>(&self, q: &[R]) -> Vec<R> {
        let mut z = q.to_vec();
        z.extend(self.gammabar.eval(q));
        z
    }

    /// `λ = γ ∘ π` as a map on phase space.
    pub fn lambda(&self) -> VectorMap {
        VectorMap::new(Lambda { gamma: self.clone() })
    }
}

struct Lambda {
    gamma: OneFormSection,
}

impl GenericFunc for Lambda {
    fn in_dim(&self) -> usize {
        2 * self.gamma.n()
    }
    fn out_dim(&self) -> usize {
        2 * self.gamma.n()
    }
    fn apply<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.gamma.section(&z[..self.gamma.n()])
    }
}

/// Matrix `A = Jᵀ - J` of `dγ` (with `J` the Jacobian of `γ̄`), at any level.
pub fn exterior_derivative_generic<R: Real>(
    gamma: &OneFormSection,
    q: &[R],
    eng: &DerivativeEngine,
) -> Vec<Vec<R>> {
    let j = jacobian_generic(&gamma.gammabar, q, eng);
    let n = q.len();
    (0..n).map(|a| (0..n).map(|b| j[b][a] - j[a][b]).collect()).collect()
}

/// Skew matrix `A(q)` with `dγ(x, y) = xᵀ A y`.
pub fn exterior_derivative_matrix(
    gamma: &OneFormSection,
    q: &[f64],
    eng: &DerivativeEngine,
) -> Result<DMatrix<f64>> {
    let j = eng.jacobian(&gamma.gammabar, q)?;
    Ok(j.transpose() - j)
}

pub fn closedness_residual(beta: &MagneticField, q: &[f64], eng: &DerivativeEngine) -> Result<f64> {
    beta.closedness_residual(q, eng)
}

/// `ω^B_{φ(z)}(Tφ·v, Tφ·w)`.
pub fn pullback_two_form(
    map: &VectorMap,
    beta: &MagneticField,
    z: &[f64],
    v: &[f64],
    w: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let n = beta.n();
    check_dim("pullback map input", 2 * n, map.in_dim())?;
    check_dim("pullback map output", 2 * n, map.out_dim())?;
    let j = eng.jacobian(map, z)?;
    let image = map.eval(z);
    check_finite("pullback image", &image)?;
    let tv = &j * DVector::from_column_slice(v);
    let tw = &j * DVector::from_column_slice(w);
    omega_b(beta, &image, tv.as_slice(), tw.as_slice())
}

/// `(dγ + B)(x, y) = xᵀ (A + β) y` on configuration tangents.
pub fn dgamma_plus_b_pairing(
    gamma: &OneFormSection,
    beta: &MagneticField,
    q: &[f64],
    x: &[f64],
    y: &[f64],
    eng: &DerivativeEngine,
) -> Result<f64> {
    let m = exterior_derivative_matrix(gamma, q, eng)? + beta.matrix(q)?;
    let x = DVector::from_column_slice(x);
    let y = DVector::from_column_slice(y);
    Ok(x.dot(&(m * y)))
}

/// Residuals of the two pullback identities for `λ = γ ∘ π`:
///
/// ```text
/// (i)  λ*ω^B(v, w)   = -(dγ + B)(Tπ v, Tπ w)
/// (ii) ω^B(Tλ v, w)  = ω^B(v, w - Tλ w) - (dγ + B)(Tπ v, Tπ w)
/// ```
pub fn lambda_pullback_residuals(
    gamma: &OneFormSection,
    beta: &MagneticField,
    z: &[f64],
    v: &[f64],
    w: &[f64],
    eng: &DerivativeEngine,
) -> Result<(f64, f64)> {
    let n = gamma.n();
    if beta.n() != n {
        return Err(Error::dim("one-form vs magnetic field", beta.n(), n));
    }
    let lambda = gamma.lambda();
    let j = eng.jacobian(&lambda, z)?;
    let image = lambda.eval(z);
    let form = dgamma_plus_b_pairing(gamma, beta, &z[..n], &v[..n], &w[..n], eng)?;

    let lhs_i = pullback_two_form(&lambda, beta, z, v, w, eng)?;
    let r_i = (lhs_i + form).abs();

    // ω^B is evaluated at λ(z) throughout; on the fibre over q only q matters.
    let tv = &j * DVector::from_column_slice(v);
    let tw = &j * DVector::from_column_slice(w);
    let w_minus = DVector::from_column_slice(w) - &tw;
    let lhs_ii = omega_b(beta, &image, tv.as_slice(), w)?;
    let rhs_ii = omega_b(beta, &image, v, w_minus.as_slice())? - form;
    Ok((r_i, (lhs_ii - rhs_ii).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::LinearMap;
    use approx::assert_abs_diff_eq;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
        [a, b].concat()
    }

    fn rot() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    #[test]
    fn omega_examples() {
        let z = vec![0.3, -0.2, 1.0, 0.5];
        let zero = MagneticField::zero(2);
        let v = cat(&e(2, 0), &[0.0, 0.0]);
        let w = cat(&[0.0, 0.0], &e(2, 0));
        assert_eq!(omega_b(&zero, &z, &v, &w).unwrap(), 1.0);

        let b = MagneticField::constant(&rot()).unwrap();
        assert_eq!(omega_b(&b, &z, &v, &v).unwrap(), 0.0);
        let w2 = cat(&e(2, 1), &[0.0, 0.0]);
        assert_eq!(omega_b(&b, &z, &v, &w2).unwrap(), 1.0);
    }

    #[test]
    fn exterior_derivative_examples() {
        let eng = DerivativeEngine::dual();
        let g = OneFormSection::new(VectorMap::new(LinearMap::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]))).unwrap();
        assert_eq!(exterior_derivative_matrix(&g, &[0.4, 0.9], &eng).unwrap(), rot());

        let c = vec![1.0, 2.0, -3.0, 0.5];
        let g = OneFormSection::new(VectorMap::new(LinearMap::new(2, 2, c.clone()))).unwrap();
        let cm = DMatrix::from_row_slice(2, 2, &c);
        assert_eq!(exterior_derivative_matrix(&g, &[0.0, 0.0], &eng).unwrap(), cm.transpose() - cm);

        // gradient of W = q1² q2 + sin q2
        let grad = VectorMap::from_fn(2, 2, |q| vec![2.0 * q[0] * q[1], q[0] * q[0] + q[1].cos()]);
        let g = OneFormSection::new(grad).unwrap();
        let a = exterior_derivative_matrix(&g, &[0.7, -1.1], &eng).unwrap();
        assert!(crate::diffcore::max_abs(&a) < 1e-8);
    }

    #[test]
    fn closedness_examples() {
        let eng = DerivativeEngine::dual();
        let b = MagneticField::constant(&rot()).unwrap();
        assert_eq!(b.closedness_residual(&[1.0, 2.0], &eng).unwrap(), 0.0);

        let b2 = MagneticField::new(2, VectorMap::from_fn(2, 4, |q| {
            let s = (q[0] * q[1]).sin();
            vec![0.0, s, -s, 0.0]
        }))
        .unwrap();
        assert_abs_diff_eq!(b2.closedness_residual(&[0.3, 0.8], &eng).unwrap(), 0.0, epsilon = 1e-12);

        // β12 = q3, everything else zero
        let b3 = MagneticField::new(3, VectorMap::new(LinearMap::new(9, 3, {
            let mut c = vec![0.0; 27];
            c[3 + 2] = 1.0;
            c
        })))
        .unwrap();
        assert_abs_diff_eq!(b3.closedness_residual(&[0.1, 0.2, 0.3], &eng).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pullback_examples() {
        let eng = DerivativeEngine::dual();
        let b = MagneticField::constant(&rot()).unwrap();
        let z = vec![0.1, 0.2, 0.3, 0.4];
        let v = vec![1.0, 0.5, -0.2, 0.3];
        let w = vec![0.0, -1.0, 0.7, 0.1];
        let id = VectorMap::new(LinearMap::identity(4));
        assert_abs_diff_eq!(
            pullback_two_form(&id, &b, &z, &v, &w, &eng).unwrap(),
            omega_b(&b, &z, &v, &w).unwrap(),
            epsilon = 1e-15
        );
        let shift = VectorMap::from_fn(4, 4, |x| x.iter().map(|a| a + 2.0).collect());
        assert_abs_diff_eq!(
            pullback_two_form(&shift, &b, &z, &v, &w, &eng).unwrap(),
            omega_b(&b, &z, &v, &w).unwrap(),
            epsilon = 1e-9
        );

        let g = OneFormSection::new(VectorMap::new(LinearMap::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]))).unwrap();
        let zero = MagneticField::zero(2);
        let v = cat(&e(2, 0), &[0.0, 0.0]);
        let w = cat(&e(2, 1), &[0.0, 0.0]);
        assert_eq!(pullback_two_form(&g.lambda(), &zero, &z, &v, &w, &eng).unwrap(), 1.0);
    }

    #[test]
    fn lambda_identities_nonclosed() {
        let eng = DerivativeEngine::dual();
        let g = OneFormSection::new(VectorMap::from_fn(2, 2, |q| vec![q[1] * q[1], q[0].sin()])).unwrap();
        let b = MagneticField::constant(&(rot() * 0.7)).unwrap();
        let (r1, r2) = lambda_pullback_residuals(
            &g,
            &b,
            &[0.4, -0.3, 1.0, 2.0],
            &[0.2, 1.0, -0.5, 0.3],
            &[1.0, -0.4, 0.8, 0.0],
            &eng,
        )
        .unwrap();
        assert!(r1 < 1e-8 && r2 < 1e-8, "{r1} {r2}");
    }
}
