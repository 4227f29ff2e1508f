//! Scalar tower used by every evaluator: plain `f64` plus nested forward-mode
//! dual numbers up to fourth order.
//!
//! Functions in this crate are evaluated generically over [`Real`], so the
//! same code path yields values, exact first derivatives (one level of
//! [`Dual`]) or exact derivatives of derivatives (nested duals). Dispatch
//! through trait objects goes via [`Real::call`], which picks the matching
//! `eval_*` entry of [`Func`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::diffcore::{DerivMode, DerivativeEngine};
use crate::func::Func;

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;
pub type D4 = Dual<D3>;

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::cst(0.0) }
    }

    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::cst(1.0) }
    }

    fn chain(self, value: T, slope: T) -> Self {
        Dual { re: value, eps: slope * self.eps }
    }

    fn tan_impl(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::one() + t * t)
    }

    fn ln_impl(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }

    fn sqrt_impl(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }

    fn powi_impl(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(T::one());
        }
        let lower = self.re.powi(n - 1);
        self.chain(lower * self.re, T::cst(n as f64) * lower)
    }
}

/// Numeric scalar accepted by all generic evaluators.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Primal `f64` value, stripping every derivative part.
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn powr(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    /// Evaluates a type-erased function at this tower level.
    fn call(f: &dyn Func, x: &[Self]) -> Vec<Self>;

    /// Jacobian (rows = outputs) of `f` at `x`, carried out one level up the
    /// tower in dual mode, or by central differences at this level.
    fn jacobian(f: &dyn Func, x: &[Self], engine: &DerivativeEngine) -> Vec<Vec<Self>>;

    /// Evaluates an `f64`-only closure, propagating derivative parts by
    /// directional central differences.
    fn opaque(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[Self]) -> Vec<Self>;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powr(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    fn call(f: &dyn Func, x: &[Self]) -> Vec<Self> {
        f.eval_f64(x)
    }
    fn jacobian(f: &dyn Func, x: &[Self], engine: &DerivativeEngine) -> Vec<Vec<Self>> {
        match engine.mode {
            DerivMode::ForwardDual => dual_jacobian::<f64>(f, x),
            DerivMode::CentralDifference => central_jacobian(f, x, engine.eps),
        }
    }
    fn opaque(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[Self]) -> Vec<Self> {
        f(x)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let value = self.re * inv;
        Dual { re: value, eps: (self.eps - value * o.eps) * inv }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl<T: Real> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

fn dual_jacobian<T: Real>(f: &dyn Func, x: &[T]) -> Vec<Vec<T>>
where
    Dual<T>: Real,
{
    let m = f.out_dim();
    let mut jac = vec![vec![T::zero(); x.len()]; m];
    let mut seeded: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
    for j in 0..x.len() {
        seeded[j].eps = T::one();
        let out = <Dual<T> as Real>::call(f, &seeded);
        for (i, row) in jac.iter_mut().enumerate() {
            row[j] = out[i].eps;
        }
        seeded[j].eps = T::zero();
    }
    jac
}

fn central_jacobian<T: Real>(f: &dyn Func, x: &[T], eps: f64) -> Vec<Vec<T>> {
    let m = f.out_dim();
    let mut jac = vec![vec![T::zero(); x.len()]; m];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = eps * (1.0 + x[j].re().abs());
        probe[j] = x[j] + T::cst(h);
        let plus = T::call(f, &probe);
        probe[j] = x[j] - T::cst(h);
        let minus = T::call(f, &probe);
        probe[j] = x[j];
        let inv = T::cst(1.0 / (2.0 * h));
        for (i, row) in jac.iter_mut().enumerate() {
            row[j] = (plus[i] - minus[i]) * inv;
        }
    }
    jac
}

fn opaque_dual<T: Real>(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[Dual<T>]) -> Vec<Dual<T>> {
    let base: Vec<T> = x.iter().map(|d| d.re).collect();
    let dir: Vec<T> = x.iter().map(|d| d.eps).collect();
    let value = T::opaque(f, &base);
    let dir_norm = dir.iter().fold(0.0_f64, |a, d| a.max(d.re().abs()));
    if dir_norm == 0.0 {
        return value.into_iter().map(Dual::constant).collect();
    }
    let scale = base.iter().fold(0.0_f64, |a, b| a.max(b.re().abs()));
    let h = 1e-6 * (1.0 + scale) / dir_norm;
    let shifted = |s: f64| -> Vec<T> {
        base.iter().zip(&dir).map(|(&b, &d)| b + T::cst(s) * d).collect()
    };
    let plus = T::opaque(f, &shifted(h));
    let minus = T::opaque(f, &shifted(-h));
    let inv = T::cst(1.0 / (2.0 * h));
    value
        .into_iter()
        .zip(plus.into_iter().zip(minus))
        .map(|(v, (a, b))| Dual::new(v, (a - b) * inv))
        .collect()
}

macro_rules! impl_dual_level {
    ($ty:ty, $eval:ident, $jac:expr) => {
        impl Real for $ty {
            fn cst(v: f64) -> Self {
                Dual::constant(Real::cst(v))
            }
            fn re(self) -> f64 {
                self.re.re()
            }
            fn sin(self) -> Self {
                self.chain(self.re.sin(), self.re.cos())
            }
            fn cos(self) -> Self {
                self.chain(self.re.cos(), -self.re.sin())
            }
            fn tan(self) -> Self {
                self.tan_impl()
            }
            fn exp(self) -> Self {
                let e = self.re.exp();
                self.chain(e, e)
            }
            fn ln(self) -> Self {
                self.ln_impl()
            }
            fn sqrt(self) -> Self {
                self.sqrt_impl()
            }
            fn powi(self, n: i32) -> Self {
                self.powi_impl(n)
            }
            fn call(f: &dyn Func, x: &[Self]) -> Vec<Self> {
                f.$eval(x)
            }
            fn jacobian(f: &dyn Func, x: &[Self], engine: &DerivativeEngine) -> Vec<Vec<Self>> {
                $jac(f, x, engine)
            }
            fn opaque(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[Self]) -> Vec<Self> {
                opaque_dual(f, x)
            }
        }
    };
}

fn jac_by_mode<T: Real>(f: &dyn Func, x: &[T], engine: &DerivativeEngine) -> Vec<Vec<T>>
where
    Dual<T>: Real,
{
    match engine.mode {
        DerivMode::ForwardDual => dual_jacobian::<T>(f, x),
        DerivMode::CentralDifference => central_jacobian(f, x, engine.eps),
    }
}

// The top level has no dual above it and always differences.
fn jac_top<T: Real>(f: &dyn Func, x: &[T], engine: &DerivativeEngine) -> Vec<Vec<T>> {
    central_jacobian(f, x, engine.eps)
}

impl_dual_level!(D1, eval_d1, jac_by_mode::<D1>);
impl_dual_level!(D2, eval_d2, jac_by_mode::<D2>);
impl_dual_level!(D3, eval_d3, jac_by_mode::<D3>);
impl_dual_level!(D4, eval_d4, jac_top::<D4>);
