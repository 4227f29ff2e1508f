//! Type-erased differentiable maps.
//!
//! Anything that can be written once as `fn apply<R: Real>(&self, x: &[R]) -> Vec<R>`
//! implements [`GenericFunc`] and gets the object-safe [`Func`] for free.
//! [`ScalarField`] and [`VectorMap`] are the shared handles the rest of the
//! crate passes around.

use std::fmt;
use std::sync::Arc;

use crate::real::{Real, D1, D2, D3, D4};

/// Object-safe evaluation at each level of the scalar tower.
pub trait Func: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Vec<f64>;
    fn eval_d1(&self, x: &[D1]) -> Vec<D1>;
    fn eval_d2(&self, x: &[D2]) -> Vec<D2>;
    fn eval_d3(&self, x: &[D3]) -> Vec<D3>;
    fn eval_d4(&self, x: &[D4]) -> Vec<D4>;
}

/// A map written once for every scalar type.
pub trait GenericFunc: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R>;
}

impl<T: GenericFunc> Func for T {
    fn in_dim(&self) -> usize {
        GenericFunc::in_dim(self)
    }
    fn out_dim(&self) -> usize {
        GenericFunc::out_dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }
    fn eval_d1(&self, x: &[D1]) -> Vec<D1> {
        self.apply(x)
    }
    fn eval_d2(&self, x: &[D2]) -> Vec<D2> {
        self.apply(x)
    }
    fn eval_d3(&self, x: &[D3]) -> Vec<D3> {
        self.apply(x)
    }
    fn eval_d4(&self, x: &[D4]) -> Vec<D4> {
        self.apply(x)
    }
}

type OpaqueBody = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Wraps a plain `f64` closure. Derivatives through it are always
/// finite differences, whatever the engine mode.
pub struct OpaqueFn {
    in_dim: usize,
    out_dim: usize,
    body: Box<OpaqueBody>,
}

impl OpaqueFn {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        body: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        OpaqueFn { in_dim, out_dim, body: Box::new(body) }
    }
}

impl GenericFunc for OpaqueFn {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        R::opaque(&*self.body, x)
    }
}

/// Shared handle to a map `R^m -> R^k`.
#[derive(Clone)]
pub struct VectorMap(pub Arc<dyn Func>);

impl VectorMap {
    pub fn new(f: impl Func + 'static) -> Self {
        VectorMap(Arc::new(f))
    }

    pub fn from_fn(
        in_dim: usize,
        out_dim: usize,
        body: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        VectorMap::new(OpaqueFn::new(in_dim, out_dim, body))
    }

    pub fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.0.out_dim()
    }

    pub fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        R::call(&*self.0, x)
    }

    pub fn as_func(&self) -> &dyn Func {
        &*self.0
    }
}

impl fmt::Debug for VectorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorMap({} -> {})", self.in_dim(), self.out_dim())
    }
}

/// Shared handle to a map `R^m -> R`.
#[derive(Clone)]
pub struct ScalarField(pub Arc<dyn Func>);

impl ScalarField {
    pub fn new(f: impl Func + 'static) -> Self {
        let field = ScalarField(Arc::new(f));
        assert_eq!(field.0.out_dim(), 1, "scalar field must have one output");
        field
    }

    pub fn from_fn(arity: usize, body: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::new(OpaqueFn::new(arity, 1, move |x| vec![body(x)]))
    }

    pub fn arity(&self) -> usize {
        self.0.in_dim()
    }

    pub fn eval<R: Real>(&self, x: &[R]) -> R {
        R::call(&*self.0, x)[0]
    }

    pub fn as_func(&self) -> &dyn Func {
        &*self.0
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField(arity {})", self.arity())
    }
}

/// Constant map, handy for zero fields.
pub struct ConstMap {
    in_dim: usize,
    value: Vec<f64>,
}

impl ConstMap {
    pub fn new(in_dim: usize, value: Vec<f64>) -> Self {
        ConstMap { in_dim, value }
    }
}

impl GenericFunc for ConstMap {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.value.len()
    }
    fn apply<R: Real>(&self, _x: &[R]) -> Vec<R> {
        self.value.iter().map(|&v| R::cst(v)).collect()
    }
}

/// Linear map `x -> C x` (row-major `C`).
pub struct LinearMap {
    rows: usize,
    cols: usize,
    coeffs: Vec<f64>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), rows * cols);
        LinearMap { rows, cols, coeffs }
    }

    pub fn identity(n: usize) -> Self {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            c[i * n + i] = 1.0;
        }
        LinearMap::new(n, n, c)
    }
}

impl GenericFunc for LinearMap {
    fn in_dim(&self) -> usize {
        self.cols
    }
    fn out_dim(&self) -> usize {
        self.rows
    }
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        (0..self.rows)
            .map(|i| {
                let mut acc = R::zero();
                for j in 0..self.cols {
                    let c = self.coeffs[i * self.cols + j];
                    if c != 0.0 {
                        acc += R::cst(c) * x[j];
                    }
                }
                acc
            })
            .collect()
    }
}

/// `outer ∘ inner`.
pub struct Compose {
    pub outer: VectorMap,
    pub inner: VectorMap,
}

impl GenericFunc for Compose {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.outer.out_dim()
    }
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.outer.eval(&self.inner.eval(x))
    }
}
