//! Cylinder functionals on measures with closed-form first and second linear
//! functional derivatives, bounded scalar fields, controlled coefficients and
//! the generators `L` and `ℒ`.
//!
//! A cylinder functional is `F(μ) = G(⟨φ₁,μ⟩, …, ⟨φₘ,μ⟩)` with smooth bounded
//! inner fields φᵢ and an outer function `G` whose gradient and Hessian are
//! available in closed form. Its linear derivatives are
//!
//! ```text
//! δF/δμ(μ,x)    = Σᵢ ∂ᵢG(v) φᵢ(x),              v = (⟨φᵢ,μ⟩)ᵢ,
//! δ²F/δμ²(μ,x,y) = Σᵢⱼ ∂ᵢ∂ⱼG(v) φᵢ(x) φⱼ(y),
//! ```
//!
//! and the controlled generators act on the spatial slot:
//!
//! ```text
//! Lφ(x,λ,a)  = b(x,λ,a) φ′(x) + ½ σ²(x,λ,a) φ″(x),
//! ℒF_φ(x,λ,a) = F′(⟨φ,λ⟩) Lφ(x,λ,a) + ½ F″(⟨φ,λ⟩) γ(x,λ,a) φ²(x).
//! ```

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::expr::Expr;
use crate::measure::{FiniteMeasure, Window1d};
use crate::quad::gauss_legendre_unit;

/// Outer functions support at most this many inner fields (plus time).
pub const MAX_INNER_FIELDS: usize = 7;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("functional `{0}` has no second-derivative data")]
    MissingHessian(String),
    #[error("functional `{0}` is time-dependent; a time must be provided")]
    TimeRequired(String),
    #[error("quadrature order {0} is below the minimum of 2")]
    QuadratureOrder(usize),
    #[error("dimension mismatch: field dimension {field}, measure dimension {measure}")]
    DimensionMismatch { field: usize, measure: usize },
    #[error("outer function uses {got} fields, functional supplies {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("too many inner fields: {0} (limit {MAX_INNER_FIELDS})")]
    TooManyFields(usize),
    #[error("declared bound violated: {what} = {value} exceeds {bound} at x = {at:?}")]
    BoundViolation { what: String, value: f64, bound: f64, at: Vec<f64> },
    #[error("derivative of `{name}` inconsistent with finite differences at x = {at:?}: {got} vs {expected}")]
    DerivativeMismatch { name: String, at: Vec<f64>, got: f64, expected: f64 },
}

// ---------------------------------------------------------------------------
// Scalar fields
// ---------------------------------------------------------------------------

/// Declared sup-norm bounds for a field and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBounds {
    pub value: f64,
    pub deriv: f64,
    pub deriv2: f64,
}

type FieldValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type FieldDerivFn = Box<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

enum FieldKind {
    /// The constant function 1.
    One,
    /// A 1D Gaussian-windowed monomial.
    Window(Window1d),
    /// Arbitrary closures (value, ∂ⱼ, ∂²ⱼⱼ).
    Custom { value: FieldValueFn, deriv: FieldDerivFn, deriv2: FieldDerivFn },
}

/// A twice-differentiable scalar field ℝᵈ → ℝ with declared bounds.
pub struct ScalarField {
    name: String,
    dim: usize,
    kind: FieldKind,
    bounds: FieldBounds,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ScalarField {
    /// The constant field 1 on ℝᵈ.
    pub fn one(name: &str, dim: usize) -> Arc<Self> {
        Arc::new(Self {
            name: name.to_string(),
            dim,
            kind: FieldKind::One,
            bounds: FieldBounds { value: 1.0, deriv: 0.0, deriv2: 0.0 },
        })
    }

    /// 1D Gaussian-windowed monomial, sup-normalized to 1. The value bound is
    /// exact by construction; derivative bounds come from a dense grid and
    /// carry a small margin for between-node maxima.
    pub fn gaussian_window(name: &str, degree: u32, center: f64, scale: f64) -> Arc<Self> {
        let window = Window1d::bump(degree, center, scale);
        let (_, d1, d2) = window.sup_norms();
        Arc::new(Self {
            name: name.to_string(),
            dim: 1,
            kind: FieldKind::Window(window),
            bounds: FieldBounds { value: 1.0, deriv: d1 * 1.001, deriv2: d2 * 1.001 },
        })
    }

    /// Field from closures with declared bounds.
    pub fn custom(
        name: &str,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
        deriv2: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
        bounds: FieldBounds,
    ) -> Arc<Self> {
        Arc::new(Self {
            name: name.to_string(),
            dim,
            kind: FieldKind::Custom {
                value: Box::new(value),
                deriv: Box::new(deriv),
                deriv2: Box::new(deriv2),
            },
            bounds,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> FieldBounds {
        self.bounds
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::One => 1.0,
            FieldKind::Window(w) => w.value(x[0]),
            FieldKind::Custom { value, .. } => value(x),
        }
    }

    pub fn deriv(&self, x: &[f64], j: usize) -> f64 {
        match &self.kind {
            FieldKind::One => 0.0,
            FieldKind::Window(w) => w.eval012(x[0]).1,
            FieldKind::Custom { deriv, .. } => deriv(x, j),
        }
    }

    pub fn deriv2(&self, x: &[f64], j: usize) -> f64 {
        match &self.kind {
            FieldKind::One => 0.0,
            FieldKind::Window(w) => w.eval012(x[0]).2,
            FieldKind::Custom { deriv2, .. } => deriv2(x, j),
        }
    }

    /// (value, ∂, ∂²) at a 1D point in one evaluation.
    pub fn eval012_1d(&self, x: f64) -> (f64, f64, f64) {
        match &self.kind {
            FieldKind::One => (1.0, 0.0, 0.0),
            FieldKind::Window(w) => w.eval012(x),
            FieldKind::Custom { value, deriv, deriv2 } => {
                let xs = [x];
                (value(&xs), deriv(&xs, 0), deriv2(&xs, 0))
            }
        }
    }

    /// Central finite-difference consistency check of the declared
    /// derivatives at random points (step 1e−4, relative tolerance 1e−5 with
    /// an absolute floor proportional to the field's scale).
    pub fn check_derivative_consistency(
        &self,
        rng: &mut impl Rng,
        points: usize,
        radius: f64,
    ) -> Result<(), FunctionalError> {
        let eps = 1e-4;
        let scale = self.bounds.value.max(self.bounds.deriv).max(self.bounds.deriv2).max(1.0);
        for _ in 0..points {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            for j in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let fd1 = (self.value(&xp) - self.value(&xm)) / (2.0 * eps);
                let d1 = self.deriv(&x, j);
                if (d1 - fd1).abs() > 1e-5 * scale + 1e-5 * d1.abs() {
                    return Err(FunctionalError::DerivativeMismatch {
                        name: self.name.clone(),
                        at: x,
                        got: d1,
                        expected: fd1,
                    });
                }
                let fd2 = (self.value(&xp) - 2.0 * self.value(&x) + self.value(&xm)) / (eps * eps);
                let d2 = self.deriv2(&x, j);
                if (d2 - fd2).abs() > 1e-3 * scale + 1e-3 * d2.abs() {
                    return Err(FunctionalError::DerivativeMismatch {
                        name: self.name.clone(),
                        at: x,
                        got: d2,
                        expected: fd2,
                    });
                }
            }
        }
        Ok(())
    }

    /// Spot-checks the declared sup-norm bounds at random points.
    pub fn check_bounds(
        &self,
        rng: &mut impl Rng,
        points: usize,
        radius: f64,
    ) -> Result<(), FunctionalError> {
        let tol = 1e-9;
        for _ in 0..points {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let v = self.value(&x).abs();
            if v > self.bounds.value + tol {
                return Err(FunctionalError::BoundViolation {
                    what: format!("|{}|", self.name),
                    value: v,
                    bound: self.bounds.value,
                    at: x,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outer functions
// ---------------------------------------------------------------------------

type OuterValueFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type OuterGradFn = Box<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;
type OuterHessFn = Box<dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync>;

enum OuterKind {
    Expr { value: Expr, grad: Vec<Expr>, hess: Vec<Expr>, dt: Expr },
    Custom { value: OuterValueFn, grad: OuterGradFn, hess: Option<OuterHessFn>, dt: Option<OuterValueFn> },
}

/// The outer function `G_t : ℝᵐ → ℝ` of a cylinder functional, with gradient,
/// Hessian and optional explicit time derivative.
pub struct OuterFn {
    arity: usize,
    time_dependent: bool,
    kind: OuterKind,
}

impl OuterFn {
    /// Builds from an expression over variables `v1..vm` and optionally `t`.
    /// Gradient, Hessian and ∂/∂t are derived symbolically.
    pub fn from_expr(src: &str, arity: usize) -> Result<Self, crate::expr::ExprError> {
        assert!(arity <= MAX_INNER_FIELDS, "at most {} inner fields", MAX_INNER_FIELDS);
        let mut names: Vec<String> = (1..=arity).map(|i| format!("v{}", i)).collect();
        names.push("t".to_string());
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let value = Expr::parse(src, &name_refs)?;
        let time_dependent = value.uses_var(arity);
        let grad: Vec<Expr> = (0..arity).map(|i| value.diff(i)).collect();
        let mut hess = Vec::with_capacity(arity * arity);
        for i in 0..arity {
            for j in 0..arity {
                // differentiate the lower-index gradient to keep H symmetric
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                hess.push(grad[lo].diff(hi));
            }
        }
        let dt = value.diff(arity);
        Ok(Self { arity, time_dependent, kind: OuterKind::Expr { value, grad, hess, dt } })
    }

    /// Builds from closures; the Hessian and time derivative may be absent,
    /// in which case operations that need them report a capability error.
    pub fn from_closures(
        arity: usize,
        value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static,
        hess: Option<OuterHessFn>,
        dt: Option<OuterValueFn>,
    ) -> Self {
        let time_dependent = dt.is_some();
        Self {
            arity,
            time_dependent,
            kind: OuterKind::Custom { value: Box::new(value), grad: Box::new(grad), hess, dt },
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn has_hessian(&self) -> bool {
        match &self.kind {
            OuterKind::Expr { .. } => true,
            OuterKind::Custom { hess, .. } => hess.is_some(),
        }
    }

    fn with_buffer<R>(&self, t: f64, v: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let mut buf = [0.0f64; MAX_INNER_FIELDS + 1];
        buf[..v.len()].copy_from_slice(v);
        buf[self.arity] = t;
        f(&buf[..=self.arity])
    }

    pub fn value(&self, t: f64, v: &[f64]) -> f64 {
        match &self.kind {
            OuterKind::Expr { value, .. } => self.with_buffer(t, v, |vals| value.eval(vals)),
            OuterKind::Custom { value, .. } => value(t, v),
        }
    }

    pub fn grad(&self, t: f64, v: &[f64], i: usize) -> f64 {
        match &self.kind {
            OuterKind::Expr { grad, .. } => self.with_buffer(t, v, |vals| grad[i].eval(vals)),
            OuterKind::Custom { grad, .. } => grad(t, v, i),
        }
    }

    pub fn hess(&self, t: f64, v: &[f64], i: usize, j: usize) -> Option<f64> {
        match &self.kind {
            OuterKind::Expr { hess, .. } => {
                Some(self.with_buffer(t, v, |vals| hess[i * self.arity + j].eval(vals)))
            }
            OuterKind::Custom { hess, .. } => hess.as_ref().map(|h| h(t, v, i, j)),
        }
    }

    pub fn dt(&self, t: f64, v: &[f64]) -> Option<f64> {
        match &self.kind {
            OuterKind::Expr { dt, .. } => Some(self.with_buffer(t, v, |vals| dt.eval(vals))),
            OuterKind::Custom { dt, .. } => dt.as_ref().map(|d| d(t, v)),
        }
    }
}

// ---------------------------------------------------------------------------
// Cylinder functionals
// ---------------------------------------------------------------------------

/// `F(μ) = G_t(⟨φ₁,μ⟩,…,⟨φₘ,μ⟩)` with static inner fields and an outer
/// function carrying any explicit time dependence.
pub struct CylinderFunctional {
    name: String,
    inner: Vec<Arc<ScalarField>>,
    outer: OuterFn,
}

impl CylinderFunctional {
    pub fn new(
        name: &str,
        inner: Vec<Arc<ScalarField>>,
        outer: OuterFn,
    ) -> Result<Self, FunctionalError> {
        if inner.len() > MAX_INNER_FIELDS {
            return Err(FunctionalError::TooManyFields(inner.len()));
        }
        if outer.arity() != inner.len() {
            return Err(FunctionalError::ArityMismatch { expected: inner.len(), got: outer.arity() });
        }
        Ok(Self { name: name.to_string(), inner, outer })
    }

    /// `F(μ) = ⟨φ, μ⟩`.
    pub fn linear(name: &str, phi: Arc<ScalarField>) -> Self {
        let outer = OuterFn::from_expr("v1", 1).expect("fixed expression");
        Self::new(name, vec![phi], outer).expect("arity 1")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inner_fields(&self) -> &[Arc<ScalarField>] {
        &self.inner
    }

    pub fn outer(&self) -> &OuterFn {
        &self.outer
    }

    pub fn is_time_dependent(&self) -> bool {
        self.outer.is_time_dependent()
    }

    pub fn inner_values(&self, mu: &FiniteMeasure) -> Vec<f64> {
        self.inner.iter().map(|phi| mu.integrate(|x| phi.value(x))).collect()
    }

    pub fn eval(&self, t: f64, mu: &FiniteMeasure) -> f64 {
        let v = self.inner_values(mu);
        self.outer.value(t, &v)
    }

    /// Evaluates the outer layer on already-known inner integrals. Used by
    /// trace-based checks where ⟨φᵢ,μ⟩ were recorded during simulation.
    pub fn eval_at(&self, t: f64, v: &[f64]) -> f64 {
        self.outer.value(t, v)
    }

    /// δF/δμ(μ,x) = Σᵢ ∂ᵢG φᵢ(x).
    pub fn lin_derivative(&self, t: f64, mu: &FiniteMeasure, x: &[f64]) -> f64 {
        let v = self.inner_values(mu);
        let mut acc = 0.0;
        for (i, phi) in self.inner.iter().enumerate() {
            acc += self.outer.grad(t, &v, i) * phi.value(x);
        }
        acc
    }

    /// δ²F/δμ²(μ,x,y), evaluated in a manifestly symmetric form: off-diagonal
    /// Hessian entries multiply φᵢ(x)φⱼ(y) + φᵢ(y)φⱼ(x), so swapping x and y
    /// reorders commutative operations only and the symmetry is bit-exact.
    pub fn second_derivative(
        &self,
        t: f64,
        mu: &FiniteMeasure,
        x: &[f64],
        y: &[f64],
    ) -> Result<f64, FunctionalError> {
        let v = self.inner_values(mu);
        let m = self.inner.len();
        let mut acc = 0.0;
        for i in 0..m {
            let hii = self
                .outer
                .hess(t, &v, i, i)
                .ok_or_else(|| FunctionalError::MissingHessian(self.name.clone()))?;
            acc += hii * (self.inner[i].value(x) * self.inner[i].value(y));
            for j in (i + 1)..m {
                let hij = self
                    .outer
                    .hess(t, &v, i, j)
                    .ok_or_else(|| FunctionalError::MissingHessian(self.name.clone()))?;
                let cross = self.inner[i].value(x) * self.inner[j].value(y)
                    + self.inner[i].value(y) * self.inner[j].value(x);
                acc += hij * cross;
            }
        }
        Ok(acc)
    }

    /// ∂F/∂t(t,μ); zero for time-independent functionals.
    pub fn time_derivative(&self, t: f64, mu: &FiniteMeasure) -> Result<f64, FunctionalError> {
        if !self.outer.is_time_dependent() {
            return Ok(0.0);
        }
        let v = self.inner_values(mu);
        self.outer.dt(t, &v).ok_or_else(|| FunctionalError::TimeRequired(self.name.clone()))
    }

    /// Precomputes the outer layers at (t, μ) for repeated per-atom work.
    pub fn freeze(
        &self,
        t: f64,
        mu: &FiniteMeasure,
    ) -> Result<FrozenCylinder<'_>, FunctionalError> {
        let v = self.inner_values(mu);
        let m = self.inner.len();
        let grad: Vec<f64> = (0..m).map(|i| self.outer.grad(t, &v, i)).collect();
        let hess = if self.outer.has_hessian() {
            let mut h = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    h.push(self.outer.hess(t, &v, i, j).expect("hessian present"));
                }
            }
            Some(h)
        } else {
            None
        };
        Ok(FrozenCylinder { functional: self, inner_values: v, grad, hess })
    }
}

impl std::fmt::Debug for CylinderFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylinderFunctional")
            .field("name", &self.name)
            .field("fields", &self.inner.len())
            .finish()
    }
}

/// A cylinder functional with outer gradient/Hessian frozen at one (t, μ).
pub struct FrozenCylinder<'a> {
    functional: &'a CylinderFunctional,
    pub inner_values: Vec<f64>,
    grad: Vec<f64>,
    hess: Option<Vec<f64>>,
}

impl FrozenCylinder<'_> {
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn hessian(&self) -> Result<&[f64], FunctionalError> {
        self.hess
            .as_deref()
            .ok_or_else(|| FunctionalError::MissingHessian(self.functional.name.clone()))
    }

    /// δF/δμ(μ,x).
    pub fn lin(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, phi) in self.functional.inner.iter().enumerate() {
            acc += self.grad[i] * phi.value(x);
        }
        acc
    }

    /// ∂ₓⱼ δF/δμ(μ,x).
    pub fn lin_dx(&self, x: &[f64], j: usize) -> f64 {
        let mut acc = 0.0;
        for (i, phi) in self.functional.inner.iter().enumerate() {
            acc += self.grad[i] * phi.deriv(x, j);
        }
        acc
    }

    /// ∂²ₓⱼ δF/δμ(μ,x).
    pub fn lin_dxx(&self, x: &[f64], j: usize) -> f64 {
        let mut acc = 0.0;
        for (i, phi) in self.functional.inner.iter().enumerate() {
            acc += self.grad[i] * phi.deriv2(x, j);
        }
        acc
    }

    /// δ²F/δμ²(μ,x,x).
    pub fn second_diag(&self, x: &[f64]) -> Result<f64, FunctionalError> {
        let h = self.hessian()?;
        let m = self.functional.inner.len();
        let values: Vec<f64> = self.functional.inner.iter().map(|phi| phi.value(x)).collect();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let hij = h[i * m + j];
                if hij != 0.0 {
                    acc += hij * values[i] * values[j];
                }
            }
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// Controlled dynamics
// ---------------------------------------------------------------------------

type CoefficientFn = Box<dyn Fn(&[f64], &FiniteMeasure, f64) -> f64 + Send + Sync>;

/// One coefficient of the controlled dynamics. `Expr` coefficients see the
/// particle's own coordinate as `x`, the action as `a` and the total mass of
/// the current measure as `m`.
pub enum Coefficient {
    Const(f64),
    Expr(Expr),
    Custom(CoefficientFn),
}

impl Coefficient {
    /// Parses over the variables (x, a, m).
    pub fn parse(src: &str) -> Result<Self, crate::expr::ExprError> {
        let expr = Expr::parse(src, &["x", "a", "m"])?;
        Ok(match expr.as_const() {
            Some(c) => Coefficient::Const(c),
            None => Coefficient::Expr(expr),
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], coord: usize, mu: &FiniteMeasure, mass: f64, a: f64) -> f64 {
        match self {
            Coefficient::Const(c) => *c,
            Coefficient::Expr(e) => e.eval(&[x[coord], a, mass]),
            Coefficient::Custom(f) => f(x, mu, a),
        }
    }
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Const(c) => write!(f, "Const({})", c),
            Coefficient::Expr(e) => write!(f, "Expr({})", e),
            Coefficient::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Declared sup-norm bounds and a uniform-in-action Lipschitz constant for
/// the coefficient triple (b, σ, γ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub drift: f64,
    pub volatility: f64,
    pub branching: f64,
    pub lipschitz: f64,
}

/// The coefficient triple (b, σ, γ) of a controlled super-diffusion: per
/// coordinate drift and diagonal volatility, and a scalar branching rate
/// γ ≥ 0.
#[derive(Debug)]
pub struct ControlledDynamics {
    dim: usize,
    drift: Vec<Coefficient>,
    volatility: Vec<Coefficient>,
    branching: Coefficient,
    bounds: CoefficientBounds,
}

impl ControlledDynamics {
    pub fn new(
        dim: usize,
        drift: Vec<Coefficient>,
        volatility: Vec<Coefficient>,
        branching: Coefficient,
        bounds: CoefficientBounds,
    ) -> Self {
        assert_eq!(drift.len(), dim);
        assert_eq!(volatility.len(), dim);
        Self { dim, drift, volatility, branching, bounds }
    }

    /// 1D dynamics with constant coefficients.
    pub fn constant_1d(b: f64, sigma: f64, gamma: f64) -> Arc<Self> {
        assert!(gamma >= 0.0, "branching rate must be nonnegative");
        Arc::new(Self::new(
            1,
            vec![Coefficient::Const(b)],
            vec![Coefficient::Const(sigma)],
            Coefficient::Const(gamma),
            CoefficientBounds {
                drift: b.abs(),
                volatility: sigma.abs(),
                branching: gamma,
                lipschitz: 0.0,
            },
        ))
    }

    /// 1D dynamics from closures (x, μ, a) → ℝ.
    pub fn from_closures_1d(
        b: impl Fn(f64, &FiniteMeasure, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64, &FiniteMeasure, f64) -> f64 + Send + Sync + 'static,
        gamma: impl Fn(f64, &FiniteMeasure, f64) -> f64 + Send + Sync + 'static,
        bounds: CoefficientBounds,
    ) -> Arc<Self> {
        Arc::new(Self::new(
            1,
            vec![Coefficient::Custom(Box::new(move |x, mu, a| b(x[0], mu, a)))],
            vec![Coefficient::Custom(Box::new(move |x, mu, a| sigma(x[0], mu, a)))],
            Coefficient::Custom(Box::new(move |x, mu, a| gamma(x[0], mu, a))),
            bounds,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }

    #[inline]
    pub fn drift(&self, j: usize, x: &[f64], mu: &FiniteMeasure, mass: f64, a: f64) -> f64 {
        self.drift[j].eval(x, j, mu, mass, a)
    }

    #[inline]
    pub fn volatility(&self, j: usize, x: &[f64], mu: &FiniteMeasure, mass: f64, a: f64) -> f64 {
        self.volatility[j].eval(x, j, mu, mass, a)
    }

    #[inline]
    pub fn branching(&self, x: &[f64], mu: &FiniteMeasure, mass: f64, a: f64) -> f64 {
        self.branching.eval(x, 0, mu, mass, a)
    }

    /// All coefficients (drift per coordinate, volatility per coordinate,
    /// branching).
    pub fn coefficients(&self) -> impl Iterator<Item = &Coefficient> {
        self.drift.iter().chain(self.volatility.iter()).chain(std::iter::once(&self.branching))
    }

    /// Spot-checks |b|, |σ| ≤ bounds and 0 ≤ γ ≤ bound at random points.
    pub fn spot_check(
        &self,
        rng: &mut impl Rng,
        points: usize,
        radius: f64,
        actions: &[f64],
        mu: &FiniteMeasure,
    ) -> Result<(), FunctionalError> {
        let tol = 1e-9;
        let mass = mu.total_mass();
        for _ in 0..points {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let a = actions[rng.gen_range(0..actions.len())];
            for j in 0..self.dim {
                let b = self.drift(j, &x, mu, mass, a).abs();
                if b > self.bounds.drift + tol {
                    return Err(FunctionalError::BoundViolation {
                        what: "|b|".into(),
                        value: b,
                        bound: self.bounds.drift,
                        at: x,
                    });
                }
                let s = self.volatility(j, &x, mu, mass, a).abs();
                if s > self.bounds.volatility + tol {
                    return Err(FunctionalError::BoundViolation {
                        what: "|sigma|".into(),
                        value: s,
                        bound: self.bounds.volatility,
                        at: x,
                    });
                }
            }
            let g = self.branching(&x, mu, mass, a);
            if g < -tol || g > self.bounds.branching + tol {
                return Err(FunctionalError::BoundViolation {
                    what: "gamma".into(),
                    value: g,
                    bound: self.bounds.branching,
                    at: x,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generators and drifts
// ---------------------------------------------------------------------------

/// Lφ(x,λ,a) = Σⱼ bⱼ ∂ⱼφ + ½ σⱼ² ∂²ⱼⱼφ.
pub fn generator_l(
    phi: &ScalarField,
    x: &[f64],
    mu: &FiniteMeasure,
    a: f64,
    dynamics: &ControlledDynamics,
) -> f64 {
    let mass = mu.total_mass();
    let mut acc = 0.0;
    for j in 0..dynamics.dim() {
        let b = dynamics.drift(j, x, mu, mass, a);
        let s = dynamics.volatility(j, x, mu, mass, a);
        acc += b * phi.deriv(x, j) + 0.5 * s * s * phi.deriv2(x, j);
    }
    acc
}

/// ℒF_φ(x,λ,a) = F′(⟨φ,λ⟩) Lφ(x,λ,a) + ½ F″(⟨φ,λ⟩) γ(x,λ,a) φ²(x).
/// The outer function must be unary.
pub fn generator_script_l(
    outer: &OuterFn,
    phi: &ScalarField,
    x: &[f64],
    lam: &FiniteMeasure,
    a: f64,
    dynamics: &ControlledDynamics,
) -> Result<f64, FunctionalError> {
    if outer.arity() != 1 {
        return Err(FunctionalError::ArityMismatch { expected: 1, got: outer.arity() });
    }
    let v = [lam.integrate(|y| phi.value(y))];
    let d1 = outer.grad(0.0, &v, 0);
    let d2 = outer
        .hess(0.0, &v, 0, 0)
        .ok_or_else(|| FunctionalError::MissingHessian("script-L outer".into()))?;
    let mass = lam.total_mass();
    let gamma = dynamics.branching(x, lam, mass, a);
    let phi_x = phi.value(x);
    Ok(d1 * generator_l(phi, x, lam, a, dynamics) + 0.5 * d2 * gamma * phi_x * phi_x)
}

/// Residual of the defining identity of the linear derivative,
///
/// ```text
/// | F(μ) − F(λ) − ∫₀¹ ⟨δF/δμ(λ + t(μ−λ), ·), μ−λ⟩ dt |,
/// ```
///
/// with the t-integral by Gauss–Legendre quadrature of the given order and
/// the spatial integral exact over atoms. The mixture λ + t(μ−λ) is realized
/// by concatenating both atom lists with masses scaled by (1−t) and t, so no
/// negative masses arise.
pub fn check_def3(
    functional: &CylinderFunctional,
    mu: &FiniteMeasure,
    lam: &FiniteMeasure,
    quad_points: usize,
) -> Result<f64, FunctionalError> {
    if quad_points < 2 {
        return Err(FunctionalError::QuadratureOrder(quad_points));
    }
    let t_ref = 0.0;
    let diff = functional.eval(t_ref, mu) - functional.eval(t_ref, lam);
    let mut integral = 0.0;
    for (node, weight) in gauss_legendre_unit(quad_points) {
        let mut atoms: Vec<(Vec<f64>, f64)> = Vec::with_capacity(mu.len() + lam.len());
        for (pos, mass) in lam.atoms() {
            atoms.push((pos.to_vec(), (1.0 - node) * mass));
        }
        for (pos, mass) in mu.atoms() {
            atoms.push((pos.to_vec(), node * mass));
        }
        let mix = FiniteMeasure::new(mu.dim(), &atoms).expect("scaled masses stay nonnegative");
        let frozen = functional.freeze(t_ref, &mix)?;
        let mut signed = 0.0;
        for (pos, mass) in mu.atoms() {
            signed += mass * frozen.lin(pos);
        }
        for (pos, mass) in lam.atoms() {
            signed -= mass * frozen.lin(pos);
        }
        integral += weight * signed;
    }
    Ok((diff - integral).abs())
}

/// The drift part of the Itô decomposition of `F(μ_t)`:
///
/// ```text
/// [∂F/∂t] + ∫ L(δF/δμ)(x,μ,α(x)) μ(dx) + ½ ∫ γ(x,μ,α(x)) δ²F/δμ²(μ,x,x) μ(dx),
/// ```
///
/// spatial integrals exact over atoms. For time-dependent functionals `t`
/// must be provided.
pub fn ito_drift(
    functional: &CylinderFunctional,
    mu: &FiniteMeasure,
    action: &dyn Fn(&[f64]) -> f64,
    dynamics: &ControlledDynamics,
    t: Option<f64>,
) -> Result<f64, FunctionalError> {
    if functional.is_time_dependent() && t.is_none() {
        return Err(FunctionalError::TimeRequired(functional.name.clone()));
    }
    let t = t.unwrap_or(0.0);
    let frozen = functional.freeze(t, mu)?;
    frozen.hessian()?;
    let dt_term = functional.time_derivative(t, mu)?;
    let mass = mu.total_mass();
    let mut acc = 0.0;
    for (x, m) in mu.atoms() {
        let a = action(x);
        let mut gen = 0.0;
        for j in 0..dynamics.dim() {
            let b = dynamics.drift(j, x, mu, mass, a);
            let s = dynamics.volatility(j, x, mu, mass, a);
            gen += b * frozen.lin_dx(x, j) + 0.5 * s * s * frozen.lin_dxx(x, j);
        }
        let gamma = dynamics.branching(x, mu, mass, a);
        acc += m * (gen + 0.5 * gamma * frozen.second_diag(x)?);
    }
    Ok(dt_term + acc)
}

/// A stochastic second-order differential operator
/// `L f(x,μ) = b₀(x,μ) f(x) + b₁(x,μ) f′(x) + b₂(x,μ) f″(x)` (1D).
pub struct OperatorSpec {
    coeffs: [CoefficientFn2; 3],
}

type CoefficientFn2 = Box<dyn Fn(&[f64], &FiniteMeasure) -> f64 + Send + Sync>;

impl OperatorSpec {
    pub fn new(
        b0: impl Fn(&[f64], &FiniteMeasure) -> f64 + Send + Sync + 'static,
        b1: impl Fn(&[f64], &FiniteMeasure) -> f64 + Send + Sync + 'static,
        b2: impl Fn(&[f64], &FiniteMeasure) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { coeffs: [Box::new(b0), Box::new(b1), Box::new(b2)] }
    }

    /// Multiplication by a constant (order-zero operator).
    pub fn multiply(c: f64) -> Self {
        Self::new(move |_, _| c, |_, _| 0.0, |_, _| 0.0)
    }

    /// The identity operator.
    pub fn identity() -> Self {
        Self::multiply(1.0)
    }

    /// Applies the operator to a (value, ∂, ∂²) triple at (x, μ).
    fn apply(&self, x: &[f64], mu: &FiniteMeasure, triple: (f64, f64, f64)) -> f64 {
        self.coeffs[0](x, mu) * triple.0
            + self.coeffs[1](x, mu) * triple.1
            + self.coeffs[2](x, mu) * triple.2
    }
}

/// The drift of the generalized Itô decomposition for a process driven by
/// operators (L₁, L₂):
///
/// ```text
/// ∫ L₁(δF/δμ)(x,μ) μ(dx) + ½ ∫ G(μ,x,x) μ(dx),
/// G(μ,x,y) = L₂(G₁(μ,x,·))(μ,y),  G₁(μ,x,y) = L₂(δ²F/δμ²(μ,·,y))(μ,x).
/// ```
///
/// For cylinder functionals `G(μ,x,y) = Σᵢⱼ Hᵢⱼ (L₂φᵢ)(x)(L₂φⱼ)(y)`, so the
/// diagonal reduces to a quadratic form in the operator-transformed fields.
pub fn corollary1_drift(
    functional: &CylinderFunctional,
    mu: &FiniteMeasure,
    l1: &OperatorSpec,
    l2: &OperatorSpec,
) -> Result<f64, FunctionalError> {
    let frozen = functional.freeze(0.0, mu)?;
    let hess = frozen.hessian()?.to_vec();
    let m = functional.inner.len();
    let mut acc = 0.0;
    let mut transformed = vec![0.0f64; m];
    for (x, mass) in mu.atoms() {
        let lin_triple = (frozen.lin(x), frozen.lin_dx(x, 0), frozen.lin_dxx(x, 0));
        let term1 = l1.apply(x, mu, lin_triple);
        for (i, phi) in functional.inner.iter().enumerate() {
            let triple = if mu.dim() == 1 {
                phi.eval012_1d(x[0])
            } else {
                (phi.value(x), phi.deriv(x, 0), phi.deriv2(x, 0))
            };
            transformed[i] = l2.apply(x, mu, triple);
        }
        let mut quad = 0.0;
        for i in 0..m {
            for j in 0..m {
                let hij = hess[i * m + j];
                if hij != 0.0 {
                    quad += hij * transformed[i] * transformed[j];
                }
            }
        }
        acc += mass * (term1 + 0.5 * quad);
    }
    Ok(acc)
}
