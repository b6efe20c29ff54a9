//! Sparse polynomials in (u, x-block, y-block) and the constructive
//! symmetric-decomposition machinery: symmetrization, exact decomposition of
//! block-symmetric polynomials into sums of products of unary polynomials,
//! and least-squares polynomial approximation of symmetric kernels.
//!
//! Decomposition targets the form
//!
//! ```text
//! f(u,x,y) = Σ_j λ_j(u) g_j(x) g_j(y)
//! ```
//!
//! built from the product identity `xⁿ + yⁿ = (xⁿ+1)(yⁿ+1) − xⁿyⁿ − 1` (and
//! its multivariate analogue for mirrored monomial pairs). Coefficients are
//! exact rationals by default so reconstruction checks are equality checks;
//! floating point is used only by the approximation fit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("polynomial is not block-symmetric: coefficient of `{left}` differs from `{right}`")]
    NotSymmetric { left: String, right: String },
    #[error("expected block dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error in `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("underdetermined fit: {rows} grid rows for {cols} basis functions")]
    UnderdeterminedFit { rows: usize, cols: usize },
    #[error("bad fit domain: {0}")]
    BadDomain(String),
}

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Coefficient ring for sparse polynomials. Implemented for `BigRational`
/// (exact mode, the default for decomposition) and `f64` (fit mode).
pub trait PolyCoeff: Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn is_negative(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn abs(&self) -> Self;
    fn one_half() -> Self;
    fn parse(text: &str) -> Option<Self>;
    fn to_f64(&self) -> f64;
}

impl PolyCoeff for BigRational {
    fn zero() -> Self {
        num_traits::Zero::zero()
    }
    fn one() -> Self {
        num_traits::One::one()
    }
    fn is_zero(&self) -> bool {
        num_traits::Zero::is_zero(self)
    }
    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn one_half() -> Self {
        BigRational::new(1.into(), 2.into())
    }
    fn parse(text: &str) -> Option<Self> {
        BigRational::from_str(text).ok()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl PolyCoeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_negative(&self) -> bool {
        *self < 0.0 || (*self == 0.0 && self.is_sign_negative())
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn one_half() -> Self {
        0.5
    }
    fn parse(text: &str) -> Option<Self> {
        text.parse().ok()
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

// ---------------------------------------------------------------------------
// Monomials and polynomials
// ---------------------------------------------------------------------------

/// Exponent tuple for `u^a · Π x_i^{r_i} · Π y_i^{s_i}`. The derived ordering
/// (u, then x-block, then y-block, lexicographic) is the canonical term order
/// used for storage and printing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub u: u32,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
}

impl Monomial {
    pub fn unit(d: usize) -> Self {
        Self { u: 0, x: vec![0; d], y: vec![0; d] }
    }

    pub fn total_degree(&self) -> u32 {
        self.u + self.x.iter().sum::<u32>() + self.y.iter().sum::<u32>()
    }

    fn swapped(&self) -> Self {
        Self { u: self.u, x: self.y.clone(), y: self.x.clone() }
    }

    fn mul(&self, other: &Self) -> Self {
        Self {
            u: self.u + other.u,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + b).collect(),
        }
    }

    fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.u > 0 {
            parts.push(format!("u^{}", self.u));
        }
        for (i, &e) in self.x.iter().enumerate() {
            if e > 0 {
                parts.push(format!("x{}^{}", i + 1, e));
            }
        }
        for (i, &e) in self.y.iter().enumerate() {
            if e > 0 {
                parts.push(format!("y{}^{}", i + 1, e));
            }
        }
        parts.join(" ")
    }
}

/// Sparse polynomial in (u, x₁..x_d, y₁..y_d). No zero coefficients are
/// stored; terms sit in a `BTreeMap` under the canonical monomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly<C: PolyCoeff> {
    d: usize,
    terms: BTreeMap<Monomial, C>,
}

impl<C: PolyCoeff> MultiPoly<C> {
    pub fn zero(d: usize) -> Self {
        Self { d, terms: BTreeMap::new() }
    }

    pub fn constant(d: usize, c: C) -> Self {
        let mut p = Self::zero(d);
        p.insert_add(Monomial::unit(d), c);
        p
    }

    pub fn one(d: usize) -> Self {
        Self::constant(d, C::one())
    }

    /// Single monomial `c · u^a Π x^r Π y^s`.
    pub fn monomial(d: usize, mono: Monomial, c: C) -> Self {
        assert_eq!(mono.x.len(), d);
        assert_eq!(mono.y.len(), d);
        let mut p = Self::zero(d);
        p.insert_add(mono, c);
        p
    }

    /// `u^k`.
    pub fn u_power(d: usize, k: u32) -> Self {
        let mut mono = Monomial::unit(d);
        mono.u = k;
        Self::monomial(d, mono, C::one())
    }

    /// `x_{i+1}^k`.
    pub fn x_power(d: usize, i: usize, k: u32) -> Self {
        let mut mono = Monomial::unit(d);
        mono.x[i] = k;
        Self::monomial(d, mono, C::one())
    }

    pub fn block_dim(&self) -> usize {
        self.d
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in canonical order: descending (u, x-block, y-block) lex, so
    /// leading terms print first.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter().rev()
    }

    pub fn coefficient(&self, mono: &Monomial) -> C {
        self.terms.get(mono).cloned().unwrap_or_else(C::zero)
    }

    /// Max exponent of x₁ over all terms (the induction degree in 1D).
    pub fn degree_x1(&self) -> u32 {
        self.terms.keys().map(|m| m.x[0]).max().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::total_degree).max().unwrap_or(0)
    }

    pub fn insert_add(&mut self, mono: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(mono) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().add(&c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.insert_add(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.insert_add(m.clone(), c.neg());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::zero(self.d);
        for (m, c) in self.terms() {
            out.insert_add(m.clone(), c.neg());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.d);
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                out.insert_add(ma.mul(mb), ca.mul(cb));
            }
        }
        out
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Self::zero(self.d);
        for (m, coeff) in self.terms() {
            out.insert_add(m.clone(), coeff.mul(c));
        }
        out
    }

    /// Swaps the x-block and the y-block.
    pub fn swap_blocks(&self) -> Self {
        let mut out = Self::zero(self.d);
        for (m, c) in self.terms() {
            out.insert_add(m.swapped(), c.clone());
        }
        out
    }

    pub fn is_block_symmetric(&self) -> bool {
        self.first_asymmetric_pair().is_none()
    }

    /// First monomial (in canonical order) whose coefficient differs from its
    /// block-swapped mirror.
    pub fn first_asymmetric_pair(&self) -> Option<(Monomial, Monomial)> {
        for (m, c) in self.terms() {
            let mirror = m.swapped();
            if self.coefficient(&mirror) != *c {
                return Some((m.clone(), mirror));
            }
        }
        None
    }

    pub fn eval_f64(&self, u: f64, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (m, c) in self.terms() {
            let mut term = c.to_f64() * u.powi(m.u as i32);
            for (i, &e) in m.x.iter().enumerate() {
                if e > 0 {
                    term *= x[i].powi(e as i32);
                }
            }
            for (i, &e) in m.y.iter().enumerate() {
                if e > 0 {
                    term *= y[i].powi(e as i32);
                }
            }
            acc += term;
        }
        acc
    }

    /// Largest |coefficient difference| against another polynomial.
    pub fn max_coeff_distance(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for (m, c) in self.terms() {
            worst = worst.max(c.sub(&other.coefficient(m)).abs().to_f64());
        }
        for (m, c) in other.terms() {
            worst = worst.max(c.sub(&self.coefficient(m)).abs().to_f64());
        }
        worst
    }

    /// Plain-text monomial syntax, e.g. `3 u^2 x1^1 y1^1 + 1`. Terms appear
    /// in canonical order; output round-trips bit-exactly through
    /// [`MultiPoly::from_text`].
    pub fn to_text(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (mono, coeff)) in self.terms().enumerate() {
            let neg = coeff.is_negative();
            if i == 0 {
                if neg {
                    out.push_str("- ");
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            out.push_str(&coeff.abs().to_string());
            let body = mono.render();
            if !body.is_empty() {
                out.push(' ');
                out.push_str(&body);
            }
        }
        out
    }

    /// Parses the plain-text monomial syntax. A missing coefficient means 1;
    /// a bare variable means exponent 1.
    pub fn from_text(d: usize, text: &str) -> Result<Self, PolyError> {
        let err = |message: &str| PolyError::Parse { text: text.to_string(), message: message.into() };
        let mut poly = Self::zero(d);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(err("empty input"));
        }
        let mut i = 0;
        let mut sign_negative = false;
        if tokens[0] == "-" {
            sign_negative = true;
            i = 1;
        } else if tokens[0] == "+" {
            i = 1;
        }
        while i < tokens.len() {
            let mut coeff = C::one();
            let mut mono = Monomial::unit(d);
            let mut saw_anything = false;
            if let Some(c) = C::parse(tokens[i]) {
                coeff = c;
                i += 1;
                saw_anything = true;
            }
            while i < tokens.len() && tokens[i] != "+" && tokens[i] != "-" {
                let (name, exp) = match tokens[i].split_once('^') {
                    Some((n, e)) => {
                        let exp: u32 = e.parse().map_err(|_| err("bad exponent"))?;
                        (n, exp)
                    }
                    None => (tokens[i], 1),
                };
                let first = name.chars().next().ok_or_else(|| err("empty factor"))?;
                match first {
                    'u' if name == "u" => mono.u += exp,
                    'x' | 'y' => {
                        let idx: usize = name[1..]
                            .parse()
                            .map_err(|_| err("bad variable index"))?;
                        if idx == 0 || idx > d {
                            return Err(PolyError::DimensionMismatch { expected: d, got: idx });
                        }
                        if first == 'x' {
                            mono.x[idx - 1] += exp;
                        } else {
                            mono.y[idx - 1] += exp;
                        }
                    }
                    _ => return Err(err(&format!("unknown factor `{}`", tokens[i]))),
                }
                i += 1;
                saw_anything = true;
            }
            if !saw_anything {
                return Err(err("expected a term"));
            }
            poly.insert_add(mono, if sign_negative { coeff.neg() } else { coeff });
            if i < tokens.len() {
                sign_negative = tokens[i] == "-";
                i += 1;
                if i == tokens.len() {
                    return Err(err("dangling sign"));
                }
            }
        }
        Ok(poly)
    }
}

/// ½[g(u,x,y) + g(u,y,x)]: the block-symmetric part of `g`. Idempotent, and
/// the identity on already-symmetric polynomials.
pub fn symmetrize<C: PolyCoeff>(g: &MultiPoly<C>) -> MultiPoly<C> {
    g.add(&g.swap_blocks()).scale(&C::one_half())
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

/// One product term λ(u)·g(x)·g(y): `lambda` uses only the u variable,
/// `g` only the x-block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTerm<C: PolyCoeff> {
    pub lambda: MultiPoly<C>,
    pub g: MultiPoly<C>,
}

/// A sum Σ_j λ_j(u) g_j(x) g_j(y) reconstructing a block-symmetric
/// polynomial exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<C: PolyCoeff> {
    d: usize,
    pub terms: Vec<DecompositionTerm<C>>,
}

impl<C: PolyCoeff> Decomposition<C> {
    pub fn reconstruct(&self) -> MultiPoly<C> {
        let mut acc = MultiPoly::zero(self.d);
        for term in &self.terms {
            let gy = term.g.swap_blocks();
            acc = acc.add(&term.lambda.mul(&term.g).mul(&gy));
        }
        acc
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn ensure_symmetric<C: PolyCoeff>(f: &MultiPoly<C>) -> Result<(), PolyError> {
    if let Some((left, right)) = f.first_asymmetric_pair() {
        return Err(PolyError::NotSymmetric { left: left.render(), right: right.render() });
    }
    Ok(())
}

/// Decomposes a symmetric 1D polynomial `f(u,x,y)` by the degree induction:
/// peel the pure-power content through `P(x)+P(y) = (P+1)(P̄+1) − PP̄ − 1`
/// (for each u-monomial group), merge the constant terms into a single g ≡ 1
/// term, divide the remainder by `x·y` and recurse.
///
/// For u-independent input this emits at most three product terms per
/// induction level, hence at most `3(n+1)` terms for degree-n input.
pub fn decompose_1d<C: PolyCoeff>(f: &MultiPoly<C>) -> Result<Decomposition<C>, PolyError> {
    if f.block_dim() != 1 {
        return Err(PolyError::DimensionMismatch { expected: 1, got: f.block_dim() });
    }
    ensure_symmetric(f)?;
    let mut terms = Vec::new();
    decompose_1d_level(f, &mut terms);
    Ok(Decomposition { d: 1, terms })
}

fn decompose_1d_level<C: PolyCoeff>(f: &MultiPoly<C>, out: &mut Vec<DecompositionTerm<C>>) {
    if f.is_zero() {
        return;
    }
    let d = 1usize;
    // split: pure x-powers grouped by u-exponent, xy-free constants, mixed rest
    let mut pure_by_u: BTreeMap<u32, MultiPoly<C>> = BTreeMap::new();
    let mut const_u = MultiPoly::<C>::zero(d);
    let mut mixed = MultiPoly::<C>::zero(d);
    for (mono, coeff) in f.terms() {
        let (xe, ye) = (mono.x[0], mono.y[0]);
        if xe == 0 && ye == 0 {
            const_u.insert_add(mono.clone(), coeff.clone());
        } else if ye == 0 {
            let mut xm = Monomial::unit(d);
            xm.x[0] = xe;
            pure_by_u
                .entry(mono.u)
                .or_insert_with(|| MultiPoly::zero(d))
                .insert_add(xm, coeff.clone());
        } else if xe == 0 {
            // mirror of a pure x-power; reproduced by symmetry
        } else {
            mixed.insert_add(mono.clone(), coeff.clone());
        }
    }

    // λ's of all g ≡ 1 terms accumulate here and emit as one product term
    let mut one_lambda = const_u;
    for (u_exp, block) in pure_by_u {
        let single = if block.num_terms() == 1 {
            let (mono, coeff) = block.terms().next().unwrap();
            Some((mono.clone(), coeff.clone()))
        } else {
            None
        };
        let (lambda, g) = match single {
            // a·xᵏ: keep g monic as in the source identity, a rides in λ
            Some((mono, coeff)) => {
                let mut lam = MultiPoly::u_power(d, u_exp);
                lam = lam.scale(&coeff);
                let g = MultiPoly::x_power(d, 0, mono.x[0]);
                (lam, g)
            }
            None => (MultiPoly::u_power(d, u_exp), block),
        };
        out.push(DecompositionTerm { lambda: lambda.clone(), g: g.add(&MultiPoly::one(d)) });
        out.push(DecompositionTerm { lambda: lambda.neg(), g });
        one_lambda = one_lambda.sub(&lambda);
    }
    if !one_lambda.is_zero() {
        out.push(DecompositionTerm { lambda: one_lambda, g: MultiPoly::one(d) });
    }

    if mixed.is_zero() {
        return;
    }
    // every mixed term has x ≥ 1 and y ≥ 1: exact division by x·y
    let mut quotient = MultiPoly::<C>::zero(d);
    for (mono, coeff) in mixed.terms() {
        let mut m = mono.clone();
        m.x[0] -= 1;
        m.y[0] -= 1;
        quotient.insert_add(m, coeff.clone());
    }
    let mut sub = Vec::new();
    decompose_1d_level(&quotient, &mut sub);
    let x1 = MultiPoly::x_power(d, 0, 1);
    for term in sub {
        out.push(DecompositionTerm { lambda: term.lambda, g: x1.mul(&term.g) });
    }
}

/// Decomposes a symmetric d-dimensional polynomial by pairing every monomial
/// `Πxᵢ^{rᵢ} yᵢ^{sᵢ}` with its mirror `Πxᵢ^{sᵢ} yᵢ^{rᵢ}`: their common
/// coefficient λ(u) contributes
///
/// ```text
/// λ(u)[(Πxᵢ^{rᵢ} + Πxᵢ^{sᵢ})(Πyᵢ^{rᵢ} + Πyᵢ^{sᵢ}) − Πxᵢ^{rᵢ}Πyᵢ^{rᵢ} − Πxᵢ^{sᵢ}Πyᵢ^{sᵢ}],
/// ```
///
/// while self-paired monomials (r = s) are already products.
pub fn decompose_dd<C: PolyCoeff>(f: &MultiPoly<C>) -> Result<Decomposition<C>, PolyError> {
    let d = f.block_dim();
    ensure_symmetric(f)?;
    // group coefficients-by-u into λ(u) per unordered exponent pair {r,s}
    let mut lambdas: BTreeMap<(Vec<u32>, Vec<u32>), MultiPoly<C>> = BTreeMap::new();
    for (mono, coeff) in f.terms() {
        let r = mono.x.clone();
        let s = mono.y.clone();
        if r < s {
            continue; // mirror handled from the (r ≥ s) orientation
        }
        let mut u_mono = Monomial::unit(d);
        u_mono.u = mono.u;
        lambdas
            .entry((r, s))
            .or_insert_with(|| MultiPoly::zero(d))
            .insert_add(u_mono, coeff.clone());
    }
    let mut terms = Vec::new();
    for ((r, s), lambda) in lambdas {
        let xr = power_product::<C>(d, &r);
        if r == s {
            terms.push(DecompositionTerm { lambda, g: xr });
            continue;
        }
        let xs = power_product::<C>(d, &s);
        terms.push(DecompositionTerm { lambda: lambda.clone(), g: xr.add(&xs) });
        terms.push(DecompositionTerm { lambda: lambda.neg(), g: xr });
        terms.push(DecompositionTerm { lambda: lambda.neg(), g: xs });
    }
    Ok(Decomposition { d, terms })
}

/// Π xᵢ^{eᵢ} as an x-block polynomial.
fn power_product<C: PolyCoeff>(d: usize, exps: &[u32]) -> MultiPoly<C> {
    let mut mono = Monomial::unit(d);
    mono.x.copy_from_slice(exps);
    MultiPoly::monomial(d, mono, C::one())
}

// ---------------------------------------------------------------------------
// Polynomial approximation of symmetric kernels
// ---------------------------------------------------------------------------

/// Fit domain `[0, t_max] × K × K` with the box `K = Π [lo_i, hi_i]`.
#[derive(Debug, Clone)]
pub struct FitDomain {
    pub t_max: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SymmetricFit {
    pub poly: MultiPoly<f64>,
    pub sup_error: f64,
}

/// Least-squares polynomial fit of a continuous symmetric kernel on a tensor
/// grid (Chebyshev product basis up to the given total degree, SVD solve),
/// followed by symmetrization. The reported sup-error is the max absolute
/// deviation on a finer validation grid.
pub fn approximate_symmetric(
    f: &dyn Fn(f64, &[f64], &[f64]) -> f64,
    d: usize,
    domain: &FitDomain,
    degree: u32,
    grid: usize,
) -> Result<SymmetricFit, PolyError> {
    if domain.lo.len() != d || domain.hi.len() != d {
        return Err(PolyError::DimensionMismatch { expected: d, got: domain.lo.len() });
    }
    if !(domain.t_max > 0.0) {
        return Err(PolyError::BadDomain("t_max must be positive".into()));
    }
    for i in 0..d {
        if !(domain.hi[i] > domain.lo[i]) {
            return Err(PolyError::BadDomain(format!("axis {}: hi must exceed lo", i)));
        }
    }
    let axes = 1 + 2 * d;
    let basis = multi_degrees(axes, degree);
    let rows = grid.pow(axes as u32);
    if grid < (degree as usize + 1) || rows < basis.len() {
        return Err(PolyError::UnderdeterminedFit { rows, cols: basis.len() });
    }

    // per-axis affine maps to [-1, 1]
    let mut affine = Vec::with_capacity(axes);
    affine.push(axis_map(0.0, domain.t_max));
    for i in 0..d {
        affine.push(axis_map(domain.lo[i], domain.hi[i]));
    }
    for i in 0..d {
        affine.push(axis_map(domain.lo[i], domain.hi[i]));
    }

    let eval_kernel = |point: &[f64]| -> f64 {
        let u = point[0];
        let x = &point[1..1 + d];
        let y = &point[1 + d..];
        f(u, x, y)
    };

    // design matrix over the tensor grid
    let grid_axis = |a: usize, j: usize| -> f64 {
        let (lo, hi) = axis_range(a, d, domain);
        if grid == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * j as f64 / (grid - 1) as f64
        }
    };
    let mut design = DMatrix::zeros(rows, basis.len());
    let mut rhs = DVector::zeros(rows);
    let mut point = vec![0.0f64; axes];
    for (row, combo) in tensor_indices(axes, grid).enumerate() {
        for a in 0..axes {
            point[a] = grid_axis(a, combo[a]);
        }
        rhs[row] = eval_kernel(&point);
        for (col, deg) in basis.iter().enumerate() {
            let mut v = 1.0;
            for a in 0..axes {
                let (alpha, beta) = affine[a];
                v *= chebyshev(deg[a], alpha * point[a] + beta);
            }
            design[(row, col)] = v;
        }
    }
    let svd = design.svd(true, true);
    let coeffs = svd.solve(&rhs, 1e-12).map_err(|e| PolyError::BadDomain(e.to_string()))?;

    // expand Chebyshev-of-affine basis into monomials of the original vars
    let mut poly = MultiPoly::<f64>::zero(d);
    for (col, deg) in basis.iter().enumerate() {
        let c = coeffs[col];
        if c == 0.0 {
            continue;
        }
        let mut term_poly = MultiPoly::<f64>::constant(d, c);
        for a in 0..axes {
            let (alpha, beta) = affine[a];
            let cheb_coeffs = chebyshev_in_affine(deg[a], alpha, beta);
            let mut axis_poly = MultiPoly::<f64>::zero(d);
            for (k, ck) in cheb_coeffs.iter().enumerate() {
                if *ck != 0.0 {
                    let mut mono = Monomial::unit(d);
                    match a {
                        0 => mono.u = k as u32,
                        _ if a <= d => mono.x[a - 1] = k as u32,
                        _ => mono.y[a - 1 - d] = k as u32,
                    }
                    axis_poly.insert_add(mono, *ck);
                }
            }
            term_poly = term_poly.mul(&axis_poly);
        }
        poly = poly.add(&term_poly);
    }
    let poly = symmetrize(&poly);

    // validation on a finer grid
    let fine = 2 * grid + 1;
    let mut sup_error = 0.0f64;
    let mut point = vec![0.0f64; axes];
    for combo in tensor_indices(axes, fine) {
        for a in 0..axes {
            let (lo, hi) = axis_range(a, d, domain);
            point[a] = lo + (hi - lo) * combo[a] as f64 / (fine - 1) as f64;
        }
        let approx = poly.eval_f64(point[0], &point[1..1 + d], &point[1 + d..]);
        sup_error = sup_error.max((eval_kernel(&point) - approx).abs());
    }
    Ok(SymmetricFit { poly, sup_error })
}

fn axis_range(a: usize, d: usize, domain: &FitDomain) -> (f64, f64) {
    if a == 0 {
        (0.0, domain.t_max)
    } else if a <= d {
        (domain.lo[a - 1], domain.hi[a - 1])
    } else {
        (domain.lo[a - 1 - d], domain.hi[a - 1 - d])
    }
}

fn axis_map(lo: f64, hi: f64) -> (f64, f64) {
    (2.0 / (hi - lo), -(hi + lo) / (hi - lo))
}

fn chebyshev(n: usize, x: f64) -> f64 {
    let mut t0 = 1.0;
    let mut t1 = x;
    if n == 0 {
        return t0;
    }
    for _ in 2..=n {
        let t2 = 2.0 * x * t1 - t0;
        t0 = t1;
        t1 = t2;
    }
    t1
}

/// Monomial coefficients of `T_n(αv + β)` in powers of v.
fn chebyshev_in_affine(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut t0 = vec![1.0];
    if n == 0 {
        return t0;
    }
    let mut t1 = vec![beta, alpha];
    for _ in 2..=n {
        // t2 = 2(αv+β)·t1 − t0
        let mut t2 = vec![0.0; t1.len() + 1];
        for (k, c) in t1.iter().enumerate() {
            t2[k + 1] += 2.0 * alpha * c;
            t2[k] += 2.0 * beta * c;
        }
        for (k, c) in t0.iter().enumerate() {
            t2[k] -= c;
        }
        t0 = t1;
        t1 = t2;
    }
    t1
}

/// All exponent tuples over `axes` variables with total degree ≤ `degree`.
fn multi_degrees(axes: usize, degree: u32) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; axes];
    fn rec(axes: usize, degree: u32, pos: usize, left: u32, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == axes {
            out.push(current.clone());
            return;
        }
        for e in 0..=left {
            current[pos] = e as usize;
            rec(axes, degree, pos + 1, left - e, current, out);
        }
        current[pos] = 0;
    }
    rec(axes, degree, 0, degree, &mut current, &mut out);
    out
}

/// Row-major tensor product of indices `{0,…,n−1}^axes`.
fn tensor_indices(axes: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n.pow(axes as u32);
    (0..total).map(move |mut flat| {
        let mut combo = vec![0usize; axes];
        for slot in combo.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
        combo
    })
}
