//! Numerical toolkit for measure-valued stochastic calculus.
//!
//! The crate simulates controlled super-diffusions with critical binary
//! branching as weighted particle systems and provides the calculus needed to
//! check their Itô-type decomposition and control-theoretic consequences:
//!
//! - [`measure`]: finite atomic measures on ℝᵈ, a weighted test-function
//!   metric, and smooth cutoffs.
//! - [`functional`]: cylinder functionals `F(μ) = G(⟨φ₁,μ⟩,…,⟨φₘ,μ⟩)` with
//!   closed-form linear functional derivatives, and the generators `L`, `ℒ`.
//! - [`sympoly`]: exact symmetric-polynomial decomposition into sums of
//!   products of unary polynomials.
//! - [`sim`]: the branching Euler–Maruyama particle system and its traces.
//! - [`ito`]: statistical validation of the Itô formula on simulated traces.
//! - [`control`]: costs, value estimation, Hamiltonian/HJB residuals,
//!   verification checks, and the growth-function bound.
//! - [`expr`]: the small expression grammar shared by scenario files.

pub mod control;
pub mod expr;
pub mod functional;
pub mod ito;
pub mod measure;
pub mod quad;
pub mod sim;
pub mod sympoly;
