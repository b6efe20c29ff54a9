//! Branching Euler–Maruyama particle approximation of a controlled
//! super-diffusion with critical binary branching.
//!
//! A measure of mass `m` is carried by ≈ `N·m` particles of mass `1/N`. Per
//! step of size `h`, with all coefficients frozen at the pre-step empirical
//! measure (left-endpoint convention):
//!
//! 1. every particle moves `x ← x + b(x,μ,a)h + σ(x,μ,a)√h·Z`,
//! 2. every particle independently branches with probability `N·γ(x,μ,a)·h`
//!    and then dies or splits in two with probability ½ each (critical, so
//!    total mass is a martingale by construction).
//!
//! Traces record, per step and per registered test field φ, the integrals
//! `⟨φ,μ⟩`, `⟨Lφ,μ⟩`, the compensated increments of Eq.-type martingales and
//! the moments `⟨γ φᵢφⱼ,μ⟩` needed for quadratic-variation checks, plus
//! measure snapshots on a configurable stride.

use std::sync::Arc;

use rand::distributions::Standard;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::functional::{Coefficient, ControlledDynamics, ScalarField};
use crate::measure::FiniteMeasure;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("population {population} exceeded the cap {cap} at step {step}")]
    PopulationCap { step: usize, population: usize, cap: usize },
    #[error("field `{0}` was not registered before simulation")]
    UnregisteredField(String),
    #[error("time {0} is not on the trace's step grid")]
    TimeNotOnGrid(f64),
    #[error("dimension mismatch: measure {measure}, dynamics {dynamics}")]
    DimensionMismatch { measure: usize, dynamics: usize },
}

// ---------------------------------------------------------------------------
// Actions and policies
// ---------------------------------------------------------------------------

/// Finite action grid inside a compact interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    actions: Vec<f64>,
}

impl ActionGrid {
    pub fn new(mut actions: Vec<f64>) -> Result<Self, SimError> {
        if actions.is_empty() {
            return Err(SimError::InvalidConfig("action grid is empty".into()));
        }
        actions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        actions.dedup();
        Ok(Self { actions })
    }

    pub fn singleton(a: f64) -> Self {
        Self { actions: vec![a] }
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nearest grid action; keeps every policy's output inside the grid.
    pub fn snap(&self, a: f64) -> f64 {
        let mut best = self.actions[0];
        let mut dist = (a - best).abs();
        for &cand in &self.actions[1..] {
            let d = (a - cand).abs();
            if d < dist {
                dist = d;
                best = cand;
            }
        }
        best
    }
}

/// Lookup table over (t-bin, x-bin, mass-bin). Bin edges partition ℝ into
/// `edges.len() + 1` cells; the cell of a value is the count of edges ≤ it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub t_edges: Vec<f64>,
    pub x_edges: Vec<f64>,
    pub mass_edges: Vec<f64>,
    pub actions: Vec<f64>,
}

impl PolicyTable {
    fn bins(edges: &[f64], v: f64) -> usize {
        edges.iter().take_while(|&&e| e <= v).count()
    }

    fn lookup(&self, t: f64, x: f64, mass: f64) -> f64 {
        let ti = Self::bins(&self.t_edges, t);
        let xi = Self::bins(&self.x_edges, x);
        let mi = Self::bins(&self.mass_edges, mass);
        let nx = self.x_edges.len() + 1;
        let nm = self.mass_edges.len() + 1;
        self.actions[(ti * nx + xi) * nm + mi]
    }

    fn validate(&self) -> Result<(), SimError> {
        let cells = (self.t_edges.len() + 1) * (self.x_edges.len() + 1) * (self.mass_edges.len() + 1);
        if self.actions.len() != cells {
            return Err(SimError::InvalidConfig(format!(
                "policy table has {} actions for {} cells",
                self.actions.len(),
                cells
            )));
        }
        Ok(())
    }
}

type PolicyFn = Box<dyn Fn(f64, &[f64], &FiniteMeasure) -> f64 + Send + Sync>;

enum PolicyRule {
    Constant(f64),
    Table(PolicyTable),
    Closure(PolicyFn),
}

/// Markovian control rule (t, x, μ) → a with values snapped to the grid.
pub struct Policy {
    name: String,
    rule: PolicyRule,
    grid: ActionGrid,
}

impl Policy {
    pub fn constant(name: &str, grid: ActionGrid, action: f64) -> Arc<Self> {
        let snapped = grid.snap(action);
        Arc::new(Self { name: name.to_string(), rule: PolicyRule::Constant(snapped), grid })
    }

    pub fn table(name: &str, grid: ActionGrid, table: PolicyTable) -> Result<Arc<Self>, SimError> {
        table.validate()?;
        Ok(Arc::new(Self { name: name.to_string(), rule: PolicyRule::Table(table), grid }))
    }

    pub fn from_fn(
        name: &str,
        grid: ActionGrid,
        rule: impl Fn(f64, &[f64], &FiniteMeasure) -> f64 + Send + Sync + 'static,
    ) -> Arc<Self> {
        Arc::new(Self { name: name.to_string(), rule: PolicyRule::Closure(Box::new(rule)), grid })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    #[inline]
    pub fn action(&self, t: f64, x: &[f64], mass: f64, mu: &FiniteMeasure) -> f64 {
        match &self.rule {
            PolicyRule::Constant(a) => *a,
            PolicyRule::Table(tbl) => self.grid.snap(tbl.lookup(t, x[0], mass)),
            PolicyRule::Closure(f) => self.grid.snap(f(t, x, mu)),
        }
    }

    fn needs_measure(&self) -> bool {
        matches!(self.rule, PolicyRule::Closure(_))
    }
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Policy").field("name", &self.name).finish()
    }
}

// ---------------------------------------------------------------------------
// Config and trace
// ---------------------------------------------------------------------------

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

/// Simulation parameters. The branching discretization is a per-step
/// Bernoulli with probability `N·γ·h`, so `h·N·supγ < 1` is required.
#[derive(Clone)]
pub struct SimConfig {
    pub particles_per_unit_mass: u32,
    pub step: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub seed: u64,
    pub dynamics: Arc<ControlledDynamics>,
    pub policy: Arc<Policy>,
    pub snapshot_stride: usize,
    pub population_cap: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.particles_per_unit_mass == 0 {
            return Err(SimError::InvalidConfig("particles_per_unit_mass must be positive".into()));
        }
        if !(self.step > 0.0) {
            return Err(SimError::InvalidConfig("step must be positive".into()));
        }
        if !(self.t_end > self.t_start) {
            return Err(SimError::InvalidConfig("horizon must have t_end > t_start".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(SimError::InvalidConfig("snapshot_stride must be positive".into()));
        }
        let sup_gamma = self.dynamics.bounds().branching;
        let per_step = self.particles_per_unit_mass as f64 * self.step * sup_gamma;
        if !(per_step < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "h·N·supγ = {} must be below 1 for the Bernoulli branching step",
                per_step
            )));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.step).round().max(1.0) as usize
    }
}

impl std::fmt::Debug for SimConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimConfig")
            .field("particles_per_unit_mass", &self.particles_per_unit_mass)
            .field("step", &self.step)
            .field("t_start", &self.t_start)
            .field("t_end", &self.t_end)
            .field("seed", &self.seed)
            .finish()
    }
}

/// One simulated path: per-step field statistics, compensated martingale
/// increments, measure snapshots and (optionally) per-step running cost.
#[derive(Debug, Clone)]
pub struct Trace {
    pub path_index: u64,
    pub step: f64,
    /// Step-grid times t_0 .. t_K.
    pub times: Vec<f64>,
    field_names: Vec<String>,
    /// `field_values[i][k] = ⟨φᵢ, μ_k⟩`, k = 0..=K.
    pub field_values: Vec<Vec<f64>>,
    /// `field_generator[i][k] = ⟨Lφᵢ(·,μ_k,α_k(·)), μ_k⟩`, k = 0..K.
    pub field_generator: Vec<Vec<f64>>,
    /// `gamma_moments[p][k] = ⟨γ(·,μ_k,α_k(·)) φᵢφⱼ, μ_k⟩` for pairs i ≤ j.
    pub gamma_moments: Vec<Vec<f64>>,
    /// Per-step compensated increments
    /// `⟨φᵢ,μ_{k+1}⟩ − ⟨φᵢ,μ_k⟩ − h·⟨Lφᵢ,μ_k⟩`.
    pub increments: Vec<Vec<f64>>,
    /// Measure snapshots: always the initial and final step, plus every
    /// `snapshot_stride` steps.
    pub snapshots: Vec<(f64, FiniteMeasure)>,
    /// Per-step `h·⟨f(·,μ_k,α_k(·)), μ_k⟩`; empty when no cost was recorded.
    pub running_cost: Vec<f64>,
}

impl Trace {
    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }

    pub fn field_index(&self, name: &str) -> Result<usize, SimError> {
        self.field_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SimError::UnregisteredField(name.to_string()))
    }

    /// Index of the γ-moment slot of the unordered field pair (i, j).
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let m = self.field_names.len();
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        lo * m - lo * (lo + 1) / 2 + hi
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step_index(&self, time: f64) -> Result<usize, SimError> {
        let tol = self.step * 1e-6;
        self.times
            .iter()
            .position(|&t| (t - time).abs() <= tol)
            .ok_or(SimError::TimeNotOnGrid(time))
    }

    pub fn initial_measure(&self) -> &FiniteMeasure {
        &self.snapshots.first().expect("trace has snapshots").1
    }

    pub fn final_measure(&self) -> &FiniteMeasure {
        &self.snapshots.last().expect("trace has snapshots").1
    }

    /// The discrete compensated increment of Eq.-type martingales,
    /// `⟨f,μ_t⟩ − ⟨f,μ_s⟩ − Σ_steps h·⟨Lf,μ⟩`, summed left to right over the
    /// steps in `[s, t)`.
    pub fn martingale_increment(&self, field: &str, s: f64, t: f64) -> Result<f64, SimError> {
        let i = self.field_index(field)?;
        let ks = self.step_index(s)?;
        let kt = self.step_index(t)?;
        if ks >= kt {
            return Err(SimError::InvalidConfig("need s < t on the step grid".into()));
        }
        let values = &self.field_values[i];
        let mut compensator = 0.0;
        for k in ks..kt {
            compensator += self.step * self.field_generator[i][k];
        }
        Ok(values[kt] - values[ks] - compensator)
    }

    /// Total recorded running cost over `[s, t)`.
    pub fn running_cost_between(&self, s: f64, t: f64) -> Result<f64, SimError> {
        let ks = self.step_index(s)?;
        let kt = self.step_index(t)?;
        Ok(self.running_cost[ks..kt].iter().sum())
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Simulates one path. Initial particles split the atoms of μ₀
/// deterministically: each atom of mass m becomes `round(N·m)` particles of
/// mass `1/N` at the atom's position, so the first snapshot is the exact
/// 1/N-quantization of μ₀ with no sampling noise.
///
/// Randomness comes from two counter-based streams per path (stream `2p` for
/// motion, `2p+1` for branching), so changing the number of paths never
/// reshuffles existing ones.
pub fn simulate(
    mu0: &FiniteMeasure,
    cfg: &SimConfig,
    fields: &[Arc<ScalarField>],
    running_cost: Option<&Coefficient>,
    path_index: u64,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    let dim = mu0.dim();
    if dim != cfg.dynamics.dim() {
        return Err(SimError::DimensionMismatch { measure: dim, dynamics: cfg.dynamics.dim() });
    }

    let n_per_mass = cfg.particles_per_unit_mass as f64;
    let inv_n = 1.0 / n_per_mass;
    let h = cfg.step;
    let sqrt_h = h.sqrt();
    let steps = cfg.num_steps();
    let m_fields = fields.len();
    let n_pairs = m_fields * (m_fields + 1) / 2;

    let mut move_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    move_rng.set_stream(2 * path_index);
    let mut branch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    branch_rng.set_stream(2 * path_index + 1);

    // deterministic initial quantization
    let mut positions: Vec<f64> = Vec::new();
    for (pos, mass) in mu0.atoms() {
        let count = (n_per_mass * mass).round() as usize;
        for _ in 0..count {
            positions.extend_from_slice(pos);
        }
    }

    // only Custom closures observe the full measure; Const/Expr coefficients
    // and table policies see (x, a, mass), so the per-step measure rebuild
    // can be skipped entirely for them
    let needs_measure = cfg.policy.needs_measure()
        || running_cost.is_some_and(|c| matches!(c, Coefficient::Custom(_)))
        || cfg.dynamics.coefficients().any(|c| matches!(c, Coefficient::Custom(_)));

    let empty = FiniteMeasure::empty(dim);
    let mut measure = FiniteMeasure::empty(dim);

    let mut times = Vec::with_capacity(steps + 1);
    let mut field_values = vec![Vec::with_capacity(steps + 1); m_fields];
    let mut field_generator = vec![Vec::with_capacity(steps); m_fields];
    let mut gamma_moments = vec![Vec::with_capacity(steps); n_pairs];
    let mut cost_steps = Vec::with_capacity(if running_cost.is_some() { steps } else { 0 });
    let mut snapshots = Vec::new();

    let mut next_positions: Vec<f64> = Vec::with_capacity(positions.len() * 2);
    let mut triples = vec![(0.0f64, 0.0f64, 0.0f64); m_fields];
    let mut drift_buf = vec![0.0f64; dim];
    let mut vol_buf = vec![0.0f64; dim];
    let mut v_acc = vec![0.0f64; m_fields];
    let mut l_acc = vec![0.0f64; m_fields];
    let mut g_acc = vec![0.0f64; n_pairs];

    for k in 0..=steps {
        let t_k = cfg.t_start + k as f64 * h;
        times.push(t_k);
        let count = positions.len() / dim.max(1);
        let mass = count as f64 * inv_n;

        let mu_k: &FiniteMeasure = if needs_measure {
            measure.refill_uniform(&positions, inv_n);
            &measure
        } else {
            &empty
        };

        if k % cfg.snapshot_stride == 0 || k == steps {
            snapshots.push((
                t_k,
                FiniteMeasure::from_uniform_particles(dim, positions.clone(), inv_n),
            ));
        }

        let final_step = k == steps;
        v_acc.iter_mut().for_each(|v| *v = 0.0);
        l_acc.iter_mut().for_each(|v| *v = 0.0);
        g_acc.iter_mut().for_each(|v| *v = 0.0);
        let mut cost_acc = 0.0f64;
        if !final_step {
            next_positions.clear();
        }

        for p in 0..count {
            let x = &positions[p * dim..(p + 1) * dim];
            if final_step {
                // terminal pass records field values only
                for (i, phi) in fields.iter().enumerate() {
                    v_acc[i] += inv_n * phi.value(x);
                }
                continue;
            }
            let a = cfg.policy.action(t_k, x, mass, mu_k);
            let gamma = cfg.dynamics.branching(x, mu_k, mass, a);
            for j in 0..dim {
                drift_buf[j] = cfg.dynamics.drift(j, x, mu_k, mass, a);
                vol_buf[j] = cfg.dynamics.volatility(j, x, mu_k, mass, a);
            }

            if dim == 1 {
                for (i, phi) in fields.iter().enumerate() {
                    triples[i] = phi.eval012_1d(x[0]);
                }
            } else {
                for (i, phi) in fields.iter().enumerate() {
                    // only diagonal second derivatives enter L
                    let v = phi.value(x);
                    triples[i] = (v, 0.0, 0.0);
                }
            }
            let mut pair = 0;
            for i in 0..m_fields {
                let (vi, d1, d2) = triples[i];
                v_acc[i] += inv_n * vi;
                if dim == 1 {
                    l_acc[i] += inv_n * (drift_buf[0] * d1 + 0.5 * vol_buf[0] * vol_buf[0] * d2);
                } else {
                    let phi = &fields[i];
                    let mut gen = 0.0;
                    for j in 0..dim {
                        gen += drift_buf[j] * phi.deriv(x, j)
                            + 0.5 * vol_buf[j] * vol_buf[j] * phi.deriv2(x, j);
                    }
                    l_acc[i] += inv_n * gen;
                }
                for j in i..m_fields {
                    g_acc[pair] += inv_n * gamma * vi * triples[j].0;
                    pair += 1;
                }
            }
            if let Some(cost) = running_cost {
                cost_acc += inv_n * cost.eval(x, 0, mu_k, mass, a);
            }

            // move, then branch at the pre-step coefficients
            let base = next_positions.len();
            for j in 0..dim {
                let vol = vol_buf[j];
                let noise = if vol != 0.0 {
                    let z: f64 = move_rng.sample(StandardNormal);
                    vol * sqrt_h * z
                } else {
                    0.0
                };
                next_positions.push(x[j] + drift_buf[j] * h + noise);
            }
            let branch_prob = n_per_mass * gamma * h;
            if branch_prob > 0.0 {
                if branch_prob > 1.0 {
                    return Err(SimError::InvalidConfig(format!(
                        "branching probability N·γ·h = {} exceeds 1 at step {}",
                        branch_prob, k
                    )));
                }
                let u: f64 = branch_rng.sample(Standard);
                if u < branch_prob {
                    if u < 0.5 * branch_prob {
                        next_positions.truncate(base); // particle dies
                    } else {
                        // splits: second child at the parent's position
                        for j in 0..dim {
                            next_positions.push(next_positions[base + j]);
                        }
                    }
                }
            }
        }

        for i in 0..m_fields {
            field_values[i].push(v_acc[i]);
        }
        if !final_step {
            for i in 0..m_fields {
                field_generator[i].push(l_acc[i]);
            }
            for (pair, acc) in g_acc.iter().enumerate() {
                gamma_moments[pair].push(*acc);
            }
            if running_cost.is_some() {
                cost_steps.push(h * cost_acc);
            }
            std::mem::swap(&mut positions, &mut next_positions);
            let new_count = positions.len() / dim.max(1);
            if new_count > cfg.population_cap {
                return Err(SimError::PopulationCap {
                    step: k,
                    population: new_count,
                    cap: cfg.population_cap,
                });
            }
        }
    }

    let mut increments = vec![Vec::with_capacity(steps); m_fields];
    for i in 0..m_fields {
        for k in 0..steps {
            increments[i]
                .push(field_values[i][k + 1] - field_values[i][k] - h * field_generator[i][k]);
        }
    }

    Ok(Trace {
        path_index,
        step: h,
        times,
        field_names: fields.iter().map(|f| f.name().to_string()).collect(),
        field_values,
        field_generator,
        gamma_moments,
        increments,
        snapshots,
        running_cost: cost_steps,
    })
}

/// Runs `n_paths` independent paths in parallel (path index = stream index)
/// and maps each trace through `f` as soon as it completes, returning results
/// in path order.
pub fn run_paths_map<T: Send>(
    mu0: &FiniteMeasure,
    cfg: &SimConfig,
    fields: &[Arc<ScalarField>],
    running_cost: Option<&Coefficient>,
    n_paths: usize,
    f: impl Fn(Trace) -> T + Send + Sync,
) -> Result<Vec<T>, SimError> {
    (0..n_paths)
        .into_par_iter()
        .map(|p| simulate(mu0, cfg, fields, running_cost, p as u64).map(&f))
        .collect()
}

/// Runs `n_paths` independent paths, keeping the full traces.
pub fn run_paths(
    mu0: &FiniteMeasure,
    cfg: &SimConfig,
    fields: &[Arc<ScalarField>],
    running_cost: Option<&Coefficient>,
    n_paths: usize,
) -> Result<Vec<Trace>, SimError> {
    run_paths_map(mu0, cfg, fields, running_cost, n_paths, |t| t)
}
