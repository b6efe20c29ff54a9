//! Finite atomic measures on ℝᵈ, test families, the induced metric, and
//! smooth cutoffs.
//!
//! A measure is a weighted particle cloud. The metric is the weighted ℓ²
//! distance over a truncated family of bounded C²_b test functions
//!
//! ```text
//! d(μ,λ) = ( Σ_{k=0}^{K} 1/(2^k q_k) ⟨φ_k, μ−λ⟩² )^{1/2},
//! q_k = max{1, ‖Dφ_k‖²_∞, ‖D²φ_k‖²_∞},  φ₀ ≡ 1.
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

/// Errors from measure construction, metric evaluation and serialization.
#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atom {index} has negative mass {mass}")]
    NegativeMass { index: usize, mass: f64 },
    #[error("atom {index} has {got} coordinates, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("measures have different dimensions: {0} vs {1}")]
    MixedDimensions(usize, usize),
    #[error("test family is empty")]
    EmptyFamily,
    #[error("test family truncation {requested} exceeds capacity {capacity}")]
    FamilyTooLarge { requested: usize, capacity: usize },
    #[error("family dimension {family} does not match measure dimension {measure}")]
    FamilyDimension { family: usize, measure: usize },
    #[error("cutoff level must be a positive integer")]
    InvalidCutoffLevel,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A finite atomic measure on ℝᵈ: positions with nonnegative masses.
///
/// Positions are stored flat (`dim` coordinates per atom). Immutable after
/// construction; all operations are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    dim: usize,
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl FiniteMeasure {
    /// Builds a measure from atom positions and masses, rejecting negative
    /// masses and dimension mismatches. Atoms with mass exactly zero are kept;
    /// use [`FiniteMeasure::pruned`] to drop them.
    pub fn new(dim: usize, atoms: &[(Vec<f64>, f64)]) -> Result<Self, MeasureError> {
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut masses = Vec::with_capacity(atoms.len());
        for (index, (pos, mass)) in atoms.iter().enumerate() {
            if pos.len() != dim {
                return Err(MeasureError::DimensionMismatch { index, expected: dim, got: pos.len() });
            }
            if !(*mass >= 0.0) {
                return Err(MeasureError::NegativeMass { index, mass: *mass });
            }
            positions.extend_from_slice(pos);
            masses.push(*mass);
        }
        Ok(Self { dim, positions, masses })
    }

    /// One-dimensional convenience constructor.
    pub fn from_atoms_1d(atoms: &[(f64, f64)]) -> Result<Self, MeasureError> {
        let atoms: Vec<(Vec<f64>, f64)> = atoms.iter().map(|&(x, m)| (vec![x], m)).collect();
        Self::new(1, &atoms)
    }

    /// The zero measure on ℝᵈ.
    pub fn empty(dim: usize) -> Self {
        Self { dim, positions: Vec::new(), masses: Vec::new() }
    }

    /// Internal constructor for particle systems: all atoms share one mass.
    pub(crate) fn from_uniform_particles(dim: usize, positions: Vec<f64>, mass: f64) -> Self {
        let n = positions.len() / dim.max(1);
        Self { dim, positions, masses: vec![mass; n] }
    }

    /// Reuses this measure's buffers as a view of a uniform particle cloud.
    pub(crate) fn refill_uniform(&mut self, positions: &[f64], mass: f64) {
        self.positions.clear();
        self.positions.extend_from_slice(positions);
        let n = self.positions.len() / self.dim.max(1);
        self.masses.clear();
        self.masses.resize(n, mass);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions.chunks_exact(self.dim).zip(self.masses.iter().copied())
    }

    /// ⟨1, μ⟩.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// ⟨f, μ⟩ = Σᵢ mᵢ f(xᵢ). Integration is an exact finite sum over atoms,
    /// accumulated in atom order.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for (pos, mass) in self.atoms() {
            acc += mass * f(pos);
        }
        acc
    }

    /// One-dimensional integration shortcut; panics if `dim != 1`.
    pub fn integrate_1d(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        assert_eq!(self.dim, 1, "integrate_1d on a measure of dimension {}", self.dim);
        let mut acc = 0.0;
        for (pos, mass) in self.atoms() {
            acc += mass * f(pos[0]);
        }
        acc
    }

    /// Scales every mass by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            positions: self.positions.clone(),
            masses: self.masses.iter().map(|m| m * c).collect(),
        }
    }

    /// Drops atoms whose mass is exactly zero (no integral changes).
    pub fn pruned(&self) -> Self {
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        for (pos, mass) in self.atoms() {
            if mass != 0.0 {
                positions.extend_from_slice(pos);
                masses.push(mass);
            }
        }
        Self { dim: self.dim, positions, masses }
    }

    /// Largest coordinate magnitude over all atoms (0 for the empty measure).
    pub fn max_abs_coordinate(&self) -> f64 {
        self.positions.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Serializes to the line-oriented text format:
    /// a header `dim=d atoms=n`, then one `x₁ … x_d mass` line per atom.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim={} atoms={}", self.dim, self.len());
        for (pos, mass) in self.atoms() {
            for x in pos {
                let _ = write!(out, "{} ", x);
            }
            let _ = writeln!(out, "{}", mass);
        }
        out
    }

    /// Parses the format produced by [`FiniteMeasure::to_text`].
    pub fn from_text(text: &str) -> Result<Self, MeasureError> {
        let mut lines = text.lines().enumerate();
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| MeasureError::Parse { line: 1, message: "missing header".into() })?;
        let parse_err = |line: usize, message: &str| MeasureError::Parse { line: line + 1, message: message.into() };
        let mut dim = None;
        let mut atoms = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("atoms", v)) => atoms = v.parse::<usize>().ok(),
                _ => return Err(parse_err(line_no, "expected `dim=d atoms=n`")),
            }
        }
        let dim = dim.ok_or_else(|| parse_err(line_no, "missing dim"))?;
        let n = atoms.ok_or_else(|| parse_err(line_no, "missing atoms"))?;
        let mut parsed = Vec::with_capacity(n);
        for _ in 0..n {
            let (line_no, line) =
                lines.next().ok_or_else(|| parse_err(0, "unexpected end of input"))?;
            let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let values = values.map_err(|_| parse_err(line_no, "bad number"))?;
            if values.len() != dim + 1 {
                return Err(parse_err(line_no, "wrong number of columns"));
            }
            parsed.push((values[..dim].to_vec(), values[dim]));
        }
        Self::new(dim, &parsed)
    }
}

// ---------------------------------------------------------------------------
// 1D window functions: Gaussian-windowed monomials used both as test-family
// members and as bounded scalar fields.
// ---------------------------------------------------------------------------

/// A bounded C^∞ window `A·(x−c)^p·exp(−(x−c)²/(2s²))` with `A` chosen so the
/// sup-norm is exactly 1, or the constant function 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Window1d {
    One,
    Bump { degree: u32, center: f64, scale: f64, amplitude: f64 },
}

impl Window1d {
    pub fn bump(degree: u32, center: f64, scale: f64) -> Self {
        assert!(scale > 0.0, "window scale must be positive");
        // max of |t|^p e^{-t²/(2s²)} sits at t² = p s².
        let amplitude = if degree == 0 {
            1.0
        } else {
            let p = degree as f64;
            1.0 / ((scale * p.sqrt()).powi(degree as i32) * (-p / 2.0).exp())
        };
        Window1d::Bump { degree, center, scale, amplitude }
    }

    /// Value, first and second derivative in a single evaluation (one `exp`).
    pub fn eval012(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            Window1d::One => (1.0, 0.0, 0.0),
            Window1d::Bump { degree, center, scale, amplitude } => {
                let t = x - center;
                let s2 = scale * scale;
                let g = (-t * t / (2.0 * s2)).exp();
                let p = degree as i32;
                let tp = t.powi(p);
                let v = amplitude * tp * g;
                let d1 = if degree == 0 {
                    amplitude * g * (-t / s2)
                } else {
                    amplitude * g * (degree as f64 * t.powi(p - 1) - t.powi(p + 1) / s2)
                };
                let d2 = match degree {
                    0 => amplitude * g * (t * t / (s2 * s2) - 1.0 / s2),
                    1 => amplitude * g * (-3.0 * t / s2 + t * t * t / (s2 * s2)),
                    _ => {
                        let pf = degree as f64;
                        amplitude
                            * g
                            * (pf * (pf - 1.0) * t.powi(p - 2) - (2.0 * pf + 1.0) * tp / s2
                                + t.powi(p + 2) / (s2 * s2))
                    }
                };
                (v, d1, d2)
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval012(x).0
    }

    /// Sup-norms (value, first, second derivative) by dense-grid maximization:
    /// 4096 points on the effective support `[c−8s, c+8s]`. The window decays
    /// like `exp(−t²/2s²)`, so the tail beyond 8s is below 1e−13.
    pub fn sup_norms(&self) -> (f64, f64, f64) {
        match *self {
            Window1d::One => (1.0, 0.0, 0.0),
            Window1d::Bump { center, scale, .. } => {
                const GRID: usize = 4096;
                let lo = center - 8.0 * scale;
                let hi = center + 8.0 * scale;
                let mut sup = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..=GRID {
                    let x = lo + (hi - lo) * i as f64 / GRID as f64;
                    let (v, d1, d2) = self.eval012(x);
                    sup.0 = sup.0.max(v.abs());
                    sup.1 = sup.1.max(d1.abs());
                    sup.2 = sup.2.max(d2.abs());
                }
                sup
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Test family
// ---------------------------------------------------------------------------

/// Grid of window parameters a family is enumerated from.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyGrids {
    pub degrees: Vec<u32>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Default for FamilyGrids {
    fn default() -> Self {
        Self {
            degrees: vec![0, 1, 2, 3],
            centers: vec![0.0, 1.0, -1.0, 2.0, -2.0, 3.0, -3.0],
            scales: vec![1.0, 0.5, 2.0],
        }
    }
}

/// One member φ_k of a test family: a tensor product of 1D windows together
/// with its weight `q_k`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    factors: Vec<Window1d>,
    q: f64,
}

impl TestFunction {
    fn from_factors(factors: Vec<Window1d>) -> Self {
        // For a tensor product the sup of each partial derivative factorizes,
        // each 1D sup being attained independently per coordinate.
        let sups: Vec<(f64, f64, f64)> = factors.iter().map(Window1d::sup_norms).collect();
        let d = factors.len();
        let mut grad_sup = 0.0f64;
        let mut hess_sup = 0.0f64;
        for j in 0..d {
            let mut g = sups[j].1;
            let mut h_diag = sups[j].2;
            for (l, s) in sups.iter().enumerate() {
                if l != j {
                    g *= s.0;
                    h_diag *= s.0;
                }
            }
            grad_sup = grad_sup.max(g);
            hess_sup = hess_sup.max(h_diag);
            for l in (j + 1)..d {
                let mut h_off = sups[j].1 * sups[l].1;
                for (i, s) in sups.iter().enumerate() {
                    if i != j && i != l {
                        h_off *= s.0;
                    }
                }
                hess_sup = hess_sup.max(h_off);
            }
        }
        let q = 1.0f64.max(grad_sup * grad_sup).max(hess_sup * hess_sup);
        Self { factors, q }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.factors.len());
        self.factors.iter().zip(x).map(|(w, &xi)| w.value(xi)).product()
    }

    /// ∂_j φ(x); only meaningful in 1D paths of the library (j = 0).
    pub fn deriv(&self, x: &[f64], j: usize) -> f64 {
        let mut acc = 1.0;
        for (l, (w, &xi)) in self.factors.iter().zip(x).enumerate() {
            let (v, d1, _) = w.eval012(xi);
            acc *= if l == j { d1 } else { v };
        }
        acc
    }

    /// ∂²_jj φ(x).
    pub fn deriv2(&self, x: &[f64], j: usize) -> f64 {
        let mut acc = 1.0;
        for (l, (w, &xi)) in self.factors.iter().zip(x).enumerate() {
            let (v, _, d2) = w.eval012(xi);
            acc *= if l == j { d2 } else { v };
        }
        acc
    }

    pub fn weight(&self) -> f64 {
        self.q
    }

    pub fn factors(&self) -> &[Window1d] {
        &self.factors
    }
}

/// The sequence (φ_k)_{k=0..K} with weights 1/(2^k q_k) defining the metric.
///
/// φ₀ ≡ 1; for k ≥ 1 the members are Gaussian-windowed monomials enumerated
/// from fixed grids of degrees, centers and scales (diagonal order: ascending
/// grid-index sum, lexicographic within a diagonal). In dimension d each
/// member is a tensor product of 1D members, enumerated by graded
/// lexicographic multi-indices. Members are sup-normalized to 1.
#[derive(Debug, Clone)]
pub struct TestFamily {
    dim: usize,
    truncation: usize,
    grids: FamilyGrids,
    functions: Vec<TestFunction>,
}

impl TestFamily {
    /// Family on ℝᵈ truncated at index K (retains φ₀..φ_K) over the default
    /// parameter grids.
    pub fn gaussian(dim: usize, truncation: usize) -> Result<Arc<Self>, MeasureError> {
        Self::with_grids(dim, truncation, FamilyGrids::default())
    }

    pub fn with_grids(
        dim: usize,
        truncation: usize,
        grids: FamilyGrids,
    ) -> Result<Arc<Self>, MeasureError> {
        assert!(dim >= 1, "dimension must be at least 1");
        let base = Self::base_sequence(&grids);
        // each multi-index entry must stay inside the 1D base sequence
        let capacity = if dim == 1 { base.len() } else { usize::MAX };
        if truncation + 1 > capacity {
            return Err(MeasureError::FamilyTooLarge { requested: truncation + 1, capacity });
        }
        let mut functions = Vec::with_capacity(truncation + 1);
        'outer: for total in 0..=(dim * (base.len() - 1)) {
            for index in indices_with_sum(dim, total, base.len()) {
                let factors: Vec<Window1d> = index.iter().map(|&i| base[i].clone()).collect();
                functions.push(TestFunction::from_factors(factors));
                if functions.len() == truncation + 1 {
                    break 'outer;
                }
            }
        }
        if functions.len() < truncation + 1 {
            return Err(MeasureError::FamilyTooLarge {
                requested: truncation + 1,
                capacity: functions.len(),
            });
        }
        Ok(Arc::new(Self { dim, truncation, grids, functions }))
    }

    /// The 1D enumeration: the constant window first, then bumps by diagonal
    /// traversal of (degree, center, scale) grid indices.
    fn base_sequence(grids: &FamilyGrids) -> Vec<Window1d> {
        let mut seq = vec![Window1d::One];
        let (nd, nc, ns) = (grids.degrees.len(), grids.centers.len(), grids.scales.len());
        let max_weight = nd + nc + ns;
        for w in 0..max_weight {
            for id in 0..nd.min(w + 1) {
                for ic in 0..nc.min(w + 1 - id) {
                    let is = w - id - ic;
                    if is < ns {
                        seq.push(Window1d::bump(
                            grids.degrees[id],
                            grids.centers[ic],
                            grids.scales[is],
                        ));
                    }
                }
            }
        }
        seq
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of retained functions (truncation + 1).
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn grids(&self) -> &FamilyGrids {
        &self.grids
    }

    pub fn function(&self, k: usize) -> &TestFunction {
        &self.functions[k]
    }

    pub fn functions(&self) -> &[TestFunction] {
        &self.functions
    }

    /// 1/(2^k q_k).
    pub fn metric_weight(&self, k: usize) -> f64 {
        0.5f64.powi(k as i32) / self.functions[k].q
    }
}

/// Multi-indices in ℕᵈ with the given coordinate sum and entries below
/// `bound`, in descending lexicographic order on the leading coordinate.
fn indices_with_sum(dim: usize, total: usize, bound: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return if total < bound { vec![vec![total]] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for head in (0..bound.min(total + 1)).rev() {
        for tail in indices_with_sum(dim - 1, total - head, bound) {
            let mut idx = Vec::with_capacity(dim);
            idx.push(head);
            idx.extend(tail);
            out.push(idx);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Metric and cutoff
// ---------------------------------------------------------------------------

/// The K-truncated metric d(μ,λ). Symmetric by construction: the ⟨φ_k, μ−λ⟩
/// differences are IEEE subtractions, so swapping arguments flips only signs.
pub fn metric(
    mu: &FiniteMeasure,
    lam: &FiniteMeasure,
    fam: &TestFamily,
) -> Result<f64, MeasureError> {
    if mu.dim() != lam.dim() {
        return Err(MeasureError::MixedDimensions(mu.dim(), lam.dim()));
    }
    if fam.dim() != mu.dim() {
        return Err(MeasureError::FamilyDimension { family: fam.dim(), measure: mu.dim() });
    }
    if fam.is_empty() {
        return Err(MeasureError::EmptyFamily);
    }
    let mut sum = 0.0;
    for (k, phi) in fam.functions().iter().enumerate() {
        let diff = mu.integrate(|x| phi.value(x)) - lam.integrate(|x| phi.value(x));
        sum += fam.metric_weight(k) * diff * diff;
    }
    Ok(sum.sqrt())
}

/// ‖μ‖ = d(μ, 0).
pub fn norm(mu: &FiniteMeasure, fam: &TestFamily) -> Result<f64, MeasureError> {
    metric(mu, &FiniteMeasure::empty(mu.dim()), fam)
}

/// Smooth cutoff profile ρᴺ: equal to 1 on [−N,N]ᵈ, 0 outside [−(N+1),N+1]ᵈ,
/// C^∞ in between. Per coordinate,
///
/// ```text
/// ρ(x) = h(N+1−|x|) / (h(N+1−|x|) + h(|x|−N)),   h(t) = exp(−1/t)·1_{t>0},
/// ```
///
/// and ρᴺ(x) = Π_i ρ(x_i).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutoffProfile {
    level: u32,
}

impl CutoffProfile {
    pub fn new(level: u32) -> Result<Self, MeasureError> {
        if level == 0 {
            return Err(MeasureError::InvalidCutoffLevel);
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    fn h(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }

    /// Per-coordinate profile value.
    pub fn profile_1d(&self, x: f64) -> f64 {
        let n = self.level as f64;
        let a = Self::h(n + 1.0 - x.abs());
        let b = Self::h(x.abs() - n);
        if a == 0.0 {
            0.0
        } else {
            a / (a + b)
        }
    }

    /// ρᴺ(x) for x ∈ ℝᵈ.
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| self.profile_1d(xi)).product()
    }
}

/// The measure μᴺ with density ρᴺ against μ: every atom's mass is multiplied
/// by ρᴺ(position); atoms cut to mass exactly 0 are pruned. On the plateau
/// (all atoms inside [−N,N]ᵈ) the result equals μ atom for atom.
pub fn cutoff(mu: &FiniteMeasure, prof: &CutoffProfile) -> FiniteMeasure {
    let mut positions = Vec::with_capacity(mu.positions.len());
    let mut masses = Vec::with_capacity(mu.len());
    for (pos, mass) in mu.atoms() {
        let rho = prof.value(pos);
        let scaled = if rho == 1.0 { mass } else { mass * rho };
        if scaled != 0.0 || mass == 0.0 {
            positions.extend_from_slice(pos);
            masses.push(scaled);
        }
    }
    FiniteMeasure { dim: mu.dim, positions, masses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_measure(rng: &mut StdRng, dim: usize, max_atoms: usize) -> FiniteMeasure {
        let n = rng.gen_range(0..=max_atoms);
        let atoms: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| {
                let pos: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                (pos, rng.gen_range(0.0..2.0))
            })
            .collect();
        FiniteMeasure::new(dim, &atoms).unwrap()
    }

    #[test]
    fn integrate_zero_case() {
        let mu = FiniteMeasure::from_atoms_1d(&[(0.0, 1.0)]).unwrap();
        assert_eq!(mu.integrate_1d(|x| x * x), 0.0);
    }

    #[test]
    fn integrate_direct_arithmetic() {
        let mu = FiniteMeasure::from_atoms_1d(&[(1.0, 0.5), (2.0, 0.25)]).unwrap();
        assert_eq!(mu.integrate_1d(|x| x), 1.0);
    }

    #[test]
    fn integrate_total_mass_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let x0 = rng.gen_range(-10.0..10.0);
            let m0 = rng.gen_range(0.0..5.0);
            let mu = FiniteMeasure::from_atoms_1d(&[(x0, m0)]).unwrap();
            assert_eq!(mu.integrate_1d(|_| 1.0), m0);
        }
    }

    #[test]
    fn integrate_linearity() {
        let mut rng = StdRng::seed_from_u64(11);
        let mu = random_measure(&mut rng, 1, 8);
        let f = |x: f64| (x * 0.7).sin();
        let g = |x: f64| x * x - 1.0;
        for _ in 0..20 {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            let lhs = mu.integrate_1d(|x| a * f(x) + b * g(x));
            let rhs = a * mu.integrate_1d(f) + b * mu.integrate_1d(g);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn rejects_negative_mass_and_dim_mismatch() {
        assert!(matches!(
            FiniteMeasure::from_atoms_1d(&[(0.0, -1.0)]),
            Err(MeasureError::NegativeMass { .. })
        ));
        assert!(matches!(
            FiniteMeasure::new(2, &[(vec![0.0], 1.0)]),
            Err(MeasureError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn family_members_bounded_and_weighted() {
        let fam = TestFamily::gaussian(1, 64).unwrap();
        assert_eq!(fam.len(), 65);
        // φ₀ ≡ 1 on a dense grid; all members sup-bounded by 1; q_k ≥ 1.
        for i in 0..=400 {
            let x = -4.0 + 8.0 * i as f64 / 400.0;
            assert_eq!(fam.function(0).value(&[x]), 1.0);
            for phi in fam.functions() {
                assert!(phi.value(&[x]).abs() <= 1.0 + 1e-12);
            }
        }
        assert_eq!(fam.function(0).weight(), 1.0);
        for phi in fam.functions() {
            assert!(phi.weight() >= 1.0);
        }
    }

    #[test]
    fn family_truncation_capacity_error() {
        assert!(matches!(
            TestFamily::gaussian(1, 10_000),
            Err(MeasureError::FamilyTooLarge { .. })
        ));
    }

    #[test]
    fn window_derivatives_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let w = Window1d::bump(rng.gen_range(0..4), rng.gen_range(-2.0..2.0), rng.gen_range(0.4..2.0));
            let x = rng.gen_range(-4.0..4.0);
            let eps = 1e-5;
            let (v, d1, d2) = w.eval012(x);
            let _ = v;
            let fd1 = (w.value(x + eps) - w.value(x - eps)) / (2.0 * eps);
            let fd2 = (w.value(x + eps) - 2.0 * w.value(x) + w.value(x - eps)) / (eps * eps);
            assert!((d1 - fd1).abs() <= 1e-6 * (1.0 + d1.abs()), "d1 {} vs fd {}", d1, fd1);
            assert!((d2 - fd2).abs() <= 1e-4 * (1.0 + d2.abs()), "d2 {} vs fd {}", d2, fd2);
        }
    }

    #[test]
    fn metric_identity_is_exact_zero() {
        let mut rng = StdRng::seed_from_u64(5);
        let fam = TestFamily::gaussian(1, 16).unwrap();
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 1, 6);
            assert_eq!(metric(&mu, &mu, &fam).unwrap(), 0.0);
        }
    }

    #[test]
    fn metric_constant_term_lower_bound() {
        let fam = TestFamily::gaussian(1, 16).unwrap();
        for &c in &[0.25, 1.0, 3.5] {
            let mu = FiniteMeasure::from_atoms_1d(&[(0.0, c)]).unwrap();
            let d = metric(&mu, &FiniteMeasure::empty(1), &fam).unwrap();
            assert!(d >= c, "d = {} below mass {}", d, c);
        }
    }

    #[test]
    fn metric_matches_straight_line_oracle() {
        // Independent oracle: re-evaluate the windowed monomials from their
        // defining formula and sum the truncated series directly.
        let fam = TestFamily::gaussian(1, 64).unwrap();
        let mu = FiniteMeasure::from_atoms_1d(&[(0.0, 1.0)]).unwrap();
        let lam = FiniteMeasure::from_atoms_1d(&[(0.5, 1.0)]).unwrap();
        let mut expected = 0.0;
        for (k, phi) in fam.functions().iter().enumerate() {
            let eval = |x: f64| -> f64 {
                match phi.factors()[0] {
                    Window1d::One => 1.0,
                    Window1d::Bump { degree, center, scale, amplitude } => {
                        let t = x - center;
                        amplitude * t.powi(degree as i32) * (-t * t / (2.0 * scale * scale)).exp()
                    }
                }
            };
            let diff = eval(0.0) - eval(0.5);
            expected += 0.5f64.powi(k as i32) / phi.weight() * diff * diff;
        }
        let expected = expected.sqrt();
        let got = metric(&mu, &lam, &fam).unwrap();
        assert!((got - expected).abs() <= 1e-13 * (1.0 + expected));
    }

    #[test]
    fn metric_symmetry_exact_and_triangle() {
        let mut rng = StdRng::seed_from_u64(17);
        let fam = TestFamily::gaussian(1, 32).unwrap();
        for _ in 0..1000 {
            let a = random_measure(&mut rng, 1, 4);
            let b = random_measure(&mut rng, 1, 4);
            let c = random_measure(&mut rng, 1, 4);
            let dab = metric(&a, &b, &fam).unwrap();
            let dba = metric(&b, &a, &fam).unwrap();
            assert_eq!(dab.to_bits(), dba.to_bits());
            let dac = metric(&a, &c, &fam).unwrap();
            let dcb = metric(&c, &b, &fam).unwrap();
            assert!(dab <= dac + dcb + 1e-12, "triangle violated: {} > {} + {}", dab, dac, dcb);
        }
    }

    #[test]
    fn zero_metric_implies_equal_family_integrals() {
        let fam = TestFamily::gaussian(1, 16).unwrap();
        // same measure, differently ordered atoms
        let mu = FiniteMeasure::from_atoms_1d(&[(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        let lam = FiniteMeasure::from_atoms_1d(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let d = metric(&mu, &lam, &fam).unwrap();
        if d == 0.0 {
            for phi in fam.functions() {
                let a = mu.integrate(|x| phi.value(x));
                let b = lam.integrate(|x| phi.value(x));
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn metric_dimension_mismatch_errors() {
        let fam = TestFamily::gaussian(1, 8).unwrap();
        let mu = FiniteMeasure::empty(2);
        assert!(metric(&mu, &FiniteMeasure::empty(2), &fam).is_err());
        assert!(metric(&mu, &FiniteMeasure::empty(1), &fam).is_err());
    }

    #[test]
    fn cutoff_plateau_identity() {
        let prof = CutoffProfile::new(1).unwrap();
        let mu = FiniteMeasure::from_atoms_1d(&[(0.0, 1.0), (-0.5, 2.0), (1.0, 0.25)]).unwrap();
        assert_eq!(cutoff(&mu, &prof), mu);
    }

    #[test]
    fn cutoff_kills_far_atoms() {
        let prof = CutoffProfile::new(1).unwrap();
        let mu = FiniteMeasure::from_atoms_1d(&[(5.0, 1.0)]).unwrap();
        let cut = cutoff(&mu, &prof);
        assert_eq!(cut.total_mass(), 0.0);
        assert_eq!(cut.len(), 0);
    }

    #[test]
    fn cutoff_midpoint_matches_profile_formula() {
        let prof = CutoffProfile::new(1).unwrap();
        let x = 1.5;
        let mu = FiniteMeasure::from_atoms_1d(&[(x, 2.0)]).unwrap();
        let cut = cutoff(&mu, &prof);
        // direct evaluation of ρ(x) = h(N+1−x)/(h(N+1−x)+h(x−N)) at x = N+0.5
        let h = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
        let rho = h(2.0 - x) / (h(2.0 - x) + h(x - 1.0));
        assert!(rho > 0.0 && rho < 1.0);
        assert!((cut.mass(0) - 2.0 * rho).abs() <= 1e-15);
        // ⟨f, μᴺ⟩ = ⟨f·ρᴺ, μ⟩
        let f = |y: f64| y.cos();
        let lhs = cut.integrate_1d(f);
        let rhs = mu.integrate_1d(|y| f(y) * prof.profile_1d(y));
        assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn cutoff_metric_distance_nonincreasing_in_level() {
        let fam = TestFamily::gaussian(1, 24).unwrap();
        let mu = FiniteMeasure::from_atoms_1d(&[(0.5, 1.0), (2.4, 0.5), (-3.2, 0.25)]).unwrap();
        let mut prev = f64::INFINITY;
        for level in 1..=5 {
            let prof = CutoffProfile::new(level).unwrap();
            let d = metric(&cutoff(&mu, &prof), &mu, &fam).unwrap();
            assert!(d <= prev + 1e-15);
            prev = d;
        }
        // once N exceeds the largest coordinate the cutoff is the identity
        let prof = CutoffProfile::new(4).unwrap();
        assert_eq!(metric(&cutoff(&mu, &prof), &mu, &fam).unwrap(), 0.0);
    }

    #[test]
    fn profile_smooth_range() {
        let prof = CutoffProfile::new(2).unwrap();
        for i in 0..=600 {
            let x = -4.0 + 8.0 * i as f64 / 600.0;
            let v = prof.profile_1d(x);
            assert!((0.0..=1.0).contains(&v));
            if x.abs() <= 2.0 {
                assert_eq!(v, 1.0);
            }
            if x.abs() >= 3.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mu = FiniteMeasure::new(
            2,
            &[(vec![0.5, -1.25], 1.0), (vec![3.0, 0.0], 0.125)],
        )
        .unwrap();
        let text = mu.to_text();
        let back = FiniteMeasure::from_text(&text).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn text_parse_errors_carry_line() {
        let err = FiniteMeasure::from_text("dim=1 atoms=1\nbad line here").unwrap_err();
        assert!(matches!(err, MeasureError::Parse { line: 2, .. }));
    }
}
