//! Statistical validation of the Itô-type decomposition of cylinder
//! functionals on simulated traces.
//!
//! For a trace (μ_k) and a cylinder functional F the discrete martingale part
//! is
//!
//! ```text
//! M_F = F(μ_t) − F(μ_s) − Σ_k h · drift(F, μ_k),
//! ```
//!
//! with the drift integrals as left-endpoint Riemann sums on the simulation
//! grid. Mean-zero z-tests check the martingale property; the quadratic
//! variation of M_F is compared against the predicted density
//! `Σ_k h·⟨γ (δF/δμ)², μ_k⟩`.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::functional::{CylinderFunctional, FunctionalError};
use crate::measure::FiniteMeasure;
use crate::sim::{Policy, SimError, Trace};
use crate::functional::ControlledDynamics;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("trace does not carry field `{0}`")]
    FieldMissing(String),
}

/// Outcome of one statistical check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Both sides of a comparison were below noise floor.
    VacuousPass,
}

impl Verdict {
    pub fn passed(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::VacuousPass)
    }
}

/// Report of the Itô checks for one functional over one interval.
#[derive(Debug, Clone)]
pub struct ItoReport {
    pub functional: String,
    pub interval: (f64, f64),
    pub paths: usize,
    pub mean_residual: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub qv_lhs: f64,
    pub qv_rhs: f64,
    pub qv_rel_gap: f64,
    pub verdict: Verdict,
}

/// Converts a two-sided tail probability into the |z| acceptance threshold.
pub fn sigma_from_two_sided_alpha(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

/// Indices of a functional's inner fields inside a trace's registered list.
fn field_indices(trace: &Trace, functional: &CylinderFunctional) -> Result<Vec<usize>, HarnessError> {
    functional
        .inner_fields()
        .iter()
        .map(|phi| {
            trace
                .field_index(phi.name())
                .map_err(|_| HarnessError::FieldMissing(phi.name().to_string()))
        })
        .collect()
}

/// The discrete martingale part `M_F` of Theorem-1 type over `[s, t]`,
/// computed from the trace's recorded per-step statistics.
///
/// For linear `F(μ) = ⟨φ,μ⟩` this reproduces
/// [`Trace::martingale_increment`] bit for bit: the same recorded arrays are
/// combined in the same summation order.
pub fn ito_residual(
    trace: &Trace,
    functional: &CylinderFunctional,
    s: f64,
    t: f64,
) -> Result<f64, HarnessError> {
    let idx = field_indices(trace, functional)?;
    let ks = trace.step_index(s)?;
    let kt = trace.step_index(t)?;
    if ks >= kt {
        return Err(HarnessError::Sim(SimError::InvalidConfig("need s < t".into())));
    }
    let m = idx.len();
    let h = trace.step;
    let mut v = vec![0.0f64; m];
    let mut compensator = 0.0f64;
    for k in ks..kt {
        for (slot, &fi) in idx.iter().enumerate() {
            v[slot] = trace.field_values[fi][k];
        }
        let t_k = trace.times[k];
        let outer = functional.outer();
        let mut drift = 0.0f64;
        if functional.is_time_dependent() {
            drift += outer
                .dt(t_k, &v)
                .ok_or_else(|| FunctionalError::TimeRequired(functional.name().to_string()))?;
        }
        for (slot, &fi) in idx.iter().enumerate() {
            drift += outer.grad(t_k, &v, slot) * trace.field_generator[fi][k];
        }
        for i in 0..m {
            for j in i..m {
                let hij = outer
                    .hess(t_k, &v, i, j)
                    .ok_or_else(|| FunctionalError::MissingHessian(functional.name().to_string()))?;
                if hij != 0.0 {
                    let weight = if i == j { 0.5 } else { 1.0 };
                    drift += weight * hij * trace.gamma_moments[trace.pair_index(idx[i], idx[j])][k];
                }
            }
        }
        compensator += h * drift;
    }
    let value_at = |k: usize| -> f64 {
        let vals: Vec<f64> = idx.iter().map(|&fi| trace.field_values[fi][k]).collect();
        functional.eval_at(trace.times[k], &vals)
    };
    Ok(value_at(kt) - value_at(ks) - compensator)
}

/// The predicted quadratic variation `Σ_k h·⟨γ (δF/δμ)², μ_k⟩` over `[s, t]`
/// from the recorded γ-moments.
pub fn predicted_qv(
    trace: &Trace,
    functional: &CylinderFunctional,
    s: f64,
    t: f64,
) -> Result<f64, HarnessError> {
    let idx = field_indices(trace, functional)?;
    let ks = trace.step_index(s)?;
    let kt = trace.step_index(t)?;
    let m = idx.len();
    let h = trace.step;
    let outer = functional.outer();
    let mut v = vec![0.0f64; m];
    let mut acc = 0.0f64;
    for k in ks..kt {
        for (slot, &fi) in idx.iter().enumerate() {
            v[slot] = trace.field_values[fi][k];
        }
        let t_k = trace.times[k];
        let mut density = 0.0f64;
        for i in 0..m {
            let gi = outer.grad(t_k, &v, i);
            for j in i..m {
                let gj = outer.grad(t_k, &v, j);
                let weight = if i == j { 1.0 } else { 2.0 };
                density += weight * gi * gj * trace.gamma_moments[trace.pair_index(idx[i], idx[j])][k];
            }
        }
        acc += h * density;
    }
    Ok(acc)
}

/// Residual and predicted quadratic variation of one path.
#[derive(Debug, Clone, Copy)]
pub struct PathStats {
    pub residual: f64,
    pub predicted_qv: f64,
}

pub fn path_statistics(
    trace: &Trace,
    functional: &CylinderFunctional,
    s: f64,
    t: f64,
) -> Result<PathStats, HarnessError> {
    Ok(PathStats {
        residual: ito_residual(trace, functional, s, t)?,
        predicted_qv: predicted_qv(trace, functional, s, t)?,
    })
}

/// Recomputes `M_F` directly from measure snapshots (requires snapshots at
/// every step). This is the reference path used to cross-check the recorded
/// statistics and the cutoff identity.
pub fn ito_residual_on_measures(
    snapshots: &[(f64, FiniteMeasure)],
    functional: &CylinderFunctional,
    dynamics: &ControlledDynamics,
    policy: &Policy,
) -> Result<f64, HarnessError> {
    assert!(snapshots.len() >= 2, "need at least two snapshots");
    let mut compensator = 0.0f64;
    for window in snapshots.windows(2) {
        let (t_k, ref mu_k) = window[0];
        let h = window[1].0 - t_k;
        let mass = mu_k.total_mass();
        let action = |x: &[f64]| policy.action(t_k, x, mass, mu_k);
        let drift =
            crate::functional::ito_drift(functional, mu_k, &action, dynamics, Some(t_k))?;
        compensator += h * drift;
    }
    let (t0, ref mu0) = snapshots[0];
    let (t1, ref mu1) = snapshots[snapshots.len() - 1];
    Ok(functional.eval(t1, mu1) - functional.eval(t0, mu0) - compensator)
}

/// Mean-zero z-test fragment.
#[derive(Debug, Clone, Copy)]
pub struct MeanZeroTest {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub verdict: Verdict,
}

/// Tests the sample mean against zero: `z = mean / (std/√n)`, pass iff
/// |z| ≤ `sigma`. A degenerate sample (zero spread) passes only if the mean
/// is exactly zero.
pub fn test_mean_zero(residuals: &[f64], sigma: f64) -> Result<MeanZeroTest, HarnessError> {
    if residuals.len() < 30 {
        return Err(HarnessError::TooFewSamples { need: 30, got: residuals.len() });
    }
    let n = residuals.len();
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    let std_error = (var / n as f64).sqrt();
    let (z_score, verdict) = if std_error == 0.0 {
        if mean == 0.0 {
            (0.0, Verdict::Pass)
        } else {
            (f64::INFINITY, Verdict::Fail)
        }
    } else {
        let z = mean / std_error;
        (z, if z.abs() <= sigma { Verdict::Pass } else { Verdict::Fail })
    };
    Ok(MeanZeroTest { n, mean, std_error, z_score, verdict })
}

/// Quadratic-variation comparison fragment.
#[derive(Debug, Clone, Copy)]
pub struct QvTest {
    pub paths: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_gap: f64,
    pub verdict: Verdict,
}

const QV_NOISE_FLOOR: f64 = 1e-12;

/// Compares `E[M_F²]` against the predicted `E[Σ h⟨γ(δF/δμ)²,μ⟩]` over a set
/// of traces; passes when the relative gap is within `rel_tol`.
pub fn test_quadratic_variation(
    traces: &[Trace],
    functional: &CylinderFunctional,
    s: f64,
    t: f64,
    rel_tol: f64,
) -> Result<QvTest, HarnessError> {
    if traces.len() < 100 {
        return Err(HarnessError::TooFewSamples { need: 100, got: traces.len() });
    }
    let stats: Result<Vec<PathStats>, HarnessError> =
        traces.iter().map(|tr| path_statistics(tr, functional, s, t)).collect();
    let stats = stats?;
    Ok(qv_from_stats(&stats, rel_tol))
}

/// The same comparison from precomputed per-path statistics (streaming runs).
pub fn qv_from_stats(stats: &[PathStats], rel_tol: f64) -> QvTest {
    let n = stats.len() as f64;
    let lhs = stats.iter().map(|s| s.residual * s.residual).sum::<f64>() / n;
    let rhs = stats.iter().map(|s| s.predicted_qv).sum::<f64>() / n;
    if lhs.abs() < QV_NOISE_FLOOR && rhs.abs() < QV_NOISE_FLOOR {
        return QvTest { paths: stats.len(), lhs, rhs, rel_gap: 0.0, verdict: Verdict::VacuousPass };
    }
    let rel_gap = (lhs - rhs).abs() / rhs.abs().max(QV_NOISE_FLOOR);
    let verdict = if rel_gap <= rel_tol { Verdict::Pass } else { Verdict::Fail };
    QvTest { paths: stats.len(), lhs, rhs, rel_gap, verdict }
}

/// Assembles the full report for one functional from per-path statistics.
pub fn build_report(
    functional: &CylinderFunctional,
    interval: (f64, f64),
    stats: &[PathStats],
    sigma: f64,
    qv_rel_tol: f64,
) -> Result<ItoReport, HarnessError> {
    let residuals: Vec<f64> = stats.iter().map(|s| s.residual).collect();
    let mz = test_mean_zero(&residuals, sigma)?;
    let qv = qv_from_stats(stats, qv_rel_tol);
    Ok(ItoReport {
        functional: functional.name().to_string(),
        interval,
        paths: stats.len(),
        mean_residual: mz.mean,
        std_error: mz.std_error,
        z_score: mz.z_score,
        qv_lhs: qv.lhs,
        qv_rhs: qv.rhs,
        qv_rel_gap: qv.rel_gap,
        verdict: mz.verdict,
    })
}
