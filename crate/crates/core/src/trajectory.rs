//! Homodyne records and the quantum filter.
//!
//! The conditional state obeys the stochastic master equation
//!
//! ```text
//! dρ = −i[H, ρ] dt + (LρL† − ½L†Lρ − ½ρL†L) dt
//!      + (Lρ + ρL† − Tr[(L + L†)ρ] ρ) (dy − Tr[(L + L†)ρ] dt)
//! ```
//!
//! integrated with Euler–Maruyama. Each step is followed by Hermitian
//! symmetrisation, clipping of negative eigenvalues and trace
//! renormalisation; the pre-projection minimum eigenvalue is kept as a
//! diagnostic.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{ExperimentSpec, SystemSpec};
use crate::opalg::{expect, trace_product, DensityOperator, OpError, Operator, C64, I};

/// Pre-projection negativity above which a warning is logged. Smaller clips
/// are routine at O(dt) and logged at debug level.
const NEGATIVITY_WARN: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("non-finite input to the filter step")]
    NonFinite,
    #[error("record has {found} increments, grid needs {expected}")]
    GridMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Op(#[from] OpError),
}

/// Measurement record: one increment `dy_k` per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub dy: Vec<f64>,
    pub seed_used: u64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.dy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    /// Grid times `0, dt, …, n·dt` (one more than the number of increments).
    pub fn times(&self) -> Vec<f64> {
        (0..=self.dy.len()).map(|k| k as f64 * self.dt).collect()
    }
}

/// Counter-based generator for trajectory `traj_id` of a run seeded with `seed`.
///
/// ChaCha20 keyed by the seed, with the trajectory index selecting the stream,
/// so substreams do not depend on scheduling or thread count.
pub fn trajectory_rng(seed: u64, traj_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(traj_id);
    rng
}

/// Deterministic part of the SME increment, before any projection.
pub fn sme_increment(rho: &Operator, dy: f64, dt: f64, sys: &SystemSpec) -> Operator {
    let h = sys.hamiltonian();
    let l = sys.coupling();
    let ld = l.adjoint();
    let ldl = &ld * l;
    let l_rho = l * rho;
    let rho_ld = rho * &ld;
    let mean = (l_rho.trace() + rho_ld.trace()).re;

    let commutator = h * rho - rho * h;
    let lindblad = &l_rho * &ld - (&ldl * rho).scale_re(0.5) - (rho * &ldl).scale_re(0.5);
    let drift = commutator.scale(-I) + lindblad;
    let diffusion = &l_rho + &rho_ld - rho.scale_re(mean);
    drift.scale_re(dt) + diffusion.scale_re(dy - mean * dt)
}

/// Unprojected Euler–Maruyama update `ρ + dρ`.
pub fn sme_euler(rho: &DensityOperator, dy: f64, dt: f64, sys: &SystemSpec) -> Operator {
    let rho = rho.as_operator();
    rho + &sme_increment(rho, dy, dt, sys)
}

/// What the projection after an SME step had to repair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    pub min_eigenvalue: f64,
    pub trace_error: f64,
    pub hermiticity_defect: f64,
}

/// One filter step followed by projection onto the density operators.
pub fn sme_step_diagnosed(
    rho: &DensityOperator,
    dy: f64,
    dt: f64,
    sys: &SystemSpec,
) -> Result<(DensityOperator, StepDiagnostics), TrajectoryError> {
    if !dy.is_finite() || !dt.is_finite() {
        return Err(TrajectoryError::NonFinite);
    }
    let raw = sme_euler(rho, dy, dt, sys);
    if !raw.is_finite() {
        return Err(TrajectoryError::NonFinite);
    }
    let trace_error = (raw.trace() - C64::new(1.0, 0.0)).norm();
    let hermiticity_defect = raw.hermiticity_defect();
    let (next, min_eigenvalue) = DensityOperator::project(&raw)?;
    if min_eigenvalue < -NEGATIVITY_WARN {
        log::warn!("filter step clipped eigenvalue {min_eigenvalue:e}; dt may be too coarse");
    } else if min_eigenvalue < 0.0 {
        log::debug!("filter step clipped eigenvalue {min_eigenvalue:e}");
    }
    Ok((next, StepDiagnostics { min_eigenvalue, trace_error, hermiticity_defect }))
}

pub fn sme_step(rho: &DensityOperator, dy: f64, dt: f64, sys: &SystemSpec) -> Result<DensityOperator, TrajectoryError> {
    sme_step_diagnosed(rho, dy, dt, sys).map(|(r, _)| r)
}

/// Samples a homodyne record from the true system.
///
/// The truth-side conditional state starts at `sys.rho0` and each increment
/// is `dy = Tr[(L + L†)ρ] dt + dW`, `dW ~ N(0, dt)`.
pub fn simulate_truth<R: Rng + ?Sized>(
    sys: &SystemSpec,
    exp: &ExperimentSpec,
    rng: &mut R,
) -> Result<TrajectoryRecord, TrajectoryError> {
    let n = exp.n_steps();
    let dt = exp.dt;
    let quadrature = sys.quadrature();
    let sqrt_dt = dt.sqrt();
    let mut rho = sys.rho0().clone();
    let mut dy = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = expect(&rho, &quadrature)?.re;
        let z: f64 = rng.sample(StandardNormal);
        let inc = mean * dt + sqrt_dt * z;
        rho = sme_step(&rho, inc, dt, sys)?;
        dy.push(inc);
    }
    Ok(TrajectoryRecord { dt, dy, seed_used: exp.seed })
}

/// Filtered states and estimates on the grid `t_k = k·dt`, `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct FilterPath {
    pub rho: Vec<DensityOperator>,
    /// `estimates[k][j] = Tr(ρ_k X_j)` for the configured observables.
    pub estimates: Vec<Vec<C64>>,
    /// Smallest eigenvalue seen before any projection along the path.
    pub min_eigenvalue: f64,
    /// Largest trace error seen before renormalisation.
    pub max_trace_error: f64,
}

/// Runs the filter along a record from `filter_prior`.
pub fn filter_from(
    record: &TrajectoryRecord,
    prior: &DensityOperator,
    sys: &SystemSpec,
    observables: &[&Operator],
) -> Result<FilterPath, TrajectoryError> {
    let estimate = |rho: &DensityOperator| -> Result<Vec<C64>, TrajectoryError> {
        observables.iter().map(|x| Ok(trace_product(rho.as_operator(), x)?)).collect()
    };
    let mut rho = vec![prior.clone()];
    let mut estimates = vec![estimate(prior)?];
    let mut min_eigenvalue = f64::INFINITY;
    let mut max_trace_error = 0.0f64;
    for &dy in &record.dy {
        let (next, diag) = sme_step_diagnosed(rho.last().expect("non-empty"), dy, record.dt, sys)?;
        min_eigenvalue = min_eigenvalue.min(diag.min_eigenvalue);
        max_trace_error = max_trace_error.max(diag.trace_error);
        estimates.push(estimate(&next)?);
        rho.push(next);
    }
    Ok(FilterPath { rho, estimates, min_eigenvalue, max_trace_error })
}

/// Filter driven by a record on the experiment grid, starting at `exp.filter_rho0`.
pub fn filter_trajectory(
    record: &TrajectoryRecord,
    sys: &SystemSpec,
    exp: &ExperimentSpec,
) -> Result<FilterPath, TrajectoryError> {
    let expected = exp.n_steps();
    if record.len() != expected {
        return Err(TrajectoryError::GridMismatch { expected, found: record.len() });
    }
    let ops: Vec<&Operator> = exp.observables.iter().map(|o| &o.op).collect();
    filter_from(record, exp.filter_prior(sys), sys, &ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observable;
    use crate::opalg::Tolerances;

    fn qubit(h: Operator, l: Operator, rho0: DensityOperator) -> SystemSpec {
        SystemSpec::new(h, l, rho0).unwrap()
    }

    fn experiment(dt: f64, n: usize, seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            dt,
            t_final: dt * n as f64,
            tau: 0.0,
            n_traj: 1,
            seed,
            observables: vec![Observable::new("id", Operator::identity(2)), Observable::new("sz", Operator::pauli_z())],
            filter_rho0: None,
        }
    }

    #[test]
    fn zero_generators_leave_state_unchanged() {
        let rho = DensityOperator::new(Operator::from_real(2, &[0.7, 0.2, 0.2, 0.3])).unwrap();
        let sys = qubit(Operator::zeros(2), Operator::zeros(2), rho.clone());
        for dy in [-0.3, 0.0, 0.11] {
            let next = sme_step(&rho, dy, 0.01, &sys).unwrap();
            assert!(next.as_operator().max_abs_diff(rho.as_operator()) < 1e-15);
        }
    }

    #[test]
    fn maximally_mixed_step_moves_along_sigma_z() {
        // Lindblad drift vanishes and the innovation mean is zero, so the
        // raw update is I/2 + σz·dy.
        let mixed = DensityOperator::maximally_mixed(2);
        let sys = qubit(Operator::zeros(2), Operator::pauli_z(), mixed.clone());
        let dy = 0.037;
        let raw = sme_euler(&mixed, dy, 1e-3, &sys);
        let expected = Operator::from_real(2, &[0.5 + dy, 0.0, 0.0, 0.5 - dy]);
        assert!(raw.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn non_finite_increment_rejected() {
        let sys = qubit(Operator::zeros(2), Operator::pauli_z(), DensityOperator::plus());
        assert!(matches!(sme_step(sys.rho0(), f64::NAN, 0.1, &sys), Err(TrajectoryError::NonFinite)));
    }

    #[test]
    fn pure_noise_record_has_unit_variance() {
        let sys = qubit(Operator::zeros(2), Operator::zeros(2), DensityOperator::plus());
        let exp = experiment(1e-3, 10_000, 11);
        let rec = simulate_truth(&sys, &exp, &mut trajectory_rng(11, 0)).unwrap();
        let scaled: Vec<f64> = rec.dy.iter().map(|d| d / exp.dt.sqrt()).collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let var = scaled.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (scaled.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn same_seed_same_record() {
        let sys = qubit(Operator::pauli_x(), Operator::pauli_z(), DensityOperator::plus());
        let exp = experiment(1e-2, 200, 5);
        let a = simulate_truth(&sys, &exp, &mut trajectory_rng(5, 3)).unwrap();
        let b = simulate_truth(&sys, &exp, &mut trajectory_rng(5, 3)).unwrap();
        let c = simulate_truth(&sys, &exp, &mut trajectory_rng(5, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a.dy.iter().zip(&c.dy).all(|(x, y)| x.to_bits() != y.to_bits()));
    }

    #[test]
    fn eigenstate_record_mean() {
        // L = σz, ρ = |0⟩⟨0|: dy/dt has mean 2 and variance 1/dt per step.
        let sys = qubit(Operator::zeros(2), Operator::pauli_z(), DensityOperator::basis(2, 0));
        let exp = experiment(1e-2, 20_000, 99);
        let rec = simulate_truth(&sys, &exp, &mut trajectory_rng(99, 0)).unwrap();
        let n = rec.len() as f64;
        let mean = rec.dy.iter().sum::<f64>() / (n * exp.dt);
        let se = 1.0 / (n * exp.dt).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn filter_path_invariants() {
        let sys = qubit(Operator::pauli_x().scale_re(0.8), Operator::lowering().scale_re(0.9), DensityOperator::plus());
        let exp = experiment(1e-3, 2000, 1);
        let rec = simulate_truth(&sys, &exp, &mut trajectory_rng(1, 0)).unwrap();
        let path = filter_trajectory(&rec, &sys, &exp).unwrap();
        assert_eq!(path.rho.len(), 2001);
        assert!(path.max_trace_error < 1e-12);
        let tol = Tolerances { herm: 1e-12, trace: 1e-12, psd: 1e-12 };
        for (rho, est) in path.rho.iter().zip(&path.estimates) {
            DensityOperator::with_tolerances(rho.as_operator().clone(), tol).unwrap();
            assert!((est[0] - 1.0).norm() < 1e-12);
            let direct = expect(rho, &Operator::pauli_z()).unwrap();
            assert!((est[1] - direct).norm() < 1e-12);
        }
        let short = TrajectoryRecord { dy: rec.dy[..10].to_vec(), ..rec };
        assert!(matches!(filter_trajectory(&short, &sys, &exp), Err(TrajectoryError::GridMismatch { .. })));
    }

    #[test]
    fn trace_and_hermiticity_exact_over_many_steps() {
        let sys = qubit(Operator::pauli_y().scale_re(0.5), Operator::pauli_z().scale_re(0.7), DensityOperator::plus());
        let exp = experiment(1e-3, 10_000, 2);
        let rec = simulate_truth(&sys, &exp, &mut trajectory_rng(2, 0)).unwrap();
        let path = filter_trajectory(&rec, &sys, &exp).unwrap();
        for rho in &path.rho {
            assert!((rho.as_operator().trace().re - 1.0).abs() <= 1e-12);
            assert!(rho.as_operator().hermiticity_defect() <= 1e-12);
        }
        assert!(path.max_trace_error <= 1e-6);
    }
}
