//! Fixed-point smoother in density-operator form.
//!
//! For an estimand fixed at time `τ` the smoother carries a pair
//! `(ρ⁺, ρ⁻)` with `ρ⁺` Hermitian and `ρ⁻` anti-Hermitian. The estimate of
//! `X` at `τ` given the record up to `t ≥ τ` is
//!
//! ```text
//! q⁺ = Tr(ρ⁺ X)   symmetric part, real for Hermitian X
//! q⁻ = Tr(ρ⁻ X)   skew part, imaginary for Hermitian X
//! ```
//!
//! Both start from the filter at `τ` (`ρ⁺ = ρ_τ`, `ρ⁻ = 0`) and are driven
//! by the filter innovation `w = dy − Tr(Mρ_t) dt` with `M = L + L†`:
//!
//! ```text
//! dρ⁺ = ½([ρ⁺, M]₊ + [ρ⁻, M]₋ − 2 Tr(Mρ_t) ρ⁺) w
//! dρ⁻ = ½([ρ⁺, M]₋ + [ρ⁻, M]₊ − 2 Tr(Mρ_t) ρ⁻) w
//! ```
//!
//! This closed form holds only when `L` is normal and commutes with `H`; the
//! constructor of [`Qnd`] enforces that.

use thiserror::Error;

use crate::model::{qnd_report, ExperimentSpec, QndReport, SystemSpec};
use crate::opalg::{bracket, trace_product, DensityOperator, OpError, Operator, Sign, C64};
use crate::trajectory::{FilterPath, TrajectoryRecord};

/// Hermiticity drift above which a repair is logged as a warning.
const DRIFT_WARN: f64 = 1e-9;
/// Trace drift above which a repair is logged as a warning. Drift of order
/// the filter's positivity clip is routine.
const TRACE_DRIFT_WARN: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum SmootherError {
    #[error(
        "continuous smoothing requires the QND condition: |[L, L†]| = {:.3e}, |[H, L]| = {:.3e}",
        .0.normality_defect, .0.hamiltonian_commutator
    )]
    QndRequired(QndReport),
    #[error("non-finite input to the smoother step")]
    NonFinite,
    #[error("smoother state at t = {state_t} is before tau = {tau}")]
    BeforeTau { state_t: f64, tau: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

/// Witness that a system satisfies the QND condition, carrying `M = L + L†`.
#[derive(Debug, Clone)]
pub struct Qnd {
    quadrature: Operator,
}

impl Qnd {
    pub fn check(sys: &SystemSpec) -> Result<Self, SmootherError> {
        let report = qnd_report(sys);
        if !report.holds() {
            return Err(SmootherError::QndRequired(report));
        }
        Ok(Self { quadrature: sys.quadrature() })
    }

    pub fn quadrature(&self) -> &Operator {
        &self.quadrature
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub rho_plus: Operator,
    pub rho_minus: Operator,
    pub t: f64,
    pub tau: f64,
}

/// Starts the smoother from the filter state at `tau`.
pub fn smoother_init(rho_tau: &DensityOperator, tau: f64) -> SmootherState {
    SmootherState { rho_plus: rho_tau.as_operator().clone(), rho_minus: Operator::zeros(rho_tau.dim()), t: tau, tau }
}

/// Size of the repairs applied after one smoother step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmootherStepDiagnostics {
    /// Max of the Hermiticity defect of `ρ⁺` and the anti-Hermiticity defect of `ρ⁻`.
    pub structure_drift: f64,
    /// Max of `|Tr ρ⁺ − 1|` and `|Tr ρ⁻|` before renormalisation.
    pub trace_drift: f64,
}

/// One Euler–Maruyama step, followed by repair: `ρ⁺` is replaced by its
/// Hermitian part rescaled to unit trace, `ρ⁻` by its anti-Hermitian part
/// with the trace removed.
pub fn smoother_step_diagnosed(
    state: &SmootherState,
    rho_filter: &DensityOperator,
    dy: f64,
    dt: f64,
    qnd: &Qnd,
) -> Result<(SmootherState, SmootherStepDiagnostics), SmootherError> {
    if !dy.is_finite() || !dt.is_finite() {
        return Err(SmootherError::NonFinite);
    }
    if state.t < state.tau - 1e-12 {
        return Err(SmootherError::BeforeTau { state_t: state.t, tau: state.tau });
    }
    let m = qnd.quadrature();
    let mean = trace_product(rho_filter.as_operator(), m)?.re;
    let w = dy - mean * dt;
    let plus = &state.rho_plus;
    let minus = &state.rho_minus;

    let gain_plus = bracket(plus, m, Sign::Plus)? + bracket(minus, m, Sign::Minus)? - plus.scale_re(2.0 * mean);
    let gain_minus = bracket(plus, m, Sign::Minus)? + bracket(minus, m, Sign::Plus)? - minus.scale_re(2.0 * mean);
    let raw_plus = plus + &gain_plus.scale_re(0.5 * w);
    let raw_minus = minus + &gain_minus.scale_re(0.5 * w);
    if !raw_plus.is_finite() || !raw_minus.is_finite() {
        return Err(SmootherError::NonFinite);
    }
    let structure_drift = raw_plus.hermiticity_defect().max(raw_minus.anti_hermiticity_defect());
    let plus = raw_plus.hermitian_part();
    let minus = raw_minus.anti_hermitian_part();
    let trace_plus = plus.trace().re;
    let trace_minus = minus.trace();
    let trace_drift = (trace_plus - 1.0).abs().max(trace_minus.norm());
    if structure_drift > DRIFT_WARN || trace_drift > TRACE_DRIFT_WARN {
        log::warn!("smoother repair at t = {}: structure {structure_drift:e}, trace {trace_drift:e}", state.t + dt);
    } else if trace_drift > 0.0 {
        log::debug!("smoother repair at t = {}: structure {structure_drift:e}, trace {trace_drift:e}", state.t + dt);
    }
    if trace_plus.is_nan() || trace_plus.abs() <= f64::EPSILON {
        return Err(SmootherError::NonFinite);
    }
    let shift = Operator::identity(minus.dim()).scale(trace_minus / minus.dim() as f64);
    let next = SmootherState {
        rho_plus: plus.scale_re(1.0 / trace_plus),
        rho_minus: &minus - &shift,
        t: state.t + dt,
        tau: state.tau,
    };
    Ok((next, SmootherStepDiagnostics { structure_drift, trace_drift }))
}

pub fn smoother_step(
    state: &SmootherState,
    rho_filter: &DensityOperator,
    dy: f64,
    dt: f64,
    qnd: &Qnd,
) -> Result<SmootherState, SmootherError> {
    smoother_step_diagnosed(state, rho_filter, dy, dt, qnd).map(|(s, _)| s)
}

/// Symmetric and skew parts of a smoothed estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedEstimate {
    pub plus: C64,
    pub minus: C64,
}

impl SmoothedEstimate {
    /// Combined estimate `q⁺ + q⁻`.
    pub fn total(&self) -> C64 {
        self.plus + self.minus
    }
}

pub fn smoothed_estimate(state: &SmootherState, x: &Operator) -> Result<SmoothedEstimate, SmootherError> {
    Ok(SmoothedEstimate { plus: trace_product(&state.rho_plus, x)?, minus: trace_product(&state.rho_minus, x)? })
}

/// Smoothed estimates on the grid from `tau` to the end of the record.
#[derive(Debug, Clone)]
pub struct SmootherPath {
    /// Grid index of `tau`; `estimates[0]` belongs to this step.
    pub tau_step: usize,
    /// `estimates[k][j]` is the estimate of observable `j` at grid step `tau_step + k`.
    pub estimates: Vec<Vec<SmoothedEstimate>>,
    /// Largest `|Tr ρ⁺ − 1|` after repair.
    pub max_trace_plus_error: f64,
    /// Largest `|Tr ρ⁻|` after repair.
    pub max_trace_minus: f64,
    pub max_structure_drift: f64,
    pub max_trace_drift: f64,
}

/// Runs the smoother from grid step `tau_step` along a filtered record.
pub fn smooth_from(
    record: &TrajectoryRecord,
    filter: &FilterPath,
    tau_step: usize,
    qnd: &Qnd,
    observables: &[&Operator],
) -> Result<SmootherPath, SmootherError> {
    if filter.rho.len() != record.len() + 1 {
        return Err(SmootherError::GridMismatch(format!(
            "filter has {} states for {} increments",
            filter.rho.len(),
            record.len()
        )));
    }
    if tau_step > record.len() {
        return Err(SmootherError::GridMismatch(format!("tau step {tau_step} beyond record")));
    }
    let tau = tau_step as f64 * record.dt;
    let mut state = smoother_init(&filter.rho[tau_step], tau);
    let estimate = |s: &SmootherState| -> Result<Vec<SmoothedEstimate>, SmootherError> {
        observables.iter().map(|x| smoothed_estimate(s, x)).collect()
    };
    let mut estimates = vec![estimate(&state)?];
    let mut max_trace_plus_error = 0.0f64;
    let mut max_trace_minus = 0.0f64;
    let mut max_structure_drift = 0.0f64;
    let mut max_trace_drift = 0.0f64;
    for k in tau_step..record.len() {
        let (next, diag) = smoother_step_diagnosed(&state, &filter.rho[k], record.dy[k], record.dt, qnd)?;
        state = next;
        max_structure_drift = max_structure_drift.max(diag.structure_drift);
        max_trace_drift = max_trace_drift.max(diag.trace_drift);
        max_trace_plus_error = max_trace_plus_error.max((state.rho_plus.trace() - 1.0).norm());
        max_trace_minus = max_trace_minus.max(state.rho_minus.trace().norm());
        estimates.push(estimate(&state)?);
    }
    Ok(SmootherPath {
        tau_step,
        estimates,
        max_trace_plus_error,
        max_trace_minus,
        max_structure_drift,
        max_trace_drift,
    })
}

/// Smoother for the configured experiment: starts at `exp.tau` and emits
/// `(q⁺, q⁻)` for every observable up to `t_final`.
pub fn smooth_trajectory(
    record: &TrajectoryRecord,
    filter: &FilterPath,
    sys: &SystemSpec,
    exp: &ExperimentSpec,
) -> Result<SmootherPath, SmootherError> {
    let qnd = Qnd::check(sys)?;
    if record.len() != exp.n_steps() || (record.dt - exp.dt).abs() > 1e-15 * exp.dt.max(1.0) {
        return Err(SmootherError::GridMismatch(format!(
            "record has {} steps of {}, experiment needs {} steps of {}",
            record.len(),
            record.dt,
            exp.n_steps(),
            exp.dt
        )));
    }
    let ops: Vec<&Operator> = exp.observables.iter().map(|o| &o.op).collect();
    smooth_from(record, filter, exp.tau_step(), &qnd, &ops)
}
