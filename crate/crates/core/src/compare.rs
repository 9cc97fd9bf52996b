//! Convergence of the continuous-time filter and smoother to the exact
//! discrete model.
//!
//! Each binary record `y` of the discrete model is fed to the SDE
//! integrators as increments `dy_k = y_k √dt`; the integrated estimates are
//! then compared with the exact per-record values on every prefix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Observable, SystemSpec};
use crate::opalg::{trace_product, Operator};
use crate::oracle::{enumerate_records, BranchTable, DiscreteModel, OracleError};
use crate::smoother::{smooth_from, Qnd, SmootherError};
use crate::trajectory::{filter_from, TrajectoryError, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error("no time steps given")]
    Empty,
}

/// Largest deviation from the oracle at one step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub dt: f64,
    pub n_steps: usize,
    /// Max over records, prefixes and observables of `|π_SDE − π_oracle|`.
    pub filter_error: f64,
    /// Max of `|q⁺_SDE − q⁺_oracle|`; `None` without the QND condition.
    pub smoother_plus_error: Option<f64>,
    /// Max of `|q⁻_SDE − q⁻_oracle|`.
    pub smoother_minus_error: Option<f64>,
}

impl CompareRow {
    pub fn smoother_error(&self) -> Option<f64> {
        Some(self.smoother_plus_error?.max(self.smoother_minus_error?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub n_steps: usize,
    pub estimand_step: usize,
    pub observables: Vec<String>,
    pub rows: Vec<CompareRow>,
    pub filter_order: Option<f64>,
    pub smoother_order: Option<f64>,
}

/// Least-squares slope of `ln err` against `ln dt`; `None` with fewer than
/// two distinct step sizes or a non-positive error.
pub fn fitted_order(dts: &[f64], errors: &[f64]) -> Option<f64> {
    if dts.len() != errors.len() || errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return None;
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Per-record error of the SDE filter and smoother against the oracle at one step size.
pub fn compare_at(
    sys: &SystemSpec,
    observables: &[Observable],
    n_steps: usize,
    estimand_step: usize,
    dt: f64,
    max_joint_dim: usize,
) -> Result<CompareRow, CompareError> {
    let model = DiscreteModel::build_with_cap(sys, n_steps, dt, max_joint_dim)?;
    let full = enumerate_records(&model, observables, estimand_step)?;
    let prefixes: Vec<BranchTable> = (0..=n_steps).map(|k| full.marginal(&model, k)).collect::<Result<_, _>>()?;
    let qnd = Qnd::check(sys).ok();
    let ops: Vec<&Operator> = observables.iter().map(|o| &o.op).collect();

    let mut filter_error = 0.0f64;
    let mut plus_error = 0.0f64;
    let mut minus_error = 0.0f64;
    for (r, branch) in full.branches.iter().enumerate() {
        let record = TrajectoryRecord { dt, dy: branch.increments(dt), seed_used: 0 };
        let filter = filter_from(&record, sys.rho0(), sys, &ops)?;
        for (k, table) in prefixes.iter().enumerate() {
            let oracle_state = &table.branches[r >> (n_steps - k)].filter_state;
            let Some(oracle_state) = oracle_state else { continue };
            for (j, x) in ops.iter().enumerate() {
                let exact = trace_product(oracle_state.as_operator(), x).map_err(OracleError::from)?;
                filter_error = filter_error.max((filter.estimates[k][j] - exact).norm());
            }
        }
        if let Some(qnd) = &qnd {
            let smoothed = smooth_from(&record, &filter, estimand_step, qnd, &ops)?;
            for (offset, row) in smoothed.estimates.iter().enumerate() {
                let k = estimand_step + offset;
                let Some(exact) = &prefixes[k].branches[r >> (n_steps - k)].estimates else { continue };
                for (q, e) in row.iter().zip(exact) {
                    plus_error = plus_error.max((q.plus - e.q_plus).norm());
                    minus_error = minus_error.max((q.minus - e.q_minus).norm());
                }
            }
        }
    }
    Ok(CompareRow {
        dt,
        n_steps,
        filter_error,
        smoother_plus_error: qnd.as_ref().map(|_| plus_error),
        smoother_minus_error: qnd.as_ref().map(|_| minus_error),
    })
}

/// [`compare_at`] over several step sizes, with fitted empirical orders.
pub fn convergence_table(
    sys: &SystemSpec,
    observables: &[Observable],
    n_steps: usize,
    estimand_step: usize,
    dts: &[f64],
    max_joint_dim: usize,
) -> Result<ConvergenceTable, CompareError> {
    if dts.is_empty() {
        return Err(CompareError::Empty);
    }
    let rows = dts
        .iter()
        .map(|&dt| compare_at(sys, observables, n_steps, estimand_step, dt, max_joint_dim))
        .collect::<Result<Vec<_>, _>>()?;
    let filter_errors: Vec<f64> = rows.iter().map(|r| r.filter_error).collect();
    let smoother_errors: Option<Vec<f64>> = rows.iter().map(|r| r.smoother_error()).collect();
    Ok(ConvergenceTable {
        n_steps,
        estimand_step,
        observables: observables.iter().map(|o| o.name.clone()).collect(),
        filter_order: fitted_order(dts, &filter_errors),
        smoother_order: smoother_errors.and_then(|e| fitted_order(dts, &e)),
        rows,
    })
}
