//! Quantum filtering and fixed-point smoothing for continuously monitored
//! finite-dimensional systems.
//!
//! * [`opalg`]: dense operators, density operators, pre-inner products.
//! * [`model`]: system/experiment declarations, JSON configuration, QND check.
//! * [`trajectory`]: homodyne records and the stochastic master equation.
//! * [`smoother`]: the symmetric/skew fixed-point smoother in density form.
//! * [`oracle`]: exact repeated-interaction reference with exhaustive records.
//! * [`compare`]: convergence of the SDE integrators to the reference.
//!
//! ```
//! use qsmooth::model::{ExperimentSpec, Observable, SystemSpec};
//! use qsmooth::opalg::{DensityOperator, Operator};
//! use qsmooth::smoother::smooth_trajectory;
//! use qsmooth::trajectory::{filter_trajectory, simulate_truth, trajectory_rng};
//!
//! let sys = SystemSpec::new(Operator::zeros(2), Operator::pauli_z(), DensityOperator::plus()).unwrap();
//! let exp = ExperimentSpec {
//!     dt: 1e-3,
//!     t_final: 0.5,
//!     tau: 0.0,
//!     n_traj: 1,
//!     seed: 1,
//!     observables: vec![Observable::new("sy", Operator::pauli_y())],
//!     filter_rho0: None,
//! };
//! let record = simulate_truth(&sys, &exp, &mut trajectory_rng(exp.seed, 0)).unwrap();
//! let filter = filter_trajectory(&record, &sys, &exp).unwrap();
//! let smoothed = smooth_trajectory(&record, &filter, &sys, &exp).unwrap();
//! let last = smoothed.estimates.last().unwrap()[0];
//! assert!(last.plus.im.abs() < 1e-9 && last.minus.re.abs() < 1e-9);
//! ```

pub mod compare;
pub mod model;
pub mod opalg;
pub mod oracle;
pub mod smoother;
pub mod trajectory;

pub use model::{load_spec, qnd_check, ExperimentSpec, Observable, SystemSpec};
pub use opalg::{DensityOperator, Operator, C64};
