//! System and experiment declarations, JSON configuration and the
//! nondemolition (QND) check.
//!
//! Matrices in configuration files are row-major nested arrays of `[re, im]`
//! pairs, or one of the named presets `pauli_x`, `pauli_y`, `pauli_z`,
//! `identity`, `lowering`, `zero`, optionally scaled:
//!
//! ```json
//! { "preset": "pauli_z", "scale": 1.0 }
//! ```
//!
//! Density matrices additionally accept `"plus"`, `"maximally_mixed"`,
//! `{"basis": k}` and `{"ket": [[re, im], ...]}`.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opalg::{bracket, DensityOperator, OpError, Operator, Sign, Tolerances, C64};

/// Grid alignment tolerance for `tau` and `t_final`.
pub const GRID_TOL: f64 = 1e-12;

/// Tolerance of the commutator tests in [`qnd_check`].
pub const QND_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: &str, message: impl Into<String>) -> Self {
        Self::Invalid { path: path.to_string(), message: message.into() }
    }
}

/// Physical system: Hamiltonian `H`, measurement coupling `L`, initial state.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    hamiltonian: Operator,
    coupling: Operator,
    rho0: DensityOperator,
}

impl SystemSpec {
    pub fn new(hamiltonian: Operator, coupling: Operator, rho0: DensityOperator) -> Result<Self, ConfigError> {
        Self::with_tolerances(hamiltonian, coupling, rho0, Tolerances::default())
    }

    pub fn with_tolerances(
        hamiltonian: Operator,
        coupling: Operator,
        rho0: DensityOperator,
        tol: Tolerances,
    ) -> Result<Self, ConfigError> {
        let dim = rho0.dim();
        for (name, op) in [("system.H", &hamiltonian), ("system.L", &coupling)] {
            if op.dim() != dim {
                return Err(ConfigError::invalid(
                    name,
                    format!("dimension {} does not match rho0 dimension {dim}", op.dim()),
                ));
            }
            if !op.is_finite() {
                return Err(ConfigError::invalid(name, "non-finite entry"));
            }
        }
        let deviation = hamiltonian.hermiticity_defect();
        if deviation > tol.herm {
            return Err(ConfigError::invalid("system.H", format!("H not Hermitian (max |H - H†| = {deviation:e})")));
        }
        Ok(Self { hamiltonian, coupling, rho0 })
    }

    pub fn dim(&self) -> usize {
        self.rho0.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn coupling(&self) -> &Operator {
        &self.coupling
    }

    pub fn rho0(&self) -> &DensityOperator {
        &self.rho0
    }

    /// Same `H` and `L` with a different initial state.
    pub fn with_rho0(&self, rho0: DensityOperator) -> Result<Self, ConfigError> {
        Self::new(self.hamiltonian.clone(), self.coupling.clone(), rho0)
    }

    /// `L + L†`, the operator whose mean drives the homodyne signal.
    pub fn quadrature(&self) -> Operator {
        &self.coupling + &self.coupling.adjoint()
    }
}

#[derive(Debug, Clone)]
pub struct Observable {
    pub name: String,
    pub op: Operator,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op }
    }
}

/// Time grid, smoothing time and ensemble settings.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dt: f64,
    pub t_final: f64,
    pub tau: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub observables: Vec<Observable>,
    pub filter_rho0: Option<DensityOperator>,
}

fn grid_steps(value: f64, dt: f64) -> Option<usize> {
    let k = (value / dt).round();
    ((value - k * dt).abs() <= GRID_TOL * k.max(1.0)).then_some(k as usize)
}

impl ExperimentSpec {
    /// Checks the grid and observable invariants against a system.
    pub fn validate(&self, sys: &SystemSpec) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::invalid("experiment.dt", "must be positive"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(ConfigError::invalid("experiment.t_final", "must be positive"));
        }
        if grid_steps(self.t_final, self.dt).is_none() {
            return Err(ConfigError::invalid("experiment.t_final", "t_final not on grid"));
        }
        if !(0.0..=self.t_final).contains(&self.tau) {
            return Err(ConfigError::invalid("experiment.tau", "tau outside [0, t_final]"));
        }
        if grid_steps(self.tau, self.dt).is_none() {
            return Err(ConfigError::invalid("experiment.tau", "tau not on grid"));
        }
        if self.n_traj == 0 {
            return Err(ConfigError::invalid("experiment.n_traj", "must be positive"));
        }
        for (k, obs) in self.observables.iter().enumerate() {
            let path = format!("experiment.observables[{k}]");
            if obs.name.is_empty() || obs.name.contains([',', '\n', '"']) {
                return Err(ConfigError::invalid(&path, "name must be non-empty without commas or quotes"));
            }
            if self.observables[..k].iter().any(|o| o.name == obs.name) {
                return Err(ConfigError::invalid(&path, format!("duplicate observable name {}", obs.name)));
            }
            if obs.op.dim() != sys.dim() {
                return Err(ConfigError::invalid(&path, "dimension mismatch"));
            }
            let deviation = obs.op.hermiticity_defect();
            if deviation > Tolerances::default().herm {
                return Err(ConfigError::invalid(&path, format!("{} not Hermitian ({deviation:e})", obs.name)));
            }
        }
        if let Some(r) = &self.filter_rho0 {
            if r.dim() != sys.dim() {
                return Err(ConfigError::invalid("experiment.filter_rho0", "dimension mismatch"));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        grid_steps(self.t_final, self.dt).unwrap_or_else(|| (self.t_final / self.dt).round() as usize)
    }

    pub fn tau_step(&self) -> usize {
        grid_steps(self.tau, self.dt).unwrap_or_else(|| (self.tau / self.dt).round() as usize)
    }

    /// Prior used by the filter: `filter_rho0` if set, else the true `rho0`.
    pub fn filter_prior<'a>(&'a self, sys: &'a SystemSpec) -> &'a DensityOperator {
        self.filter_rho0.as_ref().unwrap_or(sys.rho0())
    }
}

/// Result of the nondemolition test with the norms that decided it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QndReport {
    /// Frobenius norm of `[L, L†]`.
    pub normality_defect: f64,
    /// Frobenius norm of `[H, L]`.
    pub hamiltonian_commutator: f64,
}

impl QndReport {
    pub fn holds(&self) -> bool {
        self.normality_defect <= QND_TOL && self.hamiltonian_commutator <= QND_TOL
    }
}

pub fn qnd_report(sys: &SystemSpec) -> QndReport {
    let l = sys.coupling();
    let normality = bracket(l, &l.adjoint(), Sign::Minus).expect("same dimension");
    let hl = bracket(sys.hamiltonian(), l, Sign::Minus).expect("same dimension");
    QndReport { normality_defect: normality.norm(), hamiltonian_commutator: hl.norm() }
}

/// `true` iff `L` is normal and commutes with `H`, which makes `L` commute
/// with the system-probe propagator at every time.
pub fn qnd_check(sys: &SystemSpec) -> bool {
    qnd_report(sys).holds()
}

// ---------------------------------------------------------------------------
// Configuration schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl ScaleSpec {
    fn value(&self) -> C64 {
        match *self {
            ScaleSpec::Real(r) => C64::new(r, 0.0),
            ScaleSpec::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset(String),
    Scaled { preset: String, scale: ScaleSpec },
    Entries(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Basis { basis: usize },
    Ket { ket: Vec<[f64; 2]> },
    Matrix(MatrixSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dim: usize,
    #[serde(rename = "H")]
    pub h: MatrixSpec,
    #[serde(rename = "L")]
    pub l: MatrixSpec,
    pub rho0: StateSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub name: String,
    pub op: MatrixSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dt: f64,
    pub t_final: f64,
    pub tau: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default)]
    pub observables: Vec<ObservableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_rho0: Option<StateSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub experiment: ExperimentConfig,
}

fn preset(name: &str, dim: usize, path: &str) -> Result<Operator, ConfigError> {
    let qubit = |op: Operator| {
        if dim == 2 {
            Ok(op)
        } else {
            Err(ConfigError::invalid(path, format!("preset {name} requires dim = 2")))
        }
    };
    match name {
        "identity" => Ok(Operator::identity(dim)),
        "zero" => Ok(Operator::zeros(dim)),
        "pauli_x" => qubit(Operator::pauli_x()),
        "pauli_y" => qubit(Operator::pauli_y()),
        "pauli_z" => qubit(Operator::pauli_z()),
        "lowering" => qubit(Operator::lowering()),
        other => Err(ConfigError::invalid(path, format!("unknown preset {other:?}"))),
    }
}

fn build_matrix(spec: &MatrixSpec, dim: usize, path: &str) -> Result<Operator, ConfigError> {
    match spec {
        MatrixSpec::Preset(name) => preset(name, dim, path),
        MatrixSpec::Scaled { preset: name, scale } => Ok(preset(name, dim, path)?.scale(scale.value())),
        MatrixSpec::Entries(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(ConfigError::invalid(path, format!("expected a {dim}x{dim} matrix")));
            }
            let rows: Vec<Vec<C64>> =
                rows.iter().map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect()).collect();
            let op = Operator::from_rows(&rows).map_err(|e| ConfigError::invalid(path, e.to_string()))?;
            if !op.is_finite() {
                return Err(ConfigError::invalid(path, "non-finite entry"));
            }
            Ok(op)
        }
    }
}

fn build_state(spec: &StateSpec, dim: usize, path: &str) -> Result<DensityOperator, ConfigError> {
    let wrap = |e: OpError| ConfigError::invalid(path, e.to_string());
    match spec {
        StateSpec::Basis { basis } => {
            if *basis >= dim {
                return Err(ConfigError::invalid(path, format!("basis index {basis} >= dim {dim}")));
            }
            Ok(DensityOperator::basis(dim, *basis))
        }
        StateSpec::Ket { ket } => {
            if ket.len() != dim {
                return Err(ConfigError::invalid(path, format!("ket length {} != dim {dim}", ket.len())));
            }
            let v = DVector::from_iterator(dim, ket.iter().map(|&[re, im]| C64::new(re, im)));
            DensityOperator::pure(&v).map_err(wrap)
        }
        StateSpec::Matrix(MatrixSpec::Preset(name)) if name == "plus" => {
            if dim != 2 {
                return Err(ConfigError::invalid(path, "preset plus requires dim = 2"));
            }
            Ok(DensityOperator::plus())
        }
        StateSpec::Matrix(MatrixSpec::Preset(name)) if name == "maximally_mixed" => {
            Ok(DensityOperator::maximally_mixed(dim))
        }
        StateSpec::Matrix(m) => DensityOperator::new(build_matrix(m, dim, path)?).map_err(wrap),
    }
}

impl Config {
    /// Builds and validates the specs.
    pub fn build(&self) -> Result<(SystemSpec, ExperimentSpec), ConfigError> {
        let s = &self.system;
        if s.dim == 0 {
            return Err(ConfigError::invalid("system.dim", "must be positive"));
        }
        let h = build_matrix(&s.h, s.dim, "system.H")?;
        let l = build_matrix(&s.l, s.dim, "system.L")?;
        let rho0 = build_state(&s.rho0, s.dim, "system.rho0")?;
        let sys = SystemSpec::new(h, l, rho0)?;

        let e = &self.experiment;
        let observables = e
            .observables
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let path = format!("experiment.observables[{k}].op");
                Ok(Observable::new(o.name.clone(), build_matrix(&o.op, s.dim, &path)?))
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let filter_rho0 =
            e.filter_rho0.as_ref().map(|spec| build_state(spec, s.dim, "experiment.filter_rho0")).transpose()?;
        let exp = ExperimentSpec {
            dt: e.dt,
            t_final: e.t_final,
            tau: e.tau,
            n_traj: e.n_traj,
            seed: e.seed,
            observables,
            filter_rho0,
        };
        exp.validate(&sys)?;
        Ok((sys, exp))
    }
}

pub fn parse_spec(text: &str) -> Result<(SystemSpec, ExperimentSpec), ConfigError> {
    let config: Config = serde_json::from_str(text)?;
    config.build()
}

/// Reads and validates a JSON configuration file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<(SystemSpec, ExperimentSpec), ConfigError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_spec(&text)
}
