//! Exact discrete reference model.
//!
//! The system interacts with a chain of `n` probe qubits, one per time step,
//! each prepared in `|g⟩` and measured in the `σx` eigenbasis (outcome `±1`).
//! The step propagator is `U = exp(G)` with
//!
//! ```text
//! G = −i (H ⊗ I) dt + √dt (L ⊗ σ₊ − L† ⊗ σ₋)
//! ```
//!
//! For every record `y ∈ {±1}ⁿ` the joint-space projection `P_y` is known
//! exactly, so the estimates defined by the orthogonality conditions reduce
//! to ratios of traces:
//!
//! ```text
//! p(y)  = Tr[ρ P_y]
//! q⁺(y) = Tr[ρ (P_y X_τ + X_τ P_y)] / 2p(y)
//! q⁻(y) = Tr[ρ (P_y X_τ − X_τ P_y)] / 2p(y)
//! ```
//!
//! with `X_τ = U_{1..m}† (X ⊗ I) U_{1..m}` the Heisenberg-picture estimand at
//! step `m`. The joint state is never stored as a matrix: `ρ_S` is split into
//! its eigenvectors and each is propagated as a state vector, which is exact
//! and keeps memory at `O(d·2ⁿ)`. [`dense`] materialises the same objects as
//! full matrices for cross-checks at small `n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Observable, SystemSpec};
use crate::opalg::{tensor, trace_product, DensityOperator, OpError, Operator, C64, I};

pub const DEFAULT_MAX_JOINT_DIM: usize = 4096;

/// Records with `p(y)` below this are excluded from estimates and checks.
pub const P_FLOOR: f64 = 1e-12;

/// Eigenvalues of `ρ_S` at or below this are dropped from the decomposition.
const SPECTRAL_CUTOFF: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("joint dimension {joint_dim} exceeds cap {cap}")]
    CapExceeded { joint_dim: u128, cap: usize },
    #[error("estimand step {estimand_step} beyond record length {n_steps}")]
    EstimandBeyondRecord { estimand_step: usize, n_steps: usize },
    #[error("every record has probability below {P_FLOOR:e}")]
    AllBranchesDegenerate,
    #[error("mean squared error increased from {shorter:e} to {longer:e} with a longer record")]
    MseIncreased { shorter: f64, longer: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

/// Probe outcome of the `σx` measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }

    fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    /// Outcomes of record number `r` of length `n`; step 1 is the most
    /// significant bit, bit value 0 is `+1`.
    pub fn record(r: usize, n: usize) -> Vec<Outcome> {
        (0..n).map(|k| if (r >> (n - 1 - k)) & 1 == 0 { Outcome::Plus } else { Outcome::Minus }).collect()
    }
}

/// System coupled to a finite chain of vacuum probe qubits.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    sys: SystemSpec,
    n_steps: usize,
    dt: f64,
    step_unitary: Operator,
    /// `U` followed by a Hadamard on the probe; rows indexed by (system, outcome).
    measured_step: Operator,
    kraus: [Operator; 2],
}

/// Generator `G` of the step propagator on system ⊗ probe.
pub fn step_generator(sys: &SystemSpec, dt: f64) -> Operator {
    let d = sys.dim();
    let probe_id = Operator::identity(2);
    let h = tensor(sys.hamiltonian(), &probe_id).scale(-I * dt);
    let l = sys.coupling();
    let emit = tensor(l, &Operator::raising()) - tensor(&l.adjoint(), &Operator::lowering());
    let g = h + emit.scale_re(dt.sqrt());
    debug_assert_eq!(g.dim(), 2 * d);
    g
}

fn hadamard() -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Operator::from_real(2, &[s, s, s, -s])
}

impl DiscreteModel {
    pub fn build(sys: &SystemSpec, n_steps: usize, dt: f64) -> Result<Self, OracleError> {
        Self::build_with_cap(sys, n_steps, dt, DEFAULT_MAX_JOINT_DIM)
    }

    pub fn build_with_cap(sys: &SystemSpec, n_steps: usize, dt: f64, cap: usize) -> Result<Self, OracleError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(OracleError::Invalid(format!("dt must be positive, got {dt}")));
        }
        let joint_dim = (sys.dim() as u128).checked_shl(n_steps as u32).filter(|_| n_steps < 100);
        match joint_dim {
            Some(j) if j <= cap as u128 => {}
            other => {
                return Err(OracleError::CapExceeded { joint_dim: other.unwrap_or(u128::MAX), cap });
            }
        }
        let step_unitary = step_generator(sys, dt).exp();
        let measured_step = &tensor(&Operator::identity(sys.dim()), &hadamard()) * &step_unitary;
        let d = sys.dim();
        // K_y[s, s'] = <s, y| H·U |s', g>.
        let kraus_for = |y: usize| {
            Operator::new(DMatrix::from_fn(d, d, |s, sp| measured_step.get(2 * s + y, 2 * sp))).expect("square")
        };
        let kraus = [kraus_for(0), kraus_for(1)];
        Ok(Self { sys: sys.clone(), n_steps, dt, step_unitary, measured_step, kraus })
    }

    pub fn system(&self) -> &SystemSpec {
        &self.sys
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn joint_dim(&self) -> usize {
        self.sys.dim() << self.n_steps
    }

    /// Propagator on system ⊗ one probe.
    pub fn step_unitary(&self) -> &Operator {
        &self.step_unitary
    }

    /// `K_± = ⟨±|U|g⟩`.
    pub fn kraus(&self, outcome: Outcome) -> &Operator {
        &self.kraus[outcome.index()]
    }

    /// Normalised conditional state after one probe, with its probability.
    pub fn kraus_update(&self, rho: &DensityOperator, outcome: Outcome) -> Result<(DensityOperator, f64), OracleError> {
        let k = self.kraus(outcome);
        let un = &(k * rho.as_operator()) * &k.adjoint();
        let p = un.trace().re;
        if p < P_FLOOR {
            return Err(OracleError::AllBranchesDegenerate);
        }
        Ok((DensityOperator::from_trusted(un.scale_re(1.0 / p).hermitian_part()), p))
    }

    /// Unconditional system state after `steps` probes (Kraus channel).
    pub fn unconditional_state(&self, steps: usize) -> Operator {
        let mut rho = self.sys.rho0().as_operator().clone();
        for _ in 0..steps {
            rho = self.kraus.iter().fold(Operator::zeros(self.sys.dim()), |acc, k| acc + &(k * &rho) * &k.adjoint());
        }
        rho
    }

    /// Applies measured step `k` (1-based) to a joint vector over `n` probes.
    fn apply_step(&self, v: &mut DVector<C64>, k: usize) {
        let n = self.n_steps;
        let d = self.sys.dim();
        let probe_stride = 1usize << (n - k);
        let sys_stride = 1usize << n;
        let gate = self.measured_step.matrix();
        let mut local = DVector::<C64>::zeros(2 * d);
        for rest in (0..sys_stride).filter(|r| r & probe_stride == 0) {
            for s in 0..d {
                for p in 0..2 {
                    local[2 * s + p] = v[s * sys_stride + rest + p * probe_stride];
                }
            }
            let out = gate * &local;
            for s in 0..d {
                for p in 0..2 {
                    v[s * sys_stride + rest + p * probe_stride] = out[2 * s + p];
                }
            }
        }
    }

    fn apply_system(&self, op: &Operator, v: &DVector<C64>) -> DVector<C64> {
        let d = self.sys.dim();
        let block = 1usize << self.n_steps;
        let mut out = DVector::zeros(v.len());
        for s in 0..d {
            for sp in 0..d {
                let c = op.get(s, sp);
                if c == C64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..block {
                    out[s * block + r] += c * v[sp * block + r];
                }
            }
        }
        out
    }

    fn initial_vectors(&self) -> Vec<(f64, DVector<C64>)> {
        let block = 1usize << self.n_steps;
        self.sys
            .rho0()
            .spectral_components(SPECTRAL_CUTOFF)
            .into_iter()
            .map(|(w, psi)| {
                let mut v = DVector::zeros(self.joint_dim());
                for (s, a) in psi.iter().enumerate() {
                    v[s * block] = *a;
                }
                (w, v)
            })
            .collect()
    }
}

pub fn build_model(sys: &SystemSpec, n_steps: usize, dt: f64) -> Result<DiscreteModel, OracleError> {
    DiscreteModel::build(sys, n_steps, dt)
}

/// `Tr[ρ P_y X_τ]` and `Tr[ρ X_τ P_y]` for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchMoments {
    pub px: C64,
    pub xp: C64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEstimate {
    pub q_plus: C64,
    pub q_minus: C64,
}

impl BranchEstimate {
    fn from_moments(m: &BranchMoments, p: f64) -> Self {
        Self { q_plus: (m.px + m.xp) / (2.0 * p), q_minus: (m.px - m.xp) / (2.0 * p) }
    }

    pub fn total(&self) -> C64 {
        self.q_plus + self.q_minus
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub outcomes: Vec<Outcome>,
    pub probability: f64,
    /// Conditional system state after the record (sequential Kraus updates).
    pub filter_state: Option<DensityOperator>,
    /// One entry per observable.
    pub moments: Vec<BranchMoments>,
    /// `None` for records below [`P_FLOOR`].
    pub estimates: Option<Vec<BranchEstimate>>,
}

impl Branch {
    /// Record increments `dy_k = y_k √dt`.
    pub fn increments(&self, dt: f64) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.sign() * dt.sqrt()).collect()
    }
}

/// Record-independent moments of an estimand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimandMoments {
    /// `P[X_τ† X_τ]`.
    pub xdx: f64,
    /// `P[X_τ X_τ†]`.
    pub xxd: f64,
    /// `P[X_τ]` evaluated in the joint picture.
    pub mean: C64,
}

/// Exhaustive table of records with exact probabilities and estimates.
#[derive(Debug, Clone)]
pub struct BranchTable {
    pub dt: f64,
    pub n_steps: usize,
    pub estimand_step: usize,
    pub observables: Vec<Observable>,
    pub estimand: Vec<EstimandMoments>,
    pub branches: Vec<Branch>,
}

struct JointMoments {
    probability: Vec<f64>,
    moments: Vec<Vec<BranchMoments>>,
    estimand: Vec<EstimandMoments>,
}

/// Joint-picture evaluation of `p(y)`, `Tr[ρP_yX_τ]`, `Tr[ρX_τP_y]` for all records.
fn joint_moments(model: &DiscreteModel, observables: &[&Operator], m: usize) -> Result<JointMoments, OracleError> {
    let n = model.n_steps;
    if m > n {
        return Err(OracleError::EstimandBeyondRecord { estimand_step: m, n_steps: n });
    }
    let d = model.sys.dim();
    if let Some(x) = observables.iter().find(|x| x.dim() != d) {
        return Err(OpError::DimensionMismatch { expected: d, found: x.dim() }.into());
    }
    let n_records = 1usize << n;
    let mut probability = vec![0.0; n_records];
    let mut moments =
        vec![vec![BranchMoments { px: C64::default(), xp: C64::default() }; observables.len()]; n_records];
    let mut estimand = vec![EstimandMoments { xdx: 0.0, xxd: 0.0, mean: C64::default() }; observables.len()];

    for (w, mut v) in model.initial_vectors() {
        for k in 1..=m {
            model.apply_step(&mut v, k);
        }
        let evolve_rest = |mut u: DVector<C64>| {
            for k in (m + 1)..=n {
                model.apply_step(&mut u, k);
            }
            u
        };
        let tails: Vec<(DVector<C64>, DVector<C64>)> = observables
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let xv = model.apply_system(x, &v);
                let xdv = model.apply_system(&x.adjoint(), &v);
                estimand[j].xdx += w * xv.norm_squared();
                estimand[j].xxd += w * xdv.norm_squared();
                estimand[j].mean += v.dotc(&xv) * w;
                (evolve_rest(xv), evolve_rest(xdv))
            })
            .collect();
        let a = evolve_rest(v);

        for r in 0..n_records {
            for s in 0..d {
                let idx = (s << n) + r;
                let amp = a[idx];
                probability[r] += w * amp.norm_sqr();
                for (j, (b, bd)) in tails.iter().enumerate() {
                    moments[r][j].px += amp.conj() * b[idx] * w;
                    moments[r][j].xp += bd[idx].conj() * amp * w;
                }
            }
        }
    }
    Ok(JointMoments { probability, moments, estimand })
}

/// Filter states for every record, by depth-first sequential Kraus updates.
fn kraus_filter_states(model: &DiscreteModel, n: usize) -> Vec<Option<DensityOperator>> {
    fn descend(model: &DiscreteModel, rho: &Operator, depth: usize, n: usize, out: &mut Vec<Option<DensityOperator>>) {
        if depth == n {
            let p = rho.trace().re;
            out.push((p >= P_FLOOR).then(|| DensityOperator::from_trusted(rho.scale_re(1.0 / p).hermitian_part())));
            return;
        }
        for k in &model.kraus {
            let next = &(k * rho) * &k.adjoint();
            descend(model, &next, depth + 1, n, out);
        }
    }
    let mut out = Vec::with_capacity(1 << n);
    descend(model, model.sys.rho0().as_operator(), 0, n, &mut out);
    out
}

/// Enumerates all `2ⁿ` records and evaluates the estimates of each observable
/// at estimand step `m`.
pub fn enumerate_records(
    model: &DiscreteModel,
    observables: &[Observable],
    estimand_step: usize,
) -> Result<BranchTable, OracleError> {
    let ops: Vec<&Operator> = observables.iter().map(|o| &o.op).collect();
    let joint = joint_moments(model, &ops, estimand_step)?;
    let filters = kraus_filter_states(model, model.n_steps);
    let branches = joint
        .probability
        .iter()
        .zip(joint.moments)
        .zip(filters)
        .enumerate()
        .map(|(r, ((&p, moments), filter_state))| Branch {
            outcomes: Outcome::record(r, model.n_steps),
            probability: p,
            filter_state,
            estimates: (p >= P_FLOOR).then(|| moments.iter().map(|m| BranchEstimate::from_moments(m, p)).collect()),
            moments,
        })
        .collect::<Vec<_>>();
    if branches.iter().all(|b| b.estimates.is_none()) {
        return Err(OracleError::AllBranchesDegenerate);
    }
    Ok(BranchTable {
        dt: model.dt,
        n_steps: model.n_steps,
        estimand_step,
        observables: observables.to_vec(),
        estimand: joint.estimand,
        branches,
    })
}

impl BranchTable {
    pub fn total_probability(&self) -> f64 {
        self.branches.iter().map(|b| b.probability).sum()
    }

    fn observable_index(&self, name: &str) -> Result<usize, OracleError> {
        self.observables
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| OracleError::Invalid(format!("unknown observable {name}")))
    }

    /// Table for the first `len` outcomes only; projections of the shorter
    /// record are sums of the longer ones, so moments add up over suffixes.
    pub fn marginal(&self, model: &DiscreteModel, len: usize) -> Result<BranchTable, OracleError> {
        if len > self.n_steps {
            return Err(OracleError::Invalid(format!("prefix {len} longer than record {}", self.n_steps)));
        }
        let group = 1usize << (self.n_steps - len);
        let filters = kraus_filter_states(model, len);
        let branches = self
            .branches
            .chunks(group)
            .zip(filters)
            .map(|(chunk, filter_state)| {
                let p: f64 = chunk.iter().map(|b| b.probability).sum();
                let moments: Vec<BranchMoments> = (0..self.observables.len())
                    .map(|j| BranchMoments {
                        px: chunk.iter().map(|b| b.moments[j].px).sum(),
                        xp: chunk.iter().map(|b| b.moments[j].xp).sum(),
                    })
                    .collect();
                Branch {
                    outcomes: chunk[0].outcomes[..len].to_vec(),
                    probability: p,
                    filter_state,
                    estimates: (p >= P_FLOOR)
                        .then(|| moments.iter().map(|m| BranchEstimate::from_moments(m, p)).collect()),
                    moments,
                }
            })
            .collect();
        Ok(BranchTable { n_steps: len, branches, ..self.clone() })
    }

    /// Per-record estimate vector for observable `j` (zero below the floor).
    pub fn estimate_vector(&self, j: usize) -> Vec<BranchEstimate> {
        let zero = BranchEstimate { q_plus: C64::default(), q_minus: C64::default() };
        self.branches.iter().map(|b| b.estimates.as_ref().map_or(zero, |e| e[j])).collect()
    }

    /// `⟨⟨X_τ − Q, X_τ − Q⟩⟩_ρ` for `Q = Σ_y q(y) P_y`.
    pub fn mse_symmetric(&self, j: usize, q: &[C64]) -> f64 {
        let e = &self.estimand[j];
        let mut acc = C64::new(0.5 * (e.xdx + e.xxd), 0.0);
        for (b, &qy) in self.branches.iter().zip(q) {
            let m = &b.moments[j];
            let first = -(qy.conj() * m.px) - qy * m.px.conj();
            let second = -(qy.conj() * m.xp) - qy * m.xp.conj();
            acc += 0.5 * (first + second) + qy.norm_sqr() * b.probability;
        }
        acc.re
    }

    /// `⟨X_τ − Q, X_τ − Q⟩_ρ` for `Q = Σ_y q(y) P_y`.
    pub fn mse_full(&self, j: usize, q: &[C64]) -> f64 {
        let e = &self.estimand[j];
        let mut acc = C64::new(e.xdx, 0.0);
        for (b, &qy) in self.branches.iter().zip(q) {
            let m = &b.moments[j];
            acc += -(qy.conj() * m.px) - qy * m.px.conj() + qy.norm_sqr() * b.probability;
        }
        acc.re
    }

    /// Error of the symmetric estimate `Q⁺`.
    pub fn mse_of_symmetric_estimate(&self, j: usize) -> f64 {
        let q: Vec<C64> = self.estimate_vector(j).iter().map(|e| e.q_plus).collect();
        self.mse_symmetric(j, &q)
    }

    /// Error of the combined estimate `Q⁺ + Q⁻`.
    pub fn mse_of_combined_estimate(&self, j: usize) -> f64 {
        let q: Vec<C64> = self.estimate_vector(j).iter().map(|e| e.total()).collect();
        self.mse_full(j, &q)
    }

    /// `(|Σ p q⁺ − P[X_τ]|, |Σ p q⁻|)`, with `P[X_τ]` from the unconditional
    /// Kraus channel rather than the joint picture.
    pub fn unbiasedness_residual(&self, model: &DiscreteModel, j: usize) -> (f64, f64) {
        let rho_m = model.unconditional_state(self.estimand_step);
        let prior = trace_product(&rho_m, &self.observables[j].op).expect("dimension checked at enumeration");
        let mut plus = C64::default();
        let mut minus = C64::default();
        for (b, e) in self.branches.iter().zip(self.estimate_vector(j)) {
            plus += e.q_plus * b.probability;
            minus += e.q_minus * b.probability;
        }
        ((plus - prior).norm(), minus.norm())
    }

    pub fn observable_position(&self, name: &str) -> Option<usize> {
        self.observable_index(name).ok()
    }
}

/// Largest violation of the symmetric and skew orthogonality conditions over
/// all record projections `Z = P_y` above the floor.
///
/// The moments of `X` at step `m` are recomputed from the model; only the
/// estimates are taken from `table`.
pub fn verify_orthogonality(
    table: &BranchTable,
    model: &DiscreteModel,
    x: &Operator,
    m: usize,
    j: usize,
) -> Result<f64, OracleError> {
    let joint = joint_moments(model, &[x], m)?;
    let mut worst = 0.0f64;
    for ((branch, &p), moments) in table.branches.iter().zip(&joint.probability).zip(&joint.moments) {
        if p < P_FLOOR {
            continue;
        }
        let Some(est) = &branch.estimates else { continue };
        let e = est[j];
        let mo = moments[0];
        // ½Tr[ρ(Z(X−Q) + (X−Q)Z)] with Tr[ρ P_y Q] = Tr[ρ Q P_y] = q⁺(y) p(y).
        let symmetric = 0.5 * (mo.px + mo.xp) - e.q_plus * p;
        // Tr[ρ(ZX − XZ)] − 2Tr[ρ Q⁻ Z].
        let skew = (mo.px - mo.xp) - 2.0 * e.q_minus * p;
        worst = worst.max(symmetric.norm()).max(skew.norm());
    }
    Ok(worst)
}

/// Exact errors at two record lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseComparison {
    /// `⟨X − Q⁺, X − Q⁺⟩_ρ` for the shorter and longer record.
    pub symmetric: (f64, f64),
    /// `⟨X − Q, X − Q⟩_ρ` for the combined estimate.
    pub combined: (f64, f64),
}

/// Compares the exact errors of two tables over nested record algebras
/// (`shorter.n_steps ≤ longer.n_steps`, same model prefix).
pub fn oracle_mse(shorter: &BranchTable, longer: &BranchTable, j: usize) -> Result<MseComparison, OracleError> {
    if shorter.n_steps > longer.n_steps || shorter.estimand_step != longer.estimand_step {
        return Err(OracleError::Invalid("tables are not nested".into()));
    }
    let symmetric = (shorter.mse_of_symmetric_estimate(j), longer.mse_of_symmetric_estimate(j));
    let combined = (shorter.mse_of_combined_estimate(j), longer.mse_of_combined_estimate(j));
    for (s, l) in [symmetric, combined] {
        if l > s + 1e-12 {
            return Err(OracleError::MseIncreased { shorter: s, longer: l });
        }
    }
    Ok(MseComparison { symmetric, combined })
}

/// Joint-picture conditional system states `Tr_P[Π_y U ρ U† Π_y] / p(y)`.
pub fn joint_conditional_states(model: &DiscreteModel) -> Vec<Option<DensityOperator>> {
    let n = model.n_steps;
    let d = model.sys.dim();
    let mut acc = vec![Operator::zeros(d); 1 << n];
    for (w, mut v) in model.initial_vectors() {
        for k in 1..=n {
            model.apply_step(&mut v, k);
        }
        for (r, rho) in acc.iter_mut().enumerate() {
            let amp = DVector::from_fn(d, |s, _| v[(s << n) + r]);
            *rho += &Operator::projector(&amp).scale_re(w);
        }
    }
    acc.into_iter()
        .map(|rho| {
            let p = rho.trace().re;
            (p >= P_FLOOR).then(|| DensityOperator::from_trusted(rho.scale_re(1.0 / p).hermitian_part()))
        })
        .collect()
}

/// Full-matrix construction of the joint objects, for small `n` only.
pub mod dense {
    use super::*;

    /// Step `k` (1-based) propagator embedded in system ⊗ probe₁ ⊗ … ⊗ probeₙ.
    pub fn chain_step(model: &DiscreteModel, k: usize) -> Operator {
        let d = model.sys.dim();
        let n = model.n_steps;
        let before = 1usize << (k - 1);
        let after = 1usize << (n - k);
        let u = model.step_unitary.matrix();
        let dim = model.joint_dim();
        let mut out = DMatrix::zeros(dim, dim);
        // Index layout: s·2ⁿ + b·2^{n−k+1} + p·2^{n−k} + a.
        for s in 0..d {
            for b in 0..before {
                for p in 0..2 {
                    for a in 0..after {
                        let row = (s << n) + b * 2 * after + p * after + a;
                        for sp in 0..d {
                            for pp in 0..2 {
                                let col = (sp << n) + b * 2 * after + pp * after + a;
                                out[(row, col)] = u[(2 * s + p, 2 * sp + pp)];
                            }
                        }
                    }
                }
            }
        }
        Operator::new(out).expect("square")
    }

    /// `U_{1..k} = U_k ⋯ U_1`.
    pub fn propagator(model: &DiscreteModel, k: usize) -> Operator {
        (1..=k).fold(Operator::identity(model.joint_dim()), |acc, j| &chain_step(model, j) * &acc)
    }

    /// `ρ_S ⊗ |g⟩⟨g|^{⊗n}`.
    pub fn initial_state(model: &DiscreteModel) -> Operator {
        let mut vac = DMatrix::zeros(1 << model.n_steps, 1 << model.n_steps);
        vac[(0, 0)] = C64::new(1.0, 0.0);
        tensor(model.sys.rho0().as_operator(), &Operator::new(vac).expect("square"))
    }

    /// `X_τ = U_{1..m}† (X ⊗ I) U_{1..m}`.
    pub fn estimand(model: &DiscreteModel, x: &Operator, m: usize) -> Operator {
        let u = propagator(model, m);
        let xi = tensor(x, &Operator::identity(1 << model.n_steps));
        &(&u.adjoint() * &xi) * &u
    }

    /// `P_y = U† (I ⊗ |y⟩⟨y|) U` for every record, in record order.
    pub fn record_projections(model: &DiscreteModel) -> Vec<Operator> {
        let n = model.n_steps;
        let u = propagator(model, n);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..1usize << n)
            .map(|r| {
                let ket = Outcome::record(r, n).iter().fold(DVector::from_element(1, C64::new(1.0, 0.0)), |acc, o| {
                    let local = DVector::from_vec(vec![C64::new(s, 0.0), C64::new(s * o.sign(), 0.0)]);
                    acc.kronecker(&local)
                });
                let pi = tensor(&Operator::identity(model.sys.dim()), &Operator::projector(&ket));
                &(&u.adjoint() * &pi) * &u
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub dim: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub estimand_step: usize,
    pub joint_dim: usize,
    pub qnd: bool,
    pub observables: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordEntry {
    pub observable: String,
    pub y: Vec<i8>,
    pub p: f64,
    pub q_plus: Option<f64>,
    pub q_minus_im: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseRow {
    pub n: usize,
    pub observable: String,
    pub mse_symmetric: f64,
    pub mse_combined: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportChecks {
    pub total_probability: f64,
    pub orthogonality_residual: f64,
    pub unbiasedness_residual: f64,
    pub mse_by_n: Vec<MseRow>,
    pub mse_non_increasing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub model: ModelSummary,
    pub records: Vec<RecordEntry>,
    pub checks: ReportChecks,
}

/// Enumerates the model and evaluates every check of the oracle.
pub fn oracle_report(
    model: &DiscreteModel,
    observables: &[Observable],
    estimand_step: usize,
) -> Result<OracleReport, OracleError> {
    let table = enumerate_records(model, observables, estimand_step)?;
    let mut records = Vec::new();
    let mut orthogonality_residual = 0.0f64;
    let mut unbiasedness_residual = 0.0f64;
    for (j, obs) in observables.iter().enumerate() {
        for b in &table.branches {
            let est = b.estimates.as_ref().map(|e| e[j]);
            records.push(RecordEntry {
                observable: obs.name.clone(),
                y: b.outcomes.iter().map(|o| o.sign() as i8).collect(),
                p: b.probability,
                q_plus: est.map(|e| e.q_plus.re),
                q_minus_im: est.map(|e| e.q_minus.im),
            });
        }
        orthogonality_residual =
            orthogonality_residual.max(verify_orthogonality(&table, model, &obs.op, estimand_step, j)?);
        let (plus, minus) = table.unbiasedness_residual(model, j);
        unbiasedness_residual = unbiasedness_residual.max(plus).max(minus);
    }
    let prefixes = (0..=model.n_steps).map(|k| table.marginal(model, k)).collect::<Result<Vec<_>, _>>()?;
    let mut mse_by_n = Vec::new();
    let mut mse_non_increasing = true;
    for (j, obs) in observables.iter().enumerate() {
        for pair in prefixes.windows(2) {
            mse_non_increasing &= oracle_mse(&pair[0], &pair[1], j).is_ok();
        }
        for t in &prefixes {
            mse_by_n.push(MseRow {
                n: t.n_steps,
                observable: obs.name.clone(),
                mse_symmetric: t.mse_of_symmetric_estimate(j),
                mse_combined: t.mse_of_combined_estimate(j),
            });
        }
    }
    Ok(OracleReport {
        model: ModelSummary {
            dim: model.sys.dim(),
            n_steps: model.n_steps,
            dt: model.dt,
            estimand_step,
            joint_dim: model.joint_dim(),
            qnd: crate::model::qnd_check(&model.sys),
            observables: observables.iter().map(|o| o.name.clone()).collect(),
        },
        records,
        checks: ReportChecks {
            total_probability: table.total_probability(),
            orthogonality_residual,
            unbiasedness_residual,
            mse_by_n,
            mse_non_increasing,
        },
    })
}
