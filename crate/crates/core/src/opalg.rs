//! Finite-dimensional operator algebra.
//!
//! [`Operator`] wraps a dense square complex matrix. [`DensityOperator`] adds
//! the state invariants (Hermitian, unit trace, positive semidefinite) checked
//! at construction. The free functions implement the bracket `[A, B]±`, the
//! quantum expectation `Tr(ρX)` and the two pre-inner products
//!
//! ```text
//! <X, Y>_ρ  = Tr(ρ X†Y)
//! <<X, Y>>_ρ = ½ Tr(ρ (X†Y + Y X†))
//! ```
//!
//! together with Kronecker products and partial traces.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty operator")]
    Empty,
    #[error("not Hermitian: max |A - A†| = {deviation:e}")]
    NotHermitian { deviation: f64 },
    #[error("trace is {trace}, expected 1")]
    BadTrace { trace: C64 },
    #[error("not positive semidefinite: min eigenvalue {min_eigenvalue:e}")]
    NotPositive { min_eigenvalue: f64 },
    #[error("subsystem dimensions {dims:?} do not factor {dim}")]
    Factorization { dims: Vec<usize>, dim: usize },
    #[error("subsystem index {index} out of range for {count} factors")]
    BadSubsystem { index: usize, count: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
}

/// Dense square complex matrix.
#[derive(Clone, PartialEq)]
pub struct Operator {
    m: DMatrix<C64>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator{}", self.m)
    }
}

impl Operator {
    pub fn new(m: DMatrix<C64>) -> Result<Self, OpError> {
        if m.nrows() != m.ncols() {
            return Err(OpError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(OpError::Empty);
        }
        Ok(Self { m })
    }

    /// Builds an operator from row-major rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self, OpError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(OpError::NotSquare { rows: n, cols: bad.len() });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_real(dim: usize, row_major: &[f64]) -> Self {
        assert_eq!(row_major.len(), dim * dim);
        Self { m: DMatrix::from_fn(dim, dim, |i, j| C64::new(row_major[i * dim + j], 0.0)) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    pub fn pauli_x() -> Self {
        Self::from_real(2, &[0.0, 1.0, 1.0, 0.0])
    }

    pub fn pauli_y() -> Self {
        let z = C64::new(0.0, 0.0);
        Self { m: DMatrix::from_row_slice(2, 2, &[z, -I, I, z]) }
    }

    /// `σz` with the convention `σz|0⟩ = |0⟩`.
    pub fn pauli_z() -> Self {
        Self::from_real(2, &[1.0, 0.0, 0.0, -1.0])
    }

    /// `σ₋ = |0⟩⟨1|`, maps `|1⟩` to `|0⟩`.
    pub fn lowering() -> Self {
        Self::from_real(2, &[0.0, 1.0, 0.0, 0.0])
    }

    /// `σ₊ = |1⟩⟨0|`.
    pub fn raising() -> Self {
        Self::from_real(2, &[0.0, 0.0, 1.0, 0.0])
    }

    /// Rank-one operator `|ψ⟩⟨ψ|` (not normalised).
    pub fn projector(ket: &DVector<C64>) -> Self {
        Self { m: ket * ket.adjoint() }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { m: &self.m * c }
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.m.iter().zip(other.m.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `max |A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.m[(i, j)] - self.m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `max |A + A†|`.
    pub fn anti_hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.m[(i, j)] + self.m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// `½(A + A†)`.
    pub fn hermitian_part(&self) -> Self {
        Self { m: (&self.m + self.m.adjoint()) * C64::new(0.5, 0.0) }
    }

    /// `½(A − A†)`.
    pub fn anti_hermitian_part(&self) -> Self {
        Self { m: (&self.m - self.m.adjoint()) * C64::new(0.5, 0.0) }
    }

    /// Eigen-decomposition of the Hermitian part `½(A + A†)`; eigenvalues ascending.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, DMatrix<C64>) {
        let eig = self.hermitian_part().m.symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.hermitian_eigen().0[0]
    }

    fn check_dim(&self, other: &Operator) -> Result<(), OpError> {
        if self.dim() != other.dim() {
            return Err(OpError::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    /// Matrix product with a dimension check.
    pub fn try_mul(&self, other: &Operator) -> Result<Operator, OpError> {
        self.check_dim(other)?;
        Ok(Self { m: &self.m * &other.m })
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator, OpError> {
        self.check_dim(other)?;
        Ok(Self { m: &self.m + &other.m })
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Operator, OpError> {
        self.check_dim(other)?;
        Ok(Self { m: &self.m - &other.m })
    }

    /// Matrix exponential (scaling and squaring with a Padé approximant).
    pub fn exp(&self) -> Operator {
        Self { m: self.m.exp() }
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.m * v
    }
}

macro_rules! impl_binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<'a> $tr<&'a Operator> for &'a Operator {
            type Output = Operator;
            fn $f(self, rhs: &'a Operator) -> Operator {
                assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
                Operator { m: &self.m $op &rhs.m }
            }
        }
        impl $tr<Operator> for Operator {
            type Output = Operator;
            fn $f(self, rhs: Operator) -> Operator {
                (&self).$f(&rhs)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        self.m += &rhs.m;
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator { m: -&self.m }
    }
}

impl Mul<&Operator> for C64 {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        rhs.scale(self)
    }
}

impl Mul<&Operator> for f64 {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        rhs.scale_re(self)
    }
}

/// Acceptance thresholds for the density-operator invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub herm: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { herm: 1e-9, trace: 1e-9, psd: 1e-9 }
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    op: Operator,
}

impl DensityOperator {
    pub fn new(op: Operator) -> Result<Self, OpError> {
        Self::with_tolerances(op, Tolerances::default())
    }

    pub fn with_tolerances(op: Operator, tol: Tolerances) -> Result<Self, OpError> {
        if !op.is_finite() {
            return Err(OpError::NonFinite);
        }
        let deviation = op.hermiticity_defect();
        if deviation > tol.herm {
            return Err(OpError::NotHermitian { deviation });
        }
        let trace = op.trace();
        if (trace - C64::new(1.0, 0.0)).norm() > tol.trace {
            return Err(OpError::BadTrace { trace });
        }
        let min_eigenvalue = op.min_eigenvalue();
        if min_eigenvalue < -tol.psd {
            return Err(OpError::NotPositive { min_eigenvalue });
        }
        Ok(Self { op })
    }

    /// Trusted constructor for internal results that are valid by construction.
    pub(crate) fn from_trusted(op: Operator) -> Self {
        Self { op }
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn pure(ket: &DVector<C64>) -> Result<Self, OpError> {
        let norm_sqr: f64 = ket.iter().map(|z| z.norm_sqr()).sum();
        if !(norm_sqr > 0.0 && norm_sqr.is_finite()) {
            return Err(OpError::NonFinite);
        }
        Ok(Self { op: Operator::projector(ket).scale_re(1.0 / norm_sqr) })
    }

    /// Computational basis state `|k⟩⟨k|`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[k] = C64::new(1.0, 0.0);
        Self { op: Operator::projector(&v) }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { op: Operator::identity(dim).scale_re(1.0 / dim as f64) }
    }

    /// `|+⟩⟨+|` for a qubit.
    pub fn plus() -> Self {
        Self { op: Operator::from_real(2, &[0.5, 0.5, 0.5, 0.5]) }
    }

    /// Nearest state in the positive cone: symmetrise, clip negative
    /// eigenvalues to zero and renormalise the trace. Also returns the minimum
    /// eigenvalue seen before clipping.
    pub fn project(op: &Operator) -> Result<(Self, f64), OpError> {
        if !op.is_finite() {
            return Err(OpError::NonFinite);
        }
        let (values, vectors) = op.hermitian_eigen();
        let min_eigenvalue = values[0];
        let herm = if min_eigenvalue >= 0.0 {
            op.hermitian_part()
        } else {
            let clipped = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v.max(0.0), 0.0)));
            let m = &vectors * DMatrix::from_diagonal(&clipped) * vectors.adjoint();
            Operator::new(m)?.hermitian_part()
        };
        let tr = herm.trace().re;
        if tr.is_nan() || tr <= 0.0 {
            return Err(OpError::BadTrace { trace: herm.trace() });
        }
        Ok((Self { op: herm.scale_re(1.0 / tr) }, min_eigenvalue))
    }

    pub fn as_operator(&self) -> &Operator {
        &self.op
    }

    pub fn into_operator(self) -> Operator {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Eigen-decomposition `ρ = Σ λ_k |v_k⟩⟨v_k|`, dropping weights ≤ `cutoff`.
    pub fn spectral_components(&self, cutoff: f64) -> Vec<(f64, DVector<C64>)> {
        let (values, vectors) = self.op.hermitian_eigen();
        values
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > cutoff)
            .map(|(k, &w)| (w, vectors.column(k).into_owned()))
            .collect()
    }
}

impl AsRef<Operator> for DensityOperator {
    fn as_ref(&self) -> &Operator {
        &self.op
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `[A, B]± = AB ± BA`.
pub fn bracket(a: &Operator, b: &Operator, sign: Sign) -> Result<Operator, OpError> {
    let ab = a.try_mul(b)?;
    let ba = b * a;
    Ok(match sign {
        Sign::Plus => ab + ba,
        Sign::Minus => ab - ba,
    })
}

/// `Tr(AB)` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> Result<C64, OpError> {
    a.check_dim(b)?;
    let n = a.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a.m[(i, k)] * b.m[(k, i)];
        }
    }
    Ok(acc)
}

/// Quantum expectation `Tr(ρX)`.
pub fn expect(rho: &DensityOperator, x: &Operator) -> Result<C64, OpError> {
    trace_product(rho.as_operator(), x)
}

/// Pre-inner product `Tr(ρ X†Y)`.
pub fn inner(rho: &DensityOperator, x: &Operator, y: &Operator) -> Result<C64, OpError> {
    x.check_dim(y)?;
    trace_product(rho.as_operator(), &(&x.adjoint() * y))
}

/// Symmetric pre-inner product `½Tr(ρ (X†Y + Y X†))`.
pub fn sym_inner(rho: &DensityOperator, x: &Operator, y: &Operator) -> Result<C64, OpError> {
    x.check_dim(y)?;
    let xd = x.adjoint();
    let s = &xd * y + y * &xd;
    Ok(trace_product(rho.as_operator(), &s)? * 0.5)
}

/// Kronecker product `A ⊗ B`.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    Operator { m: a.m.kronecker(&b.m) }
}

/// Partial trace keeping the factors listed in `keep` (in their original order).
pub fn partial_trace(a: &Operator, dims: &[usize], keep: &[usize]) -> Result<Operator, OpError> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || dims.contains(&0) || total != a.dim() {
        return Err(OpError::Factorization { dims: dims.to_vec(), dim: a.dim() });
    }
    if let Some(&index) = keep.iter().find(|&&k| k >= dims.len()) {
        return Err(OpError::BadSubsystem { index, count: dims.len() });
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();

    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product();
    let env_dim: usize = traced_dims.iter().product();

    // Row-major digit strides of the full index.
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let compose = |kept_idx: usize, env_idx: usize| -> usize {
        let mut full = 0;
        let mut r = kept_idx;
        for (pos, &k) in kept.iter().enumerate().rev() {
            full += (r % kept_dims[pos]) * strides[k];
            r /= kept_dims[pos];
        }
        let mut r = env_idx;
        for (pos, &k) in traced.iter().enumerate().rev() {
            full += (r % traced_dims[pos]) * strides[k];
            r /= traced_dims[pos];
        }
        full
    };

    let m = DMatrix::from_fn(out_dim, out_dim, |i, j| (0..env_dim).map(|e| a.m[(compose(i, e), compose(j, e))]).sum());
    Operator::new(m)
}
