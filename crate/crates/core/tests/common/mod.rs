//! Independent reference for the discrete model, written against raw
//! matrices: the step propagator is a Taylor series, and every per-record
//! quantity is a product of Kraus operators in the system picture.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type M = DMatrix<C>;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn dagger(a: &M) -> M {
    a.adjoint()
}

pub fn tr(a: &M) -> C {
    a.trace()
}

pub fn kron(a: &M, b: &M) -> M {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    M::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// `exp(a)` by halving until the norm is below 1/2, summing the series to
/// machine precision, then squaring back.
pub fn taylor_exp(a: &M) -> M {
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let mut halvings = 0;
    let mut scaled = a.clone();
    let mut n = norm;
    while n > 0.5 {
        scaled /= c(2.0, 0.0);
        n /= 2.0;
        halvings += 1;
    }
    let dim = a.nrows();
    let mut sum = M::identity(dim, dim);
    let mut term = M::identity(dim, dim);
    for k in 1..60 {
        term = &term * &scaled / c(k as f64, 0.0);
        sum += &term;
        if term.iter().map(|z| z.norm()).sum::<f64>() < 1e-20 {
            break;
        }
    }
    for _ in 0..halvings {
        sum = &sum * &sum;
    }
    sum
}

/// Step generator on system ⊗ probe with `σ₊ = |1⟩⟨0|`.
pub fn generator(h: &M, l: &M, dt: f64) -> M {
    let mut sp = M::zeros(2, 2);
    sp[(1, 0)] = c(1.0, 0.0);
    let sm = dagger(&sp);
    let id2 = M::identity(2, 2);
    kron(h, &id2) * c(0.0, -dt) + (kron(l, &sp) - kron(&dagger(l), &sm)) * c(dt.sqrt(), 0.0)
}

/// `K_± = ⟨±|U|g⟩` with `|±⟩ = (|0⟩ ± |1⟩)/√2`; index 0 is `+`.
pub fn kraus_pair(h: &M, l: &M, dt: f64) -> [M; 2] {
    let d = h.nrows();
    let u = taylor_exp(&generator(h, l, dt));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let k = |sign: f64| M::from_fn(d, d, |i, j| (u[(2 * i, 2 * j)] + u[(2 * i + 1, 2 * j)] * sign) * s);
    [k(1.0), k(-1.0)]
}

/// Outcome index per step for record `r`; step 1 is the most significant bit.
pub fn bits(r: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| (r >> (n - 1 - k)) & 1).collect()
}

fn product(kraus: &[M; 2], outcomes: &[usize], d: usize) -> M {
    outcomes.iter().fold(M::identity(d, d), |acc, &y| &kraus[y] * acc)
}

pub struct RecordValues {
    pub p: f64,
    pub px: C,
    pub xp: C,
    pub q_plus: C,
    pub q_minus: C,
    pub filter: M,
}

/// `p = Tr[K_y ρ K_y†]`, `Tr[ρ P_y X_τ] = Tr[K_{>m} X K_{≤m} ρ K_y†]` and
/// `Tr[ρ X_τ P_y] = conj Tr[ρ P_y X_τ†]`.
pub fn record_values(kraus: &[M; 2], rho: &M, x: &M, m: usize, r: usize, n: usize) -> RecordValues {
    let d = rho.nrows();
    let y = bits(r, n);
    let early = product(kraus, &y[..m], d);
    let late = product(kraus, &y[m..], d);
    let full = &late * &early;
    let p = tr(&(&full * rho * dagger(&full))).re;
    let moment = |x: &M| tr(&(&late * x * &early * rho * dagger(&full)));
    let px = moment(x);
    let xp = moment(&dagger(x)).conj();
    RecordValues {
        p,
        px,
        xp,
        q_plus: (px + xp) / (2.0 * p),
        q_minus: (px - xp) / (2.0 * p),
        filter: &full * rho * dagger(&full) / c(p, 0.0),
    }
}

/// `Tr[Φᵐ(ρ) X]` with `Φ(ρ) = Σ K ρ K†`.
pub fn propagated_mean(kraus: &[M; 2], rho: &M, x: &M, m: usize) -> C {
    let mut state = rho.clone();
    for _ in 0..m {
        state = kraus.iter().map(|k| k * &state * dagger(k)).fold(M::zeros(rho.nrows(), rho.nrows()), |a, b| a + b);
    }
    tr(&(state * x))
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> M {
    let a = M::from_fn(d, d, |_, _| c(gaussian(rng), gaussian(rng)));
    (&a + dagger(&a)) * c(0.5 * scale, 0.0)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> M {
    M::from_fn(d, d, |_, _| c(gaussian(rng), gaussian(rng)) * scale)
}

/// Full-rank density matrix `A A† / Tr`.
pub fn random_density(rng: &mut ChaCha8Rng, d: usize) -> M {
    let a = random_matrix(rng, d, 1.0);
    let rho = &a * dagger(&a);
    let t = tr(&rho);
    rho / t
}

pub fn max_abs(a: &M) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
