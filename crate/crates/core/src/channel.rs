//! Crossbar read channel with sneak-path interference.
//!
//! A cell storing `1` sits in the low-resistance state (LRS, `r1`), a cell
//! storing `0` in the high-resistance state (HRS, `r0`). An HRS target cell
//! `(i, j)` is sneak-path affected when some `(u, v)` with `u != i`, `v != j`
//! closes a rectangle of LRS cells `A[i][v] = A[u][v] = A[u][j] = 1` and the
//! selector of the diagonal cell `(u, v)` has failed. An affected cell reads
//! as `r0 ∥ r_sp`; every read additionally carries i.i.d. Gaussian noise.

use crate::bits::{and_count, and_not_count, BitMatrix};
use crate::seed::{self, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {left}x{left} vs {right}x{right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Operating point of the crossbar channel. Resistances are in ohms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub n: usize,
    pub r0: f64,
    pub r1: f64,
    pub r_sp: f64,
    pub sigma: f64,
    pub p_f: f64,
}

impl ChannelParams {
    pub const R0: f64 = 1000.0;
    pub const R1: f64 = 100.0;
    pub const R_SP: f64 = 250.0;
    pub const N: usize = 16;

    /// The reference device: 16×16 array, R1 = 100 Ω, R0 = 1000 Ω, Rsp = 250 Ω.
    pub fn reference(sigma: f64, p_f: f64) -> Self {
        Self {
            n: Self::N,
            r0: Self::R0,
            r1: Self::R1,
            r_sp: Self::R_SP,
            sigma,
            p_f,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |msg: String| Err(ChannelError::InvalidParams(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if !(self.r1 > 0.0 && self.r0 > self.r1 && self.r0.is_finite()) {
            return bad(format!("need r0 > r1 > 0, got r0 = {}, r1 = {}", self.r0, self.r1));
        }
        if !(self.r_sp > 0.0 && self.r_sp.is_finite()) {
            return bad(format!("r_sp = {} must be positive", self.r_sp));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be non-negative", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.p_f) {
            return bad(format!("p_f = {} outside [0, 1]", self.p_f));
        }
        Ok(())
    }

    /// Resistance of an HRS cell shunted by one sneak path: `(1/r0 + 1/r_sp)⁻¹`.
    pub fn r0_sp(&self) -> f64 {
        1.0 / (1.0 / self.r0 + 1.0 / self.r_sp)
    }

    /// Middle-point detection threshold `(r0 + r1) / 2`.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.r0 + self.r1)
    }
}

/// Stored bits of an `n × n` array; `1` = LRS, `0` = HRS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellArray(pub BitMatrix);

/// Selector failures; `1` marks a failed selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureMask(pub BitMatrix);

/// `1` marks an HRS cell whose read is shunted by a sneak path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SneakMask(pub BitMatrix);

macro_rules! bit_newtype {
    ($t:ty) => {
        impl $t {
            pub fn n(&self) -> usize {
                self.0.n()
            }

            pub fn get(&self, i: usize, j: usize) -> bool {
                self.0.get(i, j)
            }

            pub fn bits(&self) -> &BitMatrix {
                &self.0
            }

            pub fn weight(&self) -> u64 {
                self.0.weight()
            }
        }
    };
}

bit_newtype!(CellArray);
bit_newtype!(FailureMask);
bit_newtype!(SneakMask);

/// Measured resistances, row-major, in ohms.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadArray {
    n: usize,
    r: Vec<f64>,
}

impl ReadArray {
    pub fn new(n: usize, r: Vec<f64>) -> Self {
        assert_eq!(r.len(), n * n, "read array needs n² values");
        Self { n, r }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.r
    }
}

fn same_dims(a: usize, b: usize) -> Result<(), ChannelError> {
    if a == b {
        Ok(())
    } else {
        Err(ChannelError::DimensionMismatch { left: a, right: b })
    }
}

fn bernoulli_matrix(n: usize, p: f64, rng: &mut SimRng) -> BitMatrix {
    let mut m = BitMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(p) {
                m.set(i, j, true);
            }
        }
    }
    m
}

/// i.i.d. Bernoulli(`p_f`) selector failures over the `n × n` array.
pub fn sample_failures(params: &ChannelParams, seed: u64) -> FailureMask {
    sample_failures_with(params, &mut seed::rng(seed))
}

pub fn sample_failures_with(params: &ChannelParams, rng: &mut SimRng) -> FailureMask {
    FailureMask(bernoulli_matrix(params.n, params.p_f, rng))
}

/// i.i.d. Bernoulli(`q`) stored bits. Panics if `q` is outside `[0, 1]`.
pub fn random_array(n: usize, q: f64, seed: u64) -> CellArray {
    random_array_with(n, q, &mut seed::rng(seed))
}

pub fn random_array_with(n: usize, q: f64, rng: &mut SimRng) -> CellArray {
    assert!((0.0..=1.0).contains(&q), "Bernoulli parameter {q} outside [0, 1]");
    CellArray(bernoulli_matrix(n, q, rng))
}

/// Cells `(i, j)` that have at least one active sneak configuration: some
/// `u != i`, `v != j` with `A[i][v] = A[u][v] = A[u][j] = 1` and a failed
/// selector at `(u, v)`. The target's own state is not consulted.
pub fn active_configurations(a: &BitMatrix, fails: &BitMatrix) -> Result<BitMatrix, ChannelError> {
    same_dims(a.n(), fails.n())?;
    let n = a.n();
    let words = a.words_per_row();
    let mut out = BitMatrix::zeros(n);
    let mut diag = vec![0u64; words];
    let mut active_row = vec![0u64; words];
    for i in 0..n {
        active_row.iter_mut().for_each(|w| *w = 0);
        let ri = a.row(i);
        for u in (0..n).filter(|&u| u != i) {
            let ru = a.row(u);
            let fu = fails.row(u);
            // v candidates: A[i][v] = A[u][v] = 1 with failed (u, v)
            let mut hits = 0u32;
            for w in 0..words {
                diag[w] = ri[w] & ru[w] & fu[w];
                hits += diag[w].count_ones();
            }
            match hits {
                0 => {}
                1 => {
                    // the single diagonal at column v0 cannot serve target column v0
                    for w in 0..words {
                        active_row[w] |= ru[w] & !diag[w];
                    }
                }
                _ => {
                    for w in 0..words {
                        active_row[w] |= ru[w];
                    }
                }
            }
        }
        for j in 0..n {
            if (active_row[j / 64] >> (j % 64)) & 1 == 1 {
                out.set(i, j, true);
            }
        }
    }
    Ok(out)
}

/// Marks every HRS cell reached by at least one sneak path through a failed
/// selector.
pub fn compute_sneak_mask(a: &CellArray, fails: &FailureMask) -> Result<SneakMask, ChannelError> {
    let active = active_configurations(&a.0, &fails.0)?;
    Ok(SneakMask(active.and_not(&a.0)))
}

/// Total number of possible sneak paths: over every HRS cell `(i, j)`, the
/// number of `(u, v)` with `u != i`, `v != j` and `A[i][v] = A[u][v] = A[u][j] = 1`.
/// Selector state is ignored.
pub fn count_possible_sneak_paths(a: &BitMatrix) -> u64 {
    let n = a.n();
    let mut total = 0u64;
    for i in 0..n {
        let ri = a.row(i);
        for u in (0..n).filter(|&u| u != i) {
            let ru = a.row(u);
            // shared LRS columns v, times HRS targets j in row i with A[u][j] = 1
            let shared = and_count(ri, ru);
            if shared == 0 {
                continue;
            }
            total += u64::from(shared) * u64::from(and_not_count(ru, ri));
        }
    }
    total
}

/// Possible sneak paths ending at one target cell `(i, j)`; zero when the
/// target is LRS.
pub fn possible_sneak_paths_at(a: &BitMatrix, i: usize, j: usize) -> u64 {
    if a.get(i, j) {
        return 0;
    }
    let ri = a.row(i);
    (0..a.n())
        .filter(|&u| u != i && a.get(u, j))
        .map(|u| u64::from(and_count(ri, a.row(u))))
        .sum()
}

/// Noisy readout `r = R + η` with `R ∈ {r1, r0, r0 ∥ r_sp}` and `η ~ N(0, σ²)`.
pub fn read_array(
    a: &CellArray,
    e: &SneakMask,
    params: &ChannelParams,
    seed: u64,
) -> Result<ReadArray, ChannelError> {
    read_array_with(a, e, params, &mut seed::rng(seed))
}

pub fn read_array_with(
    a: &CellArray,
    e: &SneakMask,
    params: &ChannelParams,
    rng: &mut SimRng,
) -> Result<ReadArray, ChannelError> {
    same_dims(a.n(), e.n())?;
    let n = a.n();
    let r0_sp = params.r0_sp();
    let noise = if params.sigma > 0.0 {
        Some(Normal::new(0.0, params.sigma).map_err(|e| ChannelError::InvalidParams(e.to_string()))?)
    } else {
        None
    };
    let mut r = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let nominal = if a.get(i, j) {
                params.r1
            } else if e.get(i, j) {
                r0_sp
            } else {
                params.r0
            };
            let eta = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            r.push(nominal + eta);
        }
    }
    Ok(ReadArray::new(n, r))
}
