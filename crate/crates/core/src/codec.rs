//! Guided-scrambling constrained code for crossbar arrays.
//!
//! Each `m × m` sub-array carries `m² - l` user bits. The trailing `l`
//! positions of the last row (row-major) hold an augmentation pattern; all
//! `2^l` patterns are scrambled and the candidate minimizing the selection
//! criterion is written. Its weight is kept as side information.
//!
//! The scrambler runs over the reverse row-major scan so the augmentation
//! bits enter the shift register first and influence every later position.

use crate::bits::BitMatrix;
use crate::channel::count_possible_sneak_paths;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Largest supported redundancy; `2^l` candidates are enumerated per tile.
pub const MAX_REDUNDANCY: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid scrambler polynomial: {0}")]
    InvalidPoly(String),
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} bits, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("augmentation index {index} out of range for l = {l}")]
    IndexOutOfRange { index: u32, l: usize },
    #[error("array side {n} is not a multiple of tile side {m}")]
    Geometry { n: usize, m: usize },
}

/// Scrambler polynomial `g(x) = x^r + Σ c_p x^(r-p)`, held as the set of tap
/// delays `p` with `c_p = 1`. The constant term must be present (`r ∈ taps`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScramblerPoly {
    degree: usize,
    taps: Vec<usize>,
}

impl ScramblerPoly {
    pub fn from_taps(degree: usize, taps: &[usize]) -> Result<Self, CodecError> {
        if degree == 0 {
            return Err(CodecError::InvalidPoly("degree must be positive".into()));
        }
        let mut taps = taps.to_vec();
        taps.sort_unstable();
        taps.dedup();
        if let Some(&p) = taps.iter().find(|&&p| p == 0 || p > degree) {
            return Err(CodecError::InvalidPoly(format!("tap {p} outside 1..={degree}")));
        }
        if taps.last() != Some(&degree) {
            return Err(CodecError::InvalidPoly("constant term x^0 is required".into()));
        }
        Ok(Self { degree, taps })
    }

    /// Builds the polynomial from its exponents, e.g. `[4, 1, 0]` for `x⁴ + x + 1`.
    pub fn from_exponents(exps: &[usize]) -> Result<Self, CodecError> {
        let degree = *exps
            .iter()
            .max()
            .ok_or_else(|| CodecError::InvalidPoly("empty exponent list".into()))?;
        let taps: Vec<usize> = exps.iter().filter(|&&e| e < degree).map(|&e| degree - e).collect();
        Self::from_taps(degree, &taps)
    }

    /// `x⁴ + x + 1`
    pub fn x4_x_1() -> Self {
        Self::from_exponents(&[4, 1, 0]).unwrap()
    }

    /// Primitive polynomial used for redundancy `l`: degree-`l` for 4, 6 and 8.
    pub fn primitive(degree: usize) -> Option<Self> {
        let exps: &[usize] = match degree {
            4 => &[4, 1, 0],
            6 => &[6, 1, 0],
            8 => &[8, 4, 3, 2, 0],
            _ => return None,
        };
        Some(Self::from_exponents(exps).unwrap())
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// Exponents in descending order.
    pub fn exponents(&self) -> Vec<usize> {
        std::iter::once(self.degree)
            .chain(self.taps.iter().map(|p| self.degree - p))
            .collect()
    }

    /// Division by `g`: `s[k] = i[k] ⊕ Σ_p s[k-p]`, zero initial state.
    pub fn scramble_stream(&self, input: &[u8]) -> Vec<u8> {
        let mut s = Vec::with_capacity(input.len());
        for (k, &bit) in input.iter().enumerate() {
            let mut acc = bit & 1;
            for &p in &self.taps {
                if p <= k {
                    acc ^= s[k - p];
                }
            }
            s.push(acc);
        }
        s
    }

    /// Multiplication by `g`: `i[k] = s[k] ⊕ Σ_p s[k-p]`, zero initial state.
    pub fn descramble_stream(&self, input: &[u8]) -> Vec<u8> {
        (0..input.len())
            .map(|k| {
                self.taps
                    .iter()
                    .filter(|&&p| p <= k)
                    .fold(input[k] & 1, |acc, &p| acc ^ (input[k - p] & 1))
            })
            .collect()
    }
}

impl fmt::Display for ScramblerPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let exps: Vec<String> = self.exponents().iter().map(|e| e.to_string()).collect();
        f.write_str(&exps.join(","))
    }
}

impl FromStr for ScramblerPoly {
    type Err = CodecError;

    /// Parses an exponent list such as `"4,1,0"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let exps = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| CodecError::InvalidPoly(format!("bad exponent {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_exponents(&exps)
    }
}

/// Rule for picking among the scrambled candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Fewest possible sneak paths inside the tile.
    Mnsp,
    /// Fewest `1` entries.
    MinWeight,
}

impl Criterion {
    pub fn score(self, candidate: &BitMatrix) -> u64 {
        match self {
            Criterion::Mnsp => count_possible_sneak_paths(candidate),
            Criterion::MinWeight => candidate.weight(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Mnsp => "mnsp",
            Criterion::MinWeight => "min-weight",
        }
    }
}

impl FromStr for Criterion {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnsp" => Ok(Criterion::Mnsp),
            "min-weight" | "min_weight" | "minweight" => Ok(Criterion::MinWeight),
            other => Err(CodecError::InvalidConfig(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Reverse row-major scan: stream position `k` is row-major cell `m² - 1 - k`.
pub fn serialize(sub: &BitMatrix) -> Vec<u8> {
    let mut v = sub.to_row_major();
    v.reverse();
    v
}

pub fn deserialize(m: usize, stream: &[u8]) -> BitMatrix {
    assert_eq!(stream.len(), m * m);
    let mut v = stream.to_vec();
    v.reverse();
    BitMatrix::from_row_major(m, &v)
}

pub fn scramble(candidate: &BitMatrix, poly: &ScramblerPoly) -> BitMatrix {
    deserialize(candidate.n(), &poly.scramble_stream(&serialize(candidate)))
}

pub fn descramble(s: &BitMatrix, poly: &ScramblerPoly) -> BitMatrix {
    deserialize(s.n(), &poly.descramble_stream(&serialize(s)))
}

/// Candidate `I_index`: user bits row-major, then the `l`-bit binary expansion
/// of `index` (most significant first) in the trailing positions.
pub fn augment(user_bits: &[u8], index: u32, m: usize, l: usize) -> Result<BitMatrix, CodecError> {
    let k = m * m - l;
    if user_bits.len() != k {
        return Err(CodecError::LengthMismatch {
            expected: k,
            got: user_bits.len(),
        });
    }
    if l < 32 && u64::from(index) >= 1u64 << l {
        return Err(CodecError::IndexOutOfRange { index, l });
    }
    let mut bits = Vec::with_capacity(m * m);
    bits.extend(user_bits.iter().map(|b| b & 1));
    bits.extend((0..l).rev().map(|b| ((index >> b) & 1) as u8));
    Ok(BitMatrix::from_row_major(m, &bits))
}

/// Sub-array geometry, redundancy, scrambler and selection rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecConfig {
    m: usize,
    l: usize,
    poly: ScramblerPoly,
    criterion: Criterion,
    /// Scrambled image of each augmentation bit; entry `b` is the response to
    /// index bit `b` (value `2^b`), which is stream position `b`.
    aug_images: Vec<BitMatrix>,
}

impl CodecConfig {
    pub fn new(m: usize, l: usize, poly: ScramblerPoly, criterion: Criterion) -> Result<Self, CodecError> {
        if m == 0 {
            return Err(CodecError::InvalidConfig("tile side must be positive".into()));
        }
        if l >= m * m {
            return Err(CodecError::InvalidConfig(format!("l = {l} leaves no user bits in a {m}x{m} tile")));
        }
        if l > MAX_REDUNDANCY {
            return Err(CodecError::InvalidConfig(format!("l = {l} exceeds {MAX_REDUNDANCY}")));
        }
        let aug_images = (0..l)
            .map(|b| {
                let mut stream = vec![0u8; m * m];
                stream[b] = 1;
                deserialize(m, &poly.scramble_stream(&stream))
            })
            .collect();
        Ok(Self {
            m,
            l,
            poly,
            criterion,
            aug_images,
        })
    }

    /// Named rate points on 16×16 arrays: 15/16, 14/16, 12/16, 10/16 and 8/16.
    pub fn rate_preset(name: &str, criterion: Criterion) -> Result<Self, CodecError> {
        let (m, l) = match name.trim() {
            "15/16" => (8, 4),
            "14/16" => (8, 8),
            "12/16" => (4, 4),
            "10/16" => (4, 6),
            "8/16" => (4, 8),
            other => return Err(CodecError::InvalidConfig(format!("unknown rate preset {other:?}"))),
        };
        Self::new(m, l, ScramblerPoly::primitive(l).unwrap(), criterion)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn poly(&self) -> &ScramblerPoly {
        &self.poly
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    /// User bits in the last row of a tile: `(m² - l) mod m`.
    pub fn t(&self) -> usize {
        (self.m * self.m - self.l) % self.m
    }

    pub fn user_bits_per_tile(&self) -> usize {
        self.m * self.m - self.l
    }

    pub fn rate(&self) -> f64 {
        self.user_bits_per_tile() as f64 / (self.m * self.m) as f64
    }

    pub fn with_criterion(&self, criterion: Criterion) -> Self {
        Self {
            criterion,
            ..self.clone()
        }
    }
}

/// One written tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSubArray {
    pub bits: BitMatrix,
    pub weight: u32,
    pub chosen_index: u32,
    /// Criterion score of the chosen candidate.
    pub score: u64,
}

/// Scores all `2^l` scrambled candidates and keeps the minimizer. Ties go to
/// the lighter candidate, then to the smaller augmentation index.
pub fn encode_subarray(user_bits: &[u8], cfg: &CodecConfig) -> Result<EncodedSubArray, CodecError> {
    let base = scramble(&augment(user_bits, 0, cfg.m, cfg.l)?, &cfg.poly);
    let mut best = (cfg.criterion.score(&base), base.weight(), 0u32);
    let mut best_bits = base.clone();
    // Gray-code walk over augmentation indices; scrambling is linear so each
    // step XORs in one precomputed image.
    let mut cur = base;
    for step in 1u32..(1u32 << cfg.l) {
        let flip = step.trailing_zeros() as usize;
        cur.xor_assign(&cfg.aug_images[flip]);
        let key = (cfg.criterion.score(&cur), cur.weight(), step ^ (step >> 1));
        if key < best {
            best = key;
            best_bits.clone_from(&cur);
        }
    }
    Ok(EncodedSubArray {
        bits: best_bits,
        weight: best.1 as u32,
        chosen_index: best.2,
        score: best.0,
    })
}

pub fn decode_subarray(bits: &BitMatrix, cfg: &CodecConfig) -> Result<Vec<u8>, CodecError> {
    if bits.n() != cfg.m {
        return Err(CodecError::Geometry { n: bits.n(), m: cfg.m });
    }
    let mut plain = descramble(bits, &cfg.poly).to_row_major();
    plain.truncate(cfg.user_bits_per_tile());
    Ok(plain)
}

/// An `n × n` array assembled from encoded tiles in row-major tile order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedArray {
    pub bits: BitMatrix,
    /// Per-tile weights, row-major tile order.
    pub weights: Vec<u32>,
    pub m: usize,
}

/// Payload bits consumed by one `n × n` array.
pub fn payload_len(cfg: &CodecConfig, n: usize) -> usize {
    let tiles = n / cfg.m;
    tiles * tiles * cfg.user_bits_per_tile()
}

fn check_geometry(cfg: &CodecConfig, n: usize) -> Result<(), CodecError> {
    if n == 0 || n % cfg.m != 0 {
        Err(CodecError::Geometry { n, m: cfg.m })
    } else {
        Ok(())
    }
}

pub fn encode_array(payload: &[u8], cfg: &CodecConfig, n: usize) -> Result<EncodedArray, CodecError> {
    check_geometry(cfg, n)?;
    let expected = payload_len(cfg, n);
    if payload.len() != expected {
        return Err(CodecError::LengthMismatch {
            expected,
            got: payload.len(),
        });
    }
    let per = n / cfg.m;
    let k = cfg.user_bits_per_tile();
    let mut bits = BitMatrix::zeros(n);
    let mut weights = Vec::with_capacity(per * per);
    for (t, chunk) in payload.chunks(k).enumerate() {
        let enc = encode_subarray(chunk, cfg)?;
        bits.put_tile((t / per) * cfg.m, (t % per) * cfg.m, &enc.bits);
        weights.push(enc.weight);
    }
    Ok(EncodedArray { bits, weights, m: cfg.m })
}

pub fn decode_array(bits: &BitMatrix, cfg: &CodecConfig) -> Result<Vec<u8>, CodecError> {
    let n = bits.n();
    check_geometry(cfg, n)?;
    let per = n / cfg.m;
    let mut out = Vec::with_capacity(payload_len(cfg, n));
    for t in 0..per * per {
        let tile = bits.tile((t / per) * cfg.m, (t % per) * cfg.m, cfg.m);
        out.extend(decode_subarray(&tile, cfg)?);
    }
    Ok(out)
}

/// How payload bits become stored cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scheme {
    /// Payload written as-is; the whole array's weight is the side information.
    Uncoded,
    Coded(CodecConfig),
}

impl Scheme {
    /// Side of the tiles the weight comparator checks.
    pub fn tile(&self, n: usize) -> usize {
        match self {
            Scheme::Uncoded => n,
            Scheme::Coded(cfg) => cfg.m,
        }
    }

    pub fn payload_len(&self, n: usize) -> usize {
        match self {
            Scheme::Uncoded => n * n,
            Scheme::Coded(cfg) => payload_len(cfg, n),
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Scheme::Uncoded => 1.0,
            Scheme::Coded(cfg) => cfg.rate(),
        }
    }

    pub fn write(&self, payload: &[u8], n: usize) -> Result<EncodedArray, CodecError> {
        match self {
            Scheme::Uncoded => {
                if payload.len() != n * n {
                    return Err(CodecError::LengthMismatch {
                        expected: n * n,
                        got: payload.len(),
                    });
                }
                let bits = BitMatrix::from_row_major(n, payload);
                let weights = vec![bits.weight() as u32];
                Ok(EncodedArray { bits, weights, m: n })
            }
            Scheme::Coded(cfg) => encode_array(payload, cfg, n),
        }
    }

    pub fn read_back(&self, bits: &BitMatrix) -> Result<Vec<u8>, CodecError> {
        match self {
            Scheme::Uncoded => Ok(bits.to_row_major()),
            Scheme::Coded(cfg) => decode_array(bits, cfg),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scheme::Uncoded => "uncoded".to_string(),
            Scheme::Coded(cfg) => format!("m={} l={} g={} {}", cfg.m, cfg.l, cfg.poly, cfg.criterion.name()),
        }
    }
}
