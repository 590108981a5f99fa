//! Hard-decision detection: fixed thresholds, the weight comparator, the
//! threshold search against network decisions, and the composite read path.

use crate::bits::BitMatrix;
use crate::channel::{CellArray, ChannelParams, ReadArray};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("threshold {r_th} Ω is outside ({r1}, {r0})")]
    ThresholdOutOfRange { r_th: f64, r1: f64, r0: f64 },
    #[error("tile geometry mismatch: {0}")]
    Geometry(String),
    #[error("threshold search needs a non-empty pool")]
    EmptyPool,
    #[error("pool misaligned: {reads} read arrays vs {decisions} decision arrays")]
    PoolMismatch { reads: usize, decisions: usize },
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("array flagged as sneak-path affected but no second-stage detector is configured")]
    MissingBackend,
}

/// Decides `1` (LRS) when the read is strictly below `r_th`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdDetector {
    pub r_th: f64,
}

impl ThresholdDetector {
    pub fn new(r_th: f64) -> Self {
        Self { r_th }
    }

    /// Rejects thresholds outside the open interval `(r1, r0)`.
    pub fn checked(r_th: f64, params: &ChannelParams) -> Result<Self, DetectError> {
        if r_th > params.r1 && r_th < params.r0 {
            Ok(Self { r_th })
        } else {
            Err(DetectError::ThresholdOutOfRange {
                r_th,
                r1: params.r1,
                r0: params.r0,
            })
        }
    }

    pub fn middle_point(params: &ChannelParams) -> Self {
        Self::new(params.midpoint())
    }
}

pub fn threshold_detect(reads: &ReadArray, det: ThresholdDetector) -> CellArray {
    let n = reads.n();
    CellArray(BitMatrix::from_fn(n, |i, j| reads.get(i, j) < det.r_th))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    SneakPathFree,
    SneakPathAffected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub verdict: Verdict,
    /// One flag per tile, row-major tile order; `true` on weight mismatch.
    pub tile_mismatch: Vec<bool>,
}

impl Classification {
    pub fn is_affected(&self) -> bool {
        self.verdict == Verdict::SneakPathAffected
    }
}

/// Weight comparator: each `m × m` tile's detected weight against its stored
/// weight. Any mismatch flags the whole array.
pub fn classify_array(detected: &CellArray, weights: &[u32], m: usize) -> Result<Classification, DetectError> {
    let n = detected.n();
    if m == 0 || n % m != 0 {
        return Err(DetectError::Geometry(format!("{n}x{n} array does not split into {m}x{m} tiles")));
    }
    let per = n / m;
    if weights.len() != per * per {
        return Err(DetectError::Geometry(format!(
            "{} stored weights for {} tiles",
            weights.len(),
            per * per
        )));
    }
    let tile_mismatch: Vec<bool> = weights
        .iter()
        .enumerate()
        .map(|(t, &w)| detected.0.tile((t / per) * m, (t % per) * m, m).weight() != u64::from(w))
        .collect();
    let verdict = if tile_mismatch.iter().any(|&f| f) {
        Verdict::SneakPathAffected
    } else {
        Verdict::SneakPathFree
    };
    Ok(Classification { verdict, tile_mismatch })
}

/// Evenly spaced candidate thresholds `start, start + step, …, ≤ stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ThresholdGrid {
    /// `r1` to `r0` inclusive in 1 Ω steps.
    pub fn for_channel(params: &ChannelParams) -> Self {
        Self {
            start: params.r1,
            stop: params.r0,
            step: 1.0,
        }
    }

    pub fn points(&self) -> Result<Vec<f64>, DetectError> {
        if !(self.step > 0.0 && self.start.is_finite() && self.stop.is_finite() && self.stop >= self.start) {
            return Err(DetectError::InvalidGrid(format!("{self:?}")));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|k| self.start + k as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearchResult {
    pub r_th_spi: f64,
    pub grid: Vec<f64>,
    /// Total Hamming distance to the reference decisions, per grid point.
    pub distances: Vec<u64>,
}

impl ThresholdSearchResult {
    pub fn detector(&self) -> ThresholdDetector {
        ThresholdDetector::new(self.r_th_spi)
    }

    pub fn min_distance(&self) -> u64 {
        self.distances.iter().copied().min().unwrap_or(0)
    }
}

/// Finds the grid threshold whose decisions are closest, in total Hamming
/// distance over the pool, to the reference (network) decisions. Ties go to
/// the smallest threshold.
pub fn derive_threshold(
    reads: &[ReadArray],
    reference: &[CellArray],
    grid: &ThresholdGrid,
) -> Result<ThresholdSearchResult, DetectError> {
    if reads.is_empty() {
        return Err(DetectError::EmptyPool);
    }
    if reads.len() != reference.len() {
        return Err(DetectError::PoolMismatch {
            reads: reads.len(),
            decisions: reference.len(),
        });
    }
    let points = grid.points()?;
    // bucket[k] counts cells with exactly k grid points ≤ r. For grid index g,
    // a reference-1 cell disagrees when g < k, a reference-0 cell when g ≥ k.
    let mut ones = vec![0u64; points.len() + 1];
    let mut zeros = vec![0u64; points.len() + 1];
    for (r, a) in reads.iter().zip(reference) {
        if r.n() != a.n() {
            return Err(DetectError::Geometry(format!("read {0}x{0} vs decisions {1}x{1}", r.n(), a.n())));
        }
        let n = r.n();
        for i in 0..n {
            for j in 0..n {
                let k = points.partition_point(|&t| t <= r.get(i, j));
                if a.get(i, j) {
                    ones[k] += 1;
                } else {
                    zeros[k] += 1;
                }
            }
        }
    }
    let mut ones_above: u64 = ones.iter().sum::<u64>() - ones[0];
    let mut zeros_below = 0u64;
    let mut distances = Vec::with_capacity(points.len());
    for g in 0..points.len() {
        zeros_below += zeros[g];
        distances.push(ones_above + zeros_below);
        ones_above -= ones[g + 1];
    }
    let best = distances
        .iter()
        .enumerate()
        .min_by_key(|&(g, &d)| (d, g))
        .map(|(g, _)| g)
        .unwrap();
    Ok(ThresholdSearchResult {
        r_th_spi: points[best],
        grid: points,
        distances,
    })
}

/// A detector producing per-cell probabilities that the cell stores `1`.
pub trait SoftDetector {
    fn soft_estimates(&self, reads: &ReadArray) -> Vec<f64>;

    /// Number of cells the detector expects, if fixed.
    fn input_len(&self) -> Option<usize> {
        None
    }

    /// Hard decisions: soft output above 0.5 decides `1`.
    fn hard_decisions(&self, reads: &ReadArray) -> CellArray {
        let n = reads.n();
        let soft = self.soft_estimates(reads);
        CellArray(BitMatrix::from_fn(n, |i, j| soft[i * n + j] > 0.5))
    }
}

/// Counts inference calls made through it.
#[derive(Debug)]
pub struct CountingDetector<D> {
    inner: D,
    calls: AtomicUsize,
}

impl<D> CountingDetector<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<D: SoftDetector> SoftDetector for CountingDetector<D> {
    fn soft_estimates(&self, reads: &ReadArray) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.soft_estimates(reads)
    }

    fn input_len(&self) -> Option<usize> {
        self.inner.input_len()
    }
}

/// Second-stage detector for arrays the comparator flags.
#[derive(Clone, Copy)]
pub enum Backend<'a> {
    /// Re-detect with the network.
    Dl(&'a dyn SoftDetector),
    /// Re-detect with a fixed threshold derived from the network offline.
    DlThreshold(ThresholdDetector),
}

/// Middle-point detection, weight comparison, then re-detection of flagged
/// arrays.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub middle: ThresholdDetector,
    pub tile: usize,
    pub backend: Option<Backend<'a>>,
}

impl Pipeline<'_> {
    pub fn detect(&self, reads: &ReadArray, weights: &[u32]) -> Result<(CellArray, Classification), DetectError> {
        pipeline_detect(reads, weights, self)
    }
}

pub fn pipeline_detect(
    reads: &ReadArray,
    weights: &[u32],
    pipeline: &Pipeline<'_>,
) -> Result<(CellArray, Classification), DetectError> {
    let first = threshold_detect(reads, pipeline.middle);
    let class = classify_array(&first, weights, pipeline.tile)?;
    if !class.is_affected() {
        return Ok((first, class));
    }
    let second = match pipeline.backend {
        Some(Backend::Dl(model)) => model.hard_decisions(reads),
        Some(Backend::DlThreshold(det)) => threshold_detect(reads, det),
        None => return Err(DetectError::MissingBackend),
    };
    Ok((second, class))
}
