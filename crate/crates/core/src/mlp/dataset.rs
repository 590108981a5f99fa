use super::MlpError;
use crate::channel::ChannelParams;
use crate::codec::Scheme;
use crate::detect::{classify_array, threshold_detect, ThresholdDetector};
use crate::trial::{simulate, ArrayInstance};
use ndarray::Array2;

/// Which simulated arrays a dataset keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassFilter {
    /// Only arrays the weight comparator flags after middle-point detection.
    AffectedOnly,
    All,
}

/// Draws allowed per requested sample before giving up.
pub const DRAWS_PER_SAMPLE: usize = 1000;
/// Draws after which the acceptance rate is extrapolated to the budget.
pub const STARVATION_PROBE: usize = 10_000;

/// Sample count, filter and sampling budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub count: usize,
    pub filter: ClassFilter,
    /// Maximum number of simulated arrays.
    pub budget: usize,
}

impl DatasetSpec {
    pub fn new(count: usize, filter: ClassFilter) -> Self {
        Self {
            count,
            filter,
            budget: count.saturating_mul(DRAWS_PER_SAMPLE),
        }
    }
}

/// Normalized reads and their stored bits, one row per array.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Array2<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn from_arrays(inputs: Array2<f64>, labels: Array2<f64>, provenance: impl Into<String>) -> Self {
        assert_eq!(inputs.nrows(), labels.nrows(), "inputs and labels misaligned");
        Self {
            inputs,
            labels,
            provenance: provenance.into(),
        }
    }

    pub fn from_instances(instances: &[ArrayInstance], normalizer: f64, provenance: impl Into<String>) -> Self {
        let width = instances.first().map_or(0, |t| t.reads.values().len());
        let mut inputs = Array2::zeros((instances.len(), width));
        let mut labels = Array2::zeros((instances.len(), width));
        for (k, t) in instances.iter().enumerate() {
            for (c, &r) in t.reads.values().iter().enumerate() {
                inputs[[k, c]] = r * normalizer;
            }
            for (c, b) in t.stored.bits.to_row_major().into_iter().enumerate() {
                labels[[k, c]] = f64::from(b);
            }
        }
        Self::from_arrays(inputs, labels, provenance)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Simulates arrays `0, 1, 2, …` under `seed` and keeps those passing the
/// filter until `spec.count` are collected. Fails with
/// [`MlpError::Starvation`] when the budget runs out, or as soon as the
/// acceptance rate seen over the first [`STARVATION_PROBE`] draws cannot
/// reach the count within the budget.
pub fn collect_instances(
    params: &ChannelParams,
    scheme: &Scheme,
    spec: DatasetSpec,
    seed: u64,
) -> Result<Vec<ArrayInstance>, MlpError> {
    if spec.count == 0 {
        return Err(MlpError::InvalidConfig("dataset count must be at least 1".into()));
    }
    let middle = ThresholdDetector::middle_point(params);
    let tile = scheme.tile(params.n);
    let mut kept = Vec::with_capacity(spec.count);
    let mut draws = 0usize;
    while kept.len() < spec.count {
        let starving = draws >= spec.budget
            || (draws >= STARVATION_PROBE && (kept.len() as u128) * (spec.budget as u128) < (spec.count as u128) * (draws as u128));
        if starving {
            return Err(MlpError::Starvation {
                requested: spec.count,
                accepted: kept.len(),
                draws,
                budget: spec.budget,
            });
        }
        let t = simulate(params, scheme, seed, draws as u64).map_err(|e| MlpError::Simulation(e.to_string()))?;
        draws += 1;
        let keep = match spec.filter {
            ClassFilter::All => true,
            ClassFilter::AffectedOnly => {
                let detected = threshold_detect(&t.reads, middle);
                classify_array(&detected, &t.stored.weights, tile)
                    .map_err(|e| MlpError::Simulation(e.to_string()))?
                    .is_affected()
            }
        };
        if keep {
            kept.push(t);
        }
    }
    Ok(kept)
}

/// Training or test samples for the detector network: reads scaled by
/// `1 / r0` as inputs, stored bits as labels.
pub fn generate_dataset(
    params: &ChannelParams,
    scheme: &Scheme,
    count: usize,
    filter: ClassFilter,
    seed: u64,
) -> Result<Dataset, MlpError> {
    let instances = collect_instances(params, scheme, DatasetSpec::new(count, filter), seed)?;
    let provenance = format!(
        "n={} sigma={} pf={} scheme=[{}] filter={:?} seed={seed}",
        params.n,
        params.sigma,
        params.p_f,
        scheme.label(),
        filter
    );
    Ok(Dataset::from_instances(&instances, 1.0 / params.r0, provenance))
}
