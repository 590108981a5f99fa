//! Sweeps over noise level, failure rate or code rate, with detector networks
//! trained in-process at each point.

use crate::analysis::{
    ber_lower_bound, empirical_density, estimate_ber, AnalysisError, BerEstimate, BoundInput, DetectorSpec, Scenario,
};
use crate::channel::ChannelParams;
use crate::codec::{CodecConfig, CodecError, Criterion, Scheme};
use crate::detect::{
    derive_threshold, Backend, DetectError, SoftDetector, ThresholdDetector, ThresholdGrid, ThresholdSearchResult,
};
use crate::mlp::{collect_instances, generate_dataset, train, ClassFilter, DatasetSpec, LossTrace, MlpError, MlpModel, TrainConfig};
use crate::seed::{self, Stream};
use crate::trial::ArrayInstance;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl ExperimentError {
    /// Whether the error comes from the experiment description rather than
    /// from running it.
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config(_) | ExperimentError::Codec(_) => true,
            ExperimentError::Mlp(e) => matches!(e, MlpError::InvalidConfig(_) | MlpError::DimensionMismatch { .. }),
            ExperimentError::Analysis(AnalysisError::InvalidScenario(_)) => true,
            ExperimentError::Analysis(_) => false,
            ExperimentError::Detect(e) => !matches!(e, DetectError::EmptyPool),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    /// Analytic lower bound with `q = 0.5`.
    Bound,
    /// Analytic lower bound with `q` set to the coded `1` density.
    CcBound,
    /// Middle-point threshold on uncoded arrays.
    Midpoint,
    /// Network trained on all uncoded arrays, applied to every array.
    MlpUnfiltered,
    /// Network trained on affected uncoded arrays, applied to arrays the
    /// whole-array weight comparison flags.
    MlpWeight,
    /// Middle-point threshold on coded arrays.
    CcMidpoint,
    /// Network trained on affected coded arrays, applied to flagged arrays.
    CcMlp,
    /// Threshold derived from the coded network, applied to flagged arrays.
    CcThreshold,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 8] = [
        DetectorKind::Bound,
        DetectorKind::CcBound,
        DetectorKind::Midpoint,
        DetectorKind::MlpUnfiltered,
        DetectorKind::MlpWeight,
        DetectorKind::CcMidpoint,
        DetectorKind::CcMlp,
        DetectorKind::CcThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Bound => "bound",
            DetectorKind::CcBound => "cc-bound",
            DetectorKind::Midpoint => "midpoint",
            DetectorKind::MlpUnfiltered => "mlp-unfiltered",
            DetectorKind::MlpWeight => "mlp-weight",
            DetectorKind::CcMidpoint => "cc-midpoint",
            DetectorKind::CcMlp => "cc-mlp",
            DetectorKind::CcThreshold => "cc-threshold",
        }
    }

    pub fn is_coded(self) -> bool {
        matches!(
            self,
            DetectorKind::CcBound | DetectorKind::CcMidpoint | DetectorKind::CcMlp | DetectorKind::CcThreshold
        )
    }

    /// The training set its network needs, if any.
    pub fn training(self) -> Option<TrainingSet> {
        match self {
            DetectorKind::MlpUnfiltered => Some(TrainingSet::UncodedAll),
            DetectorKind::MlpWeight => Some(TrainingSet::UncodedAffected),
            DetectorKind::CcMlp | DetectorKind::CcThreshold => Some(TrainingSet::CodedAffected),
            _ => None,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DetectorKind::ALL
            .into_iter()
            .find(|d| d.name() == s.trim())
            .ok_or_else(|| ExperimentError::Config(format!("unknown detector {s:?}")))
    }
}

/// Which arrays a network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainingSet {
    UncodedAll,
    UncodedAffected,
    CodedAffected,
}

impl TrainingSet {
    pub fn filter(self) -> ClassFilter {
        match self {
            TrainingSet::UncodedAll => ClassFilter::All,
            _ => ClassFilter::AffectedOnly,
        }
    }

    fn tag(self) -> u64 {
        match self {
            TrainingSet::UncodedAll => 1,
            TrainingSet::UncodedAffected => 2,
            TrainingSet::CodedAffected => 3,
        }
    }

    pub fn scheme(self, code: &CodecConfig) -> Scheme {
        match self {
            TrainingSet::CodedAffected => Scheme::Coded(code.clone()),
            _ => Scheme::Uncoded,
        }
    }
}

/// Seed sub-streams derived from a master seed, one per purpose.
const POOL_TAG: u64 = 4;
const INIT_TAG: u64 = 5;
const SHUFFLE_TAG: u64 = 6;

fn purpose_seed(master: u64, tag: u64) -> u64 {
    seed::derive(master, tag, Stream::Init)
}

/// Generates the training set, initializes a detector network centred on the
/// training-input mean, and trains it. `cfg.seed` is ignored in favour of a
/// seed derived from `master`.
pub fn train_detector(
    params: &ChannelParams,
    code: &CodecConfig,
    set: TrainingSet,
    cfg: &TrainConfig,
    master: u64,
) -> Result<(MlpModel, LossTrace), ExperimentError> {
    cfg.validate()?;
    let data = generate_dataset(
        params,
        &set.scheme(code),
        cfg.train_samples,
        set.filter(),
        purpose_seed(master, set.tag()),
    )?;
    let mut model = MlpModel::detector(params.n, 1.0 / params.r0, purpose_seed(master, INIT_TAG));
    let mean = data.inputs.mean_axis(ndarray::Axis(0)).expect("non-empty dataset");
    model.center_inputs(mean.as_slice().unwrap());
    let cfg = TrainConfig {
        seed: purpose_seed(master, SHUFFLE_TAG),
        ..cfg.clone()
    };
    Ok(train(model, &data, &cfg)?)
}

/// The affected coded arrays an offline threshold is derived from.
pub fn coded_threshold_pool(
    params: &ChannelParams,
    code: &CodecConfig,
    pool: usize,
    master: u64,
) -> Result<Vec<ArrayInstance>, ExperimentError> {
    Ok(collect_instances(
        params,
        &Scheme::Coded(code.clone()),
        DatasetSpec::new(pool, ClassFilter::AffectedOnly),
        purpose_seed(master, POOL_TAG),
    )?)
}

/// Derives the offline threshold from `model`'s decisions on the threshold
/// pool.
pub fn derive_coded_threshold(
    params: &ChannelParams,
    code: &CodecConfig,
    model: &dyn SoftDetector,
    pool: usize,
    master: u64,
) -> Result<ThresholdSearchResult, ExperimentError> {
    let instances = coded_threshold_pool(params, code, pool, master)?;
    let reads: Vec<_> = instances.into_iter().map(|t| t.reads).collect();
    let decisions: Vec<_> = reads.iter().map(|r| model.hard_decisions(r)).collect();
    Ok(derive_threshold(&reads, &decisions, &ThresholdGrid::for_channel(params))?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Sigma(Vec<f64>),
    Pf(Vec<f64>),
    Rate(Vec<String>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Sigma(_) => "sigma",
            SweepAxis::Pf(_) => "pf",
            SweepAxis::Rate(_) => "rate",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Sigma(v) | SweepAxis::Pf(v) => v.len(),
            SweepAxis::Rate(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One operating point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub params: ChannelParams,
    pub rate: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Channel used where the axis does not override σ or p_f.
    pub base: ChannelParams,
    /// Code-rate preset used where the axis does not override it.
    pub rate: String,
    pub criteria: Vec<Criterion>,
    pub axis: SweepAxis,
    pub detectors: Vec<DetectorKind>,
    pub train: TrainConfig,
    pub trials: u64,
    pub seed: u64,
}

impl Experiment {
    pub fn points(&self) -> Vec<SweepPoint> {
        let at = |sigma: f64, p_f: f64, rate: &str| SweepPoint {
            params: ChannelParams { sigma, p_f, ..self.base },
            rate: rate.to_string(),
        };
        match &self.axis {
            SweepAxis::Sigma(v) => v.iter().map(|&s| at(s, self.base.p_f, &self.rate)).collect(),
            SweepAxis::Pf(v) => v.iter().map(|&p| at(self.base.sigma, p, &self.rate)).collect(),
            SweepAxis::Rate(v) => v.iter().map(|r| at(self.base.sigma, self.base.p_f, r)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| Err(ExperimentError::Config(m));
        if self.axis.is_empty() {
            return cfg(format!("sweep axis {} has no values", self.axis.name()));
        }
        if self.detectors.is_empty() {
            return cfg("no detectors selected".into());
        }
        if self.criteria.is_empty() {
            return cfg("no selection criterion given".into());
        }
        if self.trials == 0 {
            return cfg("trials must be at least 1".into());
        }
        self.train.validate()?;
        for p in self.points() {
            p.params.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            let code = CodecConfig::rate_preset(&p.rate, self.criteria[0])?;
            if p.params.n % code.m() != 0 {
                return cfg(format!("{}x{} array does not split into {}x{} tiles", p.params.n, p.params.n, code.m(), code.m()));
            }
        }
        Ok(())
    }
}

/// Where the networks come from.
#[derive(Clone, Copy)]
pub enum Models<'a> {
    /// Train each needed network at every point.
    Train,
    /// Use one network for every network-based detector.
    Fixed(&'a MlpModel),
}

/// Progress messages emitted while an experiment runs.
pub trait Progress {
    fn note(&mut self, message: &str);
}

impl<F: FnMut(&str)> Progress for F {
    fn note(&mut self, message: &str) {
        self(message)
    }
}

fn analytic_row(label: String, params: &ChannelParams, rate: f64, q: f64, trials: u64, seed: u64) -> BerEstimate {
    BerEstimate {
        detector: label,
        sigma: params.sigma,
        p_f: params.p_f,
        rate,
        trials,
        cells: 0,
        errors: 0,
        ber: ber_lower_bound(&BoundInput::from_channel(params, q)),
        ci95: 0.0,
        seed,
        user_bits: 0,
        user_errors: 0,
        flagged: 0,
    }
}

/// Runs every detector at every sweep point. Rows come out point by point, in
/// detector order; coded detectors repeat once per criterion and carry the
/// criterion in their label.
pub fn run_experiment(
    exp: &Experiment,
    models: Models<'_>,
    progress: &mut dyn Progress,
) -> Result<Vec<BerEstimate>, ExperimentError> {
    exp.validate()?;
    let mut rows = Vec::new();
    for point in exp.points() {
        let params = point.params;
        let mut uncoded_models: Vec<(TrainingSet, MlpModel)> = Vec::new();
        let uncoded_rows: Vec<DetectorKind> = exp.detectors.iter().copied().filter(|d| !d.is_coded()).collect();
        let coded_rows: Vec<DetectorKind> = exp.detectors.iter().copied().filter(|d| d.is_coded()).collect();
        let base_code = CodecConfig::rate_preset(&point.rate, exp.criteria[0])?;

        for &det in &uncoded_rows {
            let model = match (det.training(), models) {
                (None, _) => None,
                (Some(_), Models::Fixed(m)) => Some(m),
                (Some(set), Models::Train) => {
                    if !uncoded_models.iter().any(|(s, _)| *s == set) {
                        progress.note(&format!(
                            "training {det} network at sigma={} pf={}",
                            params.sigma, params.p_f
                        ));
                        let (m, _) = train_detector(&params, &base_code, set, &exp.train, exp.seed)?;
                        uncoded_models.push((set, m));
                    }
                    uncoded_models.iter().find(|(s, _)| *s == set).map(|(_, m)| m)
                }
            };
            let spec = match det {
                DetectorKind::Bound => {
                    rows.push(analytic_row(det.name().into(), &params, 1.0, 0.5, 0, exp.seed));
                    continue;
                }
                DetectorKind::Midpoint => DetectorSpec::Fixed(ThresholdDetector::middle_point(&params)),
                DetectorKind::MlpUnfiltered => DetectorSpec::Network(model.unwrap()),
                DetectorKind::MlpWeight => DetectorSpec::Pipeline(Backend::Dl(model.unwrap())),
                _ => unreachable!("coded detector in uncoded group"),
            };
            let scenario = Scenario {
                label: det.name().into(),
                params,
                scheme: Scheme::Uncoded,
                detector: spec,
            };
            progress.note(&format!("evaluating {det} at sigma={} pf={}", params.sigma, params.p_f));
            rows.push(estimate_ber(&scenario, exp.trials, exp.seed)?);
        }

        if coded_rows.is_empty() {
            continue;
        }
        for &criterion in &exp.criteria {
            let code = base_code.with_criterion(criterion);
            let scheme = Scheme::Coded(code.clone());
            let label = |d: DetectorKind| format!("{}/{}", d.name(), criterion.name());
            let needs_net = coded_rows.iter().any(|d| d.training().is_some());
            let trained;
            let model: Option<&MlpModel> = match (needs_net, models) {
                (false, _) => None,
                (true, Models::Fixed(m)) => Some(m),
                (true, Models::Train) => {
                    progress.note(&format!(
                        "training cc-mlp network at sigma={} pf={} rate={} {}",
                        params.sigma,
                        params.p_f,
                        point.rate,
                        criterion.name()
                    ));
                    trained = train_detector(&params, &code, TrainingSet::CodedAffected, &exp.train, exp.seed)?.0;
                    Some(&trained)
                }
            };
            let threshold = if coded_rows.contains(&DetectorKind::CcThreshold) {
                let r = derive_coded_threshold(&params, &code, model.unwrap(), exp.train.test_samples, exp.seed)?;
                progress.note(&format!("derived threshold {} ohm for {}", r.r_th_spi, label(DetectorKind::CcThreshold)));
                Some(r.detector())
            } else {
                None
            };
            for &det in &coded_rows {
                let spec = match det {
                    DetectorKind::CcBound => {
                        let q = empirical_density(&params, &scheme, exp.trials, exp.seed)?;
                        rows.push(analytic_row(label(det), &params, code.rate(), q, exp.trials, exp.seed));
                        continue;
                    }
                    DetectorKind::CcMidpoint => DetectorSpec::Fixed(ThresholdDetector::middle_point(&params)),
                    DetectorKind::CcMlp => DetectorSpec::Pipeline(Backend::Dl(model.unwrap())),
                    DetectorKind::CcThreshold => DetectorSpec::Pipeline(Backend::DlThreshold(threshold.unwrap())),
                    _ => unreachable!("uncoded detector in coded group"),
                };
                let scenario = Scenario {
                    label: label(det),
                    params,
                    scheme: scheme.clone(),
                    detector: spec,
                };
                progress.note(&format!("evaluating {} at sigma={} pf={} rate={}", label(det), params.sigma, params.p_f, point.rate));
                rows.push(estimate_ber(&scenario, exp.trials, exp.seed)?);
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(axis: SweepAxis, detectors: &[DetectorKind]) -> Experiment {
        Experiment {
            base: ChannelParams::reference(30.0, 1e-2),
            rate: "15/16".into(),
            criteria: vec![Criterion::Mnsp],
            axis,
            detectors: detectors.to_vec(),
            train: TrainConfig {
                epochs: 1,
                train_samples: 40,
                test_samples: 20,
                batch_size: 16,
                ..TrainConfig::for_array(16)
            },
            trials: 20,
            seed: 5,
        }
    }

    #[test]
    fn detector_names_roundtrip() {
        for d in DetectorKind::ALL {
            assert_eq!(d.name().parse::<DetectorKind>().unwrap(), d);
        }
        assert!("nope".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn rows_follow_sweep_and_detector_order() {
        let exp = small(
            SweepAxis::Sigma(vec![0.0, 20.0]),
            &[DetectorKind::Bound, DetectorKind::Midpoint, DetectorKind::CcMidpoint],
        );
        let rows = run_experiment(&exp, Models::Train, &mut |_: &str| {}).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| (r.detector.as_str(), r.sigma)).collect();
        assert_eq!(
            labels,
            [
                ("bound", 0.0),
                ("midpoint", 0.0),
                ("cc-midpoint/mnsp", 0.0),
                ("bound", 20.0),
                ("midpoint", 20.0),
                ("cc-midpoint/mnsp", 20.0)
            ]
        );
        assert_eq!(rows[0].ber, 0.0);
        assert_eq!(rows[2].rate, 0.9375);
    }

    #[test]
    fn trains_and_evaluates_every_network_detector() {
        let exp = small(
            SweepAxis::Rate(vec!["12/16".into()]),
            &[DetectorKind::MlpUnfiltered, DetectorKind::MlpWeight, DetectorKind::CcMlp, DetectorKind::CcThreshold],
        );
        let exp = Experiment {
            criteria: vec![Criterion::Mnsp, Criterion::MinWeight],
            ..exp
        };
        let rows = run_experiment(&exp, Models::Train, &mut |_: &str| {}).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5].detector, "cc-threshold/min-weight");
        assert!(rows.iter().all(|r| r.cells == 20 * 256));
        let again = run_experiment(&exp, Models::Train, &mut |_: &str| {}).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn rejects_bad_experiments() {
        let mut exp = small(SweepAxis::Pf(vec![]), &[DetectorKind::Midpoint]);
        assert!(exp.validate().unwrap_err().is_config());
        exp.axis = SweepAxis::Pf(vec![2.0]);
        assert!(exp.validate().unwrap_err().is_config());
        exp.axis = SweepAxis::Rate(vec!["3/4".into()]);
        assert!(exp.validate().unwrap_err().is_config());
        exp.axis = SweepAxis::Pf(vec![1e-3]);
        exp.trials = 0;
        assert!(exp.validate().unwrap_err().is_config());
    }

    #[test]
    fn starvation_is_a_runtime_error() {
        let mut exp = small(SweepAxis::Pf(vec![0.0]), &[DetectorKind::MlpWeight]);
        exp.base.sigma = 0.0;
        let err = run_experiment(&exp, Models::Train, &mut |_: &str| {}).unwrap_err();
        assert!(matches!(err, ExperimentError::Mlp(MlpError::Starvation { .. })));
        assert!(!err.is_config());
    }
}
