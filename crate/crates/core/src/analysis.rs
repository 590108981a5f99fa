//! Analytic references and the Monte Carlo BER harness.

use crate::channel::ChannelParams;
use crate::codec::Scheme;
use crate::detect::{pipeline_detect, threshold_detect, Backend, Pipeline, SoftDetector, ThresholdDetector};
use crate::trial::{simulate, SimError};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inputs to the analytic no-sneak-path probability and BER bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInput {
    pub n: usize,
    /// Probability that a stored bit is `1`.
    pub q: f64,
    pub p_f: f64,
    pub r0: f64,
    pub r1: f64,
    pub r_sp: f64,
    pub sigma: f64,
}

impl BoundInput {
    pub fn from_channel(params: &ChannelParams, q: f64) -> Self {
        Self {
            n: params.n,
            q,
            p_f: params.p_f,
            r0: params.r0,
            r1: params.r1,
            r_sp: params.r_sp,
            sigma: params.sigma,
        }
    }

    fn r0_sp(&self) -> f64 {
        1.0 / (1.0 / self.r0 + 1.0 / self.r_sp)
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `k · ln(p)` with the convention `0 · ln 0 = 0`.
fn k_ln(k: usize, p: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

/// Probability that a cell has no active sneak configuration when the stored
/// bits are i.i.d. Bernoulli(`q`) and selectors fail i.i.d. with `p_f`:
///
/// `Σ_u Σ_v C(N-1,u) C(N-1,v) q^(u+v) (1-q)^(2(N-1)-u-v) (1 - p_f q)^(uv)`
///
/// with `u` LRS cells in the target's column and `v` in its row. Terms are
/// accumulated in the log domain.
pub fn p_nonsp(b: &BoundInput) -> f64 {
    let k = b.n.saturating_sub(1);
    let ln_row: Vec<f64> = (0..=k)
        .map(|u| ln_choose(k, u) + k_ln(u, b.q) + k_ln(k - u, 1.0 - b.q))
        .collect();
    let shunt = 1.0 - b.p_f * b.q;
    let mut total = 0.0;
    for (u, lu) in ln_row.iter().enumerate() {
        for (v, lv) in ln_row.iter().enumerate() {
            total += (lu + lv + k_ln(u * v, shunt)).exp();
        }
    }
    total.clamp(0.0, 1.0)
}

/// Lower bound on the raw BER:
/// `P_nonsp · Q((r0 - r1) / 2σ) + (1 - P_nonsp) · Q((r0_sp - r1) / 2σ)`.
/// Zero at `σ = 0`.
pub fn ber_lower_bound(b: &BoundInput) -> f64 {
    if b.sigma <= 0.0 {
        return 0.0;
    }
    let p = p_nonsp(b);
    let two_sigma = 2.0 * b.sigma;
    p * q_function((b.r0 - b.r1) / two_sigma) + (1.0 - p) * q_function((b.r0_sp() - b.r1) / two_sigma)
}

/// Detection strategy applied to every simulated array.
#[derive(Clone, Copy)]
pub enum DetectorSpec<'a> {
    /// One fixed threshold for every array.
    Fixed(ThresholdDetector),
    /// The network on every array.
    Network(&'a dyn SoftDetector),
    /// Middle-point detection, weight comparison, then the backend on flagged
    /// arrays.
    Pipeline(Backend<'a>),
}

/// A complete encode → channel → detect configuration.
#[derive(Clone)]
pub struct Scenario<'a> {
    pub label: String,
    pub params: ChannelParams,
    pub scheme: Scheme,
    pub detector: DetectorSpec<'a>,
}

/// Per-trial error counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialOutcome {
    /// Detected cells that differ from the stored cells.
    pub cell_errors: u32,
    /// Decoded payload bits that differ from the written payload.
    pub user_errors: u32,
    /// Whether the weight comparator flagged the array.
    pub flagged: bool,
    /// Cells shunted by a sneak path.
    pub sneak_cells: u32,
}

/// Result of a Monte Carlo run at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerEstimate {
    pub detector: String,
    pub sigma: f64,
    pub p_f: f64,
    pub rate: f64,
    pub trials: u64,
    pub cells: u64,
    pub errors: u64,
    pub ber: f64,
    /// Half-width of the 95% normal-approximation binomial interval.
    pub ci95: f64,
    pub seed: u64,
    pub user_bits: u64,
    pub user_errors: u64,
    pub flagged: u64,
}

pub const CSV_HEADER: &str = "detector,sigma,pf,rate,trials,cells,errors,ber,ci95,seed";

impl BerEstimate {
    pub fn user_ber(&self) -> f64 {
        if self.user_bits == 0 {
            0.0
        } else {
            self.user_errors as f64 / self.user_bits as f64
        }
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{:.6e},{:.6e},{}",
            self.detector, self.sigma, self.p_f, self.rate, self.trials, self.cells, self.errors, self.ber, self.ci95, self.seed
        )
        .unwrap();
        s
    }
}

/// `1.96 · sqrt(p (1 - p) / n)`
pub fn binomial_ci95(errors: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = errors as f64 / total as f64;
    1.96 * (p * (1.0 - p) / total as f64).sqrt()
}

fn check_scenario(s: &Scenario<'_>) -> Result<(), AnalysisError> {
    s.params
        .validate()
        .map_err(|e| AnalysisError::InvalidScenario(e.to_string()))?;
    let n = s.params.n;
    let tile = s.scheme.tile(n);
    if tile == 0 || n % tile != 0 {
        return Err(AnalysisError::InvalidScenario(format!(
            "{n}x{n} array does not split into {tile}x{tile} tiles"
        )));
    }
    let network = match s.detector {
        DetectorSpec::Network(d) | DetectorSpec::Pipeline(Backend::Dl(d)) => Some(d),
        _ => None,
    };
    if let Some(len) = network.and_then(|d| d.input_len()) {
        if len != n * n {
            return Err(AnalysisError::InvalidScenario(format!(
                "network expects {len} inputs, array has {} cells",
                n * n
            )));
        }
    }
    Ok(())
}

/// Runs trial `index` of a scenario.
pub fn run_trial(s: &Scenario<'_>, seed: u64, index: u64) -> Result<TrialOutcome, AnalysisError> {
    let t = simulate(&s.params, &s.scheme, seed, index)?;
    let middle = ThresholdDetector::middle_point(&s.params);
    let (detected, flagged) = match s.detector {
        DetectorSpec::Fixed(det) => (threshold_detect(&t.reads, det), false),
        DetectorSpec::Network(d) => (d.hard_decisions(&t.reads), false),
        DetectorSpec::Pipeline(backend) => {
            let p = Pipeline {
                middle,
                tile: s.scheme.tile(s.params.n),
                backend: Some(backend),
            };
            let (a, c) = pipeline_detect(&t.reads, &t.stored.weights, &p)
                .map_err(|e| AnalysisError::InvalidScenario(e.to_string()))?;
            (a, c.is_affected())
        }
    };
    let cell_errors = detected.0.hamming(&t.stored.bits) as u32;
    let decoded = s.scheme.read_back(&detected.0).map_err(SimError::from)?;
    let user_errors = decoded.iter().zip(&t.payload).filter(|(a, b)| a != b).count() as u32;
    Ok(TrialOutcome {
        cell_errors,
        user_errors,
        flagged,
        sneak_cells: t.sneak.weight() as u32,
    })
}

/// Trials `0..trials` in order.
pub fn run_trials(s: &Scenario<'_>, trials: u64, seed: u64) -> Result<Vec<TrialOutcome>, AnalysisError> {
    check_scenario(s)?;
    (0..trials).map(|k| run_trial(s, seed, k)).collect()
}

pub fn summarize(s: &Scenario<'_>, outcomes: &[TrialOutcome], seed: u64) -> BerEstimate {
    let n = s.params.n as u64;
    let trials = outcomes.len() as u64;
    let cells = trials * n * n;
    let errors: u64 = outcomes.iter().map(|o| u64::from(o.cell_errors)).sum();
    let user_errors: u64 = outcomes.iter().map(|o| u64::from(o.user_errors)).sum();
    let ber = if cells == 0 { 0.0 } else { errors as f64 / cells as f64 };
    BerEstimate {
        detector: s.label.clone(),
        sigma: s.params.sigma,
        p_f: s.params.p_f,
        rate: s.scheme.rate(),
        trials,
        cells,
        errors,
        ber,
        ci95: binomial_ci95(errors, cells),
        seed,
        user_bits: trials * s.scheme.payload_len(s.params.n) as u64,
        user_errors,
        flagged: outcomes.iter().filter(|o| o.flagged).count() as u64,
    }
}

/// Raw detected-cell BER over `trials` independent arrays.
pub fn estimate_ber(s: &Scenario<'_>, trials: u64, seed: u64) -> Result<BerEstimate, AnalysisError> {
    if trials == 0 {
        return Err(AnalysisError::InvalidScenario("at least one trial is required".into()));
    }
    let outcomes = run_trials(s, trials, seed)?;
    Ok(summarize(s, &outcomes, seed))
}

/// Mean fraction of stored `1`s under a scheme, for use as `q` in the bound.
pub fn empirical_density(params: &ChannelParams, scheme: &Scheme, trials: u64, seed: u64) -> Result<f64, AnalysisError> {
    let mut ones = 0u64;
    for k in 0..trials {
        ones += simulate(params, scheme, seed, k)?.stored.bits.weight();
    }
    Ok(ones as f64 / (trials * (params.n * params.n) as u64) as f64)
}

/// Paired comparison of per-trial cell errors of `a` against `b` (same trial
/// indices). Returns the mean per-array difference and its one-sided 95%
/// upper confidence bound; `upper ≤ 0` supports `BER(a) ≤ BER(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDifference {
    pub mean: f64,
    pub std_err: f64,
    pub upper95: f64,
}

pub fn paired_difference(a: &[TrialOutcome], b: &[TrialOutcome]) -> PairedDifference {
    assert_eq!(a.len(), b.len(), "paired comparison needs equal trial counts");
    assert!(a.len() > 1, "paired comparison needs at least two trials");
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(x.cell_errors) - f64::from(y.cell_errors))
        .collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let std_err = (var / k).sqrt();
    PairedDifference {
        mean,
        std_err,
        upper95: mean + 1.645 * std_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{active_configurations, random_array_with, sample_failures_with};
    use crate::codec::{CodecConfig, Criterion};
    use crate::seed;

    /// Composite Simpson integration of the standard normal density over
    /// `[x, x + 12]`.
    fn q_by_quadrature(x: f64) -> f64 {
        let steps = 200_000;
        let h = 12.0 / steps as f64;
        let f = |u: f64| (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(x) + f(x + 12.0);
        for k in 1..steps {
            let u = x + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(u);
        }
        s * h / 3.0
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.644_853_6) - 0.05).abs() < 1e-6);
        assert!((q_function(1.644_853_6) - q_by_quadrature(1.644_853_6)).abs() < 1e-10);
        assert!((q_function(3.0) - q_by_quadrature(3.0)).abs() < 1e-12);
        let mut rng = seed::rng(1);
        for _ in 0..100 {
            let x: f64 = rand::Rng::random_range(&mut rng, -6.0..6.0);
            assert!((q_function(-x) - (1.0 - q_function(x))).abs() < 1e-15);
        }
    }

    fn bound_input(q: f64, p_f: f64, sigma: f64) -> BoundInput {
        BoundInput::from_channel(&ChannelParams::reference(sigma, p_f), q)
    }

    #[test]
    fn p_nonsp_closed_cases() {
        assert!((p_nonsp(&bound_input(0.5, 0.0, 30.0)) - 1.0).abs() < 1e-12);
        let b = BoundInput {
            n: 2,
            ..bound_input(1.0, 1.0, 30.0)
        };
        assert_eq!(p_nonsp(&b), 0.0);
        assert!((p_nonsp(&bound_input(0.0, 0.3, 30.0)) - 1.0).abs() < 1e-12);
    }

    /// Direct enumeration over the column/row LRS counts without logs.
    fn p_nonsp_direct(b: &BoundInput) -> f64 {
        let k = b.n - 1;
        let choose = |n: usize, r: usize| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let mut t = 0.0;
        for u in 0..=k {
            for v in 0..=k {
                t += choose(k, u)
                    * choose(k, v)
                    * b.q.powi((u + v) as i32)
                    * (1.0 - b.q).powi((2 * k - u - v) as i32)
                    * (1.0 - b.p_f * b.q).powi((u * v) as i32);
            }
        }
        t
    }

    #[test]
    fn p_nonsp_log_domain_matches_direct_sum() {
        for (q, pf) in [(0.5, 1e-3), (0.3, 0.1), (0.8, 0.5)] {
            let b = bound_input(q, pf, 10.0);
            assert!((p_nonsp(&b) - p_nonsp_direct(&b)).abs() < 1e-12);
        }
        // large arrays stay finite
        let big = BoundInput {
            n: 512,
            ..bound_input(0.5, 1e-3, 10.0)
        };
        let p = p_nonsp(&big);
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }

    #[test]
    fn p_nonsp_monotone() {
        let qs = [0.05, 0.2, 0.4, 0.5, 0.7, 0.9];
        let pfs = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 0.5];
        for &q in &qs {
            let v: Vec<f64> = pfs.iter().map(|&pf| p_nonsp(&bound_input(q, pf, 1.0))).collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
        }
        for &pf in &pfs {
            let v: Vec<f64> = qs.iter().map(|&q| p_nonsp(&bound_input(q, pf, 1.0))).collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
        }
    }

    #[test]
    fn p_nonsp_matches_monte_carlo() {
        let params = ChannelParams::reference(0.0, 1e-2);
        let b = BoundInput::from_channel(&params, 0.5);
        let p = p_nonsp(&b);
        let mut rng = seed::rng(77);
        let arrays = 2000;
        let mut clear = 0u64;
        for _ in 0..arrays {
            let a = random_array_with(16, 0.5, &mut rng);
            let f = sample_failures_with(&params, &mut rng);
            clear += 256 - active_configurations(&a.0, &f.0).unwrap().weight();
        }
        let cells = (arrays * 256) as f64;
        let sd = (p * (1.0 - p) / cells).sqrt();
        assert!((clear as f64 / cells - p).abs() < 3.0 * sd, "{} vs {p}", clear as f64 / cells);
    }

    #[test]
    fn bound_values() {
        assert_eq!(ber_lower_bound(&bound_input(0.5, 1e-3, 0.0)), 0.0);
        assert!(ber_lower_bound(&bound_input(0.5, 1e-3, 1e-3)) < 1e-300);
        let b = bound_input(0.5, 0.0, 30.0);
        assert!((ber_lower_bound(&b) - q_function(15.0)).abs() < 1e-14);
        let sweep: Vec<f64> = (1..=100)
            .map(|s| ber_lower_bound(&bound_input(0.5, 1e-3, s as f64)))
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn noiseless_failure_free_ber_is_zero() {
        let params = ChannelParams::reference(0.0, 0.0);
        for scheme in [
            Scheme::Uncoded,
            Scheme::Coded(CodecConfig::rate_preset("15/16", Criterion::Mnsp).unwrap()),
        ] {
            let s = Scenario {
                label: "mid".into(),
                params,
                scheme: scheme.clone(),
                detector: DetectorSpec::Fixed(ThresholdDetector::middle_point(&params)),
            };
            let e = estimate_ber(&s, 50, 3).unwrap();
            assert_eq!((e.errors, e.ber, e.user_errors), (0, 0.0, 0));
            let p = Scenario {
                detector: DetectorSpec::Pipeline(Backend::DlThreshold(ThresholdDetector::new(300.0))),
                ..s
            };
            let e = estimate_ber(&p, 50, 3).unwrap();
            assert_eq!((e.errors, e.flagged), (0, 0));
        }
    }

    #[test]
    fn noiseless_midpoint_errors_are_sneak_cells() {
        let params = ChannelParams::reference(0.0, 1e-3);
        let s = Scenario {
            label: "mid".into(),
            params,
            scheme: Scheme::Uncoded,
            detector: DetectorSpec::Fixed(ThresholdDetector::middle_point(&params)),
        };
        let outcomes = run_trials(&s, 2000, 4).unwrap();
        let mut direct = 0u64;
        for k in 0..2000 {
            direct += simulate(&params, &Scheme::Uncoded, 4, k).unwrap().sneak.weight();
        }
        let e = summarize(&s, &outcomes, 4);
        assert_eq!(e.errors, direct);
        assert!(outcomes.iter().all(|o| o.cell_errors == o.sneak_cells));
        assert!(e.errors > 0);
    }

    #[test]
    fn estimates_reproduce() {
        let params = ChannelParams::reference(40.0, 1e-2);
        let s = Scenario {
            label: "mid".into(),
            params,
            scheme: Scheme::Uncoded,
            detector: DetectorSpec::Fixed(ThresholdDetector::middle_point(&params)),
        };
        assert_eq!(estimate_ber(&s, 100, 9).unwrap(), estimate_ber(&s, 100, 9).unwrap());
        assert_eq!(estimate_ber(&s, 100, 9).unwrap().csv_row(), estimate_ber(&s, 100, 9).unwrap().csv_row());
        assert!(estimate_ber(&s, 0, 9).is_err());
    }

    #[test]
    fn paired_difference_stats() {
        let mk = |e: u32| TrialOutcome {
            cell_errors: e,
            ..Default::default()
        };
        let a: Vec<_> = [1, 2, 3, 4].into_iter().map(mk).collect();
        let b: Vec<_> = [2, 4, 3, 6].into_iter().map(mk).collect();
        let d = paired_difference(&a, &b);
        // diffs -1, -2, 0, -2: mean -1.25, sample var 0.9167
        assert!((d.mean + 1.25).abs() < 1e-12);
        assert!((d.std_err - (0.916_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
    }
}
