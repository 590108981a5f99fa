//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset.

use rand::Rng;
use reram_spi::analysis::{
    p_nonsp, paired_difference, run_trials, summarize, BerEstimate, BoundInput,
    DetectorSpec, Scenario, TrialOutcome,
};
use reram_spi::bits::BitMatrix;
use reram_spi::channel::{active_configurations, random_array_with, sample_failures_with, ChannelParams};
use reram_spi::codec::{augment, decode_array, deserialize, encode_array, encode_subarray, payload_len, CodecConfig, Criterion, Scheme};
use reram_spi::detect::{classify_array, threshold_detect, Backend, CountingDetector, ThresholdDetector};
use reram_spi::experiment::{derive_coded_threshold, run_experiment, train_detector, DetectorKind, Experiment, Models, SweepAxis, TrainingSet};
use reram_spi::mlp::{gradient_check, MlpModel, TrainConfig};
use reram_spi::seed;
use reram_spi::trial::simulate;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn code(rate: &str, criterion: Criterion) -> CodecConfig {
    CodecConfig::rate_preset(rate, criterion).unwrap()
}

fn c1_roundtrip() -> Verdict {
    let start = Instant::now();
    let cfg = code("15/16", Criterion::Mnsp);
    assert_eq!((cfg.m(), cfg.l(), cfg.poly().to_string().as_str()), (8, 4, "4,1,0"));
    let len = payload_len(&cfg, 16);
    let mut rng = seed::rng(101);
    let mut failures = 0;
    for _ in 0..10_000 {
        let payload: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let stored = encode_array(&payload, &cfg, 16).unwrap();
        if decode_array(&stored.bits, &cfg).unwrap() != payload {
            failures += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        failures == 0 && t < Duration::from_secs(60),
        format!("10^4 payloads, {failures} failures, {:.1}s", t.as_secs_f64()),
    )
}

/// Rectangles with an HRS target and three LRS corners, by direct search.
fn sneak_rectangles(a: &BitMatrix) -> u64 {
    let n = a.n();
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            if a.get(i, j) {
                continue;
            }
            for u in (0..n).filter(|&u| u != i) {
                for v in (0..n).filter(|&v| v != j) {
                    if a.get(i, v) && a.get(u, v) && a.get(u, j) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

fn c2_mnsp_optimal() -> Verdict {
    let mut rng = seed::rng(202);
    let mut violations = 0;
    let mut encodes = 0;
    for (rate, reps) in [("15/16", 500), ("8/16", 500)] {
        let cfg = code(rate, Criterion::Mnsp);
        let k = cfg.user_bits_per_tile();
        for _ in 0..reps {
            let user: Vec<u8> = (0..k).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let chosen = encode_subarray(&user, &cfg).unwrap();
            let chosen_count = sneak_rectangles(&chosen.bits);
            for idx in 0..1u32 << cfg.l() {
                let candidate = augment(&user, idx, cfg.m(), cfg.l()).unwrap();
                let stream = cfg.poly().scramble_stream(&reram_spi::codec::serialize(&candidate));
                let scrambled = deserialize(cfg.m(), &stream);
                if sneak_rectangles(&scrambled) < chosen_count {
                    violations += 1;
                }
            }
            encodes += 1;
        }
    }
    verdict(violations == 0, format!("{encodes} encodes, {violations} strictly better candidates"))
}

/// One target cell per independently drawn array, so cell outcomes are
/// independent and the binomial deviation applies.
fn c3_p_nonsp() -> Verdict {
    let cells = 1_000_000u64;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, pf) in [1e-3, 1e-2, 1e-1].into_iter().enumerate() {
        let params = ChannelParams::reference(0.0, pf);
        let p = p_nonsp(&BoundInput::from_channel(&params, 0.5));
        let mut rng = seed::rng(300 + k as u64);
        let mut clear = 0u64;
        for c in 0..cells {
            let a = random_array_with(16, 0.5, &mut rng);
            let f = sample_failures_with(&params, &mut rng);
            let (i, j) = ((c / 16 % 16) as usize, (c % 16) as usize);
            clear += u64::from(!active_configurations(&a.0, &f.0).unwrap().get(i, j));
        }
        let sd = (p * (1.0 - p) / cells as f64).sqrt();
        let frac = clear as f64 / cells as f64;
        let z = (frac - p).abs() / sd;
        worst = worst.max(z);
        parts.push(format!("pf={pf}: {frac:.6} vs {p:.6} ({z:.2} sd)"));
    }
    verdict(worst <= 3.0, format!("{cells} independent cells each; {}", parts.join("; ")))
}

fn c4_gradient() -> Verdict {
    let model = MlpModel::new(&[16, 64, 32, 16], 1.0, 404);
    let mut rng = seed::rng(405);
    let x = ndarray::Array2::from_shape_simple_fn((8, 16), || rng.random_range(0.1..1.0));
    let y = ndarray::Array2::from_shape_simple_fn((8, 16), || f64::from(u8::from(rng.random_bool(0.5))));
    let err = gradient_check(&model, x.view(), y.view(), 1e-12, 1e-4, 1e-9);
    verdict(err < 1e-5, format!("max relative error {err:.3e} over {} parameters", model.parameter_count()))
}

fn c5_bound_dominance() -> Verdict {
    let mut violations = Vec::new();
    let mut checked = 0;
    for sigma in [20.0, 30.0, 40.0] {
        for pf in [1e-3, 1e-2] {
            let exp = Experiment {
                base: ChannelParams::reference(sigma, pf),
                rate: "15/16".into(),
                criteria: vec![Criterion::Mnsp],
                axis: SweepAxis::Sigma(vec![sigma]),
                detectors: vec![
                    DetectorKind::Bound,
                    DetectorKind::Midpoint,
                    DetectorKind::MlpUnfiltered,
                    DetectorKind::MlpWeight,
                    DetectorKind::CcBound,
                    DetectorKind::CcMidpoint,
                    DetectorKind::CcMlp,
                    DetectorKind::CcThreshold,
                ],
                train: TrainConfig {
                    train_samples: 2000,
                    test_samples: 1000,
                    epochs: 10,
                    ..TrainConfig::for_array(16)
                },
                trials: 2000,
                seed: 500,
            };
            let rows = run_experiment(&exp, Models::Train, &mut |_: &str| {}).unwrap();
            let bound = |label: &str| rows.iter().find(|r| r.detector == label).unwrap().ber;
            let (plain, coded) = (bound("bound"), bound("cc-bound/mnsp"));
            for r in rows.iter().filter(|r| r.cells > 0) {
                let b = if r.detector.starts_with("cc-") { coded } else { plain };
                checked += 1;
                if r.ber < b - 3.0 * r.ci95 {
                    violations.push(format!("{} at sigma={sigma} pf={pf}: {:.3e} < {:.3e}", r.detector, r.ber, b));
                }
            }
        }
    }
    verdict(
        violations.is_empty(),
        format!("{checked} detector rows, {} below bound{}", violations.len(), if violations.is_empty() { String::new() } else { format!(": {}", violations.join("; ")) }),
    )
}

fn ber_of(o: &[TrialOutcome]) -> f64 {
    o.iter().map(|t| f64::from(t.cell_errors)).sum::<f64>() / (o.len() * 256) as f64
}

/// Shared state of criteria 6 and 7: the desk-scale detectors at σ=30,
/// p_f=10⁻³.
struct DeskScale {
    params: ChannelParams,
    cc: CodecConfig,
    cc_mlp: MlpModel,
    cc_mlp_outcomes: Vec<TrialOutcome>,
    seed: u64,
    trials: u64,
}

fn c6_ordering(elapsed_before: Duration) -> (Verdict, DeskScale) {
    let start = Instant::now();
    let params = ChannelParams::reference(30.0, 1e-3);
    let cc = code("15/16", Criterion::Mnsp);
    let cfg = TrainConfig::for_array(16);
    let master = 600;
    let trials = 10_000;
    let test_seed = 601;
    let (unfiltered, _) = train_detector(&params, &cc, TrainingSet::UncodedAll, &cfg, master).unwrap();
    let (weight, _) = train_detector(&params, &cc, TrainingSet::UncodedAffected, &cfg, master).unwrap();
    let (cc_mlp, _) = train_detector(&params, &cc, TrainingSet::CodedAffected, &cfg, master).unwrap();
    let scenario = |label: &str, scheme: Scheme, detector| Scenario {
        label: label.into(),
        params,
        scheme,
        detector,
    };
    let run = |s: Scenario<'_>| run_trials(&s, trials, test_seed).unwrap();
    let mid = run(scenario("midpoint", Scheme::Uncoded, DetectorSpec::Fixed(ThresholdDetector::middle_point(&params))));
    let unf = run(scenario("mlp-unfiltered", Scheme::Uncoded, DetectorSpec::Network(&unfiltered)));
    let wgt = run(scenario("mlp-weight", Scheme::Uncoded, DetectorSpec::Pipeline(Backend::Dl(&weight))));
    let ccm = run(scenario("cc-mlp", Scheme::Coded(cc.clone()), DetectorSpec::Pipeline(Backend::Dl(&cc_mlp))));
    let pairs = [("cc-mlp", &ccm, "mlp-weight", &wgt), ("mlp-weight", &wgt, "mlp-unfiltered", &unf), ("mlp-unfiltered", &unf, "midpoint", &mid)];
    let mut ok = true;
    let mut parts = vec![format!(
        "BER cc-mlp {:.3e}, mlp-weight {:.3e}, mlp-unfiltered {:.3e}, midpoint {:.3e}",
        ber_of(&ccm),
        ber_of(&wgt),
        ber_of(&unf),
        ber_of(&mid)
    )];
    for (a, oa, b, ob) in pairs {
        let d = paired_difference(oa, ob);
        ok &= d.upper95 <= 0.0;
        parts.push(format!("{a}-{b} upper95 {:+.3} err/array", d.upper95));
    }
    let t = start.elapsed();
    ok &= t < Duration::from_secs(30 * 60);
    parts.push(format!("{:.0}s (suite at {:.0}s)", t.as_secs_f64(), elapsed_before.as_secs_f64()));
    (
        verdict(ok, parts.join("; ")),
        DeskScale {
            params,
            cc,
            cc_mlp,
            cc_mlp_outcomes: ccm,
            seed: master,
            trials,
        },
    )
}

fn c7_threshold_parity(desk: &DeskScale) -> Verdict {
    let counted = CountingDetector::new(desk.cc_mlp.clone());
    let report = derive_coded_threshold(&desk.params, &desk.cc, &counted, 10_000, desk.seed).unwrap();
    let offline_calls = counted.calls();
    let s = Scenario {
        label: "cc-threshold".into(),
        params: desk.params,
        scheme: Scheme::Coded(desk.cc.clone()),
        detector: DetectorSpec::Pipeline(Backend::DlThreshold(report.detector())),
    };
    let thr = run_trials(&s, desk.trials, 601).unwrap();
    let online_calls = counted.calls() - offline_calls;
    let (bt, bm) = (ber_of(&thr), ber_of(&desk.cc_mlp_outcomes));
    verdict(
        bt <= 1.5 * bm && online_calls == 0 && offline_calls > 0,
        format!(
            "r_th={} ohm, cc-threshold {bt:.3e} vs 1.5 x cc-mlp {:.3e}; network calls offline {offline_calls}, online {online_calls}",
            report.r_th_spi,
            1.5 * bm
        ),
    )
}

fn c8_rate_sweep() -> Verdict {
    let params = ChannelParams::reference(30.0, 1e-3);
    let cfg = TrainConfig {
        train_samples: 10_000,
        ..TrainConfig::for_array(16)
    };
    let master = 800;
    let trials = 50_000;
    let test_seed = 801;
    let evaluate = |rate: &str, criterion: Criterion| {
        let c = code(rate, criterion);
        let (model, _) = train_detector(&params, &c, TrainingSet::CodedAffected, &cfg, master).unwrap();
        let report = derive_coded_threshold(&params, &c, &model, cfg.test_samples, master).unwrap();
        let s = Scenario {
            label: format!("cc-threshold {rate} {}", criterion.name()),
            params,
            scheme: Scheme::Coded(c),
            detector: DetectorSpec::Pipeline(Backend::DlThreshold(report.detector())),
        };
        let outcomes = run_trials(&s, trials, test_seed).unwrap();
        (summarize(&s, &outcomes, test_seed), outcomes, report.r_th_spi)
    };
    let rates = ["15/16", "14/16", "12/16", "10/16", "8/16"];
    let runs: Vec<(BerEstimate, Vec<TrialOutcome>, f64)> = rates.iter().map(|r| evaluate(r, Criterion::Mnsp)).collect();
    let monotone = runs.windows(2).all(|w| w[1].0.ber <= w[0].0.ber);
    let (mw, mw_outcomes, mw_th) = evaluate("8/16", Criterion::MinWeight);
    let d = paired_difference(&runs[4].1, &mw_outcomes);
    let curve: Vec<String> = rates
        .iter()
        .zip(&runs)
        .map(|(r, (e, _, th))| format!("{r} {:.3e} (r_th {th})", e.ber))
        .collect();
    verdict(
        monotone && d.upper95 <= 0.0,
        format!(
            "mnsp {}; min-weight 8/16 {:.3e} (r_th {mw_th}); monotone {monotone}; mnsp-minweight mean {:+.4} upper95 {:+.4} err/array",
            curve.join(", "),
            mw.ber,
            d.mean,
            d.upper95
        ),
    )
}

fn c9_classifier() -> Verdict {
    let params = ChannelParams::reference(0.0, 1e-2);
    let mut wrong = 0;
    let mut affected = 0;
    let schemes = [Scheme::Uncoded, Scheme::Coded(code("15/16", Criterion::Mnsp))];
    for scheme in &schemes {
        let middle = ThresholdDetector::middle_point(&params);
        for k in 0..5_000 {
            let t = simulate(&params, scheme, 900, k).unwrap();
            let detected = threshold_detect(&t.reads, middle);
            let c = classify_array(&detected, &t.stored.weights, scheme.tile(16)).unwrap();
            let truth = t.sneak.weight() > 0;
            affected += u32::from(truth);
            if c.is_affected() != truth {
                wrong += 1;
            }
        }
    }
    verdict(wrong == 0, format!("10^4 noiseless arrays ({affected} affected), {wrong} misclassified"))
}

fn c10_determinism() -> Verdict {
    let exp = Experiment {
        base: ChannelParams::reference(30.0, 1e-2),
        rate: "12/16".into(),
        criteria: vec![Criterion::Mnsp, Criterion::MinWeight],
        axis: SweepAxis::Sigma(vec![20.0, 40.0]),
        detectors: vec![
            DetectorKind::Bound,
            DetectorKind::Midpoint,
            DetectorKind::MlpWeight,
            DetectorKind::CcBound,
            DetectorKind::CcMlp,
            DetectorKind::CcThreshold,
        ],
        train: TrainConfig {
            train_samples: 200,
            test_samples: 100,
            epochs: 2,
            ..TrainConfig::for_array(16)
        },
        trials: 300,
        seed: 1000,
    };
    let rows: Vec<String> = run_experiment(&exp, Models::Train, &mut |_: &str| {})
        .unwrap()
        .iter()
        .map(BerEstimate::csv_row)
        .collect();
    let mut mismatched = 0;
    for (k, sigma) in [20.0, 40.0].into_iter().enumerate() {
        let single = Experiment {
            axis: SweepAxis::Sigma(vec![sigma]),
            ..exp.clone()
        };
        let again: Vec<String> = run_experiment(&single, Models::Train, &mut |_: &str| {})
            .unwrap()
            .iter()
            .map(BerEstimate::csv_row)
            .collect();
        let per_point = rows.len() / 2;
        for (a, b) in rows[k * per_point..(k + 1) * per_point].iter().zip(&again) {
            if a.as_bytes() != b.as_bytes() {
                mismatched += 1;
            }
        }
    }
    verdict(mismatched == 0, format!("{} rows regenerated, {mismatched} differ", rows.len()))
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let suite = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |k: u32, name: &'static str, v: Verdict| {
        println!("criterion {k:>2} {:<28} {} : {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((k, name, v));
    };
    if want(1) {
        report(1, "codec roundtrip", c1_roundtrip());
    }
    if want(2) {
        report(2, "mnsp optimality", c2_mnsp_optimal());
    }
    if want(3) {
        report(3, "no-sneak probability", c3_p_nonsp());
    }
    if want(4) {
        report(4, "gradient check", c4_gradient());
    }
    if want(5) {
        report(5, "bound dominance", c5_bound_dominance());
    }
    if want(6) || want(7) {
        let (v6, desk) = c6_ordering(suite.elapsed());
        if want(6) {
            report(6, "detector ordering", v6);
        }
        if want(7) {
            report(7, "threshold parity", c7_threshold_parity(&desk));
        }
    }
    if want(8) {
        report(8, "rate sweep", c8_rate_sweep());
    }
    if want(9) {
        report(9, "classifier exactness", c9_classifier());
    }
    if want(10) {
        report(10, "determinism", c10_determinism());
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.0}s",
        results.len() - failed.len(),
        failed.len(),
        suite.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
