//! Flat `key = value` experiment files.

use reram_spi::channel::ChannelParams;
use reram_spi::codec::Criterion;
use reram_spi::experiment::{DetectorKind, Experiment, SweepAxis};
use reram_spi::mlp::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const KEYS: &[&str] = &[
    "n",
    "r0",
    "r1",
    "r_sp",
    "sweep",
    "sigma",
    "pf",
    "rate",
    "criterion",
    "detectors",
    "trials",
    "seed",
    "epochs",
    "learning_rate",
    "batch_size",
    "beta1",
    "beta2",
    "adam_epsilon",
    "bce_clamp",
    "train_samples",
    "test_samples",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub experiment: Experiment,
    pub out: Option<PathBuf>,
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", k + 1))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key {key:?}", k + 1));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {key:?}", k + 1));
        }
    }
    Ok(map)
}

fn scalar<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, String> {
    match map.get(key) {
        None => Ok(default),
        Some(v) if v.contains(',') => Err(format!("{key} takes a single value unless it is the sweep axis")),
        Some(v) => v.parse().map_err(|_| format!("{key}: cannot parse {v:?}")),
    }
}

fn list<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>, String> {
    let v = map.get(key).ok_or_else(|| format!("sweep axis {key} has no values"))?;
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("{key}: cannot parse {s:?}")))
        .collect()
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let map = parse_pairs(text)?;
        let reference = ChannelParams::reference(30.0, 1e-3);
        let sweep = map.get("sweep").map(String::as_str).ok_or("missing key \"sweep\" (sigma, pf or rate)")?;
        let axis = match sweep {
            "sigma" => SweepAxis::Sigma(list(&map, "sigma")?),
            "pf" => SweepAxis::Pf(list(&map, "pf")?),
            "rate" => SweepAxis::Rate(list(&map, "rate")?),
            other => return Err(format!("sweep must be sigma, pf or rate, not {other:?}")),
        };
        let fixed = |key: &str, default: f64| if sweep == key { Ok(default) } else { scalar(&map, key, default) };
        let base = ChannelParams {
            n: scalar(&map, "n", reference.n)?,
            r0: scalar(&map, "r0", reference.r0)?,
            r1: scalar(&map, "r1", reference.r1)?,
            r_sp: scalar(&map, "r_sp", reference.r_sp)?,
            sigma: fixed("sigma", reference.sigma)?,
            p_f: fixed("pf", reference.p_f)?,
        };
        let rate = if sweep == "rate" {
            String::new()
        } else {
            scalar(&map, "rate", "15/16".to_string())?
        };
        let criteria = match map.get("criterion") {
            None => vec![Criterion::Mnsp],
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<Criterion>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?,
        };
        let detectors = match map.get("detectors") {
            None => vec![DetectorKind::Midpoint],
            Some(v) => parse_detectors(v)?,
        };
        let defaults = TrainConfig::for_array(base.n);
        let train = TrainConfig {
            batch_size: scalar(&map, "batch_size", defaults.batch_size)?,
            learning_rate: scalar(&map, "learning_rate", defaults.learning_rate)?,
            beta1: scalar(&map, "beta1", defaults.beta1)?,
            beta2: scalar(&map, "beta2", defaults.beta2)?,
            epsilon: scalar(&map, "adam_epsilon", defaults.epsilon)?,
            epochs: scalar(&map, "epochs", defaults.epochs)?,
            bce_clamp: scalar(&map, "bce_clamp", defaults.bce_clamp)?,
            train_samples: scalar(&map, "train_samples", defaults.train_samples)?,
            test_samples: scalar(&map, "test_samples", defaults.test_samples)?,
            seed: defaults.seed,
        };
        let experiment = Experiment {
            base,
            rate,
            criteria,
            axis,
            detectors,
            train,
            trials: scalar(&map, "trials", 10_000)?,
            seed: scalar(&map, "seed", 1)?,
        };
        Ok(Config {
            experiment,
            out: map.get("out").map(PathBuf::from),
        })
    }
}

pub fn parse_detectors(v: &str) -> Result<Vec<DetectorKind>, String> {
    v.split(',')
        .map(|s| s.parse::<DetectorKind>().map_err(|e| e.to_string()))
        .collect()
}
