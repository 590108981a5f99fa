//! `reram-spi`: bounds, training, threshold derivation and BER sweeps for
//! crossbar sneak-path detection.

mod config;

use clap::{Parser, Subcommand};
use config::{parse_detectors, Config};
use reram_spi::analysis::CSV_HEADER;
use reram_spi::codec::CodecConfig;
use reram_spi::experiment::{
    derive_coded_threshold, run_experiment, train_detector, DetectorKind, ExperimentError, Models, TrainingSet,
};
use reram_spi::mlp::MlpModel;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "reram-spi", version, about = "Sneak-path detection experiments for ReRAM crossbars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo arrays per row (overrides the file).
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model file to write (train) or read (threshold, evaluate).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Detector selection: a comma-separated detector list for bound and
    /// evaluate, the network to train for train.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Analytic BER lower bound across the sweep.
    Bound,
    /// Train a detector network at the first sweep point.
    Train,
    /// Derive the fixed threshold from a trained network.
    Threshold,
    /// Monte Carlo BER for each detector across the sweep.
    Evaluate,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = Config::from_file(path).map_err(Failure::Config)?;
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.experiment.trials = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.experiment.validate()?;
    Ok(cfg)
}

fn load_model(path: Option<&Path>) -> Result<MlpModel, Failure> {
    let path = path.ok_or_else(|| Failure::Config("--model is required".into()))?;
    if !path.is_file() {
        return Err(Failure::Config(format!("model file {} does not exist", path.display())));
    }
    MlpModel::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn note(message: &str) {
    eprintln!("{message}");
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    let mode_detectors = cli.mode.as_deref().map(parse_detectors).transpose().map_err(Failure::Config)?;
    match cli.command {
        Command::Bound => {
            let wanted = mode_detectors.unwrap_or_else(|| cfg.experiment.detectors.clone());
            let mut bounds: Vec<_> = wanted
                .into_iter()
                .filter(|d| matches!(d, DetectorKind::Bound | DetectorKind::CcBound))
                .collect();
            if bounds.is_empty() {
                bounds.push(DetectorKind::Bound);
            }
            cfg.experiment.detectors = bounds;
            write_rows(&cfg, Models::Train)
        }
        Command::Evaluate => {
            if let Some(d) = mode_detectors {
                cfg.experiment.detectors = d;
            }
            match cli.model.as_deref() {
                Some(p) => {
                    let model = load_model(Some(p))?;
                    write_rows(&cfg, Models::Fixed(&model))
                }
                None => write_rows(&cfg, Models::Train),
            }
        }
        Command::Train => {
            let set = match mode_detectors.as_deref() {
                None => TrainingSet::CodedAffected,
                Some([d]) => d
                    .training()
                    .ok_or_else(|| Failure::Config(format!("{d} has no network to train")))?,
                Some(_) => return Err(Failure::Config("train takes a single --mode".into())),
            };
            let path = cli
                .model
                .as_deref()
                .ok_or_else(|| Failure::Config("--model is required".into()))?;
            let exp = &cfg.experiment;
            let point = &exp.points()[0];
            let code = CodecConfig::rate_preset(&point.rate, exp.criteria[0]).map_err(|e| Failure::Config(e.to_string()))?;
            note(&format!(
                "training on {} samples at sigma={} pf={} ({:?})",
                exp.train.train_samples, point.params.sigma, point.params.p_f, set
            ));
            let (model, trace) = train_detector(&point.params, &code, set, &exp.train, exp.seed)?;
            model.save(path).map_err(|e| Failure::Runtime(e.to_string()))?;
            let mut w = output(cfg.out.as_deref())?;
            writeln!(w, "step,epoch,loss,smoothed")?;
            let per_epoch = trace.steps.len() / trace.epochs.len().max(1);
            for (k, (loss, smooth)) in trace.steps.iter().zip(trace.smoothed(0.1)).enumerate() {
                writeln!(w, "{k},{},{loss:.9e},{smooth:.9e}", k / per_epoch.max(1))?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Threshold => {
            if let Some(d) = mode_detectors {
                if d != [DetectorKind::CcThreshold] {
                    return Err(Failure::Config("threshold only supports --mode cc-threshold".into()));
                }
            }
            let model = load_model(cli.model.as_deref())?;
            let exp = &cfg.experiment;
            let point = &exp.points()[0];
            let code = CodecConfig::rate_preset(&point.rate, exp.criteria[0]).map_err(|e| Failure::Config(e.to_string()))?;
            let report = derive_coded_threshold(&point.params, &code, &model, exp.train.test_samples, exp.seed)?;
            note(&format!("r_th_spi = {}", report.r_th_spi));
            let mut w = output(cfg.out.as_deref())?;
            writeln!(w, "r_th,distance,selected")?;
            for (g, d) in report.grid.iter().zip(&report.distances) {
                writeln!(w, "{g},{d},{}", u8::from(*g == report.r_th_spi))?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn write_rows(cfg: &Config, models: Models<'_>) -> Result<(), Failure> {
    let rows = run_experiment(&cfg.experiment, models, &mut note)?;
    let mut w = output(cfg.out.as_deref())?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
        if r.user_bits > 0 {
            note(&format!(
                "{} sigma={} pf={} rate={}: user-bit BER {:.6e}, flagged arrays {}",
                r.detector,
                r.sigma,
                r.p_f,
                r.rate,
                r.user_ber(),
                r.flagged
            ));
        }
    }
    w.flush()?;
    Ok(())
}
