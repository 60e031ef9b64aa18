use std::path::{Path, PathBuf};

use iro_core::data::{check_feature_width, write_domains_csv, DomainDataset};
use iro_core::eval::{emit_report, ideal_curve, max_regret, read_curves_csv, risk_curve, CurveMode, RiskCurve};
use iro_core::iro::{iro_train, plf_train, plh_train, IroConfig, TrainTrace};
use iro_core::models::{init_params, load_checkpoint, save_checkpoint, AugmentedParams, Hypothesis};
use iro_core::risk::lambda_grid;
use iro_core::{Error, Result};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{ExperimentConfig, Learner};

/// A trained model and, for the imprecise learner, its trace.
pub struct Trained {
    pub params: AugmentedParams,
    pub trace: Option<TrainTrace>,
}

/// Trains `learner` from a fresh initialisation. A failed imprecise run
/// still hands back its partial trace through `on_failure`.
pub fn train_learner(
    config: &ExperimentConfig,
    learner: Learner,
    train: &[DomainDataset],
    training: &IroConfig,
    on_failure: impl FnOnce(&TrainTrace),
) -> Result<Trained> {
    let spec = config.architecture(check_feature_width(train)?, learner);
    match learner {
        Learner::Imprecise => match iro_train(&spec, train, training) {
            Ok((params, trace)) => Ok(Trained { params, trace: Some(trace) }),
            Err(failure) => {
                on_failure(&failure.trace);
                Err(failure.source)
            }
        },
        Learner::Precise(target) => {
            let params = plf_train(init_params(&spec, training.seed)?, train, target, training)?;
            Ok(Trained { params, trace: None })
        }
        Learner::FixedPrior(prior) => {
            let params = plh_train(init_params(&spec, training.seed)?, train, prior, training)?;
            Ok(Trained { params, trace: None })
        }
    }
}

/// Curve of a trained model on the configured operator grid.
pub fn model_curve(
    config: &ExperimentConfig,
    model: &AugmentedParams,
    test: &[DomainDataset],
    label: &str,
) -> Result<RiskCurve> {
    let mode = if model.is_conditioned() { CurveMode::Augmented } else { CurveMode::Fixed };
    risk_curve(model, test, &lambda_grid(config.grid_points), config.training.risk_measure, config.loss(), mode, label)
}

/// Ideal curve: one precise learner per grid level, trained on full domains.
pub fn ideal_for(
    config: &ExperimentConfig,
    train: &[DomainDataset],
    test: &[DomainDataset],
    seed: u64,
) -> Result<RiskCurve> {
    let spec = config.architecture(check_feature_width(train)?, Learner::Precise(iro_core::iro::PlfTarget::UniformResample));
    let training = IroConfig { batch_size: None, ..config.training_for(seed) };
    ideal_curve(&spec, train, test, &lambda_grid(config.grid_points), &training)
}

/// Regret of every curve against the one labelled `ideal_label`.
pub fn regrets_against(curves: &[RiskCurve], ideal_label: &str) -> Result<Vec<f64>> {
    let ideal = curves
        .iter()
        .find(|c| c.label() == ideal_label)
        .ok_or_else(|| Error::Config(format!("no curve labelled `{ideal_label}`")))?;
    curves.iter().map(|c| max_regret(c, ideal)).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    code_version: &'a str,
    seeds: &'a [u64],
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    config: Map<String, Value>,
}

/// Records the command, seeds and fully materialised config next to the
/// outputs. Contains nothing run-specific beyond its inputs, so repeated
/// runs write identical manifests.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    seeds: &[u64],
    scale: Option<f64>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let manifest =
        Manifest { command, code_version: env!("CARGO_PKG_VERSION"), seeds, scale, config: config.to_map()? };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
    Ok(path)
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Writes `train.csv` and `test.csv` per seed.
pub fn gen_data(config: &ExperimentConfig, seeds: &[u64], data_dir: Option<&Path>, out_dir: &Path) -> Result<()> {
    for &seed in seeds {
        let (train, test) = config.domains(seed, data_dir)?;
        let dir = seed_dir(out_dir, seed);
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        write_domains_csv(&dir.join("train.csv"), &train)?;
        write_domains_csv(&dir.join("test.csv"), &test)?;
    }
    write_manifest(out_dir, "gen-data", config, seeds, None)?;
    Ok(())
}

/// Trains the configured method per seed, writing `checkpoint.json` and,
/// for the imprecise learner, `trace.csv`.
pub fn train(config: &ExperimentConfig, seeds: &[u64], data_dir: Option<&Path>, out_dir: &Path) -> Result<()> {
    let learner = config.learner()?;
    write_manifest(out_dir, "train", config, seeds, None)?;
    for &seed in seeds {
        let (train, _) = config.domains(seed, data_dir)?;
        let dir = seed_dir(out_dir, seed);
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let trace_path = dir.join("trace.csv");
        let mut partial_write = Ok(());
        let trained = train_learner(config, learner, &train, &config.training_for(seed), |trace| {
            partial_write = trace.save_csv(&trace_path);
        });
        partial_write?;
        let trained = trained?;
        save_checkpoint(&dir.join("checkpoint.json"), &trained.params)?;
        if let Some(trace) = &trained.trace {
            trace.save_csv(&trace_path)?;
        }
    }
    Ok(())
}

/// Evaluates a checkpoint on the test domains of `seed` next to the ideal
/// curve, writing the report files.
pub fn eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    label: &str,
    seed: u64,
    data_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let (train, test) = config.domains(seed, data_dir)?;
    let curve = model_curve(config, &model, &test, label)?;
    let ideal = ideal_for(config, &train, &test, seed)?;
    let curves = vec![curve, ideal];
    let regrets = regrets_against(&curves, "ideal")?;
    emit_report(&curves, &regrets, out_dir)?;
    write_manifest(out_dir, "eval", config, &[seed], None)?;
    Ok(())
}

/// Recomputes `regret.csv` from a `curves.csv` holding an `ideal` curve.
pub fn regret(curves_csv: &Path, ideal_label: &str, out_dir: &Path) -> Result<()> {
    let curves = read_curves_csv(curves_csv)?;
    let regrets = regrets_against(&curves, ideal_label)?;
    emit_report(&curves, &regrets, out_dir)?;
    Ok(())
}
