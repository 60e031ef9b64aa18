use std::path::Path;
use std::time::Instant;

use iro_core::eval::{emit_report, RiskCurve};
use iro_core::iro::{IroConfig, PlfTarget};
use iro_core::lambda_dist::BetaParams;
use iro_core::models::{save_checkpoint, Activation};
use iro_core::risk::RiskLevel;
use iro_core::{Error, Result};

use crate::config::{Experiment, ExperimentConfig, Learner};
use crate::pipeline::{ideal_for, io_error, model_curve, regrets_against, train_learner, write_manifest};

pub const IDEAL_LABEL: &str = "ideal";
pub const IMPRECISE_LABEL: &str = "IL";

/// Number of repetitions averaged in the tables.
pub const TABLE_SEEDS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    #[value(name = "table1-synthetic")]
    Table1Synthetic,
    #[value(name = "table1-bike")]
    Table1Bike,
    #[value(name = "fig2")]
    Fig2,
}

/// A labelled learner; `slug` names its checkpoint file.
#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub label: &'static str,
    pub slug: &'static str,
    pub learner: Learner,
}

fn beta(a: f64, b: f64) -> BetaParams {
    BetaParams::new(a, b).expect("shapes inside the clamp range")
}

pub fn imprecise() -> Entry {
    Entry { label: IMPRECISE_LABEL, slug: "il", learner: Learner::Imprecise }
}

/// Precise learners committed to one level or to uniform resampling.
pub fn fixed_level_learners() -> Vec<Entry> {
    vec![
        Entry { label: "PL-f (λ=0)", slug: "plf-0", learner: Learner::Precise(PlfTarget::Fixed(RiskLevel::AVERAGE)) },
        Entry { label: "PL-f (λ=1)", slug: "plf-1", learner: Learner::Precise(PlfTarget::Fixed(RiskLevel::WORST)) },
        Entry { label: "PL-f (U(0,1))", slug: "plf-uniform", learner: Learner::Precise(PlfTarget::UniformResample) },
    ]
}

/// Conditioned learners trained under a fixed prior over levels.
pub fn fixed_prior_learners() -> Vec<Entry> {
    vec![
        Entry { label: "PL-h (Beta(5,5))", slug: "plh-5-5", learner: Learner::FixedPrior(beta(5.0, 5.0)) },
        Entry { label: "PL-h (Beta(5,1))", slug: "plh-5-1", learner: Learner::FixedPrior(beta(5.0, 1.0)) },
        Entry { label: "INF-TASK", slug: "inf-task", learner: Learner::FixedPrior(BetaParams::UNIFORM) },
    ]
}

fn all_learners() -> Vec<Entry> {
    let mut entries = vec![imprecise()];
    entries.extend(fixed_level_learners());
    entries.extend(fixed_prior_learners());
    entries
}

/// Desk-scale optimiser settings shared by the reproductions.
fn desk_training() -> IroConfig {
    IroConfig {
        m: 4,
        m_prime: 8,
        eta: 0.05,
        eta_decay: 0.01,
        max_outer_steps: 1000,
        batch_size: Some(25),
        ..IroConfig::default()
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 && scale <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("--scale {scale} outside (0, 1]")))
    }
}

/// Two-cluster comparison; `scale` multiplies the 250 + 250 domain counts.
pub fn synthetic_config(scale: f64, seeds: Vec<u64>) -> Result<ExperimentConfig> {
    check_scale(scale)?;
    let domains = ((250.0 * scale).round() as usize).max(2);
    Ok(ExperimentConfig {
        experiment: Experiment::Synthetic,
        hidden_layers: vec![8],
        activation: Activation::Identity,
        num_train_domains: domains,
        num_test_domains: domains,
        samples_per_domain: 100,
        seeds,
        training: desk_training(),
        ..ExperimentConfig::default()
    })
}

/// Bike comparison; `scale` is the fraction of first-year rows kept.
pub fn bike_config(scale: f64, seeds: Vec<u64>) -> Result<ExperimentConfig> {
    check_scale(scale)?;
    Ok(ExperimentConfig {
        experiment: Experiment::Bike,
        hidden_layers: vec![16],
        activation: Activation::Tanh,
        bike_train_fraction: (scale < 1.0).then_some(scale),
        seeds,
        training: IroConfig { batch_size: Some(64), max_outer_steps: 500, ..desk_training() },
        ..ExperimentConfig::default()
    })
}

/// Mean max-regret per label over the seeds, in entry order with the ideal
/// last.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub mean_regrets: Vec<f64>,
    pub mean_curves: Vec<RiskCurve>,
}

impl Comparison {
    pub fn regret_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.mean_regrets[i])
    }
}

fn log(message: std::fmt::Arguments) {
    eprintln!("[iro] {message}");
}

/// Trains every entry and the ideal per seed, writes a report per seed
/// under `seed-N/` and the seed-averaged report at the top level.
pub fn compare(
    config: &ExperimentConfig,
    entries: &[Entry],
    data_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<Comparison> {
    let mut per_seed: Vec<(Vec<RiskCurve>, Vec<f64>)> = Vec::new();
    for &seed in &config.seeds {
        let started = Instant::now();
        let (train, test) = config.domains(seed, data_dir)?;
        let dir = out_dir.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let mut curves = Vec::new();
        for entry in entries {
            let trained = train_learner(config, entry.learner, &train, &config.training_for(seed), |_| {})?;
            save_checkpoint(&dir.join(format!("{}.json", entry.slug)), &trained.params)?;
            if let Some(trace) = &trained.trace {
                trace.save_csv(&dir.join(format!("{}-trace.csv", entry.slug)))?;
            }
            curves.push(model_curve(config, &trained.params, &test, entry.label)?);
            log(format_args!("seed {seed}: {} trained ({:.1} s)", entry.label, started.elapsed().as_secs_f64()));
        }
        curves.push(ideal_for(config, &train, &test, seed)?);
        let regrets = regrets_against(&curves, IDEAL_LABEL)?;
        emit_report(&curves, &regrets, &dir)?;
        per_seed.push((curves, regrets));
    }

    let count = per_seed.len() as f64;
    let labels: Vec<String> = per_seed[0].0.iter().map(|c| c.label().to_string()).collect();
    let mean_regrets: Vec<f64> =
        (0..labels.len()).map(|i| per_seed.iter().map(|(_, r)| r[i]).sum::<f64>() / count).collect();
    let mean_curves = (0..labels.len())
        .map(|i| {
            let column: Vec<RiskCurve> = per_seed.iter().map(|(c, _)| c[i].clone()).collect();
            RiskCurve::mean(&column, labels[i].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    emit_report(&mean_curves, &mean_regrets, out_dir)?;
    for (label, regret) in labels.iter().zip(&mean_regrets) {
        log(format_args!("max-regret {label}: {regret:.4}"));
    }
    Ok(Comparison { labels, mean_regrets, mean_curves })
}

/// Runs one reproduction target. `seed` is the first of the repetition seeds.
pub fn reproduce(target: Target, scale: f64, seed: u64, data_dir: Option<&Path>, out_dir: &Path) -> Result<Comparison> {
    let seeds: Vec<u64> = (seed..seed + TABLE_SEEDS).collect();
    let (name, config, entries) = match target {
        Target::Table1Synthetic => ("reproduce table1-synthetic", synthetic_config(scale, seeds)?, all_learners()),
        Target::Table1Bike => ("reproduce table1-bike", bike_config(scale, seeds)?, all_learners()),
        Target::Fig2 => ("reproduce fig2", synthetic_config(scale, vec![seed])?, all_learners()),
    };
    write_manifest(out_dir, name, &config, &config.seeds, Some(scale))?;
    let comparison = compare(&config, &entries, data_dir, out_dir)?;
    if target == Target::Fig2 {
        write_panels(&comparison, out_dir)?;
    }
    Ok(comparison)
}

/// The two figure panels: fixed-level learners and fixed-prior learners,
/// each against the imprecise learner and the ideal.
fn write_panels(comparison: &Comparison, out_dir: &Path) -> Result<()> {
    let panels = [("fig2a", fixed_level_learners()), ("fig2b", fixed_prior_learners())];
    for (name, entries) in panels {
        let keep: Vec<&str> = [IMPRECISE_LABEL, IDEAL_LABEL].into_iter().chain(entries.iter().map(|e| e.label)).collect();
        let (curves, regrets): (Vec<RiskCurve>, Vec<f64>) = comparison
            .mean_curves
            .iter()
            .zip(&comparison.mean_regrets)
            .filter(|(c, _)| keep.contains(&c.label()))
            .map(|(c, r)| (c.clone(), *r))
            .unzip();
        emit_report(&curves, &regrets, &out_dir.join(name))?;
    }
    Ok(())
}
