use rand::Rng;
use rayon::prelude::*;

use super::beta_fit::fit_beta_q;
use super::min_norm::min_norm_simplex;
use super::objective::{lambda_gradient, lambda_gradients, objective_and_gradient};
use super::{IroConfig, TraceRecord, TrainTrace};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::lambda_dist::{draw_uniforms, sample_crn, BetaParams};
use crate::models::{init_params, ArchitectureSpec, AugmentedParams, GradientVector, Hypothesis};
use crate::risk::{lambda_grid, risk_profile, LossKind, RiskLevel, RiskMeasure};
use crate::rng::{self, Purpose, StreamRng};

/// A failed run together with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training stopped after {} completed steps: {source}", trace.records.len())]
pub struct TrainFailure {
    #[source]
    pub source: Error,
    pub trace: TrainTrace,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.source
    }
}

/// Risk level used by a precise learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlfTarget {
    Fixed(RiskLevel),
    /// A fresh `U(0, 1)` level at every step.
    UniformResample,
}

fn check_domains(domains: &[DomainDataset]) -> Result<()> {
    if domains.is_empty() {
        return Err(Error::Config("training needs at least one domain".into()));
    }
    Ok(())
}

/// Minibatches for one step, or the full domains.
fn step_batches<'a>(
    domains: &'a [DomainDataset],
    config: &IroConfig,
    rng: &mut StreamRng,
    storage: &'a mut Vec<DomainDataset>,
) -> &'a [DomainDataset] {
    match config.batch_size {
        Some(b) if domains.iter().any(|d| d.len() > b) => {
            *storage = domains.iter().map(|d| d.minibatch(b, rng)).collect();
            storage
        }
        _ => domains,
    }
}

fn apply_update<H: Hypothesis + ?Sized>(model: &mut H, direction: &GradientVector, config: &IroConfig, step: usize) {
    let eta = config.eta / (1.0 + config.eta_decay * (step - 1) as f64);
    let decay = config.weight_decay;
    for (p, g) in model.params_mut().iter_mut().zip(direction.values()) {
        *p -= eta * (g + decay * *p);
    }
}

fn grid_risks<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    grid: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<Vec<f64>> {
    grid.par_iter()
        .map(|&lam| Ok(measure.evaluate(&risk_profile(model, domains, lam, loss)?, lam)))
        .collect()
}

fn check_direction(direction: &GradientVector, step: usize) -> Result<f64> {
    let norm = direction.norm();
    if norm.is_finite() {
        Ok(norm)
    } else {
        Err(Error::Numeric { layer: 0, message: format!("non-finite update direction at step {step}") })
    }
}

/// The imprecise learner from a fresh initialisation of `spec`.
pub fn iro_train(
    spec: &ArchitectureSpec,
    domains: &[DomainDataset],
    config: &IroConfig,
) -> std::result::Result<(AugmentedParams, TrainTrace), TrainFailure> {
    let model = init_params(spec, config.seed).map_err(|source| TrainFailure { source, trace: TrainTrace::default() })?;
    iro_optimize(model, domains, config)
}

/// Each step fits the sampling distribution by [`fit_beta_q`] (from `q_init`,
/// or from the previous fit with `warm_start_q`), draws fresh risk levels from it, and moves the
/// parameters against the averaged gradient. Runs until the direction is
/// shorter than `epsilon_stop` or `max_outer_steps` is reached.
pub fn iro_optimize<H: Hypothesis>(
    mut model: H,
    domains: &[DomainDataset],
    config: &IroConfig,
) -> std::result::Result<(H, TrainTrace), TrainFailure> {
    let mut trace = TrainTrace { grid: lambda_grid(config.trace_grid_points), ..TrainTrace::default() };
    let fail = |source: Error, trace: TrainTrace| TrainFailure { source, trace };
    if let Err(e) = config.validate().and_then(|_| check_domains(domains)) {
        return Err(fail(e, trace));
    }
    match grid_risks(&model, domains, &trace.grid, config.risk_measure, config.loss) {
        Ok(r) => trace.initial_risks = r,
        Err(e) => return Err(fail(e, trace)),
    }

    let mut q = config.q_init;
    let mut storage = Vec::new();
    for step in 1..=config.max_outer_steps {
        let mut rng = rng::stream(config.seed, Purpose::Training, step as u64);
        let batches = step_batches(domains, config, &mut rng, &mut storage);
        let outcome = (|| {
            let fit_uniforms = draw_uniforms(&mut rng, config.m);
            let start = if config.warm_start_q { q } else { config.q_init };
            q = fit_beta_q(&model, batches, start, config, &fit_uniforms)?;
            let lambdas = sample_crn(q, &draw_uniforms(&mut rng, config.m_prime))?;
            let (_, direction) = objective_and_gradient(&model, batches, &lambdas, config.risk_measure, config.loss)?;
            let norm = check_direction(&direction, step)?;
            apply_update(&mut model, &direction, config, step);
            let risks = grid_risks(&model, domains, &trace.grid, config.risk_measure, config.loss)?;
            Ok::<_, Error>((norm, risks))
        })();
        let (grad_norm, grid_risks) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        trace.records.push(TraceRecord { step, q, grad_norm, grid_risks });
        if grad_norm <= config.epsilon_stop {
            break;
        }
    }
    Ok((model, trace))
}

/// Shared descent loop for the baselines: `pick` supplies the risk levels
/// for each step.
fn descend<H: Hypothesis>(
    mut model: H,
    domains: &[DomainDataset],
    config: &IroConfig,
    mut pick: impl FnMut(&mut StreamRng) -> Result<Vec<RiskLevel>>,
) -> Result<H> {
    config.validate()?;
    check_domains(domains)?;
    let mut storage = Vec::new();
    for step in 1..=config.max_outer_steps {
        let mut rng = rng::stream(config.seed, Purpose::Training, step as u64);
        let batches = step_batches(domains, config, &mut rng, &mut storage);
        let lambdas = pick(&mut rng)?;
        let direction = if let [single] = lambdas.as_slice() {
            lambda_gradient(&model, batches, *single, config.risk_measure, config.loss)?.1
        } else {
            objective_and_gradient(&model, batches, &lambdas, config.risk_measure, config.loss)?.1
        };
        let norm = check_direction(&direction, step)?;
        apply_update(&mut model, &direction, config, step);
        if norm <= config.epsilon_stop {
            break;
        }
    }
    Ok(model)
}

/// Precise learner: an unconditioned model trained at one risk level.
pub fn plf_train<H: Hypothesis>(
    model: H,
    domains: &[DomainDataset],
    target: PlfTarget,
    config: &IroConfig,
) -> Result<H> {
    if model.is_conditioned() {
        return Err(Error::Config("precise learners take an unconditioned model".into()));
    }
    descend(model, domains, config, |rng| {
        Ok(vec![match target {
            PlfTarget::Fixed(l) => l,
            PlfTarget::UniformResample => RiskLevel::saturating(rng.random()),
        }])
    })
}

/// Conditioned model trained under a fixed prior over risk levels.
pub fn plh_train<H: Hypothesis>(
    model: H,
    domains: &[DomainDataset],
    prior: BetaParams,
    config: &IroConfig,
) -> Result<H> {
    if !model.is_conditioned() {
        return Err(Error::Config("a fixed-prior learner needs a conditioned model".into()));
    }
    descend(model, domains, config, |rng| sample_crn(prior, &draw_uniforms(rng, config.m_prime)))
}

/// Descent on the scalarised objective for a fixed finite set of levels
/// weighted equally.
pub fn scalarized_descent<H: Hypothesis>(
    model: H,
    domains: &[DomainDataset],
    lambdas: &[RiskLevel],
    config: &IroConfig,
) -> Result<H> {
    if lambdas.is_empty() {
        return Err(Error::Config("at least one risk level is required".into()));
    }
    descend(model, domains, config, |_| Ok(lambdas.to_vec()))
}

/// Norm of the min-norm combination of the per-level gradients on `grid`;
/// zero certifies stationarity on the grid.
pub fn pareto_stationarity_residual<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    grid: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::Config("stationarity residual needs at least two grid levels".into()));
    }
    let gradients: Vec<GradientVector> =
        lambda_gradients(model, domains, grid, measure, loss)?.into_iter().map(|(_, g)| g).collect();
    Ok(min_norm_simplex(&gradients)?.norm())
}
