use rayon::prelude::*;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::models::{GradientVector, Hypothesis};
use crate::risk::{risk_profile, LossKind, RiskLevel, RiskMeasure, RiskProfile};

fn check_inputs(domains: &[DomainDataset], lambdas: &[RiskLevel]) -> Result<()> {
    if domains.is_empty() {
        return Err(Error::Config("at least one domain is required".into()));
    }
    if lambdas.is_empty() {
        return Err(Error::Config("at least one risk level is required".into()));
    }
    Ok(())
}

/// Mean over `lambdas` of the aggregated risk, the model being conditioned
/// on the same level that aggregates its domain risks.
pub fn scalarized_objective<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambdas: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<f64> {
    check_inputs(domains, lambdas)?;
    let values = lambdas
        .par_iter()
        .map(|&lam| Ok(measure.evaluate(&risk_profile(model, domains, lam, loss)?, lam)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / lambdas.len() as f64)
}

/// Aggregated risk at one level and its gradient, with the aggregation
/// weights frozen at the current risk profile.
pub fn lambda_gradient<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambda: RiskLevel,
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<(f64, GradientVector)> {
    check_inputs(domains, &[lambda])?;
    let parts = domains
        .iter()
        .map(|d| model.loss_gradient(d, lambda, loss))
        .collect::<Result<Vec<_>>>()?;
    let risks = parts.iter().map(|(r, _)| *r).collect();
    let ids = domains.iter().map(|d| d.domain_id.clone()).collect();
    let profile = RiskProfile::new(risks, ids)?;
    let (value, coefficients) = measure.linearise(&profile, lambda);
    let mut grad = GradientVector::zeros(model.num_params());
    for ((_, g), c) in parts.iter().zip(&coefficients) {
        if *c != 0.0 {
            grad.add_scaled(*c, g);
        }
    }
    Ok((value, grad))
}

/// Per-level values and gradients, evaluated in parallel and returned in
/// input order.
pub(crate) fn lambda_gradients<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambdas: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<Vec<(f64, GradientVector)>> {
    check_inputs(domains, lambdas)?;
    lambdas
        .par_iter()
        .map(|&lam| lambda_gradient(model, domains, lam, measure, loss))
        .collect()
}

/// Monte Carlo estimate of the objective and its gradient; the reduction runs
/// sequentially in input order so results do not depend on thread count.
pub(crate) fn objective_and_gradient<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambdas: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<(f64, GradientVector)> {
    let parts = lambda_gradients(model, domains, lambdas, measure, loss)?;
    let scale = 1.0 / lambdas.len() as f64;
    let mut grad = GradientVector::zeros(model.num_params());
    let mut value = 0.0;
    for (v, g) in &parts {
        value += v;
        grad.add_scaled(scale, g);
    }
    Ok((value * scale, grad))
}

/// Gradient of [`scalarized_objective`] with frozen aggregation weights.
pub fn mc_scalarized_gradient<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambdas: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
) -> Result<GradientVector> {
    Ok(objective_and_gradient(model, domains, lambdas, measure, loss)?.1)
}
