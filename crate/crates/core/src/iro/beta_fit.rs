use super::objective::objective_and_gradient;
use super::IroConfig;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::lambda_dist::{sample_crn, BetaParams};
use crate::models::Hypothesis;

const MAX_STEP_HALVINGS: usize = 5;

/// Norm of the Monte Carlo update direction when the risk levels are the
/// quantiles of `params` at the fixed uniforms `uniforms`.
pub fn inner_objective<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    params: BetaParams,
    uniforms: &[f64],
    config: &IroConfig,
) -> Result<f64> {
    let lambdas = sample_crn(params, uniforms)?;
    let (_, grad) = objective_and_gradient(model, domains, &lambdas, config.risk_measure, config.loss)?;
    Ok(grad.norm())
}

/// Treats numeric failures as a non-finite objective value.
fn evaluate<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    params: BetaParams,
    uniforms: &[f64],
    config: &IroConfig,
) -> Result<f64> {
    match inner_objective(model, domains, params, uniforms, config) {
        Ok(v) => Ok(v),
        Err(Error::Numeric { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Projected descent on the Beta shapes, minimising [`inner_objective`]
/// with central differences of step `fd_delta_ab` over common random
/// numbers. Returns the best iterate seen.
pub fn fit_beta_q<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    q_init: BetaParams,
    config: &IroConfig,
    uniforms: &[f64],
) -> Result<BetaParams> {
    if uniforms.is_empty() {
        return Err(Error::Config("fitting the sampling distribution needs uniforms".into()));
    }
    let eval = |p: BetaParams| evaluate(model, domains, p, uniforms, config);
    let mut current = q_init;
    let mut value = eval(current)?;
    if !value.is_finite() || value == 0.0 {
        return Ok(q_init);
    }
    let mut best = (value, current);
    let mut step_size = config.inner_step_size;
    let delta = config.fd_delta_ab;

    for _ in 0..config.inner_steps {
        let (a, b) = (current.alpha(), current.beta());
        let a_hi = BetaParams::new(a + delta, b)?;
        let a_lo = BetaParams::new(a - delta, b)?;
        let b_hi = BetaParams::new(a, b + delta)?;
        let b_lo = BetaParams::new(a, b - delta)?;
        let da = (eval(a_hi)? - eval(a_lo)?) / (a_hi.alpha() - a_lo.alpha());
        let db = (eval(b_hi)? - eval(b_lo)?) / (b_hi.beta() - b_lo.beta());
        if !da.is_finite() || !db.is_finite() {
            break;
        }
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = BetaParams::new(a - step_size * da, b - step_size * db)?;
            let v = eval(candidate)?;
            if v.is_finite() {
                accepted = Some((v, candidate));
                break;
            }
            step_size *= 0.5;
        }
        let Some((v, candidate)) = accepted else { break };
        current = candidate;
        value = v;
        if value < best.0 {
            best = (value, current);
        }
    }
    Ok(best.1)
}
