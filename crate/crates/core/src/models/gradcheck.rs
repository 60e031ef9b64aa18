use super::{AugmentedParams, Hypothesis};
use crate::data::DomainDataset;
use crate::error::Result;
use crate::risk::{LossKind, RiskLevel};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// Index of the worst component.
    pub worst_index: usize,
}

/// Central differences with step `h` on every parameter. Components whose
/// magnitudes are both below `floor` are compared in absolute terms.
pub fn check_gradient(
    model: &AugmentedParams,
    batch: &DomainDataset,
    lambda: RiskLevel,
    loss: LossKind,
    h: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = model.loss_gradient(batch, lambda, loss)?;
    let mut probe = model.clone();
    let mut report = GradientCheck { max_relative_error: 0.0, worst_index: 0 };
    for i in 0..model.num_params() {
        let original = model.params()[i];
        probe.params_mut()[i] = original + h;
        let up = probe.mean_loss(batch, lambda, loss)?;
        probe.params_mut()[i] = original - h;
        let down = probe.mean_loss(batch, lambda, loss)?;
        probe.params_mut()[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.values()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err > report.max_relative_error {
            report = GradientCheck { max_relative_error: err, worst_index: i };
        }
    }
    Ok(report)
}
