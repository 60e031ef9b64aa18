//! Imprecise risk optimisation: the scalarised objective over a distribution
//! of risk levels, min-norm selection of that distribution, the outer
//! training loop, and the precise-learner baselines.

mod beta_fit;
mod min_norm;
mod objective;
mod train;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda_dist::BetaParams;
use crate::risk::{LossKind, RiskLevel, RiskMeasure};

pub use beta_fit::{fit_beta_q, inner_objective};
pub use min_norm::{min_norm_simplex, MinNorm, MIN_NORM_MAX_ITER, MIN_NORM_TOLERANCE};
pub use objective::{lambda_gradient, mc_scalarized_gradient, scalarized_objective};
pub use train::{
    iro_optimize, iro_train, pareto_stationarity_residual, plf_train, plh_train, scalarized_descent,
    PlfTarget, TrainFailure,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IroConfig {
    /// Risk levels drawn to fit the sampling distribution.
    pub m: usize,
    /// Risk levels drawn for each parameter update.
    pub m_prime: usize,
    /// Outer step size.
    pub eta: f64,
    /// Step `t` uses `eta / (1 + eta_decay · (t − 1))`; 0 keeps it constant.
    pub eta_decay: f64,
    /// Descent steps on the Beta shapes per outer step.
    pub inner_steps: usize,
    pub inner_step_size: f64,
    /// Finite-difference step on the Beta shapes.
    pub fd_delta_ab: f64,
    /// Stop once the update direction is shorter than this.
    pub epsilon_stop: f64,
    pub max_outer_steps: usize,
    /// Per-domain minibatch size; `None` uses every sample.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub risk_measure: RiskMeasure,
    pub loss: LossKind,
    /// Added as `weight_decay · ξ` to every update direction.
    pub weight_decay: f64,
    /// Starting sampling distribution.
    pub q_init: BetaParams,
    /// Start each fit from the previous step's distribution instead of `q_init`.
    pub warm_start_q: bool,
    /// Grid points at which the trace records aggregated risks (0 disables).
    pub trace_grid_points: usize,
}

impl Default for IroConfig {
    fn default() -> Self {
        IroConfig {
            m: 20,
            m_prime: 20,
            eta: 1e-2,
            eta_decay: 0.0,
            inner_steps: 5,
            inner_step_size: 1e-2,
            fd_delta_ab: 1e-3,
            epsilon_stop: 1e-4,
            max_outer_steps: 1000,
            batch_size: None,
            seed: 0,
            risk_measure: RiskMeasure::Cvar,
            loss: LossKind::SquaredError,
            weight_decay: 0.0,
            q_init: BetaParams::UNIFORM,
            warm_start_q: false,
            trace_grid_points: 11,
        }
    }
}

impl IroConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.m_prime < 2 {
            return Err(Error::Config("m and m_prime must be at least 2".into()));
        }
        let positive = [
            ("eta", self.eta),
            ("inner_step_size", self.inner_step_size),
            ("fd_delta_ab", self.fd_delta_ab),
            ("epsilon_stop", self.epsilon_stop),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.max_outer_steps == 0 {
            return Err(Error::Config("max_outer_steps must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let non_negative = [("weight_decay", self.weight_decay), ("eta_decay", self.eta_decay)];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
        }
        Ok(())
    }
}

/// State after one completed outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based step index.
    pub step: usize,
    /// Sampling distribution used for the update.
    pub q: BetaParams,
    /// Norm of the update direction (before weight decay).
    pub grad_norm: f64,
    /// Aggregated risk at each trace grid level, after the update.
    pub grid_risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub grid: Vec<RiskLevel>,
    /// Aggregated grid risks of the starting model.
    pub initial_risks: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn final_risks(&self) -> &[f64] {
        self.records.last().map_or(&self.initial_risks, |r| &r.grid_risks)
    }

    /// `step,alpha,beta,grad_norm,risk_<λ>...`, one row per record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "alpha".into(), "beta".into(), "grad_norm".into()];
        header.extend(self.grid.iter().map(|l| format!("risk_{:.4}", l.value())));
        let wrap = |e: csv::Error| Error::Data(format!("writing trace: {e}"));
        writer.write_record(&header).map_err(wrap)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                r.q.alpha().to_string(),
                r.q.beta().to_string(),
                r.grad_norm.to_string(),
            ];
            row.extend(r.grid_risks.iter().map(|v| v.to_string()));
            writer.write_record(&row).map_err(wrap)?;
        }
        writer.flush().map_err(|e| Error::Data(format!("writing trace: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
