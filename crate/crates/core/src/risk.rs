//! Losses, per-domain empirical risks and their aggregation.
//!
//! An aggregation functional turns a risk profile (one empirical risk per
//! training domain) into a single number. CVaR at level λ is represented
//! explicitly as a point on the probability simplex over domains, so the
//! aggregate is a weighted average and its gradient is the same weighted
//! average of per-domain gradients.

use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::models::Hypothesis;

/// Operator risk level λ ∈ [0, 1]; 0 is the average case, 1 the worst case.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub const AVERAGE: RiskLevel = RiskLevel(0.0);
    pub const WORST: RiskLevel = RiskLevel(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(RiskLevel(value))
        } else {
            Err(Error::Domain(format!("risk level {value} outside [0, 1]")))
        }
    }

    /// Clamps into [0, 1]; NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            RiskLevel(0.0)
        } else {
            RiskLevel(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        RiskLevel::new(value)
    }
}

impl From<RiskLevel> for f64 {
    fn from(level: RiskLevel) -> f64 {
        level.0
    }
}

/// Evenly spaced levels `0, 1/(n-1), ..., 1`.
pub fn lambda_grid(points: usize) -> Vec<RiskLevel> {
    match points {
        0 => Vec::new(),
        1 => vec![RiskLevel::AVERAGE],
        n => (0..n)
            .map(|i| RiskLevel::saturating(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SquaredError,
    BinaryCrossEntropy,
}

impl LossKind {
    pub fn value(self, prediction: f64, target: f64) -> f64 {
        match self {
            LossKind::SquaredError => (prediction - target) * (prediction - target),
            LossKind::BinaryCrossEntropy => bce_unchecked(prediction, target),
        }
    }

    /// Derivative of the loss with respect to the prediction (or logit).
    pub fn derivative(self, prediction: f64, target: f64) -> f64 {
        match self {
            LossKind::SquaredError => 2.0 * (prediction - target),
            LossKind::BinaryCrossEntropy => sigmoid(prediction) - target,
        }
    }
}

pub fn squared_error_loss(prediction: f64, target: f64) -> Result<f64> {
    if !prediction.is_finite() || !target.is_finite() {
        return Err(Error::Domain(format!(
            "squared error needs finite inputs, got ({prediction}, {target})"
        )));
    }
    Ok((prediction - target) * (prediction - target))
}

pub fn binary_ce_loss(logit: f64, target: u8) -> Result<f64> {
    if !logit.is_finite() {
        return Err(Error::Domain(format!("logit {logit} is not finite")));
    }
    if target > 1 {
        return Err(Error::Domain(format!("binary target must be 0 or 1, got {target}")));
    }
    Ok(bce_unchecked(logit, f64::from(target)))
}

// max(z, 0) - z t + log(1 + e^{-|z|})
fn bce_unchecked(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-domain empirical risks, in the order of `domain_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    risks: Vec<f64>,
    domain_ids: Vec<String>,
}

impl RiskProfile {
    pub fn new(risks: Vec<f64>, domain_ids: Vec<String>) -> Result<Self> {
        if risks.is_empty() {
            return Err(Error::Domain("risk profile needs at least one domain".into()));
        }
        if risks.len() != domain_ids.len() {
            return Err(Error::Config(format!(
                "{} risks but {} domain ids",
                risks.len(),
                domain_ids.len()
            )));
        }
        if let Some(bad) = risks.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::Domain(format!("risk {bad} is not a finite non-negative value")));
        }
        Ok(RiskProfile { risks, domain_ids })
    }

    /// Profile with generated ids `d0, d1, ...`.
    pub fn from_risks(risks: Vec<f64>) -> Result<Self> {
        let ids = (0..risks.len()).map(|i| format!("d{i}")).collect();
        RiskProfile::new(risks, ids)
    }

    pub fn risks(&self) -> &[f64] {
        &self.risks
    }

    pub fn domain_ids(&self) -> &[String] {
        &self.domain_ids
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.risks.iter().sum::<f64>() / self.risks.len() as f64
    }

    /// Population variance (divides by d).
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / self.risks.len() as f64
    }
}

/// A point of the simplex over domains realising an aggregation level.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    weights: Vec<f64>,
    lambda: RiskLevel,
}

impl AggregationWeights {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> RiskLevel {
        self.lambda
    }
}

/// CVaR weights of `profile` at level `lambda`.
///
/// With `r_λ` the smallest profile value whose empirical CDF reaches λ, every
/// domain strictly above `r_λ` gets `1/(d(1-λ))`, the domains tied at `r_λ`
/// share the remaining atom mass `(F(r_λ) - λ)/(1 - λ)` equally, and domains
/// below get nothing. At λ = 1 the weight is spread over the maximisers.
pub fn cvar_weights(profile: &RiskProfile, lambda: RiskLevel) -> AggregationWeights {
    let risks = profile.risks();
    let d = risks.len();
    let lam = lambda.value();
    let mut weights = vec![0.0; d];

    if lam >= 1.0 {
        let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = risks.iter().filter(|r| **r == max).count();
        for (w, r) in weights.iter_mut().zip(risks) {
            if *r == max {
                *w = 1.0 / ties as f64;
            }
        }
        return AggregationWeights { weights, lambda };
    }

    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);

    // first index k (1-based count) with k/d >= λ, then extend over ties
    let mut quantile = sorted[d - 1];
    let mut below_or_at = d;
    let mut k = 0;
    while k < d {
        let value = sorted[k];
        let mut end = k;
        while end < d && sorted[end] == value {
            end += 1;
        }
        if end as f64 / d as f64 >= lam {
            quantile = value;
            below_or_at = end;
            break;
        }
        k = end;
    }

    let tail = 1.0 - lam;
    let cdf_at_quantile = below_or_at as f64 / d as f64;
    let atom_mass = ((cdf_at_quantile - lam) / tail).max(0.0);
    let ties = risks.iter().filter(|r| **r == quantile).count();
    let above = 1.0 / (d as f64 * tail);
    for (w, r) in weights.iter_mut().zip(risks) {
        if *r > quantile {
            *w = above;
        } else if *r == quantile {
            *w = atom_mass / ties as f64;
        }
    }
    AggregationWeights { weights, lambda }
}

pub fn aggregate(profile: &RiskProfile, weights: &AggregationWeights) -> Result<f64> {
    if profile.len() != weights.weights.len() {
        return Err(Error::Config(format!(
            "profile has {} entries but weights have {}",
            profile.len(),
            weights.weights.len()
        )));
    }
    Ok(profile
        .risks()
        .iter()
        .zip(&weights.weights)
        .map(|(r, w)| r * w)
        .sum())
}

pub fn cvar(profile: &RiskProfile, lambda: RiskLevel) -> f64 {
    // endpoints bypass the weights so they equal the mean and max exactly
    if lambda == RiskLevel::AVERAGE {
        return profile.mean();
    }
    if lambda == RiskLevel::WORST {
        return profile.risks().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let weights = cvar_weights(profile, lambda);
    profile
        .risks()
        .iter()
        .zip(&weights.weights)
        .map(|(r, w)| r * w)
        .sum()
}

/// CVaR plus λ times the population variance of the profile.
pub fn cvar_vrex(profile: &RiskProfile, lambda: RiskLevel) -> f64 {
    cvar(profile, lambda) + lambda.value() * profile.variance()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMeasure {
    #[default]
    Cvar,
    CvarVrex,
}

impl RiskMeasure {
    pub fn evaluate(self, profile: &RiskProfile, lambda: RiskLevel) -> f64 {
        match self {
            RiskMeasure::Cvar => cvar(profile, lambda),
            RiskMeasure::CvarVrex => cvar_vrex(profile, lambda),
        }
    }

    /// Value together with per-domain coefficients `c_i` such that, with the
    /// CVaR weights frozen at this profile, `∇ρ = Σ c_i ∇R_i`.
    pub fn linearise(self, profile: &RiskProfile, lambda: RiskLevel) -> (f64, Vec<f64>) {
        let weights = cvar_weights(profile, lambda);
        let mut coefficients = weights.weights;
        let mut value: f64 = profile
            .risks()
            .iter()
            .zip(&coefficients)
            .map(|(r, w)| r * w)
            .sum();
        if self == RiskMeasure::CvarVrex {
            let lam = lambda.value();
            let d = profile.len() as f64;
            let mean = profile.mean();
            value += lam * profile.variance();
            for (c, r) in coefficients.iter_mut().zip(profile.risks()) {
                *c += lam * 2.0 * (r - mean) / d;
            }
        }
        (value, coefficients)
    }
}

/// Mean loss of `model` conditioned on `lambda` over one domain.
pub fn domain_risk<H: Hypothesis + ?Sized>(
    model: &H,
    domain: &DomainDataset,
    lambda: RiskLevel,
    loss: LossKind,
) -> Result<f64> {
    model.mean_loss(domain, lambda, loss)
}

/// Risk profile of the model conditioned on `lambda`, one entry per domain.
pub fn risk_profile<H: Hypothesis + ?Sized>(
    model: &H,
    domains: &[DomainDataset],
    lambda: RiskLevel,
    loss: LossKind,
) -> Result<RiskProfile> {
    if domains.is_empty() {
        return Err(Error::Config("risk profile needs at least one domain".into()));
    }
    let risks = domains
        .iter()
        .map(|d| domain_risk(model, d, lambda, loss))
        .collect::<Result<Vec<_>>>()?;
    let ids = domains.iter().map(|d| d.domain_id.clone()).collect();
    RiskProfile::new(risks, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lvl(x: f64) -> RiskLevel {
        RiskLevel::new(x).unwrap()
    }

    fn profile(r: &[f64]) -> RiskProfile {
        RiskProfile::from_risks(r.to_vec()).unwrap()
    }

    /// Rockafellar–Uryasev variational form: min over t of
    /// t + E[(R - t)+] / (1 - λ); the minimum is attained at a profile value.
    fn variational_cvar(r: &[f64], lam: f64) -> f64 {
        if lam >= 1.0 {
            return r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let d = r.len() as f64;
        r.iter()
            .map(|&t| t + r.iter().map(|x| (x - t).max(0.0)).sum::<f64>() / (d * (1.0 - lam)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Sorted-tail form with the quantile atom.
    fn sorted_tail_cvar(r: &[f64], lam: f64) -> f64 {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        let d = s.len();
        if lam >= 1.0 {
            return s[d - 1];
        }
        let cdf = |x: f64| s.iter().filter(|v| **v <= x).count() as f64 / d as f64;
        let q = *s.iter().find(|v| cdf(**v) >= lam).unwrap();
        let above: f64 = s.iter().filter(|v| **v > q).sum::<f64>() / d as f64;
        ((cdf(q) - lam) * q + above) / (1.0 - lam)
    }

    #[test]
    fn squared_error_examples() {
        assert_eq!(squared_error_loss(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(squared_error_loss(3.0, 1.0).unwrap(), 4.0);
        assert_eq!(squared_error_loss(-1.5, 0.5).unwrap(), 4.0);
        assert!(squared_error_loss(f64::NAN, 0.5).is_err());
        assert!(squared_error_loss(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn binary_ce_examples() {
        assert_abs_diff_eq!(binary_ce_loss(0.0, 1).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_ce_loss(0.0, 0).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let saturated = binary_ce_loss(50.0, 1).unwrap();
        assert!(saturated.is_finite() && saturated < 1e-20);
        assert!(binary_ce_loss(-800.0, 1).unwrap().is_finite());
        assert!(binary_ce_loss(f64::INFINITY, 1).is_err());
        assert!(binary_ce_loss(0.0, 2).is_err());
    }

    #[test]
    fn risk_level_bounds() {
        assert!(RiskLevel::new(-0.01).is_err());
        assert!(RiskLevel::new(1.01).is_err());
        assert!(RiskLevel::new(f64::NAN).is_err());
        assert_eq!(lambda_grid(21).len(), 21);
        assert_eq!(lambda_grid(21)[20].value(), 1.0);
        assert_abs_diff_eq!(lambda_grid(21)[1].value(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn profile_rejects_invalid_entries() {
        assert!(RiskProfile::from_risks(vec![]).is_err());
        assert!(RiskProfile::from_risks(vec![1.0, -0.5]).is_err());
        assert!(RiskProfile::from_risks(vec![1.0, f64::NAN]).is_err());
        assert!(RiskProfile::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn cvar_weight_examples() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cvar_weights(&p, lvl(0.0)).weights(), &[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(cvar_weights(&p, lvl(0.5)).weights(), &[0.0, 0.0, 0.5, 0.5]);
        assert_eq!(cvar_weights(&p, lvl(1.0)).weights(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn aggregate_examples() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(aggregate(&p, &cvar_weights(&p, lvl(0.0))).unwrap(), 2.5);
        assert_eq!(aggregate(&p, &cvar_weights(&p, lvl(0.5))).unwrap(), 3.5);
        let one_hot = AggregationWeights { weights: vec![0.0, 1.0, 0.0, 0.0], lambda: lvl(0.3) };
        assert_eq!(aggregate(&p, &one_hot).unwrap(), 2.0);
        let short = AggregationWeights { weights: vec![1.0], lambda: lvl(0.3) };
        assert!(matches!(aggregate(&p, &short), Err(Error::Config(_))));
    }

    #[test]
    fn cvar_examples() {
        let p = profile(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(cvar(&p, lvl(0.25)), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar(&p, lvl(0.0)), 2.5, epsilon = 1e-12);
        assert_eq!(cvar(&p, lvl(1.0)), 4.0);
        let c = profile(&[1.7; 5]);
        for l in lambda_grid(11) {
            assert_abs_diff_eq!(cvar(&c, l), 1.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn cvar_vrex_examples() {
        assert_abs_diff_eq!(cvar_vrex(&profile(&[2.0, 2.0, 2.0]), lvl(0.7)), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar_vrex(&profile(&[1.0, 3.0]), lvl(0.0)), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar_vrex(&profile(&[1.0, 3.0]), lvl(1.0)), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn ties_share_the_atom() {
        // quantile at 0.5 lands on the tied value 2
        let p = profile(&[1.0, 2.0, 2.0, 5.0]);
        let w = cvar_weights(&p, lvl(0.5));
        assert_eq!(w.weights()[0], 0.0);
        assert_abs_diff_eq!(w.weights()[1], w.weights()[2]);
        assert_abs_diff_eq!(w.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let w1 = cvar_weights(&profile(&[3.0, 1.0, 3.0]), lvl(1.0));
        assert_eq!(w1.weights(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn linearised_vrex_matches_finite_differences() {
        let risks = [0.4, 1.3, 2.2, 0.9];
        let lam = lvl(0.35);
        let (value, coef) = RiskMeasure::CvarVrex.linearise(&profile(&risks), lam);
        assert_abs_diff_eq!(value, cvar_vrex(&profile(&risks), lam), epsilon = 1e-12);
        for i in 0..risks.len() {
            let h = 1e-6;
            let mut up = risks;
            let mut dn = risks;
            up[i] += h;
            dn[i] -= h;
            let fd = (cvar_vrex(&profile(&up), lam) - cvar_vrex(&profile(&dn), lam)) / (2.0 * h);
            assert_abs_diff_eq!(fd, coef[i], epsilon = 1e-6);
        }
    }

    fn risks_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![0.0..10.0f64, (0..5u8).prop_map(f64::from)], 1..12)
    }

    proptest! {
        #[test]
        fn matches_both_oracles(r in risks_strategy(), i in 0usize..=100) {
            let lam = i as f64 / 100.0;
            let got = cvar(&profile(&r), lvl(lam));
            prop_assert!((got - variational_cvar(&r, lam)).abs() < 1e-9);
            prop_assert!((got - sorted_tail_cvar(&r, lam)).abs() < 1e-9);
        }

        #[test]
        fn weights_lie_on_the_simplex(r in risks_strategy(), i in 0usize..=100) {
            let lam = i as f64 / 100.0;
            let p = profile(&r);
            let w = cvar_weights(&p, lvl(lam));
            prop_assert!(w.weights().iter().all(|x| *x >= 0.0));
            prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut s = r.clone();
            s.sort_by(f64::total_cmp);
            let d = s.len();
            let q = *s.iter().enumerate().find(|(k, v)| {
                let cnt = s.iter().filter(|x| **x <= **v).count();
                let _ = k;
                cnt as f64 / d as f64 >= lam
            }).unwrap().1;
            for (ri, wi) in r.iter().zip(w.weights()) {
                if *ri < q {
                    prop_assert_eq!(*wi, 0.0);
                }
            }
        }

        #[test]
        fn monotone_and_bounded(r in risks_strategy()) {
            let p = profile(&r);
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut prev = f64::NEG_INFINITY;
            for l in lambda_grid(101) {
                let v = cvar(&p, l);
                prop_assert!(v >= prev - 1e-12);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                prev = v;
            }
            prop_assert_eq!(cvar(&p, RiskLevel::WORST), hi);
        }

        #[test]
        fn coherent_risk_properties(r in risks_strategy(), c in -5.0..5.0f64, a in 0.1..10.0f64, i in 0usize..=20) {
            let lam = lvl(i as f64 / 20.0);
            let base = cvar(&profile(&r), lam);
            let shifted: Vec<f64> = r.iter().map(|x| x + c + 5.0).collect();
            prop_assert!((cvar(&profile(&shifted), lam) - (base + c + 5.0)).abs() < 1e-9);
            let scaled: Vec<f64> = r.iter().map(|x| x * a).collect();
            prop_assert!((cvar(&profile(&scaled), lam) - a * base).abs() < 1e-9 * a.max(1.0));
        }

        #[test]
        fn permutation_equivariance(r in risks_strategy(), seed in any::<u64>(), i in 0usize..=20) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let lam = lvl(i as f64 / 20.0);
            let mut perm: Vec<usize> = (0..r.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&k| r[k]).collect();
            let w = cvar_weights(&profile(&r), lam);
            let wp = cvar_weights(&profile(&permuted), lam);
            for (slot, &k) in perm.iter().enumerate() {
                prop_assert_eq!(wp.weights()[slot], w.weights()[k]);
            }
            prop_assert!((cvar(&profile(&r), lam) - cvar(&profile(&permuted), lam)).abs() < 1e-12);
        }
    }
}
