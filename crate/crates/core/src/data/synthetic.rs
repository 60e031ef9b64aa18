use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// How the second argument of `N(μ, s)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    #[default]
    Variance,
    StdDev,
}

impl NoiseConvention {
    fn std_dev(self, spread: f64) -> f64 {
        match self {
            NoiseConvention::Variance => spread.sqrt(),
            NoiseConvention::StdDev => spread,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn purpose(self) -> Purpose {
        match self {
            Split::Train => Purpose::TrainData,
            Split::Test => Purpose::TestData,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeDistribution {
    /// `U(1, 1.1)` with probability `p_positive`, else `U(-1.1, -1)`.
    TwoCluster { p_positive: f64 },
    /// `Beta(a, b)` on [0, 1].
    Beta { a: f64, b: f64 },
}

/// One-dimensional linear domains `Y = θ_d X + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_domains: usize,
    pub samples_per_domain: usize,
    pub seed: u64,
    pub x_mean: f64,
    pub x_spread: f64,
    pub noise_spread: f64,
    pub convention: NoiseConvention,
    pub slopes: SlopeDistribution,
    /// Forces every θ_d to this value (used by degenerate checks).
    pub theta_override: Option<f64>,
}

impl SyntheticConfig {
    /// Two-cluster slopes, `X ~ N(1, 0.5)`, `ε ~ N(0, 0.1)`.
    pub fn two_cluster(num_domains: usize, samples_per_domain: usize, seed: u64) -> Self {
        SyntheticConfig {
            num_domains,
            samples_per_domain,
            seed,
            x_mean: 1.0,
            x_spread: 0.5,
            noise_spread: 0.1,
            convention: NoiseConvention::Variance,
            slopes: SlopeDistribution::TwoCluster { p_positive: 0.5 },
            theta_override: None,
        }
    }

    /// `θ ~ Beta(0.1, 0.2)`, `X ~ N(2, 0.2)`, `ε ~ N(0, 0.1)`.
    pub fn appendix_beta(num_domains: usize, samples_per_domain: usize, seed: u64) -> Self {
        SyntheticConfig {
            x_mean: 2.0,
            x_spread: 0.2,
            slopes: SlopeDistribution::Beta { a: 0.1, b: 0.2 },
            ..SyntheticConfig::two_cluster(num_domains, samples_per_domain, seed)
        }
    }

    pub fn generate(&self, split: Split) -> Result<Vec<DomainDataset>> {
        if self.num_domains == 0 || self.samples_per_domain == 0 {
            return Err(Error::Config("domain and sample counts must be positive".into()));
        }
        if self.x_spread < 0.0 || self.noise_spread < 0.0 {
            return Err(Error::Config("spreads must be non-negative".into()));
        }
        let x_dist = Normal::new(self.x_mean, self.convention.std_dev(self.x_spread))
            .map_err(|e| Error::Config(e.to_string()))?;
        let noise_std = self.convention.std_dev(self.noise_spread);
        let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let beta = match self.slopes {
            SlopeDistribution::Beta { a, b } => {
                Some(Beta::new(a, b).map_err(|e| Error::Config(e.to_string()))?)
            }
            SlopeDistribution::TwoCluster { p_positive } => {
                if !(0.0..=1.0).contains(&p_positive) {
                    return Err(Error::Config(format!("p_positive {p_positive} outside [0, 1]")));
                }
                None
            }
        };

        (0..self.num_domains)
            .map(|i| {
                let mut rng = rng::stream(self.seed, split.purpose(), i as u64);
                let theta = match (self.theta_override, self.slopes, &beta) {
                    (Some(t), _, _) => t,
                    (None, SlopeDistribution::TwoCluster { p_positive }, _) => {
                        if rng.random::<f64>() < p_positive {
                            rng.random_range(1.0..1.1)
                        } else {
                            rng.random_range(-1.1..-1.0)
                        }
                    }
                    (None, SlopeDistribution::Beta { .. }, Some(b)) => b.sample(&mut rng),
                    (None, SlopeDistribution::Beta { .. }, None) => unreachable!(),
                };
                let n = self.samples_per_domain;
                let mut features = Array2::zeros((n, 1));
                let mut targets = Vec::with_capacity(n);
                for j in 0..n {
                    let x = x_dist.sample(&mut rng);
                    let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    features[[j, 0]] = x;
                    targets.push(theta * x + eps);
                }
                let meta = BTreeMap::from([("theta".to_string(), theta)]);
                DomainDataset::new(format!("{}-{i:04}", split.prefix()), features, targets, meta)
            })
            .collect()
    }
}

/// Two-cluster training domains with the default distributions.
pub fn gen_synthetic(
    num_domains: usize,
    samples_per_domain: usize,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    SyntheticConfig::two_cluster(num_domains, samples_per_domain, seed).generate(Split::Train)
}

/// Beta-slope training domains with the default distributions.
pub fn gen_appendix_beta(
    num_domains: usize,
    samples_per_domain: usize,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    SyntheticConfig::appendix_beta(num_domains, samples_per_domain, seed).generate(Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thetas(domains: &[DomainDataset]) -> Vec<f64> {
        domains.iter().map(|d| d.meta["theta"]).collect()
    }

    #[test]
    fn slopes_lie_in_the_two_clusters() {
        let d = gen_synthetic(500, 2, 3).unwrap();
        for t in thetas(&d) {
            assert!((1.0..=1.1).contains(&t) || (-1.1..=-1.0).contains(&t), "{t}");
        }
    }

    #[test]
    fn sign_frequency_is_one_half() {
        let n = 10_000;
        let d = gen_synthetic(n, 1, 11).unwrap();
        let pos = thetas(&d).iter().filter(|t| **t > 0.0).count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((pos - 0.5).abs() < 3.0 * se, "{pos}");
    }

    #[test]
    fn noiseless_targets_are_exact() {
        let cfg = SyntheticConfig {
            noise_spread: 0.0,
            theta_override: Some(0.7),
            ..SyntheticConfig::two_cluster(3, 20, 1)
        };
        for d in cfg.generate(Split::Train).unwrap() {
            for (x, y) in d.features.column(0).iter().zip(&d.targets) {
                assert_eq!(*y, 0.7 * x);
            }
        }
    }

    #[test]
    fn domain_data_does_not_depend_on_domain_count() {
        let few = gen_synthetic(3, 10, 5).unwrap();
        let many = gen_synthetic(30, 10, 5).unwrap();
        assert_eq!(few[..], many[..3]);
        assert_eq!(gen_synthetic(3, 10, 5).unwrap(), few);
    }

    #[test]
    fn train_and_test_splits_differ() {
        let cfg = SyntheticConfig::two_cluster(2, 5, 9);
        let train = cfg.generate(Split::Train).unwrap();
        let test = cfg.generate(Split::Test).unwrap();
        assert_ne!(train[0].targets, test[0].targets);
        assert!(test[0].domain_id.starts_with("test-"));
    }

    #[test]
    fn x_moments_follow_the_variance_convention() {
        let d = SyntheticConfig::two_cluster(1, 200_000, 2).generate(Split::Train).unwrap();
        let x = d[0].features.column(0);
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.01);
        assert!((var - 0.5).abs() < 0.01);
    }

    #[test]
    fn appendix_beta_slopes() {
        let n = 100_000;
        let d = gen_appendix_beta(n, 1, 4).unwrap();
        let t = thetas(&d);
        assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = t.iter().sum::<f64>() / n as f64;
        // Beta(a, b) variance: ab / ((a+b)^2 (a+b+1))
        let var = 0.1 * 0.2 / (0.3f64.powi(2) * 1.3);
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0 / 3.0).abs() < 3.0 * se, "{mean}");
        assert_eq!(gen_appendix_beta(4, 3, 4).unwrap(), gen_appendix_beta(4, 3, 4).unwrap());
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(gen_synthetic(0, 10, 1).is_err());
        assert!(gen_synthetic(10, 0, 1).is_err());
    }
}
