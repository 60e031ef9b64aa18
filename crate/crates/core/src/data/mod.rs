//! Domain datasets and the generators/loaders for each experiment family.

mod bike;
mod cmnist;
pub(crate) mod export;
pub mod idx;
mod synthetic;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

pub use bike::{load_bike_csv, BikeConfig, BikeSplit, DEFAULT_BIKE_FEATURES};
pub use cmnist::{build_cmnist, build_cmnist_from_arrays, CmnistConfig, CMNIST_TEST_RATES, CMNIST_TRAIN_RATES};
pub use export::{read_domains_csv, write_domains_csv};
pub use synthetic::{gen_appendix_beta, gen_synthetic, NoiseConvention, SlopeDistribution, Split, SyntheticConfig};

/// Samples drawn from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    /// n × p, one sample per row.
    pub features: Array2<f64>,
    pub targets: Vec<f64>,
    /// Generation metadata (e.g. `theta`, `env_rate`, `season`, `year`).
    pub meta: BTreeMap<String, f64>,
}

impl DomainDataset {
    pub fn new(
        domain_id: impl Into<String>,
        features: Array2<f64>,
        targets: Vec<f64>,
        meta: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let domain_id = domain_id.into();
        if features.nrows() == 0 {
            return Err(Error::Data(format!("domain `{domain_id}` has no samples")));
        }
        if features.nrows() != targets.len() {
            return Err(Error::Data(format!(
                "domain `{domain_id}` has {} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("domain `{domain_id}` contains non-finite values")));
        }
        Ok(DomainDataset {
            domain_id,
            features,
            targets,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> DomainDataset {
        DomainDataset {
            domain_id: self.domain_id.clone(),
            features: self.features.select(Axis(0), rows),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Uniform minibatch without replacement; the whole domain when
    /// `batch_size >= len`.
    pub fn minibatch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> DomainDataset {
        if batch_size >= self.len() {
            return self.clone();
        }
        let rows = rand::seq::index::sample(rng, self.len(), batch_size).into_vec();
        self.select(&rows)
    }
}

/// All domains of an experiment must share a feature width.
pub fn check_feature_width(domains: &[DomainDataset]) -> Result<usize> {
    let first = domains
        .first()
        .ok_or_else(|| Error::Config("no domains supplied".into()))?
        .feature_dim();
    if let Some(d) = domains.iter().find(|d| d.feature_dim() != first) {
        return Err(Error::Config(format!(
            "domain `{}` has {} features, expected {first}",
            d.domain_id,
            d.feature_dim()
        )));
    }
    Ok(first)
}
