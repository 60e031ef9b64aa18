use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use iro_core::data::{
    build_cmnist, load_bike_csv, BikeConfig, CmnistConfig, DomainDataset, Split, SyntheticConfig, CMNIST_TEST_RATES,
    CMNIST_TRAIN_RATES,
};
use iro_core::iro::{IroConfig, PlfTarget};
use iro_core::lambda_dist::BetaParams;
use iro_core::models::{Activation, ArchitectureSpec, OutputKind};
use iro_core::risk::{LossKind, RiskLevel};
use iro_core::rng::derive_seed;
use iro_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable naming the directory that holds external datasets.
pub const DATA_DIR_ENV: &str = "IDG_DATA_DIR";
pub const MNIST_IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS_FILE: &str = "train-labels-idx1-ubyte";
pub const BIKE_FILE: &str = "hour.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Two-cluster linear domains.
    Synthetic,
    /// Linear domains with Beta(0.1, 0.2) slopes.
    AppendixBeta,
    /// Coloured digits with environment-dependent colour rates.
    Cmnist,
    /// Hourly bike rentals split by season and year.
    Bike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Imprecise risk optimisation of a conditioned model.
    Iro,
    /// Unconditioned model at one risk level (`lambda_fixed`), or at a fresh
    /// uniform level every step when `lambda_fixed` is absent.
    Plf,
    /// Conditioned model under the fixed Beta prior `prior_alpha`, `prior_beta`.
    Plh,
    /// Unconditioned model on the average risk.
    Erm,
}

/// What to train, independent of how it is configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learner {
    Imprecise,
    Precise(PlfTarget),
    FixedPrior(BetaParams),
}

impl Learner {
    pub fn is_conditioned(self) -> bool {
        !matches!(self, Learner::Precise(_))
    }
}

/// Experiment description read from a flat JSON object. Every field has a
/// default; training settings sit at the top level next to the data and
/// model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub method: Method,
    pub lambda_fixed: Option<f64>,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub num_train_domains: usize,
    pub num_test_domains: usize,
    pub samples_per_domain: usize,
    /// Images shared out over the training environments.
    pub cmnist_images: usize,
    /// Images recoloured for every test environment.
    pub cmnist_test_images: usize,
    pub cmnist_test_rates: Vec<f64>,
    pub cmnist_pool: usize,
    /// Fraction of first-year bike rows kept for training.
    pub bike_train_fraction: Option<f64>,
    /// Points of the operator-level grid used in reports.
    pub grid_points: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub training: IroConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Synthetic,
            method: Method::Iro,
            lambda_fixed: None,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            hidden_layers: vec![8],
            activation: Activation::Identity,
            num_train_domains: 250,
            num_test_domains: 250,
            samples_per_domain: 100,
            cmnist_images: 2000,
            cmnist_test_images: 1000,
            cmnist_test_rates: CMNIST_TEST_RATES.to_vec(),
            cmnist_pool: 2,
            bike_train_fraction: None,
            grid_points: iro_core::eval::DEFAULT_OPERATOR_GRID_POINTS,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            training: IroConfig::default(),
        }
    }
}

/// Per-run seeds come from `seeds`; the training block's own seed key is
/// not accepted in files.
const RESERVED_KEYS: [&str; 1] = ["seed"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let known = Self::default().to_map()?.into_iter().map(|(k, _)| k).collect::<BTreeSet<_>>();
        if let Some(key) = map.keys().find(|k| !known.contains(*k) || RESERVED_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let config: Self =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Flat key-value form with every default spelled out.
    pub fn to_map(&self) -> Result<Map<String, Value>> {
        match serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))? {
            Value::Object(mut map) => {
                for key in RESERVED_KEYS {
                    map.remove(key);
                }
                Ok(map)
            }
            _ => unreachable!("struct serialises to an object"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("`grid_points` must be at least 2".into()));
        }
        match self.method {
            Method::Plf => {
                if let Some(l) = self.lambda_fixed {
                    RiskLevel::new(l)?;
                }
            }
            Method::Plh => {
                if !(self.prior_alpha > 0.0 && self.prior_beta > 0.0) {
                    return Err(Error::Config("prior shapes must be positive".into()));
                }
                BetaParams::new(self.prior_alpha, self.prior_beta)?;
            }
            Method::Iro | Method::Erm => {}
        }
        if self.lambda_fixed.is_some() && self.method != Method::Plf {
            return Err(Error::Config("`lambda_fixed` only applies to method `plf`".into()));
        }
        if matches!(self.method, Method::Iro | Method::Plh) && self.hidden_layers.is_empty() {
            return Err(Error::Config("conditioned methods need at least one hidden layer".into()));
        }
        if self.experiment == Experiment::Bike {
            if let Some(f) = self.bike_train_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!("`bike_train_fraction` {f} outside (0, 1]")));
                }
            }
        }
        self.training.validate()
    }

    pub fn learner(&self) -> Result<Learner> {
        Ok(match self.method {
            Method::Iro => Learner::Imprecise,
            Method::Erm => Learner::Precise(PlfTarget::Fixed(RiskLevel::AVERAGE)),
            Method::Plf => Learner::Precise(match self.lambda_fixed {
                Some(l) => PlfTarget::Fixed(RiskLevel::new(l)?),
                None => PlfTarget::UniformResample,
            }),
            Method::Plh => Learner::FixedPrior(BetaParams::new(self.prior_alpha, self.prior_beta)?),
        })
    }

    pub fn training_for(&self, seed: u64) -> IroConfig {
        IroConfig { seed, loss: self.loss(), ..self.training.clone() }
    }

    pub fn output_kind(&self) -> OutputKind {
        match self.experiment {
            Experiment::Cmnist => OutputKind::Logit,
            _ => OutputKind::ScalarRegression,
        }
    }

    pub fn loss(&self) -> LossKind {
        self.output_kind().default_loss()
    }

    pub fn architecture(&self, input_dim: usize, learner: Learner) -> ArchitectureSpec {
        let spec = if self.hidden_layers.is_empty() {
            ArchitectureSpec::linear(input_dim)
        } else {
            ArchitectureSpec::mlp(input_dim, self.hidden_layers.clone(), self.activation)
        }
        .with_output(self.output_kind());
        if learner.is_conditioned() {
            spec.with_film()
        } else {
            spec
        }
    }

    /// Training and test domains for one seed.
    pub fn domains(&self, seed: u64, data_dir: Option<&Path>) -> Result<(Vec<DomainDataset>, Vec<DomainDataset>)> {
        match self.experiment {
            Experiment::Synthetic | Experiment::AppendixBeta => {
                let base = match self.experiment {
                    Experiment::Synthetic => SyntheticConfig::two_cluster,
                    _ => SyntheticConfig::appendix_beta,
                };
                let train = base(self.num_train_domains, self.samples_per_domain, seed).generate(Split::Train)?;
                let test = base(self.num_test_domains, self.samples_per_domain, seed).generate(Split::Test)?;
                Ok((train, test))
            }
            Experiment::Cmnist => {
                let dir = require_data_dir(data_dir)?;
                let (images, labels) = (dir.join(MNIST_IMAGES_FILE), dir.join(MNIST_LABELS_FILE));
                let train_cfg = CmnistConfig {
                    image_count: Some(self.cmnist_images),
                    pool: self.cmnist_pool,
                    ..CmnistConfig::new(CMNIST_TRAIN_RATES.to_vec(), seed)
                };
                let test_cfg = CmnistConfig {
                    image_offset: self.cmnist_images,
                    image_count: Some(self.cmnist_test_images),
                    share_images: true,
                    pool: self.cmnist_pool,
                    ..CmnistConfig::new(self.cmnist_test_rates.clone(), derive_seed(seed, 2))
                };
                Ok((build_cmnist(&images, &labels, &train_cfg)?, build_cmnist(&images, &labels, &test_cfg)?))
            }
            Experiment::Bike => {
                let dir = require_data_dir(data_dir)?;
                let config = BikeConfig { train_fraction: self.bike_train_fraction, ..BikeConfig::new(seed) };
                let split = load_bike_csv(&dir.join(BIKE_FILE), &config)?;
                Ok((split.train, split.test))
            }
        }
    }
}

fn require_data_dir(dir: Option<&Path>) -> Result<&Path> {
    dir.ok_or_else(|| Error::Config(format!("set {DATA_DIR_ENV} to the directory holding the dataset files")))
}

/// The dataset directory from the environment, if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}
