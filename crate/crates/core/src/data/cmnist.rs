use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::idx::{self, IdxImages};
use super::DomainDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Training environments drawn from the long-tailed Beta(0.9, 1).
pub const CMNIST_TRAIN_RATES: [f64; 10] = [0.01, 0.02, 0.05, 0.07, 0.09, 0.12, 0.14, 0.58, 0.7, 0.99];

/// Test environments `0.0, 0.1, ..., 1.0`.
pub const CMNIST_TEST_RATES: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CmnistConfig {
    /// `P(Y = 1 | color = red)` per environment.
    pub env_rates: Vec<f64>,
    /// Probability of flipping the digit-group label.
    pub label_noise: f64,
    pub seed: u64,
    /// First image of the IDX file to use.
    pub image_offset: usize,
    /// Number of images to use (all remaining when `None`).
    pub image_count: Option<usize>,
    /// Every environment recolours the same images when true; otherwise the
    /// images are dealt out to environments in contiguous blocks.
    pub share_images: bool,
    /// Side of the square blocks averaged into one pixel (1 keeps full
    /// resolution); trailing rows and columns that do not fill a block are
    /// dropped.
    pub pool: usize,
}

impl CmnistConfig {
    pub fn new(env_rates: Vec<f64>, seed: u64) -> Self {
        CmnistConfig {
            env_rates,
            label_noise: 0.25,
            seed,
            image_offset: 0,
            image_count: None,
            share_images: false,
            pool: 1,
        }
    }
}

pub fn build_cmnist(
    images_path: &Path,
    labels_path: &Path,
    config: &CmnistConfig,
) -> Result<Vec<DomainDataset>> {
    let images = idx::read_images(images_path)?;
    let labels = idx::read_labels(labels_path)?;
    build_cmnist_from_arrays(&images, &labels, config)
}

/// Binary label from the digit group (0–4 → 0, 5–9 → 1), flipped with
/// probability `label_noise`; the sample is coloured red with probability
/// `e` when the label is 1 and `1 - e` when it is 0. Features are the red
/// channel followed by the green channel, scaled to [0, 1].
pub fn build_cmnist_from_arrays(
    images: &IdxImages,
    labels: &[u8],
    config: &CmnistConfig,
) -> Result<Vec<DomainDataset>> {
    if images.count != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if config.env_rates.is_empty() {
        return Err(Error::Config("at least one environment rate is required".into()));
    }
    if let Some(e) = config.env_rates.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Config(format!("environment rate {e} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&config.label_noise) {
        return Err(Error::Config("label noise outside [0, 1]".into()));
    }
    if let Some(&bad) = labels.iter().find(|l| **l > 9) {
        return Err(Error::Data(format!("digit label {bad} outside 0..=9")));
    }
    let available = images.count.saturating_sub(config.image_offset);
    let count = config.image_count.unwrap_or(available);
    if count == 0 || count > available {
        return Err(Error::Config(format!(
            "requested {count} images from offset {} but only {available} available",
            config.image_offset
        )));
    }
    let envs = config.env_rates.len();
    if !config.share_images && count < envs {
        return Err(Error::Config("fewer images than environments".into()));
    }

    if config.pool == 0 {
        return Err(Error::Config("pooling block size must be positive".into()));
    }
    let (rows, cols) = (images.rows / config.pool, images.cols / config.pool);
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("pooling block {} exceeds the image size", config.pool)));
    }
    let pixels = rows * cols;
    config
        .env_rates
        .iter()
        .enumerate()
        .map(|(k, &rate)| {
            let range = if config.share_images {
                0..count
            } else {
                let per = count / envs;
                k * per..(k + 1) * per
            };
            let mut rng = rng::stream(config.seed, Purpose::TrainData, k as u64);
            let n = range.len();
            let mut features = Array2::zeros((n, 2 * pixels));
            let mut targets = Vec::with_capacity(n);
            for (row, local) in range.enumerate() {
                let i = config.image_offset + local;
                let mut y = u8::from(labels[i] >= 5);
                if rng.random::<f64>() < config.label_noise {
                    y = 1 - y;
                }
                let agree = rng.random::<f64>() < rate;
                let red = if agree { y == 1 } else { y == 0 };
                let channel = if red { 0 } else { pixels };
                for (p, v) in pooled(images.image(i), images.cols, rows, cols, config.pool).enumerate() {
                    features[[row, channel + p]] = v;
                }
                targets.push(f64::from(y));
            }
            let meta = BTreeMap::from([("env_rate".to_string(), rate)]);
            DomainDataset::new(format!("env-{rate:.2}"), features, targets, meta)
        })
        .collect()
}

/// Block means of a row-major image, scaled to [0, 1].
fn pooled(image: &[u8], width: usize, rows: usize, cols: usize, block: usize) -> impl Iterator<Item = f64> + '_ {
    let scale = 1.0 / (255.0 * (block * block) as f64);
    (0..rows).flat_map(move |r| {
        (0..cols).map(move |c| {
            let sum: u32 = (0..block)
                .flat_map(|dr| (0..block).map(move |dc| (r * block + dr) * width + c * block + dc))
                .map(|k| u32::from(image[k]))
                .sum();
            f64::from(sum) * scale
        })
    })
}
