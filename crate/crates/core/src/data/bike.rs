use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_BIKE_FEATURES: [&str; 7] =
    ["temp", "atemp", "hum", "windspeed", "hr", "workingday", "weathersit"];

#[derive(Debug, Clone, PartialEq)]
pub struct BikeConfig {
    pub features: Vec<String>,
    /// Fraction of each training domain's rows to keep (all when `None`).
    pub train_fraction: Option<f64>,
    pub seed: u64,
}

impl BikeConfig {
    pub fn new(seed: u64) -> Self {
        BikeConfig {
            features: DEFAULT_BIKE_FEATURES.iter().map(|s| s.to_string()).collect(),
            train_fraction: None,
            seed,
        }
    }
}

/// Four first-year training domains and four second-year test domains, one
/// per season, standardised with training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BikeSplit {
    pub train: Vec<DomainDataset>,
    pub test: Vec<DomainDataset>,
    /// Total data rows read from the file.
    pub rows: usize,
}

struct Row {
    season: u8,
    year: u8,
    features: Vec<f64>,
    count: f64,
}

pub fn load_bike_csv(path: &Path, config: &BikeConfig) -> Result<BikeSplit> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_bike(file, config)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema { column: name.to_string() })
}

fn field(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!("line {line}: column `{name}` holds non-numeric value `{raw}`"))
    })
}

pub(crate) fn parse_bike<R: std::io::Read>(reader: R, config: &BikeConfig) -> Result<BikeSplit> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let season_col = column(&headers, "season")?;
    let year_col = column(&headers, "yr")?;
    let count_col = column(&headers, "cnt")?;
    let feature_cols = config
        .features
        .iter()
        .map(|f| column(&headers, f))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let line = k as u64 + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let season = field(&record, season_col, "season", line)?;
        let year = field(&record, year_col, "yr", line)?;
        if !(1.0..=4.0).contains(&season) || season.fract() != 0.0 {
            return Err(Error::Data(format!("line {line}: season {season} outside 1..=4")));
        }
        if year != 0.0 && year != 1.0 {
            return Err(Error::Data(format!("line {line}: yr {year} is not 0 or 1")));
        }
        let features = feature_cols
            .iter()
            .zip(&config.features)
            .map(|(&c, name)| field(&record, c, name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            season: season as u8,
            year: year as u8,
            features,
            count: field(&record, count_col, "cnt", line)?,
        });
    }
    let total = rows.len();

    let train_rows: Vec<&Row> = rows.iter().filter(|r| r.year == 0).collect();
    if train_rows.is_empty() {
        return Err(Error::Data("no first-year rows to fit standardisation".into()));
    }
    let p = config.features.len();
    let n = train_rows.len() as f64;
    let mut mean = vec![0.0; p + 1];
    let mut var = vec![0.0; p + 1];
    let value = |r: &Row, j: usize| if j < p { r.features[j] } else { r.count };
    for j in 0..=p {
        mean[j] = train_rows.iter().map(|r| value(r, j)).sum::<f64>() / n;
        var[j] = train_rows.iter().map(|r| (value(r, j) - mean[j]).powi(2)).sum::<f64>() / n;
    }
    let scale: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();

    let mut split = BikeSplit { train: Vec::new(), test: Vec::new(), rows: total };
    for year in 0..=1u8 {
        for season in 1..=4u8 {
            let mut members: Vec<&Row> =
                rows.iter().filter(|r| r.year == year && r.season == season).collect();
            if members.is_empty() {
                return Err(Error::Data(format!("no rows for season {season}, yr {year}")));
            }
            if year == 0 {
                if let Some(frac) = config.train_fraction {
                    let keep = ((members.len() as f64 * frac).ceil() as usize).clamp(1, members.len());
                    let mut rng = rng::stream(config.seed, Purpose::Split, u64::from(season));
                    members.shuffle(&mut rng);
                    members.truncate(keep);
                }
            }
            let mut features = Array2::zeros((members.len(), p));
            let mut targets = Vec::with_capacity(members.len());
            for (i, r) in members.iter().enumerate() {
                for j in 0..p {
                    features[[i, j]] = (r.features[j] - mean[j]) / scale[j];
                }
                targets.push((r.count - mean[p]) / scale[p]);
            }
            let meta = BTreeMap::from([
                ("season".to_string(), f64::from(season)),
                ("year".to_string(), f64::from(year)),
            ]);
            let domain = DomainDataset::new(format!("season{season}-yr{year}"), features, targets, meta)?;
            if year == 0 {
                split.train.push(domain);
            } else {
                split.test.push(domain);
            }
        }
    }
    Ok(split)
}
