//! Flat CSV layout for generated datasets: a header
//! `domain_id,x0,...,x{p-1},target` followed by one row per sample. Domains
//! appear as contiguous runs of rows in their original order. Metadata is not
//! exported.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{check_feature_width, DomainDataset};
use crate::error::{Error, Result};

pub fn write_domains_csv(path: &Path, domains: &[DomainDataset]) -> Result<()> {
    let p = check_feature_width(domains)?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["domain_id".to_string()];
    header.extend((0..p).map(|j| format!("x{j}")));
    header.push("target".into());
    writer.write_record(&header).map_err(|e| csv_io(path, e))?;
    for d in domains {
        for (row, y) in d.features.rows().into_iter().zip(&d.targets) {
            let mut record = vec![d.domain_id.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            writer.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_domains_csv(path: &Path) -> Result<Vec<DomainDataset>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    if headers.get(0) != Some("domain_id") {
        return Err(Error::Schema { column: "domain_id".into() });
    }
    if headers.iter().next_back() != Some("target") || headers.len() < 3 {
        return Err(Error::Schema { column: "target".into() });
    }
    let p = headers.len() - 2;

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let id = record.get(0).unwrap_or_default().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Data(format!("line {}: non-numeric value `{v}`", k + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.extend_from_slice(&values[..p]);
        entry.1.push(values[p]);
    }
    order
        .into_iter()
        .map(|id| {
            let (flat, targets) = rows.remove(&id).expect("recorded id");
            let features = Array2::from_shape_vec((targets.len(), p), flat)
                .map_err(|e| Error::Data(e.to_string()))?;
            DomainDataset::new(id, features, targets, BTreeMap::new())
        })
        .collect()
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}
