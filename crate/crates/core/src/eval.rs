//! Deployment-side evaluation: aggregated risk as a function of the
//! operator's risk level, the ideal per-level baseline, max-regret, and
//! report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::export::csv_io;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::iro::{plf_train, IroConfig, PlfTarget};
use crate::models::{init_params, ArchitectureSpec, Hypothesis};
use crate::risk::{risk_profile, LossKind, RiskLevel, RiskMeasure};

/// Grid used for operator levels unless configured otherwise.
pub const DEFAULT_OPERATOR_GRID_POINTS: usize = 21;

/// Aggregated test risk at each operator level.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    lambda_grid: Vec<RiskLevel>,
    values: Vec<f64>,
    label: String,
}

impl RiskCurve {
    pub fn new(lambda_grid: Vec<RiskLevel>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if lambda_grid.len() != values.len() {
            return Err(Error::Config(format!(
                "curve has {} levels but {} values",
                lambda_grid.len(),
                values.len()
            )));
        }
        check_grid(&lambda_grid)?;
        Ok(RiskCurve { lambda_grid, values, label: label.into() })
    }

    pub fn lambda_grid(&self) -> &[RiskLevel] {
        &self.lambda_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Pointwise mean of curves sharing one grid.
    pub fn mean(curves: &[RiskCurve], label: impl Into<String>) -> Result<RiskCurve> {
        let first = curves.first().ok_or_else(|| Error::Config("no curves to average".into()))?;
        let mut values = vec![0.0; first.values.len()];
        for c in curves {
            same_grid(first, c)?;
            values.iter_mut().zip(&c.values).for_each(|(s, v)| *s += v);
        }
        values.iter_mut().for_each(|s| *s /= curves.len() as f64);
        RiskCurve::new(first.lambda_grid.clone(), values, label)
    }
}

fn check_grid(grid: &[RiskLevel]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("operator grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0].value() >= w[1].value()) {
        return Err(Error::Config("operator grid must be strictly increasing".into()));
    }
    Ok(())
}

fn same_grid(a: &RiskCurve, b: &RiskCurve) -> Result<()> {
    if a.lambda_grid != b.lambda_grid {
        return Err(Error::Config(format!("curves `{}` and `{}` use different grids", a.label, b.label)));
    }
    Ok(())
}

/// How the evaluated model relates to the operator level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMode {
    /// The model is conditioned on each operator level.
    Augmented,
    /// The model ignores the level; one risk profile serves every point.
    Fixed,
}

/// Aggregated test risk of `model` on `grid`.
pub fn risk_curve<H: Hypothesis + ?Sized>(
    model: &H,
    test_domains: &[DomainDataset],
    grid: &[RiskLevel],
    measure: RiskMeasure,
    loss: LossKind,
    mode: CurveMode,
    label: impl Into<String>,
) -> Result<RiskCurve> {
    check_grid(grid)?;
    let values = match mode {
        CurveMode::Augmented => grid
            .par_iter()
            .map(|&lam| Ok(measure.evaluate(&risk_profile(model, test_domains, lam, loss)?, lam)))
            .collect::<Result<Vec<f64>>>()?,
        CurveMode::Fixed => {
            if model.is_conditioned() {
                return Err(Error::Config("fixed-mode curves need an unconditioned model".into()));
            }
            let profile = risk_profile(model, test_domains, RiskLevel::AVERAGE, loss)?;
            grid.iter().map(|&lam| measure.evaluate(&profile, lam)).collect()
        }
    };
    RiskCurve::new(grid.to_vec(), values, label)
}

/// One precise model per grid level, trained and evaluated at that level.
pub fn ideal_curve(
    spec: &ArchitectureSpec,
    train_domains: &[DomainDataset],
    test_domains: &[DomainDataset],
    grid: &[RiskLevel],
    config: &IroConfig,
) -> Result<RiskCurve> {
    check_grid(grid)?;
    let spec = spec.precise();
    let values = grid
        .par_iter()
        .map(|&lam| {
            let model = plf_train(init_params(&spec, config.seed)?, train_domains, PlfTarget::Fixed(lam), config)?;
            let profile = risk_profile(&model, test_domains, lam, config.loss)?;
            Ok(config.risk_measure.evaluate(&profile, lam))
        })
        .collect::<Result<Vec<f64>>>()?;
    RiskCurve::new(grid.to_vec(), values, "ideal")
}

/// Largest excess of `curve` over `ideal` across the grid; negative when the
/// curve beats the ideal everywhere.
pub fn max_regret(curve: &RiskCurve, ideal: &RiskCurve) -> Result<f64> {
    same_grid(curve, ideal)?;
    Ok(curve
        .values
        .iter()
        .zip(&ideal.values)
        .map(|(c, i)| c - i)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub curves_csv: PathBuf,
    pub regret_csv: PathBuf,
    pub curves_svg: PathBuf,
}

/// Writes `curves.csv` (`label,lambda,value`), `regret.csv`
/// (`label,max_regret`, one row per curve) and `curves.svg`.
pub fn emit_report(curves: &[RiskCurve], regrets: &[f64], out_dir: &Path) -> Result<ReportPaths> {
    if curves.len() != regrets.len() {
        return Err(Error::Config(format!("{} curves but {} regret values", curves.len(), regrets.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ReportPaths {
        curves_csv: out_dir.join("curves.csv"),
        regret_csv: out_dir.join("regret.csv"),
        curves_svg: out_dir.join("curves.svg"),
    };

    let path = &paths.curves_csv;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer.write_record(["label", "lambda", "value"]).map_err(|e| csv_io(path, e))?;
    for c in curves {
        for (lam, v) in c.lambda_grid.iter().zip(&c.values) {
            writer
                .write_record([c.label.as_str(), &lam.value().to_string(), &v.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let path = &paths.regret_csv;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer.write_record(["label", "max_regret"]).map_err(|e| csv_io(path, e))?;
    for (c, r) in curves.iter().zip(regrets) {
        writer.write_record([c.label.as_str(), &r.to_string()]).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    std::fs::write(&paths.curves_svg, render_svg(curves)).map_err(|e| Error::io(&paths.curves_svg, e))?;
    Ok(paths)
}

/// Reads a `curves.csv` back, one curve per label in order of appearance.
pub fn read_curves_csv(path: &Path) -> Result<Vec<RiskCurve>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    for (i, name) in ["label", "lambda", "value"].iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::Schema { column: (*name).into() });
        }
    }
    let mut parts: Vec<(String, Vec<RiskLevel>, Vec<f64>)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let number = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or_default();
            raw.parse().map_err(|_| Error::Data(format!("line {}: non-numeric value `{raw}`", k + 2)))
        };
        let label = record.get(0).unwrap_or_default();
        let lam = RiskLevel::new(number(1)?)?;
        let value = number(2)?;
        match parts.iter_mut().find(|p| p.0 == label) {
            Some(p) => {
                p.1.push(lam);
                p.2.push(value);
            }
            None => parts.push((label.to_string(), vec![lam], vec![value])),
        }
    }
    parts.into_iter().map(|(label, grid, values)| RiskCurve::new(grid, values, label)).collect()
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line plot with one polyline per curve and a legend.
fn render_svg(curves: &[RiskCurve]) -> String {
    let finite = curves.iter().flat_map(|c| c.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |lam: f64| MARGIN_LEFT + lam * plot_w;
    let y = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * plot_h;
    let bottom = MARGIN_TOP + plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black"><line x1="{MARGIN_LEFT}" y1="{bottom}" x2="{}" y2="{bottom}"/><line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}"/></g>"#,
        MARGIN_LEFT + plot_w
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let v = lo + t * (hi - lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.2}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x(t),
            bottom + 16.0,
            MARGIN_LEFT - 6.0,
            y(v) + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">λ_op</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">aggregated risk</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );
    for (k, c) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = c
            .lambda_grid
            .iter()
            .zip(&c.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(lam, &v)| format!("{:.2},{:.2}", x(lam.value()), y(v)))
            .collect();
        let label = xml_escape(&c.label);
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" data-label="{label}" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
