use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{
    age_histogram, error_by_age_window, stratify, AgeLabel, Attribute, Histogram, ObserverReport, StratumRow,
    WindowPoint, DEFAULT_WINDOW,
};
use super::plot::{bar_plot, line_plot, Series};
use super::predictions::PredictionSet;
use super::{mae, EvaluationError, Result};
use crate::dataset::AnnotationRecord;

pub const REPORT_FILE: &str = "report.json";
pub const STRATA_FILE: &str = "attributes.csv";

/// Everything the evaluation produces for one prediction set. MAEs in
/// years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae_apparent: f64,
    pub mae_real: f64,
    /// False when the real-age error comes from a single-head model.
    pub real_from_real_head: bool,
    pub strata: Vec<StratumRow>,
    pub window_years: f64,
    pub window_real: Vec<WindowPoint>,
    pub window_apparent: Vec<WindowPoint>,
    pub train_histogram_real: Histogram,
    pub train_histogram_apparent: Histogram,
    pub observer: Option<ObserverReport>,
}

pub fn build_report(
    preds: &PredictionSet,
    records: &[AnnotationRecord],
    train: &[AnnotationRecord],
    observer: Option<ObserverReport>,
) -> Result<EvalReport> {
    let pairs = preds.align(records)?;
    let overall = |label: AgeLabel| {
        let p: Vec<f64> = pairs.iter().map(|(p, _)| label.prediction(p)).collect();
        let t: Vec<f64> = pairs.iter().map(|(_, r)| label.truth(r)).collect();
        mae(&p, &t)
    };
    let mut strata = Vec::new();
    for attribute in Attribute::ALL {
        strata.extend(stratify(preds, records, train, attribute)?);
    }
    Ok(EvalReport {
        n: pairs.len(),
        mae_apparent: overall(AgeLabel::Apparent)?,
        mae_real: overall(AgeLabel::Real)?,
        real_from_real_head: preds.has_real_head(),
        strata,
        window_years: DEFAULT_WINDOW,
        window_real: error_by_age_window(preds, records, AgeLabel::Real, DEFAULT_WINDOW)?,
        window_apparent: error_by_age_window(preds, records, AgeLabel::Apparent, DEFAULT_WINDOW)?,
        train_histogram_real: age_histogram(train, AgeLabel::Real, 1.0)?,
        train_histogram_apparent: age_histogram(train, AgeLabel::Apparent, 1.0)?,
        observer,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Attribute table. Empty categories get blank MAE cells.
pub fn write_strata_csv<W: Write>(rows: &[StratumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["attribute", "category", "train_pct", "n", "mae_real", "mae_apparent"])?;
    for r in rows {
        w.write_record([
            r.attribute.name().to_owned(),
            r.category.clone(),
            opt(r.train_pct),
            r.n.to_string(),
            opt(r.mae_real),
            opt(r.mae_apparent),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_window_csv<W: Write>(points: &[WindowPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["center", "mae", "count"])?;
    for p in points {
        w.write_record([format!("{:?}", p.center), format!("{:?}", p.mae), p.count.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_histogram_csv<W: Write>(h: &Histogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "count"])?;
    for (start, n) in &h.bins {
        w.write_record([format!("{start:?}"), n.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes the report JSON, the per-table CSVs and SVG plots into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| EvaluationError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let json = serde_json::to_string_pretty(report)? + "\n";
    write_file(&dir.join(REPORT_FILE), json.as_bytes())?;
    write_file(&dir.join(STRATA_FILE), &buffer(|b| write_strata_csv(&report.strata, b))?)?;
    for (name, points) in [("real", &report.window_real), ("apparent", &report.window_apparent)] {
        write_file(
            &dir.join(format!("error_by_age_{name}.csv")),
            &buffer(|b| write_window_csv(points, b))?,
        )?;
        let series = Series {
            name: format!("{name} age MAE"),
            points: points.iter().map(|p| (p.center, p.mae)).collect(),
        };
        let svg = line_plot(
            &format!("{} age estimation: error by age ({} y window)", capitalise(name), report.window_years),
            "ground-truth age (years)",
            "mean absolute error (years)",
            &[series],
        );
        write_file(&dir.join(format!("error_by_age_{name}.svg")), svg.as_bytes())?;
    }
    for h in [&report.train_histogram_real, &report.train_histogram_apparent] {
        let name = h.label.name();
        write_file(
            &dir.join(format!("train_histogram_{name}.csv")),
            &buffer(|b| write_histogram_csv(h, b))?,
        )?;
        let bars: Vec<(f64, f64)> = h.bins.iter().map(|&(x, n)| (x, n as f64)).collect();
        let svg = bar_plot(
            &format!("Training set {name} age distribution"),
            &format!("{name} age (years)"),
            "samples",
            &bars,
            h.bin_width,
        );
        write_file(&dir.join(format!("train_histogram_{name}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}
