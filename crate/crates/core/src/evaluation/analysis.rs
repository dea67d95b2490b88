use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::predictions::{PredictionRow, PredictionSet};
use super::{mae, EvaluationError, Result};
use crate::dataset::{AnnotationRecord, Category, Gender, Happiness, Makeup, ObserverGender, Race, AGE_MAX};

/// Width of the age windows, in years.
pub const DEFAULT_WINDOW: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeLabel {
    Real,
    Apparent,
}

impl AgeLabel {
    pub fn truth(self, r: &AnnotationRecord) -> f64 {
        match self {
            Self::Real => r.real_age,
            Self::Apparent => r.apparent_mean,
        }
    }

    /// The prediction compared against this label.
    pub fn prediction(self, p: &PredictionRow) -> f64 {
        match self {
            Self::Real => p.real_estimate(),
            Self::Apparent => p.apparent_pred,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Apparent => "apparent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Race,
    Happiness,
    Makeup,
}

impl Attribute {
    pub const ALL: [Self; 4] = [Self::Gender, Self::Race, Self::Happiness, Self::Makeup];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gender => Gender::ATTRIBUTE,
            Self::Race => Race::ATTRIBUTE,
            Self::Happiness => Happiness::ATTRIBUTE,
            Self::Makeup => Makeup::ATTRIBUTE,
        }
    }

    pub fn categories(self) -> Vec<&'static str> {
        fn names<C: Category>() -> Vec<&'static str> {
            C::ALL.iter().map(|c| c.name()).collect()
        }
        match self {
            Self::Gender => names::<Gender>(),
            Self::Race => names::<Race>(),
            Self::Happiness => names::<Happiness>(),
            Self::Makeup => names::<Makeup>(),
        }
    }

    pub fn category_of(self, r: &AnnotationRecord) -> &'static str {
        match self {
            Self::Gender => r.gender.name(),
            Self::Race => r.race.name(),
            Self::Happiness => r.happiness.name(),
            Self::Makeup => r.makeup.name(),
        }
    }
}

/// One row of the attribute table. Empty categories have `n == 0` and no
/// MAE values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub attribute: Attribute,
    pub category: String,
    /// Share of the training annotations in this category, percent.
    pub train_pct: Option<f64>,
    pub n: usize,
    pub mae_real: Option<f64>,
    pub mae_apparent: Option<f64>,
}

/// Per-category errors for one attribute, categories in encoding order.
pub fn stratify(
    preds: &PredictionSet,
    records: &[AnnotationRecord],
    train: &[AnnotationRecord],
    attribute: Attribute,
) -> Result<Vec<StratumRow>> {
    let pairs = preds.align(records)?;
    attribute
        .categories()
        .into_iter()
        .map(|category| {
            let members: Vec<_> = pairs
                .iter()
                .filter(|(_, r)| attribute.category_of(r) == category)
                .collect();
            let train_pct = (!train.is_empty()).then(|| {
                let k = train.iter().filter(|r| attribute.category_of(r) == category).count();
                100.0 * k as f64 / train.len() as f64
            });
            let head_mae = |label: AgeLabel| -> Result<Option<f64>> {
                if members.is_empty() {
                    return Ok(None);
                }
                let p: Vec<f64> = members.iter().map(|(p, _)| label.prediction(p)).collect();
                let t: Vec<f64> = members.iter().map(|(_, r)| label.truth(r)).collect();
                mae(&p, &t).map(Some)
            };
            Ok(StratumRow {
                attribute,
                category: category.to_owned(),
                train_pct,
                n: members.len(),
                mae_real: head_mae(AgeLabel::Real)?,
                mae_apparent: head_mae(AgeLabel::Apparent)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub center: f64,
    pub mae: f64,
    pub count: usize,
}

/// Mean absolute error over sliding windows centred on every integer age in
/// `0..=AGE_MAX`. A sample falls in a window when its ground-truth age is
/// within `window / 2` of the centre, boundaries included. Empty windows
/// are omitted.
pub fn error_by_age_window(
    preds: &PredictionSet,
    records: &[AnnotationRecord],
    label: AgeLabel,
    window: f64,
) -> Result<Vec<WindowPoint>> {
    if !(window > 0.0) {
        return Err(EvaluationError::InvalidArgument(format!("window must be positive, got {window}")));
    }
    let half = window / 2.0;
    let pairs: Vec<(f64, f64)> = preds
        .align(records)?
        .into_iter()
        .map(|(p, r)| (label.truth(r), (label.prediction(p) - label.truth(r)).abs()))
        .collect();
    let mut curve = Vec::new();
    for c in 0..=AGE_MAX as usize {
        let center = c as f64;
        let (mut sum, mut count) = (0.0, 0);
        for &(truth, err) in &pairs {
            if (truth - center).abs() <= half {
                sum += err;
                count += 1;
            }
        }
        if count > 0 {
            curve.push(WindowPoint {
                center,
                mae: sum / count as f64,
                count,
            });
        }
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: AgeLabel,
    pub bin_width: f64,
    /// `(bin start, count)` for every non-empty bin, ascending.
    pub bins: Vec<(f64, usize)>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.1).sum()
    }
}

/// Counts ages into `[k·bin, (k+1)·bin)` bins.
pub fn age_histogram(records: &[AnnotationRecord], label: AgeLabel, bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(EvaluationError::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for r in records {
        *counts.entry((label.truth(r) / bin_width).floor() as i64).or_default() += 1;
    }
    Ok(Histogram {
        label,
        bin_width,
        bins: counts.into_iter().map(|(k, n)| (k as f64 * bin_width, n)).collect(),
    })
}

/// Errors against one observer gender's labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverMae {
    pub n: usize,
    /// Predictions made for this observer gender.
    pub matched: f64,
    /// Predictions made for the other observer gender.
    pub cross: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub female: ObserverMae,
    pub male: ObserverMae,
}

impl ObserverReport {
    pub fn get(&self, g: ObserverGender) -> ObserverMae {
        match g {
            ObserverGender::Female => self.female,
            ObserverGender::Male => self.male,
        }
    }
}

/// Compares observer-conditioned apparent predictions with per-observer
/// labels.
pub fn observer_eval(
    female_preds: &PredictionSet,
    male_preds: &PredictionSet,
    records: &[AnnotationRecord],
) -> Result<ObserverReport> {
    let f = female_preds.align(records)?;
    let m = male_preds.align(records)?;
    if f.len() != m.len() || f.iter().zip(&m).any(|(a, b)| a.0.image_id != b.0.image_id) {
        return Err(EvaluationError::InvalidArgument(
            "female and male predictions must cover the same ids in the same order".into(),
        ));
    }
    let mut labels = Vec::with_capacity(f.len());
    for (_, r) in &f {
        labels.push(
            r.apparent_by_observer
                .ok_or_else(|| EvaluationError::MissingObserverLabels(r.image_id.clone()))?,
        );
    }
    let fp: Vec<f64> = f.iter().map(|(p, _)| p.apparent_pred).collect();
    let mp: Vec<f64> = m.iter().map(|(p, _)| p.apparent_pred).collect();
    let fl: Vec<f64> = labels.iter().map(|o| o.female).collect();
    let ml: Vec<f64> = labels.iter().map(|o| o.male).collect();
    Ok(ObserverReport {
        female: ObserverMae {
            n: fl.len(),
            matched: mae(&fp, &fl)?,
            cross: mae(&mp, &fl)?,
        },
        male: ObserverMae {
            n: ml.len(),
            matched: mae(&mp, &ml)?,
            cross: mae(&fp, &ml)?,
        },
    })
}
