use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EvaluationError, Result};
use crate::architecture::{forward, ArchitectureError, ForwardOutput, Inputs, ModelParams, NetworkSpec};
use crate::dataset::{encode_attributes, AnnotationRecord, ImageSample, ObserverGender};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    /// Apparent head, or the only head, in years.
    pub apparent_pred: f64,
    pub real_pred: Option<f64>,
}

impl PredictionRow {
    /// Real-age estimate: the real head when there is one, otherwise the
    /// single head.
    pub fn real_estimate(&self) -> f64 {
        self.real_pred.unwrap_or(self.apparent_pred)
    }
}

/// Predictions with unique image ids, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    rows: Vec<PredictionRow>,
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

impl PredictionSet {
    pub fn new(rows: Vec<PredictionRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.image_id.as_str()) {
                return Err(EvaluationError::DuplicateId(r.image_id.clone()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when every row carries a real-head prediction.
    pub fn has_real_head(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.real_pred.is_some())
    }

    /// Pairs every prediction with its annotation.
    pub fn align<'a>(&'a self, records: &'a [AnnotationRecord]) -> Result<Vec<(&'a PredictionRow, &'a AnnotationRecord)>> {
        let by_id: BTreeMap<&str, &AnnotationRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
        self.rows
            .iter()
            .map(|row| {
                by_id
                    .get(row.image_id.as_str())
                    .map(|rec| (row, *rec))
                    .ok_or_else(|| EvaluationError::UnknownId(row.image_id.clone()))
            })
            .collect()
    }

    /// Writes `image_id,apparent_pred,real_pred`; `real_pred` is blank for
    /// single-head models.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_id", "apparent_pred", "real_pred"])?;
        for r in &self.rows {
            w.write_record([r.image_id.clone(), fmt(r.apparent_pred), r.real_pred.map(fmt).unwrap_or_default()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != ["image_id", "apparent_pred", "real_pred"] {
            return Err(EvaluationError::InvalidArgument(format!(
                "prediction CSV header must be `image_id,apparent_pred,real_pred`, found `{}`",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let num = |s: &str, col: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    EvaluationError::InvalidArgument(format!("prediction row {}, column `{col}`: `{s}`: {e}", i + 1))
                })
            };
            let real = rec.get(2).unwrap_or("").trim();
            rows.push(PredictionRow {
                image_id: rec.get(0).unwrap_or("").trim().to_owned(),
                apparent_pred: num(rec.get(1).unwrap_or(""), "apparent_pred")?,
                real_pred: if real.is_empty() { None } else { Some(num(real, "real_pred")?) },
            });
        }
        Self::new(rows)
    }
}

fn forward_sample(
    spec: &NetworkSpec,
    params: &ModelParams,
    sample: &ImageSample,
    observer: Option<ObserverGender>,
) -> std::result::Result<ForwardOutput, ArchitectureError> {
    let attrs = spec.attribute_len.map(|_| encode_attributes(&sample.record, observer).to_tensor());
    forward(spec, params, Inputs::new(&sample.pixels, attrs.as_ref()))
}

/// Runs `f` over `items` on up to `threads` scoped threads, keeping the
/// input order in the output.
fn par_map<T: Sync, U: Send, E: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> std::result::Result<U, E> + Sync,
) -> std::result::Result<Vec<U>, E> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<std::result::Result<Vec<U>, E>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<std::result::Result<Vec<U>, E>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Predictions for `samples`. Observer variants need an observer gender;
/// without one the two observer-conditioned outputs are averaged.
pub fn predict(
    spec: &NetworkSpec,
    params: &ModelParams,
    samples: &[ImageSample],
    observer: Option<ObserverGender>,
    threads: usize,
) -> Result<PredictionSet> {
    if !spec.variant.uses_observer() && observer.is_some() {
        return Err(EvaluationError::InvalidArgument(format!(
            "{} takes no observer gender",
            spec.variant
        )));
    }
    let rows = par_map(samples, threads, |s| {
        let out = if spec.variant.uses_observer() && observer.is_none() {
            let f = forward_sample(spec, params, s, Some(ObserverGender::Female))?;
            let m = forward_sample(spec, params, s, Some(ObserverGender::Male))?;
            ForwardOutput {
                apparent_unit: (f.apparent_unit + m.apparent_unit) / 2.0,
                real_unit: f.real_unit.zip(m.real_unit).map(|(a, b)| (a + b) / 2.0),
                apparent_pred: (f.apparent_pred + m.apparent_pred) / 2.0,
                real_pred: f.real_pred.zip(m.real_pred).map(|(a, b)| (a + b) / 2.0),
            }
        } else {
            forward_sample(spec, params, s, observer)?
        };
        Ok::<_, ArchitectureError>(PredictionRow {
            image_id: s.record.image_id.clone(),
            apparent_pred: out.apparent_pred,
            real_pred: out.real_pred,
        })
    })?;
    PredictionSet::new(rows)
}

/// Predictions with the observer block set to female and to male.
pub fn predict_observers(
    spec: &NetworkSpec,
    params: &ModelParams,
    samples: &[ImageSample],
    threads: usize,
) -> Result<(PredictionSet, PredictionSet)> {
    if !spec.variant.uses_observer() {
        return Err(EvaluationError::InvalidArgument(format!(
            "{} has no observer input",
            spec.variant
        )));
    }
    Ok((
        predict(spec, params, samples, Some(ObserverGender::Female), threads)?,
        predict(spec, params, samples, Some(ObserverGender::Male), threads)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{build, ModelVariant, Scale};
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    #[test]
    fn csv_round_trip_and_duplicates() {
        let set = PredictionSet::new(vec![
            PredictionRow {
                image_id: "a".into(),
                apparent_pred: 0.1 + 0.2,
                real_pred: Some(41.0 / 3.0),
            },
            PredictionRow {
                image_id: "b".into(),
                apparent_pred: 7.0,
                real_pred: None,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("image_id,apparent_pred,real_pred\n"));
        assert_eq!(PredictionSet::read_csv(buf.as_slice()).unwrap(), set);

        let dup = vec![set.rows()[0].clone(), set.rows()[0].clone()];
        assert!(matches!(PredictionSet::new(dup), Err(EvaluationError::DuplicateId(_))));
    }

    #[test]
    fn threaded_prediction_matches_serial() {
        let samples = generate_synthetic(&SyntheticSpec {
            sample_count: 9,
            validation_count: Some(0),
            test_count: Some(0),
            ..Default::default()
        })
        .unwrap();
        let (spec, params) = build(ModelVariant::Case3, Scale::Desk, 2);
        let serial = predict(&spec, &params, &samples, None, 1).unwrap();
        let threaded = predict(&spec, &params, &samples, None, 4).unwrap();
        assert_eq!(serial, threaded);
        assert!(serial.has_real_head());
        let records: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
        assert_eq!(serial.align(&records).unwrap().len(), 9);
        assert!(serial.align(&records[1..]).is_err());
    }
}
