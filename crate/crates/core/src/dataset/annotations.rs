use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Category, DatasetError, Gender, Happiness, Makeup, ObserverGender, Race, Result, Split, AGE_MAX};

const BASE_COLUMNS: [&str; 9] = [
    "image_id",
    "split",
    "real_age",
    "apparent_mean",
    "apparent_std",
    "gender",
    "race",
    "happiness",
    "makeup",
];
const OBSERVER_COLUMNS: [&str; 2] = ["apparent_female_obs", "apparent_male_obs"];

/// Mean apparent age as judged by female and by male annotators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverApparent {
    pub female: f64,
    pub male: f64,
}

impl ObserverApparent {
    pub fn get(&self, observer: ObserverGender) -> f64 {
        match observer {
            ObserverGender::Female => self.female,
            ObserverGender::Male => self.male,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub split: Split,
    /// Chronological age in years.
    pub real_age: f64,
    /// Mean of the annotators' age guesses, in years.
    pub apparent_mean: f64,
    pub apparent_std: f64,
    pub gender: Gender,
    pub race: Race,
    pub happiness: Happiness,
    pub makeup: Makeup,
    pub apparent_by_observer: Option<ObserverApparent>,
}

impl AnnotationRecord {
    /// Apparent label for the given observer, or the pooled mean when no
    /// observer is given.
    pub fn apparent_label(&self, observer: Option<ObserverGender>) -> Option<f64> {
        match observer {
            None => Some(self.apparent_mean),
            Some(g) => self.apparent_by_observer.map(|o| o.get(g)),
        }
    }

    #[cfg(test)]
    pub(crate) fn example() -> Self {
        Self {
            image_id: "000000".into(),
            split: Split::Train,
            real_age: 45.0,
            apparent_mean: 42.5,
            apparent_std: 3.0,
            gender: Gender::Female,
            race: Race::Caucasian,
            happiness: Happiness::Neutral,
            makeup: Makeup::NoMakeup,
            apparent_by_observer: None,
        }
    }
}

fn check_age(value: f64, row: usize, column: &str) -> Result<f64> {
    if !(0.0..=AGE_MAX).contains(&value) {
        return Err(DatasetError::Row {
            row,
            column: column.into(),
            message: format!("age {value} outside [0, {AGE_MAX}]"),
        });
    }
    Ok(value)
}

fn parse_field<T: std::str::FromStr>(raw: &str, row: usize, column: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| DatasetError::Row {
        row,
        column: column.into(),
        message: format!("`{raw}`: {e}"),
    })
}

/// Reads an annotation CSV. Rows are numbered from 1 (the first line after
/// the header). With `split = Some(s)` only rows tagged `s` are returned.
pub fn load_annotations(path: impl AsRef<Path>, split: Option<Split>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    let with_observer = if header == BASE_COLUMNS {
        false
    } else if header.len() == 11 && header[..9] == BASE_COLUMNS && header[9..] == OBSERVER_COLUMNS {
        true
    } else {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            expected: format!("{}[,{}]", BASE_COLUMNS.join(","), OBSERVER_COLUMNS.join(",")),
            found: header.join(","),
        });
    };

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != header.len() {
            return Err(DatasetError::Row {
                row: row_no,
                column: "*".into(),
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let f = |idx: usize| &row[idx];
        let real_age = check_age(parse_field(f(2), row_no, "real_age")?, row_no, "real_age")?;
        let apparent_mean = check_age(parse_field(f(3), row_no, "apparent_mean")?, row_no, "apparent_mean")?;
        let apparent_std: f64 = parse_field(f(4), row_no, "apparent_std")?;
        if apparent_std.is_nan() || apparent_std < 0.0 {
            return Err(DatasetError::Row {
                row: row_no,
                column: "apparent_std".into(),
                message: format!("standard deviation {apparent_std} is negative"),
            });
        }
        let apparent_by_observer = if with_observer {
            match (f(9).trim(), f(10).trim()) {
                ("", "") => None,
                (female, male) => Some(ObserverApparent {
                    female: check_age(parse_field(female, row_no, OBSERVER_COLUMNS[0])?, row_no, OBSERVER_COLUMNS[0])?,
                    male: check_age(parse_field(male, row_no, OBSERVER_COLUMNS[1])?, row_no, OBSERVER_COLUMNS[1])?,
                }),
            }
        } else {
            None
        };
        let record = AnnotationRecord {
            image_id: f(0).trim().to_owned(),
            split: parse_field(f(1), row_no, "split")?,
            real_age,
            apparent_mean,
            apparent_std,
            gender: parse_field(f(5), row_no, Gender::ATTRIBUTE)?,
            race: parse_field(f(6), row_no, Race::ATTRIBUTE)?,
            happiness: parse_field(f(7), row_no, Happiness::ATTRIBUTE)?,
            makeup: parse_field(f(8), row_no, Makeup::ATTRIBUTE)?,
            apparent_by_observer,
        };
        if record.image_id.is_empty() {
            return Err(DatasetError::Row {
                row: row_no,
                column: "image_id".into(),
                message: "empty image id".into(),
            });
        }
        if split.is_none_or(|s| s == record.split) {
            records.push(record);
        }
    }
    Ok(records)
}

/// Writes records in the format [`load_annotations`] reads. Observer columns
/// are emitted when any record carries observer labels.
pub fn write_annotations<W: Write>(records: &[AnnotationRecord], out: W) -> Result<()> {
    let with_observer = records.iter().any(|r| r.apparent_by_observer.is_some());
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if with_observer {
        header.extend(OBSERVER_COLUMNS);
    }
    writer.write_record(&header)?;
    for r in records {
        let mut fields = vec![
            r.image_id.clone(),
            r.split.to_string(),
            fmt_age(r.real_age),
            fmt_age(r.apparent_mean),
            fmt_age(r.apparent_std),
            r.gender.to_string(),
            r.race.to_string(),
            r.happiness.to_string(),
            r.makeup.to_string(),
        ];
        if with_observer {
            match r.apparent_by_observer {
                Some(o) => fields.extend([fmt_age(o.female), fmt_age(o.male)]),
                None => fields.extend([String::new(), String::new()]),
            }
        }
        writer.write_record(&fields)?;
    }
    writer.flush().map_err(|e| DatasetError::Csv(e.into()))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_age(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "image_id,split,real_age,apparent_mean,apparent_std,gender,race,happiness,makeup\n";

    #[test]
    fn parses_a_plain_row() {
        let f = csv_file(&format!("{HEADER}img1,train,45,42.5,3.1,female,caucasian,neutral,no_makeup\n"));
        let records = load_annotations(f.path(), None).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.gender, Gender::Female);
        assert_eq!(r.race, Race::Caucasian);
        assert_eq!(r.happiness, Happiness::Neutral);
        assert_eq!(r.makeup, Makeup::NoMakeup);
        assert_eq!(r.real_age, 45.0);
        assert_eq!(r.apparent_mean, 42.5);
        assert_eq!(r.apparent_by_observer, None);
    }

    #[test]
    fn header_only_gives_empty_list() {
        let f = csv_file(HEADER);
        assert!(load_annotations(f.path(), None).unwrap().is_empty());
    }

    #[test]
    fn unknown_category_names_row_and_column() {
        let f = csv_file(&format!(
            "{HEADER}a,train,45,42.5,3,female,asian,happy,makeup\nb,test,30,31,2,male,martian,happy,makeup\n"
        ));
        match load_annotations(f.path(), None) {
            Err(DatasetError::Row { row, column, message }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "race");
                assert!(message.contains("martian"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_age_is_rejected() {
        let f = csv_file(&format!("{HEADER}a,train,101,42.5,3,female,asian,happy,makeup\n"));
        assert!(matches!(
            load_annotations(f.path(), None),
            Err(DatasetError::Row { column, .. }) if column == "real_age"
        ));
    }

    #[test]
    fn bad_header_and_missing_file() {
        let f = csv_file("id,age\n1,2\n");
        assert!(matches!(load_annotations(f.path(), None), Err(DatasetError::Header { .. })));
        assert!(matches!(
            load_annotations("/definitely/not/here.csv", None),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn observer_columns_and_split_filter() {
        let header = HEADER.trim_end().to_owned() + ",apparent_female_obs,apparent_male_obs\n";
        let f = csv_file(&format!(
            "{header}a,train,45,42,3,female,asian,happy,makeup,43,41\nb,validation,30,31,2,male,asian,other,not_clear,,\n"
        ));
        let all = load_annotations(f.path(), None).unwrap();
        assert_eq!(all[0].apparent_by_observer, Some(ObserverApparent { female: 43.0, male: 41.0 }));
        assert_eq!(all[1].apparent_by_observer, None);
        let val = load_annotations(f.path(), Some(Split::Validation)).unwrap();
        assert_eq!(val.len(), 1);
        assert_eq!(val[0].image_id, "b");
    }

    #[test]
    fn write_then_load_is_identity() {
        let mut a = AnnotationRecord::example();
        a.apparent_by_observer = Some(ObserverApparent { female: 43.25, male: 41.0 / 3.0 });
        let mut b = AnnotationRecord::example();
        b.image_id = "x".into();
        b.real_age = 0.1 + 0.2;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write_annotations(&[a.clone(), b.clone()], &mut f).unwrap();
        let back = load_annotations(f.path(), None).unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
