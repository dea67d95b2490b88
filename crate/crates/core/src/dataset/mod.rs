//! Face-age annotations, attribute encoding, label normalisation, the
//! synthetic biased-perception generator and raster image I/O.

mod annotations;
mod encoding;
mod image;
mod synth;

pub use annotations::{load_annotations, write_annotations, AnnotationRecord, ObserverApparent};
pub use encoding::{encode_attributes, AttributeVector, BASE_ATTRIBUTE_LEN, OBSERVER_ATTRIBUTE_LEN};
pub use image::{load_image, save_image, ImageFormat};
pub use synth::{
    generate_synthetic, load_dataset, write_dataset, BiasTable, ObserverOffsets, SyntheticSpec,
    ANNOTATIONS_FILE, IMAGES_DIR, SPEC_FILE,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Upper end of the age scale, in years. Labels are divided by this to land
/// in the sigmoid's `[0, 1]` range.
pub const AGE_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("row {row}, column `{column}`: {message}")]
    Row {
        row: usize,
        column: String,
        message: String,
    },
    #[error("age {0} outside [0, {AGE_MAX}]")]
    AgeOutOfRange(f64),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// A closed set of categories with a fixed encoding order and stable
/// lowercase names.
pub trait Category: Copy + Eq + Ord + fmt::Debug + 'static {
    /// All categories in one-hot order.
    const ALL: &'static [Self];
    /// Column name used in CSV headers and report tables.
    const ATTRIBUTE: &'static str;

    fn name(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("category listed in ALL")
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

macro_rules! category {
    (
        $(#[$meta:meta])*
        $name:ident, $attr:literal { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl Category for $name {
            const ALL: &'static [Self] = &[$(Self::$variant),+];
            const ATTRIBUTE: &'static str = $attr;

            fn name(self) -> &'static str {
                match self {
                    $(Self::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                <Self as Category>::parse(s).ok_or_else(|| {
                    let names: Vec<_> = Self::ALL.iter().map(|c| c.name()).collect();
                    format!("unknown {} `{s}` (expected one of {})", $attr, names.join(", "))
                })
            }
        }
    };
}

category! {
    /// Female first: female = `[1, 0]`, male = `[0, 1]`.
    Gender, "gender" { Female => "female", Male => "male" }
}

category! {
    Race, "race" { Asian => "asian", Afroamerican => "afroamerican", Caucasian => "caucasian" }
}

category! {
    Happiness, "happiness" {
        Happy => "happy",
        SlightlyHappy => "slightly_happy",
        Neutral => "neutral",
        Other => "other",
    }
}

category! {
    Makeup, "makeup" {
        Makeup => "makeup",
        NoMakeup => "no_makeup",
        NotClear => "not_clear",
        VerySubtle => "very_subtle",
    }
}

category! {
    /// Gender of the annotator whose perception is being modelled.
    ObserverGender, "observer" { Female => "female", Male => "male" }
}

category! {
    Split, "split" { Train => "train", Validation => "validation", Test => "test" }
}

/// Maps an age in years onto `[0, 1]`.
pub fn normalize_age(age: f64) -> Result<f64> {
    if !(0.0..=AGE_MAX).contains(&age) {
        return Err(DatasetError::AgeOutOfRange(age));
    }
    Ok(age / AGE_MAX)
}

/// Inverse of [`normalize_age`].
pub fn denormalize_age(unit: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&unit) {
        return Err(DatasetError::AgeOutOfRange(unit * AGE_MAX));
    }
    Ok(unit * AGE_MAX)
}

/// One face image and its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `h×w×c` pixels in `[0, 1]`.
    pub pixels: Tensor,
    pub record: AnnotationRecord,
}

/// Samples belonging to `split`, in their original order.
pub fn select_split(samples: &[ImageSample], split: Split) -> Vec<ImageSample> {
    samples.iter().filter(|s| s.record.split == split).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_round_trips() {
        assert_eq!(normalize_age(50.0).unwrap(), 0.5);
        assert_eq!(normalize_age(0.0).unwrap(), 0.0);
        let back = denormalize_age(normalize_age(73.2).unwrap()).unwrap();
        assert!((back - 73.2).abs() < 1e-12);
        assert!(matches!(normalize_age(-0.5), Err(DatasetError::AgeOutOfRange(_))));
        assert!(matches!(normalize_age(100.5), Err(DatasetError::AgeOutOfRange(_))));
    }

    #[test]
    fn category_names_round_trip() {
        for &h in Happiness::ALL {
            assert_eq!(h.name().parse::<Happiness>().unwrap(), h);
        }
        assert_eq!("afroamerican".parse::<Race>().unwrap(), Race::Afroamerican);
        assert!("martian".parse::<Race>().is_err());
        assert_eq!(Gender::Female.index(), 0);
        assert_eq!(Makeup::VerySubtle.index(), 3);
    }

    #[test]
    fn split_selection_is_a_partition() {
        let mk = |split| ImageSample {
            pixels: Tensor::zeros(&[1, 1, 1]),
            record: AnnotationRecord {
                split,
                ..AnnotationRecord::example()
            },
        };
        let all: Vec<_> = [Split::Train, Split::Test, Split::Validation, Split::Train]
            .into_iter()
            .map(mk)
            .collect();
        let total: usize = Split::ALL.iter().map(|&s| select_split(&all, s).len()).sum();
        assert_eq!(total, all.len());
        assert_eq!(select_split(&all, Split::Train).len(), 2);
    }
}
