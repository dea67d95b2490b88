//! Synthetic faces with controllable perception bias.
//!
//! Each image encodes the real age directly: a uniform gray background at
//! `real_age / AGE_MAX` and a white centred disk whose radius grows with the
//! age, plus seeded pixel noise. Apparent labels are the real age shifted
//! by per-category offsets and Gaussian annotator noise.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    load_annotations, load_image, save_image, write_annotations, AnnotationRecord, Category, DatasetError,
    Gender, Happiness, ImageFormat, ImageSample, Makeup, ObserverApparent, Race, Result, Split,
    AGE_MAX,
};
use crate::tensor::Tensor;

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const IMAGES_DIR: &str = "images";
pub const SPEC_FILE: &str = "synthetic_spec.json";

/// Apparent-age offsets in years, per attribute category. Missing
/// categories contribute nothing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasTable {
    pub gender: BTreeMap<Gender, f64>,
    pub race: BTreeMap<Race, f64>,
    pub happiness: BTreeMap<Happiness, f64>,
    pub makeup: BTreeMap<Makeup, f64>,
}

impl BiasTable {
    /// Female +4, happy −2, slightly happy −1, makeup −2 years.
    pub fn default_biases() -> Self {
        Self {
            gender: BTreeMap::from([(Gender::Female, 4.0)]),
            race: BTreeMap::new(),
            happiness: BTreeMap::from([(Happiness::Happy, -2.0), (Happiness::SlightlyHappy, -1.0)]),
            makeup: BTreeMap::from([(Makeup::Makeup, -2.0)]),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn offset(&self, gender: Gender, race: Race, happiness: Happiness, makeup: Makeup) -> f64 {
        self.gender.get(&gender).copied().unwrap_or(0.0)
            + self.race.get(&race).copied().unwrap_or(0.0)
            + self.happiness.get(&happiness).copied().unwrap_or(0.0)
            + self.makeup.get(&makeup).copied().unwrap_or(0.0)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.gender
            .values()
            .chain(self.race.values())
            .chain(self.happiness.values())
            .chain(self.makeup.values())
            .copied()
    }
}

/// Per-observer-gender shift applied on top of the pooled apparent mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverOffsets {
    pub female: f64,
    pub male: f64,
}

impl Default for ObserverOffsets {
    fn default() -> Self {
        Self { female: 1.0, male: -1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub sample_count: usize,
    pub seed: u64,
    pub bias_table: BiasTable,
    /// Std-dev of the annotator noise on the apparent mean, years.
    pub noise_std: f64,
    pub observer_offsets: Option<ObserverOffsets>,
    /// Real ages are drawn uniformly from `[min, max]` years.
    pub age_range: [f64; 2],
    pub image_side: usize,
    /// Std-dev of additive pixel noise, in intensity units.
    pub pixel_noise_std: f64,
    /// Samples tagged validation; they follow the training block.
    /// Defaults to a sixth of `sample_count`.
    pub validation_count: Option<usize>,
    /// Samples tagged test; they close the list. Defaults to a sixth of
    /// `sample_count`.
    pub test_count: Option<usize>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sample_count: 3000,
            seed: 0,
            bias_table: BiasTable::default_biases(),
            noise_std: 2.0,
            observer_offsets: Some(ObserverOffsets::default()),
            age_range: [5.0, 85.0],
            image_side: 32,
            pixel_noise_std: 0.02,
            validation_count: None,
            test_count: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        let [lo, hi] = self.age_range;
        if !(0.0..=AGE_MAX).contains(&lo) || !(0.0..=AGE_MAX).contains(&hi) || lo > hi {
            return bad(format!("age_range [{lo}, {hi}] must lie within [0, {AGE_MAX}] with min <= max"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and >= 0", self.noise_std));
        }
        if !(self.pixel_noise_std >= 0.0 && self.pixel_noise_std.is_finite()) {
            return bad(format!("pixel_noise_std {} must be finite and >= 0", self.pixel_noise_std));
        }
        if self.image_side == 0 {
            return bad("image_side must be positive".into());
        }
        if self.validation_len() + self.test_len() > self.sample_count {
            return bad(format!(
                "validation_count + test_count = {} exceeds sample_count {}",
                self.validation_len() + self.test_len(),
                self.sample_count
            ));
        }
        if self.bias_table.values().any(|v| !v.is_finite()) {
            return bad("bias_table offsets must be finite".into());
        }
        if let Some(o) = self.observer_offsets {
            if !o.female.is_finite() || !o.male.is_finite() {
                return bad("observer offsets must be finite".into());
            }
        }
        Ok(())
    }

    pub fn validation_len(&self) -> usize {
        self.validation_count.unwrap_or(self.sample_count / 6)
    }

    pub fn test_len(&self) -> usize {
        self.test_count.unwrap_or(self.sample_count / 6)
    }

    pub fn train_count(&self) -> usize {
        self.sample_count - self.validation_len() - self.test_len()
    }

    fn split_of(&self, index: usize) -> Split {
        let train = self.train_count();
        if index < train {
            Split::Train
        } else if index < train + self.validation_len() {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

fn pick<C: Category, R: Rng>(rng: &mut R) -> C {
    C::ALL[rng.random_range(0..C::ALL.len())]
}

fn clamp_age(age: f64) -> f64 {
    age.clamp(0.0, AGE_MAX)
}

/// Renders the age pattern. Pixel values are quantised to 8-bit levels so
/// that the image survives a PGM round trip unchanged.
fn render<R: Rng>(real_age: f64, side: usize, pixel_noise: Option<&Normal<f64>>, rng: &mut R) -> Tensor {
    let level = real_age / AGE_MAX;
    let radius = level * side as f64 / 2.0;
    let centre = (side as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 - centre, y as f64 - centre);
            let mut v = if dx * dx + dy * dy <= radius * radius { 1.0 } else { level };
            if let Some(noise) = pixel_noise {
                v += noise.sample(rng);
            }
            data.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    Tensor::new(vec![side, side, 1], data).expect("square image")
}

/// Generates the dataset described by `spec`. The result depends only on
/// the spec, including its seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let annotator = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("validated std"));
    let pixel = (spec.pixel_noise_std > 0.0).then(|| Normal::new(0.0, spec.pixel_noise_std).expect("validated std"));
    let [lo, hi] = spec.age_range;
    let width = spec.sample_count.to_string().len().max(6);

    let mut samples = Vec::with_capacity(spec.sample_count);
    for i in 0..spec.sample_count {
        let real_age = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let gender: Gender = pick(&mut rng);
        let race: Race = pick(&mut rng);
        let happiness: Happiness = pick(&mut rng);
        let makeup: Makeup = pick(&mut rng);
        let noise = annotator.as_ref().map_or(0.0, |n| n.sample(&mut rng));
        let apparent_mean = clamp_age(real_age + spec.bias_table.offset(gender, race, happiness, makeup) + noise);
        let apparent_by_observer = spec.observer_offsets.map(|o| ObserverApparent {
            female: clamp_age(apparent_mean + o.female),
            male: clamp_age(apparent_mean + o.male),
        });
        let pixels = render(real_age, spec.image_side, pixel.as_ref(), &mut rng);
        samples.push(ImageSample {
            pixels,
            record: AnnotationRecord {
                image_id: format!("{i:0width$}"),
                split: spec.split_of(i),
                real_age,
                apparent_mean,
                apparent_std: spec.noise_std,
                gender,
                race,
                happiness,
                makeup,
                apparent_by_observer,
            },
        });
    }
    Ok(samples)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `images/<image_id>.pgm|ppm`, `annotations.csv` and, when given,
/// the generating spec as JSON.
pub fn write_dataset(samples: &[ImageSample], dir: impl AsRef<Path>, spec: Option<&SyntheticSpec>) -> Result<()> {
    let dir = dir.as_ref();
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    for s in samples {
        let format = if s.pixels.shape().get(2) == Some(&3) {
            ImageFormat::Ppm
        } else {
            ImageFormat::Pgm
        };
        let path = images.join(format!("{}.{}", s.record.image_id, format.extension()));
        save_image(&s.pixels, &path, format)?;
    }
    let csv_path = dir.join(ANNOTATIONS_FILE);
    let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
    let records: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
    write_annotations(&records, BufWriter::new(file))?;
    if let Some(spec) = spec {
        let spec_path = dir.join(SPEC_FILE);
        let json = serde_json::to_string_pretty(spec)? + "\n";
        fs::write(&spec_path, json).map_err(io_err(&spec_path))?;
    }
    Ok(())
}

/// Loads a dataset directory: annotations plus one image per record, looked
/// up as `images/<image_id>.{pgm,ppm,ptns}`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<ImageSample>> {
    let dir = dir.as_ref();
    let records = load_annotations(dir.join(ANNOTATIONS_FILE), None)?;
    let images = dir.join(IMAGES_DIR);
    records
        .into_iter()
        .map(|record| {
            let path = [ImageFormat::Pgm, ImageFormat::Ppm, ImageFormat::Ptns]
                .iter()
                .map(|f| images.join(format!("{}.{}", record.image_id, f.extension())))
                .find(|p| p.exists())
                .ok_or_else(|| DatasetError::Image {
                    path: images.join(&record.image_id),
                    message: "no image file for this record".into(),
                })?;
            Ok(ImageSample {
                pixels: load_image(&path)?,
                record,
            })
        })
        .collect()
}
