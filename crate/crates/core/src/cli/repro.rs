//! The case-ordering seed sweep: Case1 trained on apparent and on real
//! labels, Case2 with attributes and Case3, all scored on real age.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::architecture::{ModelVariant, Scale};
use crate::dataset::{generate_synthetic, select_split, ImageSample, Split, SyntheticSpec};
use crate::evaluation::{mae, predict, EvaluationError};
use crate::training::{run_case, single_head_config, CaseOutcome, TargetLabel, TrainConfig, TrainingError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseOrderingConfig {
    pub seeds: Vec<u64>,
    /// Used for both stages and every variant.
    pub learning_rate: f64,
    pub max_epochs_stage1: usize,
    pub max_epochs_stage2: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Dataset settings; the seed is replaced by each sweep seed.
    pub synthetic: SyntheticSpec,
    /// An ordering passes when it holds for at least this many seeds.
    pub min_passing_seeds: usize,
    /// Slack allowed in Case3 ≤ Case2, years.
    pub case3_tolerance: f64,
}

impl Default for CaseOrderingConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            learning_rate: 1e-3,
            max_epochs_stage1: 30,
            max_epochs_stage2: 20,
            patience: 10,
            batch_size: 32,
            synthetic: SyntheticSpec::default(),
            min_passing_seeds: 4,
            case3_tolerance: 0.1,
        }
    }
}

impl CaseOrderingConfig {
    fn train_config(&self, variant: ModelVariant, label: Option<TargetLabel>, seed: u64) -> TrainConfig {
        let mut c = match label {
            Some(label) => single_head_config(variant, label, true),
            None => TrainConfig::for_variant(variant),
        };
        c.lr_stage1 = self.learning_rate;
        c.lr_stage2 = self.learning_rate;
        c.max_epochs_stage1 = self.max_epochs_stage1;
        c.max_epochs_stage2 = self.max_epochs_stage2;
        c.patience = self.patience;
        c.batch_size = self.batch_size;
        c.seed = seed;
        c
    }
}

/// Test-set real-age MAE (years) of each run for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Case1 trained on apparent labels.
    pub case1_app_real: f64,
    /// Case1 trained on real labels.
    pub case1_real_real: f64,
    /// Case2 trained on apparent labels with attributes.
    pub case2_app_real: f64,
    /// Case3, real head.
    pub case3_real: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    /// Case1 App→Real below Case1 Real→Real.
    ApparentBeatsReal,
    /// Case2 App+att→Real below Case1 App→Real.
    AttributesHelp,
    /// Case3 at most Case2 plus the tolerance.
    JointNoWorse,
}

impl Ordering {
    pub const ALL: [Self; 3] = [Self::ApparentBeatsReal, Self::AttributesHelp, Self::JointNoWorse];

    pub fn label(self) -> &'static str {
        match self {
            Self::ApparentBeatsReal => "(a) case1 app->real < case1 real->real",
            Self::AttributesHelp => "(b) case2 app+att->real < case1 app->real",
            Self::JointNoWorse => "(c) case3 real <= case2 real + tol",
        }
    }
}

impl SeedResult {
    pub fn holds(&self, ordering: Ordering, tolerance: f64) -> bool {
        match ordering {
            Ordering::ApparentBeatsReal => self.case1_app_real < self.case1_real_real,
            Ordering::AttributesHelp => self.case2_app_real < self.case1_app_real,
            Ordering::JointNoWorse => self.case3_real <= self.case2_app_real + tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOrderingReport {
    pub config: CaseOrderingConfig,
    pub results: Vec<SeedResult>,
}

impl CaseOrderingReport {
    pub fn count(&self, ordering: Ordering) -> usize {
        self.results
            .iter()
            .filter(|r| r.holds(ordering, self.config.case3_tolerance))
            .count()
    }

    pub fn passes(&self, ordering: Ordering) -> bool {
        self.count(ordering) >= self.config.min_passing_seeds
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed  c1 app->real  c1 real->real  c2 app+att->real  c3 real");
        for r in &self.results {
            let _ = writeln!(
                s,
                "{:>4}  {:>12.3}  {:>13.3}  {:>16.3}  {:>7.3}",
                r.seed, r.case1_app_real, r.case1_real_real, r.case2_app_real, r.case3_real
            );
        }
        for o in Ordering::ALL {
            let _ = writeln!(
                s,
                "{}: {}/{} seeds -> {}",
                o.label(),
                self.count(o),
                self.results.len(),
                if self.passes(o) { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReproError {
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

/// Test-split real-age MAE of a trained case, in years.
pub fn test_real_mae(outcome: &CaseOutcome, samples: &[ImageSample]) -> Result<f64, EvaluationError> {
    let test = select_split(samples, Split::Test);
    let preds = predict(&outcome.spec, &outcome.checkpoint.params, &test, None, 1)?;
    let p: Vec<f64> = preds.rows().iter().map(|r| r.real_estimate()).collect();
    let t: Vec<f64> = test.iter().map(|s| s.record.real_age).collect();
    mae(&p, &t)
}

/// Runs the sweep. `progress` receives one line per finished run.
pub fn run_case_ordering(
    config: &CaseOrderingConfig,
    mut progress: impl FnMut(&str),
) -> Result<CaseOrderingReport, ReproError> {
    let mut results = Vec::new();
    for &seed in &config.seeds {
        let spec = SyntheticSpec {
            seed,
            ..config.synthetic.clone()
        };
        let samples = generate_synthetic(&spec)?;
        let mut run = |name: &str, variant, label| -> Result<f64, ReproError> {
            let tc = config.train_config(variant, label, seed);
            let outcome = run_case(variant, Scale::Desk, &samples, &tc)?;
            let m = test_real_mae(&outcome, &samples)?;
            progress(&format!(
                "seed {seed} {name}: test real MAE {m:.3} (stage 1 {} epochs, stage 2 {} epochs)",
                outcome.log.epochs_in_stage(1),
                outcome.log.epochs_in_stage(2)
            ));
            Ok(m)
        };
        let case1_app_real = run("case1 app->real", ModelVariant::Case1, Some(TargetLabel::Apparent))?;
        let case1_real_real = run("case1 real->real", ModelVariant::Case1, Some(TargetLabel::Real))?;
        let case2_app_real = run("case2 app+att->real", ModelVariant::Case2, Some(TargetLabel::Apparent))?;
        let case3_real = run("case3", ModelVariant::Case3, None)?;
        results.push(SeedResult {
            seed,
            case1_app_real,
            case1_real_real,
            case2_app_real,
            case3_real,
        });
    }
    Ok(CaseOrderingReport {
        config: config.clone(),
        results,
    })
}
