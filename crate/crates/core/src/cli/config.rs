use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::architecture::{ModelVariant, Scale};
use crate::dataset::SyntheticSpec;
use crate::training::TrainConfig;

/// JSON run configuration. Every field is optional; command-line flags
/// override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Generator settings for `synth`; defaults to [`SyntheticSpec::default`].
    pub synthetic: Option<SyntheticSpec>,
    /// Defaults to `case3`.
    pub variant: Option<ModelVariant>,
    /// Defaults to `desk`.
    pub scale: Option<Scale>,
    /// Overrides on top of the variant's training defaults, using the field
    /// names of [`TrainConfig`].
    pub train: Option<serde_json::Map<String, serde_json::Value>>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Variant defaults with the `train` overrides applied. Unknown keys
    /// are rejected.
    pub fn train_config(&self, variant: ModelVariant) -> Result<TrainConfig, CliError> {
        let mut base = serde_json::to_value(TrainConfig::for_variant(variant)).expect("config serialises");
        if let (Some(over), Some(obj)) = (&self.train, base.as_object_mut()) {
            for (k, v) in over {
                obj.insert(k.clone(), v.clone());
            }
        }
        let config: TrainConfig =
            serde_json::from_value(base).map_err(|e| CliError::Config(format!("train config: {e}")))?;
        Ok(config)
    }
}

/// The fully resolved settings of a training run, written next to its
/// checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedTrainRun {
    pub variant: ModelVariant,
    pub scale: Scale,
    pub data: PathBuf,
    pub train: TrainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TargetLabel;

    #[test]
    fn overrides_apply_on_variant_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"variant": "case1", "train": {"patience": 7}}"#).unwrap();
        let t = c.train_config(ModelVariant::Case1).unwrap();
        assert_eq!(t.patience, 7);
        assert_eq!(t.lr_stage1, 1e-6);
        assert_eq!(t.target_label, TargetLabel::Apparent);
    }

    #[test]
    fn unknown_keys_are_rejected_at_both_levels() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"variant": "case1", "colour": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"learning_rate": 1}}"#).unwrap();
        assert!(matches!(c.train_config(ModelVariant::Case2), Err(CliError::Config(_))));
        assert!(serde_json::from_str::<RunConfig>(r#"{"synthetic": {"sample_count": 5, "x": 1}}"#).is_err());
    }
}
