//! Experiment configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::traditional::TraditionalAugConfig;
use crate::cohort::PhantomSpec;
use crate::diagnosis::HyperParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::detection::DEFAULT_IOU_THRESHOLD;
use crate::mixup::MixupConfig;
use crate::model::{canonical_phases, Phase};
use crate::pkcp::ExpansionPolicy;
use crate::rng;

/// Data configuration of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugConfig {
    /// One phase, the middle depth slice only.
    SinglePhaseSingleSlice,
    /// Three phases with PKCP expansion.
    ThreePhasePkcp,
    /// Four phases, every class depth-aligned.
    FourPhasePkcpAllMajority,
    /// Four phases with PKCP expansion.
    #[default]
    PkcpNoAug,
    PkcpTraditionalAug,
    PkcpMixup,
}

impl AugConfig {
    pub const ALL: [AugConfig; 6] = [
        AugConfig::SinglePhaseSingleSlice,
        AugConfig::ThreePhasePkcp,
        AugConfig::FourPhasePkcpAllMajority,
        AugConfig::PkcpNoAug,
        AugConfig::PkcpTraditionalAug,
        AugConfig::PkcpMixup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugConfig::SinglePhaseSingleSlice => "single_phase_single_slice",
            AugConfig::ThreePhasePkcp => "three_phase_pkcp",
            AugConfig::FourPhasePkcpAllMajority => "four_phase_pkcp_all_majority",
            AugConfig::PkcpNoAug => "pkcp_no_aug",
            AugConfig::PkcpTraditionalAug => "pkcp_traditional_aug",
            AugConfig::PkcpMixup => "pkcp_mixup",
        }
    }

    /// Expansion used for training composites; `None` means the single middle slice.
    pub fn training_policy(self) -> Option<ExpansionPolicy> {
        match self {
            AugConfig::SinglePhaseSingleSlice => None,
            AugConfig::FourPhasePkcpAllMajority => Some(ExpansionPolicy::all_majority()),
            _ => Some(ExpansionPolicy::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DetectionEval,
    BenignVsMalignant,
    BenignSubtype,
    MalignantSubtype,
    OneStep,
    #[default]
    TwoStep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::DetectionEval => "detection_eval",
            Task::BenignVsMalignant => "benign_vs_malignant",
            Task::BenignSubtype => "benign_subtype",
            Task::MalignantSubtype => "malignant_subtype",
            Task::OneStep => "one_step",
            Task::TwoStep => "two_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cohort manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Generate a phantom cohort in memory instead of reading a manifest.
    pub phantom: Option<PhantomSpec>,
    /// Extra phantom patients assigned to the test split.
    pub held_out: Option<PhantomSpec>,
    pub train_fraction: f64,
    /// Seed of the patient split; the run seed when absent.
    pub split_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            phantom: None,
            held_out: None,
            train_fraction: 0.7,
            split_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Detection predictions file (`[{image_id, boxes, gt}]`).
    pub predictions: Option<PathBuf>,
    pub iou_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            predictions: None,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub aug: AugConfig,
    pub task: Task,
    /// Phase subset, used in canonical order.
    pub phases: Vec<Phase>,
    /// Phase of the single-phase configuration.
    pub single_phase: Phase,
    /// Phases of the three-phase configuration; drawn from `phases` when absent.
    pub three_phases: Option<Vec<Phase>>,
    pub classifier: String,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the config file.
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub detection: DetectionConfig,
    pub hyperparams: HyperParams,
    pub mixup: MixupConfig,
    pub traditional: TraditionalAugConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            aug: AugConfig::default(),
            task: Task::default(),
            phases: Phase::ALL.to_vec(),
            single_phase: Phase::Ap,
            three_phases: None,
            classifier: "reference".into(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            detection: DetectionConfig::default(),
            hyperparams: HyperParams::default(),
            mixup: MixupConfig::default(),
            traditional: TraditionalAugConfig::default(),
            base_dir: PathBuf::new(),
            execution: Execution::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks every field before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(config_err(format!(
                "name `{}` must be non-empty and use only letters, digits, `_`, `-` or `.`",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(config_err("seeds must be distinct"));
        }
        if self.phases.is_empty() {
            return Err(config_err("phases must not be empty"));
        }
        if canonical_phases(&self.phases).len() != self.phases.len() {
            return Err(config_err("phases must not repeat"));
        }
        if self.classifier != "reference" {
            return Err(config_err(format!(
                "unknown classifier `{}`; other models plug in through the library API",
                self.classifier
            )));
        }
        if self.task == Task::DetectionEval {
            if self.detection.predictions.is_none() {
                return Err(config_err("detection_eval needs detection.predictions"));
            }
            if !(self.detection.iou_threshold > 0.0 && self.detection.iou_threshold <= 1.0) {
                return Err(config_err("detection.iou_threshold must lie in (0, 1]"));
            }
            return Ok(());
        }
        match (&self.data.manifest, &self.data.phantom) {
            (Some(_), Some(_)) => return Err(config_err("set only one of data.manifest and data.phantom")),
            (None, None) => return Err(config_err("set data.manifest or data.phantom")),
            _ => {}
        }
        if self.data.held_out.is_some() && self.data.phantom.is_none() {
            return Err(config_err("data.held_out requires data.phantom"));
        }
        if let Some(p) = &self.data.phantom {
            p.validate()?;
        }
        if let Some(p) = &self.data.held_out {
            p.validate()?;
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(config_err("data.train_fraction must lie in (0, 1)"));
        }
        match self.aug {
            AugConfig::SinglePhaseSingleSlice if !self.phases.contains(&self.single_phase) => {
                return Err(config_err(format!(
                    "single_phase {} is not among the configured phases",
                    self.single_phase
                )));
            }
            AugConfig::ThreePhasePkcp => match &self.three_phases {
                Some(t) if canonical_phases(t).len() != 3 || !t.iter().all(|p| self.phases.contains(p)) => {
                    return Err(config_err("three_phases must name 3 distinct configured phases"));
                }
                None if self.phases.len() < 3 => {
                    return Err(config_err("three_phase_pkcp needs at least 3 configured phases"));
                }
                _ => {}
            },
            AugConfig::PkcpMixup => self.mixup.validate()?,
            AugConfig::PkcpTraditionalAug => {
                let t = &self.traditional;
                if !t.max_rotation_deg.is_finite() || !(0.0..=1.0).contains(&t.flip_probability) {
                    return Err(config_err(
                        "traditional.max_rotation_deg must be finite and flip_probability in [0, 1]",
                    ));
                }
            }
            _ => {}
        }
        self.hyperparams.validate()
    }

    /// Phases actually fed to the models, in canonical order.
    pub fn effective_phases(&self) -> Vec<Phase> {
        match self.aug {
            AugConfig::SinglePhaseSingleSlice => vec![self.single_phase],
            AugConfig::ThreePhasePkcp => match &self.three_phases {
                Some(t) => canonical_phases(t),
                None => {
                    use rand::seq::IndexedRandom;
                    let pool = canonical_phases(&self.phases);
                    let seed = self.seeds.first().copied().unwrap_or(0);
                    let picked: Vec<Phase> = pool
                        .choose_multiple(&mut rng::stream(seed, &[0x3F]), 3)
                        .copied()
                        .collect();
                    canonical_phases(&picked)
                }
            },
            _ => canonical_phases(&self.phases),
        }
    }

    /// Copy with phase lists in canonical order.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.phases = canonical_phases(&c.phases);
        c.three_phases = c.three_phases.map(|t| canonical_phases(&t));
        c
    }

    /// SHA-256 of the normalized config's JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(&self.normalized()).map_err(|e| config_err(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

/// Reads a TOML config; relative paths inside resolve against its directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut c: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phantom_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig {
                phantom: Some(PhantomSpec::default()),
                ..DataConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = phantom_config();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_seeds_rejected() {
        let c = ExperimentConfig {
            seeds: vec![],
            ..phantom_config()
        };
        assert!(c.validate().unwrap_err().to_string().contains("seeds"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("nmae = \"x\"").is_err());
        assert!(ExperimentConfig::from_toml("[hyperparams]\nlr = 0.1").is_err());
    }

    #[test]
    fn hash_ignores_order_and_defaults_but_not_values() {
        let a = ExperimentConfig::from_toml(
            "name = \"e\"\nphases = [\"DP\", \"AP\"]\n[data]\nphantom = {}\n",
        )
        .unwrap();
        let b = ExperimentConfig::from_toml(
            "phases = [\"AP\", \"DP\"]\nname = \"e\"\nseeds = [0]\n[data]\ntrain_fraction = 0.7\n[data.phantom]\nseed = 0\n",
        )
        .unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = b.clone();
        c.hyperparams.patience += 1;
        assert_ne!(c.hash().unwrap(), b.hash().unwrap());
        let mut d = b.clone();
        d.seeds = vec![1];
        assert_ne!(d.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn invalid_combinations() {
        let c = ExperimentConfig {
            aug: AugConfig::ThreePhasePkcp,
            phases: vec![Phase::Ap, Phase::Dp],
            ..phantom_config()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            task: Task::DetectionEval,
            ..phantom_config()
        };
        assert!(c.validate().is_err());
        let mut c = phantom_config();
        c.data.manifest = Some("m.json".into());
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            name: "a/b".into(),
            ..phantom_config()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn three_phase_subset_is_stable() {
        let c = ExperimentConfig {
            aug: AugConfig::ThreePhasePkcp,
            seeds: vec![5, 6],
            ..phantom_config()
        };
        let p = c.effective_phases();
        assert_eq!(p.len(), 3);
        assert_eq!(p, c.effective_phases());
        assert_eq!(p, canonical_phases(&p));
    }
}
