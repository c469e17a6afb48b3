//! Experiment configuration: one TOML document fully describes a run.
//! Unknown keys are rejected; environment variables may override paths only.

use crate::CliError;
use rsprompt_data::ALLOWED_SHOTS;
use rsprompt_methods::Method;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// What a config `methods` entry resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Prompt(Method),
    LinearProbe,
    Zeroshot,
}

impl MethodKind {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "linear_probe" => Ok(MethodKind::LinearProbe),
            "zeroshot" => Ok(MethodKind::Zeroshot),
            other => Method::parse(other)
                .map(|m| match m {
                    Method::Zeroshot => MethodKind::Zeroshot,
                    m => MethodKind::Prompt(m),
                })
                .map_err(|_| CliError::Config(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Prompt(m) => m.name(),
            MethodKind::LinearProbe => "linear_probe",
            MethodKind::Zeroshot => "zeroshot",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub paths: PathsSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub probe: ProbeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_shots() -> Vec<usize> {
    ALLOWED_SHOTS.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data_root: PathBuf,
    pub manifest_root: PathBuf,
    /// Weight archive path, or `micro:<seed>` for the deterministic test
    /// backbone.
    pub backbone_archive: String,
    /// Metadata document beside the archive (ignored for `micro:`).
    #[serde(default)]
    pub backbone_metadata: Option<PathBuf>,
    pub output_root: PathBuf,
    /// Diversity-template asset; the embedded list is used when unset.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-method defaults apply when unset.
    pub learning_rate: Option<f64>,
    pub warmup_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 50,
            batch_size: 4,
            learning_rate: None,
            warmup_lr: 1e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSection {
    /// Context length override (per-method defaults when unset).
    pub context_len: Option<usize>,
    pub prompt_depth: Option<usize>,
    pub vision_prompt_len: Option<usize>,
    pub init_template: Option<String>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub n_templates: Option<usize>,
    /// Class-token placement; only the end-position design exists.
    pub class_token_position: Option<rsprompt_methods::ClassTokenPosition>,
    /// Meta-network bottleneck divisor (hidden = d_joint / divisor).
    pub meta_bottleneck_div: Option<usize>,
    /// Std-dev of random prompt initialization.
    pub init_sigma: Option<f64>,
    /// Gaussian snapshot weighting: mean epoch (mid-training when unset).
    pub ensemble_mean_epoch: Option<f64>,
    /// Gaussian snapshot weighting: sigma in epochs (epochs/3.3 when unset).
    pub ensemble_sigma: Option<f64>,
    pub zeroshot_template: String,
    /// Evaluate the snapshot-ensembled state when the method supports it.
    pub evaluate_ensembled: bool,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            context_len: None,
            prompt_depth: None,
            vision_prompt_len: None,
            init_template: None,
            lambda1: None,
            lambda2: None,
            n_templates: None,
            class_token_position: None,
            meta_bottleneck_div: None,
            init_sigma: None,
            ensemble_mean_epoch: None,
            ensemble_sigma: None,
            zeroshot_template: "a satellite photo of {}".to_string(),
            evaluate_ensembled: true,
        }
    }
}

/// Linear-probe knobs (the published recipe leaves these open; the defaults
/// are the recorded choices).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub refine_steps: usize,
    /// Unit-normalize frozen features before fitting.
    pub normalize_features: bool,
    /// Per-class validation draw cap (min(k, cap) examples per class).
    pub val_per_class_cap: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            grid_lo: 1e-4,
            grid_hi: 1e4,
            grid_points: 10,
            refine_steps: 8,
            normalize_features: true,
            val_per_class_cap: 4,
        }
    }
}

impl ExperimentConfig {
    /// Parse, apply environment path overrides, and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Environment variables override paths only, never hyper-parameters.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(v) = std::env::var("RSPROMPT_DATA_ROOT") {
            self.paths.data_root = v.into();
        }
        if let Ok(v) = std::env::var("RSPROMPT_MANIFEST_ROOT") {
            self.paths.manifest_root = v.into();
        }
        if let Ok(v) = std::env::var("RSPROMPT_WEIGHTS") {
            self.paths.backbone_archive = v;
        }
        if let Ok(v) = std::env::var("RSPROMPT_WEIGHTS_META") {
            self.paths.backbone_metadata = Some(v.into());
        }
        if let Ok(v) = std::env::var("RSPROMPT_OUT") {
            self.paths.output_root = v.into();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.experiment.datasets.is_empty() {
            return Err(CliError::Config("experiment.datasets must not be empty".into()));
        }
        if self.experiment.methods.is_empty() {
            return Err(CliError::Config("experiment.methods must not be empty".into()));
        }
        for m in &self.experiment.methods {
            MethodKind::parse(m)
                .map_err(|_| CliError::Config(format!("experiment.methods: unknown method {m:?}")))?;
        }
        for &s in &self.experiment.shots {
            if !ALLOWED_SHOTS.contains(&s) {
                return Err(CliError::Config(format!(
                    "experiment.shots: {s} is not in the allowed set {ALLOWED_SHOTS:?}"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &seed in &self.experiment.seeds {
            if !seen.insert(seed) {
                return Err(CliError::Config(format!(
                    "experiment.seeds: duplicate seed {seed}"
                )));
            }
        }
        if self.experiment.seeds.is_empty() {
            return Err(CliError::Config("experiment.seeds must not be empty".into()));
        }
        if self.train.epochs == 0 {
            return Err(CliError::Config("train.epochs must be at least 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be positive".into()));
        }
        if let Some(lr) = self.train.learning_rate {
            if lr <= 0.0 {
                return Err(CliError::Config("train.learning_rate must be positive".into()));
            }
        }
        if !self.method.zeroshot_template.contains("{}") {
            return Err(CliError::Config(
                "method.zeroshot_template needs a {} class slot".into(),
            ));
        }
        if let (Some(l1), Some(l2)) = (self.method.lambda1, self.method.lambda2) {
            if l1 < 0.0 || l2 < 0.0 {
                return Err(CliError::Config("agreement weights must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Stable content hash of the resolved configuration (canonical JSON,
    /// sorted keys).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        rsprompt_backbone::archive::digest_bytes(value.to_string().as_bytes())
    }

    /// Resolved method configuration: defaults for `method` with overrides.
    pub fn method_config(&self, method: Method) -> rsprompt_methods::MethodConfig {
        let mut cfg = rsprompt_methods::MethodConfig::defaults_for(method);
        if let Some(v) = self.method.context_len {
            cfg.context_len = v;
        }
        if let Some(v) = self.method.prompt_depth {
            cfg.prompt_depth = v;
        }
        if let Some(v) = self.method.vision_prompt_len {
            cfg.vision_prompt_len = v;
        }
        if let Some(v) = &self.method.init_template {
            cfg.init_template = v.clone();
        }
        if let Some(v) = self.method.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.method.lambda2 {
            cfg.lambda2 = v;
        }
        if let Some(v) = self.method.n_templates {
            cfg.n_templates = v;
        }
        if let Some(v) = self.method.class_token_position {
            cfg.class_token_position = v;
        }
        if let Some(v) = self.method.meta_bottleneck_div {
            cfg.meta_bottleneck_div = v;
        }
        if let Some(v) = self.method.init_sigma {
            cfg.init_sigma = v;
        }
        cfg.ensemble.mean_epoch = self.method.ensemble_mean_epoch;
        cfg.ensemble.sigma = self.method.ensemble_sigma;
        cfg
    }

    /// Resolved probe search configuration.
    pub fn probe_search_config(&self) -> rsprompt_probe::SearchConfig {
        rsprompt_probe::SearchConfig {
            grid_lo: self.probe.grid_lo,
            grid_hi: self.probe.grid_hi,
            grid_points: self.probe.grid_points,
            refine_steps: self.probe.refine_steps,
        }
    }

    /// Resolved training configuration for `method` and `seed`.
    pub fn train_config(&self, method: Method, seed: u64) -> rsprompt_train::TrainConfig {
        let mut cfg = rsprompt_train::TrainConfig::defaults_for(method);
        cfg.epochs = self.train.epochs;
        cfg.batch_size = self.train.batch_size;
        if let Some(lr) = self.train.learning_rate {
            cfg.learning_rate = lr;
        }
        cfg.warmup_lr = self.train.warmup_lr;
        cfg.momentum = self.train.momentum;
        cfg.weight_decay = self.train.weight_decay;
        cfg.seed = seed;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
[experiment]
datasets = ["eurosat"]
methods = ["coop"]
shots = [1, 16]
seeds = [1, 2, 3]

[paths]
data_root = "data"
manifest_root = "manifests"
backbone_archive = "micro:7"
output_root = "out"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_published_defaults() {
        let cfg: ExperimentConfig = toml::from_str(&minimal_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.train.batch_size, 4);
        let coop = cfg.train_config(Method::Coop, 1);
        assert_eq!(coop.learning_rate, 0.002);
        let maple = cfg.train_config(Method::Maple, 1);
        assert_eq!(maple.learning_rate, 0.0035);
        let src = cfg.train_config(Method::Promptsrc, 1);
        assert_eq!(src.learning_rate, 0.0025);
        let mc = cfg.method_config(Method::Promptsrc);
        assert_eq!((mc.lambda1, mc.lambda2), (10.0, 25.0));
        assert_eq!(mc.n_templates, 60);
    }

    #[test]
    fn off_protocol_shot_count_rejected() {
        let text = minimal_toml().replace("shots = [1, 16]", "shots = [3]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn duplicate_seed_rejected() {
        let text = minimal_toml().replace("seeds = [1, 2, 3]", "seeds = [1, 1]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = minimal_toml() + "\n[experiment2]\nfoo = 1\n";
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        let text = minimal_toml().replace("[paths]", "[paths]\nmystery_knob = 3\n");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn hash_stable_and_sensitive() {
        let a: ExperimentConfig = toml::from_str(&minimal_toml()).unwrap();
        let b: ExperimentConfig = toml::from_str(&minimal_toml()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c: ExperimentConfig =
            toml::from_str(&minimal_toml().replace("shots = [1, 16]", "shots = [16]")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
