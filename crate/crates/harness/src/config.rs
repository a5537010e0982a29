//! Experiment configuration: a strict JSON schema with documented defaults.
//! Unknown keys and out-of-range values are rejected with the offending key
//! named in the error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedunlearn_core::data::{ForgetSpec, PartitionScheme, TriggerSpec};
use fedunlearn_core::fedsim::FederationConfig;
use fedunlearn_core::models::{Arch, ModelSpec};
use fedunlearn_core::unlearn::UnlearnMethod;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    784
}
fn default_per_class() -> usize {
    500
}
fn default_spread() -> f64 {
    0.15
}
fn default_test_per_class() -> usize {
    100
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            classes: default_classes(),
            dim: default_dim(),
            per_class: default_per_class(),
            spread: default_spread(),
            test_per_class: default_test_per_class(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "scheme", rename_all = "snake_case")]
pub enum PartitionSection {
    Iid,
    Dirichlet { alpha: f64 },
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection::Iid
    }
}

impl PartitionSection {
    pub fn scheme(&self) -> PartitionScheme {
        match self {
            PartitionSection::Iid => PartitionScheme::Iid,
            PartitionSection::Dirichlet { alpha } => PartitionScheme::Dirichlet { alpha: *alpha },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_arch")]
    pub arch: String,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_history_interval")]
    pub history_interval: usize,
    #[serde(default = "default_client_fraction")]
    pub client_fraction: f64,
}

fn default_arch() -> String {
    "mlp".to_string()
}
fn default_hidden() -> usize {
    64
}
fn default_clients() -> usize {
    10
}
fn default_rounds() -> usize {
    30
}
fn default_local_epochs() -> usize {
    3
}
fn default_lr() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    64
}
fn default_history_interval() -> usize {
    1
}
fn default_client_fraction() -> f64 {
    1.0
}

impl Default for FederationSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Flat feature indices forced by the trigger. Defaults to the top-left
    /// 2x2 block of a 28x28 image; indices beyond the feature dim are
    /// dropped at resolve time.
    #[serde(default = "default_trigger_pixels")]
    pub trigger_pixels: Vec<usize>,
    #[serde(default = "default_trigger_value")]
    pub trigger_value: f64,
    #[serde(default)]
    pub target_label: usize,
    #[serde(default = "default_poison_fraction")]
    pub poison_fraction: f64,
    #[serde(default = "default_watermark_size")]
    pub watermark_size: usize,
    #[serde(default = "default_watermark_replicas")]
    pub watermark_replicas: usize,
    #[serde(default = "default_marker_top_k")]
    pub marker_top_k: usize,
}

fn default_trigger_pixels() -> Vec<usize> {
    vec![0, 1, 28, 29]
}
fn default_trigger_value() -> f64 {
    1.0
}
fn default_poison_fraction() -> f64 {
    0.3
}
fn default_watermark_size() -> usize {
    64
}
fn default_watermark_replicas() -> usize {
    5
}
fn default_marker_top_k() -> usize {
    64
}

impl Default for AttackSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl AttackSection {
    /// Trigger with pixel indices clipped to the actual feature dim.
    pub fn trigger_for_dim(&self, dim: usize) -> TriggerSpec {
        let mut pixels: Vec<usize> = self
            .trigger_pixels
            .iter()
            .copied()
            .filter(|&i| i < dim)
            .collect();
        if pixels.is_empty() {
            pixels.push(0);
        }
        TriggerSpec {
            pixel_indices: pixels,
            trigger_value: self.trigger_value,
            target_label: self.target_label,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum ForgetSection {
    Client { client_id: usize },
    Class { label: usize },
    Samples { client_id: usize, indices: Vec<usize> },
}

impl Default for ForgetSection {
    fn default() -> Self {
        ForgetSection::Client { client_id: 0 }
    }
}

impl ForgetSection {
    pub fn to_spec(&self) -> ForgetSpec {
        match self {
            ForgetSection::Client { client_id } => ForgetSpec::Client(*client_id),
            ForgetSection::Class { label } => ForgetSpec::Class(*label),
            ForgetSection::Samples { client_id, indices } => ForgetSpec::Samples {
                client_id: *client_id,
                indices: indices.clone(),
            },
        }
    }
}

fn default_methods() -> Vec<String> {
    vec![
        "retrain".into(),
        "fine_tune".into(),
        "c2t".into(),
        "federaser".into(),
        "pga".into(),
    ]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub forget: ForgetSection,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let cfg_err = |key: &str, msg: &str| Err(CliError::Config(format!("{key}: {msg}")));
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                spread,
                test_per_class,
            } => {
                if *classes < 2 {
                    return cfg_err("dataset.classes", "must be at least 2");
                }
                if dim < classes {
                    return cfg_err("dataset.dim", "must be at least dataset.classes");
                }
                if *per_class == 0 {
                    return cfg_err("dataset.per_class", "must be positive");
                }
                if *spread < 0.0 {
                    return cfg_err("dataset.spread", "must be non-negative");
                }
                if *test_per_class == 0 {
                    return cfg_err("dataset.test_per_class", "must be positive");
                }
            }
            DatasetSource::Idx { .. } => {}
        }
        if let PartitionSection::Dirichlet { alpha } = self.partition {
            if alpha <= 0.0 {
                return cfg_err("partition.alpha", "must be positive");
            }
        }
        let f = &self.federation;
        match f.arch.as_str() {
            "mlp" | "logreg" => {}
            other => {
                return cfg_err("federation.arch", &format!("unknown arch {other:?}"));
            }
        }
        if f.arch == "mlp" && f.hidden == 0 {
            return cfg_err("federation.hidden", "must be positive");
        }
        if f.clients < 2 {
            return cfg_err("federation.clients", "must be at least 2");
        }
        if f.local_epochs == 0 {
            return cfg_err("federation.local_epochs", "must be at least 1");
        }
        if f.lr <= 0.0 {
            return cfg_err("federation.lr", "must be positive");
        }
        if f.batch_size == 0 {
            return cfg_err("federation.batch_size", "must be positive");
        }
        if f.history_interval == 0 {
            return cfg_err("federation.history_interval", "must be at least 1");
        }
        if !(f.client_fraction > 0.0 && f.client_fraction <= 1.0) {
            return cfg_err("federation.client_fraction", "must lie in (0,1]");
        }
        let a = &self.attack;
        if !(0.0..=1.0).contains(&a.trigger_value) {
            return cfg_err("attack.trigger_value", "must lie in [0,1]");
        }
        if !(a.poison_fraction > 0.0 && a.poison_fraction <= 1.0) {
            return cfg_err("attack.poison_fraction", "must lie in (0,1]");
        }
        if a.watermark_size == 0 {
            return cfg_err("attack.watermark_size", "must be positive");
        }
        if a.watermark_replicas == 0 {
            return cfg_err("attack.watermark_replicas", "must be positive");
        }
        if a.marker_top_k == 0 {
            return cfg_err("attack.marker_top_k", "must be positive");
        }
        if self.methods.is_empty() {
            return cfg_err("methods", "at least one method is required");
        }
        for m in &self.methods {
            parse_method(m)?;
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Vec<UnlearnMethod> {
        self.methods
            .iter()
            .map(|m| parse_method(m).expect("validated"))
            .collect()
    }

    /// The model spec once the dataset dims are known.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> CliResult<ModelSpec> {
        let arch = match self.federation.arch.as_str() {
            "logreg" => Arch::LogReg,
            _ => Arch::Mlp {
                hidden: self.federation.hidden,
            },
        };
        ModelSpec::new(arch, input_dim, num_classes).map_err(CliError::from)
    }

    pub fn federation_config(&self, model: ModelSpec) -> FederationConfig {
        FederationConfig {
            model,
            rounds: self.federation.rounds,
            local_epochs: self.federation.local_epochs,
            lr: self.federation.lr,
            batch_size: self.federation.batch_size,
            seed: self.seed,
            history_interval: self.federation.history_interval,
            client_fraction: self.federation.client_fraction,
        }
    }

    /// Stable hash of the full configuration, echoed into reports.
    pub fn config_hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        let words: Vec<u64> = text.as_bytes().chunks(8).map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            u64::from_le_bytes(buf)
        }).collect();
        fedunlearn_core::rng::mix(&words)
    }
}

pub fn parse_method(name: &str) -> CliResult<UnlearnMethod> {
    match name {
        "retrain" => Ok(UnlearnMethod::Retrain),
        "fine_tune" => Ok(UnlearnMethod::FineTune),
        "c2t" => Ok(UnlearnMethod::ContinueToTrain),
        "federaser" => Ok(UnlearnMethod::FedEraser),
        "pga" => Ok(UnlearnMethod::Pga),
        other => Err(CliError::Config(format!(
            "methods: unknown method {other:?} (expected retrain, fine_tune, c2t, federaser, pga)"
        ))),
    }
}

pub fn parse_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
