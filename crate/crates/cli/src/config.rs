//! Experiment configuration file, `--set` overrides and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikereplay_core::data::SyntheticSpec;
use spikereplay_core::network::{
    ConvPadding, LayerSpec, LossKind, NetworkSpec, NotationOptions, DESK_MNIST_NOTATION,
    MNIST_NOTATION,
};
use spikereplay_core::optim::OptimizerConfig;
use spikereplay_core::{LifConfig, ReplayConfig, StrategyKind};

/// Invalid configuration; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfigFile {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub strategy: StrategySection,
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Mnist,
    #[default]
    Synthetic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    /// Directory with the four MNIST IDX files; falls back to `$MNIST_DIR`, then `data/mnist`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Samples kept per class; everything when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    pub classes_per_task: usize,
    /// Sequence length T.
    pub steps: usize,
    /// B_current.
    pub batch_size: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            dir: None,
            train_per_class: None,
            test_per_class: None,
            classes_per_task: 2,
            steps: 4,
            batch_size: 16,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Preset name (`mnist`, `mnist_desk`) or layer notation such as
    /// `{8C3-BN-MP}*2||DP-FC64-DP-Voting-AP`. Ignored when `layers` is given.
    pub architecture: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<ConvPadding>,
    pub vote_group: usize,
    pub dropout: f64,
    pub loss: LossKind,
    /// Explicit layer list; requires `split`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
    pub lif: LifConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: "mnist_desk".into(),
            padding: None,
            vote_group: 10,
            dropout: 0.5,
            loss: LossKind::default(),
            layers: None,
            split: None,
            lif: LifConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub kind: StrategyKind,
    /// Buffer capacity K.
    pub capacity: usize,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub pretrain_epochs: usize,
    pub pretrain_fraction: f64,
    pub pretrain_batch: usize,
    pub sleep_epochs: usize,
    /// B_replay, also the sleep mini-batch size.
    pub batch_replay: usize,
    pub optimizer: OptimizerKind,
    pub lr_pretrain: f64,
    pub lr_continual: f64,
    pub lr_sleep: f64,
    pub eval_batch: usize,
}

impl Default for StrategySection {
    fn default() -> Self {
        let d = ReplayConfig::default();
        Self {
            kind: StrategyKind::Seslr,
            capacity: d.capacity,
            lambda: d.lambda,
            noise_sigma: d.noise_sigma,
            pretrain_epochs: d.pretrain_epochs,
            pretrain_fraction: d.pretrain_fraction,
            pretrain_batch: d.pretrain_batch,
            sleep_epochs: d.sleep_epochs,
            batch_replay: d.batch_replay,
            optimizer: OptimizerKind::Adam,
            lr_pretrain: d.pretrain_optimizer.lr(),
            lr_continual: d.continual_optimizer.lr(),
            lr_sleep: d.sleep_optimizer.lr(),
            eval_batch: d.eval_batch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `report.txt`, flat key-value text.
    Text,
    /// `report.json`.
    Json,
    /// `confusion.csv`.
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Results root; falls back to `$SPIKEREPLAY_OUTPUT`, then `results`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    /// Write `buffer.slrb` for latent strategies.
    pub save_buffer: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Text, Format::Json, Format::Csv],
            save_buffer: true,
        }
    }
}

pub const OUTPUT_ENV: &str = "SPIKEREPLAY_OUTPUT";
pub const MNIST_ENV: &str = "MNIST_DIR";

/// A validated configuration with everything derived from it.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub file: ExperimentConfigFile,
    pub replay: ReplayConfig,
    pub spec: NetworkSpec,
    /// Sorted dotted `key = value` pairs of the full configuration.
    pub echo: Vec<(String, String)>,
}

impl Resolved {
    pub fn output_root(&self) -> PathBuf {
        self.file
            .output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn mnist_dir(&self) -> PathBuf {
        self.file
            .dataset
            .dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    pub fn with_seed(&self, seed: u64) -> anyhow::Result<Resolved> {
        let mut file = self.file.clone();
        file.seed = seed;
        resolve(file)
    }
}

/// Reads `path`, applies `--set` overrides and validates everything.
pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Resolved> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, &path.display().to_string(), overrides)
}

pub fn parse(text: &str, origin: &str, overrides: &[String]) -> anyhow::Result<Resolved> {
    // Typed parse first so that errors carry line and column.
    let file: ExperimentConfigFile =
        toml::from_str(text).map_err(|e| invalid(format!("{origin}: {e}")))?;
    if overrides.is_empty() {
        return resolve(file);
    }
    let mut value: toml::Value =
        toml::Value::try_from(&file).map_err(|e| invalid(e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let file: ExperimentConfigFile = value
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("after --set overrides: {}", e.message())))?;
    resolve(file)
}

/// Applies one `dotted.key=value` override. The value is read as a TOML value
/// and taken as a plain string if that fails.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("override key `{key}` is malformed")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            invalid(format!(
                "override `{key}`: `{}` is not a table",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last key part")
}

fn resolve(file: ExperimentConfigFile) -> anyhow::Result<Resolved> {
    let s = &file.strategy;
    let d = &file.dataset;
    let opt = |lr: f64| match s.optimizer {
        OptimizerKind::Sgd => OptimizerConfig::Sgd { lr },
        OptimizerKind::Adam => OptimizerConfig::adam(lr),
    };
    let replay = ReplayConfig {
        pretrain_epochs: s.pretrain_epochs,
        pretrain_fraction: s.pretrain_fraction,
        pretrain_batch: s.pretrain_batch,
        pretrain_optimizer: opt(s.lr_pretrain),
        lambda: s.lambda,
        batch_current: d.batch_size,
        batch_replay: s.batch_replay,
        capacity: s.capacity,
        continual_optimizer: opt(s.lr_continual),
        sleep_epochs: s.sleep_epochs,
        noise_sigma: s.noise_sigma,
        sleep_optimizer: opt(s.lr_sleep),
        steps: d.steps,
        eval_batch: s.eval_batch,
        seed: file.seed,
    };
    replay
        .validate()
        .map_err(|e| invalid(format!("strategy: {e}")))?;
    if d.classes_per_task == 0 {
        return Err(invalid("dataset.classes_per_task must be positive"));
    }
    if d.train_per_class == Some(0) || d.test_per_class == Some(0) {
        return Err(invalid("dataset per-class limits must be positive"));
    }
    let (classes, input_shape) = match d.source {
        DataSource::Mnist => (10, vec![1, 28, 28]),
        DataSource::Synthetic => (d.synthetic.class_count, d.synthetic.shape.clone()),
    };
    if classes % d.classes_per_task != 0 {
        return Err(invalid(format!(
            "{classes} classes cannot be split into tasks of {}",
            d.classes_per_task
        )));
    }
    file.model
        .lif
        .validate()
        .map_err(|e| invalid(format!("model.lif: {e}")))?;
    let spec = build_spec(&file.model, &input_shape, classes)
        .map_err(|e| invalid(format!("model: {e}")))?;
    let value = toml::Value::try_from(&file).map_err(|e| invalid(e.to_string()))?;
    let mut echo = Vec::new();
    flatten("", &value, &mut echo);
    echo.sort();
    Ok(Resolved {
        file,
        replay,
        spec,
        echo,
    })
}

fn build_spec(
    m: &ModelSection,
    input_shape: &[usize],
    classes: usize,
) -> spikereplay_core::Result<NetworkSpec> {
    let mut spec = if let Some(layers) = &m.layers {
        let split = m
            .split
            .ok_or_else(|| spikereplay_core::Error::Config("`layers` needs `split`".into()))?;
        let spec = NetworkSpec {
            input_shape: input_shape.to_vec(),
            num_classes: classes,
            layers: layers.clone(),
            split,
            lif: m.lif,
            loss: m.loss,
        };
        spec.validate()?;
        spec
    } else {
        let (notation, padding) = match m.architecture.as_str() {
            "mnist" => (MNIST_NOTATION, ConvPadding::Same),
            "mnist_desk" => (DESK_MNIST_NOTATION, ConvPadding::Valid),
            other => (other, ConvPadding::Same),
        };
        let opts = NotationOptions {
            vote_group: m.vote_group,
            dropout: m.dropout,
            conv_padding: m.padding.unwrap_or(padding),
        };
        NetworkSpec::from_notation(notation, input_shape, classes, m.lif, opts)?
    };
    spec.loss = m.loss;
    Ok(spec)
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
