//! Run configurations: TOML file sections, overridden by command-line flags.

use std::path::{Path, PathBuf};

use dib_core::data::{make_distractor_dataset, make_prototype_dataset, Dataset};
use dib_core::decomposition::LabelingMode;
use dib_core::dib::{BaselineRegularizer, DibConfig, Strategy};
use dib_core::models::{EncoderConfig, FamilySpec};
use dib_core::optim::OptimConfig;
use dib_core::probes::{ProbeSettings, ZooSpec};
use dib_core::DibError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub downstream: DownstreamConfig,
    pub probe: ProbeConfig,
    pub oracle: OracleConfig,
    pub sweep: SweepConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, DibError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| DibError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file to load; a synthetic dataset is generated when absent.
    pub path: Option<PathBuf>,
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub noise: f64,
    /// Number of distractor classes; 0 disables the distractor block.
    pub distractor_classes: usize,
    pub strength: f64,
    /// Generation seed; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, n_per_class: 200, n_classes: 2, dim: 16, noise: 0.3, distractor_classes: 0, strength: 1.0, seed: None }
    }
}

impl DataConfig {
    pub fn dataset(&self, run_seed: u64) -> Result<Dataset, DibError> {
        if let Some(path) = &self.path {
            return Dataset::load_csv(path).map_err(|e| match e {
                DibError::Io(io) => DibError::Config(format!("{}: {io}", path.display())),
                other => other,
            });
        }
        let seed = self.seed.unwrap_or(run_seed);
        let base = make_prototype_dataset(self.n_per_class, self.n_classes, self.dim, self.noise, seed)?;
        if self.distractor_classes == 0 {
            Ok(base)
        } else {
            make_distractor_dataset(&base, self.distractor_classes, self.strength, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub k: usize,
    pub strategy: Strategy,
    pub encoder_hidden: Vec<usize>,
    pub z_dim: usize,
    pub head_hidden: Vec<usize>,
    pub head_lr_multiplier: f64,
    pub labeling: LabelingMode,
    pub shared_heads: bool,
    pub baseline: Option<BaselineRegularizer>,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            k: 4,
            strategy: Strategy::JointReversal,
            encoder_hidden: vec![64, 64, 64],
            z_dim: 32,
            head_hidden: vec![64],
            head_lr_multiplier: 50.0,
            labeling: LabelingMode::BaseExpansion,
            shared_heads: true,
            baseline: None,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        let mut e = EncoderConfig::new(input_dim, self.z_dim);
        e.hidden_widths = self.encoder_hidden.clone();
        e
    }

    pub fn dib_config(&self, n_classes: usize) -> DibConfig {
        let mut d = DibConfig::new(self.beta, self.z_dim, n_classes);
        d.k_heads = self.k;
        d.strategy = self.strategy;
        d.head_spec = FamilySpec::mlp(self.z_dim, &self.head_hidden, n_classes);
        d.head_lr_multiplier = self.head_lr_multiplier;
        d.labeling = self.labeling;
        d.share_heads_across_classes = self.shared_heads;
        d.baseline = self.baseline;
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErmModes {
    Avg,
    Worst,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Labels,
    Distractor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub checkpoint: Option<PathBuf>,
    pub mode: ErmModes,
    pub gammas: Vec<f64>,
    /// Hidden widths of the downstream MLP family.
    pub family_hidden: Vec<usize>,
    pub targets: Targets,
    pub optim: OptimConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            mode: ErmModes::Both,
            gammas: vec![0.1],
            family_hidden: vec![128],
            targets: Targets::Labels,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Directory of `*.ckpt` models; a fresh zoo is trained when absent.
    pub zoo: Option<PathBuf>,
    pub zoo_spec: ZooSpec,
    pub settings: ProbeSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Theorem1,
    Prop2,
    Pac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Problem file; 8 inputs, 2 labels and 4 symbols when absent.
    pub problem: Option<PathBuf>,
    pub checks: Vec<Check>,
    /// Predicted label of each symbol for Z*; round robin when absent.
    pub predictor: Option<Vec<usize>>,
    pub resolution: f64,
    pub small_resolution: f64,
    pub beta: f64,
    pub m: usize,
    pub draws: usize,
    pub delta: f64,
    pub k: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            problem: None,
            checks: vec![Check::Theorem1, Check::Prop2, Check::Pac],
            predictor: None,
            resolution: 0.05,
            small_resolution: 0.25,
            beta: 1.0,
            m: 16,
            draws: 200,
            delta: 0.1,
            k: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub seeds: usize,
    /// Hidden width of each one-layer downstream family.
    pub families: Vec<usize>,
    pub gamma: f64,
    pub downstream_optim: OptimConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { betas: vec![0.0, 0.1, 1.0, 10.0, 100.0], seeds: 3, families: vec![128], gamma: 0.1, downstream_optim: OptimConfig::default() }
    }
}

/// First 12 hex digits of the SHA-256 of a value's JSON rendering.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String, DibError> {
    let json = serde_json::to_string(value)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

/// `<out>/<command>-<hash>-s<seed>`, created if missing.
pub fn run_dir<T: Serialize>(out: &Path, command: &str, config: &T, seed: u64) -> Result<(PathBuf, String), DibError> {
    let hash = config_hash(&(command, config))?;
    let dir = out.join(format!("{command}-{hash}-s{seed}"));
    std::fs::create_dir_all(&dir)?;
    Ok((dir, hash))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), DibError> {
    let text = toml::to_string(value).map_err(|e| DibError::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
