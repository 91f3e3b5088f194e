//! Config-file schemas. Everything that affects results lives in a TOML
//! file (hashable for reproducibility); command-line flags only carry paths
//! and switches.

use std::path::{Path, PathBuf};

use crate::data::{StyleParams, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::SelectionRule;
use crate::training::{TrainConfig, TrainMode};

/// `generate` config file.
///
/// ```toml
/// [corpus]
/// n_images = 200
/// resolution = 64
/// master_seed = 7
/// out_dir = "corpus"
///
/// [split]
/// train = 0.7
/// val = 0.15
/// test = 0.15
///
/// [[style]]
/// margin = 4
///
/// [[style]]
/// margin = -4
/// ```
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(rename = "style")]
    pub styles: Vec<StyleParams>,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub n_images: usize,
    pub resolution: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_coverage")]
    pub coverage_p: f64,
    /// Optional per-annotator coverage (same length as the style list).
    #[serde(default)]
    pub per_style_coverage: Option<Vec<f64>>,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

fn default_coverage() -> f64 {
    1.0
}

fn default_noise_sigma() -> f64 {
    0.05
}

impl GenerateSpec {
    pub fn to_synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_images: self.corpus.n_images,
            resolution: self.corpus.resolution,
            master_seed: self.corpus.master_seed,
            styles: self.styles.clone(),
            coverage_p: self.corpus.coverage_p,
            per_style_coverage: self.corpus.per_style_coverage.clone(),
            split_fractions: [self.split.train, self.split.val, self.split.test],
            noise_sigma: self.corpus.noise_sigma,
        }
    }
}

/// `train` config file.
///
/// ```toml
/// [run]
/// mode = "styleseg"       # styleseg | mhp | naive
/// seed = 11
/// corpus_dir = "corpus"
/// checkpoint_dir = "runs/styleseg"
///
/// [model]
/// m = 2
/// resolution = 64
/// base_width = 12
/// n_stages = 3
///
/// [optim]
/// epochs = 30
/// batch_size = 8
/// learning_rate = 1e-3
/// ```
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub run: RunSection,
    pub model: ModelSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: TrainMode,
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub m: usize,
    pub resolution: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    #[serde(default = "default_n_stages")]
    pub n_stages: usize,
    #[serde(default = "default_base_width")]
    pub cls_base_width: usize,
    #[serde(default = "default_n_stages")]
    pub cls_n_stages: usize,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Generic warm-up epochs before the mode objective (multi-head modes
    /// starting from random weights need this in place of a pretrained
    /// trunk).
    #[serde(default)]
    pub warmup_epochs: usize,
}

impl Default for OptimSection {
    /// Desk-scale recipe; the paper-scale preset ships as a config file.
    fn default() -> Self {
        OptimSection {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_weights")]
    pub weights: [f64; 3],
    #[serde(default = "default_smooth")]
    pub smooth: f64,
    #[serde(default = "default_mhp_eps")]
    pub mhp_eps: f64,
    #[serde(default)]
    pub selection: SelectionRule,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            weights: default_weights(),
            smooth: default_smooth(),
            mhp_eps: default_mhp_eps(),
            selection: SelectionRule::default(),
        }
    }
}

fn default_base_width() -> usize {
    12
}

fn default_n_stages() -> usize {
    3
}

fn default_weights() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_smooth() -> f64 {
    1.0
}

fn default_mhp_eps() -> f64 {
    0.05
}

impl TrainSpec {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.run.mode,
            m: self.model.m,
            epochs: self.optim.epochs,
            batch_size: self.optim.batch_size,
            learning_rate: self.optim.learning_rate,
            warmup_epochs: self.optim.warmup_epochs,
            seed: self.run.seed,
            loss_weights: self.loss.weights,
            mhp_eps: self.loss.mhp_eps,
            smooth: self.loss.smooth,
            selection: self.loss.selection,
            resolution: self.model.resolution,
            base_width: self.model.base_width,
            n_stages: self.model.n_stages,
            cls_base_width: self.model.cls_base_width,
            cls_n_stages: self.model.cls_n_stages,
            checkpoint_dir: self.run.checkpoint_dir.clone(),
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))
}

/// Loads and parses a generate spec; returns the raw text for hashing.
pub fn load_generate_spec(path: &Path) -> Result<(GenerateSpec, String)> {
    let text = read_config(path)?;
    let spec: GenerateSpec = toml::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    Ok((spec, text))
}

/// Loads and parses a train spec; returns the raw text for hashing.
pub fn load_train_spec(path: &Path) -> Result<(TrainSpec, String)> {
    let text = read_config(path)?;
    let spec: TrainSpec = toml::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    Ok((spec, text))
}
