//! Plain-text `key=value` run configuration. One assignment per line, `#`
//! starts a comment, unknown keys are rejected, and every run writes its
//! resolved configuration next to its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::synthdata::Background;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // data generation
    pub data_root: PathBuf,
    pub image_size: usize,
    pub frames_per_clip: usize,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub background: Background,
    // model
    pub base_width: usize,
    pub message_iterations: usize,
    pub rank_divisor: usize,
    pub readout_gated: bool,
    /// Feed the flow node a zero-flow visualization (motion-cue ablation).
    pub zero_flow: bool,
    // training
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rotation_degrees: f64,
    pub flip_probability: f64,
    // run
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: "data".into(),
            image_size: 64,
            frames_per_clip: 8,
            train_sequences: 200,
            val_sequences: 20,
            min_objects: 1,
            max_objects: 2,
            background: Background::StaticNoise,
            base_width: 16,
            message_iterations: 1,
            rank_divisor: 8,
            readout_gated: true,
            zero_flow: false,
            lr_encoder: 1e-3,
            lr_decoder: 1e-2,
            weight_decay: 1e-5,
            momentum: 0.9,
            batch_size: 4,
            epochs: 30,
            rotation_degrees: 10.0,
            flip_probability: 0.5,
            seed: 42,
            out_dir: "runs/default".into(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            macro_rules! set {
                ($field:ident, $ty:ty) => {
                    cfg.$field = value.parse::<$ty>().map_err(|_| bad())?
                };
            }
            match key {
                "data_root" => cfg.data_root = value.into(),
                "image_size" => set!(image_size, usize),
                "frames_per_clip" => set!(frames_per_clip, usize),
                "train_sequences" => set!(train_sequences, usize),
                "val_sequences" => set!(val_sequences, usize),
                "min_objects" => set!(min_objects, usize),
                "max_objects" => set!(max_objects, usize),
                "background" => {
                    cfg.background = Background::parse(value).ok_or_else(bad)?;
                }
                "base_width" => set!(base_width, usize),
                "message_iterations" => set!(message_iterations, usize),
                "rank_divisor" => set!(rank_divisor, usize),
                "readout_gated" => set!(readout_gated, bool),
                "zero_flow" => set!(zero_flow, bool),
                "lr_encoder" => set!(lr_encoder, f64),
                "lr_decoder" => set!(lr_decoder, f64),
                "weight_decay" => set!(weight_decay, f64),
                "momentum" => set!(momentum, f64),
                "batch_size" => set!(batch_size, usize),
                "epochs" => set!(epochs, usize),
                "rotation_degrees" => set!(rotation_degrees, f64),
                "flip_probability" => set!(flip_probability, f64),
                "seed" => set!(seed, u64),
                "out_dir" => cfg.out_dir = value.into(),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.image_size % 16 != 0 || self.image_size == 0 {
            return Err(ConfigError::Invalid(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self.frames_per_clip < 2 {
            return Err(ConfigError::Invalid("frames_per_clip must be >= 2".into()));
        }
        if self.train_sequences == 0 || self.val_sequences == 0 {
            return Err(ConfigError::Invalid("sequence counts must be positive".into()));
        }
        if self.train_sequences >= 1_000_000 {
            return Err(ConfigError::Invalid(
                "train_sequences must stay below the validation seed range".into(),
            ));
        }
        if self.min_objects < 1 || self.max_objects > 3 || self.min_objects > self.max_objects {
            return Err(ConfigError::Invalid(format!(
                "object count range {}..={} outside 1..=3",
                self.min_objects, self.max_objects
            )));
        }
        if self.base_width == 0 || self.message_iterations == 0 || self.rank_divisor == 0 {
            return Err(ConfigError::Invalid("model extents must be positive".into()));
        }
        if self.lr_encoder <= 0.0 || self.lr_decoder <= 0.0 {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ConfigError::Invalid("batch_size and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(ConfigError::Invalid("flip_probability outside [0,1]".into()));
        }
        if self.rotation_degrees < 0.0 {
            return Err(ConfigError::Invalid("rotation_degrees must be >= 0".into()));
        }
        Ok(())
    }

    /// The fully resolved configuration as config-file text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "data_root = {}", self.data_root.display());
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "frames_per_clip = {}", self.frames_per_clip);
        let _ = writeln!(s, "train_sequences = {}", self.train_sequences);
        let _ = writeln!(s, "val_sequences = {}", self.val_sequences);
        let _ = writeln!(s, "min_objects = {}", self.min_objects);
        let _ = writeln!(s, "max_objects = {}", self.max_objects);
        let _ = writeln!(s, "background = {}", self.background.name());
        let _ = writeln!(s, "base_width = {}", self.base_width);
        let _ = writeln!(s, "message_iterations = {}", self.message_iterations);
        let _ = writeln!(s, "rank_divisor = {}", self.rank_divisor);
        let _ = writeln!(s, "readout_gated = {}", self.readout_gated);
        let _ = writeln!(s, "zero_flow = {}", self.zero_flow);
        let _ = writeln!(s, "lr_encoder = {}", self.lr_encoder);
        let _ = writeln!(s, "lr_decoder = {}", self.lr_decoder);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "rotation_degrees = {}", self.rotation_degrees);
        let _ = writeln!(s, "flip_probability = {}", self.flip_probability);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }

    pub fn model_config(&self) -> crate::model::ModelConfig {
        crate::model::ModelConfig {
            base_width: self.base_width,
            message_iterations: self.message_iterations,
            rank_divisor: self.rank_divisor,
            readout_gated: self.readout_gated,
        }
    }

    pub fn train_config(&self) -> crate::train::TrainConfig {
        crate::train::TrainConfig {
            lr_encoder: self.lr_encoder,
            lr_decoder: self.lr_decoder,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            rotation_degrees: self.rotation_degrees,
            flip_probability: self.flip_probability,
        }
    }

    pub fn scene_template(&self) -> crate::synthdata::SceneConfig {
        crate::synthdata::SceneConfig {
            width: self.image_size,
            height: self.image_size,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            background: self.background,
            frames: self.frames_per_clip,
            ..crate::synthdata::SceneConfig::default()
        }
    }
}
