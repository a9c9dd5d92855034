//! End-to-end training: run configuration, the optimization loop, and
//! checkpointing.

pub mod checkpoint;
pub mod eval;
mod trainer;

pub use checkpoint::CheckpointError;
pub use eval::{sweep_point, EvalReport, SweepRow};
pub use trainer::{train_loop, RunSummary, StepMetrics, Trainer};

use crate::image::ImageError;
use crate::metrics::MetricError;
use crate::model::{DecoderInput, ModelConfig, ModelError};
use crate::noise::{NoiseError, NoisePool};
use crate::tensor::TensorError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error at {file}:{line}: {msg}")]
    Config {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    BadConfig(String),
    #[error(
        "non-finite {component} loss at step {step}{}",
        last_checkpoint.as_ref().map(|p| format!("; last good checkpoint: {}", p.display())).unwrap_or_default()
    )]
    NonFinite {
        component: &'static str,
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Full run configuration. Serializes to a canonical `key = value` text
/// block that parses back to an identical value.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub image_size: usize,
    pub message_len: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub lambda_encoder: f64,
    pub lambda_decoder: f64,
    pub lambda_adversarial: f64,
    pub lambda_denoiser: f64,
    pub noise_pool: NoisePool,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub base_channels: usize,
    pub se_reduction: usize,
    pub use_se: bool,
    pub use_denoiser: bool,
    pub decoder_input: DecoderInput,
    pub holdout_fraction: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_grad_norm: f64,
    /// Messages per held-out image in the end-of-run evaluation.
    pub eval_messages: usize,
}

pub const DEFAULT_NOISE_POOL: &str = "dropout:0.3,blur:2.0,jpeg_sim:50,resize:0.8,crop:0.035";

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            message_len: 30,
            batch_size: 16,
            steps: 1000,
            lr: 1e-3,
            lambda_encoder: 0.7,
            lambda_decoder: 0.1,
            lambda_adversarial: 1e-3,
            lambda_denoiser: 1.5,
            noise_pool: NoisePool::parse(DEFAULT_NOISE_POOL).expect("default pool parses"),
            seed: 1,
            checkpoint_interval: 500,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            base_channels: 64,
            se_reduction: 8,
            use_se: true,
            use_denoiser: true,
            decoder_input: DecoderInput::Residual,
            holdout_fraction: 0.1,
            clip_grad_norm: 5.0,
            eval_messages: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let model_cfg = self.model_config();
        model_cfg.validate().map_err(TrainError::Model)?;
        if self.steps < 1 {
            return Err(TrainError::BadConfig("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lambda_encoder", self.lambda_encoder),
            ("lambda_decoder", self.lambda_decoder),
            ("lambda_adversarial", self.lambda_adversarial),
            ("lambda_denoiser", self.lambda_denoiser),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TrainError::BadConfig(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(TrainError::BadConfig(
                "holdout_fraction must be in [0,1)".into(),
            ));
        }
        if self.clip_grad_norm < 0.0 {
            return Err(TrainError::BadConfig("clip_grad_norm must be >= 0".into()));
        }
        if self.lr <= 0.0 {
            return Err(TrainError::BadConfig("lr must be > 0".into()));
        }
        if self.eval_messages < 1 {
            return Err(TrainError::BadConfig("eval_messages must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            message_len: self.message_len,
            base_channels: self.base_channels,
            se_reduction: self.se_reduction,
            use_se: self.use_se,
            use_denoiser: self.use_denoiser,
            decoder_input: self.decoder_input,
        }
    }

    /// Canonical text form; fixed key order, one `key = value` per line.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "message_len = {}", self.message_len);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lambda_encoder = {}", self.lambda_encoder);
        let _ = writeln!(s, "lambda_decoder = {}", self.lambda_decoder);
        let _ = writeln!(s, "lambda_adversarial = {}", self.lambda_adversarial);
        let _ = writeln!(s, "lambda_denoiser = {}", self.lambda_denoiser);
        let _ = writeln!(s, "noise_pool = {}", self.noise_pool);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(s, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "se_reduction = {}", self.se_reduction);
        let _ = writeln!(s, "use_se = {}", self.use_se);
        let _ = writeln!(s, "use_denoiser = {}", self.use_denoiser);
        let _ = writeln!(
            s,
            "decoder_input = {}",
            match self.decoder_input {
                DecoderInput::Residual => "residual",
                DecoderInput::Denoised => "denoised",
            }
        );
        let _ = writeln!(s, "holdout_fraction = {}", self.holdout_fraction);
        let _ = writeln!(s, "clip_grad_norm = {}", self.clip_grad_norm);
        let _ = writeln!(s, "eval_messages = {}", self.eval_messages);
        s
    }

    /// Parse the `key = value` grammar; `#` starts a comment, blank lines
    /// are ignored, later keys override earlier ones. Errors carry the
    /// offending line number.
    pub fn parse_text(text: &str, file: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrainError::Config {
                    file: file.to_string(),
                    line: line_no,
                    msg: format!("expected 'key = value', got '{raw}'"),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|msg| TrainError::Config {
                file: file.to_string(),
                line: line_no,
                msg,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_text(&text, &path.display().to_string())
    }

    /// Apply one key/value assignment (shared by the file parser and CLI
    /// overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value '{value}' for {key}"))
        }
        match key {
            "image_size" => self.image_size = num(key, value)?,
            "message_len" => self.message_len = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lambda_encoder" => self.lambda_encoder = num(key, value)?,
            "lambda_decoder" => self.lambda_decoder = num(key, value)?,
            "lambda_adversarial" => self.lambda_adversarial = num(key, value)?,
            "lambda_denoiser" => self.lambda_denoiser = num(key, value)?,
            "noise_pool" => {
                self.noise_pool = NoisePool::parse(value).map_err(|e| e.to_string())?;
            }
            "seed" => self.seed = num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "base_channels" => self.base_channels = num(key, value)?,
            "se_reduction" => self.se_reduction = num(key, value)?,
            "use_se" => self.use_se = num(key, value)?,
            "use_denoiser" => self.use_denoiser = num(key, value)?,
            "decoder_input" => {
                self.decoder_input = match value {
                    "residual" => DecoderInput::Residual,
                    "denoised" => DecoderInput::Denoised,
                    _ => return Err(format!("invalid decoder_input '{value}'")),
                };
            }
            "holdout_fraction" => self.holdout_fraction = num(key, value)?,
            "clip_grad_norm" => self.clip_grad_norm = num(key, value)?,
            "eval_messages" => self.eval_messages = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips() {
        let mut cfg = TrainConfig::default();
        cfg.image_size = 64;
        cfg.message_len = 8;
        cfg.lr = 2e-3;
        cfg.noise_pool = NoisePool::parse("identity,blur:1.5").unwrap();
        cfg.use_se = false;
        let text = cfg.to_canonical_text();
        let back = TrainConfig::parse_text(&text, "mem").unwrap();
        assert_eq!(back.to_canonical_text(), text);
        assert_eq!(back.image_size, 64);
        assert!(!back.use_se);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "image_size = 64\nnot a pair\n";
        let err = TrainConfig::parse_text(text, "cfg.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.txt:2"), "{msg}");
        let text = "image_size = sixty\n";
        let err = TrainConfig::parse_text(text, "cfg.txt").unwrap_err();
        assert!(err.to_string().contains("cfg.txt:1"));
        let text = "imag_size = 60\n";
        assert!(TrainConfig::parse_text(text, "cfg.txt").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# full config\n\nimage_size = 32\n  # indented comment\nseed = 9\n";
        let cfg = TrainConfig::parse_text(text, "mem").unwrap();
        assert_eq!(cfg.image_size, 32);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.image_size = 100;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lambda_decoder = -0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
