//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Command-line
//! overrides (`--key value` or `--key=value`) are applied after the file and
//! win. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use entroscale_core::diffusion::{DenoiserConfig, PolicyMode, TrainConfig};
use entroscale_core::theory::{DEFAULT_SCAN_SIZES, DEFAULT_TRIALS};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub scan_sizes: Vec<usize>,
    pub trials: usize,
    /// Token dimension `d` of the Gaussian token model.
    pub token_dim: usize,
    /// Key projection dimension `d_r`.
    pub key_dim: usize,
    /// Dimension used in the scaling factor (`d_key`).
    pub scale_dim: usize,
    pub query_rows: usize,
    pub query_norm: f64,
    /// Training token count `T` of the entropy-preserving scan.
    pub train_tokens: usize,
    pub decomp_cases: usize,

    pub image_size: usize,
    pub patch: usize,
    pub d_model: usize,
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub blocks: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,

    /// Defaults to `<out_dir>/toy.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub policy: PolicyMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            scan_sizes: DEFAULT_SCAN_SIZES.to_vec(),
            trials: DEFAULT_TRIALS,
            token_dim: 64,
            key_dim: 64,
            scale_dim: 64,
            query_rows: 8,
            query_norm: 8.0,
            train_tokens: 512,
            decomp_cases: 1000,
            image_size: train.image_size,
            patch: train.denoiser.patch,
            d_model: train.denoiser.d_model,
            attn_dim: train.denoiser.d_key,
            mlp_hidden: train.denoiser.mlp_hidden,
            blocks: train.denoiser.blocks,
            diffusion_steps: train.diffusion_steps,
            beta_start: train.beta_start,
            beta_end: train.beta_end,
            train_steps: train.steps,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            checkpoint: None,
            height: train.image_size,
            width: train.image_size,
            policy: PolicyMode::Fixed,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for '{key}'")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "scan_sizes" => {
                self.scan_sizes = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "trials" => self.trials = parse(key, v)?,
            "token_dim" => self.token_dim = parse(key, v)?,
            "key_dim" => self.key_dim = parse(key, v)?,
            "scale_dim" => self.scale_dim = parse(key, v)?,
            "query_rows" => self.query_rows = parse(key, v)?,
            "query_norm" => self.query_norm = parse(key, v)?,
            "train_tokens" => self.train_tokens = parse(key, v)?,
            "decomp_cases" => self.decomp_cases = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "patch" => self.patch = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "attn_dim" => self.attn_dim = parse(key, v)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "policy" => self.policy = v.parse().map_err(CliError::Config)?,
            other => return Err(CliError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies `--key value` / `--key=value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected --key, found '{arg}'")))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
            } else {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("missing value for --{key}")))?;
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("toy.ckpt"))
    }

    pub fn validate_theory(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.trials < 2 {
            return bad("trials must be at least 2");
        }
        if self.token_dim == 0 || self.key_dim == 0 || self.scale_dim == 0 {
            return bad("token_dim, key_dim and scale_dim must be positive");
        }
        if self.query_rows == 0 || !(self.query_norm.is_finite() && self.query_norm >= 0.0) {
            return bad("query_rows must be positive and query_norm finite and non-negative");
        }
        if self.train_tokens < 2 {
            return bad("train_tokens must be at least 2");
        }
        Ok(())
    }

    pub fn validate_scan(&self) -> Result<(), CliError> {
        self.validate_theory()?;
        if self.scan_sizes.len() < 2 {
            return Err(CliError::Config(
                "scan_sizes needs at least 2 entries for a regression".into(),
            ));
        }
        if self.scan_sizes.iter().any(|&n| n < 4) {
            return Err(CliError::Config(
                "every scan size must be at least 4".into(),
            ));
        }
        if self.scan_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config(
                "scan_sizes must be strictly ascending".into(),
            ));
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            denoiser: DenoiserConfig {
                patch: self.patch,
                d_model: self.d_model,
                d_key: self.attn_dim,
                mlp_hidden: self.mlp_hidden,
                blocks: self.blocks,
            },
            image_size: self.image_size,
            diffusion_steps: self.diffusion_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            steps: self.train_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\n\nseed = 7\nscan_sizes = 16, 32,64\npolicy=scaled\n")
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.scan_sizes, vec![16, 32, 64]);
        assert_eq!(cfg.policy, PolicyMode::EntropyPreserving);
        cfg.apply_overrides(&["--seed".into(), "9".into(), "--trials=3".into()])
            .unwrap();
        assert_eq!((cfg.seed, cfg.trials), (9, 3));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.set("nope", "1"), Err(CliError::Config(_))));
        assert!(cfg.apply_text("seed 7").is_err());
        assert!(cfg.set("trials", "-1").is_err());
        assert!(cfg.apply_overrides(&["--seed".into()]).is_err());
        assert!(cfg.apply_overrides(&["seed".into(), "1".into()]).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.validate_scan().unwrap();
        cfg.trials = 1;
        assert!(cfg.validate_theory().is_err());
        let mut cfg = ExperimentConfig {
            scan_sizes: vec![64],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate_scan().is_err());
        cfg.scan_sizes = vec![64, 32];
        assert!(cfg.validate_scan().is_err());
        let cfg = ExperimentConfig {
            beta_end: 1.5,
            ..ExperimentConfig::default()
        };
        assert!(cfg.train_config().is_err());
    }
}
