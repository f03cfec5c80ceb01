//! Training hyperparameters and the flat key=value experiment file.

use crate::data::DensityConfig;
use crate::error::{Error, Result};
use crate::model::IADCCNConfig;

/// Optimizer and loop hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Weight of the segmentation loss in the combined objective.
    pub lambda_s: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hsm_enabled: bool,
    /// Re-select hard samples every this many epochs.
    pub hsm_interval: usize,
    pub hsm_bins: usize,
    /// Fall back to the full training set when the mined subset would be
    /// smaller than this fraction of it.
    pub hsm_min_fraction: f64,
    /// Fraction of images set aside for validation (split by image).
    pub val_fraction: f64,
    pub seed: u64,
    /// Use per-sample squared L2 instead of the Euclidean norm.
    pub squared_l2: bool,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub noise_amp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            lambda_s: 0.1,
            epochs: 50,
            batch_size: 1,
            hsm_enabled: false,
            hsm_interval: 5,
            hsm_bins: 50,
            hsm_min_fraction: 0.1,
            val_fraction: 0.1,
            seed: 0,
            squared_l2: false,
            patch_size: 224,
            patches_per_image: 9,
            noise_amp: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)".to_string());
        }
        if !(self.eps_adam > 0.0) {
            return bad("eps_adam must be > 0".to_string());
        }
        if !(self.lambda_s >= 0.0) {
            return bad(format!("lambda_s must be >= 0, got {}", self.lambda_s));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".to_string());
        }
        if self.hsm_interval == 0 || self.hsm_bins == 0 {
            return bad("hsm_interval and hsm_bins must be >= 1".to_string());
        }
        if !(self.hsm_min_fraction > 0.0 && self.hsm_min_fraction <= 1.0) {
            return bad(format!(
                "hsm_min_fraction must be in (0, 1], got {}",
                self.hsm_min_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.patch_size == 0 || self.patch_size % IADCCNConfig::BACKBONE_STRIDE != 0 {
            return bad(format!(
                "patch_size must be a positive multiple of {}, got {}",
                IADCCNConfig::BACKBONE_STRIDE,
                self.patch_size
            ));
        }
        if self.patches_per_image == 0 {
            return bad("patches_per_image must be >= 1".to_string());
        }
        if !(self.noise_amp >= 0.0) {
            return bad("noise_amp must be >= 0".to_string());
        }
        Ok(())
    }
}

/// Everything one run needs: architecture, optimizer/loop settings, and
/// ground-truth construction parameters. Serializes to a flat key=value
/// file (one per line, `#` comments) and accepts the same keys as
/// overrides.
#[derive(Clone, Debug, Default)]
pub struct ExperimentConfig {
    pub model: IADCCNConfig,
    pub train: TrainConfig,
    pub density: DensityConfig,
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "key {key}: expected true/false, got {other:?}"
        ))),
    }
}

fn parse_five(key: &str, value: &str) -> Result<[usize; 5]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!(
            "key {key}: expected 5 comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0; 5];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = parse_as(key, p)?;
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Applies one `key=value` setting; unknown keys are configuration
    /// errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.in_channels" => self.model.in_channels = parse_as(key, value)?,
            "model.block_channels" => self.model.block_channels = parse_five(key, value)?,
            "model.block_depths" => self.model.block_depths = parse_five(key, value)?,
            "model.dru_channels" => self.model.dru_channels = parse_as(key, value)?,
            "model.iab_enabled" => self.model.iab_enabled = parse_bool(key, value)?,
            "model.iab_hidden" => self.model.iab_hidden = parse_as(key, value)?,
            "model.seg_head_enabled" => self.model.seg_head_enabled = parse_bool(key, value)?,
            "model.upsample_factor" => self.model.upsample_factor = parse_as(key, value)?,
            "train.lr" => self.train.lr = parse_as(key, value)?,
            "train.beta1" => self.train.beta1 = parse_as(key, value)?,
            "train.beta2" => self.train.beta2 = parse_as(key, value)?,
            "train.eps_adam" => self.train.eps_adam = parse_as(key, value)?,
            "train.lambda_s" => self.train.lambda_s = parse_as(key, value)?,
            "train.epochs" => self.train.epochs = parse_as(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_as(key, value)?,
            "train.hsm_enabled" => self.train.hsm_enabled = parse_bool(key, value)?,
            "train.hsm_interval" => self.train.hsm_interval = parse_as(key, value)?,
            "train.hsm_bins" => self.train.hsm_bins = parse_as(key, value)?,
            "train.hsm_min_fraction" => self.train.hsm_min_fraction = parse_as(key, value)?,
            "train.val_fraction" => self.train.val_fraction = parse_as(key, value)?,
            "train.seed" => self.train.seed = parse_as(key, value)?,
            "train.squared_l2" => self.train.squared_l2 = parse_bool(key, value)?,
            "train.patch_size" => self.train.patch_size = parse_as(key, value)?,
            "train.patches_per_image" => self.train.patches_per_image = parse_as(key, value)?,
            "train.noise_amp" => self.train.noise_amp = parse_as(key, value)?,
            "density.sigma" => {
                self.density = DensityConfig::new(parse_as(key, value)?, self.density.mask_threshold)?
            }
            "density.mask_threshold" => {
                self.density = DensityConfig::new(self.density.sigma, parse_as(key, value)?)?
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file: one `key=value` per line, `#` starts a
    /// comment, blank lines ignored. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Full key=value dump in apply()-compatible form; round-trips through
    /// [`ExperimentConfig::parse`].
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let t = &self.train;
        let join5 = |v: &[usize; 5]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("model.in_channels".into(), m.in_channels.to_string()),
            ("model.block_channels".into(), join5(&m.block_channels)),
            ("model.block_depths".into(), join5(&m.block_depths)),
            ("model.dru_channels".into(), m.dru_channels.to_string()),
            ("model.iab_enabled".into(), m.iab_enabled.to_string()),
            ("model.iab_hidden".into(), m.iab_hidden.to_string()),
            ("model.seg_head_enabled".into(), m.seg_head_enabled.to_string()),
            ("model.upsample_factor".into(), m.upsample_factor.to_string()),
            ("train.lr".into(), t.lr.to_string()),
            ("train.beta1".into(), t.beta1.to_string()),
            ("train.beta2".into(), t.beta2.to_string()),
            ("train.eps_adam".into(), t.eps_adam.to_string()),
            ("train.lambda_s".into(), t.lambda_s.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.hsm_enabled".into(), t.hsm_enabled.to_string()),
            ("train.hsm_interval".into(), t.hsm_interval.to_string()),
            ("train.hsm_bins".into(), t.hsm_bins.to_string()),
            ("train.hsm_min_fraction".into(), t.hsm_min_fraction.to_string()),
            ("train.val_fraction".into(), t.val_fraction.to_string()),
            ("train.seed".into(), t.seed.to_string()),
            ("train.squared_l2".into(), t.squared_l2.to_string()),
            ("train.patch_size".into(), t.patch_size.to_string()),
            ("train.patches_per_image".into(), t.patches_per_image.to_string()),
            ("train.noise_amp".into(), t.noise_amp.to_string()),
            ("density.sigma".into(), self.density.sigma.to_string()),
            ("density.mask_threshold".into(), self.density.mask_threshold.to_string()),
        ]
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.snapshot() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}
