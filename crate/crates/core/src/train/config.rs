use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    L1,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Loss::L1),
            _ => Err(Error::config(format!("unknown loss {s:?} (supported: l1)"))),
        }
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("l1")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: Loss,
    pub adam: AdamConfig,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Side of the LR training patch.
    pub lr_patch: usize,
    /// Patch grid stride in HR pixels.
    pub patch_stride: usize,
}

pub fn default_batch_size(scale: usize) -> usize {
    if scale >= 4 {
        8
    } else {
        4
    }
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = epoch / cfg.halve_every.max(1);
    cfg.lr0 * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

pub const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "lr0",
    "halve_every",
    "max_epochs",
    "seed",
    "loss",
    "beta1",
    "beta2",
    "adam_eps",
    "max_steps",
    "lr_patch",
    "patch_stride",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::config(format!("invalid value {value:?} for `{key}`")))
}

impl TrainConfig {
    pub fn new(scale: usize) -> Self {
        TrainConfig {
            scale,
            batch_size: default_batch_size(scale),
            lr0: 2e-4,
            halve_every: 15,
            max_epochs: 80,
            seed: 0,
            loss: Loss::L1,
            adam: AdamConfig::default(),
            max_steps: None,
            lr_patch: 32,
            patch_stride: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("halve_every", self.halve_every),
            ("lr_patch", self.lr_patch),
            ("patch_stride", self.patch_stride),
        ] {
            if v == 0 {
                return Err(Error::config(format!("`{k}` must be positive")));
            }
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 must be a non-negative number, got {}", self.lr0)));
        }
        self.adam.validate()
    }

    /// Sets one field from its text form; `max_steps = 0` means no limit.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "halve_every" => self.halve_every = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss" => self.loss = value.trim().parse()?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "max_steps" => {
                let n: usize = parse(key, value)?;
                self.max_steps = (n > 0).then_some(n);
            }
            "lr_patch" => self.lr_patch = parse(key, value)?,
            "patch_stride" => self.patch_stride = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let pairs = [
            ("batch_size", self.batch_size.to_string()),
            ("lr0", format!("{:?}", self.lr0)),
            ("halve_every", self.halve_every.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("loss", self.loss.to_string()),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("adam_eps", format!("{:?}", self.adam.eps)),
            ("max_steps", self.max_steps.unwrap_or(0).to_string()),
            ("lr_patch", self.lr_patch.to_string()),
            ("patch_stride", self.patch_stride.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
