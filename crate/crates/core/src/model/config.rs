use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Architecture hyperparameters.
///
/// Token dims `d_a` and `d_s` are tied to `channels`; they are kept as
/// separate fields so a mismatching config is reported rather than silently
/// fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Views per angular axis `A`.
    pub angular: usize,
    pub channels: usize,
    pub n_pairs: usize,
    pub d_a: usize,
    pub d_s: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub scale: usize,
    pub use_ang_transformer: bool,
    pub use_spa_transformer: bool,
    pub use_ang_pos: bool,
    pub use_spa_pos: bool,
    pub alpha_pe: f64,
    /// Add the bicubic upsample of the input to the head output.
    pub global_residual: bool,
    /// Side of the square spatial attention window.
    pub window: usize,
    pub window_stride: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            angular: 5,
            channels: 32,
            n_pairs: 2,
            d_a: 32,
            d_s: 32,
            heads: 4,
            mlp_ratio: 2,
            scale: 2,
            use_ang_transformer: true,
            use_spa_transformer: true,
            use_ang_pos: true,
            use_spa_pos: true,
            alpha_pe: 10000.0,
            global_residual: true,
            window: 32,
            window_stride: 16,
            ln_eps: 1e-5,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`].
pub const MODEL_KEYS: &[&str] = &[
    "angular",
    "channels",
    "n_pairs",
    "d_a",
    "d_s",
    "heads",
    "mlp_ratio",
    "scale",
    "use_ang_transformer",
    "use_spa_transformer",
    "use_ang_pos",
    "use_spa_pos",
    "alpha_pe",
    "global_residual",
    "window",
    "window_stride",
    "ln_eps",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::config(format!("invalid value {value:?} for `{key}`")))
}

impl ModelConfig {
    /// Small config for tests: `C = 8`, one block pair, two heads.
    pub fn tiny(angular: usize) -> Self {
        ModelConfig { angular, channels: 8, n_pairs: 1, d_a: 8, d_s: 8, heads: 2, ..ModelConfig::default() }
    }

    /// Sets `channels`, `d_a` and `d_s` together.
    pub fn with_channels(mut self, c: usize) -> Self {
        self.channels = c;
        self.d_a = c;
        self.d_s = c;
        self
    }

    /// Ablation switches: angular Transformer, spatial Transformer,
    /// angular and spatial positional encodings.
    pub fn with_switches(mut self, ang: bool, spa: bool, ang_pos: bool, spa_pos: bool) -> Self {
        self.use_ang_transformer = ang;
        self.use_spa_transformer = spa;
        self.use_ang_pos = ang_pos;
        self.use_spa_pos = spa_pos;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("angular", self.angular),
            ("channels", self.channels),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("window", self.window),
            ("window_stride", self.window_stride),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("`{k}` must be positive")));
            }
        }
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.d_a != self.channels {
            return Err(Error::config(format!(
                "angular token dim d_a = {} must equal channels = {}",
                self.d_a, self.channels
            )));
        }
        if self.d_s != self.channels {
            return Err(Error::config(format!(
                "spatial token dim d_s = {} must equal channels = {}",
                self.d_s, self.channels
            )));
        }
        if !self.d_a.is_multiple_of(self.heads) || !self.d_s.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "token dims {}/{} are not divisible by {} heads",
                self.d_a, self.d_s, self.heads
            )));
        }
        if self.use_ang_transformer && self.use_ang_pos && !self.d_a.is_multiple_of(2) {
            return Err(Error::config(format!("angular positional encoding needs an even d_a, got {}", self.d_a)));
        }
        if self.use_spa_transformer && self.use_spa_pos && !self.d_s.is_multiple_of(2) {
            return Err(Error::config(format!("spatial positional encoding needs an even d_s, got {}", self.d_s)));
        }
        if !(self.alpha_pe > 0.0 && self.alpha_pe.is_finite()) {
            return Err(Error::config(format!("alpha_pe must be positive, got {}", self.alpha_pe)));
        }
        if self.window_stride > self.window {
            return Err(Error::config(format!("window_stride {} exceeds window {}", self.window_stride, self.window)));
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            return Err(Error::config(format!("ln_eps must be non-negative, got {}", self.ln_eps)));
        }
        Ok(())
    }

    /// Sets one field from its text form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "angular" => self.angular = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "d_a" => self.d_a = parse(key, value)?,
            "d_s" => self.d_s = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "use_ang_transformer" => self.use_ang_transformer = parse(key, value)?,
            "use_spa_transformer" => self.use_spa_transformer = parse(key, value)?,
            "use_ang_pos" => self.use_ang_pos = parse(key, value)?,
            "use_spa_pos" => self.use_spa_pos = parse(key, value)?,
            "alpha_pe" => self.alpha_pe = parse(key, value)?,
            "global_residual" => self.global_residual = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "window_stride" => self.window_stride = parse(key, value)?,
            "ln_eps" => self.ln_eps = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let pairs: [(&str, String); 17] = [
            ("angular", self.angular.to_string()),
            ("channels", self.channels.to_string()),
            ("n_pairs", self.n_pairs.to_string()),
            ("d_a", self.d_a.to_string()),
            ("d_s", self.d_s.to_string()),
            ("heads", self.heads.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("scale", self.scale.to_string()),
            ("use_ang_transformer", self.use_ang_transformer.to_string()),
            ("use_spa_transformer", self.use_spa_transformer.to_string()),
            ("use_ang_pos", self.use_ang_pos.to_string()),
            ("use_spa_pos", self.use_spa_pos.to_string()),
            ("alpha_pe", format!("{:?}", self.alpha_pe)),
            ("global_residual", self.global_residual.to_string()),
            ("window", self.window.to_string()),
            ("window_stride", self.window_stride.to_string()),
            ("ln_eps", format!("{:?}", self.ln_eps)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Defaults overridden by `map`; validates the result.
    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny(2).validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig::tiny(3).with_switches(true, false, false, true);
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert_eq!(cfg.to_kv().len(), MODEL_KEYS.len());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::tiny(2);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(2);
        c.d_a = 16;
        assert!(c.validate().unwrap_err().to_string().contains("d_a"));
        let c = ModelConfig::tiny(2).with_channels(6);
        let c = ModelConfig { heads: 6, ..c };
        c.validate().unwrap();
        let c = ModelConfig { channels: 5, d_a: 5, d_s: 5, heads: 1, ..ModelConfig::tiny(2) };
        assert!(c.validate().unwrap_err().to_string().contains("even"));
        let mut c = ModelConfig::tiny(2);
        c.alpha_pe = 0.0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().set("nope", "1").is_err());
    }
}
