//! Closed-schema run configuration: file values, flag overrides, defaults.

use std::path::{Path, PathBuf};

use lft_core::kv::{self, KvMap};
use lft_core::model::{ModelConfig, MODEL_KEYS};
use lft_core::train::{TrainConfig, TRAIN_KEYS};
use lft_core::{Error, Result};

use crate::Command;

struct Schema {
    required: &'static [&'static str],
    /// Key and default value.
    optional: &'static [(&'static str, &'static str)],
    model: bool,
    train: bool,
}

const COMMON: &[(&str, &str)] = &[("seed", "0"), ("threads", "0")];

fn schema(cmd: Command) -> Schema {
    match cmd {
        Command::Synth => Schema {
            required: &["out", "count", "angular", "height", "width"],
            optional: &[("disparity_min", "0"), ("disparity_max", "1.5")],
            model: false,
            train: false,
        },
        Command::Degrade => Schema {
            required: &["out", "input", "scale"],
            optional: &[("lr_patch", "32"), ("patch_stride", "32")],
            model: false,
            train: false,
        },
        Command::Train => {
            Schema { required: &["out", "data"], optional: &[("init_weights", "")], model: true, train: true }
        }
        Command::Infer => Schema { required: &["out", "input", "weights"], optional: &[], model: true, train: false },
        Command::Eval => Schema {
            required: &["out", "data"],
            optional: &[("method", "lft"), ("weights", "")],
            model: true,
            train: false,
        },
        Command::Attn => Schema {
            required: &["out", "input", "weights"],
            optional: &[
                ("block", "0"),
                ("threshold", "0.025"),
                ("region_y0", "0"),
                ("region_x0", "0"),
                ("region_h", "0"),
                ("region_w", "0"),
                ("epi_axis", "horizontal"),
                ("epi_index", ""),
            ],
            model: true,
            train: false,
        },
    }
}

/// Resolved keys for one command. Model and training keys stay as given;
/// [`RunConfig::model`] and [`RunConfig::train`] apply them.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub values: KvMap,
}

/// Parses `--key value` and `--key=value` tokens. Hyphens in keys become
/// underscores. `--no-global-residual` takes no value.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(tok) = it.next() {
        let Some(key) = tok.strip_prefix("--") else {
            return Err(Error::Usage(format!("expected `--key value`, got {tok:?}")));
        };
        if key.replace('-', "_") == "no_global_residual" {
            out.push(("global_residual".to_string(), "false".to_string()));
            continue;
        }
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Usage(format!("flag `--{key}` needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Reads a config file. A manifest written by a previous run is accepted
/// too: its `config.*` keys are the run's configuration.
pub fn read_config_file(path: &Path, cmd: Command) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let map = kv::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Some(recorded) = map.get("command") else {
        return Ok(map);
    };
    if recorded != cmd.name() {
        return Err(Error::Config(format!("{} is a manifest for `{recorded}`, not `{}`", path.display(), cmd.name())));
    }
    Ok(map.iter().filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone()))).collect())
}

impl RunConfig {
    /// File values overridden by flags, checked against the command schema.
    pub fn resolve(cmd: Command, file: KvMap, overrides: &[(String, String)]) -> Result<Self> {
        let sc = schema(cmd);
        let mut merged = file;
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        let known = |k: &str| {
            sc.required.contains(&k)
                || sc.optional.iter().chain(COMMON).any(|(o, _)| *o == k)
                || (sc.model && MODEL_KEYS.contains(&k))
                || (sc.train && TRAIN_KEYS.contains(&k))
        };
        let unknown: Vec<&str> = merged.keys().map(String::as_str).filter(|k| !known(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys for `{}`: {}", cmd.name(), unknown.join(", "))));
        }
        let missing: Vec<&str> = sc.required.iter().copied().filter(|k| !merged.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing config keys: {}", missing.join(", "))));
        }
        let mut values = merged;
        for (k, v) in sc.optional.iter().chain(COMMON) {
            values.entry(k.to_string()).or_insert_with(|| v.to_string());
        }
        Ok(RunConfig { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        kv::get(&self.values, key)?.ok_or_else(|| Error::Config(format!("missing config keys: {key}")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    /// `base` with every model key present in the config applied.
    pub fn model(&self, base: ModelConfig) -> Result<ModelConfig> {
        let mut cfg = base;
        for k in MODEL_KEYS {
            if let Some(v) = self.values.get(*k) {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training defaults for the model scale with the given keys applied.
    /// The run seed seeds training too.
    pub fn train(&self, cfg: &ModelConfig) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(cfg.scale);
        for k in TRAIN_KEYS {
            if let Some(v) = self.values.get(*k) {
                tc.set(k, v)?;
            }
        }
        tc.validate()?;
        Ok(tc)
    }
}
