use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{param_specs, ModelConfig, ModelParams, ParamInit};
use crate::tensor::Tensor;

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Xavier weights, zero biases and unit LN gains, drawn in
/// parameter order from one seeded stream.
pub fn xavier_init(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    for spec in param_specs(cfg) {
        let t = match spec.init {
            ParamInit::Xavier { fan_in, fan_out } => {
                let b = xavier_bound(fan_in, fan_out);
                Tensor::from_fn(&spec.shape, |_| rng.random_range(-b..=b))?
            }
            ParamInit::Zeros => Tensor::zeros(&spec.shape)?,
            ParamInit::Ones => Tensor::full(&spec.shape, 1.0)?,
        };
        map.insert(spec.name, t);
    }
    Ok(ModelParams::new(map))
}
