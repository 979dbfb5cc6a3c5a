//! The network: configuration, parameters, positional encodings, attention,
//! Transformer blocks, forward pass and cost accounting.

mod attention;
mod blocks;
mod config;
mod flops;
mod network;
mod params;
mod posenc;

pub use attention::{mhsa, MhsaWeights};
pub use blocks::{angular_block, local_embed, spatial_block, window_starts, AngularOutput};
pub use config::{ModelConfig, MODEL_KEYS};
pub use flops::count_flops;
pub use network::{
    bicubic_upsample, forward, forward_var, forward_with_attention, AngularAttention, ForwardOptions, ForwardTrace,
    MIN_LR_EXTENT,
};
pub use params::{count_params, param_specs, ModelParams, ParamInit, ParamSpec, ParamVars, WEIGHTS_MAGIC};
pub use posenc::{angular_encoding, angular_pos_encoding, spatial_encoding, spatial_pos_encoding};
