use super::blocks::{angular_block, spatial_block};
use super::params::{ModelParams, ParamVars};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::lf::{bicubic_resize, LightField, ResizeFactor};
use crate::tensor::{Tensor, Var};

/// Smallest LR extent the network accepts.
pub const MIN_LR_EXTENT: usize = 8;

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Keep the attention weights of every angular block.
    pub record_attention: bool,
}

/// Weights used by one angular block, `[H * W, heads, A^2, A^2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularAttention {
    pub block: usize,
    pub probs: Tensor,
}

pub struct ForwardTrace {
    /// `[A, A, 1, s*H, s*W]`, not clamped.
    pub output: Var,
    pub attention: Vec<AngularAttention>,
}

/// Bicubic `s x` upsampling of every view.
pub fn bicubic_upsample(lf: &LightField, s: usize) -> Result<LightField> {
    lf.map_views(|v| bicubic_resize(v, ResizeFactor::up(s as u32)))
}

fn check_input(lr: &Tensor, cfg: &ModelConfig) -> Result<[usize; 3]> {
    let s = lr.shape();
    if s.len() != 5 || s[0] != cfg.angular || s[1] != cfg.angular || s[2] != 1 {
        return Err(Error::shape(format!("input must be [{a}, {a}, 1, H, W], got {s:?}", a = cfg.angular)));
    }
    if s[3] < MIN_LR_EXTENT || s[4] < MIN_LR_EXTENT {
        return Err(Error::Size(format!(
            "input views are {}x{}, below the {MIN_LR_EXTENT}x{MIN_LR_EXTENT} minimum",
            s[3], s[4]
        )));
    }
    Ok([cfg.angular, s[3], s[4]])
}

fn conv(x: &Var, p: &ParamVars, prefix: &str) -> Result<Var> {
    x.conv2d_3x3(p.get(&format!("{prefix}.weight"))?, Some(p.get(&format!("{prefix}.bias"))?))
}

/// Runs the network on `lr: [A, A, 1, H, W]`.
///
/// Stages: two cascaded 3x3 convs per view (GELU between them), `n_pairs`
/// angular/spatial block pairs on `[U, V, H, W, C]` features, then a 3x3
/// conv to `C s^2` channels, pixel shuffle, a 3x3 conv to one channel and,
/// with `global_residual`, the bicubic upsample of the input.
pub fn forward_var(lr: &Tensor, p: &ParamVars, cfg: &ModelConfig, opts: ForwardOptions) -> Result<ForwardTrace> {
    cfg.validate()?;
    let [a, h, w] = check_input(lr, cfg)?;
    let (c, s) = (cfg.channels, cfg.scale);
    let x = Var::constant(lr.reshape(&[a * a, 1, h, w])?);
    let x = conv(&x, p, "init.conv0")?.gelu();
    let x = conv(&x, p, "init.conv1")?;
    let mut f = x.permute_reshape(&[0, 2, 3, 1], &[a, a, h, w, c])?;
    let mut attention = Vec::new();
    for i in 0..cfg.n_pairs {
        let ang = angular_block(&f, p, &format!("block{i}.ang"), cfg, opts.record_attention)?;
        if let Some(probs) = ang.probs {
            attention.push(AngularAttention { block: i, probs });
        }
        f = spatial_block(&ang.features, p, &format!("block{i}.spa"), cfg)?;
    }
    let y = f.permute_reshape(&[0, 1, 4, 2, 3], &[a * a, c, h, w])?;
    let y = conv(&y, p, "head.conv_up")?.pixel_shuffle(s)?;
    let y = conv(&y, p, "head.conv_out")?.reshape(&[a, a, 1, s * h, s * w])?;
    let output = if cfg.global_residual {
        let lf = LightField::new(lr.clone())?;
        y.add(&Var::constant(bicubic_upsample(&lf, s)?.into_samples()))?
    } else {
        y
    };
    Ok(ForwardTrace { output, attention })
}

/// Super-resolves `lr` by `cfg.scale`, clamping the result to `[0, 1]`.
pub fn forward(lr: &LightField, params: &ModelParams, cfg: &ModelConfig) -> Result<LightField> {
    forward_with_attention(lr, params, cfg, ForwardOptions::default()).map(|r| r.0)
}

pub fn forward_with_attention(
    lr: &LightField,
    params: &ModelParams,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<(LightField, Vec<AngularAttention>)> {
    let pv = ParamVars::constant(params);
    let trace = forward_var(lr.samples(), &pv, cfg, opts)?;
    if !trace.output.value().all_finite() {
        return Err(Error::numeric("network output is not finite"));
    }
    let out = LightField::new(trace.output.value().clone())?.clamped();
    Ok((out, trace.attention))
}
