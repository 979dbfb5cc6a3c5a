//! Angular and spatial Transformer blocks over `[U, V, H, W, C]` features.

use std::rc::Rc;

use super::attention::{mhsa, MhsaWeights};
use super::params::ParamVars;
use super::posenc::{angular_pos_encoding, spatial_pos_encoding};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::lf::patch_positions;
use crate::tensor::{Tensor, Var};

fn dims5(f: &Var, cfg: &ModelConfig) -> Result<[usize; 5]> {
    let s = f.shape();
    if s.len() != 5 || s[0] != cfg.angular || s[1] != cfg.angular {
        return Err(Error::shape(format!("features must be [{a}, {a}, H, W, C], got {s:?}", a = cfg.angular)));
    }
    if s[4] != cfg.channels {
        return Err(Error::config(format!("features carry {} channels but the token dim is {}", s[4], cfg.channels)));
    }
    Ok([s[0], s[1], s[2], s[3], s[4]])
}

fn ln(x: &Var, p: &ParamVars, prefix: &str, eps: f64) -> Result<Var> {
    x.layer_norm(p.get(&format!("{prefix}.gamma"))?, p.get(&format!("{prefix}.beta"))?, eps)
}

/// `T + MHSA(Q, K, V)` with `Q = K = LN(T + P)` and `V = T` (`P` optional),
/// without the residual; returns the attention weights when asked.
fn attend(
    t: &Var,
    pos: Option<&Var>,
    p: &ParamVars,
    prefix: &str,
    cfg: &ModelConfig,
    keep: bool,
) -> Result<(Var, Option<Tensor>)> {
    let x = match pos {
        Some(pe) => t.add(pe)?,
        None => t.clone(),
    };
    let qk = ln(&x, p, &format!("{prefix}.ln_qk"), cfg.ln_eps)?;
    let w = MhsaWeights::from_params(p, prefix)?;
    let out = mhsa(&qk, &qk, t, &w, cfg.heads, keep)?;
    Ok((out.out, out.probs))
}

/// `MLP(LN(x)) + x` with a GELU hidden layer.
fn feed_forward(x: &Var, p: &ParamVars, prefix: &str, eps: f64) -> Result<Var> {
    let y = ln(x, p, &format!("{prefix}.ln_ffn"), eps)?;
    let get = |n: &str| p.get(&format!("{prefix}.ffn.{n}"));
    let y = y.linear(get("fc1.weight")?, Some(get("fc1.bias")?))?.gelu();
    y.linear(get("fc2.weight")?, Some(get("fc2.bias")?))?.add(x)
}

/// Output of the angular block.
pub struct AngularOutput {
    pub features: Var,
    /// `[H * W, heads, A^2, A^2]` weights, when requested.
    pub probs: Option<Tensor>,
}

/// Angular Transformer: tokens are the `A^2` views at each spatial position.
///
/// Returns the input unchanged when the angular Transformer is disabled.
pub fn angular_block(
    f: &Var,
    p: &ParamVars,
    prefix: &str,
    cfg: &ModelConfig,
    keep_probs: bool,
) -> Result<AngularOutput> {
    let [u, v, h, w, c] = dims5(f, cfg)?;
    if !cfg.use_ang_transformer {
        return Ok(AngularOutput { features: f.clone(), probs: None });
    }
    let t = f.permute_reshape(&[2, 3, 0, 1, 4], &[h * w, u * v, c])?;
    let pos = if cfg.use_ang_pos { Some(Var::constant(angular_pos_encoding(cfg)?)) } else { None };
    let (a, probs) = attend(&t, pos.as_ref(), p, prefix, cfg, keep_probs)?;
    let t1 = a.add(&t)?;
    let t2 = feed_forward(&t1, p, prefix, cfg.ln_eps)?;
    let features = t2.reshape(&[h, w, u, v, c])?.permute(&[2, 3, 0, 1, 4])?;
    Ok(AngularOutput { features, probs })
}

/// Per-view 3x3 unfolding followed by a `9C -> C` linear map.
///
/// Unfolded channel `g * C + c` holds channel `c` at offset block `g`
/// (see [`Var::unfold_3x3`]); block 4 is the centre pixel.
pub fn local_embed(f: &Var, p: &ParamVars, prefix: &str) -> Result<Var> {
    let s = f.shape();
    if s.len() != 5 {
        return Err(Error::shape(format!("features must be [U, V, H, W, C], got {s:?}")));
    }
    let (u, v, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let x = f.permute_reshape(&[0, 1, 4, 2, 3], &[u * v, c, h, w])?.unfold_3x3()?;
    let x = x.permute_reshape(&[0, 2, 3, 1], &[u, v, h, w, 9 * c])?;
    x.linear(p.get(&format!("{prefix}.embed.weight"))?, Some(p.get(&format!("{prefix}.embed.bias"))?))
}

/// Window origins along an axis: a single window when the axis fits.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        vec![0]
    } else {
        patch_positions(len, window, stride)
    }
}

/// Windowed spatial attention over `[views, H * W, C]` tokens.
///
/// Each `window x window` region attends independently with window-local
/// positions; overlapping outputs are averaged.
fn spatial_attention(t: &Var, h: usize, w: usize, p: &ParamVars, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let (views, c) = (t.shape()[0], t.shape()[2]);
    let (wh, ww) = (h.min(cfg.window), w.min(cfg.window));
    let pos = if cfg.use_spa_pos { Some(Var::constant(spatial_pos_encoding(cfg, wh, ww)?)) } else { None };
    let ys = window_starts(h, cfg.window, cfg.window_stride);
    let xs = window_starts(w, cfg.window, cfg.window_stride);
    if ys.len() == 1 && xs.len() == 1 {
        return attend(t, pos.as_ref(), p, prefix, cfg, false).map(|r| r.0);
    }
    let full = vec![views, h * w, c];
    let mut count = vec![0.0; h * w];
    let mut acc: Option<Var> = None;
    for &y0 in &ys {
        for &x0 in &xs {
            let mut idx = Vec::with_capacity(views * wh * ww * c);
            for b in 0..views {
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let base = (b * h * w + y * w + x) * c;
                        idx.extend(base..base + c);
                    }
                }
            }
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    count[y * w + x] += 1.0;
                }
            }
            let idx = Rc::new(idx);
            let g = t.gather(idx.clone(), vec![views, wh * ww, c])?;
            let (a, _) = attend(&g, pos.as_ref(), p, prefix, cfg, false)?;
            let back = a.scatter_add(idx, full.clone())?;
            acc = Some(match acc {
                None => back,
                Some(prev) => prev.add(&back)?,
            });
        }
    }
    let inv: Vec<f64> = (0..views).flat_map(|_| count.iter().flat_map(|&n| std::iter::repeat_n(1.0 / n, c))).collect();
    acc.expect("at least one window").mul_const(Rc::new(inv))
}

/// Spatial Transformer: local embedding, then one token per pixel with the
/// views as independent batch items.
///
/// Returns the input unchanged when the spatial Transformer is disabled.
pub fn spatial_block(f: &Var, p: &ParamVars, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let [u, v, h, w, c] = dims5(f, cfg)?;
    if !cfg.use_spa_transformer {
        return Ok(f.clone());
    }
    let t = local_embed(f, p, prefix)?.reshape(&[u * v, h * w, c])?;
    let a = spatial_attention(&t, h, w, p, prefix, cfg)?;
    let t1 = a.add(&t)?;
    feed_forward(&t1, p, prefix, cfg.ln_eps)?.reshape(&[u, v, h, w, c])
}
