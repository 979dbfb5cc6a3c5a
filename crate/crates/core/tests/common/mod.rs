//! Shared fixtures and brute-force reference implementations.
//!
//! The references below are written with plain nested loops straight from
//! the layer definitions and share no code with the library kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use lft_core::model::{param_specs, ModelConfig, ModelParams, ParamInit};
use lft_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..hi)).unwrap()
}

/// Parameters with weights in `[-amp, amp]`, LN gains near 1 and small
/// non-zero biases, so every parameter influences the output.
pub fn random_params(cfg: &ModelConfig, seed: u64, amp: f64) -> ModelParams {
    let mut r = rng(seed);
    let mut map = BTreeMap::new();
    for s in param_specs(cfg) {
        let t = Tensor::from_fn(&s.shape, |_| match s.init {
            ParamInit::Ones => 1.0 + r.random_range(-0.2..0.2),
            ParamInit::Zeros => r.random_range(-0.1..0.1),
            ParamInit::Xavier { .. } => r.random_range(-amp..amp),
        })
        .unwrap();
        map.insert(s.name, t);
    }
    ModelParams::new(map)
}

pub fn p<'a>(params: &'a ModelParams, name: &str) -> &'a [f64] {
    params.get(name).unwrap().data()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = (var + eps).sqrt();
    (0..x.len()).map(|i| gamma[i] * (x[i] - mean) / sd + beta[i]).collect()
}

/// `x [n][d_in] * w (d_in x d_out, row-major) + b`.
pub fn linear(x: &[Vec<f64>], w: &[f64], b: Option<&[f64]>, d_out: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..d_out)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for (i, &xi) in row.iter().enumerate() {
                        s += xi * w[i * d_out + o];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Multi-head attention on one sequence. Weights: `wq/wk/wv` as
/// `[heads][dh][dh]` and `wo` as `[d][d]`, all row-major. Returns the output
/// tokens and the per-head weight matrices.
#[allow(clippy::too_many_arguments)]
pub fn mhsa(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
    heads: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = q.len();
    let d = q[0].len();
    let dh = d / heads;
    let proj = |x: &[Vec<f64>], w: &[f64], h: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|tok| (0..dh).map(|j| (0..dh).map(|i| tok[h * dh + i] * w[(h * dh + i) * dh + j]).sum()).collect())
            .collect()
    };
    let mut concat = vec![vec![0.0; d]; n];
    let mut all_probs = Vec::new();
    for h in 0..heads {
        let (qh, kh, vh) = (proj(q, wq, h), proj(k, wk, h), proj(v, wv, h));
        let mut probs = Vec::new();
        for a in 0..n {
            let scores: Vec<f64> =
                (0..n).map(|b| (0..dh).map(|j| qh[a][j] * kh[b][j]).sum::<f64>() / (dh as f64).sqrt()).collect();
            let pr = softmax(&scores);
            for j in 0..dh {
                concat[a][h * dh + j] = (0..n).map(|b| pr[b] * vh[b][j]).sum();
            }
            probs.push(pr);
        }
        all_probs.push(probs);
    }
    (linear(&concat, wo, None, d), all_probs)
}

/// `MHSA(LN(T + P), LN(T + P), T)` for one token sequence.
pub fn attend(
    t: &[Vec<f64>],
    pos: Option<&[Vec<f64>]>,
    params: &ModelParams,
    prefix: &str,
    cfg: &ModelConfig,
) -> Vec<Vec<f64>> {
    let g = p(params, &format!("{prefix}.ln_qk.gamma"));
    let b = p(params, &format!("{prefix}.ln_qk.beta"));
    let qk: Vec<Vec<f64>> = t
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let x: Vec<f64> = match pos {
                Some(pe) => tok.iter().zip(&pe[i]).map(|(a, b)| a + b).collect(),
                None => tok.clone(),
            };
            layer_norm(&x, g, b, cfg.ln_eps)
        })
        .collect();
    let w = |n: &str| p(params, &format!("{prefix}.attn.{n}"));
    mhsa(&qk, &qk, t, w("wq"), w("wk"), w("wv"), w("wo"), cfg.heads).0
}

/// `MLP(LN(x)) + x`.
pub fn ffn(x: &[Vec<f64>], params: &ModelParams, prefix: &str, cfg: &ModelConfig) -> Vec<Vec<f64>> {
    let c = cfg.channels;
    let hidden = c * cfg.mlp_ratio;
    let g = p(params, &format!("{prefix}.ln_ffn.gamma"));
    let b = p(params, &format!("{prefix}.ln_ffn.beta"));
    let y: Vec<Vec<f64>> = x.iter().map(|t| layer_norm(t, g, b, cfg.ln_eps)).collect();
    let w = |n: &str| p(params, &format!("{prefix}.ffn.{n}"));
    let hdn: Vec<Vec<f64>> = linear(&y, w("fc1.weight"), Some(w("fc1.bias")), hidden)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let out = linear(&hdn, w("fc2.weight"), Some(w("fc2.bias")), c);
    out.iter().zip(x).map(|(o, xi)| o.iter().zip(xi).map(|(a, b)| a + b).collect()).collect()
}

pub fn angular_pe(n: usize, d: usize, alpha: f64) -> Vec<Vec<f64>> {
    (1..=n)
        .map(|p| {
            (0..d)
                .map(|ch| {
                    let i = (ch / 2) as f64;
                    let arg = p as f64 / alpha.powf(2.0 * i / d as f64);
                    if ch % 2 == 0 {
                        arg.sin()
                    } else {
                        arg.cos()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn spatial_pe(h: usize, w: usize, d: usize, alpha: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for px in 1..=h {
        for py in 1..=w {
            out.push(
                (0..d)
                    .map(|ch| {
                        let j = (ch / 2) as f64;
                        let den = alpha.powf(2.0 * j / d as f64);
                        let (a, b) = (px as f64 / den, py as f64 / den);
                        if ch % 2 == 0 {
                            a.sin() + b.sin()
                        } else {
                            a.cos() + b.cos()
                        }
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Flat `[U, V, H, W, C]` index.
pub fn idx5(s: &[usize], u: usize, v: usize, y: usize, x: usize, c: usize) -> usize {
    (((u * s[1] + v) * s[2] + y) * s[3] + x) * s[4] + c
}

pub fn angular_block(f: &Tensor, params: &ModelParams, prefix: &str, cfg: &ModelConfig) -> Vec<f64> {
    let s = f.shape();
    let (a, h, w, c) = (s[0], s[2], s[3], s[4]);
    let pe = angular_pe(a * a, c, cfg.alpha_pe);
    let mut out = vec![0.0; f.len()];
    for y in 0..h {
        for x in 0..w {
            let tokens: Vec<Vec<f64>> =
                (0..a * a).map(|n| (0..c).map(|ch| f.data()[idx5(s, n / a, n % a, y, x, ch)]).collect()).collect();
            let att = attend(&tokens, cfg.use_ang_pos.then_some(pe.as_slice()), params, prefix, cfg);
            let t1: Vec<Vec<f64>> =
                att.iter().zip(&tokens).map(|(o, t)| o.iter().zip(t).map(|(a, b)| a + b).collect()).collect();
            let t2 = ffn(&t1, params, prefix, cfg);
            for n in 0..a * a {
                for ch in 0..c {
                    out[idx5(s, n / a, n % a, y, x, ch)] = t2[n][ch];
                }
            }
        }
    }
    out
}

/// `[U, V, H, W, C] -> [U, V, H, W, C]` via the 3x3 neighbourhood concat
/// (offset `(r, q)` reads `x[y - r, x - q]`, blocks row-major over
/// `r, q in {-1, 0, 1}`) and the `9C -> C` map.
pub fn local_embed(f: &Tensor, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let s = f.shape();
    let (nu, nv, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let mut out = vec![0.0; f.len()];
    for u in 0..nu {
        for v in 0..nv {
            for y in 0..h {
                for x in 0..w {
                    let mut cat = Vec::with_capacity(9 * c);
                    for r in -1i64..=1 {
                        for q in -1i64..=1 {
                            let (sy, sx) = (y as i64 - r, x as i64 - q);
                            for ch in 0..c {
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    cat.push(0.0);
                                } else {
                                    cat.push(f.data()[idx5(s, u, v, sy as usize, sx as usize, ch)]);
                                }
                            }
                        }
                    }
                    let o = linear(&[cat], weight, Some(bias), c);
                    for ch in 0..c {
                        out[idx5(s, u, v, y, x, ch)] = o[0][ch];
                    }
                }
            }
        }
    }
    out
}

fn windows(len: usize, win: usize, stride: usize) -> Vec<usize> {
    if len <= win {
        return vec![0];
    }
    let mut v = Vec::new();
    let mut s = 0;
    while s + win < len {
        v.push(s);
        s += stride;
    }
    v.push(len - win);
    v.dedup();
    v
}

pub fn spatial_block(f: &Tensor, params: &ModelParams, prefix: &str, cfg: &ModelConfig) -> Vec<f64> {
    let s = f.shape();
    let (nu, nv, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let e = local_embed(f, p(params, &format!("{prefix}.embed.weight")), p(params, &format!("{prefix}.embed.bias")));
    let (wh, ww) = (h.min(cfg.window), w.min(cfg.window));
    let pe = spatial_pe(wh, ww, c, cfg.alpha_pe);
    let mut out = vec![0.0; f.len()];
    for u in 0..nu {
        for v in 0..nv {
            let tok = |y: usize, x: usize| -> Vec<f64> { (0..c).map(|ch| e[idx5(s, u, v, y, x, ch)]).collect() };
            let mut sum = vec![vec![0.0; c]; h * w];
            let mut cnt = vec![0.0; h * w];
            for &y0 in &windows(h, cfg.window, cfg.window_stride) {
                for &x0 in &windows(w, cfg.window, cfg.window_stride) {
                    let mut tokens = Vec::new();
                    for y in y0..y0 + wh {
                        for x in x0..x0 + ww {
                            tokens.push(tok(y, x));
                        }
                    }
                    let att = attend(&tokens, cfg.use_spa_pos.then_some(pe.as_slice()), params, prefix, cfg);
                    for (i, a) in att.iter().enumerate() {
                        let (y, x) = (y0 + i / ww, x0 + i % ww);
                        for ch in 0..c {
                            sum[y * w + x][ch] += a[ch];
                        }
                        cnt[y * w + x] += 1.0;
                    }
                }
            }
            let t1: Vec<Vec<f64>> =
                (0..h * w).map(|n| (0..c).map(|ch| sum[n][ch] / cnt[n] + tok(n / w, n % w)[ch]).collect()).collect();
            let t2 = ffn(&t1, params, prefix, cfg);
            for n in 0..h * w {
                for ch in 0..c {
                    out[idx5(s, u, v, n / w, n % w, ch)] = t2[n][ch];
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
