use super::blocks::window_starts;
use super::ModelConfig;

/// Multiply-accumulates of the matmul, convolution and attention products
/// for one `A x A x H x W` input, times two. Normalization, activations,
/// additions and the bicubic residual are not counted.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let (a2, c, s) = ((cfg.angular * cfg.angular) as u64, cfg.channels as u64, cfg.scale as u64);
    let (h64, w64) = (h as u64, w as u64);
    let dh = cfg.head_dim() as u64;
    let hidden = c * cfg.mlp_ratio as u64;
    let pixels = h64 * w64;
    let conv = |ci: u64, co: u64, px: u64| 9 * ci * co * px * a2;
    // per token: Q/K/V per-head projections + W_O
    let proj = |tokens: u64| tokens * (3 * c * dh + c * c);
    // scores and weighted sum for one sequence of `n` tokens
    let attn = |n: u64| 2 * n * n * c;
    let ffn = |tokens: u64| tokens * 2 * c * hidden;

    let mut madds = conv(1, c, pixels) + conv(c, c, pixels);
    let mut pair = 0;
    if cfg.use_ang_transformer {
        let tokens = pixels * a2;
        pair += proj(tokens) + pixels * attn(a2) + ffn(tokens);
    }
    if cfg.use_spa_transformer {
        let windows = (window_starts(h, cfg.window, cfg.window_stride).len()
            * window_starts(w, cfg.window, cfg.window_stride).len()) as u64;
        let wn = (h.min(cfg.window) * w.min(cfg.window)) as u64;
        pair += pixels * a2 * 9 * c * c + a2 * windows * (proj(wn) + attn(wn)) + ffn(pixels * a2);
    }
    madds += cfg.n_pairs as u64 * pair;
    madds += conv(c, c * s * s, pixels) + conv(c, 1, pixels * s * s);
    2 * madds
}
