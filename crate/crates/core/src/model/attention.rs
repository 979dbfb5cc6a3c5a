use super::params::ParamVars;
use crate::error::{Error, Result};
use crate::tensor::{AttentionOutput, Var};

/// Per-head projections `[heads, d/heads, d/heads]` and the output
/// projection `[d, d]`.
#[derive(Clone)]
pub struct MhsaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

impl MhsaWeights {
    /// Reads `{prefix}.attn.{wq,wk,wv,wo}`.
    pub fn from_params(p: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(MhsaWeights {
            wq: p.get(&format!("{prefix}.attn.wq"))?.clone(),
            wk: p.get(&format!("{prefix}.attn.wk"))?.clone(),
            wv: p.get(&format!("{prefix}.attn.wv"))?.clone(),
            wo: p.get(&format!("{prefix}.attn.wo"))?.clone(),
        })
    }
}

/// `[b, n, d] -> [b, heads, n, d/heads]`.
fn split_heads(x: &Var, heads: usize) -> Result<Var> {
    let s = x.shape();
    let (b, n, d) = (s[0], s[1], s[2]);
    x.reshape(&[b, n, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// Multi-head self-attention over `[b, n, d]` tokens.
///
/// Head `h` projects its `d/heads` slice of each operand by its own
/// `W_{Q,h}`, `W_{K,h}`, `W_{V,h}`, attends with scale `1/sqrt(d/heads)`, and
/// the concatenated heads are projected by `W_O`. When `keep_probs` is set
/// the `[b, heads, n, n]` weights used are returned as well.
pub fn mhsa(q: &Var, k: &Var, v: &Var, w: &MhsaWeights, heads: usize, keep_probs: bool) -> Result<AttentionOutput> {
    let s = q.shape();
    if s.len() != 3 || k.shape() != s || v.shape() != s {
        return Err(Error::shape(format!(
            "mhsa expects three equal [b, n, d] operands, got {:?}, {:?}, {:?}",
            s,
            k.shape(),
            v.shape()
        )));
    }
    let (b, n, d) = (s[0], s[1], s[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("token dim {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let expect = [heads, dh, dh];
    for (name, t) in [("W_Q", &w.wq), ("W_K", &w.wk), ("W_V", &w.wv)] {
        if t.shape() != expect {
            return Err(Error::shape(format!("{name} is {:?}, expected {expect:?}", t.shape())));
        }
    }
    let qh = split_heads(q, heads)?.matmul(&w.wq)?;
    let kh = split_heads(k, heads)?.matmul(&w.wk)?;
    let vh = split_heads(v, heads)?.matmul(&w.wv)?;
    let att = Var::attention(&qh, &kh, &vh, 1.0 / (dh as f64).sqrt(), keep_probs)?;
    let merged = att.out.permute_reshape(&[0, 2, 1, 3], &[b, n, d])?;
    Ok(AttentionOutput { out: merged.linear(&w.wo, None)?, probs: att.probs })
}
