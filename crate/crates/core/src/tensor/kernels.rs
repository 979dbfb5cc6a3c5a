//! Slice-level forward and backward kernels.
//!
//! Parallel kernels split work by disjoint output chunks, and every output
//! element is reduced by exactly one thread in a fixed order, so results do
//! not depend on the thread count.

use rayon::prelude::*;

use super::dense::{numel, strides};
use crate::error::{Error, Result};

/// Index value marking a gathered element that reads as zero (padding).
pub(crate) const PAD: usize = usize::MAX;

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

pub(crate) fn for_each_chunk<F>(out: &mut [f64], chunk: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if work < PAR_THRESHOLD {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Broadcast layout of a batched matrix product `[..., m, k] x [..., k, n]`.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// For each output batch item, the batch item of `a` / `b` it reads.
    pub a_of: Vec<usize>,
    pub b_of: Vec<usize>,
    pub a_batches: usize,
    pub b_batches: usize,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape(format!("matmul needs rank >= 2 operands, got {a:?} and {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims differ: {a:?} x {b:?}")));
        }
        let la = &a[..a.len() - 2];
        let lb = &b[..b.len() - 2];
        let rank = la.len().max(lb.len());
        let pad = |l: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - l.len()];
            v.extend_from_slice(l);
            v
        };
        let (pa, pb) = (pad(la), pad(lb));
        let mut lead = Vec::with_capacity(rank);
        for (&da, &db) in pa.iter().zip(&pb) {
            if da != db && da != 1 && db != 1 {
                return Err(Error::shape(format!("matmul batch dims do not broadcast: {a:?} x {b:?}")));
            }
            lead.push(da.max(db));
        }
        let (sa, sb) = (strides(&pa), strides(&pb));
        let batches = numel(&lead);
        let mut a_of = Vec::with_capacity(batches);
        let mut b_of = Vec::with_capacity(batches);
        let lead_strides = strides(&lead);
        for t in 0..batches {
            let (mut ia, mut ib) = (0, 0);
            for ax in 0..rank {
                let i = (t / lead_strides[ax]) % lead[ax];
                if pa[ax] != 1 {
                    ia += i * sa[ax];
                }
                if pb[ax] != 1 {
                    ib += i * sb[ax];
                }
            }
            a_of.push(ia);
            b_of.push(ib);
        }
        let mut out_shape = lead;
        out_shape.extend_from_slice(&[m, n]);
        Ok(MatmulPlan { out_shape, m, k, n, a_of, b_of, a_batches: numel(la), b_batches: numel(lb) })
    }

    fn groups(of: &[usize], count: usize) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); count];
        for (t, &i) in of.iter().enumerate() {
            g[i].push(t);
        }
        g
    }
}

/// `out += a[m,k] * b[k,n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m,n] * b[k,n]^T`
fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(arow, brow);
        }
    }
}

/// `out += a[m,k]^T * b[m,n]`
fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul_forward(plan: &MatmulPlan, a: &[f64], b: &[f64]) -> Vec<f64> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![0.0; plan.a_of.len() * m * n];
    let work = out.len() * k;
    for_each_chunk(&mut out, m * n, work, |t, c| {
        let ia = plan.a_of[t];
        let ib = plan.b_of[t];
        gemm_acc(&a[ia * m * k..(ia + 1) * m * k], &b[ib * k * n..(ib + 1) * k * n], c, m, k, n);
    });
    out
}

pub(crate) fn matmul_backward(
    plan: &MatmulPlan,
    a: &[f64],
    b: &[f64],
    grad: &[f64],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let work = grad.len() * k;
    let ga = need_a.then(|| {
        let groups = MatmulPlan::groups(&plan.a_of, plan.a_batches);
        let mut ga = vec![0.0; plan.a_batches * m * k];
        for_each_chunk(&mut ga, m * k, work, |ia, c| {
            for &t in &groups[ia] {
                let ib = plan.b_of[t];
                gemm_nt_acc(&grad[t * m * n..(t + 1) * m * n], &b[ib * k * n..(ib + 1) * k * n], c, m, n, k);
            }
        });
        ga
    });
    let gb = need_b.then(|| {
        let groups = MatmulPlan::groups(&plan.b_of, plan.b_batches);
        let mut gb = vec![0.0; plan.b_batches * k * n];
        for_each_chunk(&mut gb, k * n, work, |ib, c| {
            for &t in &groups[ib] {
                let ia = plan.a_of[t];
                gemm_tn_acc(&a[ia * m * k..(ia + 1) * m * k], &grad[t * m * n..(t + 1) * m * n], c, m, k, n);
            }
        });
        gb
    });
    (ga, gb)
}

// ---------------------------------------------------------------------------
// softmax / layer norm / activations
// ---------------------------------------------------------------------------

pub(crate) fn softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub(crate) fn softmax_backward(y: &[f64], grad: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out.chunks_mut(d).zip(y.chunks(d)).zip(grad.chunks(d)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Normalized values and per-row inverse standard deviations.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, LayerNormCache)> {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = var + eps;
        if denom <= 0.0 {
            return Err(Error::numeric(format!(
                "layer norm over {d} channel(s) has zero variance and eps = {eps}; division guard"
            )));
        }
        let is = 1.0 / denom.sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gamma[c] + beta[c];
        }
    }
    Ok((out, LayerNormCache { xhat, inv_std }))
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gamma.len();
    let mut gx = vec![0.0; grad.len()];
    let mut gg = vec![0.0; d];
    let mut gb = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for (r, &is) in cache.inv_std.iter().enumerate() {
        let g = &grad[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for c in 0..d {
            dxhat[c] = g[c] * gamma[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
            gg[c] += g[c] * xh[c];
            gb[c] += g[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for c in 0..d {
            gx[r * d + c] = is * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    (gx, gg, gb)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

// ---------------------------------------------------------------------------
// 3x3 convolution (cross-correlation, zero padding 1)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
}

/// Valid output range `[lo, hi)` along an axis of extent `len` for tap `t`
/// (source index = out + t - 1).
fn tap_range(t: usize, len: usize) -> (usize, usize) {
    let lo = if t == 0 { 1 } else { 0 };
    let hi = if t == 2 { len.saturating_sub(1) } else { len };
    (lo, hi.max(lo))
}

pub(crate) fn conv3x3_forward(d: ConvDims, x: &[f64], k: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let ConvDims { n: _, ci, co, h, w } = d;
    let plane = h * w;
    let mut out = vec![0.0; d.n * co * plane];
    let work = out.len() * ci * 9;
    for_each_chunk(&mut out, plane, work, |t, o| {
        let (img, oc) = (t / co, t % co);
        if let Some(b) = bias {
            o.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..ci {
            let src = &x[(img * ci + ic) * plane..(img * ci + ic + 1) * plane];
            for ky in 0..3 {
                let (ylo, yhi) = tap_range(ky, h);
                for kx in 0..3 {
                    let wv = k[((oc * ci + ic) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = tap_range(kx, w);
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let orow = &mut o[y * w + xlo..y * w + xhi];
                        let srow = &src[sy * w + xlo + kx - 1..sy * w + xhi + kx - 1];
                        for (ov, &sv) in orow.iter_mut().zip(srow) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv3x3_backward_input(d: ConvDims, k: &[f64], grad: &[f64]) -> Vec<f64> {
    let ConvDims { n: _, ci, co, h, w } = d;
    let plane = h * w;
    let mut gx = vec![0.0; d.n * ci * plane];
    let work = gx.len() * co * 9;
    for_each_chunk(&mut gx, plane, work, |t, gxp| {
        let (img, ic) = (t / ci, t % ci);
        for oc in 0..co {
            let g = &grad[(img * co + oc) * plane..(img * co + oc + 1) * plane];
            for ky in 0..3 {
                let (ylo, yhi) = tap_range(ky, h);
                for kx in 0..3 {
                    let wv = k[((oc * ci + ic) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = tap_range(kx, w);
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let grow = &g[y * w + xlo..y * w + xhi];
                        let drow = &mut gxp[sy * w + xlo + kx - 1..sy * w + xhi + kx - 1];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    });
    gx
}

pub(crate) fn conv3x3_backward_kernel(d: ConvDims, x: &[f64], grad: &[f64]) -> Vec<f64> {
    let ConvDims { n, ci, co, h, w } = d;
    let plane = h * w;
    let mut gk = vec![0.0; co * ci * 9];
    let work = n * co * ci * 9 * plane;
    for_each_chunk(&mut gk, ci * 9, work, |oc, gko| {
        for img in 0..n {
            let g = &grad[(img * co + oc) * plane..(img * co + oc + 1) * plane];
            for ic in 0..ci {
                let src = &x[(img * ci + ic) * plane..(img * ci + ic + 1) * plane];
                for ky in 0..3 {
                    let (ylo, yhi) = tap_range(ky, h);
                    for kx in 0..3 {
                        let (xlo, xhi) = tap_range(kx, w);
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let sy = y + ky - 1;
                            let grow = &g[y * w + xlo..y * w + xhi];
                            let srow = &src[sy * w + xlo + kx - 1..sy * w + xhi + kx - 1];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gko[(ic * 3 + ky) * 3 + kx] += acc;
                    }
                }
            }
        }
    });
    gk
}

pub(crate) fn conv3x3_backward_bias(d: ConvDims, grad: &[f64]) -> Vec<f64> {
    let plane = d.h * d.w;
    let mut gb = vec![0.0; d.co];
    for img in 0..d.n {
        for (oc, b) in gb.iter_mut().enumerate() {
            *b += grad[(img * d.co + oc) * plane..(img * d.co + oc + 1) * plane].iter().sum::<f64>();
        }
    }
    gb
}

// ---------------------------------------------------------------------------
// fused scaled dot-product attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub n: usize,
    pub dk: usize,
    pub dv: usize,
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `[n, d] -> [d, n]`
fn transpose(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            t[j * n + i] = x[i * d + j];
        }
    }
    t
}

/// Scaled scores of query `qi` against all keys (`kt` is `[dk, n]`).
fn score_row(qi: &[f64], kt: &[f64], scale: f64, row: &mut [f64]) {
    let n = row.len();
    row.iter_mut().for_each(|s| *s = 0.0);
    for (p, &qv) in qi.iter().enumerate() {
        axpy(qv * scale, &kt[p * n..(p + 1) * n], row);
    }
}

/// One batch item of the forward pass. `probs`, when given, receives the
/// `[n, n]` weights.
#[allow(clippy::too_many_arguments)]
fn attention_item(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: AttnDims,
    scale: f64,
    out: &mut [f64],
    lse: &mut [f64],
    mut probs: Option<&mut [f64]>,
) {
    let AttnDims { n, dk, dv, .. } = d;
    let kt = transpose(k, n, dk);
    let vt = transpose(v, n, dv);
    let mut row = vec![0.0; n];
    for i in 0..n {
        score_row(&q[i * dk..(i + 1) * dk], &kt, scale, &mut row);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|s| *s *= inv);
        lse[i] = max + sum.ln();
        for c in 0..dv {
            out[i * dv + c] = dot(&row, &vt[c * n..(c + 1) * n]);
        }
        if let Some(p) = probs.as_deref_mut() {
            p[i * n..(i + 1) * n].copy_from_slice(&row);
        }
    }
}

/// Returns the attended values, the per-row log-sum-exp of the scaled
/// scores (enough to rebuild the weights in backward) and, if `keep_probs`,
/// the `[batch, n, n]` attention weights.
pub(crate) fn attention_forward(
    d: AttnDims,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    scale: f64,
    keep_probs: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let AttnDims { batch, n, dk, dv } = d;
    let mut out = vec![0.0; batch * n * dv];
    let mut lse = vec![0.0; batch * n];
    let mut probs = if keep_probs { vec![0.0; batch * n * n] } else { Vec::new() };
    let run = |b: usize, o: &mut [f64], l: &mut [f64], p: Option<&mut [f64]>| {
        let qb = &q[b * n * dk..(b + 1) * n * dk];
        let kb = &k[b * n * dk..(b + 1) * n * dk];
        let vb = &v[b * n * dv..(b + 1) * n * dv];
        attention_item(qb, kb, vb, d, scale, o, l, p);
    };
    let parallel = batch * n * n * (dk + dv) >= PAR_THRESHOLD;
    let mut prob_chunks: Vec<Option<&mut [f64]>> =
        if keep_probs { probs.chunks_mut(n * n).map(Some).collect() } else { (0..batch).map(|_| None).collect() };
    let items = out.chunks_mut(n * dv).zip(lse.chunks_mut(n)).zip(prob_chunks.iter_mut()).enumerate();
    if parallel {
        items.par_bridge().for_each(|(b, ((o, l), p))| run(b, o, l, p.take()));
    } else {
        items.for_each(|(b, ((o, l), p))| run(b, o, l, p.take()));
    }
    drop(prob_chunks);
    (out, lse, keep_probs.then_some(probs))
}

/// One batch item of the backward pass, row by row: each weight row is
/// rebuilt from `lse`, then contributes to `dq`, `dk` and `dv`.
#[allow(clippy::too_many_arguments)]
fn attention_item_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    lse: &[f64],
    grad: &[f64],
    d: AttnDims,
    scale: f64,
    gq: &mut [f64],
    gk: &mut [f64],
    gv: &mut [f64],
) {
    let AttnDims { n, dk, dv, .. } = d;
    let kt = transpose(k, n, dk);
    let vt = transpose(v, n, dv);
    let mut gkt = vec![0.0; dk * n];
    let mut gvt = vec![0.0; dv * n];
    let mut p = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for i in 0..n {
        score_row(&q[i * dk..(i + 1) * dk], &kt, scale, &mut p);
        p.iter_mut().for_each(|s| *s = (*s - lse[i]).exp());
        let gi = &grad[i * dv..(i + 1) * dv];
        // dV += p_i^T dO_i and dP_i = dO_i V^T
        ds.iter_mut().for_each(|s| *s = 0.0);
        for (c, &g) in gi.iter().enumerate() {
            axpy(g, &p, &mut gvt[c * n..(c + 1) * n]);
            axpy(g, &vt[c * n..(c + 1) * n], &mut ds);
        }
        let pd = dot(&ds, &p);
        for (s, &pv) in ds.iter_mut().zip(&p) {
            *s = pv * (*s - pd) * scale;
        }
        for c in 0..dk {
            gq[i * dk + c] = dot(&ds, &kt[c * n..(c + 1) * n]);
            axpy(q[i * dk + c], &ds, &mut gkt[c * n..(c + 1) * n]);
        }
    }
    gk.copy_from_slice(&transpose(&gkt, dk, n));
    gv.copy_from_slice(&transpose(&gvt, dv, n));
}

/// Gradients w.r.t. `q`, `k`, `v`; the weights are rebuilt from `lse`.
pub(crate) fn attention_backward(
    d: AttnDims,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    lse: &[f64],
    scale: f64,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttnDims { batch, n, dk, dv } = d;
    let mut gq = vec![0.0; batch * n * dk];
    let mut gk = vec![0.0; batch * n * dk];
    let mut gv = vec![0.0; batch * n * dv];
    let run = |b: usize, gqb: &mut [f64], gkb: &mut [f64], gvb: &mut [f64]| {
        attention_item_backward(
            &q[b * n * dk..(b + 1) * n * dk],
            &k[b * n * dk..(b + 1) * n * dk],
            &v[b * n * dv..(b + 1) * n * dv],
            &lse[b * n..(b + 1) * n],
            &grad[b * n * dv..(b + 1) * n * dv],
            d,
            scale,
            gqb,
            gkb,
            gvb,
        );
    };
    let items = gq.chunks_mut(n * dk).zip(gk.chunks_mut(n * dk)).zip(gv.chunks_mut(n * dv)).enumerate();
    if batch * n * n * (dk + dv) >= PAR_THRESHOLD {
        items.par_bridge().for_each(|(b, ((a, c), e))| run(b, a, c, e));
    } else {
        items.for_each(|(b, ((a, c), e))| run(b, a, c, e));
    }
    (gq, gk, gv)
}

// ---------------------------------------------------------------------------
// index maps for gather-style rearrangements
// ---------------------------------------------------------------------------

/// `[n, c, h, w] -> [n, 9c, h, w]`; block `g = 3 (r + 1) + (q + 1)` for
/// `(r, q)` in `{-1, 0, 1}^2` holds the input at `(row - r, col - q)`.
pub(crate) fn unfold3x3_index(n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n * 9 * c * h * w);
    for img in 0..n {
        for g in 0..9 {
            let r = g as isize / 3 - 1;
            let q = g as isize % 3 - 1;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let sy = y as isize - r;
                        let sx = x as isize - q;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            idx.push(PAD);
                        } else {
                            idx.push(((img * c + ch) * h + sy as usize) * w + sx as usize);
                        }
                    }
                }
            }
        }
    }
    idx
}

/// `[n, c*s*s, h, w] -> [n, c, s*h, s*w]` with input channel `c*s*s + dy*s + dx`
/// landing at `(y*s + dy, x*s + dx)`.
pub(crate) fn pixel_shuffle_index(n: usize, c: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let (oh, ow) = (h * s, w * s);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for img in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, dy, x, dx) = (oy / s, oy % s, ox / s, ox % s);
                    let ic = ch * s * s + dy * s + dx;
                    idx.push(((img * c * s * s + ic) * h + y) * w + x);
                }
            }
        }
    }
    idx
}

/// Inverse of [`pixel_shuffle_index`]: `[n, c, s*h, s*w] -> [n, c*s*s, h, w]`.
pub(crate) fn pixel_unshuffle_index(n: usize, c: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let (ih, iw) = (h * s, w * s);
    let mut idx = Vec::with_capacity(n * c * s * s * h * w);
    for img in 0..n {
        for ch in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    for y in 0..h {
                        for x in 0..w {
                            idx.push(((img * c + ch) * ih + y * s + dy) * iw + x * s + dx);
                        }
                    }
                }
            }
        }
    }
    idx
}

pub(crate) fn gather(src: &[f64], index: &[usize]) -> Vec<f64> {
    index.iter().map(|&i| if i == PAD { 0.0 } else { src[i] }).collect()
}

pub(crate) fn scatter_add(grad: &[f64], index: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (&i, &g) in index.iter().zip(grad) {
        if i != PAD {
            out[i] += g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_plan_maps_batches() {
        let p = MatmulPlan::new(&[2, 3, 4, 5], &[3, 5, 6]).unwrap();
        assert_eq!(p.out_shape, vec![2, 3, 4, 6]);
        assert_eq!(p.a_of, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(p.b_of, vec![0, 1, 2, 0, 1, 2]);
        assert!(MatmulPlan::new(&[2, 4, 5], &[3, 5, 6]).is_err());
        assert!(MatmulPlan::new(&[4, 5], &[4, 6]).is_err());
    }

    #[test]
    fn shuffle_and_unshuffle_are_inverse_maps() {
        let s = 3;
        let fwd = pixel_shuffle_index(2, 2, 2, 3, s);
        let inv = pixel_unshuffle_index(2, 2, 2, 3, s);
        for (i, &j) in inv.iter().enumerate() {
            assert_eq!(fwd[j], i);
        }
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_1).abs() < 1e-9);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
