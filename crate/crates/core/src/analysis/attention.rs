use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::lf::io::write_pgm;
use crate::lf::LightField;
use crate::model::{forward_with_attention, AngularAttention, ForwardOptions, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Weight above which a view counts as attending to another.
pub const FIG_THRESHOLD: f64 = 0.025;

/// Attention weights of one head of one angular block at one spatial
/// position, `[A^2, A^2]` (row = query view).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub block: usize,
    pub head: usize,
    /// `(row, column)` in the LR patch.
    pub position: (usize, usize),
    pub matrix: Tensor,
}

/// Splits recorded `[H * W, heads, N, N]` weights into per-position,
/// per-head records. `width` is the patch width.
pub fn records_from_trace(attn: &[AngularAttention], width: usize) -> Result<Vec<AttentionRecord>> {
    let mut out = Vec::new();
    for a in attn {
        let &[hw, heads, n, n2] = a.probs.shape() else {
            return Err(Error::shape(format!("attention weights must be 4-D, got {:?}", a.probs.shape())));
        };
        if n != n2 || width == 0 || hw % width != 0 {
            return Err(Error::shape(format!(
                "attention weights {:?} do not fit a patch of width {width}",
                a.probs.shape()
            )));
        }
        let data = a.probs.data();
        for pos in 0..hw {
            for head in 0..heads {
                let off = (pos * heads + head) * n * n;
                out.push(AttentionRecord {
                    block: a.block,
                    head,
                    position: (pos / width, pos % width),
                    matrix: Tensor::new(vec![n, n], data[off..off + n * n].to_vec())?,
                });
            }
        }
    }
    Ok(out)
}

/// Runs the network on `patch` (`[A, A, 1, H, W]` LR views) and returns the
/// weights every angular block used, one record per position and head.
/// Empty, with a warning, when angular Transformers are disabled.
pub fn capture_attention(params: &ModelParams, cfg: &ModelConfig, patch: &LightField) -> Result<Vec<AttentionRecord>> {
    if !cfg.use_ang_transformer {
        warn!("angular Transformers are disabled; there is no attention to capture");
        return Ok(Vec::new());
    }
    let opts = ForwardOptions { record_attention: true };
    let (_, attn) = forward_with_attention(patch, params, cfg, opts)?;
    records_from_trace(&attn, patch.width())
}

pub fn records_for_block(records: &[AttentionRecord], block: usize) -> Vec<AttentionRecord> {
    records.iter().filter(|r| r.block == block).cloned().collect()
}

/// Rectangle of spatial positions `[y0, y0 + h) x [x0, x0 + w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Region {
    pub fn new(y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Region { y0, x0, h, w }
    }

    pub fn contains(&self, (y, x): (usize, usize)) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }
}

/// Fraction of positions where view `p` gives view `q` a weight above the
/// threshold, averaged over heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAngularMap {
    pub angular: usize,
    /// `[A^2, A^2]`, row `p`, column `q`.
    pub ratios: Tensor,
}

impl LocalAngularMap {
    pub fn ratio(&self, p: usize, q: usize) -> f64 {
        let n = self.angular * self.angular;
        self.ratios.data()[p * n + q]
    }

    /// `A x A` tiles of `A x A` pixels: tile `p = (pu, pv)` holds ratio
    /// `(p, q)` at pixel `q = (qu, qv)`, i.e. image pixel
    /// `(pu * A + qu, pv * A + qv)`.
    pub fn image(&self) -> Tensor {
        let a = self.angular;
        let side = a * a;
        Tensor::from_fn(&[side, side], |i| {
            let (pu, qu) = (i[0] / a, i[0] % a);
            let (pv, qv) = (i[1] / a, i[1] % a);
            self.ratio(pu * a + pv, qu * a + qv)
        })
        .expect("non-empty map")
    }

    /// Variance of the ratios within each tile, averaged over tiles.
    pub fn mean_tile_variance(&self) -> f64 {
        let n = self.angular * self.angular;
        let per_tile: f64 = self
            .ratios
            .data()
            .chunks(n)
            .map(|row| {
                let mean = row.iter().sum::<f64>() / n as f64;
                row.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64
            })
            .sum();
        per_tile / n as f64
    }

    /// The ratio matrix, one row per line, space separated.
    pub fn to_text(&self) -> String {
        let n = self.angular * self.angular;
        let mut s = String::new();
        for row in self.ratios.data().chunks(n) {
            let line: Vec<String> = row.iter().map(|r| format!("{r:.6}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let img = self.image();
        write_pgm(path, img.shape()[0], img.shape()[1], img.data())
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Local angular attention over the records of a single block whose
/// positions fall inside `region`.
pub fn local_angular_attention(records: &[AttentionRecord], threshold: f64, region: Region) -> Result<LocalAngularMap> {
    let inside: Vec<&AttentionRecord> = records.iter().filter(|r| region.contains(r.position)).collect();
    if region.h == 0 || region.w == 0 || inside.is_empty() {
        return Err(Error::Usage(format!("no attention records inside region {region:?}")));
    }
    let block = inside[0].block;
    if inside.iter().any(|r| r.block != block) {
        return Err(Error::Usage("records span several blocks; select one with records_for_block".into()));
    }
    let n = inside[0].matrix.shape()[0];
    let a = (n as f64).sqrt().round() as usize;
    if a * a != n || inside.iter().any(|r| r.matrix.shape() != [n, n]) {
        return Err(Error::shape(format!("attention matrices must be square with A^2 rows, got {n}")));
    }
    let heads: Vec<usize> = {
        let mut h: Vec<usize> = inside.iter().map(|r| r.head).collect();
        h.sort_unstable();
        h.dedup();
        h
    };
    let mut ratios = vec![0.0; n * n];
    for &head in &heads {
        let mine: Vec<&&AttentionRecord> = inside.iter().filter(|r| r.head == head).collect();
        let mut counts = vec![0usize; n * n];
        for r in &mine {
            for (c, &wv) in counts.iter_mut().zip(r.matrix.data()) {
                if wv > threshold {
                    *c += 1;
                }
            }
        }
        for (acc, c) in ratios.iter_mut().zip(counts) {
            *acc += c as f64 / mine.len() as f64;
        }
    }
    ratios.iter_mut().for_each(|r| *r /= heads.len() as f64);
    Ok(LocalAngularMap { angular: a, ratios: Tensor::new(vec![n, n], ratios)? })
}
