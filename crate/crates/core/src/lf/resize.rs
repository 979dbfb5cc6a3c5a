//! Catmull-Rom bicubic resampling (a = -0.5), edge-clamped, with the
//! half-pixel (align-corners = false) sampling grid.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`.
pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Rational resize factor `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeFactor {
    pub num: u32,
    pub den: u32,
}

impl ResizeFactor {
    pub fn up(s: u32) -> Self {
        ResizeFactor { num: s, den: 1 }
    }

    pub fn down(s: u32) -> Self {
        ResizeFactor { num: 1, den: s }
    }

    pub fn ratio(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(len * factor)`.
    pub fn apply(self, len: usize) -> usize {
        (len as f64 * self.ratio()).round() as usize
    }
}

/// Four taps around `pos` (source coordinates), edge-clamped, as
/// `(index, weight)`, plus the index of the nearest tap.
fn taps(pos: f64, len: usize) -> ([(usize, f64); 4], usize) {
    let base = pos.floor();
    let frac = pos - base;
    let base = base as isize;
    let clamp = |i: isize| i.clamp(0, len as isize - 1) as usize;
    let t = [
        (clamp(base - 1), catmull_rom(frac + 1.0)),
        (clamp(base), catmull_rom(frac)),
        (clamp(base + 1), catmull_rom(1.0 - frac)),
        (clamp(base + 2), catmull_rom(2.0 - frac)),
    ];
    let nearest = if frac < 0.5 { t[1].0 } else { t[2].0 };
    (t, nearest)
}

/// Weighted tap sum written as `x_ref + sum w (x - x_ref)`, which equals the
/// plain sum because the weights sum to one, and reproduces constant signals
/// without rounding.
fn interp(taps: &[(usize, f64); 4], nearest: usize, at: impl Fn(usize) -> f64) -> f64 {
    let r = at(nearest);
    r + taps.iter().map(|&(i, w)| w * (at(i) - r)).sum::<f64>()
}

fn resize_lines(
    src: &[f64],
    lines: usize,
    len: usize,
    stride: usize,
    step: usize,
    out_len: usize,
    scale: f64,
) -> Vec<Vec<f64>> {
    let plan: Vec<_> = (0..out_len).map(|i| taps((i as f64 + 0.5) / scale - 0.5, len)).collect();
    (0..lines)
        .map(|l| {
            let base = l * stride;
            plan.iter().map(|(t, n)| interp(t, *n, |i| src[base + i * step])).collect()
        })
        .collect()
}

/// Resizes each channel of a `[C, H, W]` image by `factor` along both axes.
///
/// Output extents are `round(H * factor)` and `round(W * factor)`; sample
/// `i` reads the source at `(i + 0.5) / factor - 0.5`.
pub fn bicubic_resize(img: &Tensor, factor: ResizeFactor) -> Result<Tensor> {
    if img.ndim() != 3 {
        return Err(Error::shape(format!("resize expects [C, H, W], got {:?}", img.shape())));
    }
    if factor.num == 0 || factor.den == 0 {
        return Err(Error::Size(format!("invalid resize factor {}/{}", factor.num, factor.den)));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (oh, ow) = (factor.apply(h), factor.apply(w));
    if oh < 1 || ow < 1 {
        return Err(Error::Size(format!("resizing {h}x{w} by {}/{} gives an empty image", factor.num, factor.den)));
    }
    let scale = factor.ratio();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        // columns: resize along H for every x
        let cols = resize_lines(plane, w, h, 1, w, oh, scale);
        let mut tmp = vec![0.0; oh * w];
        for (x, col) in cols.iter().enumerate() {
            for (y, &v) in col.iter().enumerate() {
                tmp[y * w + x] = v;
            }
        }
        // rows: resize along W
        for row in resize_lines(&tmp, oh, w, w, 1, ow, scale) {
            out.extend(row);
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Catmull-Rom sample of an `h x w` plane at fractional `(y, x)`.
///
/// Integer coordinates reproduce the stored sample exactly.
pub fn sample_bicubic(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (ty, ny) = taps(y, h);
    let (tx, nx) = taps(x, w);
    let row = |r: usize| interp(&tx, nx, |c| plane[r * w + c]);
    interp(&ty, ny, row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.0), 0.0);
        assert_eq!(catmull_rom(0.5), 0.5625);
        assert_eq!(catmull_rom(1.5), -0.0625);
    }

    #[test]
    fn extents_round() {
        let img = Tensor::zeros(&[1, 5, 3]).unwrap();
        let out = bicubic_resize(&img, ResizeFactor::down(2)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2]);
        let tiny = Tensor::zeros(&[1, 1, 1]).unwrap();
        assert!(matches!(bicubic_resize(&tiny, ResizeFactor::down(4)), Err(Error::Size(_))));
    }

    #[test]
    fn integer_sampling_is_exact() {
        let plane: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(sample_bicubic(&plane, 4, 5, y as f64, x as f64), plane[y * 5 + x]);
            }
        }
    }
}
