//! Deterministic synthetic light fields: a band-limited random texture seen
//! from an `A x A` grid of views translated in proportion to their angular
//! offset (a fronto-parallel plane at constant disparity).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_bicubic, LightField, SceneSet, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const COMPONENTS: usize = 24;
const MIN_FREQ: f64 = 0.03;
const MAX_FREQ: f64 = 0.24;

/// Sum of random plane waves with spatial frequency in
/// `[MIN_FREQ, MAX_FREQ]` cycles/pixel, rescaled to `[0.1, 0.9]`.
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..COMPONENTS)
        .map(|_| {
            let f = rng.random_range(MIN_FREQ..MAX_FREQ);
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..1.0);
            (2.0 * PI * f * theta.sin(), 2.0 * PI * f * theta.cos(), phase, amp)
        })
        .collect();
    let raw: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            waves.iter().map(|&(ky, kx, p, a)| a * (ky * y + kx * x + p).sin()).sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    raw.into_iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect()
}

/// Renders view `(u, v)` as the texture translated by
/// `(disparity * (u - c), disparity * (v - c))` rows/columns, `c = (A - 1) / 2`,
/// so `u` moves content vertically and `v` horizontally.
pub fn synth_lf(seed: u64, a: usize, h: usize, w: usize, disparity: f64) -> Result<LightField> {
    if a == 0 || h == 0 || w == 0 {
        return Err(Error::Size(format!("cannot synthesize a {a}x{a}x{h}x{w} light field")));
    }
    let c = (a as f64 - 1.0) / 2.0;
    let max_shift = disparity.abs() * c;
    if !disparity.is_finite() || max_shift >= h.min(w) as f64 / 4.0 {
        return Err(Error::config(format!(
            "disparity {disparity} shifts views by up to {max_shift} px, too much for {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tex = texture(&mut rng, h, w);
    let mut data = Vec::with_capacity(a * a * h * w);
    for u in 0..a {
        for v in 0..a {
            let dy = disparity * (u as f64 - c);
            let dx = disparity * (v as f64 - c);
            for y in 0..h {
                for x in 0..w {
                    let s = sample_bicubic(&tex, h, w, y as f64 - dy, x as f64 - dx);
                    data.push(s.clamp(0.0, 1.0));
                }
            }
        }
    }
    LightField::new(Tensor::new(vec![a, a, 1, h, w], data)?)
}

/// `count` scenes with seeds `seed, seed + 1, ...` and disparities spread
/// evenly over `[d_min, d_max]`.
pub fn synth_scene_set(
    seed: u64,
    count: usize,
    a: usize,
    h: usize,
    w: usize,
    disparity: (f64, f64),
    split: Split,
) -> Result<SceneSet> {
    let scenes = (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let d = disparity.0 + t * (disparity.1 - disparity.0);
            synth_lf(seed + i as u64, a, h, w, d).map(|lf| (format!("synth_{:03}", seed + i as u64), lf))
        })
        .collect::<Result<Vec<_>>>()?;
    SceneSet::new(scenes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_views_match() {
        let lf = synth_lf(3, 3, 16, 16, 0.0).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(lf.view_slice(u, v), lf.view_slice(1, 1));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_lf(11, 3, 12, 12, 0.5).unwrap(), synth_lf(11, 3, 12, 12, 0.5).unwrap());
        assert_ne!(synth_lf(11, 3, 12, 12, 0.5).unwrap(), synth_lf(12, 3, 12, 12, 0.5).unwrap());
    }

    #[test]
    fn excessive_disparity_is_rejected() {
        assert!(synth_lf(0, 5, 16, 16, 2.0).is_err());
        assert!(synth_lf(0, 5, 16, 16, 1.9).is_ok());
    }

    #[test]
    fn integer_shift_in_interior() {
        let lf = synth_lf(5, 5, 24, 24, 1.0).unwrap();
        let (h, w) = (24, 24);
        let centre = lf.view_slice(2, 2);
        // u = 4 is two rows down, v = 4 two columns right
        let down = lf.view_slice(4, 2);
        let right = lf.view_slice(2, 4);
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                assert!((down[y * w + x] - centre[(y - 2) * w + x]).abs() <= 1e-6);
                assert!((right[y * w + x] - centre[y * w + x - 2]).abs() <= 1e-6);
            }
        }
    }
}
