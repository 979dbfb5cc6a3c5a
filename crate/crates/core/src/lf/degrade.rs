use log::warn;

use super::{bicubic_resize, LightField, ResizeFactor};
use crate::error::{Error, Result};

/// Aligned low/high resolution crops of the same scene region.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: LightField,
    pub hr: LightField,
    pub scale: usize,
    /// Top-left corner of the crop in the HR image.
    pub origin: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegradeConfig {
    pub scale: usize,
    /// HR crop side; `32 * scale` gives 32x32 LR patches.
    pub hr_crop: usize,
    /// Grid stride in HR pixels.
    pub stride: usize,
}

impl DegradeConfig {
    pub fn new(scale: usize) -> Self {
        DegradeConfig { scale, hr_crop: 32 * scale, stride: 32 }
    }

    pub fn with_lr_patch(scale: usize, lr_patch: usize, stride: usize) -> Self {
        DegradeConfig { scale, hr_crop: lr_patch * scale, stride }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Degraded {
    pub pairs: Vec<PatchPair>,
    pub warnings: Vec<String>,
}

/// Window origins along an axis of length `len`: `0, stride, ...`, with the
/// last window clamped so it ends at the border. Empty if `len < crop`.
pub fn patch_positions(len: usize, crop: usize, stride: usize) -> Vec<usize> {
    if len < crop || crop == 0 {
        return Vec::new();
    }
    let last = len - crop;
    let mut out: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *out.last().unwrap_or(&0) != last {
        out.push(last);
    }
    out
}

/// Crops HR patches on a grid and bicubically downsamples every view of each
/// patch by `1 / scale` to form the LR input.
pub fn degrade(lf: &LightField, cfg: &DegradeConfig) -> Result<Degraded> {
    if cfg.scale == 0 || cfg.hr_crop == 0 || !cfg.hr_crop.is_multiple_of(cfg.scale) {
        return Err(Error::config(format!(
            "HR crop {} must be a positive multiple of scale {}",
            cfg.hr_crop, cfg.scale
        )));
    }
    lf.angular()?;
    let mut out = Degraded::default();
    let ys = patch_positions(lf.height(), cfg.hr_crop, cfg.stride);
    let xs = patch_positions(lf.width(), cfg.hr_crop, cfg.stride);
    if ys.is_empty() || xs.is_empty() {
        let msg = format!(
            "light field {}x{} is smaller than the {}x{} crop; no patches",
            lf.height(),
            lf.width(),
            cfg.hr_crop,
            cfg.hr_crop
        );
        warn!("{msg}");
        out.warnings.push(msg);
        return Ok(out);
    }
    let down = ResizeFactor::down(cfg.scale as u32);
    for &y in &ys {
        for &x in &xs {
            let hr = lf.crop(y, x, cfg.hr_crop, cfg.hr_crop)?;
            let lr = hr.map_views(|v| bicubic_resize(v, down))?;
            out.pairs.push(PatchPair { lr, hr, scale: cfg.scale, origin: (y, x) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_clamp_last_window() {
        assert_eq!(patch_positions(96, 64, 32), vec![0, 32]);
        assert_eq!(patch_positions(64, 64, 32), vec![0]);
        assert_eq!(patch_positions(100, 64, 32), vec![0, 32, 36]);
        assert!(patch_positions(63, 64, 32).is_empty());
    }

    #[test]
    fn small_image_yields_warning() {
        let lf = LightField::from_fn([2, 2, 1, 10, 10], |_| 0.5).unwrap();
        let d = degrade(&lf, &DegradeConfig::new(2)).unwrap();
        assert!(d.pairs.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }
}
