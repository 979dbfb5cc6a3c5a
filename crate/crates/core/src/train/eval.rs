use std::path::Path;

use log::warn;
use rayon::prelude::*;

use super::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::error::{Error, Result};
use crate::lf::{bicubic_resize, LightField, ResizeFactor, SceneSet};
use crate::model::{bicubic_upsample, forward, ModelConfig, ModelParams, MIN_LR_EXTENT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewScore {
    pub u: usize,
    pub v: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScores {
    pub name: String,
    pub views: Vec<ViewScore>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub scenes: Vec<SceneScores>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn count(&self) -> usize {
        self.scenes.iter().map(|s| s.views.len()).sum()
    }

    fn mean(&self, f: impl Fn(&ViewScore) -> f64) -> f64 {
        let n = self.count();
        if n == 0 {
            return f64::NAN;
        }
        self.scenes.iter().flat_map(|s| &s.views).map(f).sum::<f64>() / n as f64
    }

    /// Flat mean over every scored view of every scene.
    pub fn mean_psnr(&self) -> f64 {
        self.mean(|v| v.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|v| v.ssim)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,u,v,psnr,ssim\n");
        for sc in &self.scenes {
            for v in &sc.views {
                s.push_str(&format!("{},{},{},{:.6},{:.6}\n", sc.name, v.u, v.v, v.psnr, v.ssim));
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// PSNR and SSIM of every view of `sr` against `hr`.
pub fn score_views(name: &str, sr: &LightField, hr: &LightField) -> Result<SceneScores> {
    if sr.samples().shape() != hr.samples().shape() {
        return Err(Error::shape(format!(
            "{name}: prediction {:?} does not match reference {:?}",
            sr.samples().shape(),
            hr.samples().shape()
        )));
    }
    let mut views = Vec::new();
    for u in 0..hr.u_views() {
        for v in 0..hr.v_views() {
            let (a, b) = (sr.view(u, v)?, hr.view(u, v)?);
            views.push(ViewScore { u, v, psnr: psnr(&a, &b)?, ssim: ssim(&a, &b)? });
        }
    }
    Ok(SceneScores { name: name.to_string(), views })
}

/// HR crop to a multiple of `s` and its bicubic LR, or `None` with a reason
/// when the scene is too small to score.
pub fn prepare_scene(lf: &LightField, s: usize) -> Result<std::result::Result<(LightField, LightField), String>> {
    let (h, w) = (lf.height() / s * s, lf.width() / s * s);
    if h / s < MIN_LR_EXTENT || w / s < MIN_LR_EXTENT || h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Ok(Err(format!(
            "{}x{} is too small at scale {s} (LR must be at least {MIN_LR_EXTENT}x{MIN_LR_EXTENT})",
            lf.height(),
            lf.width()
        )));
    }
    let hr = lf.crop(0, 0, h, w)?;
    let lr = hr.map_views(|v| bicubic_resize(v, ResizeFactor::down(s as u32)))?;
    Ok(Ok((hr, lr)))
}

fn evaluate_with(
    scenes: &SceneSet,
    s: usize,
    sr: impl Fn(&LightField) -> Result<LightField> + Sync,
) -> Result<MetricReport> {
    let results: Vec<Result<std::result::Result<SceneScores, String>>> = scenes
        .scenes()
        .par_iter()
        .map(|(name, lf)| match prepare_scene(lf, s)? {
            Err(reason) => Ok(Err(format!("skipped scene {name}: {reason}"))),
            Ok((hr, lr)) => Ok(Ok(score_views(name, &sr(&lr)?, &hr)?)),
        })
        .collect();
    let mut report = MetricReport::default();
    for r in results {
        match r? {
            Ok(sc) => report.scenes.push(sc),
            Err(w) => {
                warn!("{w}");
                report.warnings.push(w);
            }
        }
    }
    Ok(report)
}

/// Scores the network on every scene: HR cropped to a multiple of the
/// scale, LR by bicubic downsampling, output clamped to `[0, 1]`.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, scenes: &SceneSet) -> Result<MetricReport> {
    params.check(cfg)?;
    for (name, lf) in scenes.scenes() {
        if lf.angular()? != cfg.angular || lf.channels() != 1 {
            return Err(Error::shape(format!(
                "scene {name} is {:?}, model expects {a}x{a} single-channel views",
                lf.samples().shape(),
                a = cfg.angular
            )));
        }
    }
    evaluate_with(scenes, cfg.scale, |lr| forward(lr, params, cfg))
}

/// Same protocol with plain bicubic upsampling as the predictor.
pub fn evaluate_bicubic(scenes: &SceneSet, s: usize) -> Result<MetricReport> {
    evaluate_with(scenes, s, |lr| Ok(bicubic_upsample(lr, s)?.clamped()))
}
