//! Light-field data: containers, file formats, resampling, patches and
//! synthetic scenes.

mod degrade;
pub mod io;
mod resize;
mod synth;

use std::collections::HashSet;
use std::path::Path;

pub use degrade::{degrade, patch_positions, DegradeConfig, Degraded, PatchPair};
pub use io::{load_lf, save_lf};
pub use resize::{bicubic_resize, catmull_rom, sample_bicubic, ResizeFactor};
pub use synth::{synth_lf, synth_scene_set};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A grid of sub-aperture images stored as `[U, V, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    samples: Tensor,
}

/// ITU-R BT.601 luma.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

impl LightField {
    pub fn new(samples: Tensor) -> Result<Self> {
        if samples.ndim() != 5 {
            return Err(Error::shape(format!(
                "light field samples must be [U, V, C, H, W], got {:?}",
                samples.shape()
            )));
        }
        if !samples.all_finite() {
            return Err(Error::numeric("light field contains non-finite samples"));
        }
        Ok(LightField { samples })
    }

    pub fn from_fn(extents: [usize; 5], f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        LightField::new(Tensor::from_fn(&extents, f)?)
    }

    /// Builds a single-channel light field from `a * a` row-major views of
    /// `h * w` samples each.
    pub fn from_views(a: usize, h: usize, w: usize, views: Vec<Vec<f64>>) -> Result<Self> {
        if views.len() != a * a || views.iter().any(|v| v.len() != h * w) {
            return Err(Error::shape(format!("expected {} views of {h}x{w}", a * a)));
        }
        LightField::new(Tensor::new(vec![a, a, 1, h, w], views.concat())?)
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn into_samples(self) -> Tensor {
        self.samples
    }

    pub fn u_views(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn v_views(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.samples.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.samples.shape()[4]
    }

    /// Angular size `A` of a square view grid.
    pub fn angular(&self) -> Result<usize> {
        if self.u_views() != self.v_views() {
            return Err(Error::shape(format!(
                "pipeline needs a square view grid, got {}x{}",
                self.u_views(),
                self.v_views()
            )));
        }
        Ok(self.u_views())
    }

    fn view_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Samples of view `(u, v)` as `[C, H, W]`.
    pub fn view(&self, u: usize, v: usize) -> Result<Tensor> {
        if u >= self.u_views() || v >= self.v_views() {
            return Err(Error::Bounds(format!("view ({u}, {v}) outside {}x{} grid", self.u_views(), self.v_views())));
        }
        let n = self.view_len();
        let off = (u * self.v_views() + v) * n;
        Tensor::new(vec![self.channels(), self.height(), self.width()], self.samples.data()[off..off + n].to_vec())
    }

    pub fn view_slice(&self, u: usize, v: usize) -> &[f64] {
        let n = self.view_len();
        let off = (u * self.v_views() + v) * n;
        &self.samples.data()[off..off + n]
    }

    /// Applies `f` to every `[C, H, W]` view; all outputs must share a shape.
    pub fn map_views(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<LightField> {
        let mut out = Vec::new();
        let mut shape: Option<Vec<usize>> = None;
        for u in 0..self.u_views() {
            for v in 0..self.v_views() {
                let t = f(&self.view(u, v)?)?;
                match &shape {
                    None => shape = Some(t.shape().to_vec()),
                    Some(s) if s.as_slice() != t.shape() => {
                        return Err(Error::shape("view mapping produced inconsistent shapes"))
                    }
                    _ => {}
                }
                out.extend_from_slice(t.data());
            }
        }
        let s = shape.unwrap_or_default();
        LightField::new(Tensor::new(vec![self.u_views(), self.v_views(), s[0], s[1], s[2]], out)?)
    }

    /// Spatial crop shared by all views.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<LightField> {
        if h == 0 || w == 0 || y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::Bounds(format!(
                "crop {h}x{w} at ({y0}, {x0}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        self.map_views(|view| {
            let c = view.shape()[0];
            let wid = view.shape()[2];
            let mut out = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                for y in y0..y0 + h {
                    let off = (ch * view.shape()[1] + y) * wid + x0;
                    out.extend_from_slice(&view.data()[off..off + w]);
                }
            }
            Tensor::new(vec![c, h, w], out)
        })
    }

    pub fn clamped(&self) -> LightField {
        LightField { samples: self.samples.map(|x| x.clamp(0.0, 1.0)) }
    }

    /// Permutes the angular grid: output view `i` (row-major) is input view
    /// `perm[i]`.
    pub fn permute_views(&self, perm: &[usize]) -> Result<LightField> {
        let n = self.u_views() * self.v_views();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("{perm:?} is not a permutation of {n} views")));
        }
        let len = self.view_len();
        let data = perm.iter().flat_map(|&p| self.samples.data()[p * len..(p + 1) * len].iter().copied()).collect();
        LightField::new(Tensor::new(self.samples.shape().to_vec(), data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Named scenes with unique names.
#[derive(Debug, Clone)]
pub struct SceneSet {
    scenes: Vec<(String, LightField)>,
    pub split: Split,
}

impl SceneSet {
    pub fn new(scenes: Vec<(String, LightField)>, split: Split) -> Result<Self> {
        let mut names = HashSet::new();
        for (name, _) in &scenes {
            if !names.insert(name.as_str()) {
                return Err(Error::config(format!("duplicate scene name `{name}`")));
            }
        }
        Ok(SceneSet { scenes, split })
    }

    /// Every `.lf` file and PGM view directory directly under `dir`, by name.
    pub fn load_dir(dir: &Path, split: Split) -> Result<Self> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "lf") || (p.is_dir() && p.join("meta.txt").is_file()))
            .collect();
        entries.sort();
        let scenes = entries
            .into_iter()
            .map(|p| {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                load_lf(&p).map(|lf| (name, lf))
            })
            .collect::<Result<Vec<_>>>()?;
        SceneSet::new(scenes, split)
    }

    pub fn scenes(&self) -> &[(String, LightField)] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}
