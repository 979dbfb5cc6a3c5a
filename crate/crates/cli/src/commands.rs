use std::fs;
use std::path::{Path, PathBuf};

use lft_core::analysis::{capture_attention, epi_extract, local_angular_attention, records_for_block, EpiAxis, Region};
use lft_core::kv::{self, KvMap};
use lft_core::lf::io::write_pgm;
use lft_core::lf::{degrade, load_lf, save_lf, synth_scene_set, DegradeConfig, SceneSet, Split};
use lft_core::model::{forward, ModelConfig, ModelParams};
use lft_core::train::{evaluate, evaluate_bicubic, train, write_loss_csv, xavier_init};
use lft_core::{Error, Result};
use log::{info, warn};

use crate::config::RunConfig;
use crate::manifest::Manifest;

/// A single `.lf` file or PGM directory, or a directory of them.
fn load_scenes(path: &Path, split: Split) -> Result<SceneSet> {
    let set = if path.is_file() || path.join("meta.txt").is_file() {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        SceneSet::new(vec![(name, load_lf(path)?)], split)?
    } else if path.is_dir() {
        SceneSet::load_dir(path, split)?
    } else {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    };
    if set.is_empty() {
        return Err(Error::Config(format!("no light fields found in {}", path.display())));
    }
    Ok(set)
}

/// Model config stored next to a weights file, if any.
fn sidecar(weights: &Path) -> PathBuf {
    weights.with_extension("cfg")
}

fn load_model(rc: &RunConfig) -> Result<(ModelConfig, ModelParams)> {
    let weights = rc.path("weights");
    let base = match fs::read_to_string(sidecar(&weights)) {
        Ok(text) => ModelConfig::from_kv(&kv::parse(&text)?)?,
        Err(_) => {
            warn!("no {} next to the weights; using default model settings", sidecar(&weights).display());
            ModelConfig::default()
        }
    };
    let cfg = rc.model(base)?;
    let params = ModelParams::load(&weights)?;
    params.check(&cfg)?;
    Ok((cfg, params))
}

fn resolved(rc: &RunConfig, model: Option<&ModelConfig>) -> KvMap {
    let mut map = rc.values.clone();
    if let Some(cfg) = model {
        map.extend(cfg.to_kv());
    }
    map
}

pub fn synth(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let seed = rc.seed()?;
    let range = (rc.get("disparity_min")?, rc.get("disparity_max")?);
    let set = synth_scene_set(
        seed,
        rc.get("count")?,
        rc.get("angular")?,
        rc.get("height")?,
        rc.get("width")?,
        range,
        Split::Test,
    )?;
    let mut m = Manifest::new("synth", seed, rc.values.clone());
    for (name, lf) in set.scenes() {
        let file = format!("{name}.lf");
        save_lf(lf, &out.join(&file))?;
        m.output(file);
    }
    info!("wrote {} scenes", set.len());
    Ok(m)
}

pub fn degrade_cmd(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let input = rc.path("input");
    let scenes = load_scenes(&input, Split::Train)?;
    let dc = DegradeConfig::with_lr_patch(rc.get("scale")?, rc.get("lr_patch")?, rc.get("patch_stride")?);
    let mut m = Manifest::new("degrade", rc.seed()?, rc.values.clone());
    m.input(&input)?;
    fs::create_dir_all(out.join("patches"))?;
    let mut csv = String::from("scene,index,y0,x0,lr,hr\n");
    for (name, lf) in scenes.scenes() {
        let d = degrade(lf, &dc)?;
        for w in &d.warnings {
            warn!("{name}: {w}");
        }
        for (i, p) in d.pairs.iter().enumerate() {
            let lr = format!("patches/{name}_{i:03}_lr.lf");
            let hr = format!("patches/{name}_{i:03}_hr.lf");
            save_lf(&p.lr, &out.join(&lr))?;
            save_lf(&p.hr, &out.join(&hr))?;
            csv.push_str(&format!("{name},{i},{},{},{lr},{hr}\n", p.origin.0, p.origin.1));
            m.output(lr);
            m.output(hr);
        }
    }
    fs::write(out.join("patches.csv"), csv)?;
    m.output("patches.csv");
    Ok(m)
}

pub fn train_cmd(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let cfg = rc.model(ModelConfig::default())?;
    let tc = rc.train(&cfg)?;
    let data = rc.path("data");
    let scenes = load_scenes(&data, Split::Train)?;
    let init = match rc.str("init_weights") {
        "" => xavier_init(&cfg, tc.seed)?,
        path => ModelParams::load(Path::new(path))?,
    };
    let mut config = resolved(rc, Some(&cfg));
    config.extend(tc.to_kv());
    let mut m = Manifest::new("train", tc.seed, config);
    m.input(&data)?;
    if !rc.str("init_weights").is_empty() {
        m.input(&rc.path("init_weights"))?;
    }
    let outcome = train(&cfg, &tc, init, &scenes, Some(&out.join("checkpoints")))?;
    outcome.params.save(&out.join("weights.lftw"))?;
    fs::write(out.join("weights.cfg"), kv::render(&cfg.to_kv()))?;
    write_loss_csv(&outcome.history, &out.join("loss.csv"))?;
    for f in ["weights.lftw", "weights.cfg", "loss.csv"] {
        m.output(f);
    }
    if let Some(last) = outcome.history.last() {
        info!("{} steps, final loss {:.6}", last.step + 1, last.loss);
    }
    Ok(m)
}

pub fn infer(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let (cfg, params) = load_model(rc)?;
    let input = rc.path("input");
    let scenes = load_scenes(&input, Split::Test)?;
    let mut m = Manifest::new("infer", rc.seed()?, resolved(rc, Some(&cfg)));
    m.input(&input)?;
    m.input(&rc.path("weights"))?;
    for (name, lf) in scenes.scenes() {
        let sr = forward(lf, &params, &cfg)?;
        let file = format!("{name}.lf");
        save_lf(&sr, &out.join(&file))?;
        m.output(file);
    }
    Ok(m)
}

pub fn eval(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let data = rc.path("data");
    let scenes = load_scenes(&data, Split::Test)?;
    let (report, cfg) = match rc.str("method") {
        "bicubic" => {
            let cfg = rc.model(ModelConfig::default())?;
            (evaluate_bicubic(&scenes, cfg.scale)?, cfg)
        }
        "lft" => {
            if rc.str("weights").is_empty() {
                return Err(Error::Config("missing config keys: weights".into()));
            }
            let (cfg, params) = load_model(rc)?;
            (evaluate(&params, &cfg, &scenes)?, cfg)
        }
        other => return Err(Error::Config(format!("method must be `lft` or `bicubic`, got {other:?}"))),
    };
    let mut m = Manifest::new("eval", rc.seed()?, resolved(rc, Some(&cfg)));
    m.input(&data)?;
    if !rc.str("weights").is_empty() {
        m.input(&rc.path("weights"))?;
    }
    for w in &report.warnings {
        warn!("{w}");
    }
    report.write_csv(&out.join("metrics.csv"))?;
    let summary = format!(
        "views = {}\nmean_psnr = {:.6}\nmean_ssim = {:.6}\nskipped = {}\n",
        report.count(),
        report.mean_psnr(),
        report.mean_ssim(),
        report.warnings.len()
    );
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    m.output("metrics.csv");
    m.output("summary.txt");
    Ok(m)
}

pub fn attn(rc: &RunConfig, out: &Path) -> Result<Manifest> {
    let (cfg, params) = load_model(rc)?;
    let input = rc.path("input");
    let patch = load_lf(&input)?;
    let records = records_for_block(&capture_attention(&params, &cfg, &patch)?, rc.get("block")?);
    let full = |key: &str, extent: usize| -> Result<usize> {
        let v: usize = rc.get(key)?;
        Ok(if v == 0 { extent } else { v })
    };
    let region = Region::new(
        rc.get("region_y0")?,
        rc.get("region_x0")?,
        full("region_h", patch.height())?,
        full("region_w", patch.width())?,
    );
    let map = local_angular_attention(&records, rc.get("threshold")?, region)?;
    map.save_pgm(&out.join("attention.pgm"))?;
    map.save_text(&out.join("attention.txt"))?;

    let axis: EpiAxis = rc.str("epi_axis").parse()?;
    let index = match rc.str("epi_index") {
        "" => match axis {
            EpiAxis::Horizontal => patch.height() / 2,
            EpiAxis::Vertical => patch.width() / 2,
        },
        _ => rc.get("epi_index")?,
    };
    let epi = epi_extract(&patch, axis, index)?;
    write_pgm(&out.join("epi.pgm"), epi.shape()[0], epi.shape()[1], epi.data())?;

    let mut m = Manifest::new("attn", rc.seed()?, resolved(rc, Some(&cfg)));
    m.input(&input)?;
    m.input(&rc.path("weights"))?;
    for f in ["attention.pgm", "attention.txt", "epi.pgm"] {
        m.output(f);
    }
    info!("mean tile variance {:.6}", map.mean_tile_variance());
    Ok(m)
}
