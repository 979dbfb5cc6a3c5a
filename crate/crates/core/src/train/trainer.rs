use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, OptimState};
use super::config::{lr_schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::lf::{degrade, DegradeConfig, PatchPair, SceneSet};
use crate::model::{forward_var, ForwardOptions, ModelConfig, ModelParams, ParamVars};
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: OptimState,
    pub history: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

/// File name of the per-epoch checkpoint.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.lftw")
}

pub const LAST_GOOD: &str = "last_good.lftw";

/// Training pairs from every scene on the configured patch grid.
pub fn extract_patches(scenes: &SceneSet, tc: &TrainConfig) -> Result<(Vec<PatchPair>, Vec<String>)> {
    let dc = DegradeConfig::with_lr_patch(tc.scale, tc.lr_patch, tc.patch_stride);
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (name, lf) in scenes.scenes() {
        let d = degrade(lf, &dc)?;
        pairs.extend(d.pairs);
        warnings.extend(d.warnings.into_iter().map(|w| format!("{name}: {w}")));
    }
    Ok((pairs, warnings))
}

/// L1 loss of one pair and the gradient of every parameter.
pub fn sample_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    pair: &PatchPair,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let pv = ParamVars::trainable(params);
    let out = forward_var(pair.lr.samples(), &pv, cfg, ForwardOptions::default())?.output;
    let loss = out.l1_loss(&Var::constant(pair.hr.samples().clone()))?;
    let value = loss.value().data()[0];
    if !value.is_finite() {
        return Ok((value, BTreeMap::new()));
    }
    loss.backward()?;
    Ok((value, pv.grads()?))
}

/// Mean loss and mean gradient over a batch; samples run in parallel and
/// are summed in batch order.
pub fn batch_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&PatchPair],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let results: Vec<_> = batch.par_iter().map(|p| sample_gradient(params, cfg, p)).collect();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
    for r in results {
        let (l, g) = r?;
        loss += l;
        if !l.is_finite() {
            continue;
        }
        for (name, t) in g {
            match total.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                None => {
                    total.insert(name, t);
                }
            }
        }
    }
    for t in total.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, total))
}

/// Trains from `init` weights on precomputed pairs.
///
/// Each epoch visits the pairs in a seeded shuffled order. Checkpoints go to
/// `checkpoint_dir` after every epoch. A non-finite loss stops training with
/// a numeric error after saving the last good weights there; so does a
/// non-finite gradient.
pub fn train_patches(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    init: ModelParams,
    pairs: &[PatchPair],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if tc.scale != cfg.scale {
        return Err(Error::config(format!("training scale {} differs from model scale {}", tc.scale, cfg.scale)));
    }
    init.check(cfg)?;
    if pairs.is_empty() {
        return Err(Error::config("no training patches"));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut params = init;
    let mut state = OptimState::new(&params)?;
    let mut history = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    'epochs: for epoch in 0..tc.max_epochs {
        let lr = lr_schedule(epoch, tc);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            if tc.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&PatchPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grads) = batch_gradient(&params, cfg, &batch)?;
            let update = if loss.is_finite() {
                adam_step(&mut params, &grads, &mut state, lr, &tc.adam)
            } else {
                Err(Error::numeric(format!("non-finite loss {loss}")))
            };
            if let Err(Error::Numeric(why)) = update {
                let mut msg = format!("{why} at step {step} (epoch {epoch})");
                if let Some(dir) = checkpoint_dir {
                    let path = dir.join(LAST_GOOD);
                    params.save(&path)?;
                    msg.push_str(&format!("; last good weights saved to {}", path.display()));
                }
                return Err(Error::numeric(msg));
            }
            update?;
            history.push(LossRecord { step, epoch, lr, loss });
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        if batches > 0 {
            info!("epoch {epoch}: lr {lr:.3e}, mean loss {:.6}", epoch_loss / batches as f64);
        }
        if let Some(dir) = checkpoint_dir {
            params.save(&dir.join(checkpoint_name(epoch)))?;
        }
    }
    Ok(TrainOutcome { params, state, history, warnings: Vec::new() })
}

/// Extracts patches from `scenes` and trains from `init`.
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    init: ModelParams,
    scenes: &SceneSet,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (pairs, warnings) = extract_patches(scenes, tc)?;
    for w in &warnings {
        warn!("{w}");
    }
    let mut out = train_patches(cfg, tc, init, &pairs, checkpoint_dir)?;
    out.warnings = warnings;
    Ok(out)
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,epoch,lr,loss\n");
    for r in history {
        s.push_str(&format!("{},{},{:e},{:.9}\n", r.step, r.epoch, r.lr, r.loss));
    }
    s
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(loss_csv(history).as_bytes())?;
    Ok(())
}
