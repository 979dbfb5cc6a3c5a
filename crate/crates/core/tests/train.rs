mod common;

use std::collections::BTreeMap;

use common::random_tensor;
use lft_core::lf::{degrade, synth_lf, synth_scene_set, DegradeConfig, LightField, PatchPair, SceneSet, Split};
use lft_core::model::{param_specs, ModelConfig, ModelParams, ParamInit};
use lft_core::train::*;
use lft_core::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn xavier_bounds_and_statistics() {
    assert_eq!(xavier_bound(3, 3), 1.0);
    let cfg = ModelConfig::default();
    let p = xavier_init(&cfg, 7).unwrap();
    assert_eq!(p, xavier_init(&cfg, 7).unwrap());
    assert_ne!(p, xavier_init(&cfg, 8).unwrap());
    for spec in param_specs(&cfg) {
        let t = p.get(&spec.name).unwrap();
        match spec.init {
            ParamInit::Xavier { fan_in, fan_out } => {
                let b = xavier_bound(fan_in, fan_out);
                assert!(t.data().iter().all(|v| v.abs() <= b), "{}", spec.name);
                if t.len() >= 1000 {
                    let mean = t.sum() / t.len() as f64;
                    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
                    let expect = b * b / 3.0;
                    assert!((var - expect).abs() < 0.2 * expect, "{}: {var} vs {expect}", spec.name);
                }
            }
            ParamInit::Zeros => assert!(t.data().iter().all(|&v| v == 0.0), "{}", spec.name),
            ParamInit::Ones => assert!(t.data().iter().all(|&v| v == 1.0), "{}", spec.name),
        }
    }
}

fn scalar_params(x: f64) -> ModelParams {
    let mut m = BTreeMap::new();
    m.insert("x".to_string(), Tensor::new(vec![1], vec![x]).unwrap());
    ModelParams::new(m)
}

fn grads_of(g: f64) -> BTreeMap<String, Tensor> {
    BTreeMap::from([("x".to_string(), Tensor::new(vec![1], vec![g]).unwrap())])
}

#[test]
fn adam_zero_gradient_changes_nothing() {
    let mut p = scalar_params(0.4);
    let mut s = OptimState::new(&p).unwrap();
    adam_step(&mut p, &grads_of(0.0), &mut s, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(p.get("x").unwrap().data(), &[0.4]);
    assert_eq!(s.m["x"].data(), &[0.0]);
    assert_eq!(s.v["x"].data(), &[0.0]);
    assert_eq!(s.step, 1);
}

#[test]
fn adam_first_step_is_sign_sized() {
    let cfg = AdamConfig::default();
    let mut p = scalar_params(0.0);
    let mut s = OptimState::new(&p).unwrap();
    adam_step(&mut p, &grads_of(1.0), &mut s, 1e-3, &cfg).unwrap();
    // m_hat = v_hat = 1 after bias correction
    let expect = -1e-3 / (1.0 + cfg.eps);
    assert!((p.get("x").unwrap().data()[0] - expect).abs() < 1e-18);
}

#[test]
fn adam_descends_quadratic_bowl() {
    let cfg = AdamConfig::default();
    let mut p = scalar_params(1.0);
    let mut s = OptimState::new(&p).unwrap();
    for _ in 0..200 {
        let x = p.get("x").unwrap().data()[0];
        adam_step(&mut p, &grads_of(2.0 * x), &mut s, 0.1, &cfg).unwrap();
    }
    assert!(p.get("x").unwrap().data()[0].abs() < 1e-2);
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut p = scalar_params(1.0);
    let mut s = OptimState::new(&p).unwrap();
    let err = adam_step(&mut p, &grads_of(f64::NAN), &mut s, 0.1, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert!(err.to_string().contains("`x`"));
    assert_eq!(s.step, 0);
    assert_eq!(p.get("x").unwrap().data(), &[1.0]);
}

#[test]
fn schedule_constants() {
    let tc = TrainConfig::new(2);
    assert_eq!(lr_schedule(0, &tc), 2e-4);
    assert_eq!(lr_schedule(14, &tc), 2e-4);
    assert_eq!(lr_schedule(15, &tc), 1e-4);
    assert_eq!(lr_schedule(79, &tc), 6.25e-6);
    assert_eq!(tc.max_epochs, 80);
    assert_eq!(tc.batch_size, 4);
    assert_eq!(TrainConfig::new(4).batch_size, 8);
}

proptest! {
    #[test]
    fn schedule_is_non_increasing_and_halves(e in 0usize..500, every in 1usize..40) {
        let mut tc = TrainConfig::new(2);
        tc.halve_every = every;
        prop_assert!(lr_schedule(e + 1, &tc) <= lr_schedule(e, &tc));
        if (e + 1) % every == 0 {
            prop_assert_eq!(lr_schedule(e + 1, &tc), lr_schedule(e, &tc) * 0.5);
        } else {
            prop_assert_eq!(lr_schedule(e + 1, &tc), lr_schedule(e, &tc));
        }
    }
}

fn small_pairs(a: usize, n: usize) -> Vec<PatchPair> {
    let lf = synth_lf(2, a, 16 * n, 16, 0.5).unwrap();
    degrade(&lf, &DegradeConfig { scale: 2, hr_crop: 16, stride: 16 }).unwrap().pairs
}

fn quick_config() -> (ModelConfig, TrainConfig) {
    let cfg = ModelConfig::tiny(2);
    let mut tc = TrainConfig::new(2);
    tc.batch_size = 2;
    tc.lr0 = 2e-3;
    tc.max_epochs = 4;
    (cfg, tc)
}

#[test]
fn training_is_deterministic_and_checkpoints_each_epoch() {
    let (cfg, tc) = quick_config();
    let pairs = small_pairs(2, 3);
    assert_eq!(pairs.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let a = train_patches(&cfg, &tc, xavier_init(&cfg, 1).unwrap(), &pairs, Some(dir.path())).unwrap();
    let b = train_patches(&cfg, &tc, xavier_init(&cfg, 1).unwrap(), &pairs, None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    // 3 patches in batches of 2 give 2 steps per epoch
    assert_eq!(a.history.len(), 8);
    assert_eq!(a.state.step, 8);
    for e in 0..4 {
        assert!(dir.path().join(checkpoint_name(e)).is_file());
    }
    let last = ModelParams::load(&dir.path().join(checkpoint_name(3))).unwrap();
    assert_eq!(last, a.params);
    let csv = loss_csv(&a.history);
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("step,epoch,lr,loss\n"));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (cfg, mut tc) = quick_config();
    tc.lr0 = 0.0;
    let init = xavier_init(&cfg, 3).unwrap();
    let out = train_patches(&cfg, &tc, init.clone(), &small_pairs(2, 2), None).unwrap();
    assert_eq!(out.params, init);
}

#[test]
fn loss_falls_on_a_single_patch() {
    let (cfg, mut tc) = quick_config();
    tc.batch_size = 1;
    tc.max_epochs = 60;
    let pairs = small_pairs(2, 1);
    let out = train_patches(&cfg, &tc, xavier_init(&cfg, 0).unwrap(), &pairs, None).unwrap();
    let n = out.history.len() / 10;
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    assert!(mean(&out.history[out.history.len() - n..]) < mean(&out.history[..n]));
}

#[test]
fn max_steps_stops_mid_epoch() {
    let (cfg, mut tc) = quick_config();
    tc.max_steps = Some(3);
    let out = train_patches(&cfg, &tc, xavier_init(&cfg, 0).unwrap(), &small_pairs(2, 3), None).unwrap();
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.history[2].epoch, 1);
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_good() {
    let (cfg, mut tc) = quick_config();
    tc.batch_size = 1;
    let mut pairs = small_pairs(2, 3);
    let shape = pairs[1].hr.samples().shape().to_vec();
    pairs[1].hr = LightField::new(Tensor::full(&shape, 1e308).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = train_patches(&cfg, &tc, xavier_init(&cfg, 0).unwrap(), &pairs, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("non-finite loss"));
    let saved = ModelParams::load(&dir.path().join(LAST_GOOD)).unwrap();
    assert!(saved.iter().all(|(_, t)| t.all_finite()));
    saved.check(&cfg).unwrap();
}

#[test]
fn training_validates_its_inputs() {
    let (cfg, tc) = quick_config();
    let init = xavier_init(&cfg, 0).unwrap();
    assert!(matches!(train_patches(&cfg, &tc, init.clone(), &[], None), Err(Error::Config(_))));
    let tc4 = TrainConfig { scale: 4, ..tc };
    assert!(matches!(train_patches(&cfg, &tc4, init, &small_pairs(2, 1), None), Err(Error::Config(_))));
}

#[test]
fn psnr_reference_values() {
    let x = Tensor::full(&[4, 4], 0.5).unwrap();
    assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    let y = Tensor::full(&[4, 4], 0.6).unwrap();
    assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    let z = Tensor::full(&[4, 4], 1.5).unwrap();
    assert!(psnr(&x, &z).unwrap().abs() < 1e-12);
    assert!(matches!(psnr(&x, &Tensor::zeros(&[2, 8]).unwrap()), Err(Error::Shape(_))));
}

#[test]
fn ssim_properties() {
    let x = random_tensor(&[16, 20], 1, 0.0, 1.0);
    let y = random_tensor(&[16, 20], 2, 0.0, 1.0);
    assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    assert!(ssim(&x, &y).unwrap() < 1.0);
    assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    let half = Tensor::from_fn(&[16, 16], |i| if i[1] < 8 { 0.0 } else { 1.0 }).unwrap();
    let inv = half.map(|v| 1.0 - v);
    assert!(ssim(&half, &inv).unwrap() < 0.1);
    let small = Tensor::zeros(&[10, 30]).unwrap();
    assert!(matches!(ssim(&small, &small), Err(Error::Size(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_ignores_shared_permutations(seed in any::<u64>(), shift in 1usize..63) {
        let x = random_tensor(&[8, 8], seed, 0.0, 1.0);
        let y = random_tensor(&[8, 8], seed ^ 0xabc, 0.0, 1.0);
        let perm = |t: &Tensor| Tensor::from_fn(&[8, 8], |i| t.data()[(i[0] * 8 + i[1] + shift) % 64]).unwrap();
        let (a, b) = (psnr(&x, &y).unwrap(), psnr(&perm(&x), &perm(&y)).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }
}

fn residual_only(cfg: &ModelConfig) -> ModelParams {
    let mut p = xavier_init(cfg, 5).unwrap();
    for name in ["head.conv_out.weight", "head.conv_out.bias"] {
        let t = p.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    p
}

#[test]
fn residual_only_weights_score_like_bicubic() {
    let cfg = ModelConfig::tiny(5);
    let scenes = synth_scene_set(40, 2, 5, 32, 32, (0.0, 1.0), Split::Test).unwrap();
    let net = evaluate(&residual_only(&cfg), &cfg, &scenes).unwrap();
    let bic = evaluate_bicubic(&scenes, 2).unwrap();
    assert_eq!(net.count(), 50);
    assert_eq!(net, bic);
    let flat: Vec<f64> = net.scenes.iter().flat_map(|s| s.views.iter().map(|v| v.psnr)).collect();
    assert_eq!(net.mean_psnr(), flat.iter().sum::<f64>() / flat.len() as f64);
    assert_eq!(net.to_csv().lines().count(), 51);
}

#[test]
fn small_scenes_are_skipped_with_a_warning() {
    let cfg = ModelConfig::tiny(2);
    let big = synth_lf(1, 2, 24, 24, 0.0).unwrap();
    let tiny = synth_lf(2, 2, 12, 12, 0.0).unwrap();
    let set = SceneSet::new(vec![("big".into(), big), ("tiny".into(), tiny)], Split::Test).unwrap();
    let r = evaluate(&residual_only(&cfg), &cfg, &set).unwrap();
    assert_eq!(r.scenes.len(), 1);
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("tiny"));
}

#[test]
fn evaluate_rejects_mismatched_angular_size() {
    let cfg = ModelConfig::tiny(2);
    let set = synth_scene_set(1, 1, 3, 24, 24, (0.0, 0.0), Split::Test).unwrap();
    assert!(matches!(evaluate(&residual_only(&cfg), &cfg, &set), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregate_is_the_flat_mean(sizes in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
        let mut k = seed;
        let mut next = || { k = k.wrapping_mul(6364136223846793005).wrapping_add(1); (k >> 11) as f64 / (1u64 << 53) as f64 };
        let scenes: Vec<SceneScores> = sizes.iter().enumerate().map(|(i, &n)| SceneScores {
            name: format!("s{i}"),
            views: (0..n).map(|j| ViewScore { u: j, v: 0, psnr: 20.0 + 20.0 * next(), ssim: next() }).collect(),
        }).collect();
        let report = MetricReport { scenes, warnings: vec![] };
        let all: Vec<&ViewScore> = report.scenes.iter().flat_map(|s| s.views.iter()).collect();
        let mut sum = 0.0;
        for v in &all { sum += v.psnr; }
        prop_assert!((report.mean_psnr() - sum / all.len() as f64).abs() < 1e-12);
        prop_assert_eq!(report.count(), sizes.iter().sum::<usize>());
    }
}
