mod common;

use common::random_tensor;
use lft_core::analysis::*;
use lft_core::lf::{synth_lf, LightField};
use lft_core::model::ModelConfig;
use lft_core::train::xavier_init;
use lft_core::{Error, Tensor};
use proptest::prelude::*;

fn records(
    n: usize,
    positions: &[(usize, usize)],
    heads: usize,
    f: impl Fn(usize, usize, usize) -> f64,
) -> Vec<AttentionRecord> {
    let mut out = Vec::new();
    for &position in positions {
        for head in 0..heads {
            let matrix = Tensor::from_fn(&[n, n], |i| f(head, i[0], i[1])).unwrap();
            out.push(AttentionRecord { block: 0, head, position, matrix });
        }
    }
    out
}

fn grid(h: usize, w: usize) -> Vec<(usize, usize)> {
    (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect()
}

#[test]
fn capture_gives_one_record_per_position_and_head() {
    let cfg = ModelConfig::tiny(5);
    let params = xavier_init(&cfg, 1).unwrap();
    let patch = LightField::new(random_tensor(&[5, 5, 1, 8, 10], 2, 0.0, 1.0)).unwrap();
    let recs = capture_attention(&params, &cfg, &patch).unwrap();
    let block0 = records_for_block(&recs, 0);
    assert_eq!(block0.len(), 8 * 10 * cfg.heads);
    for r in &block0 {
        assert_eq!(r.matrix.shape(), &[25, 25]);
        for row in r.matrix.data().chunks(25) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
    assert!(block0.iter().any(|r| r.position == (7, 9)));
    assert_eq!(recs, capture_attention(&params, &cfg, &patch).unwrap());
}

#[test]
fn capture_without_angular_transformer_is_empty() {
    let cfg = ModelConfig::tiny(2).with_switches(false, true, false, true);
    let params = xavier_init(&cfg, 1).unwrap();
    let patch = LightField::new(random_tensor(&[2, 2, 1, 8, 8], 2, 0.0, 1.0)).unwrap();
    assert!(capture_attention(&params, &cfg, &patch).unwrap().is_empty());
}

#[test]
fn uniform_attention_gives_all_ones() {
    let recs = records(25, &grid(4, 4), 2, |_, _, _| 1.0 / 25.0);
    let map = local_angular_attention(&recs, FIG_THRESHOLD, Region::new(0, 0, 4, 4)).unwrap();
    assert!(map.ratios.data().iter().all(|&r| r == 1.0));
    assert_eq!(map.image().shape(), &[25, 25]);
    assert_eq!(map.mean_tile_variance(), 0.0);
}

#[test]
fn one_hot_rows_light_one_pixel_per_tile() {
    let a = 3;
    let n = a * a;
    let target = |p: usize| (p * 4 + 1) % n;
    let recs = records(n, &grid(2, 3), 2, |_, p, q| if q == target(p) { 1.0 } else { 0.0 });
    let map = local_angular_attention(&recs, FIG_THRESHOLD, Region::new(0, 0, 2, 3)).unwrap();
    let img = map.image();
    for pu in 0..a {
        for pv in 0..a {
            let mut ones = Vec::new();
            for qu in 0..a {
                for qv in 0..a {
                    let r = img.data()[(pu * a + qu) * n + pv * a + qv];
                    assert!(r == 0.0 || r == 1.0);
                    if r == 1.0 {
                        ones.push(qu * a + qv);
                    }
                }
            }
            assert_eq!(ones, vec![target(pu * a + pv)]);
        }
    }
    let text = map.to_text();
    assert_eq!(text.lines().count(), n);
    assert_eq!(text.lines().next().unwrap().split(' ').count(), n);
}

#[test]
fn threshold_above_one_gives_zeros_and_region_is_respected() {
    let recs = records(4, &grid(3, 3), 1, |_, _, _| 0.25);
    let map = local_angular_attention(&recs, 1.1, Region::new(0, 0, 3, 3)).unwrap();
    assert!(map.ratios.data().iter().all(|&r| r == 0.0));
    let err = local_angular_attention(&recs, 0.1, Region::new(5, 5, 2, 2)).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    assert!(matches!(local_angular_attention(&recs, 0.1, Region::new(0, 0, 0, 3)), Err(Error::Usage(_))));
    // only positions with y < 1 count: make those rows exceed the threshold
    let mixed = records(4, &grid(3, 3), 1, |_, _, _| 0.25)
        .into_iter()
        .map(|mut r| {
            if r.position.0 >= 1 {
                r.matrix = Tensor::from_fn(&[4, 4], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
            }
            r
        })
        .collect::<Vec<_>>();
    let top = local_angular_attention(&mixed, 0.1, Region::new(0, 0, 1, 3)).unwrap();
    assert!(top.ratios.data().iter().all(|&r| r == 1.0));
    let all = local_angular_attention(&mixed, 0.1, Region::new(0, 0, 3, 3)).unwrap();
    assert!((all.ratio(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(all.ratio(2, 2), 1.0);
}

#[test]
fn heads_are_averaged_and_blocks_not_mixed() {
    let recs = records(4, &grid(1, 2), 2, |h, _, _| if h == 0 { 0.25 } else { 0.01 });
    let map = local_angular_attention(&recs, 0.1, Region::new(0, 0, 1, 2)).unwrap();
    assert!(map.ratios.data().iter().all(|&r| r == 0.5));
    let mut mixed = recs.clone();
    mixed[0].block = 1;
    assert!(matches!(local_angular_attention(&mixed, 0.1, Region::new(0, 0, 1, 2)), Err(Error::Usage(_))));
}

#[test]
fn map_files() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(4, &grid(2, 2), 1, |_, p, q| if p == q { 0.7 } else { 0.1 });
    let map = local_angular_attention(&recs, 0.2, Region::new(0, 0, 2, 2)).unwrap();
    map.save_pgm(&dir.path().join("m.pgm")).unwrap();
    map.save_text(&dir.path().join("m.txt")).unwrap();
    let bytes = std::fs::read(dir.path().join("m.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
    assert_eq!(bytes.len(), 11 + 16);
    let text = std::fs::read_to_string(dir.path().join("m.txt")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "1.000000 0.000000 0.000000 0.000000");
}

proptest! {
    #[test]
    fn ratios_fall_as_threshold_rises(seed in any::<u64>(), t1 in 0.0f64..0.5, dt in 0.0f64..0.5) {
        let raw = random_tensor(&[6, 2, 9, 9], seed, 0.0, 1.0);
        let recs: Vec<AttentionRecord> = (0..12).map(|i| {
            let block = &raw.data()[i * 81..(i + 1) * 81];
            let rows: Vec<f64> = block.chunks(9).flat_map(|r| { let s: f64 = r.iter().sum(); r.iter().map(move |v| v / s) }).collect();
            AttentionRecord { block: 0, head: i % 2, position: (i / 2 / 3, i / 2 % 3), matrix: Tensor::new(vec![9, 9], rows).unwrap() }
        }).collect();
        let region = Region::new(0, 0, 2, 3);
        let lo = local_angular_attention(&recs, t1, region).unwrap();
        let hi = local_angular_attention(&recs, t1 + dt, region).unwrap();
        for (a, b) in lo.ratios.data().iter().zip(hi.ratios.data()) {
            prop_assert!(b <= a);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn epi_of_flat_and_static_scenes() {
    let flat = LightField::from_fn([3, 3, 1, 6, 7], |_| 0.4).unwrap();
    let e = epi_extract(&flat, EpiAxis::Horizontal, 2).unwrap();
    assert_eq!(e.shape(), &[3, 7]);
    assert!(e.data().iter().all(|&v| v == 0.4));

    let still = synth_lf(9, 5, 24, 24, 0.0).unwrap();
    for axis in [EpiAxis::Horizontal, EpiAxis::Vertical] {
        let e = epi_extract(&still, axis, 10).unwrap();
        let rows: Vec<&[f64]> = e.data().chunks(24).collect();
        assert!(rows.iter().all(|r| r == &rows[0]));
    }
}

#[test]
fn epi_lines_follow_integer_disparity() {
    let lf = synth_lf(4, 5, 32, 32, 1.0).unwrap();
    for axis in [EpiAxis::Horizontal, EpiAxis::Vertical] {
        let e = epi_extract(&lf, axis, 16).unwrap();
        assert_eq!(e.shape(), &[5, 32]);
        for v in 0..4 {
            for x in 4..28 {
                let next = e.data()[(v + 1) * 32 + x];
                let prev = e.data()[v * 32 + x - 1];
                assert!((next - prev).abs() <= 1e-6, "{axis:?} row {v} x {x}");
            }
        }
    }
}

#[test]
fn epi_index_out_of_range() {
    let lf = LightField::from_fn([2, 2, 1, 4, 6], |_| 0.0).unwrap();
    assert!(matches!(epi_extract(&lf, EpiAxis::Horizontal, 4), Err(Error::Bounds(_))));
    assert!(matches!(epi_extract(&lf, EpiAxis::Vertical, 6), Err(Error::Bounds(_))));
    assert!(epi_extract(&lf, EpiAxis::Vertical, 5).is_ok());
}
