//! Synthetic scene generation, rendering, splits and the on-disk format.

mod common;

use std::f64::consts::PI;

use ebm3d::synthscene::{read_dataset, read_scene, write_dataset, write_scene, gen_dataset, gen_scene, mean_initial_iou, render_features, scene_rng, Split, SynthDataset, MAX_PAIR_IOU};
use ebm3d::{bev_iou, Box3D, SynthConfig};
use proptest::prelude::*;

fn small(seed: u64) -> SynthConfig {
    SynthConfig { width: 64, length: 64, channels: 6, seed, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scenes_respect_their_invariants(seed in any::<u64>(), id in 0..1000u64) {
        let cfg = small(seed);
        let s = gen_scene(&cfg, id, &mut scene_rng(&cfg, id)).unwrap();
        let [[x0, x1], [y0, y1]] = cfg.placement_region();
        prop_assert!((cfg.cars_min..=cfg.cars_max).contains(&s.gts.len()));
        prop_assert_eq!(s.gts.len(), s.initial_dets.len());
        for (i, g) in s.gts.iter().enumerate() {
            let b = g.bbox;
            prop_assert!(b.cx >= x0 && b.cx <= x1 && b.cy >= y0 && b.cy <= y1);
            prop_assert!(b.h >= cfg.h_range[0] && b.h <= cfg.h_range[1]);
            prop_assert!(b.l >= cfg.l_range[0] && b.l <= cfg.l_range[1]);
            for other in &s.gts[i + 1..] {
                prop_assert!(bev_iou(&b.to_bev(), &other.bbox.to_bev()) < MAX_PAIR_IOU);
            }
        }
        prop_assert!(s.initial_dets.iter().all(|d| d.score > 0.0 && d.score < 1.0));
        // the whole scene is a function of (cfg, id)
        let again = gen_scene(&cfg, id, &mut scene_rng(&cfg, id)).unwrap();
        prop_assert_eq!(write_scene(&s), write_scene(&again));
    }

    #[test]
    fn symmetric_rendering_cannot_see_half_turns(seed in any::<u64>()) {
        let cfg = SynthConfig { symmetric_rendering: true, ..small(seed) };
        let s = gen_scene(&cfg, 0, &mut scene_rng(&cfg, 0)).unwrap();
        let boxes = s.gt_boxes();
        let flipped: Vec<Box3D> = boxes.iter().map(|b| Box3D { phi: b.phi + PI, ..*b }).collect();
        let a = render_features(&cfg, &boxes, &mut common::rng(seed)).unwrap();
        let b = render_features(&cfg, &flipped, &mut common::rng(seed)).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn plain_rendering_tells_half_turns_apart() {
    let cfg = SynthConfig { feature_noise: 0.0, ..small(3) };
    let b = Box3D::new(0.0, 0.0, 0.8, 1.6, 1.7, 4.0, 0.3).unwrap();
    let a = render_features(&cfg, &[b], &mut common::rng(0)).unwrap();
    let f = render_features(&cfg, &[Box3D { phi: b.phi + PI, ..b }], &mut common::rng(0)).unwrap();
    assert_ne!(a.data(), f.data());
}

#[test]
fn background_and_center_values() {
    let cfg = SynthConfig { feature_noise: 0.0, ..small(4) };
    let b = Box3D::new(2.0, -1.0, 0.8, 1.6, 1.8, 4.2, 0.0).unwrap();
    let g = render_features(&cfg, &[b], &mut common::rng(0)).unwrap();
    let cell_at = |p: [f64; 2]| {
        let q = g.world_to_grid(p);
        g.cell(q[0].round() as usize, q[1].round() as usize).to_vec()
    };
    let far = cell_at([-6.0, 6.0]);
    assert!(far[0] < 1e-3 && (far[1] - 2.0).abs() < 1e-12 && far[2] == 0.0 && far[3] == 0.0, "{far:?}");
    let center = cell_at([b.cx, b.cy]);
    assert!(center[0] > 0.95, "{center:?}");
    assert!((center[2] - 1.0).abs() < 1e-9 && center[3].abs() < 1e-9);
}

#[test]
fn empty_scenes_are_pure_noise() {
    let cfg = SynthConfig { cars_min: 0, cars_max: 0, ..small(5) };
    let s = gen_scene(&cfg, 2, &mut scene_rng(&cfg, 2)).unwrap();
    assert!(s.gts.is_empty() && s.initial_dets.is_empty());
}

#[test]
fn zero_perturbation_reproduces_ground_truth() {
    let cfg = SynthConfig { det_sigma: [0.0; 7], ..small(6) };
    for s in gen_dataset(&cfg, 5).unwrap() {
        let s = s.0;
        for (d, g) in s.initial_dets.iter().zip(&s.gts) {
            assert_eq!(d.bbox, g.bbox);
            assert!((bev_iou(&d.bbox.to_bev(), &g.bbox.to_bev()) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn initial_quality_falls_with_perturbation() {
    let base = small(7);
    let ious: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|k| {
            let cfg = SynthConfig { det_sigma: base.det_sigma.map(|s| s * k), ..base.clone() };
            let scenes: Vec<_> = gen_dataset(&cfg, 40).unwrap().into_iter().map(|s| s.0).collect();
            mean_initial_iou(&scenes)
        })
        .collect();
    assert!(ious[0] > ious[1] && ious[1] > ious[2], "{ious:?}");
}

#[test]
fn splits_and_seeds() {
    let ds = SynthDataset::new(small(8), 10).unwrap();
    assert_eq!(ds.ids(Split::Train), (0..8).collect::<Vec<_>>());
    assert_eq!(ds.ids(Split::Val), vec![8, 9]);
    let custom = SynthDataset::with_split(small(8), 2400, 400).unwrap();
    assert_eq!(custom.ids(Split::Train).len(), 2000);
    let (a, b) = (ds.scene(0).unwrap(), SynthDataset::new(small(9), 10).unwrap().scene(0).unwrap());
    assert_ne!(write_scene(&a), write_scene(&b));
}

#[test]
fn datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(10);
    let scenes = gen_dataset(&cfg, 6).unwrap();
    write_dataset(dir.path(), scenes.iter().cloned().map(Ok)).unwrap();
    let files = read_dataset(dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    for (f, (s, split)) in files.iter().zip(&scenes) {
        assert_eq!(f.entry.split, *split);
        let loaded = f.load().unwrap();
        assert_eq!(write_scene(&loaded), write_scene(s));
        assert_eq!(&loaded, s);
    }
    let mut bytes = write_scene(&scenes[0].0);
    bytes.truncate(bytes.len() - 3);
    assert!(read_scene(&bytes).is_err());
}
