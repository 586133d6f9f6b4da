//! Cross-module properties on randomly generated data, trees and arrays.

use camforest::arch::{plan_tiling_with, simulate_tiled};
use camforest::cammap::{map_sdt, unmap, CamArray, Noise};
use camforest::camsim::{infer, CamModel, HARD_GAIN};
use camforest::circuit::{device_current, CircuitParams};
use camforest::data::{fit_range, normalize, split, Dataset, NormalizeMode};
use camforest::hardtree::{train_dt, train_rf, ForestConfig, TreeConfig};
use camforest::rng::seeded;
use camforest::robust::attack_sample;
use camforest::softtree::{init_sdt, train_srf, BehaviorParams, Pooling, SoftForest, SoftTree, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

fn random_ds(seed: u64, n: usize, f: usize, classes: usize) -> Dataset {
    let mut rng = seeded(seed);
    let mut values = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Labels depend on the features, with some noise, so trees have
        // something to split on.
        let s: f64 = x.iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum();
        let c = ((s + f as f64) * 7.0 + rng.random_range(0.0..2.0)) as usize % classes;
        values.extend(x);
        labels.push(c);
    }
    let names = (0..f).map(|i| format!("f{i}")).collect();
    let classes = (0..classes).map(|c| format!("c{c}")).collect();
    Dataset::new("random", names, classes, values, labels).unwrap()
}

fn random_sdt(seed: u64, depth: usize, f: usize, k: f64) -> SoftTree {
    let ds = random_ds(seed, 120, f, 3);
    let dt = train_dt(&ds, TreeConfig::new(depth).seed(seed)).unwrap();
    init_sdt(&dt, BehaviorParams::product(k))
}

fn random_sample(rng: &mut impl Rng, f: usize) -> Vec<f64> {
    (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn map_unmap_round_trip(seed in 0u64..10_000, depth in 1usize..7, k in 1.0f64..100.0) {
        let t = random_sdt(seed, depth, 4, k);
        let arr = map_sdt(&t).unwrap();
        let back = unmap(&arr, t.behavior).unwrap();
        prop_assert_eq!(map_sdt(&back).unwrap(), arr.clone());
        let mut rng = seeded(seed);
        for _ in 0..20 {
            let x = random_sample(&mut rng, 4);
            // Conditions come back in column order, so products may differ
            // in the last bit.
            for (a, b) in back.path_probs(&x).unwrap().iter().zip(t.path_probs(&x).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-14 * b.max(1e-300));
            }
        }
    }

    #[test]
    fn array_csv_round_trip(seed in 0u64..10_000, depth in 1usize..6) {
        let t = random_sdt(seed, depth, 3, 20.0);
        let arr = map_sdt(&t).unwrap();
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let classes: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
        let side = arr.sidecar(&names, &classes);
        prop_assert_eq!(CamArray::from_csv(&arr.to_csv(&names, None), &side).unwrap(), arr);
    }

    #[test]
    fn cam_inference_equals_software(seed in 0u64..10_000, depth in 1usize..7) {
        let t = random_sdt(seed, depth, 4, 15.0);
        let arr = map_sdt(&t).unwrap();
        let mut rng = seeded(seed ^ 1);
        for _ in 0..20 {
            let x = random_sample(&mut rng, 4);
            let r = infer(&arr, &x, &t.behavior).unwrap();
            let sw = t.predict(&x).unwrap();
            prop_assert_eq!(r.predicted_class, sw.class);
            for (row, v) in arr.rows.iter().zip(&r.ml_values) {
                prop_assert!((v - sw.probs[row.path]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn tiled_equals_untiled(seed in 0u64..10_000, depth in 1usize..7, width in 1usize..6, band in 1usize..9) {
        let t = random_sdt(seed, depth, 5, 20.0);
        let arr = map_sdt(&t).unwrap();
        let plan = plan_tiling_with(&arr, width, band).unwrap();
        let mut rng = seeded(seed ^ 2);
        for _ in 0..10 {
            let x = random_sample(&mut rng, 5);
            let tiled = simulate_tiled(&plan, &arr, &x, &t.behavior).unwrap();
            prop_assert_eq!(tiled, infer(&arr, &x, &t.behavior).unwrap());
        }
        // Every programmed cell lies in an enabled block.
        for (r, row) in arr.rows.iter().enumerate() {
            let band_of = plan.path_order.iter().position(|&p| p == r).unwrap() / plan.band_height;
            for &(c, _) in &row.cells {
                let sub = plan.feature_order.iter().position(|&q| q == c).unwrap() / plan.width;
                prop_assert!(plan.enabled(band_of, sub));
            }
        }
    }

    #[test]
    fn zero_variation_is_identity(seed in 0u64..10_000) {
        let arr = map_sdt(&random_sdt(seed, 4, 3, 20.0)).unwrap();
        prop_assert_eq!(arr.perturb_with(&mut seeded(seed), Noise::None), arr.clone());
        prop_assert_eq!(arr.perturb_with(&mut seeded(seed), Noise::Uniform(0.0)), arr);
    }

    #[test]
    fn variation_moves_every_threshold_within_bound(seed in 0u64..10_000, d in 0.001f64..0.3) {
        let arr = map_sdt(&random_sdt(seed, 4, 3, 20.0)).unwrap();
        let p = arr.perturb_with(&mut seeded(seed), Noise::Uniform(d));
        let (a, b) = (arr.thresholds(), p.thresholds());
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= d + 1e-12);
        }
    }

    #[test]
    fn attack_touches_one_coordinate(seed in 0u64..10_000, f in 1usize..20) {
        let mut rng = seeded(seed);
        let x = random_sample(&mut rng, f);
        let j = seed as usize % f;
        let y = attack_sample(&x, Some(j), &mut rng);
        for i in 0..f {
            if i == j {
                prop_assert!((0.0..1.0).contains(&y[i]));
            } else {
                prop_assert_eq!(x[i].to_bits(), y[i].to_bits());
            }
        }
    }

    #[test]
    fn device_current_continuous_at_saturation_edge(v_ov in 0.01f64..1.5, lambda in 0.0f64..0.5) {
        let p = CircuitParams { lambda, ..CircuitParams::default() };
        let eps = 1e-9;
        let below = device_current(v_ov, v_ov - eps, &p);
        let above = device_current(v_ov, v_ov + eps, &p);
        let at = device_current(v_ov, v_ov, &p);
        prop_assert!((below - at).abs() <= 1e-6 * at.abs().max(1e-18));
        prop_assert!((above - at).abs() <= 1e-6 * at.abs().max(1e-18));
    }

    #[test]
    fn split_partitions_and_normalizes(seed in 0u64..10_000, frac in 0.1f64..0.5) {
        let ds = random_ds(seed, 80, 3, 2);
        let (tr, te) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.n_samples() + te.n_samples(), 80);
        let (tr2, te2) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.values(), tr2.values());
        prop_assert_eq!(te.values(), te2.values());
        let range = fit_range(&tr);
        let n = normalize(&tr, NormalizeMode::Tabular(&range)).unwrap().dataset;
        prop_assert!(n.values().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }
}

#[test]
fn hard_gain_cam_matches_tree() {
    let ds = random_ds(9, 300, 4, 3);
    let dt = train_dt(&ds, TreeConfig::new(6)).unwrap();
    let m = CamModel::from_dt(&dt, HARD_GAIN).unwrap();
    let mut rng = seeded(10);
    let mut checked = 0;
    for _ in 0..1000 {
        let x = random_sample(&mut rng, 4);
        let margin = dt.paths().into_iter().flat_map(|p| p.steps).map(|(f, _, t)| (x[f] - t).abs());
        if margin.fold(f64::INFINITY, f64::min) > 1e-2 {
            checked += 1;
            assert_eq!(m.predict(&x).unwrap(), dt.predict(&x).unwrap());
        }
    }
    assert!(checked > 500);
}

#[test]
fn single_tree_soft_forest_is_the_soft_tree() {
    let ds = random_ds(4, 200, 3, 3);
    let rf = train_rf(&ds, ForestConfig::new(1, 4, 1)).unwrap();
    let beh = BehaviorParams::product(20.0);
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let srf = train_srf(&SoftForest::from_forest(&rf, beh, Pooling::MaxPath), &[ds.clone()], &cfg, &[3]).unwrap();
    let sdt = &srf.trees[0];
    let mut rng = seeded(5);
    for _ in 0..200 {
        let x = random_sample(&mut rng, 3);
        assert_eq!(srf.predict(&x).unwrap(), sdt.predict_class(&x).unwrap());
    }
}
