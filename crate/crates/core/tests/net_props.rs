mod common;

use common::{rng, uniform};
use oce::io::{generate_dataset, normalize_percentile, SceneSpec};
use oce::loss::LossConfig;
use oce::net::{Checkpoint, LrSchedule, ModelConfig, ModelParams, TrainConfig, Trainer};
use oce::Tensor;
use proptest::prelude::*;

fn small(base: usize) -> ModelConfig {
    ModelConfig { base_fmaps: base, ..Default::default() }
}

/// Parameter count written out block by block.
fn closed_form(c: usize, f: usize) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let block = |cin: usize, cout: usize| conv(cin, cout, 3) + 2 * conv(cout, cout, 1) + conv(cout, cout, 3);
    block(c, f) + block(f, 3 * f) + block(4 * f, f) + conv(f, 2, 1)
}

#[test]
fn parameter_count_matches_closed_form() {
    for c in [1, 2] {
        for f in [1, 4, 16, 64] {
            let cfg = ModelConfig { in_channels: c, base_fmaps: f, ..Default::default() };
            assert_eq!(cfg.param_count(), closed_form(c, f));
            if f <= 16 {
                assert_eq!(ModelParams::init(&cfg, 0).unwrap().count(), closed_form(c, f));
            }
        }
    }
}

#[test]
fn init_is_deterministic_and_he_scaled() {
    let cfg = ModelConfig::default();
    let a = ModelParams::init(&cfg, 5).unwrap();
    assert_eq!(a, ModelParams::init(&cfg, 5).unwrap());
    assert_ne!(a, ModelParams::init(&cfg, 6).unwrap());
    assert_eq!(a.tensors()[0].shape(), &[64, 1, 3, 3]);
    // Pool the first-layer weights of many seeds: 64 * 9 values each.
    let mut vals = Vec::new();
    for seed in 0..40 {
        vals.extend(ModelParams::init(&cfg, seed).unwrap().tensors()[0].data().iter().map(|&v| v as f64));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    let expected = 2.0 / 9.0;
    assert!((var / expected - 1.0).abs() < 0.2, "variance {var} vs {expected}");
}

#[test]
fn zero_parameters_give_zero_output() {
    let mut p = ModelParams::init(&small(4), 0).unwrap();
    for t in p.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let out = p.forward(&uniform(&[1, 60, 60], 0.0, 1.0, &mut rng(1))).unwrap();
    assert_eq!(out.shape(), &[2, 44, 44]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn output_shape_and_minimum_input() {
    let p = ModelParams::init(&small(2), 0).unwrap();
    assert_eq!(p.forward(&Tensor::zeros(&[1, 252, 252])).unwrap().shape(), &[2, 236, 236]);
    assert!(p.forward(&Tensor::zeros(&[1, 16, 16])).is_err());
    assert!(p.forward(&Tensor::zeros(&[1, 21, 21])).is_err());
    assert_eq!(p.forward(&Tensor::zeros(&[1, 22, 22])).unwrap().shape(), &[2, 6, 6]);
    assert_eq!(p.forward(&Tensor::zeros(&[1, 24, 28])).unwrap().shape(), &[2, 8, 12]);
}

#[test]
fn even_shifts_commute_with_the_network() {
    let mut r = rng(2);
    let p = ModelParams::init(&small(4), 3).unwrap();
    let big = uniform::<f32>(&[1, 72, 72], 0.0, 1.0, &mut r);
    for shift in [2usize, 4, 8] {
        let a = p.forward(&big.crop3(0, 0, 64, 64).unwrap()).unwrap();
        let b = p.forward(&big.crop3(shift, shift, 64, 64).unwrap()).unwrap();
        let n = 48;
        for c in 0..2 {
            for y in 0..n - shift {
                for x in 0..n - shift {
                    let va = a.data()[(c * n + y + shift) * n + x + shift];
                    let vb = b.data()[(c * n + y) * n + x];
                    assert!((va - vb).abs() <= 1e-5 * (1.0 + va.abs()), "shift {shift} at ({y},{x}): {va} vs {vb}");
                }
            }
        }
    }
}

#[test]
fn receptive_field_is_bounded() {
    let mut r = rng(4);
    let p = ModelParams::init(&small(4), 1).unwrap();
    let img = uniform::<f32>(&[1, 64, 64], 0.0, 1.0, &mut r);
    let base = p.forward(&img).unwrap();
    let n = 48;
    for (y0, x0) in [(32usize, 32usize), (10, 50), (33, 17)] {
        let mut poked = img.clone();
        poked.data_mut()[y0 * 64 + x0] += 5.0;
        let out = p.forward(&poked).unwrap();
        let mut inside_changed = false;
        for c in 0..2 {
            for y in 0..n {
                for x in 0..n {
                    let i = (c * n + y) * n + x;
                    let (dy, dx) = ((y + 8usize).abs_diff(y0), (x + 8usize).abs_diff(x0));
                    if dy > 10 || dx > 10 {
                        assert_eq!(out.data()[i], base.data()[i], "pixel ({y},{x}) moved by input ({y0},{x0})");
                    } else if out.data()[i] != base.data()[i] {
                        inside_changed = true;
                    }
                }
            }
        }
        assert!(inside_changed);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let p = ModelParams::init(&small(4), 9).unwrap();
    let img = uniform::<f32>(&[1, 40, 40], 0.0, 1.0, &mut rng(9));
    assert_eq!(p.forward(&img).unwrap(), p.forward(&img).unwrap());
}

fn tiny_run() -> (ModelConfig, TrainConfig, Vec<Tensor<f32>>) {
    let spec = SceneSpec { height: 72, width: 80, objects: 4, seed: 3, ..Default::default() };
    let images = generate_dataset(&spec, 3).unwrap().images.iter().map(|i| normalize_percentile(i).unwrap()).collect();
    let train = TrainConfig {
        epochs: 2,
        batch: 2,
        crop: 68,
        steps_per_epoch: Some(3),
        schedule: LrSchedule { base: 1e-3, milestones: vec![1], factor: 0.1 },
        seed: 11,
        ..Default::default()
    };
    (small(4), train, images)
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (model, train, images) = tiny_run();
    let loss = LossConfig::default();
    let (full, trace) = oce::net::train(&model, &images, &train, &loss).unwrap();
    let (again, trace2) = oce::net::train(&model, &images, &train, &loss).unwrap();
    assert_eq!(full, again);
    assert_eq!(trace, trace2);
    assert_eq!(trace.len(), 2);
    assert_eq!(trace[1].lr, 1e-4);

    let mut first = Trainer::new(&model, train.clone(), loss).unwrap();
    let e0 = first.run_epoch(&images).unwrap();
    assert_eq!(e0, trace[0]);
    let bytes = first.checkpoint().encode();
    drop(first);
    let mut resumed = Trainer::resume(Checkpoint::decode(&bytes).unwrap(), train, loss).unwrap();
    assert_eq!(resumed.epoch(images.len()), 1);
    let e1 = resumed.run_epoch(&images).unwrap();
    assert_eq!(e1, trace[1]);
    assert_eq!(resumed.params(), &full);
}

#[test]
fn loss_drops_within_five_epochs_on_default_scenes() {
    let images: Vec<Tensor<f32>> = generate_dataset(&SceneSpec::default(), 8)
        .unwrap()
        .images
        .iter()
        .map(|i| normalize_percentile(i).unwrap())
        .collect();
    let train = TrainConfig {
        epochs: 6,
        batch: 4,
        steps_per_epoch: Some(3),
        schedule: LrSchedule { base: 1e-3, ..Default::default() },
        ..Default::default()
    };
    let (_, trace) = oce::net::train(&small(16), &images, &train, &LossConfig::default()).unwrap();
    assert!(trace[5].mean_loss < trace[0].mean_loss, "{} vs {}", trace[5].mean_loss, trace[0].mean_loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn valid_sizes_follow_the_shape_chain(side in 20usize..120) {
        let cfg = small(1);
        let p = ModelParams::init(&cfg, 0).unwrap();
        match cfg.output_size(side) {
            Some(out) => {
                prop_assert_eq!(out, side - 16);
                let y = p.forward(&Tensor::zeros(&[1, side, side])).unwrap();
                prop_assert_eq!(y.shape(), &[2, out, out]);
            }
            None => prop_assert!(p.forward(&Tensor::zeros(&[1, side, side])).is_err()),
        }
    }
}
