mod common;

use common::*;
use ndarray::{s, Array3, Axis};
use neurodecode::autodiff::Graph;
use neurodecode::data::{generate_synthetic, zscore_trials, SyntheticSpec};
use neurodecode::encoder::{Encoder, GROUPS};
use neurodecode::mae::*;
use neurodecode::params::{Bound, ParamStore};
use proptest::prelude::*;

/// `round(num/den · L)` half up, in integers.
fn rounded_count(num: usize, den: usize, l: usize) -> usize {
    (2 * num * l + den) / (2 * den)
}

#[test]
fn masked_counts_on_the_ratio_grid() {
    for (num, den) in [(0, 1), (15, 100), (3, 10), (1, 2), (3, 4), (1, 1)] {
        let r = num as f64 / den as f64;
        let want = rounded_count(num, den, 25);
        assert_eq!(masked_count(25, r), want, "r = {r}");
        let plan = sample_mask(16, 25, r, &mut rng(num as u64)).unwrap();
        for idx in &plan.indices {
            assert_eq!(idx.len(), want);
            let mut u = idx.clone();
            u.dedup();
            assert_eq!(u.len(), want);
        }
        assert_eq!(plan.indicator().sum() as usize, 16 * want);
    }
}

#[test]
fn corrupted_patches_are_standard_normal() {
    let x: Array3<f64> = normal(&[64, 4, 100], 1).into_dimensionality().unwrap();
    let grid = patchify(&x, 10).unwrap();
    let plan = sample_mask(64, 10, 0.5, &mut rng(2)).unwrap();
    let out = corrupt(&grid, &plan, &mut rng(3)).unwrap();
    let mut vals = Vec::new();
    for (b, idx) in plan.indices.iter().enumerate() {
        for &i in idx {
            vals.extend(out.patches.slice(s![b, i, ..]).iter().copied());
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // 12800 draws: 5 standard errors.
    assert!(mean.abs() < 5.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "var {var}");
}

fn tiny_model_setup() -> (Encoder, DecoderConfig) {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let dec = DecoderConfig {
        width: 8,
        depth: 1,
        heads: 2,
        ff_dim: None,
    };
    (enc, dec)
}

#[test]
fn reconstruction_gradient_matches_central_differences() {
    let (enc, dec) = tiny_model_setup();
    let model = MaeModel::new(&enc, dec, 10).unwrap();
    let mut params = enc.init_params(1);
    params.extend_from(&model.init_decoder(1));
    let x: Array3<f64> = normal(&[2, 4, 40], 4).into_dimensionality().unwrap();
    let target: Array3<f64> = normal(&[2, 4, 40], 5).into_dimensionality().unwrap();
    let subjects = vec!["s1".to_string(), "s2".to_string()];
    let loss_of = |params: &ParamStore| {
        let g = Graph::new();
        let p = Bound::new(&g, params);
        let pred = model.reconstruct(&p, g.constant(x.clone().into_dyn()), &subjects).unwrap();
        recon_loss(pred, patch_constant(&g, &target, 10).unwrap()).item()
    };
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let pred = model.reconstruct(&p, g.constant(x.clone().into_dyn()), &subjects).unwrap();
    let grads = p.gradients(&g.backward(recon_loss(pred, patch_constant(&g, &target, 10).unwrap())));
    drop(p);
    let mut dir = ParamStore::new();
    for (k, (n, t)) in params.iter().enumerate() {
        dir.insert(n.clone(), normal(t.shape(), 50 + k as u64));
    }
    let analytic: f64 = dir.iter().map(|(n, v)| (&grads[n] * v).sum()).sum();
    let h = 1e-5;
    let shifted = |sign: f64| {
        let mut q = params.clone();
        for (n, t) in q.iter_mut() {
            t.scaled_add(sign * h, dir.get(n).unwrap());
        }
        loss_of(&q)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
    assert!(rel < 1e-3, "relative error {rel}");
}

fn small_trials(seed: u64) -> neurodecode::data::TrialTensor {
    let spec = SyntheticSpec {
        n_concepts: 6,
        n_test_concepts: 2,
        images_per_concept: 2,
        repetitions: 2,
        channels: 4,
        time_samples: 40,
        embedding_dim: 8,
        seed,
        ..Default::default()
    };
    let mut t = zscore_trials(&generate_synthetic(&spec).unwrap().train);
    t.subject_ids = t.subject_ids.iter().map(|s| if s == "sub-01" { "s1" } else { "s2" }.to_string()).collect();
    t
}

#[test]
fn pretraining_is_deterministic_and_reduces_loss() {
    let (enc, dec) = tiny_model_setup();
    let cfg = MaeConfig {
        decoder: dec,
        epochs: 20,
        batch_size: 8,
        optimizer: neurodecode::params::OptimizerConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut improved = 0;
    for seed in 0..5 {
        let trials = small_trials(seed);
        let a = pretrain(&enc, &trials, &cfg, seed).unwrap();
        if seed == 0 {
            let b = pretrain(&enc, &trials, &cfg, seed).unwrap();
            assert_eq!(a.history, b.history);
            assert!(a.encoder_params.groups().iter().all(|g| GROUPS.contains(&g.as_str())));
        }
        if a.history[19] < a.history[0] {
            improved += 1;
        }
    }
    assert!(improved >= 3, "{improved}/5 seeds improved");
}

fn assert_groups(out: &ParamStore, reference: &ParamStore, groups: &[&str], equal: bool) {
    for (n, t) in out.iter() {
        let g = neurodecode::params::group_of(n);
        if groups.contains(&g) {
            let same = t.iter().zip(reference.get(n).unwrap().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(same, equal, "{n}");
        }
    }
}

#[test]
fn transfer_strategies_follow_the_contract() {
    let mut cfg = tiny_encoder_config();
    cfg.subject_init_noise = 1e-3;
    let enc = Encoder::new(cfg).unwrap();
    let pretrained = enc.init_params(1);
    let target = enc.init_params(2);
    let others: Vec<&str> = GROUPS.iter().copied().filter(|g| *g != "subject_maps").collect();

    let (all, rep) = transfer_weights(&pretrained, &target, TransferStrategy::All).unwrap();
    assert_groups(&all, &pretrained, &GROUPS, true);
    assert_eq!(rep.copied.len(), GROUPS.len());

    let (aes, rep) = transfer_weights(&pretrained, &target, TransferStrategy::AllExceptSubject).unwrap();
    assert_groups(&aes, &pretrained, &others, true);
    assert_groups(&aes, &pretrained, &["subject_maps"], false);
    assert_groups(&aes, &target, &["subject_maps"], true);
    assert!(!rep.copied.contains(&"subject_maps".to_string()));

    let (none, rep) = transfer_weights(&pretrained, &target, TransferStrategy::None).unwrap();
    assert_groups(&none, &target, &GROUPS, true);
    assert!(rep.copied.is_empty());

    let mut wrong = pretrained.clone();
    wrong.insert("gate_mlp.l1_w", normal(&[3, 2], 0));
    let err = transfer_weights(&wrong, &target, TransferStrategy::All).unwrap_err().to_string();
    assert!(err.contains("gate_mlp"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patchify_inverts(b in 1usize..4, c in 1usize..5, l in 1usize..6, p in 1usize..6, seed in 0u64..1000) {
        let x: Array3<f64> = normal(&[b, c, l * p], seed).into_dimensionality().unwrap();
        let grid = patchify(&x, p).unwrap();
        prop_assert_eq!(grid.patches.dim(), (b, l, c * p));
        prop_assert_eq!(unpatchify(&grid), x);
    }

    #[test]
    fn corruption_is_local(ratio in 0.0f64..=1.0, seed in 0u64..1000) {
        let x: Array3<f64> = normal(&[3, 2, 50], seed).into_dimensionality().unwrap();
        let grid = patchify(&x, 10).unwrap();
        let plan = sample_mask(3, 5, ratio, &mut rng(seed)).unwrap();
        let out = corrupt(&grid, &plan, &mut rng(seed + 1)).unwrap();
        for b in 0..3 {
            for i in 0..5 {
                if !plan.indices[b].contains(&i) {
                    let same = out.patches.slice(s![b, i, ..]).iter()
                        .zip(grid.patches.slice(s![b, i, ..]).iter())
                        .all(|(u, v)| u.to_bits() == v.to_bits());
                    prop_assert!(same);
                }
            }
        }
        prop_assert_eq!(plan.indicator().index_axis(Axis(0), 0).sum() as usize, masked_count(5, ratio));
    }

    #[test]
    fn recon_loss_is_nonnegative_and_zero_only_on_equality(seed in 0u64..1000) {
        let a: Array3<f64> = normal(&[2, 3, 4], seed).into_dimensionality().unwrap();
        let mut b = a.clone();
        prop_assert_eq!(recon_loss_values(&a, &b).unwrap(), 0.0);
        b[[1, 2, 3]] += 1e-3;
        prop_assert!(recon_loss_values(&a, &b).unwrap() > 0.0);
    }
}
