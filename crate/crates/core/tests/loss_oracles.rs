mod common;

use common::*;
use ndarray::{Array2, Array3, Axis, IxDyn};
use neurodecode::align::{
    ensemble_predict, init_align_params, similarity_matrices, symmetric_infonce, tau_of, total_loss, Modality, LOG_TAU,
};
use neurodecode::autodiff::{Graph, Tensor};
use neurodecode::encoder::Encoder;
use neurodecode::mae::{recon_loss, recon_loss_values};
use neurodecode::params::{AdamW, OptimizerConfig};
use proptest::prelude::*;
use rand::Rng;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.outer_iter().map(|r| r.iter().copied().collect()).collect()
}

#[test]
fn infonce_matches_explicit_sums_on_100_instances() {
    let mut r = rng(1);
    for case in 0..100 {
        let b = r.random_range(1..=5);
        let s = normal(&[b, b], 1000 + case).mapv(|v| 3.0 * v);
        let g = Graph::new();
        let got = symmetric_infonce(g.constant(s.clone())).item();
        let want = infonce_oracle(&rows(&s));
        assert!((got - want).abs() < 1e-6, "case {case}: {got} vs {want}");
    }
}

#[test]
fn recon_loss_matches_explicit_sums_on_100_instances() {
    let mut r = rng(2);
    for case in 0..100 {
        let (b, l, cp) = (r.random_range(1..=5), r.random_range(1..=12), r.random_range(1..=12));
        let p = normal(&[b, l, cp], 2000 + case);
        let t = normal(&[b, l, cp], 3000 + case);
        let g = Graph::new();
        let got = recon_loss(g.constant(p.clone()), g.constant(t.clone())).item();
        let want = mse_oracle(p.as_slice().unwrap(), t.as_slice().unwrap());
        assert!((got - want).abs() < 1e-6);
        let p3 = p.clone().into_dimensionality::<ndarray::Ix3>().unwrap();
        assert_eq!(recon_loss_values(&p3, &p3).unwrap(), 0.0);
    }
}

#[test]
fn hand_similarities() {
    let e = ndarray::array![[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]];
    let i = ndarray::array![[0.5, 0.5, 1.0], [2.0, -1.0, 0.0]];
    let g = Graph::new();
    let (s, _) = similarity_matrices(
        g.constant(e.clone().into_dyn()),
        g.constant(i.clone().into_dyn()),
        g.constant(i.clone().into_dyn()),
        g.scalar(2.0),
    );
    let s = s.value();
    for a in 0..2 {
        for b in 0..2 {
            let dot: f64 = (0..3).map(|k| e[[a, k]] * i[[b, k]]).sum();
            assert!((s[[a, b]] - 2.0 * dot).abs() < 1e-6);
        }
    }
}

#[test]
fn alpha_endpoints_are_exact() {
    for seed in 0..20 {
        let g = Graph::new();
        let l_ei = symmetric_infonce(g.constant(normal(&[4, 4], seed)));
        let l_it = symmetric_infonce(g.constant(normal(&[4, 4], seed + 100)));
        assert_eq!(total_loss(l_ei, l_it, 0.0).unwrap().item(), l_ei.item());
        assert_eq!(total_loss(l_ei, l_it, 1.0).unwrap().item(), l_it.item());
        assert!(total_loss(l_ei, l_it, 1.5).is_err());
        assert!(total_loss(l_ei, l_it, -0.1).is_err());
    }
}

/// `total_loss` of raw (unnormalized) embeddings through normalization and τ.
fn objective(f_eeg: &Tensor, f_img: &Tensor, f_text: &Tensor, tau: f64, alpha: f64) -> f64 {
    let g = Graph::new();
    let (s_ei, s_it) = similarity_matrices(
        g.constant(f_eeg.clone()).l2_normalize(),
        g.constant(f_img.clone()).l2_normalize(),
        g.constant(f_text.clone()).l2_normalize(),
        g.scalar(tau),
    );
    total_loss(symmetric_infonce(s_ei), symmetric_infonce(s_it), alpha).unwrap().item()
}

#[test]
fn total_loss_gradient_matches_central_differences() {
    let mut r = rng(3);
    for case in 0..20 {
        let (b, d) = (r.random_range(2..=4), r.random_range(2..=8));
        let (e, i, t) = (normal(&[b, d], case), normal(&[b, d], case + 50), normal(&[b, d], case + 90));
        let g = Graph::new();
        let fe = g.leaf(e.clone());
        let (s_ei, s_it) = similarity_matrices(
            fe.l2_normalize(),
            g.constant(i.clone()).l2_normalize(),
            g.constant(t.clone()).l2_normalize(),
            g.scalar(5.0),
        );
        let loss = total_loss(symmetric_infonce(s_ei), symmetric_infonce(s_it), 0.3).unwrap();
        let grad = g.backward(loss).get_or_zeros(fe);
        let h = 1e-5;
        for idx in 0..b * d {
            let (row, col) = (idx / d, idx % d);
            let mut plus = e.clone();
            plus[[row, col]] += h;
            let mut minus = e.clone();
            minus[[row, col]] -= h;
            let numeric = (objective(&plus, &i, &t, 5.0, 0.3) - objective(&minus, &i, &t, 5.0, 0.3)) / (2.0 * h);
            let analytic = grad[[row, col]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-3 || (analytic - numeric).abs() < 1e-9, "case {case} [{row},{col}]: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn log_tau_keeps_temperature_positive_through_training_steps() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let mut params = init_align_params(&enc.init_params(0), 8, 8, 1e-3, 0);
    let mut opt = AdamW::new(OptimizerConfig {
        learning_rate: 5.0,
        ..Default::default()
    })
    .without_decay(LOG_TAU);
    for _ in 0..50 {
        let mut grads = std::collections::BTreeMap::new();
        grads.insert(LOG_TAU.to_string(), Tensor::from_elem(IxDyn(&[]), 1.0));
        opt.step(&mut params, &grads);
        assert!(tau_of(&params).unwrap() > 0.0);
    }
}

#[test]
fn ensembles_average_similarity_matrices() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let a = init_align_params(&enc.init_params(1), 8, 8, 10.0, 0);
    let b = init_align_params(&enc.init_params(2), 8, 8, 10.0, 0);
    let x: Array3<f64> = normal(&[2, 4, 40], 5).into_dimensionality().unwrap();
    let subjects = vec!["s1".to_string(), "s2".to_string()];
    let cands: Array2<f64> = normal(&[2, 8], 6).into_dimensionality().unwrap();

    let single = ensemble_predict(&enc, &[a.clone()], &x, &subjects, &cands, Modality::Image).unwrap();
    let triple = ensemble_predict(&enc, &[a.clone(), a.clone(), a.clone()], &x, &subjects, &cands, Modality::Image).unwrap();
    assert!(single.iter().zip(triple.iter()).all(|(u, v)| (u - v).abs() < 1e-15));

    let cos = |p: &neurodecode::params::ParamStore| {
        let e = enc.encode(p, &x, &subjects, 8).unwrap();
        let mut m = Array2::zeros((2, 2));
        for i in 0..2 {
            for j in 0..2 {
                let (u, v) = (e.row(i), cands.row(j));
                m[[i, j]] = u.dot(&v) / (u.dot(&u).sqrt() * v.dot(&v).sqrt());
            }
        }
        m
    };
    let hand = (cos(&a) + cos(&b)) / 2.0;
    let pair = ensemble_predict(&enc, &[a, b], &x, &subjects, &cands, Modality::Text).unwrap();
    assert!(hand.iter().zip(pair.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infonce_is_permutation_invariant_and_nonnegative(seed in 0u64..10_000, b in 1usize..6) {
        let s = normal(&[b, b], seed);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.rotate_left(seed as usize % b);
        let ps = s.select(Axis(0), &perm).select(Axis(1), &perm);
        let g = Graph::new();
        let (l, lp) = (symmetric_infonce(g.constant(s)).item(), symmetric_infonce(g.constant(ps)).item());
        prop_assert!((l - lp).abs() < 1e-12);
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn total_loss_is_affine_in_alpha(seed in 0u64..10_000, alpha in 0.0f64..=1.0) {
        let g = Graph::new();
        let l_ei = symmetric_infonce(g.constant(normal(&[3, 3], seed)));
        let l_it = symmetric_infonce(g.constant(normal(&[3, 3], seed + 1)));
        let at = |a: f64| total_loss(l_ei, l_it, a).unwrap().item();
        let slope = l_it.item() - l_ei.item();
        prop_assert!((at(alpha) - (at(0.0) + alpha * slope)).abs() < 1e-12);
    }

    #[test]
    fn similarities_ignore_positive_rescaling(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let (e, i) = (normal(&[3, 4], seed), normal(&[3, 4], seed + 7));
        let sims = |e: &Tensor| {
            let g = Graph::new();
            let (s, _) = similarity_matrices(
                g.constant(e.clone()).l2_normalize(),
                g.constant(i.clone()).l2_normalize(),
                g.constant(i.clone()).l2_normalize(),
                g.scalar(1.0),
            );
            s.value()
        };
        let (a, b) = (sims(&e), sims(&e.mapv(|v| v * c)));
        prop_assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
    }
}
