mod common;

use common::*;
use ndarray::{array, Array2, Axis, IxDyn};
use neurodecode::autodiff::{Graph, Tensor};
use neurodecode::encoder::{Encoder, EncoderConfig, TsConvConfig};
use neurodecode::params::{Bound, ParamStore};
use neurodecode::Error;
use proptest::prelude::*;

fn subjects(n: usize) -> Vec<String> {
    (0..n).map(|i| if i % 2 == 0 { "s1" } else { "s2" }.to_string()).collect()
}

fn with(params: &ParamStore, name: &str, value: Tensor) -> ParamStore {
    let mut p = params.clone();
    p.insert(name, value);
    p
}

fn zero_group(params: &ParamStore, prefix: &str) -> ParamStore {
    let mut p = params.clone();
    for (n, t) in p.iter_mut() {
        if n.starts_with(prefix) {
            t.fill(0.0);
        }
    }
    p
}

#[test]
fn subject_map_matches_hand_product() {
    let mut cfg = tiny_encoder_config();
    cfg.channels = 3;
    let enc = Encoder::new(cfg).unwrap();
    let w = normal(&[2, 3, 3], 11);
    let params = with(&enc.init_params(0), "subject_maps.w", w.clone());
    let x = normal(&[1, 3, 40], 12);
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let x1 = enc.subject_adapt(&p, g.constant(x.clone()), &[1]).value();
    for i in 0..3 {
        for t in 0..4 {
            let mut hand = 0.0;
            for j in 0..3 {
                hand += w[[1, i, j]] * x[[0, j, t]];
            }
            assert!((x1[[0, i, t]] - hand).abs() < 1e-7);
        }
    }
}

#[test]
fn permutation_subject_map_permutes_channels() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let perm = [2usize, 0, 3, 1];
    let mut w = Tensor::zeros(IxDyn(&[2, 4, 4]));
    for (i, &j) in perm.iter().enumerate() {
        w[[0, i, j]] = 1.0;
        w[[1, i, i]] = 1.0;
    }
    let params = with(&enc.init_params(0), "subject_maps.w", w);
    let x = normal(&[1, 4, 40], 3);
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let x1 = enc.subject_adapt(&p, g.constant(x.clone()), &[0]).value();
    for (i, &j) in perm.iter().enumerate() {
        assert_eq!(x1.index_axis(Axis(1), i), x.index_axis(Axis(1), j));
    }
}

#[test]
fn unknown_subject_is_an_error() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let err = enc.encode(&enc.init_params(0), &Array2::zeros((4, 40)).insert_axis(Axis(0)), &["nobody".into()], 8);
    assert!(matches!(err, Err(Error::UnknownSubject(s)) if s == "nobody"));
}

#[test]
fn identical_channels_attend_uniformly() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let params = enc.init_params(1);
    let h = normal(&[40], 5);
    let x = Tensor::from_shape_fn(IxDyn(&[1, 4, 40]), |ix| h[ix[2]]);
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let (x2, alphas) = enc.gat(&p, g.constant(x.clone()));
    let alpha = alphas[0].value();
    assert!(alpha.iter().all(|a| (a - 0.25).abs() < 1e-12));
    let w = params.get("gat.w0").unwrap().view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
    let wh = h.view().into_dimensionality::<ndarray::Ix1>().unwrap().dot(&w);
    let x2 = x2.value();
    for c in 0..4 {
        for t in 0..40 {
            assert!((x2[[0, c, t]] - (wh[t] + h[t])).abs() < 1e-9);
        }
    }
}

#[test]
fn two_channel_attention_by_hand() {
    let mut cfg = tiny_encoder_config();
    cfg.channels = 2;
    cfg.time_samples = 2;
    cfg.tsconv = TsConvConfig {
        temporal_kernel: 1,
        feature_maps: 1,
        pool_window: 1,
        pool_stride: 1,
        normalize: false,
    };
    let enc = Encoder::new(cfg).unwrap();
    let mut params = enc.init_params(0);
    params.insert("gat.w0", array![[1.0, 0.5], [-0.5, 2.0]].into_dyn());
    params.insert("gat.a_src0", array![[0.3], [-0.7]].into_dyn());
    params.insert("gat.a_dst0", array![[1.1], [0.4]].into_dyn());
    let x = array![[[1.0, 2.0], [-1.0, 0.5]]].into_dyn();
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let (_, alphas) = enc.gat(&p, g.constant(x));
    let alpha = alphas[0].value();

    // Wh rows: h0 = (1, 2) W = (0, 4.5); h1 = (-1, 0.5) W = (-1.25, 0.5)
    let wh = [[0.0, 4.5], [-1.25, 0.5]];
    let src = |i: usize| 0.3 * wh[i][0] - 0.7 * wh[i][1];
    let dst = |j: usize| 1.1 * wh[j][0] + 0.4 * wh[j][1];
    let leaky = |v: f64| if v < 0.0 { 0.2 * v } else { v };
    for i in 0..2 {
        let e: Vec<f64> = (0..2).map(|j| leaky(src(i) + dst(j)).exp()).collect();
        for j in 0..2 {
            assert!((alpha[[0, i, j]] - e[j] / (e[0] + e[1])).abs() < 1e-12);
        }
    }
}

#[test]
fn single_channel_attention_is_one_and_ignores_queries() {
    let mut cfg = tiny_encoder_config();
    cfg.channels = 1;
    cfg.channel_names = vec!["Oz".into()];
    let enc = Encoder::new(cfg).unwrap();
    let params = enc.init_params(2);
    let x = normal(&[3, 1, 40], 6);
    let run = |params: &ParamStore| {
        let g = Graph::new();
        let p = Bound::new(&g, params);
        let (x3, probs) = enc.channel_transformer(&p, g.constant(x.clone()));
        (x3.value(), probs[0].value())
    };
    let (base, probs) = run(&params);
    assert!(probs.iter().all(|&a| a == 1.0));
    let scrambled = with(
        &with(&params, "transformer.layer0.q_w", normal(&[8, 8], 40)),
        "transformer.layer0.k_w",
        normal(&[8, 8], 41),
    );
    let (other, _) = run(&scrambled);
    assert!(base.iter().zip(other.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn shared_token_embedding_is_permutation_equivariant() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let params = zero_group(&enc.init_params(3), "transformer.channel_emb");
    let x = normal(&[2, 4, 40], 7);
    let perm = [3usize, 1, 0, 2];
    let xp = x.select(Axis(1), &perm);
    let run = |input: &Tensor| {
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        enc.channel_transformer(&p, g.constant(input.clone())).0.value()
    };
    let (y, yp) = (run(&x), run(&xp));
    let expected = y.select(Axis(1), &perm);
    assert!(yp.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn zero_gate_mlp_gives_one_and_a_half() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let params = zero_group(&zero_group(&enc.init_params(4), "gate_mlp"), "coord_mlp");
    let x3 = normal(&[2, 4, 40], 8);
    let g = Graph::new();
    let p = Bound::new(&g, &params);
    let (x5, gate, x4, prior) = enc.gate_and_prior(&p, g.constant(x3.clone()));
    assert!(gate.value().iter().all(|&v| v == 0.5));
    assert_eq!(x4.value(), x3.mapv(|v| 1.5 * v));
    assert!(prior.value().iter().all(|&v| v == 0.0));
    assert_eq!(x5.value(), x4.value());
}

#[test]
fn unit_sphere_coordinates_have_unit_radius_column() {
    let mut cfg = tiny_encoder_config();
    cfg.channel_names = vec!["a".into(), "b".into(), "c".into(), "d".into()];
    let enc = Encoder::new(cfg).unwrap();
    let aug = enc.coords_augmented();
    for c in 0..4 {
        assert!((aug[[c, 3]] - 1.0).abs() < 1e-12);
    }
}

/// Pooled length by walking window starts, independent of the closed form.
fn pooled_by_walking(t: usize, ts: &TsConvConfig) -> usize {
    let t1 = t + 1 - ts.temporal_kernel;
    let mut count = 0;
    let mut start = 0;
    while start + ts.pool_window <= t1 {
        count += 1;
        start += ts.pool_stride;
    }
    count
}

#[test]
fn reference_feature_length() {
    let cfg = EncoderConfig {
        subject_ids: vec!["s".into()],
        ..Default::default()
    };
    let len = cfg.feature_len().unwrap();
    assert_eq!(len, cfg.tsconv.feature_maps * pooled_by_walking(250, &cfg.tsconv));
    assert_eq!(len, 40 * 36);
    let short = TsConvConfig::default().pooled_len(74).unwrap_err().to_string();
    assert!(short.contains("T >= 75"), "{short}");
}

#[test]
fn doubling_input_doubles_pre_activation_without_normalization() {
    let mut cfg = tiny_encoder_config();
    cfg.tsconv.normalize = false;
    let enc = Encoder::new(cfg).unwrap();
    let params = zero_group(&enc.init_params(5), "tsconv.spatial_b");
    let x5 = normal(&[2, 4, 40], 9);
    let pre = |x: Tensor| {
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        enc.ts_patch_embed(&p, g.constant(x)).1.value()
    };
    let (a, b) = (pre(x5.clone()), pre(x5.mapv(|v| 2.0 * v)));
    assert!(a.iter().zip(b.iter()).all(|(u, v)| (2.0 * u - v).abs() < 1e-10));
}

#[test]
fn encode_shape_and_determinism() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let params = enc.init_params(6);
    let x = normal(&[5, 4, 40], 10).into_dimensionality::<ndarray::Ix3>().unwrap();
    let a = enc.encode(&params, &x, &subjects(5), 2).unwrap();
    let b = enc.encode(&params, &x, &subjects(5), 5).unwrap();
    assert_eq!(a.dim(), (5, 8));
    assert_eq!(a, b);
}

#[test]
fn encoder_gradient_matches_central_differences() {
    let enc = Encoder::new(tiny_encoder_config()).unwrap();
    let params = enc.init_params(7);
    let x = normal(&[3, 4, 40], 13);
    let err = encoder_directional_error(&enc, &params, &x, &subjects(3), 100, 1e-5);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn every_stage_passes_its_own_gradient_check() {
    let mut cfg = tiny_encoder_config();
    cfg.subject_init_noise = 0.1;
    let enc = Encoder::new(cfg).unwrap();
    let params = enc.init_params(8);
    let x = normal(&[2, 4, 40], 14);
    for group in neurodecode::encoder::GROUPS {
        let frozen: Vec<String> = params.names().filter(|n| !n.starts_with(group)).cloned().collect();
        let err = stage_error(&enc, &params, &x, &frozen, 200);
        assert!(err < 1e-3, "{group}: relative error {err}");
    }
}

/// Directional check restricted to parameters outside `frozen`.
fn stage_error(enc: &Encoder, params: &ParamStore, x: &Tensor, frozen: &[String], seed: u64) -> f64 {
    let s = subjects(x.shape()[0]);
    let g = Graph::new();
    let p = Bound::new(&g, params);
    let e = enc.forward(&p, g.constant(x.clone()), &s).unwrap();
    let grads = p.gradients(&g.backward(e.sum()));
    drop(p);
    let mut dir = ParamStore::new();
    for (k, (n, t)) in params.iter().enumerate() {
        let v = if frozen.contains(n) { Tensor::zeros(t.raw_dim()) } else { normal(t.shape(), seed + k as u64) };
        dir.insert(n.clone(), v);
    }
    let analytic: f64 = dir.iter().map(|(n, v)| grads.get(n).map(|gr| (gr * v).sum()).unwrap_or(0.0)).sum();
    let h = 1e-5;
    let shifted = |sign: f64| {
        let mut q = params.clone();
        for (n, t) in q.iter_mut() {
            t.scaled_add(sign * h, dir.get(n).unwrap());
        }
        encoder_objective(enc, &q, x, &s)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stochastic_rows_and_bounded_gates(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let enc = Encoder::new(tiny_encoder_config()).unwrap();
        let params = enc.init_params(seed);
        let x = normal(&[2, 4, 40], seed + 1).mapv(|v| v * scale);
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        let tr = enc.trace(&p, g.constant(x.clone()), &subjects(2)).unwrap();
        for a in tr.gat_alpha.iter().chain(tr.attention.iter()) {
            let v = a.value();
            for row in v.lanes(Axis(v.ndim() - 1)) {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
        prop_assert!(tr.gate.value().iter().all(|&v| v > 0.0 && v < 1.0));
        for stage in [&tr.x1, &tr.x2, &tr.x3, &tr.x4, &tr.x5] {
            prop_assert_eq!(stage.shape(), vec![2, 4, 40]);
        }
        prop_assert_eq!(tr.x1.value(), x);
    }
}
