//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, IxDyn};
use neurodecode::autodiff::{Graph, Tensor};
use neurodecode::data::SyntheticData;
use neurodecode::encoder::{Encoder, EncoderConfig, TsConvConfig};
use neurodecode::params::{Bound, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_shape_simple_fn(IxDyn(shape), || StandardNormal.sample(&mut r))
}

/// C = 4, T = 40, d = 8 with two subjects and exact identity subject maps.
pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        channels: 4,
        time_samples: 40,
        embedding_dim: 8,
        subject_ids: vec!["s1".into(), "s2".into()],
        transformer_model_dim: 8,
        transformer_heads: 2,
        tsconv: TsConvConfig {
            temporal_kernel: 5,
            feature_maps: 3,
            pool_window: 6,
            pool_stride: 4,
            normalize: true,
        },
        subject_init_noise: 0.0,
        ..Default::default()
    }
}

/// Symmetric InfoNCE by explicit loops: mean of row-wise and column-wise
/// cross-entropies with the diagonal as target.
pub fn infonce_oracle(s: &[Vec<f64>]) -> f64 {
    let b = s.len();
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        let mut zr = 0.0;
        let mut zc = 0.0;
        for j in 0..b {
            zr += s[i][j].exp();
            zc += s[j][i].exp();
        }
        rows += zr.ln() - s[i][i];
        cols += zc.ln() - s[i][i];
    }
    0.5 * (rows / b as f64 + cols / b as f64)
}

/// Mean squared error by explicit summation.
pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    acc / a.len() as f64
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
pub fn wilcoxon_enumeration_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // rank = #smaller + (#equal + 1) / 2
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let less = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for signs in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|k| signs >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

/// Sum of the embedding for fixed inputs; the scalar used by gradient checks.
pub fn encoder_objective(encoder: &Encoder, params: &ParamStore, x: &Tensor, subjects: &[String]) -> f64 {
    let g = Graph::new();
    let p = Bound::new(&g, params);
    let e = encoder.forward(&p, g.constant(x.clone()), subjects).unwrap();
    e.sum().item()
}

/// Relative error between the analytic directional derivative of
/// `sum(encode(x))` and a central difference with step `h`.
pub fn encoder_directional_error(encoder: &Encoder, params: &ParamStore, x: &Tensor, subjects: &[String], seed: u64, h: f64) -> f64 {
    let g = Graph::new();
    let p = Bound::new(&g, params);
    let e = encoder.forward(&p, g.constant(x.clone()), subjects).unwrap();
    let grads = p.gradients(&g.backward(e.sum()));
    drop(p);

    let mut dir = ParamStore::new();
    for (k, (name, t)) in params.iter().enumerate() {
        dir.insert(name.clone(), normal(t.shape(), seed + k as u64));
    }
    let analytic: f64 = dir
        .iter()
        .map(|(n, v)| grads.get(n).map(|gr| (gr * v).sum()).unwrap_or(0.0))
        .sum();
    let shifted = |sign: f64| {
        let mut q = params.clone();
        for (n, t) in q.iter_mut() {
            t.scaled_add(sign * h, dir.get(n).unwrap());
        }
        encoder_objective(encoder, &q, x, subjects)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn to_dmatrix(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Least-squares solution of `a · v = b` through nalgebra's SVD.
pub fn lstsq(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let svd = to_dmatrix(a).svd(true, true);
    svd.solve(&DVector::from_column_slice(b), 1e-12).unwrap().iter().copied().collect()
}

/// Ridge decoder from flattened trials to image vectors, trained on the
/// training split and scored by nearest test image (cosine) on test trials.
pub fn ridge_decoding_accuracy(data: &SyntheticData, lambda: f64) -> f64 {
    let flat = |x: &ndarray::Array3<f64>| {
        let (n, c, t) = x.dim();
        let v: Vec<f64> = x.iter().copied().collect();
        DMatrix::from_row_slice(n, c * t, &v)
    };
    let targets = |ids: &[String]| {
        let m = data.bank.image_matrix(ids).unwrap();
        to_dmatrix(&m)
    };
    let x = flat(&data.train.data);
    let y = targets(&data.train.image_ids);
    let p = x.ncols();
    let gram = x.transpose() * &x + DMatrix::<f64>::identity(p, p) * lambda;
    let w = gram.lu().solve(&(x.transpose() * &y)).unwrap();
    let pred = flat(&data.test.data) * w;

    let mut cands: Vec<String> = data.test.image_ids.clone();
    cands.sort();
    cands.dedup();
    let cm = targets(&cands);
    let mut hits = 0;
    for i in 0..pred.nrows() {
        let row = pred.row(i);
        let mut best = (f64::NEG_INFINITY, 0);
        for j in 0..cm.nrows() {
            let c = cm.row(j);
            let cos = row.dot(&c) / (row.norm() * c.norm()).max(1e-300);
            if cos > best.0 {
                best = (cos, j);
            }
        }
        if cands[best.1] == data.test.image_ids[i] {
            hits += 1;
        }
    }
    hits as f64 / pred.nrows() as f64
}

/// Small planted dataset: 12 training concepts, 8 test concepts, 16 channels at 50 Hz.
pub fn tiny_spec(seed: u64) -> neurodecode::data::SyntheticSpec {
    neurodecode::data::SyntheticSpec {
        n_concepts: 12,
        n_test_concepts: 8,
        images_per_concept: 4,
        repetitions: 2,
        channels: 16,
        time_samples: 50,
        embedding_dim: 16,
        seed,
        ..Default::default()
    }
}

/// Pipeline settings that train in well under a second per stage.
pub fn tiny_pipeline_config() -> neurodecode::pipeline::PipelineConfig {
    use neurodecode::pipeline::PipelineConfig;
    let mut cfg = PipelineConfig::default();
    cfg.encoder.transformer_model_dim = 8;
    cfg.encoder.transformer_heads = 2;
    cfg.encoder.tsconv = TsConvConfig {
        temporal_kernel: 5,
        feature_maps: 4,
        pool_window: 6,
        pool_stride: 4,
        normalize: true,
    };
    cfg.mae.decoder.width = 8;
    cfg.mae.decoder.depth = 1;
    cfg.mae.decoder.heads = 2;
    cfg.mae.epochs = 2;
    cfg.mae.batch_size = 32;
    cfg.align.batch_size = 32;
    cfg.align.max_epochs = 6;
    cfg.val_trials = 12;
    cfg
}
