//! The five-stage EEG encoder.
//!
//! A trial batch `X: [B, C, T]` passes through
//!
//! 1. a per-subject channel map `X1 = W_s X`,
//! 2. a graph-attention layer over the fully connected channel graph, with a residual,
//! 3. a transformer over channel tokens, projected back to `T`, with a residual,
//! 4. a channel gate plus an additive spatial prior from electrode coordinates,
//! 5. a temporal-spatial convolutional embedding (temporal conv, average pool,
//!    spatial conv over all channels, ELU, flatten),
//!
//! and a linear head to `F_eeg: [B, d]`. Embeddings are not normalized here.
//!
//! Parameters live in a [`ParamStore`] under the groups `subject_maps`,
//! `gat`, `transformer`, `gate_mlp`, `coord_mlp`, `tsconv` and
//! `projection_head`.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Array3, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::montage::Montage;
use crate::error::{Error, Result};
use crate::nn::{self, TransformerShape};
use crate::params::{init, Bound, ParamStore};

pub const GROUPS: [&str; 7] = [
    "subject_maps",
    "gat",
    "transformer",
    "gate_mlp",
    "coord_mlp",
    "tsconv",
    "projection_head",
];

const COORD_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsConvConfig {
    pub temporal_kernel: usize,
    pub feature_maps: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Layer-normalize each trial over (C, T) first.
    pub normalize: bool,
}

impl Default for TsConvConfig {
    fn default() -> Self {
        Self {
            temporal_kernel: 25,
            feature_maps: 40,
            pool_window: 51,
            pool_stride: 5,
            normalize: true,
        }
    }
}

impl TsConvConfig {
    /// Smallest admissible number of time samples.
    pub fn min_time_samples(&self) -> usize {
        self.temporal_kernel + self.pool_window - 1
    }

    /// Pooled length `T2` for `t` input samples.
    pub fn pooled_len(&self, t: usize) -> Result<usize> {
        if t < self.min_time_samples() {
            return Err(Error::Config(format!(
                "T = {t} is too short for temporal kernel {} and pool window {}; need T >= {}",
                self.temporal_kernel,
                self.pool_window,
                self.min_time_samples()
            )));
        }
        let t1 = t - self.temporal_kernel + 1;
        Ok((t1 - self.pool_window) / self.pool_stride + 1)
    }

    /// `[T1, T2]` averaging matrix; column `j` averages window `j`.
    pub fn pool_matrix(&self, t: usize) -> Result<Array2<f64>> {
        let t2 = self.pooled_len(t)?;
        let t1 = t - self.temporal_kernel + 1;
        let mut m = Array2::zeros((t1, t2));
        let w = 1.0 / self.pool_window as f64;
        for j in 0..t2 {
            for i in j * self.pool_stride..j * self.pool_stride + self.pool_window {
                m[[i, j]] = w;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub channels: usize,
    pub time_samples: usize,
    pub embedding_dim: usize,
    pub subject_ids: Vec<String>,
    /// Names used for coordinates; empty means generic names.
    pub channel_names: Vec<String>,
    pub gat_heads: usize,
    pub gat_leaky_slope: f64,
    pub transformer_layers: usize,
    pub transformer_model_dim: usize,
    pub transformer_heads: usize,
    /// Defaults to twice the model dimension.
    pub transformer_ff_dim: Option<usize>,
    /// Defaults to `ceil(C / 2)`.
    pub gate_hidden: Option<usize>,
    /// Explicit electrode positions; must cover every channel when non-empty.
    pub coord_table: BTreeMap<String, [f64; 3]>,
    pub tsconv: TsConvConfig,
    /// Standard deviation of the noise added to identity subject maps.
    pub subject_init_noise: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 63,
            time_samples: 250,
            embedding_dim: 1024,
            subject_ids: Vec::new(),
            channel_names: Vec::new(),
            gat_heads: 1,
            gat_leaky_slope: 0.2,
            transformer_layers: 1,
            transformer_model_dim: 250,
            transformer_heads: 5,
            transformer_ff_dim: None,
            gate_hidden: None,
            coord_table: BTreeMap::new(),
            tsconv: TsConvConfig::default(),
            subject_init_noise: 1e-3,
        }
    }
}

impl EncoderConfig {
    pub fn ff_dim(&self) -> usize {
        self.transformer_ff_dim.unwrap_or(2 * self.transformer_model_dim)
    }

    pub fn gate_hidden(&self) -> usize {
        self.gate_hidden.unwrap_or(self.channels.div_ceil(2))
    }

    pub fn names(&self) -> Vec<String> {
        if self.channel_names.is_empty() {
            (0..self.channels).map(|i| format!("ch{i}")).collect()
        } else {
            self.channel_names.clone()
        }
    }

    /// Flattened tsconv output length, `feature_maps · T2`.
    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.tsconv.feature_maps * self.tsconv.pooled_len(self.time_samples)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("time_samples", self.time_samples),
            ("embedding_dim", self.embedding_dim),
            ("gat_heads", self.gat_heads),
            ("transformer_model_dim", self.transformer_model_dim),
            ("transformer_heads", self.transformer_heads),
            ("temporal_kernel", self.tsconv.temporal_kernel),
            ("feature_maps", self.tsconv.feature_maps),
            ("pool_window", self.tsconv.pool_window),
            ("pool_stride", self.tsconv.pool_stride),
            ("gate_hidden", self.gate_hidden()),
            ("ff_dim", self.ff_dim()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.transformer_model_dim % self.transformer_heads != 0 {
            return Err(Error::Config(format!(
                "transformer_model_dim {} is not divisible by transformer_heads {}",
                self.transformer_model_dim, self.transformer_heads
            )));
        }
        if self.subject_ids.is_empty() {
            return Err(Error::Config("at least one subject id is required".into()));
        }
        let mut ids = self.subject_ids.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.subject_ids.len() {
            return Err(Error::Config("subject ids must be unique".into()));
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.channels {
            return Err(Error::Config(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.channels
            )));
        }
        if !(self.gat_leaky_slope >= 0.0) || !(self.subject_init_noise >= 0.0) {
            return Err(Error::Config("gat_leaky_slope and subject_init_noise must be non-negative".into()));
        }
        self.feature_len()?;
        self.coords()?;
        Ok(())
    }

    /// Electrode positions `[C, 3]`: the coordinate table if given, else the
    /// idealized layout for the channel names (hemisphere fallback).
    pub fn coords(&self) -> Result<Array2<f64>> {
        let names = self.names();
        if self.coord_table.is_empty() {
            return Ok(Montage::from_names(&names).coords);
        }
        let mut out = Array2::zeros((names.len(), 3));
        for (i, n) in names.iter().enumerate() {
            let p = self
                .coord_table
                .get(n)
                .ok_or_else(|| Error::Config(format!("coord_table has no entry for channel `{n}`")))?;
            for j in 0..3 {
                out[[i, j]] = p[j];
            }
        }
        Ok(out)
    }
}

/// Every intermediate of one forward pass.
pub struct EncoderTrace<'g> {
    pub x1: Var<'g>,
    pub x2: Var<'g>,
    /// Per-head GAT coefficients, each `[B, C, C]`.
    pub gat_alpha: Vec<Var<'g>>,
    pub x3: Var<'g>,
    /// Per-layer attention probabilities `[B, H, C, C]`.
    pub attention: Vec<Var<'g>>,
    pub gate: Var<'g>,
    pub x4: Var<'g>,
    pub spatial_prior: Var<'g>,
    pub x5: Var<'g>,
    /// Spatial-conv output before the ELU, `[B, T2, F]`.
    pub tsconv_pre: Var<'g>,
    pub features: Var<'g>,
    pub embedding: Var<'g>,
}

/// A validated configuration with its resolved coordinates and pooling matrix.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    coords_aug: Tensor,
    pool: Tensor,
    subject_index: HashMap<String, usize>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Encoder> {
        cfg.validate()?;
        let coords = cfg.coords()?;
        let c = cfg.channels;
        let mut aug = Array2::zeros((c, 4));
        for i in 0..c {
            let row = coords.row(i);
            aug.row_mut(i).slice_mut(ndarray::s![..3]).assign(&row);
            aug[[i, 3]] = row.dot(&row).sqrt();
        }
        let pool = cfg.tsconv.pool_matrix(cfg.time_samples)?.into_dyn();
        let subject_index = cfg.subject_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Encoder {
            cfg,
            coords_aug: aug.into_dyn(),
            pool,
            subject_index,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn feature_len(&self) -> usize {
        self.cfg.feature_len().expect("validated")
    }

    /// `[C, 4]`: coordinates and their Euclidean norm.
    pub fn coords_augmented(&self) -> &Tensor {
        &self.coords_aug
    }

    /// Index of each trial's subject map.
    pub fn subject_indices(&self, subjects: &[String]) -> Result<Vec<usize>> {
        subjects
            .iter()
            .map(|s| {
                self.subject_index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::UnknownSubject(s.clone()))
            })
            .collect()
    }

    fn transformer_shape(&self) -> TransformerShape {
        TransformerShape {
            dim: self.cfg.transformer_model_dim,
            heads: self.cfg.transformer_heads,
            ff_dim: self.cfg.ff_dim(),
        }
    }

    /// Subject-map parameters only, identity plus configured noise.
    pub fn init_subject_maps(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b1e);
        let (s, c) = (self.cfg.subject_ids.len(), self.cfg.channels);
        let mut w = init::normal(&[s, c, c], self.cfg.subject_init_noise, &mut rng);
        for k in 0..s {
            for i in 0..c {
                w[[k, i, i]] += 1.0;
            }
        }
        let mut store = ParamStore::new();
        store.insert("subject_maps.w", w);
        store
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, t) = (cfg.channels, cfg.time_samples);
        let mut store = self.init_subject_maps(seed);

        for h in 0..cfg.gat_heads {
            store.insert(format!("gat.w{h}"), init::xavier(&[t, t], t, t, &mut rng));
            let a_std = 1.0 / (2.0 * t as f64).sqrt();
            store.insert(format!("gat.a_src{h}"), init::normal(&[t, 1], a_std, &mut rng));
            store.insert(format!("gat.a_dst{h}"), init::normal(&[t, 1], a_std, &mut rng));
        }

        let shape = self.transformer_shape();
        nn::init_linear(&mut store, "transformer.embed", t, shape.dim, &mut rng);
        store.insert("transformer.channel_emb", init::normal(&[c, shape.dim], 0.02, &mut rng));
        for l in 0..cfg.transformer_layers {
            nn::init_transformer_layer(&mut store, &format!("transformer.layer{l}"), shape, &mut rng);
        }
        nn::init_layer_norm(&mut store, "transformer.ln_out", shape.dim);
        nn::init_linear(&mut store, "transformer.out", shape.dim, t, &mut rng);

        let gh = cfg.gate_hidden();
        nn::init_linear(&mut store, "gate_mlp.l1", c, gh, &mut rng);
        nn::init_linear(&mut store, "gate_mlp.l2", gh, c, &mut rng);

        nn::init_linear(&mut store, "coord_mlp.l1", 4, COORD_HIDDEN, &mut rng);
        nn::init_linear(&mut store, "coord_mlp.l2", COORD_HIDDEN, COORD_HIDDEN, &mut rng);
        nn::init_linear(&mut store, "coord_mlp.proj", COORD_HIDDEN, 1, &mut rng);

        let ts = &cfg.tsconv;
        let k = ts.temporal_kernel;
        store.insert(
            "tsconv.temporal_w",
            init::linear(k, ts.feature_maps, &mut rng),
        );
        store.insert("tsconv.temporal_b", init::zeros(&[ts.feature_maps]));
        nn::init_linear(&mut store, "tsconv.spatial", c * ts.feature_maps, ts.feature_maps, &mut rng);

        nn::init_linear(&mut store, "projection_head.lin", self.feature_len(), cfg.embedding_dim, &mut rng);
        store
    }

    /// Stage (i): `X1[b] = W_{s(b)} X[b]`.
    pub fn subject_adapt<'g>(&self, p: &Bound<'g, '_>, x: Var<'g>, subject_idx: &[usize]) -> Var<'g> {
        p.param("subject_maps.w").gather(subject_idx).matmul(x)
    }

    /// Stage (ii): graph attention with self-loops and a residual. Heads are averaged.
    pub fn gat<'g>(&self, p: &Bound<'g, '_>, x1: Var<'g>) -> (Var<'g>, Vec<Var<'g>>) {
        let heads = self.cfg.gat_heads;
        let mut total: Option<Var<'g>> = None;
        let mut alphas = Vec::with_capacity(heads);
        for h in 0..heads {
            let wh = x1.matmul(p.param(&format!("gat.w{h}")));
            let src = wh.matmul(p.param(&format!("gat.a_src{h}")));
            let dst = wh.matmul(p.param(&format!("gat.a_dst{h}"))).transpose();
            let alpha = (src + dst).leaky_relu(self.cfg.gat_leaky_slope).softmax();
            let out = alpha.matmul(wh);
            total = Some(match total {
                None => out,
                Some(acc) => acc + out,
            });
            alphas.push(alpha);
        }
        let mut agg = total.expect("at least one head");
        if heads > 1 {
            agg = agg.scale(1.0 / heads as f64);
        }
        (agg + x1, alphas)
    }

    /// Stage (iii): channel tokens through the transformer stack, back to `T`, plus a residual.
    pub fn channel_transformer<'g>(&self, p: &Bound<'g, '_>, x2: Var<'g>) -> (Var<'g>, Vec<Var<'g>>) {
        let mut z = nn::linear(p, "transformer.embed", x2) + p.param("transformer.channel_emb");
        let mut probs = Vec::with_capacity(self.cfg.transformer_layers);
        for l in 0..self.cfg.transformer_layers {
            let (next, pr) = nn::transformer_layer(p, &format!("transformer.layer{l}"), z, self.cfg.transformer_heads);
            z = next;
            probs.push(pr);
        }
        let back = nn::linear(p, "transformer.out", nn::layer_norm(p, "transformer.ln_out", z));
        (x2 + back, probs)
    }

    /// Stage (iv): returns `(X5, gate [B, C, 1], X4, prior [C, 1])`.
    pub fn gate_and_prior<'g>(&self, p: &Bound<'g, '_>, x3: Var<'g>) -> (Var<'g>, Var<'g>, Var<'g>, Var<'g>) {
        let shape = x3.shape();
        let (b, c) = (shape[0], shape[1]);
        let summary = x3.mean_axes(&[2]).reshape(&[b, c]);
        let hidden = nn::linear(p, "gate_mlp.l1", summary).gelu();
        let gate = nn::linear(p, "gate_mlp.l2", hidden).sigmoid().reshape(&[b, c, 1]);
        let x4 = x3 * gate + x3;

        let coords = p.graph().constant(self.coords_aug.clone());
        let h = nn::linear(p, "coord_mlp.l1", coords).gelu();
        let h = nn::linear(p, "coord_mlp.l2", h).gelu();
        let prior = nn::linear(p, "coord_mlp.proj", h);
        (x4 + prior, gate, x4, prior)
    }

    /// Stage (v): returns `(features [B, F·T2], pre-activation [B, T2, F])`.
    pub fn ts_patch_embed<'g>(&self, p: &Bound<'g, '_>, x5: Var<'g>) -> (Var<'g>, Var<'g>) {
        let shape = x5.shape();
        let (b, c) = (shape[0], shape[1]);
        let f = self.cfg.tsconv.feature_maps;
        let t2 = self.pool.shape()[1];
        let x = if self.cfg.tsconv.normalize {
            x5.layer_norm(&[1, 2], nn::LAYER_NORM_EPS)
        } else {
            x5
        };
        // [B, C, T1, F]
        let conv = x.temporal_conv(p.param("tsconv.temporal_w")) + p.param("tsconv.temporal_b");
        // [B, C, F, T2]
        let pooled = conv.permute(&[0, 1, 3, 2]).matmul(p.graph().constant(self.pool.clone()));
        // [B, T2, C·F]
        let tokens = pooled.permute(&[0, 3, 1, 2]).reshape(&[b, t2, c * f]);
        let pre = nn::linear(p, "tsconv.spatial", tokens);
        (pre.elu().reshape(&[b, t2 * f]), pre)
    }

    /// Full forward pass with every intermediate exposed.
    pub fn trace<'g>(&self, p: &Bound<'g, '_>, x: Var<'g>, subjects: &[String]) -> Result<EncoderTrace<'g>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.cfg.channels || shape[2] != self.cfg.time_samples {
            return Err(Error::Shape(format!(
                "encoder expects [B, {}, {}], got {shape:?}",
                self.cfg.channels, self.cfg.time_samples
            )));
        }
        if subjects.len() != shape[0] {
            return Err(Error::Shape(format!("{} subject ids for {} trials", subjects.len(), shape[0])));
        }
        let idx = self.subject_indices(subjects)?;
        let x1 = self.subject_adapt(p, x, &idx);
        let (x2, gat_alpha) = self.gat(p, x1);
        let (x3, attention) = self.channel_transformer(p, x2);
        let (x5, gate, x4, spatial_prior) = self.gate_and_prior(p, x3);
        let (features, tsconv_pre) = self.ts_patch_embed(p, x5);
        let embedding = nn::linear(p, "projection_head.lin", features);
        Ok(EncoderTrace {
            x1,
            x2,
            gat_alpha,
            x3,
            attention,
            gate,
            x4,
            spatial_prior,
            x5,
            tsconv_pre,
            features,
            embedding,
        })
    }

    /// `F_eeg` for a batch, `[B, d]`.
    pub fn forward<'g>(&self, p: &Bound<'g, '_>, x: Var<'g>, subjects: &[String]) -> Result<Var<'g>> {
        Ok(self.trace(p, x, subjects)?.embedding)
    }

    /// Embeds trials without tracking gradients, in chunks of `batch` trials.
    pub fn encode(&self, params: &ParamStore, data: &Array3<f64>, subjects: &[String], batch: usize) -> Result<Array2<f64>> {
        let n = data.dim().0;
        if subjects.len() != n {
            return Err(Error::Shape(format!("{} subject ids for {n} trials", subjects.len())));
        }
        let mut out = Array2::zeros((n, self.cfg.embedding_dim));
        let batch = batch.max(1);
        for start in (0..n).step_by(batch) {
            let end = (start + batch).min(n);
            let g = Graph::new();
            let p = Bound::new(&g, params);
            let chunk = data.slice(ndarray::s![start..end, .., ..]).to_owned().into_dyn();
            let emb = self.forward(&p, g.constant(chunk), &subjects[start..end])?.value();
            let emb = emb
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Shape(e.to_string()))?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&emb);
        }
        crate::error::ensure_finite("EEG embeddings", out.iter())?;
        Ok(out)
    }

    /// Checks that `params` holds exactly the tensors this encoder creates, with matching shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let reference = self.init_params(0);
        for (name, t) in reference.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("parameter `{name}` is missing")))?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Zero tensor with the shape of an `[B, C, T]` batch, handy for tests.
pub fn zeros_like_batch(b: usize, c: usize, t: usize) -> Tensor {
    Tensor::zeros(IxDyn(&[b, c, t]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            channels: 4,
            time_samples: 40,
            embedding_dim: 8,
            subject_ids: vec!["a".into(), "b".into()],
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

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn(IxDyn(shape), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn feature_length_formula() {
        let cfg = EncoderConfig {
            subject_ids: vec!["s".into()],
            ..Default::default()
        };
        // T1 = 226, T2 = (226 - 51) / 5 + 1 = 36
        assert_eq!(cfg.feature_len().unwrap(), 40 * 36);
        let short = EncoderConfig {
            time_samples: 74,
            ..cfg
        };
        let err = short.feature_len().unwrap_err().to_string();
        assert!(err.contains("T >= 75"), "{err}");
    }

    #[test]
    fn identity_subject_maps_pass_input_through() {
        let enc = Encoder::new(tiny_cfg()).unwrap();
        let params = enc.init_params(1);
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        let x = random(&[3, 4, 40], 2);
        let x1 = enc.subject_adapt(&p, g.constant(x.clone()), &[0, 1, 0]);
        assert_eq!(x1.value(), x);
    }

    #[test]
    fn unknown_subject_is_named() {
        let enc = Encoder::new(tiny_cfg()).unwrap();
        let params = enc.init_params(1);
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        let x = g.constant(random(&[1, 4, 40], 3));
        match enc.forward(&p, x, &["zz".into()]) {
            Err(Error::UnknownSubject(s)) => assert_eq!(s, "zz"),
            _ => panic!("expected an unknown-subject error"),
        }
    }

    #[test]
    fn shapes_and_row_stochasticity() {
        let enc = Encoder::new(tiny_cfg()).unwrap();
        let params = enc.init_params(4);
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        let x = g.constant(random(&[2, 4, 40], 5));
        let tr = enc.trace(&p, x, &["a".into(), "b".into()]).unwrap();
        for v in [tr.x1, tr.x2, tr.x3, tr.x4, tr.x5] {
            assert_eq!(v.shape(), vec![2, 4, 40]);
        }
        assert_eq!(tr.embedding.shape(), vec![2, 8]);
        for a in tr.gat_alpha.iter().chain(&tr.attention) {
            let v = a.value();
            let last = v.ndim() - 1;
            for s in v.sum_axis(Axis(last)).iter() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(tr.gate.value().iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let enc = Encoder::new(tiny_cfg()).unwrap();
        let params = enc.init_params(6);
        let g = Graph::new();
        let p = Bound::new(&g, &params);
        let (f, _) = enc.ts_patch_embed(&p, g.constant(zeros_like_batch(2, 4, 40)));
        assert!(f.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic_and_chunking_invariant() {
        let enc = Encoder::new(tiny_cfg()).unwrap();
        let params = enc.init_params(7);
        let x = random(&[5, 4, 40], 8).into_dimensionality::<ndarray::Ix3>().unwrap();
        let subj: Vec<String> = ["a", "b", "a", "a", "b"].iter().map(|s| s.to_string()).collect();
        let one = enc.encode(&params, &x, &subj, 5).unwrap();
        let again = enc.encode(&params, &x, &subj, 5).unwrap();
        assert_eq!(one, again);
        let chunked = enc.encode(&params, &x, &subj, 2).unwrap();
        for (a, b) in one.iter().zip(chunked.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
