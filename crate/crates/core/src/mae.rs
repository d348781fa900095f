//! Masked-reconstruction pre-training of the encoder.
//!
//! Trials are cut into `L = T / p` non-overlapping time patches spanning all
//! channels. A fraction of the patches is replaced with standard normal
//! noise, the corrupted trial goes through the encoder up to the tsconv
//! features, and a small transformer decoder maps those features back to
//! patch space. The loss is the mean squared error over every patch.

use std::collections::BTreeMap;

use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::TrialTensor;
use crate::encoder::{Encoder, GROUPS};
use crate::error::{Error, Result};
use crate::nn::{self, TransformerShape};
use crate::params::{group_of, init, AdamW, Bound, OptimizerConfig, ParamStore};

/// Trials cut into time patches, `[B, L, C·p]`, channel-major within a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_len: usize,
    pub n_patches: usize,
    pub patch_dim: usize,
    pub patches: Array3<f64>,
}

pub fn patchify(x: &Array3<f64>, patch_len: usize) -> Result<PatchGrid> {
    let (b, c, t) = x.dim();
    if patch_len == 0 || t % patch_len != 0 {
        return Err(Error::Config(format!(
            "patch length {patch_len} does not divide T = {t}"
        )));
    }
    let l = t / patch_len;
    let mut patches = Array3::zeros((b, l, c * patch_len));
    for bi in 0..b {
        for li in 0..l {
            for ci in 0..c {
                for j in 0..patch_len {
                    patches[[bi, li, ci * patch_len + j]] = x[[bi, ci, li * patch_len + j]];
                }
            }
        }
    }
    Ok(PatchGrid {
        patch_len,
        n_patches: l,
        patch_dim: c * patch_len,
        patches,
    })
}

pub fn unpatchify(grid: &PatchGrid) -> Array3<f64> {
    let (b, l, cp) = grid.patches.dim();
    let p = grid.patch_len;
    let c = cp / p;
    let mut x = Array3::zeros((b, c, l * p));
    for bi in 0..b {
        for li in 0..l {
            for ci in 0..c {
                for j in 0..p {
                    x[[bi, ci, li * p + j]] = grid.patches[[bi, li, ci * p + j]];
                }
            }
        }
    }
    x
}

/// Number of masked patches: `r · L` rounded half up.
pub fn masked_count(n_patches: usize, ratio: f64) -> usize {
    let v = (ratio * n_patches as f64 + 0.5 + 1e-9).floor() as usize;
    v.min(n_patches)
}

/// Sorted masked patch indices for each sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub n_patches: usize,
    pub indices: Vec<Vec<usize>>,
}

impl MaskPlan {
    /// `[B, L, 1]` indicator of masked patches.
    pub fn indicator(&self) -> Array3<f64> {
        let mut m = Array3::zeros((self.indices.len(), self.n_patches, 1));
        for (b, idx) in self.indices.iter().enumerate() {
            for &i in idx {
                m[[b, i, 0]] = 1.0;
            }
        }
        m
    }
}

pub fn sample_mask<R: Rng + ?Sized>(batch: usize, n_patches: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("masking ratio {ratio} outside [0, 1]")));
    }
    let m = masked_count(n_patches, ratio);
    let indices = (0..batch)
        .map(|_| {
            let mut v = rand::seq::index::sample(rng, n_patches, m).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(MaskPlan { n_patches, indices })
}

/// Replaces every masked patch with i.i.d. standard normal values.
pub fn corrupt<R: Rng + ?Sized>(grid: &PatchGrid, plan: &MaskPlan, rng: &mut R) -> Result<PatchGrid> {
    if plan.indices.len() != grid.patches.dim().0 || plan.n_patches != grid.n_patches {
        return Err(Error::Shape("mask plan does not match the patch grid".into()));
    }
    let mut out = grid.clone();
    for (b, idx) in plan.indices.iter().enumerate() {
        for &i in idx {
            if i >= grid.n_patches {
                return Err(Error::Shape(format!("mask index {i} outside {} patches", grid.n_patches)));
            }
            for v in out.patches.slice_mut(s![b, i, ..]).iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Defaults to twice the width.
    pub ff_dim: Option<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            width: 256,
            depth: 2,
            heads: 8,
            ff_dim: None,
        }
    }
}

impl DecoderConfig {
    fn shape(&self) -> TransformerShape {
        TransformerShape {
            dim: self.width,
            heads: self.heads,
            ff_dim: self.ff_dim.unwrap_or(2 * self.width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.heads == 0 {
            return Err(Error::Config("decoder width, depth and heads must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "decoder width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaeConfig {
    pub patch_len: usize,
    pub mask_ratio: f64,
    pub decoder: DecoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Score only masked patches instead of the full sequence.
    pub masked_only_loss: bool,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            patch_len: 10,
            mask_ratio: 0.3,
            decoder: DecoderConfig::default(),
            epochs: 200,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            masked_only_loss: false,
        }
    }
}

impl MaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if self.batch_size == 0 || self.patch_len == 0 {
            return Err(Error::Config("batch_size and patch_len must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder plus reconstruction decoder.
pub struct MaeModel<'e> {
    pub encoder: &'e Encoder,
    pub decoder: DecoderConfig,
    pub patch_len: usize,
}

impl<'e> MaeModel<'e> {
    pub fn new(encoder: &'e Encoder, decoder: DecoderConfig, patch_len: usize) -> Result<Self> {
        decoder.validate()?;
        let t = encoder.config().time_samples;
        if patch_len == 0 || t % patch_len != 0 {
            return Err(Error::Config(format!("patch length {patch_len} does not divide T = {t}")));
        }
        Ok(Self {
            encoder,
            decoder,
            patch_len,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.encoder.config().time_samples / self.patch_len
    }

    pub fn patch_dim(&self) -> usize {
        self.encoder.config().channels * self.patch_len
    }

    /// Decoder tensors under the `decoder` group.
    pub fn init_decoder(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0_de);
        let (l, w) = (self.n_patches(), self.decoder.width);
        let mut store = ParamStore::new();
        nn::init_linear(&mut store, "decoder.adapter", self.encoder.feature_len(), l * w, &mut rng);
        store.insert("decoder.pos", init::normal(&[l, w], 0.02, &mut rng));
        for i in 0..self.decoder.depth {
            nn::init_transformer_layer(&mut store, &format!("decoder.layer{i}"), self.decoder.shape(), &mut rng);
        }
        nn::init_layer_norm(&mut store, "decoder.ln", w);
        nn::init_linear(&mut store, "decoder.pred", w, self.patch_dim(), &mut rng);
        store
    }

    /// Reconstructed patches `[B, L, C·p]` from a (corrupted) trial batch `[B, C, T]`.
    pub fn reconstruct<'g>(&self, p: &Bound<'g, '_>, x: Var<'g>, subjects: &[String]) -> Result<Var<'g>> {
        let b = x.shape()[0];
        let (l, w) = (self.n_patches(), self.decoder.width);
        let features = self.encoder.trace(p, x, subjects)?.features;
        let mut z = nn::linear(p, "decoder.adapter", features).reshape(&[b, l, w]) + p.param("decoder.pos");
        for i in 0..self.decoder.depth {
            z = nn::transformer_layer(p, &format!("decoder.layer{i}"), z, self.decoder.heads).0;
        }
        Ok(nn::linear(p, "decoder.pred", nn::layer_norm(p, "decoder.ln", z)))
    }
}

/// Mean squared error over every entry.
pub fn recon_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Var<'g> {
    let diff = pred - target;
    (diff * diff).mean()
}

/// Mean squared error over masked patches only; `mask` is `[B, L, 1]`.
pub fn masked_recon_loss<'g>(pred: Var<'g>, target: Var<'g>, mask: &Array3<f64>) -> Var<'g> {
    let cp = pred.shape()[2];
    let count = mask.sum() * cp as f64;
    let diff = pred - target;
    let m = pred.graph().constant(mask.clone().into_dyn());
    (diff * diff * m).sum().scale(1.0 / count.max(1.0))
}

/// Plain-array form of [`recon_loss`].
pub fn recon_loss_values(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let g = Graph::new();
    let loss = recon_loss(g.constant(pred.clone().into_dyn()), g.constant(target.clone().into_dyn()));
    Ok(loss.item())
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    /// Encoder tensors only; the decoder is dropped.
    pub encoder_params: ParamStore,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

/// Runs masked-reconstruction pre-training from a fresh initialization.
pub fn pretrain(encoder: &Encoder, trials: &TrialTensor, cfg: &MaeConfig, seed: u64) -> Result<PretrainOutput> {
    cfg.validate()?;
    let model = MaeModel::new(encoder, cfg.decoder.clone(), cfg.patch_len)?;
    let mut params = encoder.init_params(seed);
    params.extend_from(&model.init_decoder(seed));
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let grid = patchify(&trials.data, cfg.patch_len)?;
    let n = trials.len();
    if n == 0 {
        return Err(Error::Config("no trials to pre-train on".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let clean = PatchGrid {
                patches: grid.patches.select(Axis(0), batch),
                ..grid.clone()
            };
            let plan = sample_mask(batch.len(), grid.n_patches, cfg.mask_ratio, &mut rng)?;
            let noisy = unpatchify(&corrupt(&clean, &plan, &mut rng)?);
            let subjects: Vec<String> = batch.iter().map(|&i| trials.subject_ids[i].clone()).collect();

            let g = Graph::new();
            let p = Bound::new(&g, &params);
            let pred = model.reconstruct(&p, g.constant(noisy.into_dyn()), &subjects)?;
            let target = g.constant(clean.patches.into_dyn());
            let loss = if cfg.masked_only_loss {
                masked_recon_loss(pred, target, &plan.indicator())
            } else {
                recon_loss(pred, target)
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "reconstruction loss became {value} in epoch {}",
                    epoch + 1
                )));
            }
            let grads = p.gradients(&g.backward(loss));
            drop(p);
            opt.step(&mut params, &grads);
            total += value * batch.len() as f64;
        }
        history.push(total / n as f64);
    }
    params.retain_groups(&GROUPS);
    if !params.all_finite() {
        return Err(Error::Diverged("non-finite encoder parameters after pre-training".into()));
    }
    Ok(PretrainOutput {
        encoder_params: params,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStrategy {
    None,
    AllExceptSubject,
    All,
}

/// Which parameter groups a transfer copied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub strategy: TransferStrategy,
    pub copied: Vec<String>,
    pub kept: Vec<String>,
}

/// Copies pre-trained encoder groups into `target` according to `strategy`.
pub fn transfer_weights(
    pretrained: &ParamStore,
    target: &ParamStore,
    strategy: TransferStrategy,
) -> Result<(ParamStore, TransferReport)> {
    let copy_group = |g: &str| match strategy {
        TransferStrategy::None => false,
        TransferStrategy::AllExceptSubject => g != "subject_maps",
        TransferStrategy::All => true,
    };
    let mut out = target.clone();
    let mut copied = Vec::new();
    let mut kept = Vec::new();
    let by_group: BTreeMap<String, Vec<&String>> = target.names().fold(BTreeMap::new(), |mut acc, n| {
        acc.entry(group_of(n).to_string()).or_default().push(n);
        acc
    });
    for (group, names) in by_group {
        if !GROUPS.contains(&group.as_str()) || !copy_group(&group) {
            kept.push(group);
            continue;
        }
        for name in names {
            let src = pretrained
                .get(name)
                .ok_or_else(|| Error::Shape(format!("group `{group}`: pre-trained state lacks `{name}`")))?;
            let dst = out.get_mut(name).expect("name comes from target");
            if src.shape() != dst.shape() {
                return Err(Error::Shape(format!(
                    "group `{group}`: `{name}` is {:?} in the pre-trained state but {:?} in the target",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.assign(src);
        }
        copied.push(group);
    }
    Ok((
        out,
        TransferReport {
            strategy,
            copied,
            kept,
        },
    ))
}

/// Patches of a `[B, C, T]` tensor value, as a graph constant.
pub fn patch_constant<'g>(g: &'g Graph, x: &Array3<f64>, patch_len: usize) -> Result<Var<'g>> {
    Ok(g.constant(patchify(x, patch_len)?.patches.into_dyn()))
}
