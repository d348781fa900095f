//! Tri-modal contrastive alignment.
//!
//! EEG embeddings, projected image features and raw text features are
//! L2-normalized and compared with a shared learnable temperature
//! `τ = exp(log_tau)`. The objective is `(1 − α)·L_EI + α·L_IT`, each term a
//! symmetric InfoNCE over the batch.

use ndarray::{Array2, Array3, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{FeatureBank, TrialTensor};
use crate::encoder::{Encoder, GROUPS};
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{init, AdamW, Bound, OptimizerConfig, ParamStore};

pub const LOG_TAU: &str = "log_tau.value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub alpha: f64,
    pub tau_init: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub checkpoints_kept: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tau_init: 1.0 / 0.07,
            batch_size: 1000,
            max_epochs: 150,
            patience: 10,
            checkpoints_kept: 3,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.optimizer.validate()?;
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return Err(Error::Config(format!("tau_init {} must be positive", self.tau_init)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.checkpoints_kept == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and checkpoints_kept must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// `S_EI = τ F_eeg F_imgᵀ` and `S_IT = τ F_img F_textᵀ` for normalized rows.
pub fn similarity_matrices<'g>(f_eeg: Var<'g>, f_img: Var<'g>, f_text: Var<'g>, tau: Var<'g>) -> (Var<'g>, Var<'g>) {
    let s_ei = f_eeg.matmul(f_img.transpose()) * tau;
    let s_it = f_img.matmul(f_text.transpose()) * tau;
    (s_ei, s_it)
}

/// Mean of the row-wise and column-wise cross-entropies with targets on the diagonal.
pub fn symmetric_infonce<'g>(s: Var<'g>) -> Var<'g> {
    let b = s.shape()[0];
    let eye = s.graph().constant(Array2::<f64>::eye(b).into_dyn());
    let rows = (s.log_softmax() * eye).sum();
    let cols = (s.transpose().log_softmax() * eye).sum();
    (rows + cols).scale(-0.5 / b as f64)
}

/// `(1 − α)·L_EI + α·L_IT`.
pub fn total_loss<'g>(l_ei: Var<'g>, l_it: Var<'g>, alpha: f64) -> Result<Var<'g>> {
    check_alpha(alpha)?;
    Ok(l_ei.scale(1.0 - alpha) + l_it.scale(alpha))
}

/// Trainable state for alignment: encoder groups, image projection and `log_tau`.
pub fn init_align_params(encoder_params: &ParamStore, backbone_dim: usize, d: usize, tau_init: f64, seed: u64) -> ParamStore {
    let mut store = encoder_params.clone();
    if backbone_dim == d {
        store.insert("image_proj.lin_w", Array2::<f64>::eye(d).into_dyn());
        store.insert("image_proj.lin_b", init::zeros(&[d]));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a6e);
        nn::init_linear(&mut store, "image_proj.lin", backbone_dim, d, &mut rng);
    }
    store.insert(LOG_TAU, Tensor::from_elem(IxDyn(&[]), tau_init.ln()));
    store
}

pub fn tau_of(params: &ParamStore) -> Result<f64> {
    Ok(params.require(LOG_TAU)?.iter().next().copied().unwrap_or(0.0).exp())
}

/// Normalized embeddings of one batch plus the loss terms.
pub struct BatchLosses<'g> {
    pub l_ei: Var<'g>,
    pub l_it: Var<'g>,
    pub total: Var<'g>,
}

/// Builds the objective for one batch on graph `p`.
pub fn batch_losses<'g>(
    encoder: &Encoder,
    p: &Bound<'g, '_>,
    eeg: &Array3<f64>,
    subjects: &[String],
    img: &Array2<f64>,
    text: &Array2<f64>,
    alpha: f64,
) -> Result<BatchLosses<'g>> {
    let g = p.graph();
    let f_eeg = encoder.forward(p, g.constant(eeg.clone().into_dyn()), subjects)?.l2_normalize();
    let f_img = nn::linear(p, "image_proj.lin", g.constant(img.clone().into_dyn())).l2_normalize();
    let f_text = g.constant(text.clone().into_dyn()).l2_normalize();
    let tau = p.param(LOG_TAU).exp();
    let (s_ei, s_it) = similarity_matrices(f_eeg, f_img, f_text, tau);
    let l_ei = symmetric_infonce(s_ei);
    let l_it = symmetric_infonce(s_it);
    let total = total_loss(l_ei, l_it, alpha)?;
    Ok(BatchLosses { l_ei, l_it, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct AlignCheckpoint {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ParamStore,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    /// Lowest validation loss first.
    pub checkpoints: Vec<AlignCheckpoint>,
    pub final_params: ParamStore,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

struct Inputs {
    img: Array2<f64>,
    text: Array2<f64>,
}

fn bank_inputs(trials: &TrialTensor, bank: &FeatureBank) -> Result<Inputs> {
    Ok(Inputs {
        img: bank.image_matrix(&trials.image_ids)?,
        text: bank.text_matrix(&trials.image_ids)?,
    })
}

/// Mean total loss over fixed-order batches, without gradients.
pub fn evaluate_loss(
    encoder: &Encoder,
    params: &ParamStore,
    trials: &TrialTensor,
    bank: &FeatureBank,
    alpha: f64,
    batch_size: usize,
) -> Result<f64> {
    let inputs = bank_inputs(trials, bank)?;
    let idx: Vec<usize> = (0..trials.len()).collect();
    let mut total = 0.0;
    for batch in idx.chunks(batch_size.max(1)) {
        let g = Graph::new();
        let p = Bound::new(&g, params);
        let subjects: Vec<String> = batch.iter().map(|&i| trials.subject_ids[i].clone()).collect();
        let l = batch_losses(
            encoder,
            &p,
            &trials.data.select(Axis(0), batch),
            &subjects,
            &inputs.img.select(Axis(0), batch),
            &inputs.text.select(Axis(0), batch),
            alpha,
        )?;
        total += l.total.item() * batch.len() as f64;
    }
    Ok(total / trials.len() as f64)
}

/// Trains encoder, image projection and temperature jointly with early stopping.
pub fn align_train(
    encoder: &Encoder,
    encoder_params: &ParamStore,
    train: &TrialTensor,
    val: &TrialTensor,
    bank: &FeatureBank,
    cfg: &AlignConfig,
    seed: u64,
) -> Result<AlignOutput> {
    cfg.validate()?;
    encoder.check_params(encoder_params)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("alignment needs non-empty train and validation sets".into()));
    }
    let inputs = bank_inputs(train, bank)?;
    bank_inputs(val, bank)?;
    let d = encoder.config().embedding_dim;
    let mut params = init_align_params(encoder_params, bank.embedding_dim, d, cfg.tau_init, seed);
    let mut opt = AdamW::new(cfg.optimizer.clone()).without_decay(LOG_TAU);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(1));

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut kept: Vec<AlignCheckpoint> = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let subjects: Vec<String> = batch.iter().map(|&i| train.subject_ids[i].clone()).collect();
            let g = Graph::new();
            let p = Bound::new(&g, &params);
            let l = batch_losses(
                encoder,
                &p,
                &train.data.select(Axis(0), batch),
                &subjects,
                &inputs.img.select(Axis(0), batch),
                &inputs.text.select(Axis(0), batch),
                cfg.alpha,
            )?;
            let value = l.total.item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!("alignment loss became {value} in epoch {epoch}")));
            }
            let grads = p.gradients(&g.backward(l.total));
            drop(p);
            opt.step(&mut params, &grads);
            sum += value * batch.len() as f64;
        }
        let val_loss = evaluate_loss(encoder, &params, val, bank, cfg.alpha, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("validation loss became {val_loss} in epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            tau: tau_of(&params)?,
        });

        kept.push(AlignCheckpoint {
            epoch,
            val_loss,
            params: params.clone(),
        });
        kept.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)));
        kept.truncate(cfg.checkpoints_kept);

        if val_loss < best {
            best = val_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(AlignOutput {
        checkpoints: kept,
        final_params: params,
        history,
        stopped_early,
    })
}

fn normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

/// Normalized EEG embeddings from one alignment checkpoint.
pub fn eeg_embeddings(encoder: &Encoder, params: &ParamStore, data: &Array3<f64>, subjects: &[String]) -> Result<Array2<f64>> {
    Ok(normalize_rows(encoder.encode(params, data, subjects, 256)?))
}

/// Projected and normalized image candidates from one alignment checkpoint.
pub fn image_embeddings(params: &ParamStore, raw: &Array2<f64>) -> Result<Array2<f64>> {
    let w = params
        .require("image_proj.lin_w")?
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::Shape(e.to_string()))?;
    let b = params
        .require("image_proj.lin_b")?
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .map_err(|e| Error::Shape(e.to_string()))?;
    if raw.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "candidates have dimension {}, projection expects {}",
            raw.ncols(),
            w.nrows()
        )));
    }
    Ok(normalize_rows(raw.dot(&w) + &b))
}

/// Which candidate modality to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

/// Mean over checkpoints of the cosine-similarity matrices `[trials, candidates]`.
///
/// Image candidates go through each checkpoint's projection; text
/// candidates are only normalized.
pub fn ensemble_predict(
    encoder: &Encoder,
    checkpoints: &[ParamStore],
    data: &Array3<f64>,
    subjects: &[String],
    candidates: &Array2<f64>,
    modality: Modality,
) -> Result<Array2<f64>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("ensemble needs at least one checkpoint".into()));
    }
    let mut acc = Array2::zeros((data.dim().0, candidates.nrows()));
    for ckpt in checkpoints {
        encoder.check_params(ckpt)?;
        let eeg = eeg_embeddings(encoder, ckpt, data, subjects)?;
        let cand = match modality {
            Modality::Image => image_embeddings(ckpt, candidates)?,
            Modality::Text => normalize_rows(candidates.clone()),
        };
        if cand.ncols() != eeg.ncols() {
            return Err(Error::Shape(format!(
                "candidate dimension {} differs from embedding dimension {}",
                cand.ncols(),
                eeg.ncols()
            )));
        }
        acc += &eeg.dot(&cand.t());
    }
    acc /= checkpoints.len() as f64;
    crate::error::ensure_finite("similarity matrix", acc.iter())?;
    Ok(acc)
}

/// Encoder groups of an alignment state, e.g. for re-use as a pre-trained start.
pub fn encoder_part(params: &ParamStore) -> ParamStore {
    let mut p = params.clone();
    p.retain_groups(&GROUPS);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var<'g>(g: &'g Graph, rows: usize, cols: usize, v: &[f64]) -> Var<'g> {
        g.constant(Tensor::from_shape_vec(IxDyn(&[rows, cols]), v.to_vec()).unwrap())
    }

    #[test]
    fn degenerate_and_uniform_batches() {
        let g = Graph::new();
        assert_eq!(symmetric_infonce(var(&g, 1, 1, &[3.7])).item(), 0.0);
        let l = symmetric_infonce(var(&g, 2, 2, &[0.0; 4])).item();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_rows_give_identity_similarity() {
        let g = Graph::new();
        let e = var(&g, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (s, _) = similarity_matrices(e, e, e, g.scalar(1.0));
        assert_eq!(s.value(), Array2::<f64>::eye(2).into_dyn());
    }

    #[test]
    fn alpha_endpoints_are_exact() {
        let g = Graph::new();
        let (a, b) = (g.scalar(0.812_345), g.scalar(2.5e-3));
        assert_eq!(total_loss(a, b, 0.0).unwrap().item(), 0.812_345);
        assert_eq!(total_loss(a, b, 1.0).unwrap().item(), 2.5e-3);
        assert!(matches!(total_loss(a, b, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn square_projection_starts_at_identity() {
        let p = init_align_params(&ParamStore::new(), 3, 3, 1.0 / 0.07, 0);
        let raw = Array2::from_shape_vec((1, 3), vec![3.0, 0.0, 4.0]).unwrap();
        let e = image_embeddings(&p, &raw).unwrap();
        assert!((e[[0, 0]] - 0.6).abs() < 1e-15 && (e[[0, 2]] - 0.8).abs() < 1e-15);
        assert!((tau_of(&p).unwrap() - 1.0 / 0.07).abs() < 1e-9);
    }
}
