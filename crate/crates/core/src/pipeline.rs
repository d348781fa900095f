//! Two-stage training and evaluation on epoched trials.
//!
//! Trials are averaged over repetitions, optionally restricted (window,
//! band, or region), z-scored, and then passed through masked pre-training
//! and alignment. Restricted analyses reuse one unrestricted pre-training
//! and copy every parameter group whose shape still fits.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::align::{align_train, eeg_embeddings, ensemble_predict, AlignConfig, AlignOutput, EpochRecord, Modality};
use crate::data::preprocess::{average_repetitions, zscore_trials};
use crate::data::split::{split_train_val_stratified, Split};
use crate::data::{FeatureBank, TrialTensor};
use crate::encoder::{Encoder, EncoderConfig, TsConvConfig};
use crate::error::{Error, Result};
use crate::evaluation::restrict::{apply_band, apply_region, apply_window, BandSpec, RegionChoice, WindowSpec};
use crate::evaluation::retrieval::{unique_sorted, zero_shot_retrieval, RetrievalResult};
use crate::evaluation::rsa::{concept_means, rsa_matrix, RsaReport};
use crate::mae::{pretrain, DecoderConfig, MaeConfig, TransferReport, TransferStrategy};
use crate::params::ParamStore;

/// Subject id used for every trial when one subject map is shared.
pub const SHARED_SUBJECT: &str = "shared";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub average_repetitions: bool,
    pub zscore: bool,
    /// Shape-independent encoder settings; channels, time samples,
    /// subjects and embedding size are taken from the data.
    pub encoder: EncoderConfig,
    pub mae: MaeConfig,
    pub align: AlignConfig,
    pub transfer: TransferStrategy,
    /// Averaged training trials held out for early stopping.
    pub val_trials: usize,
    /// Seed of the validation split, kept apart from the run seed so every
    /// run sees the same held-out trials.
    pub split_seed: u64,
    /// Split file read if present and written otherwise.
    pub val_split_file: Option<PathBuf>,
    pub top_k: Vec<usize>,
    /// One subject map trained on pooled subjects.
    pub shared_subject_map: bool,
    pub band_filter_order: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            average_repetitions: true,
            zscore: true,
            encoder: EncoderConfig::default(),
            mae: MaeConfig::default(),
            align: AlignConfig::default(),
            transfer: TransferStrategy::All,
            val_trials: 740,
            split_seed: 0,
            val_split_file: None,
            top_k: vec![1, 3, 5],
            shared_subject_map: false,
            band_filter_order: 4,
        }
    }
}

impl PipelineConfig {
    /// Settings sized for the default synthetic dataset on a laptop CPU.
    pub fn desk() -> Self {
        let encoder = EncoderConfig {
            transformer_model_dim: 50,
            transformer_heads: 5,
            tsconv: TsConvConfig {
                temporal_kernel: 5,
                feature_maps: 40,
                pool_window: 9,
                pool_stride: 3,
                normalize: true,
            },
            ..EncoderConfig::default()
        };
        let mae = MaeConfig {
            decoder: DecoderConfig {
                width: 64,
                depth: 2,
                heads: 4,
                ff_dim: None,
            },
            epochs: 20,
            batch_size: 64,
            ..MaeConfig::default()
        };
        let align = AlignConfig {
            batch_size: 64,
            ..AlignConfig::default()
        };
        Self {
            encoder,
            mae,
            align,
            val_trials: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mae.validate()?;
        self.align.validate()?;
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            return Err(Error::Config(format!("top_k must be non-empty and positive, got {:?}", self.top_k)));
        }
        if self.val_trials == 0 {
            return Err(Error::Config("val_trials must be positive".into()));
        }
        Ok(())
    }

    /// Held-out indices into `train`, independent of the run seed.
    pub fn validation_split(&self, train: &TrialTensor) -> Result<Split> {
        let make = || split_train_val_stratified(&train.concept_ids, self.val_trials, self.split_seed);
        match &self.val_split_file {
            Some(path) => Split::load_or_create(path, train.len(), make),
            None => make(),
        }
    }

    /// Encoder configuration for trials shaped like `trials`.
    pub fn encoder_for(&self, trials: &TrialTensor, embedding_dim: usize) -> Result<EncoderConfig> {
        let cfg = EncoderConfig {
            channels: trials.channels(),
            time_samples: trials.time_samples(),
            embedding_dim,
            subject_ids: if self.shared_subject_map {
                vec![SHARED_SUBJECT.to_string()]
            } else {
                trials.subjects()
            },
            channel_names: trials.channel_names.clone(),
            ..self.encoder.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Subject ids as seen by the encoder.
    pub fn encoder_subjects(&self, trials: &TrialTensor) -> Vec<String> {
        if self.shared_subject_map {
            vec![SHARED_SUBJECT.to_string(); trials.len()]
        } else {
            trials.subject_ids.clone()
        }
    }

    /// Repetition averaging when enabled.
    pub fn averaged(&self, trials: &TrialTensor) -> TrialTensor {
        if self.average_repetitions {
            average_repetitions(trials).0
        } else {
            trials.clone()
        }
    }

    /// Per-trial z-scoring when enabled; applied after any restriction.
    pub fn finish(&self, trials: TrialTensor) -> TrialTensor {
        if self.zscore {
            zscore_trials(&trials)
        } else {
            trials
        }
    }

    fn relabel(&self, trials: &TrialTensor) -> TrialTensor {
        TrialTensor {
            subject_ids: self.encoder_subjects(trials),
            ..trials.clone()
        }
    }
}

/// Train and test trials after repetition averaging, before any restriction.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: TrialTensor,
    pub test: TrialTensor,
}

pub fn prepare(train: &TrialTensor, test: &TrialTensor, cfg: &PipelineConfig) -> Prepared {
    Prepared {
        train: cfg.averaged(train),
        test: cfg.averaged(test),
    }
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    pub encoder: EncoderConfig,
    pub params: ParamStore,
    /// Mean reconstruction loss per epoch; empty when pre-training is off.
    pub history: Vec<f64>,
}

/// Masked pre-training on the unrestricted training trials.
///
/// With `mae.epochs == 0` the returned parameters are a plain initialization.
pub fn run_stage1(prepared: &Prepared, bank: &FeatureBank, cfg: &PipelineConfig, seed: u64) -> Result<Stage1> {
    cfg.validate()?;
    let train = cfg.finish(prepared.train.clone());
    let enc_cfg = cfg.encoder_for(&train, bank.embedding_dim)?;
    let encoder = Encoder::new(enc_cfg.clone())?;
    if cfg.mae.epochs == 0 {
        return Ok(Stage1 {
            encoder: enc_cfg,
            params: encoder.init_params(seed),
            history: Vec::new(),
        });
    }
    let out = pretrain(&encoder, &cfg.relabel(&train), &cfg.mae, seed)?;
    Ok(Stage1 {
        encoder: enc_cfg,
        params: out.encoder_params,
        history: out.history,
    })
}

/// Copies pre-trained groups whose tensors all match the target's shapes.
///
/// Groups that do not fit keep their fresh initialization and are listed
/// in the returned vector.
pub fn transfer_compatible(
    pretrained: &ParamStore,
    target: &ParamStore,
    strategy: TransferStrategy,
) -> Result<(ParamStore, TransferReport, Vec<String>)> {
    let mut fitted = target.clone();
    let mut mismatched: Vec<String> = Vec::new();
    for group in target.groups() {
        let members = target.group(&group);
        let fits = members
            .iter()
            .all(|(name, t)| pretrained.get(name).is_some_and(|p| p.shape() == t.shape()));
        if fits {
            for name in members.keys() {
                fitted
                    .get_mut(name)
                    .expect("name comes from target")
                    .assign(pretrained.get(name).expect("checked above"));
            }
        } else {
            mismatched.push(group);
        }
    }
    let (params, report) = crate::mae::transfer_weights(&fitted, target, strategy)?;
    let reinitialized = mismatched
        .into_iter()
        .filter(|g| report.copied.contains(g))
        .collect();
    Ok((params, report, reinitialized))
}

/// Retrieval results for the image and text candidate sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub image: RetrievalResult,
    pub text: RetrievalResult,
}

#[derive(Debug, Clone)]
pub struct Stage2 {
    pub encoder: Encoder,
    pub transfer: TransferReport,
    /// Transferred groups that had to be re-initialized because their shapes changed.
    pub reinitialized: Vec<String>,
    pub align: AlignOutput,
    pub evaluation: Evaluation,
    /// Test trials as evaluated (restricted, normalized).
    pub test: TrialTensor,
}

impl Stage2 {
    pub fn history(&self) -> &[EpochRecord] {
        &self.align.history
    }

    pub fn checkpoint_params(&self) -> Vec<ParamStore> {
        self.align.checkpoints.iter().map(|c| c.params.clone()).collect()
    }
}

/// Alignment and evaluation on already restricted, averaged trials.
pub fn run_stage2(
    train: &TrialTensor,
    test: &TrialTensor,
    bank: &FeatureBank,
    stage1: &Stage1,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Stage2> {
    cfg.validate()?;
    let train = cfg.finish(train.clone());
    let test = cfg.finish(test.clone());
    let enc_cfg = cfg.encoder_for(&train, bank.embedding_dim)?;
    let encoder = Encoder::new(enc_cfg)?;
    let target = encoder.init_params(seed.wrapping_add(1));
    let (params, transfer, reinitialized) = transfer_compatible(&stage1.params, &target, cfg.transfer)?;

    let split = cfg.validation_split(&train)?;
    let enc_train = cfg.relabel(&train);
    let fit = enc_train.select(&split.train);
    let val = enc_train.select(&split.val);
    let align = align_train(&encoder, &params, &fit, &val, bank, &cfg.align, seed)?;
    let checkpoints: Vec<ParamStore> = align.checkpoints.iter().map(|c| c.params.clone()).collect();
    let evaluation = evaluate(&encoder, &checkpoints, &test, bank, cfg)?;
    Ok(Stage2 {
        encoder,
        transfer,
        reinitialized,
        align,
        evaluation,
        test,
    })
}

/// Scores checkpoint-ensemble similarities against every test image and caption.
pub fn evaluate(
    encoder: &Encoder,
    checkpoints: &[ParamStore],
    test: &TrialTensor,
    bank: &FeatureBank,
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let candidates = unique_sorted(&test.image_ids);
    let subjects = cfg.encoder_subjects(test);
    let score = |modality: Modality, raw: Array2<f64>| -> Result<RetrievalResult> {
        let sim = ensemble_predict(encoder, checkpoints, &test.data, &subjects, &raw, modality)?;
        zero_shot_retrieval(&sim, &candidates, &test.image_ids, &test.subject_ids, &cfg.top_k)
    };
    Ok(Evaluation {
        image: score(Modality::Image, bank.image_matrix(&candidates)?)?,
        text: score(Modality::Text, bank.text_matrix(&candidates)?)?,
    })
}

/// RSA over per-concept mean test embeddings (averaged across checkpoints).
pub fn concept_rsa(stage2: &Stage2, bank: &FeatureBank, cfg: &PipelineConfig) -> Result<RsaReport> {
    checkpoint_rsa(&stage2.encoder, &stage2.checkpoint_params(), &stage2.test, bank, cfg)
}

/// Same as [`concept_rsa`] for saved checkpoints and already normalized trials.
pub fn checkpoint_rsa(
    encoder: &Encoder,
    checkpoints: &[ParamStore],
    test: &TrialTensor,
    bank: &FeatureBank,
    cfg: &PipelineConfig,
) -> Result<RsaReport> {
    let subjects = cfg.encoder_subjects(test);
    let mut acc: Option<Array2<f64>> = None;
    for ckpt in checkpoints {
        let e = eeg_embeddings(encoder, ckpt, &test.data, &subjects)?;
        acc = Some(match acc {
            Some(a) => a + e,
            None => e,
        });
    }
    let emb = acc.ok_or_else(|| Error::Config("no checkpoints to embed with".into()))?;
    labelled_rsa(&emb, &test.concept_ids, bank)
}

/// RSA of the bank's own image features for `image_ids`, grouped by concept.
pub fn bank_rsa(image_ids: &[String], bank: &FeatureBank) -> Result<RsaReport> {
    let emb = bank.image_matrix(image_ids)?;
    let concepts = image_ids
        .iter()
        .map(|id| {
            bank.image_concepts
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("image `{id}` has no concept id in the bank")))
        })
        .collect::<Result<Vec<_>>>()?;
    labelled_rsa(&emb, &concepts, bank)
}

fn labelled_rsa(emb: &Array2<f64>, concept_ids: &[String], bank: &FeatureBank) -> Result<RsaReport> {
    let (concepts, means) = concept_means(emb, concept_ids)?;
    let labels = concepts
        .iter()
        .map(|c| {
            bank.category_labels
                .get(c)
                .map(|l| l.to_string())
                .ok_or_else(|| Error::Config(format!("concept `{c}` has no category label")))
        })
        .collect::<Result<Vec<_>>>()?;
    rsa_matrix(&concepts, &means, &labels)
}

/// One full run: preparation, pre-training, alignment, evaluation.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub prepared: Prepared,
    pub stage1: Stage1,
    pub stage2: Stage2,
}

pub fn run_pipeline(
    train: &TrialTensor,
    test: &TrialTensor,
    bank: &FeatureBank,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineRun> {
    let prepared = prepare(train, test, cfg);
    let stage1 = run_stage1(&prepared, bank, cfg, seed)?;
    let stage2 = run_stage2(&prepared.train, &prepared.test, bank, &stage1, cfg, seed)?;
    Ok(PipelineRun {
        prepared,
        stage1,
        stage2,
    })
}

/// One row of a window, band, or region analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub label: String,
    pub channels: usize,
    pub time_samples: usize,
    /// `None` when the restriction ran; otherwise why it was skipped.
    pub skipped: Option<String>,
    pub reinitialized: Vec<String>,
    pub epochs: usize,
    pub image_top_k: BTreeMap<usize, f64>,
    pub text_top_k: BTreeMap<usize, f64>,
}

impl AnalysisRow {
    fn skipped(label: String, reason: String) -> Self {
        Self {
            label,
            channels: 0,
            time_samples: 0,
            skipped: Some(reason),
            reinitialized: Vec::new(),
            epochs: 0,
            image_top_k: BTreeMap::new(),
            text_top_k: BTreeMap::new(),
        }
    }

    fn from_stage(label: String, s: &Stage2) -> Self {
        Self {
            label,
            channels: s.test.channels(),
            time_samples: s.test.time_samples(),
            skipped: None,
            reinitialized: s.reinitialized.clone(),
            epochs: s.align.history.len(),
            image_top_k: s.evaluation.image.top_k_accuracy.clone(),
            text_top_k: s.evaluation.text.top_k_accuracy.clone(),
        }
    }
}

fn restricted_row(
    label: String,
    train: TrialTensor,
    test: TrialTensor,
    bank: &FeatureBank,
    stage1: &Stage1,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AnalysisRow> {
    let min_t = cfg.encoder.tsconv.min_time_samples();
    if train.time_samples() < min_t {
        return Ok(AnalysisRow::skipped(
            label,
            format!("{} samples, encoder needs at least {min_t}", train.time_samples()),
        ));
    }
    let s = run_stage2(&train, &test, bank, stage1, cfg, seed)?;
    Ok(AnalysisRow::from_stage(label, &s))
}

/// Re-trains Stage 2 on each time window of the averaged trials.
pub fn temporal_window_analysis(
    prepared: &Prepared,
    bank: &FeatureBank,
    stage1: &Stage1,
    windows: &[WindowSpec],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<AnalysisRow>> {
    windows
        .iter()
        .map(|w| {
            let train = apply_window(&prepared.train, w)?;
            let test = apply_window(&prepared.test, w)?;
            restricted_row(w.to_string(), train, test, bank, stage1, cfg, seed)
        })
        .collect()
}

/// Re-trains Stage 2 on each band-passed copy of the averaged trials.
pub fn spectral_band_analysis(
    prepared: &Prepared,
    bank: &FeatureBank,
    stage1: &Stage1,
    bands: &[BandSpec],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<AnalysisRow>> {
    for b in bands {
        b.validate(prepared.train.sample_rate_hz)?;
    }
    bands
        .iter()
        .map(|b| {
            let train = apply_band(&prepared.train, b, cfg.band_filter_order)?;
            let test = apply_band(&prepared.test, b, cfg.band_filter_order)?;
            restricted_row(b.name.to_string(), train, test, bank, stage1, cfg, seed)
        })
        .collect()
}

/// Re-trains Stage 2 on the channels of each region.
pub fn spatial_region_analysis(
    prepared: &Prepared,
    bank: &FeatureBank,
    stage1: &Stage1,
    regions: &[RegionChoice],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<AnalysisRow>> {
    regions
        .iter()
        .map(|r| {
            let (Some(train), Some(test)) = (apply_region(&prepared.train, r)?, apply_region(&prepared.test, r)?)
            else {
                return Ok(AnalysisRow::skipped(r.to_string(), "no channels in region".into()));
            };
            restricted_row(r.to_string(), train, test, bank, stage1, cfg, seed)
        })
        .collect()
}
