//! Ingestion, preprocessing, synthetic data, and feature banks.

pub mod captions;
pub mod dataset;
pub mod feature_bank;
pub mod filter;
pub mod montage;
pub mod preprocess;
pub mod split;
pub mod synthetic;

use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use feature_bank::{Category, FeatureBank};
pub use preprocess::{average_repetitions, preprocess, zscore_trials, PreprocessConfig};
pub use split::{split_train_val, split_train_val_stratified, Split};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

/// One stimulus onset in a continuous recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub onset_sample: usize,
    pub concept_id: String,
    pub image_id: String,
    pub repetition: u32,
}

/// A continuous multichannel recording with its event table.
#[derive(Debug, Clone)]
pub struct RawRecording {
    pub subject_id: String,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    /// channels × samples
    pub data: ndarray::Array2<f64>,
    pub events: Vec<Event>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.data.nrows() {
            return Err(Error::Shape(format!(
                "{} channel names for {} data rows",
                self.channels.len(),
                self.data.nrows()
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let n = self.data.ncols();
        if let Some(e) = self.events.iter().find(|e| e.onset_sample >= n) {
            return Err(Error::Format(format!(
                "event onset {} outside recording of {n} samples",
                e.onset_sample
            )));
        }
        Ok(())
    }
}

/// A batch of epoched trials, `trials × channels × time`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTensor {
    pub data: Array3<f64>,
    pub subject_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub image_ids: Vec<String>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
}

impl TrialTensor {
    pub fn new(
        data: Array3<f64>,
        subject_ids: Vec<String>,
        concept_ids: Vec<String>,
        image_ids: Vec<String>,
        channel_names: Vec<String>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        let t = Self {
            data,
            subject_ids,
            concept_ids,
            image_ids,
            channel_names,
            sample_rate_hz,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let (b, c, _) = self.data.dim();
        if self.subject_ids.len() != b || self.concept_ids.len() != b || self.image_ids.len() != b {
            return Err(Error::Shape(format!(
                "label lists ({}, {}, {}) do not match {b} trials",
                self.subject_ids.len(),
                self.concept_ids.len(),
                self.image_ids.len()
            )));
        }
        if self.channel_names.len() != c {
            return Err(Error::Shape(format!(
                "{} channel names for {c} channels",
                self.channel_names.len()
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        crate::error::ensure_finite("trial data", self.data.iter())
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn time_samples(&self) -> usize {
        self.data.dim().2
    }

    /// Sorted, de-duplicated subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut s = self.subject_ids.clone();
        s.sort();
        s.dedup();
        s
    }

    /// Trials at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TrialTensor {
        let pick = |v: &[String]| indices.iter().map(|&i| v[i].clone()).collect();
        TrialTensor {
            data: self.data.select(Axis(0), indices),
            subject_ids: pick(&self.subject_ids),
            concept_ids: pick(&self.concept_ids),
            image_ids: pick(&self.image_ids),
            channel_names: self.channel_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Keeps only the channels at `indices`.
    pub fn select_channels(&self, indices: &[usize]) -> TrialTensor {
        TrialTensor {
            data: self.data.select(Axis(1), indices),
            channel_names: indices.iter().map(|&i| self.channel_names[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Keeps time samples `[start, end)`.
    pub fn crop_time(&self, start: usize, end: usize) -> Result<TrialTensor> {
        if start >= end || end > self.time_samples() {
            return Err(Error::Config(format!(
                "time crop [{start}, {end}) outside [0, {})",
                self.time_samples()
            )));
        }
        Ok(TrialTensor {
            data: self.data.slice(s![.., .., start..end]).to_owned(),
            ..self.clone()
        })
    }

    /// Stacks trial sets recorded with identical channel layouts.
    pub fn concat(parts: &[TrialTensor]) -> Result<TrialTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
        for p in parts {
            if p.channel_names != first.channel_names
                || p.time_samples() != first.time_samples()
                || p.sample_rate_hz != first.sample_rate_hz
            {
                return Err(Error::Shape("trial sets have different layouts".into()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let gather = |f: fn(&TrialTensor) -> &Vec<String>| parts.iter().flat_map(|p| f(p).iter().cloned()).collect();
        Ok(TrialTensor {
            data,
            subject_ids: gather(|p| &p.subject_ids),
            concept_ids: gather(|p| &p.concept_ids),
            image_ids: gather(|p| &p.image_ids),
            channel_names: first.channel_names.clone(),
            sample_rate_hz: first.sample_rate_hz,
        })
    }
}
