//! Continuous recording → epoched trials.
//!
//! Order of operations: average re-reference, zero-phase band-pass,
//! resampling to the target rate, then per-event baseline correction and
//! epoch extraction, and finally (optionally) repetition averaging.

use std::collections::HashMap;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::filter::{butter_bandpass, resample_factors, resample_rows};
use super::{Event, RawRecording, TrialTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub baseline_ms: [f64; 2],
    pub target_rate_hz: f64,
    pub epoch_ms: [f64; 2],
    pub average_repetitions: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 0.1,
            band_high_hz: 100.0,
            filter_order: 4,
            baseline_ms: [-200.0, 0.0],
            target_rate_hz: 250.0,
            epoch_ms: [0.0, 1000.0],
            average_repetitions: true,
        }
    }
}

/// Converts a millisecond offset to a whole number of samples at `rate_hz`.
fn ms_to_samples(ms: f64, rate_hz: f64) -> Result<i64> {
    let v = ms * rate_hz / 1000.0;
    if (v - v.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{ms} ms is not a whole number of samples at {rate_hz} Hz"
        )));
    }
    Ok(v.round() as i64)
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.band_low_hz && self.band_low_hz < self.band_high_hz) {
            return Err(Error::Config(format!(
                "band edges must satisfy 0 < low < high, got [{}, {}]",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.band_high_hz > self.target_rate_hz / 2.0 {
            return Err(Error::Config(format!(
                "band high edge {} Hz exceeds the Nyquist frequency of the {} Hz target rate",
                self.band_high_hz, self.target_rate_hz
            )));
        }
        if self.epoch_ms[0] >= self.epoch_ms[1] || self.baseline_ms[0] >= self.baseline_ms[1] {
            return Err(Error::Config("epoch and baseline intervals must be non-empty".into()));
        }
        self.epoch_samples()?;
        Ok(())
    }

    /// `(start, end)` epoch offsets in target-rate samples.
    pub fn epoch_samples(&self) -> Result<(i64, i64)> {
        Ok((
            ms_to_samples(self.epoch_ms[0], self.target_rate_hz)?,
            ms_to_samples(self.epoch_ms[1], self.target_rate_hz)?,
        ))
    }

    pub fn baseline_samples(&self) -> Result<(i64, i64)> {
        Ok((
            ms_to_samples(self.baseline_ms[0], self.target_rate_hz)?,
            ms_to_samples(self.baseline_ms[1], self.target_rate_hz)?,
        ))
    }
}

/// An event that could not be epoched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedEvent {
    pub event: Event,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub trials: TrialTensor,
    pub rejected: Vec<RejectedEvent>,
    /// Repetitions merged into each output trial (all ones without averaging).
    pub group_sizes: Vec<usize>,
}

/// Subtracts the across-channel mean from every time sample.
pub fn average_reference(data: &mut Array2<f64>) {
    let mean = data.mean_axis(Axis(0)).expect("at least one channel");
    *data -= &mean.insert_axis(Axis(0));
}

/// Cuts `[onset + min(baseline, epoch) .. onset + max(..))` and subtracts the
/// per-channel baseline mean. Returns `None` when the window leaves the recording.
///
/// The returned segment starts at the earlier of the baseline and epoch
/// starts; `preprocess` crops the epoch part out of it.
pub fn baseline_corrected_segment(
    data: &Array2<f64>,
    onset: i64,
    baseline: (i64, i64),
    epoch: (i64, i64),
) -> Option<(Array2<f64>, i64)> {
    let start = onset + baseline.0.min(epoch.0);
    let end = onset + baseline.1.max(epoch.1);
    if start < 0 || end > data.ncols() as i64 {
        return None;
    }
    let mut segment = data.slice(s![.., start as usize..end as usize]).to_owned();
    let b0 = (onset + baseline.0 - start) as usize;
    let b1 = (onset + baseline.1 - start) as usize;
    let mean = segment
        .slice(s![.., b0..b1])
        .mean_axis(Axis(1))
        .expect("non-empty baseline");
    segment -= &mean.insert_axis(Axis(1));
    Some((segment, start))
}

/// Runs the full preprocessing chain on one recording.
pub fn preprocess(raw: &RawRecording, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    raw.validate()?;
    cfg.validate()?;
    if raw.sample_rate_hz < 2.0 * cfg.band_high_hz {
        return Err(Error::Config(format!(
            "recording rate {} Hz is below twice the {} Hz band edge",
            raw.sample_rate_hz, cfg.band_high_hz
        )));
    }
    if raw.events.is_empty() {
        return Err(Error::Config(format!("recording `{}` has no events", raw.subject_id)));
    }

    let mut data = raw.data.clone();
    average_reference(&mut data);
    let sos = butter_bandpass(cfg.filter_order, cfg.band_low_hz, cfg.band_high_hz, raw.sample_rate_hz)?;
    let data = sos.filtfilt_rows(&data);
    let (up, down) = resample_factors(raw.sample_rate_hz, cfg.target_rate_hz)?;
    let data = resample_rows(&data, up, down);

    let epoch = cfg.epoch_samples()?;
    let baseline = cfg.baseline_samples()?;
    let t = (epoch.1 - epoch.0) as usize;
    let c = raw.channels.len();

    let mut kept: Vec<(Array2<f64>, &Event)> = Vec::new();
    let mut rejected = Vec::new();
    for ev in &raw.events {
        let scaled = ev.onset_sample as f64 * up as f64 / down as f64;
        let onset = scaled.round() as i64;
        match baseline_corrected_segment(&data, onset, baseline, epoch) {
            Some((segment, start)) => {
                let e0 = (onset + epoch.0 - start) as usize;
                kept.push((segment.slice(s![.., e0..e0 + t]).to_owned(), ev));
            }
            None => rejected.push(RejectedEvent {
                event: ev.clone(),
                reason: format!(
                    "window [{}, {}) samples around onset {onset} leaves the {}-sample recording",
                    baseline.0.min(epoch.0),
                    baseline.1.max(epoch.1),
                    data.ncols()
                ),
            }),
        }
    }
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "every event of `{}` was rejected",
            raw.subject_id
        )));
    }

    let mut out = Array3::zeros((kept.len(), c, t));
    for (i, (epoch_data, _)) in kept.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(epoch_data);
    }
    let trials = TrialTensor::new(
        out,
        vec![raw.subject_id.clone(); kept.len()],
        kept.iter().map(|(_, e)| e.concept_id.clone()).collect(),
        kept.iter().map(|(_, e)| e.image_id.clone()).collect(),
        raw.channels.clone(),
        cfg.target_rate_hz,
    )?;
    let (trials, group_sizes) = if cfg.average_repetitions {
        average_repetitions(&trials)
    } else {
        let n = trials.len();
        (trials, vec![1; n])
    };
    Ok(Preprocessed {
        trials,
        rejected,
        group_sizes,
    })
}

/// Averages trials sharing `(subject, image)`; groups keep first-occurrence order.
pub fn average_repetitions(trials: &TrialTensor) -> (TrialTensor, Vec<usize>) {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut members: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for i in 0..trials.len() {
        let key = (trials.subject_ids[i].clone(), trials.image_ids[i].clone());
        members
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    let (_, c, t) = trials.data.dim();
    let mut data = Array3::zeros((order.len(), c, t));
    let mut subject_ids = Vec::with_capacity(order.len());
    let mut concept_ids = Vec::with_capacity(order.len());
    let mut image_ids = Vec::with_capacity(order.len());
    let mut sizes = Vec::with_capacity(order.len());
    for (g, key) in order.iter().enumerate() {
        let idx = &members[key];
        let mut acc = data.index_axis_mut(Axis(0), g);
        for &i in idx {
            acc += &trials.data.index_axis(Axis(0), i);
        }
        acc /= idx.len() as f64;
        subject_ids.push(key.0.clone());
        image_ids.push(key.1.clone());
        concept_ids.push(trials.concept_ids[idx[0]].clone());
        sizes.push(idx.len());
    }
    (
        TrialTensor {
            data,
            subject_ids,
            concept_ids,
            image_ids,
            channel_names: trials.channel_names.clone(),
            sample_rate_hz: trials.sample_rate_hz,
        },
        sizes,
    )
}

/// Per-trial, per-channel standardization over time.
///
/// Channels with (numerically) zero variance are only centred.
pub fn zscore_trials(trials: &TrialTensor) -> TrialTensor {
    let mut out = trials.clone();
    for mut lane in out.data.lanes_mut(Axis(2)) {
        let n = lane.len() as f64;
        let mean = lane.sum() / n;
        let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 {
            lane.mapv_inplace(|v| (v - mean) / sd);
        } else {
            lane.mapv_inplace(|v| v - mean);
        }
    }
    out
}

/// Zero-phase band-pass of every trial; used by the spectral analyses.
pub fn bandpass_trials(trials: &TrialTensor, low_hz: f64, high_hz: f64, order: usize) -> Result<TrialTensor> {
    let sos = butter_bandpass(order, low_hz, high_hz, trials.sample_rate_hz)?;
    let mut out = trials.clone();
    for mut lane in out.data.lanes_mut(Axis(2)) {
        let filtered = sos.filtfilt(lane.view());
        lane.assign(&filtered);
    }
    Ok(out)
}
