//! Directory layout for raw recordings and epoched trial files.
//!
//! A dataset root holds one directory per subject:
//!
//! ```text
//! <root>/<subject_id>/raw.json    channel names, sample rate, sample count
//! <root>/<subject_id>/raw.f32     channels × samples, row-major, little-endian
//! <root>/<subject_id>/events.csv  onset_sample,concept_id,image_id,repetition[,split]
//! ```
//!
//! The optional `split` column tags each event `train` or `test`; untagged
//! events count as training events.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Event, RawRecording, TrialTensor};
use crate::error::{Error, Result};
use crate::storage::{self, container_paths, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventSplit {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    format_version: u32,
    subject_id: String,
    channels: Vec<String>,
    sample_rate_hz: f64,
    n_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    onset_sample: usize,
    concept_id: String,
    image_id: String,
    repetition: u32,
    #[serde(default)]
    split: Option<EventSplit>,
}

/// A recording with the per-event split tags from its events table.
#[derive(Debug, Clone)]
pub struct SubjectRecording {
    pub raw: RawRecording,
    pub splits: Vec<EventSplit>,
}

impl SubjectRecording {
    /// The recording restricted to events tagged `split`.
    pub fn events_for(&self, split: EventSplit) -> RawRecording {
        let events = self
            .raw
            .events
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(e, _)| e.clone())
            .collect();
        RawRecording {
            events,
            ..self.raw.clone()
        }
    }
}

/// Subject directories under `root` that contain a `raw.json`, sorted.
pub fn list_subjects(root: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        if entry.path().join("raw.json").is_file() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_subject(root: &Path, rec: &RawRecording, splits: Option<&[EventSplit]>) -> Result<()> {
    rec.validate()?;
    if let Some(s) = splits {
        if s.len() != rec.events.len() {
            return Err(Error::Shape(format!("{} split tags for {} events", s.len(), rec.events.len())));
        }
    }
    let dir = root.join(&rec.subject_id);
    let manifest = RawManifest {
        format_version: FORMAT_VERSION,
        subject_id: rec.subject_id.clone(),
        channels: rec.channels.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        n_samples: rec.data.ncols(),
    };
    let samples: Vec<f32> = rec.data.iter().map(|&v| v as f32).collect();
    storage::write_atomic(&dir.join("raw.f32"), &storage::f32_to_bytes(&samples))?;
    storage::write_json(&dir.join("raw.json"), &manifest)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, e) in rec.events.iter().enumerate() {
        w.serialize(EventRow {
            onset_sample: e.onset_sample,
            concept_id: e.concept_id.clone(),
            image_id: e.image_id.clone(),
            repetition: e.repetition,
            split: splits.map(|s| s[i]),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    storage::write_atomic(&dir.join("events.csv"), &bytes)
}

pub fn read_subject(root: &Path, subject_id: &str) -> Result<SubjectRecording> {
    let dir = root.join(subject_id);
    let mpath = dir.join("raw.json");
    let manifest: RawManifest = serde_json::from_slice(&storage::read_bytes(&mpath)?)?;
    storage::check_version(manifest.format_version, &mpath.display().to_string())?;
    let samples = storage::bytes_to_f32(&storage::read_bytes(&dir.join("raw.f32"))?)?;
    let c = manifest.channels.len();
    if samples.len() != c * manifest.n_samples {
        return Err(Error::Format(format!(
            "{}: expected {c} × {} samples, blob holds {}",
            dir.display(),
            manifest.n_samples,
            samples.len()
        )));
    }
    let data = Array2::from_shape_vec((c, manifest.n_samples), samples.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Format(e.to_string()))?;

    let epath = dir.join("events.csv");
    let mut reader = csv::Reader::from_path(&epath).map_err(|e| Error::Format(format!("{}: {e}", epath.display())))?;
    let mut events = Vec::new();
    let mut splits = Vec::new();
    for row in reader.deserialize::<EventRow>() {
        let row = row?;
        splits.push(row.split.unwrap_or(EventSplit::Train));
        events.push(Event {
            onset_sample: row.onset_sample,
            concept_id: row.concept_id,
            image_id: row.image_id,
            repetition: row.repetition,
        });
    }
    if events.is_empty() {
        return Err(Error::Format(format!("{} lists no events", epath.display())));
    }
    let raw = RawRecording {
        subject_id: manifest.subject_id,
        channels: manifest.channels,
        sample_rate_hz: manifest.sample_rate_hz,
        data,
        events,
    };
    raw.validate()?;
    Ok(SubjectRecording { raw, splits })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialManifest {
    format_version: u32,
    kind: String,
    dtype: String,
    shape: [usize; 3],
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    subject_ids: Vec<String>,
    concept_ids: Vec<String>,
    image_ids: Vec<String>,
}

/// `<stem>.manifest.json` + `<stem>.f64`.
pub fn write_trials(stem: &Path, trials: &TrialTensor) -> Result<()> {
    trials.validate()?;
    let (b, c, t) = trials.data.dim();
    let manifest = TrialManifest {
        format_version: FORMAT_VERSION,
        kind: "trials".into(),
        dtype: "f64".into(),
        shape: [b, c, t],
        sample_rate_hz: trials.sample_rate_hz,
        channel_names: trials.channel_names.clone(),
        subject_ids: trials.subject_ids.clone(),
        concept_ids: trials.concept_ids.clone(),
        image_ids: trials.image_ids.clone(),
    };
    let values: Vec<f64> = trials.data.iter().copied().collect();
    let (mpath, bpath) = container_paths(stem, "f64");
    storage::write_atomic(&bpath, &storage::f64_to_bytes(&values))?;
    storage::write_json(&mpath, &manifest)
}

pub fn read_trials(stem: &Path) -> Result<TrialTensor> {
    let (mpath, bpath) = container_paths(stem, "f64");
    let m: TrialManifest = serde_json::from_slice(&storage::read_bytes(&mpath)?)?;
    storage::check_version(m.format_version, &mpath.display().to_string())?;
    if m.kind != "trials" || m.dtype != "f64" {
        return Err(Error::Format(format!("{} is not an f64 trial file", mpath.display())));
    }
    let values = storage::bytes_to_f64(&storage::read_bytes(&bpath)?)?;
    let [b, c, t] = m.shape;
    if values.len() != b * c * t {
        return Err(Error::Format(format!(
            "trial manifest declares {b}×{c}×{t}, blob holds {} values",
            values.len()
        )));
    }
    let data = Array3::from_shape_vec((b, c, t), values).map_err(|e| Error::Format(e.to_string()))?;
    TrialTensor::new(data, m.subject_ids, m.concept_ids, m.image_ids, m.channel_names, m.sample_rate_hz)
}

/// Resolves a feature bank argument: an existing stem is used as is,
/// otherwise a bare name is looked up under `$NEURODECODE_CACHE`.
pub fn resolve_bank_stem(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if container_paths(&direct, "f32").0.is_file() {
        return Ok(direct);
    }
    match std::env::var_os("NEURODECODE_CACHE") {
        Some(cache) => {
            let stem = Path::new(&cache).join(name);
            if container_paths(&stem, "f32").0.is_file() {
                Ok(stem)
            } else {
                Err(Error::Config(format!(
                    "feature bank `{name}` not found directly or under {}",
                    stem.display()
                )))
            }
        }
        None => Err(Error::Config(format!(
            "feature bank `{name}` not found and NEURODECODE_CACHE is unset"
        ))),
    }
}
