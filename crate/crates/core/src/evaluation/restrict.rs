//! Temporal windows, frequency bands, and channel regions used to restrict
//! trials before re-training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::montage::{region_channels, Region};
use crate::data::preprocess::bandpass_trials;
use crate::data::TrialTensor;
use crate::error::{Error, Result};

/// Length of the analysed epoch.
pub const EPOCH_MS: i64 = 1000;
/// Width of a sliding window.
pub const SLIDING_MS: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Cumulative,
    Sliding,
    PostOnset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub mode: WindowMode,
    pub t_ms: i64,
}

impl WindowSpec {
    pub fn new(mode: WindowMode, t_ms: i64) -> Result<Self> {
        let w = Self { mode, t_ms };
        w.interval()?;
        Ok(w)
    }

    /// `[start, end]` in milliseconds after onset.
    pub fn interval(&self) -> Result<(i64, i64)> {
        let (a, b) = match self.mode {
            WindowMode::Cumulative => (0, self.t_ms),
            WindowMode::Sliding => (self.t_ms - SLIDING_MS, self.t_ms),
            WindowMode::PostOnset => (self.t_ms, EPOCH_MS),
        };
        if a < 0 || b > EPOCH_MS || a >= b {
            return Err(Error::Config(format!(
                "{self} spans [{a}, {b}] ms, which is empty or outside [0, {EPOCH_MS}]"
            )));
        }
        Ok((a, b))
    }

    /// Sample range `[start, end)` for trials sampled at `rate_hz`.
    pub fn sample_range(&self, rate_hz: f64, time_samples: usize) -> Result<(usize, usize)> {
        let (a, b) = self.interval()?;
        let to_samples = |ms: i64| (ms as f64 * rate_hz / 1000.0).round() as usize;
        let (start, end) = (to_samples(a), to_samples(b).min(time_samples));
        if start >= end {
            return Err(Error::Config(format!("{self} covers no samples at {rate_hz} Hz")));
        }
        Ok((start, end))
    }

    /// The three window families over onsets 100, 200, …, 1000 ms.
    ///
    /// Post-onset windows stop at 900 ms because `[1000, 1000]` is empty.
    pub fn grid() -> Vec<WindowSpec> {
        let mut out = Vec::new();
        for mode in [WindowMode::Cumulative, WindowMode::Sliding, WindowMode::PostOnset] {
            for t in (100..=EPOCH_MS).step_by(100) {
                if let Ok(w) = WindowSpec::new(mode, t) {
                    out.push(w);
                }
            }
        }
        out
    }

    pub fn is_full(&self) -> bool {
        self.interval().map(|iv| iv == (0, EPOCH_MS)).unwrap_or(false)
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            WindowMode::Cumulative => "cumulative",
            WindowMode::Sliding => "sliding",
            WindowMode::PostOnset => "post_onset",
        };
        write!(f, "{mode}@{}ms", self.t_ms)
    }
}

/// Crops trials to a window; the full epoch is returned unchanged.
pub fn apply_window(trials: &TrialTensor, window: &WindowSpec) -> Result<TrialTensor> {
    let (start, end) = window.sample_range(trials.sample_rate_hz, trials.time_samples())?;
    if start == 0 && end == trials.time_samples() {
        return Ok(trials.clone());
    }
    trials.crop_time(start, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
    Full,
}

impl Band {
    pub const ALL: [Band; 6] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma, Band::Full];

    /// Conventional edges in Hz. `Full` reports the preprocessing pass band.
    pub fn edges(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 13.0),
            Band::Beta => (13.0, 30.0),
            Band::Gamma => (30.0, 100.0),
            Band::Full => (0.1, 100.0),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub name: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn standard(name: Band) -> BandSpec {
        let (low_hz, high_hz) = name.edges();
        BandSpec { name, low_hz, high_hz }
    }

    pub fn all() -> Vec<BandSpec> {
        Band::ALL.into_iter().map(BandSpec::standard).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.name == Band::Full
    }

    /// Edge ordering and, for filtering bands, the Nyquist limit.
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if !(0.0 < self.low_hz && self.low_hz < self.high_hz) {
            return Err(Error::Config(format!(
                "band {} needs 0 < low < high, got [{}, {}]",
                self.name, self.low_hz, self.high_hz
            )));
        }
        if !self.is_identity() && self.high_hz >= rate_hz / 2.0 {
            return Err(Error::Config(format!(
                "band {} reaches {} Hz, at or above the Nyquist frequency {} Hz",
                self.name,
                self.high_hz,
                rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// Zero-phase band-pass of every trial; `full` is the identity.
pub fn apply_band(trials: &TrialTensor, band: &BandSpec, order: usize) -> Result<TrialTensor> {
    band.validate(trials.sample_rate_hz)?;
    if band.is_identity() {
        return Ok(trials.clone());
    }
    bandpass_trials(trials, band.low_hz, band.high_hz, order)
}

/// Either every channel or those of one scalp region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionChoice {
    All,
    Only(Region),
}

impl RegionChoice {
    pub fn standard() -> Vec<RegionChoice> {
        std::iter::once(RegionChoice::All)
            .chain(Region::ALL.into_iter().map(RegionChoice::Only))
            .collect()
    }

    /// Channel indices of `names` selected by this choice.
    pub fn channels(&self, names: &[String]) -> Result<Vec<usize>> {
        match self {
            RegionChoice::All => Ok((0..names.len()).collect()),
            RegionChoice::Only(r) => region_channels(names, *r),
        }
    }
}

impl fmt::Display for RegionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionChoice::All => f.write_str("all"),
            RegionChoice::Only(r) => r.fmt(f),
        }
    }
}

impl FromStr for RegionChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            Ok(RegionChoice::All)
        } else {
            Region::parse(s).map(RegionChoice::Only)
        }
    }
}

impl Serialize for RegionChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegionChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Keeps the channels of `region`; `None` when the region has none.
pub fn apply_region(trials: &TrialTensor, region: &RegionChoice) -> Result<Option<TrialTensor>> {
    let idx = region.channels(&trials.channel_names)?;
    if idx.is_empty() {
        return Ok(None);
    }
    if idx.len() == trials.channels() {
        return Ok(Some(trials.clone()));
    }
    Ok(Some(trials.select_channels(&idx)))
}
