//! Channel names, scalp coordinates and region membership.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 63-channel 10-10 layout used for the reference recordings.
pub const STANDARD_63: [&str; 63] = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "F2", "F4", "F6", "F8",
    "FT9", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "FT10", "T7", "C5", "C3",
    "C1", "Cz", "C2", "C4", "C6", "T8", "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4",
    "CP6", "TP8", "TP10", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz",
    "PO4", "PO8", "O1", "Oz", "O2",
];

/// `n` names spread evenly over [`STANDARD_63`], front to back.
pub fn standard_subset(n: usize) -> Result<Vec<String>> {
    if n == 0 || n > STANDARD_63.len() {
        return Err(Error::Config(format!("channel count {n} must lie in 1..=63")));
    }
    if n == 1 {
        return Ok(vec![STANDARD_63[0].to_string()]);
    }
    Ok((0..n)
        .map(|i| {
            let idx = ((i * 62) as f64 / (n - 1) as f64).round() as usize;
            STANDARD_63[idx].to_string()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Frontal,
    Central,
    Temporal,
    Parietal,
    Occipital,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Frontal,
        Region::Central,
        Region::Temporal,
        Region::Parietal,
        Region::Occipital,
    ];

    pub fn parse(s: &str) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown region `{s}`")))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Frontal => "frontal",
            Region::Central => "central",
            Region::Temporal => "temporal",
            Region::Parietal => "parietal",
            Region::Occipital => "occipital",
        })
    }
}

const PREFIX_REGIONS: [(&str, Region); 13] = [
    ("Fp", Region::Frontal),
    ("AF", Region::Frontal),
    ("F", Region::Frontal),
    ("FC", Region::Central),
    ("C", Region::Central),
    ("FT", Region::Temporal),
    ("T", Region::Temporal),
    ("TP", Region::Temporal),
    ("CP", Region::Parietal),
    ("P", Region::Parietal),
    ("PO", Region::Occipital),
    ("O", Region::Occipital),
    ("I", Region::Occipital),
];

/// Row angle (degrees, front negative) for each electrode row.
const ROW_ANGLES: [(&str, f64); 13] = [
    ("Fp", -72.0),
    ("AF", -54.0),
    ("F", -36.0),
    ("FC", -18.0),
    ("FT", -18.0),
    ("C", 0.0),
    ("T", 0.0),
    ("CP", 18.0),
    ("TP", 18.0),
    ("P", 36.0),
    ("PO", 54.0),
    ("O", 72.0),
    ("I", 90.0),
];

/// Splits `FC3` into (`FC`, Some(3)) and `POz` into (`PO`, None).
fn split_name(name: &str) -> Option<(&str, Option<u32>)> {
    let cut = name.find(|c: char| c.is_ascii_digit() || c == 'z').unwrap_or(name.len());
    let (prefix, rest) = name.split_at(cut);
    let number = match rest {
        "z" => None,
        "" => return None,
        digits => Some(digits.parse().ok()?),
    };
    Some((prefix, number))
}

/// Region of a 10-10 channel name, decided by its longest known row prefix.
pub fn region_of(name: &str) -> Result<Region> {
    PREFIX_REGIONS
        .iter()
        .filter(|(p, _)| name.starts_with(p))
        .max_by_key(|(p, _)| p.len())
        .map(|&(_, r)| r)
        .ok_or_else(|| Error::Config(format!("channel `{name}` has no known region")))
}

/// Indices of `names` belonging to `region`.
pub fn region_channels(names: &[String], region: Region) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, n) in names.iter().enumerate() {
        if region_of(n)? == region {
            out.push(i);
        }
    }
    Ok(out)
}

/// Unit-sphere position of a 10-10 name on an idealized head, or `None`
/// for names outside the grammar.
pub fn idealized_position(name: &str) -> Option<[f64; 3]> {
    let (prefix, number) = split_name(name)?;
    let phi = ROW_ANGLES.iter().find(|(p, _)| *p == prefix)?.1.to_radians();
    let lambda = match number {
        None => 0.0,
        Some(0) => return None,
        Some(n) if n % 2 == 1 => -18.0 * ((n + 1) / 2) as f64,
        Some(n) => 18.0 * (n / 2) as f64,
    }
    .to_radians();
    Some([lambda.sin(), -lambda.cos() * phi.sin(), lambda.cos() * phi.cos()])
}

/// `n` roughly evenly spread points on the upper unit hemisphere.
pub fn hemisphere_points(n: usize) -> Array2<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Array2::from_shape_fn((n, 3), |(i, j)| {
        let z = 1.0 - (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let theta = golden * i as f64;
        match j {
            0 => r * theta.cos(),
            1 => r * theta.sin(),
            _ => z,
        }
    })
}

/// Channel positions, row `i` for `names[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    pub names: Vec<String>,
    pub coords: Array2<f64>,
}

impl Montage {
    /// Idealized 10-10 positions; if any name is unknown every channel
    /// falls back to [`hemisphere_points`].
    pub fn from_names(names: &[String]) -> Montage {
        let known: Option<Vec<[f64; 3]>> = names.iter().map(|n| idealized_position(n)).collect();
        let coords = match known {
            Some(pts) => Array2::from_shape_fn((names.len(), 3), |(i, j)| pts[i][j]),
            None => hemisphere_points(names.len()),
        };
        Montage {
            names: names.to_vec(),
            coords,
        }
    }

    /// Positions from a `name,x,y,z` CSV. Every channel must be listed.
    pub fn from_csv(path: &Path, names: &[String]) -> Result<Montage> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut table = std::collections::HashMap::new();
        for rec in reader.deserialize::<(String, f64, f64, f64)>() {
            let (n, x, y, z) = rec?;
            table.insert(n, [x, y, z]);
        }
        let mut coords = Array2::zeros((names.len(), 3));
        for (i, n) in names.iter().enumerate() {
            let p = table
                .get(n)
                .ok_or_else(|| Error::Config(format!("{} lacks channel `{n}`", path.display())))?;
            for j in 0..3 {
                coords[[i, j]] = p[j];
            }
        }
        crate::error::ensure_finite("channel coordinates", coords.iter())?;
        Ok(Montage {
            names: names.to_vec(),
            coords,
        })
    }

    pub fn select(&self, idx: &[usize]) -> Montage {
        Montage {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            coords: self.coords.select(ndarray::Axis(0), idx),
        }
    }
}
