//! Pre-extracted image/text embeddings keyed by image id.
//!
//! On disk a bank is `<name>.manifest.json` (ids, dimension, captions,
//! category labels, provider metadata) plus `<name>.f32`, a flat
//! little-endian `f32` blob holding, for each manifest entry in order, the
//! image vector followed by the text vector.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{self, container_paths, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Animal,
    Food,
    Vehicle,
    Tool,
    Others,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Animal,
        Category::Food,
        Category::Vehicle,
        Category::Tool,
        Category::Others,
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Animal => "animal",
            Category::Food => "food",
            Category::Vehicle => "vehicle",
            Category::Tool => "tool",
            Category::Others => "others",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank {
    pub embedding_dim: usize,
    pub image_features: BTreeMap<String, Vec<f32>>,
    pub text_features: BTreeMap<String, Vec<f32>>,
    pub captions: BTreeMap<String, String>,
    /// image id → concept id
    pub image_concepts: BTreeMap<String, String>,
    pub category_labels: BTreeMap<String, Category>,
    pub provider_metadata: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankEntry {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concept_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankManifest {
    format_version: u32,
    kind: String,
    dtype: String,
    embedding_dim: usize,
    entries: Vec<BankEntry>,
    category_labels: BTreeMap<String, Category>,
    provider_metadata: serde_json::Map<String, serde_json::Value>,
}

impl FeatureBank {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.image_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_features.is_empty()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, image: Vec<f32>, text: Vec<f32>) {
        let id = image_id.into();
        self.image_features.insert(id.clone(), image);
        self.text_features.insert(id, text);
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        for (id, v) in &self.image_features {
            let text = self
                .text_features
                .get(id)
                .ok_or_else(|| Error::Format(format!("image `{id}` has no text vector")))?;
            if v.len() != self.embedding_dim || text.len() != self.embedding_dim {
                return Err(Error::Format(format!(
                    "image `{id}` vectors have lengths {}/{} for d = {}",
                    v.len(),
                    text.len(),
                    self.embedding_dim
                )));
            }
            if !v.iter().chain(text).all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("features of image `{id}`")));
            }
        }
        if let Some(id) = self.text_features.keys().find(|k| !self.image_features.contains_key(*k)) {
            return Err(Error::Format(format!("text vector for `{id}` has no image vector")));
        }
        Ok(())
    }

    fn matrix(&self, source: &BTreeMap<String, Vec<f32>>, ids: &[String]) -> Result<Array2<f64>> {
        let missing: Vec<String> = ids.iter().filter(|id| !source.contains_key(*id)).cloned().collect();
        if !missing.is_empty() {
            let mut m = missing;
            m.sort();
            m.dedup();
            return Err(Error::MissingFeatures(m));
        }
        Ok(Array2::from_shape_fn((ids.len(), self.embedding_dim), |(i, j)| {
            source[&ids[i]][j] as f64
        }))
    }

    /// Image vectors for `ids`, one row each.
    pub fn image_matrix(&self, ids: &[String]) -> Result<Array2<f64>> {
        self.matrix(&self.image_features, ids)
    }

    pub fn text_matrix(&self, ids: &[String]) -> Result<Array2<f64>> {
        self.matrix(&self.text_features, ids)
    }

    pub fn write(&self, stem: &Path) -> Result<()> {
        self.validate()?;
        let mut blob = Vec::with_capacity(self.len() * 2 * self.embedding_dim);
        let mut entries = Vec::with_capacity(self.len());
        for (id, img) in &self.image_features {
            blob.extend_from_slice(img);
            blob.extend_from_slice(&self.text_features[id]);
            entries.push(BankEntry {
                image_id: id.clone(),
                concept_id: self.image_concepts.get(id).cloned(),
                caption: self.captions.get(id).cloned(),
            });
        }
        let manifest = BankManifest {
            format_version: FORMAT_VERSION,
            kind: "feature_bank".into(),
            dtype: "f32".into(),
            embedding_dim: self.embedding_dim,
            entries,
            category_labels: self.category_labels.clone(),
            provider_metadata: self.provider_metadata.clone(),
        };
        let (mpath, bpath) = container_paths(stem, "f32");
        storage::write_atomic(&bpath, &storage::f32_to_bytes(&blob))?;
        storage::write_json(&mpath, &manifest)
    }

    pub fn read(stem: &Path) -> Result<FeatureBank> {
        let (mpath, bpath) = container_paths(stem, "f32");
        let manifest: BankManifest = serde_json::from_slice(&storage::read_bytes(&mpath)?)?;
        storage::check_version(manifest.format_version, &mpath.display().to_string())?;
        if manifest.kind != "feature_bank" || manifest.dtype != "f32" {
            return Err(Error::Format(format!(
                "{} is not an f32 feature bank",
                mpath.display()
            )));
        }
        let d = manifest.embedding_dim;
        let blob = storage::bytes_to_f32(&storage::read_bytes(&bpath)?)?;
        let expected = manifest.entries.len() * 2 * d;
        if blob.len() != expected {
            return Err(Error::Format(format!(
                "manifest declares {} entries of dimension {d} ({expected} floats), blob holds {}",
                manifest.entries.len(),
                blob.len()
            )));
        }
        let mut bank = FeatureBank::new(d);
        for (i, e) in manifest.entries.into_iter().enumerate() {
            let base = i * 2 * d;
            bank.insert(e.image_id.clone(), blob[base..base + d].to_vec(), blob[base + d..base + 2 * d].to_vec());
            if let Some(c) = e.concept_id {
                bank.image_concepts.insert(e.image_id.clone(), c);
            }
            if let Some(c) = e.caption {
                bank.captions.insert(e.image_id, c);
            }
        }
        bank.category_labels = manifest.category_labels;
        bank.provider_metadata = manifest.provider_metadata;
        bank.validate()?;
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bank(d: usize, n: usize, seed: u64) -> FeatureBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = FeatureBank::new(d);
        for i in 0..n {
            let img = (0..d).map(|_| rng.random::<f32>() - 0.5).collect();
            let txt = (0..d).map(|_| rng.random::<f32>() * 1e-30).collect();
            bank.insert(format!("img{i:03}"), img, txt);
            bank.captions.insert(format!("img{i:03}"), format!("a photo of thing {i}"));
            bank.image_concepts.insert(format!("img{i:03}"), format!("c{}", i / 2));
        }
        bank.category_labels.insert("c0".into(), Category::Vehicle);
        bank.provider_metadata
            .insert("backbone".into(), serde_json::Value::String("stub".into()));
        bank
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bank = random_bank(16, 7, 1);
        let stem = dir.path().join("bank");
        bank.write(&stem).unwrap();
        let back = FeatureBank::read(&stem).unwrap();
        assert_eq!(back, bank);
        for (id, v) in &bank.image_features {
            let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            let back_bits: Vec<u32> = back.image_features[id].iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits, back_bits);
        }
    }

    #[test]
    fn declared_dimension_must_match_blob() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("bank");
        let mut bank = FeatureBank::new(512);
        bank.insert("a", vec![0.0; 512], vec![0.0; 512]);
        bank.write(&stem).unwrap();
        let (mpath, _) = container_paths(&stem, "f32");
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("\"embedding_dim\": 512", "\"embedding_dim\": 1024")).unwrap();
        assert!(matches!(FeatureBank::read(&stem), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("bank");
        random_bank(4, 2, 2).write(&stem).unwrap();
        let (mpath, _) = container_paths(&stem, "f32");
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(FeatureBank::read(&stem), Err(Error::Format(_))));
    }

    #[test]
    fn wide_backbone_metadata_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cnclip");
        let mut bank = FeatureBank::new(1024);
        bank.insert("img", vec![0.5; 1024], vec![0.25; 1024]);
        bank.provider_metadata.insert("backbone".into(), "CN-CLIP ResNet50".into());
        bank.write(&stem).unwrap();
        assert_eq!(FeatureBank::read(&stem).unwrap().embedding_dim, 1024);
    }

    #[test]
    fn missing_ids_are_listed() {
        let bank = random_bank(4, 2, 3);
        let err = bank
            .image_matrix(&["img000".into(), "zzz".into(), "aaa".into()])
            .unwrap_err();
        match err {
            Error::MissingFeatures(ids) => assert_eq!(ids, vec!["aaa".to_string(), "zzz".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }
}
