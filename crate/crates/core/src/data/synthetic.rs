//! Planted-signal datasets with zero-shot structure.
//!
//! Each image has a unit feature vector `v`. A trial of subject `s` is
//!
//! ```text
//! x = snr · mask ⊙ (M_s · A · S(v)) + noise_std · ε
//! ```
//!
//! where `S(v) = Σ_i v_i Φ_i` mixes smooth evoked-response waveforms
//! (`signal_rank` × T each, unit RMS), `A` is a fixed C × rank spatial
//! pattern, `M_s` a per-subject perturbation of the identity, `mask`
//! optionally keeps one scalp region, and `ε` is standard normal.
//! Training and test concepts are disjoint.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::montage::{region_of, standard_subset, Region};
use super::{Category, FeatureBank, TrialTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Training concepts.
    pub n_concepts: usize,
    /// Held-out concepts, one image each.
    pub n_test_concepts: usize,
    pub images_per_concept: usize,
    pub repetitions: usize,
    pub n_subjects: usize,
    pub channels: usize,
    pub time_samples: usize,
    pub embedding_dim: usize,
    pub signal_to_noise: f64,
    pub n_categories: usize,
    pub seed: u64,
    pub signal_rank: usize,
    pub noise_std: f64,
    /// Spread of concepts around their category centre.
    pub cluster_spread: f64,
    /// Spread of images around their concept.
    pub image_jitter: f64,
    /// Spread of text features around their image feature.
    pub text_noise: f64,
    /// Plant the signal only in this region's channels.
    pub signal_region: Option<Region>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_concepts: 20,
            n_test_concepts: 10,
            images_per_concept: 10,
            repetitions: 4,
            n_subjects: 2,
            channels: 16,
            time_samples: 50,
            embedding_dim: 32,
            signal_to_noise: 2.0,
            n_categories: 5,
            seed: 0,
            signal_rank: 4,
            noise_std: 1.0,
            cluster_spread: 1.0,
            image_jitter: 0.3,
            text_noise: 0.2,
            signal_region: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_concepts", self.n_concepts),
            ("n_test_concepts", self.n_test_concepts),
            ("images_per_concept", self.images_per_concept),
            ("repetitions", self.repetitions),
            ("n_subjects", self.n_subjects),
            ("channels", self.channels),
            ("time_samples", self.time_samples),
            ("embedding_dim", self.embedding_dim),
            ("n_categories", self.n_categories),
            ("signal_rank", self.signal_rank),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_categories > Category::ALL.len() {
            return Err(Error::Config(format!(
                "at most {} categories are supported",
                Category::ALL.len()
            )));
        }
        for (name, v) in [
            ("signal_to_noise", self.signal_to_noise),
            ("noise_std", self.noise_std),
            ("cluster_spread", self.cluster_spread),
            ("image_jitter", self.image_jitter),
            ("text_noise", self.text_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        standard_subset(self.channels)
            .unwrap_or_else(|_| (0..self.channels).map(|i| format!("E{i}")).collect())
    }
}

/// Generated dataset plus the planted ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: TrialTensor,
    pub test: TrialTensor,
    pub bank: FeatureBank,
    /// Per subject, the linear map from a feature vector to a flattened
    /// (C·T) noise-free trial.
    pub forward_maps: Vec<Array2<f64>>,
    pub warnings: Vec<String>,
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Sum of a few Gaussian bumps, scaled to unit RMS.
fn evoked_waveform(rng: &mut impl Rng, t: usize) -> Array1<f64> {
    let mut w: Array1<f64> = Array1::zeros(t);
    let bumps = rng.random_range(2..=4);
    for _ in 0..bumps {
        let centre = rng.random_range(0.0..t as f64);
        let width = rng.random_range(0.04..0.15) * t as f64 + 0.5;
        let amp: f64 = StandardNormal.sample(rng);
        for (k, v) in w.iter_mut().enumerate() {
            let z = (k as f64 - centre) / width;
            *v += amp * (-0.5 * z * z).exp();
        }
    }
    let rms = (w.dot(&w) / t as f64).sqrt();
    if rms > 0.0 {
        w / rms
    } else {
        w
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, c, t, r) = (spec.embedding_dim, spec.channels, spec.time_samples, spec.signal_rank);
    let mut warnings = Vec::new();
    if d < spec.n_categories {
        warnings.push(format!(
            "embedding_dim {d} is below n_categories {}; category clusters overlap",
            spec.n_categories
        ));
    }

    let names = spec.channel_names();
    let mask: Array1<f64> = match spec.signal_region {
        None => Array1::ones(c),
        Some(region) => names
            .iter()
            .map(|n| region_of(n).map(|g| f64::from(u8::from(g == region))))
            .collect::<Result<Vec<_>>>()?
            .into(),
    };

    // Shared across subjects: category centres, waveforms, spatial pattern.
    let centres: Vec<Array1<f64>> = (0..spec.n_categories).map(|_| unit(normal_vec(&mut rng, d))).collect();
    // phi[i] is the rank × T pattern of feature dimension i, flattened.
    let mut phi = Array2::zeros((d, r * t));
    for i in 0..d {
        for k in 0..r {
            let w = evoked_waveform(&mut rng, t);
            phi.row_mut(i).slice_mut(ndarray::s![k * t..(k + 1) * t]).assign(&w);
        }
    }
    let pattern = normal_matrix(&mut rng, c, r, 1.0 / (r as f64).sqrt());
    let forward_maps: Vec<Array2<f64>> = (0..spec.n_subjects)
        .map(|_| {
            let mix = Array2::eye(c) + normal_matrix(&mut rng, c, c, 0.2 / (c as f64).sqrt());
            let mut spatial = mix.dot(&pattern);
            for (mut row, &m) in spatial.rows_mut().into_iter().zip(&mask) {
                row.mapv_inplace(|v| v * m);
            }
            // flat trial = vec(spatial · S(v)), S(v) = reshape(phiᵀ v) to rank × T
            let mut map = Array2::zeros((c * t, d));
            for i in 0..d {
                let s_i = phi.row(i).to_owned().into_shape_with_order((r, t)).expect("rank × T");
                let x_i = spatial.dot(&s_i);
                map.column_mut(i).assign(&Array1::from_iter(x_i.iter().copied()));
            }
            map * spec.signal_to_noise
        })
        .collect();

    let n_total = spec.n_concepts + spec.n_test_concepts;
    let mut bank = FeatureBank::new(d);
    bank.provider_metadata.insert("backbone".into(), "synthetic".into());
    bank.provider_metadata
        .insert("prompt_template".into(), super::captions::PROMPT_TEMPLATE.into());
    let mut train_images = Vec::new();
    let mut test_images = Vec::new();
    for k in 0..n_total {
        let concept = format!("c{k:03}");
        let cat = k % spec.n_categories;
        bank.category_labels.insert(concept.clone(), Category::ALL[cat]);
        let spread = spec.cluster_spread / (d as f64).sqrt();
        let cvec = unit(&centres[cat] + &(normal_vec(&mut rng, d) * spread));
        let is_test = k >= spec.n_concepts;
        let n_img = if is_test { 1 } else { spec.images_per_concept };
        for j in 0..n_img {
            let image = format!("{concept}_i{j:02}");
            let jitter = spec.image_jitter / (d as f64).sqrt();
            let img = unit(&cvec + &(normal_vec(&mut rng, d) * jitter));
            let tnoise = spec.text_noise / (d as f64).sqrt();
            let txt = unit(&img + &(normal_vec(&mut rng, d) * tnoise));
            bank.insert(
                image.clone(),
                img.iter().map(|&v| v as f32).collect(),
                txt.iter().map(|&v| v as f32).collect(),
            );
            bank.captions.insert(image.clone(), format!("a photo of {concept}"));
            bank.image_concepts.insert(image.clone(), concept.clone());
            let entry = (concept.clone(), image, img);
            if is_test {
                test_images.push(entry);
            } else {
                train_images.push(entry);
            }
        }
    }

    let mut build = |images: &[(String, String, Array1<f64>)]| -> Result<TrialTensor> {
        let n = spec.n_subjects * images.len() * spec.repetitions;
        let mut data = Array3::zeros((n, c, t));
        let (mut subj, mut conc, mut imgs) = (Vec::new(), Vec::new(), Vec::new());
        let mut row = 0;
        for (s, map) in forward_maps.iter().enumerate() {
            for (concept, image, v) in images {
                // The bank stores f32; plant exactly what a reader will see.
                let v32 = v.mapv(|x| x as f32 as f64);
                let clean = map.dot(&v32);
                for _ in 0..spec.repetitions {
                    let mut trial = data.index_axis_mut(Axis(0), row);
                    for (dst, &x) in trial.iter_mut().zip(clean.iter()) {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *dst = x + spec.noise_std * e;
                    }
                    subj.push(format!("sub-{:02}", s + 1));
                    conc.push(concept.clone());
                    imgs.push(image.clone());
                    row += 1;
                }
            }
        }
        TrialTensor::new(data, subj, conc, imgs, names.clone(), t as f64)
    };
    let train = build(&train_images)?;
    let test = build(&test_images)?;
    Ok(SyntheticData {
        train,
        test,
        bank,
        forward_maps,
        warnings,
    })
}
