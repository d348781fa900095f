pub mod analyze;
pub mod preprocess;
pub mod sweep;
pub mod synth;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use neurodecode::data::dataset::{read_trials, resolve_bank_stem};
use neurodecode::data::{FeatureBank, TrialTensor};
use neurodecode::evaluation::RetrievalResult;
use neurodecode::pipeline::{run_stage1, Evaluation, Prepared, Stage1};
use neurodecode::storage::{self, container_paths};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{mean_std, seed_dir};

/// Trials and features a training command works on.
pub struct Inputs {
    pub train: TrialTensor,
    pub test: TrialTensor,
    pub bank: FeatureBank,
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn trial_stem(data: &Path, split: &str) -> Result<PathBuf> {
    let stem = data.join(split);
    require_file(&container_paths(&stem, "f64").0, &format!("{split} trials"))?;
    Ok(stem)
}

/// Reads `<data>/train`, `<data>/test` and the feature bank.
///
/// The bank is the `--bank` argument, the config's `bank`, or `<data>/bank`.
pub fn load_inputs(cfg: &RunConfig, data: Option<&Path>, bank: Option<&str>) -> Result<Inputs> {
    let data = data
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| CliError::Usage("no dataset given (use --data or the config's `data`)".into()))?;
    let train = read_trials(&trial_stem(&data, "train")?)?;
    let test = read_trials(&trial_stem(&data, "test")?)?;
    let bank_stem = match bank.map(str::to_string).or_else(|| cfg.bank.clone()) {
        Some(name) => resolve_bank_stem(&name).map_err(|e| CliError::Usage(e.to_string()))?,
        None => {
            let stem = data.join("bank");
            require_file(&container_paths(&stem, "f32").0, "feature bank")?;
            stem
        }
    };
    let bank = FeatureBank::read(&bank_stem)?;
    Ok(Inputs { train, test, bank })
}

/// Pre-trained encoder for `seed`: loaded from `pretrained` or trained now.
pub fn stage1_for(
    pretrained: Option<&Path>,
    prepared: &Prepared,
    inputs: &Inputs,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Stage1> {
    let Some(dir) = pretrained else {
        return Ok(run_stage1(prepared, &inputs.bank, &cfg.pipeline, seed)?);
    };
    let stem = dir.join(seed_dir(seed)).join("encoder");
    require_file(&container_paths(&stem, "f64").0, "pre-trained checkpoint")?;
    let (params, meta) = storage::load_checkpoint(&stem)?;
    let encoder = serde_json::from_value(meta["encoder"].clone()).map_err(neurodecode::Error::from)?;
    let history = serde_json::from_value(meta["history"].clone()).unwrap_or_default();
    Ok(Stage1 {
        encoder,
        params,
        history,
    })
}

pub fn retrieval_json(r: &RetrievalResult) -> Value {
    json!({
        "n_candidates": r.n_candidates,
        "top_k": r.top_k_accuracy,
        "per_subject": r.per_subject_scores,
    })
}

pub fn evaluation_json(e: &Evaluation) -> Value {
    json!({ "image": retrieval_json(&e.image), "text": retrieval_json(&e.text) })
}

/// `seed, modality, k, accuracy` rows.
pub fn evaluation_rows(seed: u64, e: &Evaluation) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (modality, r) in [("image", &e.image), ("text", &e.text)] {
        for (k, acc) in &r.top_k_accuracy {
            rows.push(vec![seed.to_string(), modality.into(), k.to_string(), acc.to_string()]);
        }
    }
    rows
}

/// `seed, modality, subject, k, accuracy` rows.
pub fn subject_rows(seed: u64, e: &Evaluation) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (modality, r) in [("image", &e.image), ("text", &e.text)] {
        for (subject, scores) in &r.per_subject_scores {
            for (k, acc) in scores {
                rows.push(vec![seed.to_string(), modality.into(), subject.clone(), k.to_string(), acc.to_string()]);
            }
        }
    }
    rows
}

/// Mean and standard deviation over seeds per modality and k.
pub fn summarize(evals: &[Evaluation]) -> Value {
    let mut out = serde_json::Map::new();
    for modality in ["image", "text"] {
        let mut per_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for e in evals {
            let r = if modality == "image" { &e.image } else { &e.text };
            for (k, acc) in &r.top_k_accuracy {
                per_k.entry(*k).or_default().push(*acc);
            }
        }
        let stats: serde_json::Map<String, Value> = per_k
            .into_iter()
            .map(|(k, v)| {
                let (m, s) = mean_std(&v);
                (format!("top{k}"), json!({ "mean": m, "std": s }))
            })
            .collect();
        out.insert(modality.into(), Value::Object(stats));
    }
    Value::Object(out)
}

pub fn summary_line(seed: u64, e: &Evaluation) -> String {
    let fmt = |r: &RetrievalResult| {
        r.top_k_accuracy
            .iter()
            .map(|(k, a)| format!("top-{k} {:.1}%", 100.0 * a))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!("seed {seed}: image {} | text {}", fmt(&e.image), fmt(&e.text))
}
