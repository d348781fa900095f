use std::path::Path;

use neurodecode::data::dataset::{list_subjects, read_subject, write_trials, EventSplit};
use neurodecode::data::{preprocess, TrialTensor};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::RunDir;

/// Epochs every subject under `root` into `train` and `test` trial files.
pub fn run(cfg: &RunConfig, root: &Path, dir: &mut RunDir) -> Result<Value> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!("dataset root not found: {}", root.display())));
    }
    let subjects = list_subjects(root)?;
    if subjects.is_empty() {
        return Err(CliError::Usage(format!("no subject recordings under {}", root.display())));
    }
    let mut parts: [(Vec<TrialTensor>, &str, EventSplit); 2] =
        [(Vec::new(), "train", EventSplit::Train), (Vec::new(), "test", EventSplit::Test)];
    let mut rejected = Vec::new();
    for s in &subjects {
        let rec = read_subject(root, s)?;
        for (acc, name, split) in parts.iter_mut() {
            let raw = rec.events_for(*split);
            if raw.events.is_empty() {
                continue;
            }
            let out = preprocess(&raw, &cfg.preprocess)?;
            for r in out.rejected {
                rejected.push(vec![
                    s.clone(),
                    name.to_string(),
                    r.event.onset_sample.to_string(),
                    r.event.image_id,
                    r.reason,
                ]);
            }
            acc.push(out.trials);
        }
    }
    let mut counts = serde_json::Map::new();
    for (acc, name, _) in &parts {
        if acc.is_empty() {
            counts.insert(name.to_string(), json!(0));
            continue;
        }
        let trials = TrialTensor::concat(acc)?;
        write_trials(&dir.path(name), &trials)?;
        dir.record(format!("{name}.manifest.json"));
        dir.record(format!("{name}.f64"));
        counts.insert(name.to_string(), json!(trials.len()));
    }
    dir.csv("rejected.csv", &["subject", "split", "onset_sample", "image_id", "reason"], &rejected)?;
    let metrics = json!({ "subjects": subjects, "trials": counts, "rejected": rejected.len() });
    dir.json("metrics.json", &metrics)?;
    println!("preprocessed {} subjects, {} events rejected", subjects.len(), rejected.len());
    Ok(metrics)
}
