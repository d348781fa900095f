use neurodecode::data::dataset::write_trials;
use neurodecode::data::generate_synthetic;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::RunDir;

/// Writes `train`, `test` and `bank` containers for a planted dataset.
pub fn run(cfg: &RunConfig, seed_flag: Option<&[u64]>, dir: &mut RunDir) -> Result<Value> {
    let mut spec = cfg.synthetic.clone();
    if let Some(seeds) = seed_flag {
        let [seed] = seeds else {
            return Err(CliError::Usage("synth takes a single --seed".into()));
        };
        spec.seed = *seed;
    }
    let data = generate_synthetic(&spec)?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    write_trials(&dir.path("train"), &data.train)?;
    write_trials(&dir.path("test"), &data.test)?;
    data.bank.write(&dir.path("bank"))?;
    for f in ["train.manifest.json", "train.f64", "test.manifest.json", "test.f64", "bank.manifest.json", "bank.f32"] {
        dir.record(f);
    }
    let metrics = json!({
        "seed": spec.seed,
        "train_trials": data.train.len(),
        "test_trials": data.test.len(),
        "bank_entries": data.bank.len(),
        "warnings": data.warnings,
    });
    dir.json("metrics.json", &metrics)?;
    println!(
        "synthetic dataset: {} train / {} test trials, {} bank entries -> {}",
        data.train.len(),
        data.test.len(),
        data.bank.len(),
        dir.root().display()
    );
    Ok(metrics)
}
