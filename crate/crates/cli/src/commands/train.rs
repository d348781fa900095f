//! `pretrain`, `align` and `eval`.

use std::path::Path;

use neurodecode::encoder::{Encoder, EncoderConfig};
use neurodecode::params::ParamStore;
use neurodecode::pipeline::{evaluate, prepare, run_stage1, run_stage2};
use neurodecode::storage::{self, container_paths};
use serde_json::{json, Value};

use super::{evaluation_json, evaluation_rows, stage1_for, subject_rows, summarize, summary_line, Inputs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{seed_dir, RunDir};

const EVAL_HEADER: [&str; 4] = ["seed", "modality", "k", "accuracy"];
const SUBJECT_HEADER: [&str; 5] = ["seed", "modality", "subject", "k", "accuracy"];

pub fn pretrain(cfg: &RunConfig, inputs: &Inputs, dir: &mut RunDir) -> Result<Value> {
    let prepared = prepare(&inputs.train, &inputs.test, &cfg.pipeline);
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let s1 = run_stage1(&prepared, &inputs.bank, &cfg.pipeline, seed)?;
        let sd = seed_dir(seed);
        let meta = json!({ "encoder": s1.encoder, "seed": seed, "history": s1.history });
        storage::save_checkpoint(&dir.path(&format!("{sd}/encoder")), &s1.params, &meta)?;
        dir.record(format!("{sd}/encoder.manifest.json"));
        dir.record(format!("{sd}/encoder.f64"));
        let rows: Vec<Vec<String>> = s1
            .history
            .iter()
            .enumerate()
            .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()])
            .collect();
        dir.csv(&format!("{sd}/history.csv"), &["epoch", "recon_loss"], &rows)?;
        let m = json!({
            "seed": seed,
            "epochs": s1.history.len(),
            "first_loss": s1.history.first(),
            "final_loss": s1.history.last(),
        });
        println!(
            "seed {seed}: {} epochs, reconstruction loss {:?} -> {:?}",
            s1.history.len(),
            s1.history.first(),
            s1.history.last()
        );
        per_seed.push(m);
    }
    let metrics = json!({ "seeds": per_seed });
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}

pub fn align(cfg: &RunConfig, inputs: &Inputs, pretrained: Option<&Path>, dir: &mut RunDir) -> Result<Value> {
    let prepared = prepare(&inputs.train, &inputs.test, &cfg.pipeline);
    let (mut per_seed, mut evals, mut rows, mut subj) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let s1 = stage1_for(pretrained, &prepared, inputs, cfg, seed)?;
        let s2 = run_stage2(&prepared.train, &prepared.test, &inputs.bank, &s1, &cfg.pipeline, seed)?;
        let sd = seed_dir(seed);
        for (i, c) in s2.align.checkpoints.iter().enumerate() {
            let meta = json!({
                "encoder": s2.encoder.config(),
                "seed": seed,
                "epoch": c.epoch,
                "val_loss": c.val_loss,
            });
            storage::save_checkpoint(&dir.path(&format!("{sd}/ckpt-{i}")), &c.params, &meta)?;
            dir.record(format!("{sd}/ckpt-{i}.manifest.json"));
            dir.record(format!("{sd}/ckpt-{i}.f64"));
        }
        let history: Vec<Vec<String>> = s2
            .history()
            .iter()
            .map(|r| vec![r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string(), r.tau.to_string()])
            .collect();
        dir.csv(&format!("{sd}/history.csv"), &["epoch", "train_loss", "val_loss", "tau"], &history)?;
        let m = json!({
            "seed": seed,
            "epochs": s2.history().len(),
            "stopped_early": s2.align.stopped_early,
            "checkpoint_epochs": s2.align.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(),
            "transfer": s2.transfer,
            "reinitialized": s2.reinitialized,
            "evaluation": evaluation_json(&s2.evaluation),
        });
        dir.json(&format!("{sd}/metrics.json"), &m)?;
        println!("{}", summary_line(seed, &s2.evaluation));
        rows.extend(evaluation_rows(seed, &s2.evaluation));
        subj.extend(subject_rows(seed, &s2.evaluation));
        per_seed.push(m);
        evals.push(s2.evaluation);
    }
    dir.csv("metrics.csv", &EVAL_HEADER, &rows)?;
    dir.csv("per_subject.csv", &SUBJECT_HEADER, &subj)?;
    let metrics = json!({ "alpha": cfg.pipeline.align.alpha, "seeds": per_seed, "summary": summarize(&evals) });
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}

/// Checkpoints `<dir>/seed-N/ckpt-*` in rank order, with the encoder they need.
pub fn load_checkpoints(dir: &Path, seed: u64) -> Result<(EncoderConfig, Vec<ParamStore>)> {
    let seed_path = dir.join(seed_dir(seed));
    let mut out = Vec::new();
    let mut encoder: Option<EncoderConfig> = None;
    for i in 0.. {
        let stem = seed_path.join(format!("ckpt-{i}"));
        if !container_paths(&stem, "f64").0.is_file() {
            break;
        }
        let (params, meta) = storage::load_checkpoint(&stem)?;
        if encoder.is_none() {
            encoder = Some(serde_json::from_value(meta["encoder"].clone()).map_err(neurodecode::Error::from)?);
        }
        out.push(params);
    }
    match encoder {
        Some(e) => Ok((e, out)),
        None => Err(CliError::Usage(format!(
            "checkpoint not found: {}",
            container_paths(&seed_path.join("ckpt-0"), "f64").0.display()
        ))),
    }
}

pub fn eval(cfg: &RunConfig, inputs: &Inputs, checkpoints: &Path, dir: &mut RunDir) -> Result<Value> {
    let test = cfg.pipeline.finish(cfg.pipeline.averaged(&inputs.test));
    let (mut per_seed, mut evals, mut rows, mut subj) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let (enc_cfg, ckpts) = load_checkpoints(checkpoints, seed)?;
        let encoder = Encoder::new(enc_cfg)?;
        let e = evaluate(&encoder, &ckpts, &test, &inputs.bank, &cfg.pipeline)?;
        println!("{}", summary_line(seed, &e));
        rows.extend(evaluation_rows(seed, &e));
        subj.extend(subject_rows(seed, &e));
        per_seed.push(json!({ "seed": seed, "checkpoints": ckpts.len(), "evaluation": evaluation_json(&e) }));
        evals.push(e);
    }
    dir.csv("metrics.csv", &EVAL_HEADER, &rows)?;
    dir.csv("per_subject.csv", &SUBJECT_HEADER, &subj)?;
    let metrics = json!({ "top_k": cfg.pipeline.top_k, "seeds": per_seed, "summary": summarize(&evals) });
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}
