//! Window, band and region re-training, RSA, and paired statistics.

use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use neurodecode::encoder::Encoder;
use neurodecode::evaluation::{wilcoxon_holm, BandSpec, RsaReport};
use neurodecode::pipeline::{
    bank_rsa, checkpoint_rsa, prepare, spatial_region_analysis, spectral_band_analysis, temporal_window_analysis,
    AnalysisRow,
};
use serde::Deserialize;
use serde_json::{json, Value};

use super::train::load_checkpoints;
use super::{require_file, stage1_for, Inputs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{mean_std, seed_dir, RunDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Window,
    Band,
    Region,
    Rsa,
    Stats,
}

pub fn restriction(
    kind: Kind,
    cfg: &RunConfig,
    inputs: &Inputs,
    pretrained: Option<&Path>,
    dir: &mut RunDir,
) -> Result<Value> {
    let prepared = prepare(&inputs.train, &inputs.test, &cfg.pipeline);
    let mut by_label: BTreeMap<String, Vec<AnalysisRow>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for &seed in &cfg.seeds {
        let s1 = stage1_for(pretrained, &prepared, inputs, cfg, seed)?;
        let (p, bank, pc) = (&prepared, &inputs.bank, &cfg.pipeline);
        let rows = match kind {
            Kind::Window => temporal_window_analysis(p, bank, &s1, &cfg.analysis.windows, pc, seed)?,
            Kind::Band => {
                let bands: Vec<BandSpec> = cfg.analysis.bands.iter().map(|b| BandSpec::standard(*b)).collect();
                spectral_band_analysis(p, bank, &s1, &bands, pc, seed)?
            }
            Kind::Region => spatial_region_analysis(p, bank, &s1, &cfg.analysis.regions, pc, seed)?,
            Kind::Rsa | Kind::Stats => unreachable!("not a restriction analysis"),
        };
        dir.json(&format!("{}/rows.json", seed_dir(seed)), &rows)?;
        for r in rows {
            if !order.contains(&r.label) {
                order.push(r.label.clone());
            }
            println!("seed {seed} {}: {}", r.label, describe(&r));
            by_label.entry(r.label.clone()).or_default().push(r);
        }
    }

    let ks = &cfg.pipeline.top_k;
    let mut header: Vec<String> = ["label", "channels", "time_samples", "skipped", "reinitialized"]
        .map(String::from)
        .to_vec();
    for m in ["image", "text"] {
        for k in ks {
            header.push(format!("{m}_top{k}_mean"));
            header.push(format!("{m}_top{k}_std"));
        }
    }
    let mut table = Vec::new();
    let mut summary = Vec::new();
    for label in &order {
        let rows = &by_label[label];
        let first = &rows[0];
        let mut line = vec![
            label.clone(),
            first.channels.to_string(),
            first.time_samples.to_string(),
            first.skipped.clone().unwrap_or_default(),
            first.reinitialized.join(";"),
        ];
        let mut stats = serde_json::Map::new();
        for m in ["image", "text"] {
            for k in ks {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| if m == "image" { &r.image_top_k } else { &r.text_top_k }.get(k).copied())
                    .collect();
                if vals.is_empty() {
                    line.extend([String::new(), String::new()]);
                    continue;
                }
                let (mean, std) = mean_std(&vals);
                line.extend([mean.to_string(), std.to_string()]);
                stats.insert(format!("{m}_top{k}"), json!({ "mean": mean, "std": std }));
            }
        }
        table.push(line);
        summary.push(json!({ "label": label, "skipped": first.skipped, "metrics": stats }));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    dir.csv("summary.csv", &header_refs, &table)?;
    let metrics = json!({ "analysis": format!("{kind:?}").to_lowercase(), "rows": summary });
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}

fn describe(r: &AnalysisRow) -> String {
    match &r.skipped {
        Some(why) => format!("skipped ({why})"),
        None => r
            .image_top_k
            .iter()
            .map(|(k, a)| format!("top-{k} {:.1}%", 100.0 * a))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn rsa_json(r: &RsaReport) -> Value {
    json!({
        "concept_ids": r.concept_ids,
        "labels": r.labels,
        "matrix": r.matrix.rows().into_iter().map(|row| row.to_vec()).collect::<Vec<_>>(),
        "categories": r.categories,
        "block_diagonal": r.block_diagonal(),
    })
}

fn rsa_rows(source: &str, r: &RsaReport) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    r.categories
        .iter()
        .map(|c| {
            vec![
                source.to_string(),
                c.category.clone(),
                c.n_concepts.to_string(),
                opt(c.intra_mean),
                opt(c.inter_mean),
            ]
        })
        .collect()
}

/// Bank-feature RSA over the test images, plus checkpoint RSA per seed when given.
pub fn rsa(cfg: &RunConfig, inputs: &Inputs, checkpoints: Option<&Path>, dir: &mut RunDir) -> Result<Value> {
    let mut ids = inputs.test.image_ids.clone();
    ids.sort();
    ids.dedup();
    let planted = bank_rsa(&ids, &inputs.bank)?;
    let mut rows = rsa_rows("bank", &planted);
    let mut reports = serde_json::Map::new();
    reports.insert("bank".into(), rsa_json(&planted));
    println!("bank features: block-diagonal {}", planted.block_diagonal());
    if let Some(ck) = checkpoints {
        let test = cfg.pipeline.finish(cfg.pipeline.averaged(&inputs.test));
        for &seed in &cfg.seeds {
            let (enc_cfg, params) = load_checkpoints(ck, seed)?;
            let report = checkpoint_rsa(&Encoder::new(enc_cfg)?, &params, &test, &inputs.bank, &cfg.pipeline)?;
            let source = seed_dir(seed);
            println!("{source} embeddings: block-diagonal {}", report.block_diagonal());
            rows.extend(rsa_rows(&source, &report));
            reports.insert(source, rsa_json(&report));
        }
    }
    dir.csv("rsa.csv", &["source", "category", "n_concepts", "intra_mean", "inter_mean"], &rows)?;
    let metrics = Value::Object(reports);
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Scores {
    ours: Vec<f64>,
    baselines: BTreeMap<String, Vec<f64>>,
}

/// Signed-rank tests of `ours` against each baseline, Holm-corrected.
pub fn stats(scores: &Path, dir: &mut RunDir) -> Result<Value> {
    require_file(scores, "score file")?;
    let text = std::fs::read_to_string(scores)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", scores.display())))?;
    let s: Scores = serde_json::from_str(&text).map_err(neurodecode::Error::from)?;
    let baselines: Vec<(String, Vec<f64>)> = s.baselines.into_iter().collect();
    let report = wilcoxon_holm(&s.ours, &baselines)?;
    let rows: Vec<Vec<String>> = report
        .comparisons
        .iter()
        .map(|c| {
            println!("{}: W = {}, p = {:.4}, Holm p = {:.4}, r = {:.3}", c.name, c.statistic, c.p_raw, c.p_holm, c.effect_size);
            vec![
                c.name.clone(),
                c.n.to_string(),
                c.statistic.to_string(),
                c.p_raw.to_string(),
                c.p_holm.to_string(),
                c.effect_size.to_string(),
                format!("{:?}", c.method),
            ]
        })
        .collect();
    dir.csv("stats.csv", &["baseline", "n", "statistic", "p_raw", "p_holm", "effect_size", "method"], &rows)?;
    let metrics = serde_json::to_value(&report).map_err(neurodecode::Error::from)?;
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}
