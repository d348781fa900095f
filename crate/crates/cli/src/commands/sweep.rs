//! Cross product of ablation axes, one pipeline run per cell and seed.

use neurodecode::mae::TransferStrategy;
use neurodecode::pipeline::{run_pipeline, Evaluation, PipelineConfig};
use neurodecode::storage;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{evaluation_json, summarize, Inputs};
use crate::config::{RunConfig, SweepGrid};
use crate::error::Result;
use crate::output::{fmt_pct, mean_std, RunDir};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub label: String,
    pub decoder: Option<[usize; 2]>,
    pub mask_ratio: Option<f64>,
    pub alpha: Option<f64>,
    pub transfer: Option<TransferStrategy>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Cells in decoder, mask ratio, alpha, transfer order.
pub fn cells(grid: &SweepGrid) -> Vec<Cell> {
    let mut out = Vec::new();
    for decoder in axis(&grid.decoder) {
        for mask_ratio in axis(&grid.mask_ratio) {
            for alpha in axis(&grid.alpha) {
                for transfer in axis(&grid.transfer) {
                    let mut parts = Vec::new();
                    if let Some([w, d]) = decoder {
                        parts.push(format!("W{w}-D{d}"));
                    }
                    if let Some(r) = mask_ratio {
                        parts.push(format!("r{r}"));
                    }
                    if let Some(a) = alpha {
                        parts.push(format!("a{a}"));
                    }
                    if let Some(t) = transfer {
                        parts.push(serde_json::to_value(t).expect("unit variant").as_str().unwrap_or("").to_string());
                    }
                    let label = if parts.is_empty() { "base".to_string() } else { parts.join("_") };
                    out.push(Cell {
                        label,
                        decoder,
                        mask_ratio,
                        alpha,
                        transfer,
                    });
                }
            }
        }
    }
    out
}

impl Cell {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        if let Some([w, d]) = self.decoder {
            cfg.mae.decoder.width = w;
            cfg.mae.decoder.depth = d;
        }
        if let Some(r) = self.mask_ratio {
            cfg.mae.mask_ratio = r;
        }
        if let Some(a) = self.alpha {
            cfg.align.alpha = a;
        }
        if let Some(t) = self.transfer {
            cfg.transfer = t;
        }
        cfg
    }
}

struct CellOutcome {
    cell: Cell,
    result: std::result::Result<Vec<Evaluation>, String>,
}

fn run_cell(cell: &Cell, cfg: &RunConfig, inputs: &Inputs) -> std::result::Result<Vec<Evaluation>, String> {
    let pc = cell.apply(&cfg.pipeline);
    pc.validate().map_err(|e| e.to_string())?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            run_pipeline(&inputs.train, &inputs.test, &inputs.bank, &pc, seed)
                .map(|r| r.stage2.evaluation)
                .map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect()
}

pub fn run(cfg: &RunConfig, inputs: &Inputs, dir: &mut RunDir) -> Result<Value> {
    let cells = cells(&cfg.sweep);
    println!("sweep: {} cells x {} seeds", cells.len(), cfg.seeds.len());
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|cell| {
            let result = run_cell(cell, cfg, inputs);
            let body = match &result {
                Ok(evals) => json!({
                    "cell": cell,
                    "status": "ok",
                    "seeds": cfg.seeds.iter().zip(evals).map(|(s, e)| json!({ "seed": s, "evaluation": evaluation_json(e) })).collect::<Vec<_>>(),
                    "summary": summarize(evals),
                }),
                Err(e) => json!({ "cell": cell, "status": "failed", "error": e }),
            };
            // Each cell owns its directory; a write failure is reported with the cell.
            let written = storage::write_json(&dir.path(&format!("cells/{}/metrics.json", cell.label)), &body);
            let result = match (result, written) {
                (Ok(v), Ok(())) => Ok(v),
                (Err(e), _) => Err(e),
                (Ok(_), Err(e)) => Err(e.to_string()),
            };
            CellOutcome {
                cell: cell.clone(),
                result,
            }
        })
        .collect();

    let ks = &cfg.pipeline.top_k;
    let mut header: Vec<String> = ["cell", "width", "depth", "mask_ratio", "alpha", "transfer", "status"]
        .map(String::from)
        .to_vec();
    for m in ["image", "text"] {
        for k in ks {
            header.push(format!("{m}_top{k}_mean"));
            header.push(format!("{m}_top{k}_std"));
        }
    }
    let mut rows = Vec::new();
    let mut md = vec![
        format!("| cell | {} |", ks.iter().map(|k| format!("image top-{k}")).collect::<Vec<_>>().join(" | ")),
        format!("|---|{}", "---|".repeat(ks.len())),
    ];
    let mut summary = Vec::new();
    let opt = |v: Option<String>| v.unwrap_or_default();
    for o in &outcomes {
        dir.record(format!("cells/{}/metrics.json", o.cell.label));
        let c = &o.cell;
        let mut line = vec![
            c.label.clone(),
            opt(c.decoder.map(|d| d[0].to_string())),
            opt(c.decoder.map(|d| d[1].to_string())),
            opt(c.mask_ratio.map(|r| r.to_string())),
            opt(c.alpha.map(|a| a.to_string())),
            opt(c.transfer.map(|t| format!("{t:?}"))),
        ];
        match &o.result {
            Ok(evals) => {
                line.push("ok".into());
                let mut cells_md = Vec::new();
                for m in ["image", "text"] {
                    for k in ks {
                        let vals: Vec<f64> = evals
                            .iter()
                            .filter_map(|e| {
                                let r = if m == "image" { &e.image } else { &e.text };
                                r.top_k_accuracy.get(k).copied()
                            })
                            .collect();
                        let (mean, std) = mean_std(&vals);
                        line.extend([mean.to_string(), std.to_string()]);
                        if m == "image" {
                            cells_md.push(fmt_pct(mean, std));
                        }
                    }
                }
                md.push(format!("| {} | {} |", c.label, cells_md.join(" | ")));
                summary.push(json!({ "cell": c, "status": "ok", "summary": summarize(evals) }));
            }
            Err(e) => {
                line.push(format!("failed: {e}"));
                line.extend(std::iter::repeat_n(String::new(), 4 * ks.len()));
                md.push(format!("| {} | failed: {e} |", c.label));
                summary.push(json!({ "cell": c, "status": "failed", "error": e }));
            }
        }
        rows.push(line);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    dir.csv("sweep.csv", &header_refs, &rows)?;
    let table = md.join("\n") + "\n";
    storage::write_atomic(&dir.path("table.md"), table.as_bytes())?;
    dir.record("table.md");
    print!("{table}");
    let metrics = json!({ "cells": summary });
    dir.json("sweep.json", &metrics)?;
    dir.json("metrics.json", &metrics)?;
    Ok(metrics)
}
