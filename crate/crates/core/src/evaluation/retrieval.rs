//! Zero-shot retrieval scoring.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::FeatureBank;
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Candidate ids per trial, best first.
    pub ranked: Vec<Vec<String>>,
    /// Zero-based rank of the true candidate per trial.
    pub truth_rank: Vec<usize>,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub per_subject_scores: BTreeMap<String, BTreeMap<usize, f64>>,
    pub n_candidates: usize,
}

impl RetrievalResult {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k_accuracy.get(&k).copied()
    }
}

/// Candidate indices sorted by descending similarity, ties by ascending id.
pub fn rank_candidates(similarities: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        similarities[b]
            .total_cmp(&similarities[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn check_k_list(k_list: &[usize]) -> Result<()> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::Config(format!("k list must be non-empty and positive, got {k_list:?}")));
    }
    Ok(())
}

/// Ranks every row of `similarity` (trials × candidates) and scores Top-k.
pub fn zero_shot_retrieval(
    similarity: &Array2<f64>,
    candidate_ids: &[String],
    truth_ids: &[String],
    subject_ids: &[String],
    k_list: &[usize],
) -> Result<RetrievalResult> {
    check_k_list(k_list)?;
    let (n, m) = similarity.dim();
    if candidate_ids.len() != m || truth_ids.len() != n || subject_ids.len() != n {
        return Err(Error::Shape(format!(
            "similarity is {n}x{m} but got {} candidates, {} truths, {} subjects",
            candidate_ids.len(),
            truth_ids.len(),
            subject_ids.len()
        )));
    }
    ensure_finite("similarity matrix", similarity.iter())?;
    let mut position: HashMap<&str, usize> = HashMap::with_capacity(m);
    for (j, id) in candidate_ids.iter().enumerate() {
        if position.insert(id.as_str(), j).is_some() {
            return Err(Error::Config(format!("duplicate candidate id `{id}`")));
        }
    }

    let mut ranked = Vec::with_capacity(n);
    let mut truth_rank = Vec::with_capacity(n);
    for (i, row) in similarity.rows().into_iter().enumerate() {
        let truth = *position
            .get(truth_ids[i].as_str())
            .ok_or_else(|| Error::UnknownCandidate(truth_ids[i].clone()))?;
        let order = rank_candidates(row.as_slice().expect("standard layout rows"), candidate_ids);
        truth_rank.push(order.iter().position(|&j| j == truth).expect("truth is a candidate"));
        ranked.push(order.into_iter().map(|j| candidate_ids[j].clone()).collect());
    }

    let accuracy = |members: &[usize]| -> BTreeMap<usize, f64> {
        k_list
            .iter()
            .map(|&k| {
                let hits = members.iter().filter(|&&i| truth_rank[i] < k).count();
                (k, hits as f64 / members.len().max(1) as f64)
            })
            .collect()
    };
    let all: Vec<usize> = (0..n).collect();
    let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in subject_ids.iter().enumerate() {
        by_subject.entry(s.clone()).or_default().push(i);
    }
    Ok(RetrievalResult {
        top_k_accuracy: accuracy(&all),
        per_subject_scores: by_subject.iter().map(|(s, idx)| (s.clone(), accuracy(idx))).collect(),
        ranked,
        truth_rank,
        n_candidates: m,
    })
}

/// Row-normalized copy; zero rows are an error.
pub fn unit_rows(m: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Config(format!("{what} row {i} has zero or non-finite norm")));
        }
        row /= norm;
    }
    Ok(out)
}

/// Cosine similarity between the rows of `a` and the rows of `b`.
pub fn cosine_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", a.ncols(), b.ncols())));
    }
    Ok(unit_rows(a, "query")?.dot(&unit_rows(b, "candidate")?.t()))
}

/// Retrieval against the caption embeddings of `candidate_ids` in `bank`.
pub fn text_retrieval(
    eeg: &Array2<f64>,
    truth_ids: &[String],
    subject_ids: &[String],
    bank: &FeatureBank,
    candidate_ids: &[String],
    k_list: &[usize],
) -> Result<RetrievalResult> {
    let text = bank.text_matrix(candidate_ids)?;
    let sim = cosine_matrix(eeg, &text)?;
    zero_shot_retrieval(&sim, candidate_ids, truth_ids, subject_ids, k_list)
}

/// Sorted, de-duplicated ids.
pub fn unique_sorted(ids: &[String]) -> Vec<String> {
    let mut v = ids.to_vec();
    v.sort();
    v.dedup();
    v
}
