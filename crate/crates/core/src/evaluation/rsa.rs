//! Representational similarity of per-concept embeddings.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::retrieval::cosine_matrix;
use crate::error::{Error, Result};

/// Mean within- and between-category similarity for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryContrast {
    pub category: String,
    pub n_concepts: usize,
    /// Mean over distinct pairs inside the category; `None` for singletons.
    pub intra_mean: Option<f64>,
    pub inter_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsaReport {
    pub concept_ids: Vec<String>,
    pub labels: Vec<String>,
    /// K × K cosine similarities.
    pub matrix: Array2<f64>,
    pub categories: Vec<CategoryContrast>,
}

impl RsaReport {
    /// True when every category with an intra mean beats its inter mean.
    pub fn block_diagonal(&self) -> bool {
        self.categories.iter().all(|c| match (c.intra_mean, c.inter_mean) {
            (Some(a), Some(e)) => a > e,
            _ => true,
        })
    }
}

/// Averages embedding rows per concept; concepts come back sorted.
pub fn concept_means(embeddings: &Array2<f64>, concept_ids: &[String]) -> Result<(Vec<String>, Array2<f64>)> {
    if embeddings.nrows() != concept_ids.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} concept ids",
            embeddings.nrows(),
            concept_ids.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in concept_ids.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(i);
    }
    let mut out = Array2::zeros((groups.len(), embeddings.ncols()));
    for (mut row, idx) in out.rows_mut().into_iter().zip(groups.values()) {
        row.assign(&embeddings.select(Axis(0), idx).mean_axis(Axis(0)).expect("non-empty group"));
    }
    Ok((groups.keys().map(|s| s.to_string()).collect(), out))
}

/// Cosine matrix of `embeddings` (one row per concept) with category contrasts.
pub fn rsa_matrix(concept_ids: &[String], embeddings: &Array2<f64>, labels: &[String]) -> Result<RsaReport> {
    let k = embeddings.nrows();
    if k < 2 {
        return Err(Error::Config(format!("RSA needs at least 2 concepts, got {k}")));
    }
    if labels.len() != k || concept_ids.len() != k {
        return Err(Error::Shape(format!(
            "{k} embeddings for {} labels and {} concept ids",
            labels.len(),
            concept_ids.len()
        )));
    }
    let matrix = cosine_matrix(embeddings, embeddings)?;
    let mut cats: Vec<String> = labels.to_vec();
    cats.sort();
    cats.dedup();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let categories = cats
        .into_iter()
        .map(|cat| {
            let members: Vec<usize> = (0..k).filter(|&i| labels[i] == cat).collect();
            let mut intra = Vec::new();
            let mut inter = Vec::new();
            for &i in &members {
                for j in 0..k {
                    if j == i {
                        continue;
                    }
                    if labels[j] == cat {
                        intra.push(matrix[[i, j]]);
                    } else {
                        inter.push(matrix[[i, j]]);
                    }
                }
            }
            CategoryContrast {
                category: cat,
                n_concepts: members.len(),
                intra_mean: mean(intra),
                inter_mean: mean(inter),
            }
        })
        .collect();
    Ok(RsaReport {
        concept_ids: concept_ids.to_vec(),
        labels: labels.to_vec(),
        matrix,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_clusters() {
        let e = array![[1.0, 0.1], [0.9, 0.0], [0.0, 1.0], [0.1, 2.0]];
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let labels: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let r = rsa_matrix(&ids, &e, &labels).unwrap();
        for i in 0..4 {
            assert!((r.matrix[[i, i]] - 1.0).abs() < 1e-12);
        }
        assert!(r.block_diagonal());
        assert_eq!(r.categories[0].n_concepts, 2);
    }

    #[test]
    fn means_group_by_concept() {
        let e = array![[1.0, 0.0], [3.0, 2.0], [5.0, 5.0]];
        let ids: Vec<String> = ["b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let (names, m) = concept_means(&e, &ids).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(m, array![[3.0, 2.0], [3.0, 2.5]]);
    }

    #[test]
    fn too_few_concepts() {
        let e = array![[1.0, 0.0]];
        assert!(rsa_matrix(&["c".to_string()], &e, &["x".to_string()]).is_err());
    }
}
