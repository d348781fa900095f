//! Paired signed-rank tests with Holm correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_finite, Error, Result};

/// Largest number of non-zero differences handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    NormalApprox,
    Degenerate,
}

/// Signed-rank statistics of paired differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedRank {
    /// Differences left after dropping exact zeros.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Mid-ranks of |d| for the retained differences, in input order.
    pub ranks: Vec<f64>,
    pub positive: Vec<bool>,
}

/// Ranks `|d|` (ties get the mean rank) after dropping zero differences.
pub fn signed_rank(diffs: &[f64]) -> Result<SignedRank> {
    ensure_finite("paired differences", diffs.iter())?;
    let kept: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = kept.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| kept[a].abs().total_cmp(&kept[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && kept[order[j + 1]].abs() == kept[order[i]].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let positive: Vec<bool> = kept.iter().map(|&d| d > 0.0).collect();
    let w_plus = ranks.iter().zip(&positive).filter(|(_, &p)| p).fold(0.0, |a, (r, _)| a + r);
    let w_minus = ranks.iter().zip(&positive).filter(|(_, &p)| !p).fold(0.0, |a, (r, _)| a + r);
    Ok(SignedRank {
        n,
        w_plus,
        w_minus,
        ranks,
        positive,
    })
}

/// Two-sided p-value from the exact permutation distribution of W⁺.
///
/// Mid-ranks are doubled so that every rank is an integer; the number of
/// sign assignments reaching each doubled sum is counted by dynamic
/// programming.
pub fn exact_p_value(sr: &SignedRank) -> f64 {
    let doubled: Vec<usize> = sr.ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0_f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2.0 * sr.w_plus).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum::<f64>() / all;
    let upper: f64 = counts[observed..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
pub fn normal_p_value(sr: &SignedRank) -> f64 {
    let n = sr.n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut ranks = sr.ranks.clone();
    ranks.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranks.len() {
        let j = ranks[i..].iter().take_while(|&&r| r == ranks[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((sr.w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
}

/// `(W⁺ − W⁻) / (W⁺ + W⁻)`, or 0 with no non-zero differences.
pub fn rank_biserial(sr: &SignedRank) -> f64 {
    let total = sr.w_plus + sr.w_minus;
    if total == 0.0 {
        0.0
    } else {
        (sr.w_plus - sr.w_minus) / total
    }
}

/// Holm step-down adjustment; output order matches input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0_f64;
    for (step, &i) in order.iter().enumerate() {
        running = running.max(((m - step) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

/// One paired comparison (our scores against a baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    /// Pairs supplied, before zero differences are dropped.
    pub n_pairs: usize,
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W⁺, W⁻)`.
    pub statistic: f64,
    pub p_raw: f64,
    pub p_holm: f64,
    pub effect_size: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub comparisons: Vec<Comparison>,
}

/// Signed-rank test of `a − b` without multiplicity correction.
pub fn wilcoxon(name: &str, a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "paired scores need equal non-zero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sr = signed_rank(&diffs)?;
    let (p, method) = if sr.n == 0 {
        (1.0, PMethod::Degenerate)
    } else if sr.n <= EXACT_MAX_N {
        (exact_p_value(&sr), PMethod::Exact)
    } else {
        (normal_p_value(&sr), PMethod::NormalApprox)
    };
    Ok(Comparison {
        name: name.to_string(),
        n_pairs: a.len(),
        n: sr.n,
        w_plus: sr.w_plus,
        w_minus: sr.w_minus,
        statistic: sr.w_plus.min(sr.w_minus),
        p_raw: p,
        p_holm: p,
        effect_size: rank_biserial(&sr),
        method,
    })
}

/// Tests `ours` against each baseline and Holm-corrects across them.
pub fn wilcoxon_holm(ours: &[f64], baselines: &[(String, Vec<f64>)]) -> Result<StatReport> {
    let mut comparisons = baselines
        .iter()
        .map(|(name, scores)| wilcoxon(name, ours, scores))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = comparisons.iter().map(|c| c.p_raw).collect();
    for (c, adj) in comparisons.iter_mut().zip(holm_adjust(&raw)) {
        c.p_holm = adj;
    }
    Ok(StatReport { comparisons })
}
