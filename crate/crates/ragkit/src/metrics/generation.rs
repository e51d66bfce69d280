//! Generation-side metrics: the keypoint triple (completeness,
//! hallucination, irrelevancy) plus ROUGE-L and BLEU baselines.

use thiserror::Error;

use crate::judge::{KeypointLabel, KeypointVerdicts};
use crate::textproc::{self, LanguageTag};

#[derive(Error, Debug)]
pub enum GenMetricError {
    #[error("empty label list")]
    EmptyLabels,
}

/// Completeness / hallucination / irrelevancy fractions for one record,
/// backed by the raw label counts.
///
/// Each fraction is the correctly-rounded `count / total`, so the values
/// match their exact rationals as closely as f64 allows, and the three sum
/// to exactly 1.0 for every keypoint count up to 5 (the expected range).
/// Beyond that the sum can drift by one ulp; consumers that re-round (the
/// report layer rounds to two decimals) never observe it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenMetricTriple {
    covered: usize,
    contradicted: usize,
    untouched: usize,
}

impl GenMetricTriple {
    pub fn total(&self) -> usize {
        self.covered + self.contradicted + self.untouched
    }

    /// Fraction of keypoints the answer covers.
    pub fn completeness(&self) -> f64 {
        self.covered as f64 / self.total() as f64
    }

    /// Fraction of keypoints the answer contradicts.
    pub fn hallucination(&self) -> f64 {
        self.contradicted as f64 / self.total() as f64
    }

    /// Fraction of keypoints neither covered nor contradicted.
    pub fn irrelevancy(&self) -> f64 {
        self.untouched as f64 / self.total() as f64
    }
}

/// Fold per-keypoint verdicts into the metric triple.
pub fn compute_keypoint_metrics(
    verdicts: &KeypointVerdicts,
) -> Result<GenMetricTriple, GenMetricError> {
    compute_from_labels(&verdicts.labels)
}

pub fn compute_from_labels(labels: &[KeypointLabel]) -> Result<GenMetricTriple, GenMetricError> {
    if labels.is_empty() {
        return Err(GenMetricError::EmptyLabels);
    }
    let mut triple = GenMetricTriple {
        covered: 0,
        contradicted: 0,
        untouched: 0,
    };
    for label in labels {
        match label {
            KeypointLabel::Covered => triple.covered += 1,
            KeypointLabel::Contradicted => triple.contradicted += 1,
            KeypointLabel::Untouched => triple.untouched += 1,
        }
    }
    Ok(triple)
}

/// ROUGE-L F-measure (β = 1) over token sequences: `P = LCS/|cand|`,
/// `R = LCS/|ref|`, `F = 2PR/(P+R)`. Returns 0 when either side is empty.
pub fn rouge_l(candidate: &str, reference: &str, language: LanguageTag) -> f64 {
    let cand = textproc::tokenize(candidate, language);
    let refr = textproc::tokenize(reference, language);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(&cand, &refr);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / cand.len() as f64;
    let recall = lcs as f64 / refr.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Longest common subsequence length via the standard two-row DP.
fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Sentence-level BLEU-4 with uniform weights.
///
/// An n-gram precision of zero for n ≥ 2 is smoothed add-one to
/// `(matches+1)/(total+1)`; an order with no candidate n-grams at all
/// contributes `(0+1)/(0+1) = 1`. Brevity penalty `exp(1 − |ref|/|cand|)`
/// applies when the candidate is shorter than the reference. Returns 0 when
/// either side is empty.
pub fn bleu(candidate: &str, reference: &str, language: LanguageTag) -> f64 {
    let cand = textproc::tokenize(candidate, language);
    let refr = textproc::tokenize(reference, language);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    for n in 1..=4usize {
        let (matches, total) = ngram_overlap(&cand, &refr, n);
        let precision = if total == 0 {
            1.0
        } else if matches == 0 {
            if n == 1 {
                return 0.0; // no unigram overlap at all
            }
            (matches + 1) as f64 / (total + 1) as f64
        } else {
            matches as f64 / total as f64
        };
        log_sum += 0.25 * precision.ln();
    }

    let brevity = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    brevity * log_sum.exp()
}

/// Clipped n-gram matches and the candidate n-gram total.
fn ngram_overlap(cand: &[String], refr: &[String], n: usize) -> (usize, usize) {
    use std::collections::HashMap;
    if cand.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in refr.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in cand.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let matches = cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, cand.len() - n + 1)
}
