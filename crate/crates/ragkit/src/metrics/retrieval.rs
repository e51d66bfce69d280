//! Retrieval-side metrics: sentence-level Recall and the Effective
//! Information Rate (EIR).
//!
//! Both metrics match reference sentences against retrieved text by
//! normalized-exact substring containment, at sentence granularity. They
//! differ in the match target, and that asymmetry is deliberate:
//!
//! * Recall counts a reference only when every one of its sentences appears
//!   inside a *single* retrieved text.
//! * EIR matches sentences against the *concatenation* of all retrieved
//!   texts, so a reference split across adjacent chunks still contributes.

use thiserror::Error;

use crate::corpus::GroundTruthReference;
use crate::textproc::{self, LanguageTag, TokenCount};

#[derive(Error, Debug)]
pub enum RetrievalMetricError {
    #[error("empty references list")]
    EmptyReferences,
    #[error("empty retrieved list")]
    EmptyRetrieved,
}

/// Per-reference match result.
///
/// `matched` is the Recall-side boolean (all sentences within one retrieved
/// text). `matched_word_count` is the EIR-side word total against the
/// concatenated retrieved texts, so it can be positive while `matched` is
/// false when a reference only matches across chunk boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub reference_index: usize,
    pub matched: bool,
    pub matched_word_count: TokenCount,
}

/// Recall plus the per-reference outcomes it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallOutcome {
    pub recall: f64,
    pub per_reference: Vec<MatchOutcome>,
}

/// Fraction of references whose sentences all appear within a single
/// retrieved text. An empty retrieved list scores 0.
pub fn compute_recall(
    references: &[GroundTruthReference],
    retrieved: &[String],
    language: LanguageTag,
) -> Result<RecallOutcome, RetrievalMetricError> {
    if references.is_empty() {
        return Err(RetrievalMetricError::EmptyReferences);
    }
    let per_reference = match_references(references, retrieved, language);
    let matched = per_reference.iter().filter(|m| m.matched).count();
    Ok(RecallOutcome {
        recall: matched as f64 / references.len() as f64,
        per_reference,
    })
}

/// Matched reference words divided by total retrieved words, a
/// signal-to-noise measure of the retrieved context. Word counts include any
/// meta prefix the retrieved texts carry, since that text occupies context
/// budget too.
pub fn compute_eir(
    references: &[GroundTruthReference],
    retrieved: &[String],
    language: LanguageTag,
) -> Result<f64, RetrievalMetricError> {
    if retrieved.is_empty() {
        return Err(RetrievalMetricError::EmptyRetrieved);
    }
    let denominator: usize = retrieved
        .iter()
        .map(|r| textproc::count_words(r, language).get())
        .sum();
    if denominator == 0 {
        return Ok(0.0);
    }
    let numerator: usize = match_references(references, retrieved, language)
        .iter()
        .map(|m| m.matched_word_count.get())
        .sum();
    Ok(numerator as f64 / denominator as f64)
}

/// Compute both match views for every reference.
pub fn match_references(
    references: &[GroundTruthReference],
    retrieved: &[String],
    language: LanguageTag,
) -> Vec<MatchOutcome> {
    let normalized_chunks: Vec<String> =
        retrieved.iter().map(|r| textproc::normalize(r)).collect();
    let concatenated = concat_retrieved(retrieved, language);

    references
        .iter()
        .enumerate()
        .map(|(reference_index, reference)| {
            let sentences = textproc::split_sentences(&reference.text, language);
            if sentences.is_empty() {
                return MatchOutcome {
                    reference_index,
                    matched: false,
                    matched_word_count: TokenCount(0),
                };
            }

            let matched = normalized_chunks
                .iter()
                .any(|chunk| sentences.iter().all(|s| chunk.contains(&s.text)));

            // Word count against the concatenation, only when every sentence
            // of the reference is found there.
            let all_in_concat = sentences.iter().all(|s| concatenated.contains(&s.text));
            let matched_word_count = if all_in_concat {
                sentences
                    .iter()
                    .filter(|s| concatenated.contains(&s.text))
                    .map(|s| textproc::count_words(&s.text, language).get())
                    .sum()
            } else {
                0
            };

            MatchOutcome {
                reference_index,
                matched,
                matched_word_count: TokenCount(matched_word_count),
            }
        })
        .collect()
}

/// Join retrieved texts into the single passage the EIR numerator matches
/// against. English chunks are joined with a space; Chinese chunks butt
/// together so a sentence cut at a chunk boundary can heal.
fn concat_retrieved(retrieved: &[String], language: LanguageTag) -> String {
    let separator = match language {
        LanguageTag::En => " ",
        LanguageTag::Cn => "",
    };
    textproc::normalize(&retrieved.join(separator))
}
