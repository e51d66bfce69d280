//! Multilingual sentence segmentation, tokenization, and word counting.
//!
//! Everything here is rule-based and deterministic: the retrieval metrics
//! compare texts by normalized sentence containment and word counts, so the
//! segmenter and tokenizer must yield the same output on every run.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Language of a document or query. Only English and Chinese are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageTag {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "CN")]
    Cn,
}

impl LanguageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            LanguageTag::En => "EN",
            LanguageTag::Cn => "CN",
        }
    }
}

impl std::fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LanguageTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EN" | "en" => Ok(LanguageTag::En),
            "CN" | "cn" => Ok(LanguageTag::Cn),
            other => Err(format!("unknown language tag {other:?} (expected EN or CN)")),
        }
    }
}

/// One segmented sentence: normalized text plus the byte span of the raw
/// sentence in the source string. Spans are ordered, non-overlapping, and
/// separated only by whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub span: Range<usize>,
}

/// A non-negative word count. Additive over disjoint segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct TokenCount(pub usize);

impl TokenCount {
    pub fn get(&self) -> usize {
        self.0
    }
}

/// English words that commonly precede an abbreviating period. A `.` directly
/// after one of these does not end a sentence.
const EN_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "no", "vs", "etc", "inc", "ltd", "co", "corp", "jr",
    "sr", "fig", "dept", "est", "al", "e.g", "i.e", "approx",
];

/// Normalize text for cross-text matching: Unicode NFC, internal whitespace
/// runs collapsed to a single space, leading/trailing whitespace trimmed.
/// No case folding — reference excerpts are matched verbatim.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    let mut pending_space = false;
    for ch in nfc.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Split text into sentences.
///
/// English sentences end at `.`, `!`, or `?` followed by whitespace or end of
/// input; a period does not split after a known abbreviation. Chinese
/// sentences end at `。`, `！`, `？`, or `；` unconditionally. Trailing text
/// without a terminator forms a final sentence. Sentence text is normalized;
/// spans index the raw input.
pub fn split_sentences(text: &str, language: LanguageTag) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut iter = text.char_indices().peekable();

    while let Some((idx, ch)) = iter.next() {
        let is_boundary = match language {
            LanguageTag::En => {
                matches!(ch, '.' | '!' | '?') && {
                    let next_ok = iter
                        .peek()
                        .map(|(_, next)| next.is_whitespace())
                        .unwrap_or(true);
                    next_ok && !(ch == '.' && is_abbreviation(&text[start..idx]))
                }
            }
            LanguageTag::Cn => matches!(ch, '。' | '！' | '？' | '；'),
        };
        if is_boundary {
            let end = idx + ch.len_utf8();
            push_sentence(&mut sentences, text, start..end);
            start = end;
        }
    }
    push_sentence(&mut sentences, text, start..text.len());
    sentences
}

fn push_sentence(out: &mut Vec<Sentence>, text: &str, raw: Range<usize>) {
    let slice = &text[raw.clone()];
    let trimmed = slice.trim_matches(|c: char| c.is_whitespace());
    if trimmed.is_empty() {
        return;
    }
    let lead = slice.len() - slice.trim_start_matches(|c: char| c.is_whitespace()).len();
    let span = raw.start + lead..raw.start + lead + trimmed.len();
    out.push(Sentence {
        text: normalize(trimmed),
        span,
    });
}

/// True when the word ending right before a period is a known abbreviation.
fn is_abbreviation(before: &str) -> bool {
    let word_start = before
        .rfind(|c: char| c.is_whitespace())
        .map(|i| i + 1)
        .unwrap_or(0);
    let word = before[word_start..].trim_end_matches('.').to_lowercase();
    !word.is_empty() && EN_ABBREVIATIONS.contains(&word.as_str())
}

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

/// Tokenize text.
///
/// English: lowercased runs of alphanumeric characters (whitespace and
/// punctuation are boundaries). Chinese: each Han character is one token;
/// embedded Latin/digit runs stay single tokens and keep their case.
pub fn tokenize(text: &str, language: LanguageTag) -> Vec<String> {
    tokenize_with_spans(text, language)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Like [`tokenize`] but keeping each token's byte span, which the chunker
/// uses to slice chunk bodies out of the original document.
pub fn tokenize_with_spans(text: &str, language: LanguageTag) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut run_end = 0usize;

    let flush = |tokens: &mut Vec<Token>, text: &str, start: usize, end: usize, lang| {
        if start < end {
            let raw = &text[start..end];
            let tok = match lang {
                LanguageTag::En => raw.to_lowercase(),
                LanguageTag::Cn => raw.to_string(),
            };
            tokens.push(Token {
                text: tok,
                span: start..end,
            });
        }
    };

    for (idx, ch) in text.char_indices() {
        let end = idx + ch.len_utf8();
        if language == LanguageTag::Cn && is_han(ch) {
            if let Some(start) = run_start.take() {
                flush(&mut tokens, text, start, run_end, language);
            }
            tokens.push(Token {
                text: ch.to_string(),
                span: idx..end,
            });
        } else if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(idx);
            }
            run_end = end;
        } else if let Some(start) = run_start.take() {
            flush(&mut tokens, text, start, run_end, language);
        }
    }
    if let Some(start) = run_start {
        flush(&mut tokens, text, start, run_end, language);
    }
    tokens
}

/// Count words as defined by [`tokenize`]: whitespace/punctuation-delimited
/// tokens for English, characters for Chinese.
pub fn count_words(text: &str, language: LanguageTag) -> TokenCount {
    TokenCount(tokenize(text, language).len())
}

fn is_han(ch: char) -> bool {
    matches!(ch,
        '\u{4E00}'..='\u{9FFF}'        // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}'      // Extension A
        | '\u{F900}'..='\u{FAFF}'      // Compatibility Ideographs
        | '\u{20000}'..='\u{2A6DF}'    // Extension B
    )
}
