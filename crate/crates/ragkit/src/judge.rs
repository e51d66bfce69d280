//! Keypoint classification against a generated answer.
//!
//! A judge backend is a single text-to-text call. The prompt lists the
//! keypoints of the gold answer; the transcript must conclude each one with a
//! bracketed label, which [`parse_judge_labels`] extracts positionally. The
//! [`MockJudge`] implements the same contract with a deterministic substring
//! rule so the whole metric stack runs offline.

use std::sync::Arc;

use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::templates::TemplateSet;
use crate::textproc::normalize;

#[derive(Error, Debug)]
pub enum JudgeError {
    #[error("empty keypoint set")]
    EmptyKeypoints,
    #[error("count mismatch (found {found}, expected {expected})")]
    CountMismatch { found: usize, expected: usize },
    #[error("unknown label {token:?}")]
    UnknownLabel { token: String },
    #[error("judge backend failed: {0}")]
    Backend(String),
    #[error("transcript unparseable after retry: {source}\n--- transcript ---\n{transcript}")]
    PersistentParseFailure {
        source: Box<JudgeError>,
        transcript: String,
    },
    #[error(transparent)]
    Template(#[from] crate::templates::TemplateError),
}

/// Classification of one keypoint against the generated answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeypointLabel {
    /// The answer states the keypoint's information correctly
    /// (judge token `[[[Relevant]]]`).
    Covered,
    /// The answer contradicts the keypoint (judge token `[[[Wrong]]]`).
    Contradicted,
    /// The answer does not engage the keypoint
    /// (judge token `[[[Irrelevant]]]`).
    Untouched,
}

impl KeypointLabel {
    pub fn from_token(token: &str) -> Option<KeypointLabel> {
        match token {
            "Relevant" => Some(KeypointLabel::Covered),
            "Wrong" => Some(KeypointLabel::Contradicted),
            "Irrelevant" => Some(KeypointLabel::Untouched),
            _ => None,
        }
    }
}

/// Per-keypoint labels for one record, in keypoint order, plus the raw judge
/// transcript they were parsed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointVerdicts {
    pub record_id: String,
    pub labels: Vec<KeypointLabel>,
    pub raw_transcript: String,
}

/// A single-call text-to-text judge.
pub trait JudgeBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError>;
}

/// Extract exactly `expected_count` labels from a transcript by scanning for
/// `[[[...]]]` tokens in document order. Never returns a partial list: the
/// result is either complete or a classified error.
pub fn parse_judge_labels(
    transcript: &str,
    expected_count: usize,
) -> Result<Vec<KeypointLabel>, JudgeError> {
    let mut labels = Vec::new();
    let mut rest = transcript;
    while let Some(open) = rest.find("[[[") {
        let after = &rest[open + 3..];
        match after.find("]]]") {
            Some(close) => {
                let token = after[..close].trim();
                match KeypointLabel::from_token(token) {
                    Some(label) => labels.push(label),
                    None => {
                        return Err(JudgeError::UnknownLabel {
                            token: token.to_string(),
                        })
                    }
                }
                rest = &after[close + 3..];
            }
            // An unterminated opener is prose, not a token.
            None => break,
        }
    }
    if labels.len() != expected_count {
        return Err(JudgeError::CountMismatch {
            found: labels.len(),
            expected: expected_count,
        });
    }
    Ok(labels)
}

/// Render the evaluation prompt for a record's keypoints.
pub fn render_judge_prompt(
    templates: &TemplateSet,
    question: &str,
    answer: &str,
    keypoints: &[String],
) -> Result<String, JudgeError> {
    let numbered: String = keypoints
        .iter()
        .enumerate()
        .map(|(i, kp)| format!("{}. {}\n", i + 1, kp))
        .collect();
    Ok(templates.render(
        "judge_keypoints",
        &[
            ("question", question),
            ("prediction", answer),
            ("key_points_num", &keypoints.len().to_string()),
            ("key_points", numbered.trim_end()),
        ],
    )?)
}

/// Classify every keypoint against the answer via one judge call, retrying
/// once with a format reminder if the transcript does not parse. Labels are
/// positional: the i-th token labels the i-th keypoint.
pub fn classify_keypoints(
    record_id: &str,
    question: &str,
    answer: &str,
    keypoints: &[String],
    judge: &dyn JudgeBackend,
    templates: &TemplateSet,
) -> Result<KeypointVerdicts, JudgeError> {
    if keypoints.is_empty() {
        return Err(JudgeError::EmptyKeypoints);
    }
    let prompt = render_judge_prompt(templates, question, answer, keypoints)?;
    let transcript = judge.complete(&prompt)?;
    match parse_judge_labels(&transcript, keypoints.len()) {
        Ok(labels) => Ok(KeypointVerdicts {
            record_id: record_id.to_string(),
            labels,
            raw_transcript: transcript,
        }),
        Err(_) => {
            let reminder = format!(
                "{prompt}\n\nReminder: output exactly {n} conclusions, one per key point in \
                 order, each ending with [[[Relevant]]], [[[Wrong]]], or [[[Irrelevant]]].",
                n = keypoints.len()
            );
            let retry = judge.complete(&reminder)?;
            match parse_judge_labels(&retry, keypoints.len()) {
                Ok(labels) => Ok(KeypointVerdicts {
                    record_id: record_id.to_string(),
                    labels,
                    raw_transcript: retry,
                }),
                Err(source) => Err(JudgeError::PersistentParseFailure {
                    source: Box::new(source),
                    transcript: retry,
                }),
            }
        }
    }
}

/// Deterministic offline judge.
///
/// It re-reads the answer and the numbered keypoints out of the rendered
/// prompt, then labels each keypoint: `Contradicted` when the answer contains
/// the keypoint prefixed by a negation marker (`"not "` or `"没有"`),
/// `Covered` when the normalized keypoint is a substring of the normalized
/// answer, `Untouched` otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge;

const ANSWER_MARKER: &str = "Generated Answer:";
const KEYPOINTS_MARKER: &str = "key points\n";
const END_MARKER: &str = "Key Point Evaluation:";

impl JudgeBackend for MockJudge {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let answer_start = prompt
            .find(ANSWER_MARKER)
            .ok_or_else(|| JudgeError::Backend("mock judge: no answer section".into()))?
            + ANSWER_MARKER.len();
        let answer_end = prompt[answer_start..]
            .find("\nStandard Answer Key Points:")
            .map(|i| answer_start + i)
            .unwrap_or(prompt.len());
        let answer = normalize(&prompt[answer_start..answer_end]);

        let kp_start = prompt
            .find(KEYPOINTS_MARKER)
            .ok_or_else(|| JudgeError::Backend("mock judge: no keypoint section".into()))?
            + KEYPOINTS_MARKER.len();
        let kp_end = prompt[kp_start..]
            .find(END_MARKER)
            .map(|i| kp_start + i)
            .unwrap_or(prompt.len());

        let mut transcript = String::new();
        let mut index = 0usize;
        for line in prompt[kp_start..kp_end].lines() {
            let line = line.trim();
            let Some(rest) = line.split_once(". ").filter(|(n, _)| {
                !n.is_empty() && n.chars().all(|c| c.is_ascii_digit())
            }) else {
                continue;
            };
            index += 1;
            let keypoint = normalize(rest.1);
            let token = if answer.contains(&format!("not {keypoint}"))
                || answer.contains(&format!("没有{keypoint}"))
            {
                "Wrong"
            } else if answer.contains(&keypoint) {
                "Relevant"
            } else {
                "Irrelevant"
            };
            transcript.push_str(&format!("Key Point {index}:\nConclusion: [[[{token}]]]\n"));
        }
        Ok(transcript)
    }
}

/// Judge backed by a remote chat model through the gateway.
pub struct RemoteJudge {
    gateway: Arc<Gateway>,
    model: String,
    temperature: f64,
    top_p: f64,
}

impl RemoteJudge {
    pub fn new(gateway: Arc<Gateway>, model: impl Into<String>) -> Self {
        RemoteJudge {
            gateway,
            model: model.into(),
            temperature: 0.2,
            top_p: 1.0,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }
}

impl JudgeBackend for RemoteJudge {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let request = ChatRequest::new(&self.model, prompt)
            .temperature(self.temperature)
            .top_p(self.top_p);
        self.gateway
            .chat_complete(&request)
            .map_err(|e: GatewayError| JudgeError::Backend(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use KeypointLabel::*;

    #[test]
    fn parses_labels_in_order() {
        let transcript = "ok [[[Relevant]]] then [[[Relevant]]] finally [[[Wrong]]]";
        assert_eq!(
            parse_judge_labels(transcript, 3).unwrap(),
            vec![Covered, Covered, Contradicted]
        );
    }

    #[test]
    fn count_mismatch_is_reported() {
        let err = parse_judge_labels("[[[Relevant]]] [[[Wrong]]]", 3).unwrap_err();
        assert_eq!(err.to_string(), "count mismatch (found 2, expected 3)");
    }

    #[test]
    fn unknown_token_is_reported() {
        let err = parse_judge_labels("[[[Maybe]]]", 1).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
    }

    #[test]
    fn unterminated_opener_is_prose() {
        let err = parse_judge_labels("[[[Relevant]]] trailing [[[junk", 2).unwrap_err();
        assert!(matches!(err, JudgeError::CountMismatch { found: 1, expected: 2 }));
    }

    #[test]
    fn empty_keypoints_rejected() {
        let templates = TemplateSet::embedded();
        let err = classify_keypoints("r1", "q", "a", &[], &MockJudge, &templates).unwrap_err();
        assert_eq!(err.to_string(), "empty keypoint set");
    }

    #[test]
    fn mock_judge_labels_by_substring_rule() {
        let templates = TemplateSet::embedded();
        let keypoints = vec![
            "the revenue grew".to_string(),
            "the debt shrank".to_string(),
            "the board resigned".to_string(),
        ];
        let answer = "In 2023 the revenue grew. However it is not the debt shrank.";
        let verdicts =
            classify_keypoints("r1", "q", answer, &keypoints, &MockJudge, &templates).unwrap();
        assert_eq!(verdicts.labels, vec![Covered, Contradicted, Untouched]);
        assert_eq!(verdicts.record_id, "r1");
    }

    #[test]
    fn mock_judge_is_deterministic() {
        let templates = TemplateSet::embedded();
        let keypoints = vec!["alpha".to_string(), "beta".to_string()];
        let a = classify_keypoints("r", "q", "alpha only", &keypoints, &MockJudge, &templates)
            .unwrap();
        let b = classify_keypoints("r", "q", "alpha only", &keypoints, &MockJudge, &templates)
            .unwrap();
        assert_eq!(a, b);
    }

    /// A backend that fails to format once, then obeys the reminder.
    struct SloppyJudge(std::sync::atomic::AtomicUsize);

    impl JudgeBackend for SloppyJudge {
        fn complete(&self, _prompt: &str) -> Result<String, JudgeError> {
            let calls = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if calls == 0 {
                Ok("no labels here".to_string())
            } else {
                Ok("[[[Relevant]]] [[[Irrelevant]]]".to_string())
            }
        }
    }

    #[test]
    fn retry_with_reminder_recovers() {
        let templates = TemplateSet::embedded();
        let judge = SloppyJudge(std::sync::atomic::AtomicUsize::new(0));
        let keypoints = vec!["a".to_string(), "b".to_string()];
        let verdicts =
            classify_keypoints("r1", "q", "ans", &keypoints, &judge, &templates).unwrap();
        assert_eq!(verdicts.labels, vec![Covered, Untouched]);
        assert_eq!(judge.0.load(std::sync::atomic::Ordering::SeqCst), 2);
    }

    /// A backend that never formats correctly.
    struct BabblingJudge;

    impl JudgeBackend for BabblingJudge {
        fn complete(&self, _prompt: &str) -> Result<String, JudgeError> {
            Ok("I would rather chat about the weather.".to_string())
        }
    }

    #[test]
    fn persistent_parse_failure_carries_transcript() {
        let templates = TemplateSet::embedded();
        let keypoints = vec!["a".to_string()];
        let err = classify_keypoints("r1", "q", "ans", &keypoints, &BabblingJudge, &templates)
            .unwrap_err();
        match err {
            JudgeError::PersistentParseFailure { transcript, .. } => {
                assert!(transcript.contains("weather"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }
}
