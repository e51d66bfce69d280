//! Shared fixture machinery: the bundled demo dataset builder and the
//! scripted transport used to produce the committed pipeline cache.
#![allow(dead_code)] // each test binary uses a subset

use std::collections::BTreeMap;
use std::path::PathBuf;

use ragkit::corpus::{Document, EvalDataset, GroundTruthReference, QraRecord, QuestionType};
use ragkit::gateway::{ChatRequest, GatewayError, Transport};
use ragkit::textproc::LanguageTag;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root")
}

pub fn fixtures_dir() -> PathBuf {
    workspace_root().join("fixtures")
}

pub fn ragkit_bin() -> &'static str {
    env!("CARGO_BIN_EXE_ragkit")
}

// ---------------------------------------------------------------------------
// Demo evaluation dataset: 10 documents, 7 records each (one per question
// type). Every answer embeds its keypoints verbatim, so the mock judge
// scores completeness 1 in oracle-answer mode.
// ---------------------------------------------------------------------------

struct Combo {
    scenario: &'static str,
    language: LanguageTag,
}

const COMBOS: [Combo; 5] = [
    Combo { scenario: "finance", language: LanguageTag::En },
    Combo { scenario: "legal", language: LanguageTag::En },
    Combo { scenario: "medical", language: LanguageTag::En },
    Combo { scenario: "finance", language: LanguageTag::Cn },
    Combo { scenario: "legal", language: LanguageTag::Cn },
];

struct DocSeed {
    /// Fact sentences; index 0 holds the larger amount, 1 the smaller,
    /// 2 the earlier dated event, 7 the later one, 6 and 7 are connected.
    facts: Vec<String>,
    questions: [String; 7],
    meta: BTreeMap<String, String>,
}

const EN_MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn doc_seed(combo: &Combo, slot: usize, global: usize) -> DocSeed {
    // Arithmetic rather than RNG: every value is a pure function of the
    // document index, so the fixture never drifts.
    let big = 62 + 3 * global as i64;
    let small = 21 + 2 * global as i64;
    let year = 2020 + (global % 4) as i64;
    let early_month = 1 + (global % 4);
    let late_month = 7 + (global % 5);
    let day_a = 3 + (global % 24) as i64;
    let day_b = 2 + (global % 25) as i64;
    let count = 2 + (global % 3) as i64;

    match (combo.scenario, combo.language) {
        ("finance", LanguageTag::En) => {
            let company = ["Orchid Analytics", "Juniper Freight"][slot];
            let target = ["Westbay Storage", "Kestrel Data"][slot];
            let city = ["Kenwick", "Dunmore"][slot];
            let d1 = format!("{day_a} {} {year}", EN_MONTHS[early_month - 1]);
            let d2 = format!("{day_b} {} {year}", EN_MONTHS[late_month - 1]);
            DocSeed {
                facts: vec![
                    format!("{company} reported revenue of {big} million in {year}."),
                    format!("Operating costs reached {small} million in the same period."),
                    format!("The audit committee met on {d1}."),
                    format!("Headcount grew to {} employees.", 200 + 10 * global),
                    format!("A regional office opened in {city}."),
                    format!("The dividend was set at {} cents per share.", 12 + global),
                    format!("{company} acquired {target} for {} million.", big - 20),
                    format!("The acquisition closed on {d2}."),
                    "The annual filing was released to shareholders.".to_string(),
                ],
                questions: [
                    format!("What revenue did {company} report in {year}?"),
                    format!("Summarize the reported results of {company}."),
                    format!("How are the acquisition events of {company} connected?"),
                    format!("What revenue figures appear across the {company} filings?"),
                    format!("Which was larger for {company}: revenue or operating costs?"),
                    format!("Did the audit committee of {company} meet before the acquisition closed?"),
                    format!("What was the chief executive's salary at {company}?"),
                ],
                meta: BTreeMap::from([("company".to_string(), company.to_string())]),
            }
        }
        ("legal", LanguageTag::En) => {
            let name = ["Ravenna Holt", "Stellan Brook"][slot];
            let org = ["Calder Municipal Works", "Northbay Customs Office"][slot];
            let role = ["permits officer", "records clerk"][slot];
            let d1 = format!("{day_a} {} {year}", EN_MONTHS[early_month - 1]);
            let d2 = format!("{day_b} {} {year}", EN_MONTHS[late_month - 1]);
            DocSeed {
                facts: vec![
                    format!("The tribunal fined {name} {big} thousand for professional misconduct."),
                    format!("The order required repayment of {small} thousand."),
                    format!("The complaint was filed on {d1}."),
                    format!("{name} worked as a {role} at {org}."),
                    format!("The hearing lasted {count} days."),
                    "Witness statements were entered into the record.".to_string(),
                    format!("The panel cited {count} documented incidents."),
                    format!("The final ruling was issued on {d2}."),
                    "The decision was added to the public register.".to_string(),
                ],
                questions: [
                    format!("What fine did the tribunal impose on {name}?"),
                    format!("Summarize the proceedings against {name}."),
                    format!("How do the cited incidents relate to the ruling against {name}?"),
                    format!("What penalties appear across the rulings against {name} and the related case?"),
                    format!("Which was larger in the {name} case: the fine or the repayment?"),
                    format!("Was the complaint against {name} filed before the final ruling?"),
                    format!("What prior convictions does {name} have?"),
                ],
                meta: BTreeMap::from([("respondent".to_string(), name.to_string())]),
            }
        }
        ("medical", LanguageTag::En) => {
            let patient = ["Dana Whitfield", "Corin Hale"][slot];
            let med = ["atorvastatin", "lisinopril"][slot];
            let d1 = format!("{day_a} {} {year}", EN_MONTHS[early_month - 1]);
            let d2 = format!("{day_b} {} {year}", EN_MONTHS[late_month - 1]);
            DocSeed {
                facts: vec![
                    format!("Cholesterol measured {} units at admission.", 180 + 5 * global),
                    format!("Resting heart rate measured {} beats per minute.", 62 + global),
                    format!("The patient was admitted on {d1}."),
                    format!("The patient reported symptoms for {count} weeks."),
                    format!("The cardiology team prescribed {med} at {} milligrams daily.", 10 + 5 * (global % 3)),
                    "A stress test returned normal results.".to_string(),
                    "A follow-up visit was scheduled with the cardiology clinic.".to_string(),
                    format!("Discharge took place on {d2}."),
                    "The care plan includes daily walking.".to_string(),
                ],
                questions: [
                    format!("What cholesterol level was measured for {patient} at admission?"),
                    format!("Summarize the admission findings for {patient}."),
                    format!("How does the follow-up visit relate to the discharge of {patient}?"),
                    format!("What measurements appear across the records of {patient} and the related case?"),
                    format!("Which was larger for {patient}: the cholesterol reading or the resting heart rate?"),
                    format!("Was {patient} admitted before being discharged?"),
                    format!("What is the blood type of {patient}?"),
                ],
                meta: BTreeMap::from([("patient".to_string(), patient.to_string())]),
            }
        }
        ("finance", LanguageTag::Cn) => {
            let company = ["华岭科技", "蓝川物流"][slot];
            let target = ["西湖仓储", "凌云数据"][slot];
            let city = ["杭州", "成都"][slot];
            DocSeed {
                facts: vec![
                    format!("{company}在{year}年实现收入{big}百万元。"),
                    format!("同期运营成本为{small}百万元。"),
                    format!("审计委员会于{year}年{early_month}月{day_a}日召开会议。"),
                    format!("员工人数增至{}人。", 300 + 10 * global),
                    format!("公司在{city}设立了新办事处。"),
                    format!("每股派息{}分。", 11 + global),
                    format!("{company}以{}百万元收购了{target}。", big - 20),
                    format!("收购于{year}年{late_month}月{day_b}日完成。"),
                    "年度报告已向股东发布。".to_string(),
                ],
                questions: [
                    format!("{company}在{year}年的收入是多少？"),
                    format!("请概述{company}披露的经营情况。"),
                    format!("{company}的收购事项之间有何联系？"),
                    format!("{company}及关联文件分别披露了哪些收入数字？"),
                    format!("{company}的收入与运营成本哪个更高？"),
                    format!("{company}的审计会议是否早于收购完成？"),
                    format!("{company}首席执行官的薪酬是多少？"),
                ],
                meta: BTreeMap::from([("公司".to_string(), company.to_string())]),
            }
        }
        _ => {
            let name = ["周海宁", "林奕达"][slot];
            let org = ["市政工程局", "海关事务所"][slot];
            let role = ["审核员", "档案管理员"][slot];
            DocSeed {
                facts: vec![
                    format!("法庭对{name}处以{big}万元罚款。"),
                    format!("裁决要求退还{small}万元。"),
                    format!("起诉材料于{year}年{early_month}月{day_a}日提交。"),
                    format!("{name}曾在{org}担任{role}。"),
                    format!("听证持续了{count}天。"),
                    "证人陈述已记录在案。".to_string(),
                    format!("合议庭认定了{count}起违规事件。"),
                    format!("最终裁决于{year}年{late_month}月{day_b}日作出。"),
                    "裁决已录入公共登记簿。".to_string(),
                ],
                questions: [
                    format!("法庭对{name}处以多少罚款？"),
                    format!("请概述针对{name}的诉讼情况。"),
                    format!("认定的违规事件与针对{name}的裁决有何联系？"),
                    format!("针对{name}及关联案件的处罚分别是什么？"),
                    format!("{name}案中罚款与退还金额哪个更高？"),
                    format!("针对{name}的起诉是否早于最终裁决？"),
                    format!("{name}是否有前科记录？"),
                ],
                meta: BTreeMap::from([("被告".to_string(), name.to_string())]),
            }
        }
    }
}

fn join_sentences(sentences: &[String], language: LanguageTag) -> String {
    match language {
        LanguageTag::En => sentences.join(" "),
        LanguageTag::Cn => sentences.concat(),
    }
}

/// Answer-only conclusion sentences per question type.
fn extras(qtype: QuestionType, language: LanguageTag) -> Vec<String> {
    let en: &[&str] = match qtype {
        QuestionType::Factual => &[
            "The figure is stated in the document.",
            "It refers to the reporting period.",
        ],
        QuestionType::Summarization => &[],
        QuestionType::MultiHopReasoning => &["Both facts describe connected events."],
        QuestionType::InformationIntegration => &["The two documents report these facts separately."],
        QuestionType::NumericalComparison => &["The first amount exceeds the second."],
        QuestionType::TemporalSequence => &["The earlier event preceded the later one."],
        QuestionType::Unanswerable => &[
            "The provided documents do not contain this information.",
            "No section addresses the question.",
            "The detail is therefore unavailable.",
        ],
    };
    let cn: &[&str] = match qtype {
        QuestionType::Factual => &["该数字载于文件之中。", "其对应本报告期。"],
        QuestionType::Summarization => &[],
        QuestionType::MultiHopReasoning => &["这两项事实相互关联。"],
        QuestionType::InformationIntegration => &["两份文件分别记载了上述事实。"],
        QuestionType::NumericalComparison => &["前者金额高于后者。"],
        QuestionType::TemporalSequence => &["较早的事件先于较晚的事件发生。"],
        QuestionType::Unanswerable => &[
            "所提供的文件没有包含该信息。",
            "文件中没有相关章节。",
            "因此无法获知该细节。",
        ],
    };
    let picked = match language {
        LanguageTag::En => en,
        LanguageTag::Cn => cn,
    };
    picked.iter().map(|s| s.to_string()).collect()
}

/// Which document facts each question type cites.
fn fact_indices(qtype: QuestionType) -> &'static [usize] {
    match qtype {
        QuestionType::Factual => &[0],
        QuestionType::Summarization => &[0, 1, 3],
        QuestionType::MultiHopReasoning => &[6, 7],
        QuestionType::InformationIntegration => &[0],
        QuestionType::NumericalComparison => &[0, 1],
        QuestionType::TemporalSequence => &[2, 7],
        QuestionType::Unanswerable => &[],
    }
}

/// Build the bundled evaluation fixture: 10 documents (5 scenario/language
/// pairs, two documents each) with one record per question type per
/// document.
pub fn demo_dataset() -> EvalDataset {
    let mut dataset = EvalDataset::default();
    let mut seeds = Vec::new();
    for (combo_idx, combo) in COMBOS.iter().enumerate() {
        for slot in 0..2usize {
            let global = combo_idx * 2 + slot;
            let doc_id = format!("{}-{}-{:02}", combo.scenario, combo.language, global);
            let seed = doc_seed(combo, slot, global);
            dataset.documents.push(Document {
                id: doc_id.clone(),
                language: combo.language,
                scenario: combo.scenario.to_string(),
                meta: seed.meta.clone(),
                text: join_sentences(&seed.facts, combo.language),
            });
            seeds.push((doc_id, combo_idx, slot, seed));
        }
    }

    for (doc_id, combo_idx, slot, seed) in &seeds {
        let combo = &COMBOS[*combo_idx];
        let sibling_idx = combo_idx * 2 + (1 - slot);
        let (sibling_id, _, _, sibling_seed) = &seeds[sibling_idx];

        for (q_idx, qtype) in QuestionType::ALL.into_iter().enumerate() {
            let mut references: Vec<GroundTruthReference> = fact_indices(qtype)
                .iter()
                .map(|&i| GroundTruthReference {
                    source_document_id: doc_id.clone(),
                    text: seed.facts[i].clone(),
                })
                .collect();
            let mut document_ids = vec![doc_id.clone()];
            if qtype == QuestionType::InformationIntegration {
                references.push(GroundTruthReference {
                    source_document_id: sibling_id.clone(),
                    text: sibling_seed.facts[0].clone(),
                });
                document_ids.push(sibling_id.clone());
            }

            let mut sentences: Vec<String> =
                references.iter().map(|r| r.text.clone()).collect();
            sentences.extend(extras(qtype, combo.language));
            let answer = join_sentences(&sentences, combo.language);
            let keypoints: Vec<String> = sentences.iter().take(3).cloned().collect();

            dataset.records.push(QraRecord {
                id: format!("{doc_id}-{}", qtype.code()),
                question: seed.questions[q_idx].clone(),
                question_type: qtype,
                document_ids,
                references,
                answer,
                keypoints,
            });
        }
    }
    dataset
}

// ---------------------------------------------------------------------------
// Scripted chat transport for the pipeline fixtures: a deterministic
// stand-in for the generation model, keyed off template markers.
// ---------------------------------------------------------------------------

pub struct PipelineScript;

impl PipelineScript {
    fn extract<'a>(prompt: &'a str, start: &str, end: &str) -> Option<&'a str> {
        let from = prompt.find(start)? + start.len();
        let until = prompt[from..].find(end).map(|i| from + i)?;
        Some(prompt[from..until].trim())
    }

    /// Naive split on `". "`; fixture values never contain periods, so this
    /// mirrors sentence boundaries exactly.
    fn sentences(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = text.trim();
        while let Some(pos) = rest.find(". ") {
            out.push(rest[..pos + 1].trim().to_string());
            rest = &rest[pos + 2..];
        }
        if !rest.trim().is_empty() {
            out.push(rest.trim().to_string());
        }
        out
    }

    fn config_value(prompt: &str) -> String {
        let path = Self::extract(prompt, "Field path: ", "\n").unwrap_or_default();
        if path.ends_with("role") {
            "senior permits officer".to_string()
        } else if path.contains("finding") {
            "the conduct was deliberate and sustained over several months".to_string()
        } else {
            format!("unspecified {}", path.rsplit(['.', ']']).next().unwrap_or("value"))
        }
    }

    fn humanize(path: &str) -> String {
        let mut words = String::new();
        for segment in path.split('.') {
            let segment = segment.split('[').next().unwrap_or(segment);
            for ch in segment.chars() {
                if ch.is_uppercase() {
                    words.push(' ');
                    words.extend(ch.to_lowercase());
                } else {
                    words.push(ch);
                }
            }
            words.push(' ');
        }
        words.trim().to_string()
    }

    fn document(prompt: &str) -> String {
        let config = Self::extract(prompt, "```json\n", "\n```").unwrap_or("{}");
        let value: serde_json::Value = serde_json::from_str(config).unwrap_or_default();
        let mut sentences = vec!["Enforcement Case Report.".to_string()];
        let mut pending_event: Option<String> = None;
        collect_leaves(&value, String::new(), &mut |path, leaf| {
            // `timeline[i]` entries arrive as an `event` leaf then a `date`
            // leaf; fold the pair into one sentence.
            if path.ends_with(".event") {
                pending_event = Some(leaf.to_string());
            } else if path.ends_with(".date") && pending_event.is_some() {
                let event = pending_event.take().unwrap();
                sentences.push(format!("The {event} step concluded on {leaf}."));
            } else {
                sentences.push(format!("The {} is {leaf}.", Self::humanize(path)));
            }
        });
        sentences.push("This report is complete and final.".to_string());
        sentences.join(" ")
    }

    fn qra(prompt: &str, offset: usize, question: &str) -> String {
        let document = Self::extract(prompt, "Document:\n", "\n\nRespond").unwrap_or_default();
        let sentences = Self::sentences(document);
        let start = offset.min(sentences.len().saturating_sub(3));
        let answer = sentences[start..(start + 3).min(sentences.len())].join(" ");
        format!("Question: {question}\nAnswer: {answer}")
    }

    fn references(prompt: &str) -> String {
        let document = Self::extract(prompt, "Document:\n", "\n\nQuestion:").unwrap_or_default();
        let answer = Self::extract(prompt, "\nAnswer: ", "\n\nSupporting").unwrap_or_default();
        let doc_sentences = Self::sentences(document);
        let mut lines = Vec::new();
        for sentence in Self::sentences(answer) {
            if doc_sentences.contains(&sentence) {
                lines.push(format!("{}. {}", lines.len() + 1, sentence));
            }
        }
        if lines.is_empty() {
            "NONE".to_string()
        } else {
            lines.join("\n")
        }
    }

    fn keypoints(prompt: &str) -> String {
        let marker = "Standard Answer: ";
        let from = prompt.rfind(marker).map(|i| i + marker.len()).unwrap_or(0);
        let until = prompt[from..]
            .find("\nKey Points:")
            .map(|i| from + i)
            .unwrap_or(prompt.len());
        Self::sentences(&prompt[from..until])
            .into_iter()
            .take(4)
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn collect_leaves(value: &serde_json::Value, path: String, f: &mut impl FnMut(&str, &str)) {
    match value {
        serde_json::Value::Object(map) => {
            for (key, child) in map {
                let child_path = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                collect_leaves(child, child_path, f);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                collect_leaves(item, format!("{path}[{i}]"), f);
            }
        }
        serde_json::Value::String(leaf) => f(&path, leaf),
        _ => {}
    }
}

impl Transport for PipelineScript {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = &request.user;
        let response = if prompt.contains("filling one field") {
            Self::config_value(prompt)
        } else if prompt.contains("Write a complete") {
            Self::document(prompt)
        } else if prompt.contains("one factual question") {
            Self::qra(prompt, 1, "What does the report state about the tribunal's findings?")
        } else if prompt.contains("one summarization question") {
            Self::qra(prompt, 3, "Summarize the respondent's details in the report.")
        } else if prompt.contains("one multi-hop reasoning question") {
            Self::qra(prompt, 5, "How do the timeline steps of the case relate to each other?")
        } else if prompt.contains("one information-integration question") {
            Self::qra(prompt, 2, "Which details are reported about the respondent and the case number together?")
        } else if prompt.contains("one numerical-comparison question") {
            Self::qra(prompt, 6, "How do the reported amounts in the case compare?")
        } else if prompt.contains("one temporal-sequence question") {
            Self::qra(prompt, 4, "In what order did the procedural steps occur?")
        } else if prompt.contains("one unanswerable question") {
            "Question: What was the respondent's annual salary?\nAnswer: The document does not \
             state the respondent's salary. No compensation details appear in the report. The \
             information is therefore unavailable."
                .to_string()
        } else if prompt.contains("Supporting sentences:") {
            Self::references(prompt)
        } else if prompt.contains("Edits:") {
            "NO_EDITS".to_string()
        } else if prompt.contains("Summarize the key points") {
            Self::keypoints(prompt)
        } else {
            return Err(GatewayError::Transport(format!(
                "scripted transport: unrecognized prompt: {}…",
                prompt.chars().take(80).collect::<String>()
            )));
        };
        Ok(response)
    }

    fn embed(&self, _texts: &[String], _model: &str) -> Result<Vec<Vec<f32>>, GatewayError> {
        Err(GatewayError::Transport("scripted transport has no embeddings".into()))
    }
}
