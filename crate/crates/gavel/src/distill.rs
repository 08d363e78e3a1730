//! Explanation restructuring: rewrite raw explanations into the four-field
//! reasoning structure (legal concept, fact analysis, rule application,
//! legal conclusion) by prompting a teacher model.
//!
//! Only structural validity is enforced; the content of a restructured
//! explanation is not verified. On failure the original raw explanation is
//! retained untouched, so the corpus is never corrupted.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{Backend, ClientError, CompletionRequest};
use crate::corpus::{normalize_match_key, Corpus, QuestionRecord};

/// The structured explanation quadruple. All four fields non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IracExplanation {
    #[serde(rename = "Legal_Concept")]
    pub legal_concept: String,
    #[serde(rename = "Fact_Analysis")]
    pub fact_analysis: String,
    #[serde(rename = "Rule_Application")]
    pub rule_application: String,
    #[serde(rename = "Legal_Conclusion")]
    pub legal_conclusion: String,
}

impl IracExplanation {
    /// Err names the first empty field.
    pub fn check_fields(&self) -> Result<(), &'static str> {
        for (name, value) in [
            ("Legal_Concept", &self.legal_concept),
            ("Fact_Analysis", &self.fact_analysis),
            ("Rule_Application", &self.rule_application),
            ("Legal_Conclusion", &self.legal_conclusion),
        ] {
            if value.trim().is_empty() {
                return Err(name);
            }
        }
        Ok(())
    }

    /// Render as labeled headings, the shape teachers are asked to produce.
    pub fn heading_form(&self) -> String {
        format!(
            "Legal Concept: {}\n\nFact Analysis: {}\n\nRule Application: {}\n\nLegal Conclusion: {}",
            self.legal_concept, self.fact_analysis, self.rule_application, self.legal_conclusion
        )
    }
}

/// Outcome of distilling one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillOutcome {
    pub record_id: String,
    pub result: DistillResult,
    /// Last teacher reply, retained for audit.
    pub raw_teacher_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillResult {
    Success(IracExplanation),
    Failed { reason: String, attempts: u32 },
}

/// One (id, reason, attempts) line of the failure report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillFailure {
    pub id: String,
    pub reason: String,
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("exemplar pair field {field} is empty")]
    EmptyExemplarField { field: &'static str },
    #[error("distillation aborted after {completed} records: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: ClientError,
    },
}

/// Decoding parameters for teacher calls. Retries regenerate with the same
/// prompt but fresh sampling (the seed advances per attempt).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillOptions {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_teacher_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_teacher_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_max_attempts() -> u32 {
    3
}
fn default_teacher_temperature() -> f64 {
    0.7
}
fn default_teacher_max_tokens() -> u32 {
    768
}
fn default_workers() -> usize {
    4
}

impl Default for DistillOptions {
    fn default() -> DistillOptions {
        DistillOptions {
            max_attempts: default_max_attempts(),
            temperature: default_teacher_temperature(),
            seed: 0,
            max_tokens: default_teacher_max_tokens(),
            workers: default_workers(),
        }
    }
}

pub const DISTILL_SYSTEM_PROMPT: &str = "You restructure bar-exam answer explanations into four labeled sections: Legal Concept, Fact Analysis, Rule Application, Legal Conclusion. Use the provided question, options, correct option, and raw explanation as context. Output exactly the four labeled sections and nothing else.";

/// The user prompt for one record: task instruction, one worked example
/// (raw explanation in, structured explanation out), then the target
/// question with its options, correct label, and raw explanation.
pub fn build_distill_prompt(
    record: &QuestionRecord,
    exemplar_pair: &(String, IracExplanation),
) -> Result<String, DistillError> {
    let (exemplar_raw, exemplar_irac) = exemplar_pair;
    if exemplar_raw.trim().is_empty() {
        return Err(DistillError::EmptyExemplarField {
            field: "raw explanation",
        });
    }
    if let Err(field) = exemplar_irac.check_fields() {
        return Err(DistillError::EmptyExemplarField { field });
    }

    let mut options = String::new();
    for (label, text) in &record.options {
        options.push_str(&format!("{label}) {text}\n"));
    }
    Ok(format!(
        "Rewrite the raw explanation into the four labeled sections shown in the example.\n\n\
         Example raw explanation:\n{exemplar_raw}\n\n\
         Example restructured explanation:\n{}\n\n\
         Now restructure the explanation for this question.\n\n\
         Question:\n{}\n\n\
         Options:\n{options}\n\
         Correct option: {}\n\n\
         Raw explanation:\n{}",
        exemplar_irac.heading_form(),
        record.body,
        record.correct_label,
        record.explanation
    ))
}

static IRAC_HEADING: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r#"(?im)^[ \t>#*_"'0-9.)-]*(legal[ _]?concept|fact[ _]?analysis|rule[ _]?application|legal[ _]?conclusion)\s*["'*_]*\s*[:\-]?\s*"#,
    )
    .unwrap()
});

fn canonical_irac_slot(label: &str) -> Option<usize> {
    match normalize_match_key(label).as_str() {
        "legal concept" => Some(0),
        "fact analysis" => Some(1),
        "rule application" => Some(2),
        "legal conclusion" => Some(3),
        _ => None,
    }
}

/// Heading values are kept verbatim; quoted JSON-ish values shed their
/// quotes and any trailing structural punctuation.
fn clean_field(text: &str) -> String {
    let t = text.trim();
    let tail_trimmed = t.trim_end_matches(|c: char| c == ',' || c == '}' || c.is_whitespace());
    if tail_trimmed.len() >= 2 && tail_trimmed.starts_with('"') && tail_trimmed.ends_with('"') {
        return tail_trimmed[1..tail_trimmed.len() - 1].trim().to_string();
    }
    t.to_string()
}

fn irac_from_json(value: &serde_json::Value) -> Option<IracExplanation> {
    // the four keys may sit under a nested "explanation" object
    let source = value
        .as_object()?
        .iter()
        .find(|(k, v)| normalize_match_key(k) == "explanation" && v.is_object())
        .map(|(_, v)| v)
        .unwrap_or(value);
    let obj = source.as_object()?;
    let mut fields: [Option<String>; 4] = [None, None, None, None];
    for (key, val) in obj {
        if let (Some(slot), serde_json::Value::String(s)) = (canonical_irac_slot(key), val) {
            if !s.trim().is_empty() {
                fields[slot] = Some(s.trim().to_string());
            }
        }
    }
    match fields {
        [Some(legal_concept), Some(fact_analysis), Some(rule_application), Some(legal_conclusion)] => {
            Some(IracExplanation {
                legal_concept,
                fact_analysis,
                rule_application,
                legal_conclusion,
            })
        }
        _ => None,
    }
}

fn first_json_value(text: &str) -> Option<serde_json::Value> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in text.as_bytes()[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return serde_json::from_str(&text[start..start + offset + 1]).ok();
                }
            }
            _ => {}
        }
    }
    None
}

/// Extract the four fields from labeled headings or object keys, tolerant of
/// spacing, case, and underscore-vs-space variants. Absent unless all four
/// fields are present and non-empty.
pub fn parse_irac(text: &str) -> Option<IracExplanation> {
    if let Some(value) = first_json_value(text) {
        if let Some(irac) = irac_from_json(&value) {
            return Some(irac);
        }
    }

    let matches: Vec<(usize, usize, usize)> = IRAC_HEADING
        .captures_iter(text)
        .filter_map(|caps| {
            let whole = caps.get(0).unwrap();
            canonical_irac_slot(&caps[1]).map(|slot| (whole.start(), whole.end(), slot))
        })
        .collect();
    let mut fields: [Option<String>; 4] = [None, None, None, None];
    for (i, (_, content_start, slot)) in matches.iter().enumerate() {
        let content_end = matches.get(i + 1).map(|(s, _, _)| *s).unwrap_or(text.len());
        let content = clean_field(&text[*content_start..content_end]);
        if !content.is_empty() && fields[*slot].is_none() {
            fields[*slot] = Some(content);
        }
    }
    match fields {
        [Some(legal_concept), Some(fact_analysis), Some(rule_application), Some(legal_conclusion)] => {
            Some(IracExplanation {
                legal_concept,
                fact_analysis,
                rule_application,
                legal_conclusion,
            })
        }
        _ => None,
    }
}

/// Distill one record: prompt the teacher, parse, retry on structural
/// failure up to `max_attempts`. Transport errors propagate after the
/// client's own retry budget.
pub fn distill_explanation(
    backend: &Backend,
    record: &QuestionRecord,
    exemplar_pair: &(String, IracExplanation),
    options: &DistillOptions,
) -> Result<DistillOutcome, ClientError> {
    let prompt = match build_distill_prompt(record, exemplar_pair) {
        Ok(p) => p,
        Err(e) => {
            return Ok(DistillOutcome {
                record_id: record.id.clone(),
                result: DistillResult::Failed {
                    reason: e.to_string(),
                    attempts: 0,
                },
                raw_teacher_text: String::new(),
            })
        }
    };
    let mut last_text = String::new();
    let max_attempts = options.max_attempts.max(1);
    for attempt in 1..=max_attempts {
        let request = CompletionRequest {
            system_text: DISTILL_SYSTEM_PROMPT.to_string(),
            user_text: prompt.clone(),
            temperature: options.temperature,
            // fresh sampling per retry, deterministic under replay
            seed: options.seed.wrapping_add(u64::from(attempt - 1)),
            max_tokens: options.max_tokens,
            stop_sequences: Vec::new(),
        };
        // gold passthrough lets the synthetic backend stand in for a teacher
        let gold = exemplar_pair.1.heading_form();
        let result = backend.complete(&request, Some(&gold))?;
        last_text = result.text.clone();
        if let Some(irac) = parse_irac(&result.text) {
            return Ok(DistillOutcome {
                record_id: record.id.clone(),
                result: DistillResult::Success(irac),
                raw_teacher_text: last_text,
            });
        }
    }
    Ok(DistillOutcome {
        record_id: record.id.clone(),
        result: DistillResult::Failed {
            reason: "teacher reply missing one or more labeled sections".to_string(),
            attempts: max_attempts,
        },
        raw_teacher_text: last_text,
    })
}

/// Distill a whole corpus under a bounded worker pool. Record order is
/// preserved; successes gain a structured explanation, failures keep the raw
/// explanation and are listed in the failure report.
pub fn distill_corpus(
    backend: &Backend,
    corpus: &Corpus,
    exemplar_pair: &(String, IracExplanation),
    options: &DistillOptions,
) -> Result<(Corpus, Vec<DistillFailure>), DistillError> {
    let mut out = corpus.clone();
    let mut failures = Vec::new();
    let mut completed = 0usize;
    let mut abort: Option<ClientError> = None;
    crate::pool::run_ordered_streaming(
        corpus.records.len(),
        options.workers,
        |i| distill_explanation(backend, &corpus.records[i], exemplar_pair, options),
        |i, outcome| match outcome {
            Err(source) => {
                abort = Some(source);
                false
            }
            Ok(outcome) => {
                completed += 1;
                match outcome.result {
                    DistillResult::Success(irac) => {
                        out.records[i].structured_explanation = Some(irac);
                    }
                    DistillResult::Failed { reason, attempts } => {
                        failures.push(DistillFailure {
                            id: outcome.record_id,
                            reason,
                            attempts,
                        });
                    }
                }
                true
            }
        },
    );
    match abort {
        Some(source) => Err(DistillError::Aborted { completed, source }),
        None => Ok((out, failures)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{FinishReason, ReplayStore, SyntheticMode};
    use crate::corpus::{DomainTag, Label};
    use crate::fixtures::{irac_for, record};
    use proptest::prelude::*;

    fn exemplar_pair() -> (String, IracExplanation) {
        (
            "The statute burdens interstate commerce and is invalid for that reason.".to_string(),
            irac_for("exemplar"),
        )
    }

    #[test]
    fn prompt_contains_label_and_raw_explanation_verbatim() {
        let record = record("d1", DomainTag::ConstitutionalLaw, Label::A);
        let prompt = build_distill_prompt(&record, &exemplar_pair()).unwrap();
        assert!(prompt.contains("Correct option: A"));
        assert!(prompt.contains(&record.explanation));
        assert!(prompt.contains(&record.body));
        // deterministic bytes
        assert_eq!(
            prompt,
            build_distill_prompt(&record, &exemplar_pair()).unwrap()
        );
    }

    #[test]
    fn empty_exemplar_field_is_a_precondition_error() {
        let record = record("d2", DomainTag::Torts, Label::B);
        let mut pair = exemplar_pair();
        pair.1.rule_application = "  ".to_string();
        let err = build_distill_prompt(&record, &pair).unwrap_err();
        assert!(err.to_string().contains("Rule_Application"));
    }

    #[test]
    fn parse_irac_from_bold_headings() {
        let text = "**Legal Concept**: Dormant commerce principles.\n\
                    **Fact Analysis**: The state restricts licensure to in-state graduates.\n\
                    **Rule Application**: The restriction burdens interstate commerce.\n\
                    **Legal Conclusion**: The requirement is likely unconstitutional.";
        let irac = parse_irac(text).unwrap();
        assert_eq!(irac.legal_concept, "Dormant commerce principles.");
        assert!(irac.rule_application.contains("interstate commerce"));
    }

    #[test]
    fn parse_irac_missing_section_is_absent() {
        let text = "Legal Concept: something.\nRule Application: something else.\n\
                    Legal Conclusion: done.";
        assert!(parse_irac(text).is_none());
        assert!(parse_irac("free prose with no headings at all").is_none());
    }

    #[test]
    fn parse_irac_from_object_keys() {
        let text = r#"Here you go: {"Legal_Concept": "Consideration.", "Fact_Analysis": "A promise was exchanged.", "Rule_Application": "The exchange satisfies the bargain test.", "Legal_Conclusion": "A contract formed."}"#;
        let irac = parse_irac(text).unwrap();
        assert_eq!(irac.legal_concept, "Consideration.");
        assert_eq!(irac.legal_conclusion, "A contract formed.");
    }

    #[test]
    fn parse_irac_from_nested_explanation_object() {
        let text = r#"{"chosen_domain": "Contracts", "explanation": {"Legal_Concept": "Offer.", "Fact_Analysis": "Terms were stated.", "Rule_Application": "The terms were definite.", "Legal_Conclusion": "An offer existed."}}"#;
        let irac = parse_irac(text).unwrap();
        assert_eq!(irac.legal_concept, "Offer.");
    }

    #[test]
    fn heading_form_round_trips() {
        let irac = irac_for("rt");
        assert_eq!(parse_irac(&irac.heading_form()), Some(irac));
    }

    #[test]
    fn teacher_success_on_first_attempt() {
        let backend = Backend::Synthetic(SyntheticMode::Faithful);
        let record = record("d3", DomainTag::Evidence, Label::C);
        let outcome = distill_explanation(
            &backend,
            &record,
            &exemplar_pair(),
            &DistillOptions::default(),
        )
        .unwrap();
        match outcome.result {
            DistillResult::Success(irac) => assert!(irac.check_fields().is_ok()),
            other => panic!("expected success, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_teacher_keeps_raw_explanation() {
        // a replay store holding heading-free prose for every attempt
        let record = record("d4", DomainTag::Torts, Label::A);
        let options = DistillOptions {
            max_attempts: 3,
            workers: 1,
            ..DistillOptions::default()
        };
        let mut store = ReplayStore::new();
        let prompt = build_distill_prompt(&record, &exemplar_pair()).unwrap();
        for attempt in 0..3u64 {
            let request = CompletionRequest {
                system_text: DISTILL_SYSTEM_PROMPT.to_string(),
                user_text: prompt.clone(),
                temperature: options.temperature,
                seed: options.seed.wrapping_add(attempt),
                max_tokens: options.max_tokens,
                stop_sequences: Vec::new(),
            };
            store.insert(
                crate::client::request_fingerprint(&request, "teacher"),
                "this reply has no labeled sections whatsoever".to_string(),
                FinishReason::Stop,
            );
        }
        let backend = Backend::replay("teacher", store);
        let outcome = distill_explanation(&backend, &record, &exemplar_pair(), &options).unwrap();
        match outcome.result {
            DistillResult::Failed { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected failure, got {other:?}"),
        }
        assert_eq!(backend.replay_lookups(), 3);
    }

    #[test]
    fn corpus_with_planted_unparseable_replies_reports_exactly_those() {
        let corpus = crate::fixtures::synthetic_corpus(
            "pf",
            &[(DomainTag::Contracts, 10)],
            crate::corpus::SplitTag::Train,
            false,
        );
        let pair = exemplar_pair();
        let options = DistillOptions {
            max_attempts: 2,
            workers: 2,
            ..DistillOptions::default()
        };
        // a scripted teacher: junk for records 3 and 7 on every attempt,
        // valid headings otherwise
        let mut store = ReplayStore::new();
        for (i, record) in corpus.records.iter().enumerate() {
            let prompt = build_distill_prompt(record, &pair).unwrap();
            for attempt in 0..options.max_attempts as u64 {
                let request = CompletionRequest {
                    system_text: DISTILL_SYSTEM_PROMPT.to_string(),
                    user_text: prompt.clone(),
                    temperature: options.temperature,
                    seed: options.seed.wrapping_add(attempt),
                    max_tokens: options.max_tokens,
                    stop_sequences: Vec::new(),
                };
                let reply = if i == 3 || i == 7 {
                    "no labeled sections in this reply at all".to_string()
                } else {
                    irac_for(&record.id).heading_form()
                };
                store.insert(
                    crate::client::request_fingerprint(&request, "teacher"),
                    reply,
                    FinishReason::Stop,
                );
            }
        }
        let backend = Backend::replay("teacher", store);
        let (out, failures) = distill_corpus(&backend, &corpus, &pair, &options).unwrap();
        assert_eq!(failures.len(), 2);
        assert_eq!(failures[0].id, "pf-0-3");
        assert_eq!(failures[1].id, "pf-0-7");
        assert!(failures.iter().all(|f| f.attempts == 2));
        let structured = out
            .records
            .iter()
            .filter(|r| r.structured_explanation.is_some())
            .count();
        assert_eq!(structured, 8);
        // successes + failures account for the whole corpus
        assert_eq!(structured + failures.len(), corpus.len());
    }

    #[test]
    fn corpus_distillation_preserves_everything_but_structured_explanation() {
        let corpus = crate::fixtures::synthetic_corpus(
            "dc",
            &[(DomainTag::Torts, 4), (DomainTag::Evidence, 3)],
            crate::corpus::SplitTag::Train,
            false,
        );
        let backend = Backend::Synthetic(SyntheticMode::Faithful);
        let (out, failures) = distill_corpus(
            &backend,
            &corpus,
            &exemplar_pair(),
            &DistillOptions::default(),
        )
        .unwrap();
        assert!(failures.is_empty());
        assert_eq!(out.records.len(), corpus.records.len());
        for (before, after) in corpus.records.iter().zip(out.records.iter()) {
            assert_eq!(before.id, after.id);
            assert_eq!(before.body, after.body);
            assert_eq!(before.options, after.options);
            assert_eq!(before.correct_label, after.correct_label);
            assert_eq!(before.explanation, after.explanation);
            assert!(after.structured_explanation.is_some());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn heading_form_round_trip_property(
            a in "[A-Za-z][A-Za-z0-9 ,]{0,60}",
            b in "[A-Za-z][A-Za-z0-9 ,]{0,60}",
            c in "[A-Za-z][A-Za-z0-9 ,]{0,60}",
            d in "[A-Za-z][A-Za-z0-9 ,]{0,60}",
        ) {
            let irac = IracExplanation {
                legal_concept: a.trim().to_string(),
                fact_analysis: b.trim().to_string(),
                rule_application: c.trim().to_string(),
                legal_conclusion: d.trim().to_string(),
            };
            prop_assume!(irac.check_fields().is_ok());
            prop_assert_eq!(parse_irac(&irac.heading_form()), Some(irac));
        }
    }
}
