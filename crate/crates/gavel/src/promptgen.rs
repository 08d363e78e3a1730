//! Prompt rendering for the full generation-parameter matrix, plus gold-target
//! serialization and SFT dataset export.
//!
//! The system prompts are fixed templates per (response format, explanation
//! type) cell; the response type only reorders the field blocks. Rendering is
//! a pure function of its inputs and byte-stable across calls.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DomainTag, QuestionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptType {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationType {
    Structured,
    Unstructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    FactFirst,
    AnswerFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Json,
    Markdown,
    NumberedList,
}

impl PromptType {
    pub const ALL: [PromptType; 2] = [PromptType::ZeroShot, PromptType::FewShot];
}
impl ExplanationType {
    pub const ALL: [ExplanationType; 2] =
        [ExplanationType::Structured, ExplanationType::Unstructured];
}
impl ResponseType {
    pub const ALL: [ResponseType; 2] = [ResponseType::FactFirst, ResponseType::AnswerFirst];
}
impl ResponseFormat {
    pub const ALL: [ResponseFormat; 3] = [
        ResponseFormat::Json,
        ResponseFormat::Markdown,
        ResponseFormat::NumberedList,
    ];
}

/// One cell of the 2x2x2x3 experiment matrix plus decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub prompt_type: PromptType,
    pub explanation_type: ExplanationType,
    pub response_type: ResponseType,
    pub response_format: ResponseFormat,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl GenerationConfig {
    /// All 24 enum cells with the given decoding parameters.
    pub fn matrix(temperature: f64, seed: u64, max_tokens: u32) -> Vec<GenerationConfig> {
        let mut out = Vec::with_capacity(24);
        for prompt_type in PromptType::ALL {
            for explanation_type in ExplanationType::ALL {
                for response_type in ResponseType::ALL {
                    for response_format in ResponseFormat::ALL {
                        out.push(GenerationConfig {
                            prompt_type,
                            explanation_type,
                            response_type,
                            response_format,
                            temperature,
                            seed,
                            max_tokens,
                        });
                    }
                }
            }
        }
        out
    }

    /// Short code like `fs-st-ff-json`, used in run directory names.
    pub fn short_code(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            match self.prompt_type {
                PromptType::ZeroShot => "zs",
                PromptType::FewShot => "fs",
            },
            match self.explanation_type {
                ExplanationType::Structured => "st",
                ExplanationType::Unstructured => "un",
            },
            match self.response_type {
                ResponseType::FactFirst => "ff",
                ResponseType::AnswerFirst => "af",
            },
            match self.response_format {
                ResponseFormat::Json => "json",
                ResponseFormat::Markdown => "md",
                ResponseFormat::NumberedList => "nl",
            }
        )
    }
}

impl fmt::Display for GenerationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} t={} seed={} max_tokens={}",
            self.short_code(),
            self.temperature,
            self.seed,
            self.max_tokens
        )
    }
}

/// Model-dialect wrapper applied around system/user/assistant text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTemplateSpec {
    pub name: String,
    pub begin_of_text: String,
    pub system_open: String,
    pub system_close: String,
    pub user_open: String,
    pub user_close: String,
    pub assistant_open: String,
    /// The stop sequence the trained model must learn to emit. Non-empty.
    pub end_of_turn: String,
}

impl ChatTemplateSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.end_of_turn.is_empty() {
            return Err(PromptError::InvalidTemplate {
                name: self.name.clone(),
                problem: "end_of_turn must be non-empty".into(),
            });
        }
        Ok(())
    }

    /// The Llama 2 chat dialect; turns end with `</s>`.
    pub fn llama2() -> ChatTemplateSpec {
        ChatTemplateSpec {
            name: "llama2".into(),
            begin_of_text: "<s>".into(),
            system_open: "[INST] <<SYS>>\n".into(),
            system_close: "\n<</SYS>>\n\n".into(),
            user_open: "".into(),
            user_close: " [/INST]".into(),
            assistant_open: " ".into(),
            end_of_turn: "</s>".into(),
        }
    }

    /// The Llama 3 chat dialect; turns end with `<|eot_id|>`.
    pub fn llama3() -> ChatTemplateSpec {
        ChatTemplateSpec {
            name: "llama3".into(),
            begin_of_text: "<|begin_of_text|>".into(),
            system_open: "<|start_header_id|>system<|end_header_id|>\n\n".into(),
            system_close: "<|eot_id|>".into(),
            user_open: "<|start_header_id|>user<|end_header_id|>\n\n".into(),
            user_close: "<|eot_id|>".into(),
            assistant_open: "<|start_header_id|>assistant<|end_header_id|>\n\n".into(),
            end_of_turn: "<|eot_id|>".into(),
        }
    }

    /// A markerless dialect for endpoints that apply their own chat template
    /// server-side.
    pub fn plain() -> ChatTemplateSpec {
        ChatTemplateSpec {
            name: "plain".into(),
            begin_of_text: "".into(),
            system_open: "".into(),
            system_close: "\n\n".into(),
            user_open: "".into(),
            user_close: "\n\n".into(),
            assistant_open: "".into(),
            end_of_turn: "</s>".into(),
        }
    }

    pub fn builtin(name: &str) -> Option<ChatTemplateSpec> {
        match name {
            "llama2" => Some(ChatTemplateSpec::llama2()),
            "llama3" => Some(ChatTemplateSpec::llama3()),
            "plain" => Some(ChatTemplateSpec::plain()),
            _ => None,
        }
    }

    /// Load a template from a TOML file with the eight named fields.
    pub fn load(path: impl AsRef<Path>) -> Result<ChatTemplateSpec, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: ChatTemplateSpec =
            toml::from_str(&text).map_err(|e| PromptError::InvalidTemplate {
                name: path.display().to_string(),
                problem: e.to_string(),
            })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A fully templated prompt for one inference call.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    /// Present for few-shot prompts: (example question, example gold response).
    pub exemplar: Option<(String, String)>,
    pub full_text: String,
}

/// One training pair for SFT export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("record {id}: structured explanation required but absent")]
    MissingStructuredExplanation { id: String },
    #[error("few-shot prompt requires an exemplar: {detail}")]
    ExemplarRequired { detail: String },
    #[error("exemplar not allowed: {reason}")]
    ExemplarForbidden { reason: String },
    #[error("chat template {name}: {problem}")]
    InvalidTemplate { name: String, problem: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

// System prompt building blocks. The fact-first assembly of these blocks is
// the canonical template text for each (format, explanation type) cell;
// answer-first only moves the option block ahead of the explanation block.

const JSON_HEADER: &str = "Respond to the Multi state Bar exam question into this STRICT JSON format, considering the question and answer choices provided:\n\n{";
const JSON_FOOTER: &str = "}";
const JSON_UN_DOMAIN: &str =
    "\t\"chosen_domain\": \"*The relevant legal domain for this question*\",";
const JSON_UN_EXPLANATION: &str = "\t\"explanation\": \"*Analysis of the facts supporting the best possible answer choice for the scenario, taking into account relevant laws*\"";
const JSON_UN_OPTION: &str =
    "\t\"chosen_option_label\": \"*The letter corresponding to the correct answer choice.*\"";
const JSON_ST_DOMAIN: &str = "\"chosen_domain\": \"The relevant legal domain for this question\",";
const JSON_ST_EXPLANATION: &str = "\"explanation\": {\n\t\"Legal_Concept\": \"*The legal principle or doctrine at the heart of the question.*\",\n\t\"Fact_Analysis\": \"*A breakdown of the relevant facts presented in the question*\",\n\t\"Rule_Application\": \"*How the legal concept applies to thefacts in the question.*\",\n\t\"Legal_Conclusion\": \"*A concise statement explaining why the chosen option is the correct answer.*\"},";
const JSON_ST_OPTION: &str =
    "\"chosen_option_label\": \"*The letter corresponding to the correct answer choice.*\"";

const MD_HEADER: &str = "Respond to the Multistate Bar Exam question with a detailed explanation in the following MARKDOWN format, considering the question and answer choices provided:";
const MD_DOMAIN: &str = "## Domain\n*The relevant legal domain for this question.*";
const MD_UN_EXPLANATION: &str = "## Explanation\n*Analysis of the facts supporting the best possible answer choice for the scenario, taking into account relevant laws*";
const MD_ST_EXPLANATION: &str = "## Explanation\n\n### Legal Concept\n*The legal principle or doctrine at the heart of the question.*\n\n### Fact Analysis\n*A breakdown of the relevant facts presented in the question.*\n\n### Rule Application\n*How the legal concept applies to the facts in the question.*\n\n### Legal Conclusion\n*A concise statement explaining why the chosen option is the correct answer.*";
const MD_OPTION: &str =
    "## Chosen Option\n*The letter corresponding to the correct answer choice.*";

const NL_HEADER: &str = "Answer the following Multistate Bar Exam question. Provide the following information in your response:";
const NL_DOMAIN: &str = "Chosen Domain: (The relevant legal domain for this question)";
const NL_UN_EXPLANATION: &[&str] = &["Explanation: (Analysis of the facts supporting the best possible answer choice for the scenario, taking into account relevant laws and principles)"];
const NL_ST_EXPLANATION: &[&str] = &[
    "Legal Concept: (The legal principle or doctrine at the heart of the question)",
    "Fact Analysis: (A breakdown of the relevant facts presented in the question)",
    "Rule Application: (How the legal concept applies to the facts in the question)",
    "Legal Conclusion: (A concise statement explaining why the chosen option is the correct answer)",
];
const NL_OPTION: &str =
    "Chosen Option Label: (The letter corresponding to the correct answer choice)";

/// The system prompt for a configuration. Byte-stable; the response type only
/// reorders the field blocks.
pub fn system_prompt(config: &GenerationConfig) -> String {
    let fact_first = config.response_type == ResponseType::FactFirst;
    match config.response_format {
        ResponseFormat::Json => {
            let (domain, explanation, option) = match config.explanation_type {
                ExplanationType::Unstructured => {
                    (JSON_UN_DOMAIN, JSON_UN_EXPLANATION, JSON_UN_OPTION)
                }
                ExplanationType::Structured => {
                    (JSON_ST_DOMAIN, JSON_ST_EXPLANATION, JSON_ST_OPTION)
                }
            };
            let body = if fact_first {
                [domain, explanation, option]
            } else {
                [domain, option, explanation]
            };
            format!("{JSON_HEADER}\n{}\n{JSON_FOOTER}", body.join("\n"))
        }
        ResponseFormat::Markdown => {
            let explanation = match config.explanation_type {
                ExplanationType::Unstructured => MD_UN_EXPLANATION,
                ExplanationType::Structured => MD_ST_EXPLANATION,
            };
            let blocks = if fact_first {
                [MD_DOMAIN, explanation, MD_OPTION]
            } else {
                [MD_DOMAIN, MD_OPTION, explanation]
            };
            format!("{MD_HEADER}\n\n{}", blocks.join("\n\n"))
        }
        ResponseFormat::NumberedList => {
            let explanation = match config.explanation_type {
                ExplanationType::Unstructured => NL_UN_EXPLANATION,
                ExplanationType::Structured => NL_ST_EXPLANATION,
            };
            let mut items: Vec<&str> = vec![NL_DOMAIN];
            if fact_first {
                items.extend(explanation);
                items.push(NL_OPTION);
            } else {
                items.push(NL_OPTION);
                items.extend(explanation);
            }
            let numbered: Vec<String> = items
                .iter()
                .enumerate()
                .map(|(i, item)| format!("{}. {item}", i + 1))
                .collect();
            format!("{NL_HEADER}\n\n{}", numbered.join("\n"))
        }
    }
}

/// Question block: body, blank line, then one `X) text` line per option.
pub fn render_question(record: &QuestionRecord) -> String {
    let mut out = String::with_capacity(record.body.len() + 128);
    out.push_str(&record.body);
    out.push_str("\n\n");
    let mut first = true;
    for (label, text) in &record.options {
        if !first {
            out.push('\n');
        }
        first = false;
        out.push_str(label.as_str());
        out.push_str(") ");
        out.push_str(text);
    }
    out
}

// Gold-target JSON bodies. Struct field order fixes the key order.

#[derive(Serialize)]
struct JsonIrac<'a> {
    #[serde(rename = "Legal_Concept")]
    legal_concept: &'a str,
    #[serde(rename = "Fact_Analysis")]
    fact_analysis: &'a str,
    #[serde(rename = "Rule_Application")]
    rule_application: &'a str,
    #[serde(rename = "Legal_Conclusion")]
    legal_conclusion: &'a str,
}

#[derive(Serialize)]
struct JsonFactFirst<'a, E: Serialize> {
    chosen_domain: &'a str,
    explanation: E,
    chosen_option_label: &'a str,
}

#[derive(Serialize)]
struct JsonAnswerFirst<'a, E: Serialize> {
    chosen_domain: &'a str,
    chosen_option_label: &'a str,
    explanation: E,
}

/// Render the gold response for a record in the configured format, with
/// fields ordered per response type. JSON output is minified with a fixed key
/// order.
pub fn serialize_target(
    config: &GenerationConfig,
    record: &QuestionRecord,
) -> Result<String, PromptError> {
    let domain = record.domain.canonical_name();
    let label = record.correct_label.as_str();
    let structured = match config.explanation_type {
        ExplanationType::Structured => {
            Some(record.structured_explanation.as_ref().ok_or_else(|| {
                PromptError::MissingStructuredExplanation {
                    id: record.id.clone(),
                }
            })?)
        }
        ExplanationType::Unstructured => None,
    };

    let text = match config.response_format {
        ResponseFormat::Json => match (structured, config.response_type) {
            (Some(irac), ResponseType::FactFirst) => serde_json::to_string(&JsonFactFirst {
                chosen_domain: domain,
                explanation: JsonIrac {
                    legal_concept: &irac.legal_concept,
                    fact_analysis: &irac.fact_analysis,
                    rule_application: &irac.rule_application,
                    legal_conclusion: &irac.legal_conclusion,
                },
                chosen_option_label: label,
            }),
            (Some(irac), ResponseType::AnswerFirst) => serde_json::to_string(&JsonAnswerFirst {
                chosen_domain: domain,
                chosen_option_label: label,
                explanation: JsonIrac {
                    legal_concept: &irac.legal_concept,
                    fact_analysis: &irac.fact_analysis,
                    rule_application: &irac.rule_application,
                    legal_conclusion: &irac.legal_conclusion,
                },
            }),
            (None, ResponseType::FactFirst) => serde_json::to_string(&JsonFactFirst {
                chosen_domain: domain,
                explanation: record.explanation.as_str(),
                chosen_option_label: label,
            }),
            (None, ResponseType::AnswerFirst) => serde_json::to_string(&JsonAnswerFirst {
                chosen_domain: domain,
                chosen_option_label: label,
                explanation: record.explanation.as_str(),
            }),
        }
        .expect("gold target serialization cannot fail"),
        ResponseFormat::Markdown => {
            let domain_block = format!("## Domain\n{domain}");
            let option_block = format!("## Chosen Option\n{label}");
            let explanation_block = match structured {
                Some(irac) => format!(
                    "## Explanation\n\n### Legal Concept\n{}\n\n### Fact Analysis\n{}\n\n### Rule Application\n{}\n\n### Legal Conclusion\n{}",
                    irac.legal_concept, irac.fact_analysis, irac.rule_application, irac.legal_conclusion
                ),
                None => format!("## Explanation\n{}", record.explanation),
            };
            let blocks = match config.response_type {
                ResponseType::FactFirst => [domain_block, explanation_block, option_block],
                ResponseType::AnswerFirst => [domain_block, option_block, explanation_block],
            };
            blocks.join("\n\n")
        }
        ResponseFormat::NumberedList => {
            let mut items: Vec<String> = vec![format!("Chosen Domain: {domain}")];
            let explanation_items: Vec<String> = match structured {
                Some(irac) => vec![
                    format!("Legal Concept: {}", irac.legal_concept),
                    format!("Fact Analysis: {}", irac.fact_analysis),
                    format!("Rule Application: {}", irac.rule_application),
                    format!("Legal Conclusion: {}", irac.legal_conclusion),
                ],
                None => vec![format!("Explanation: {}", record.explanation)],
            };
            let option_item = format!("Chosen Option Label: {label}");
            match config.response_type {
                ResponseType::FactFirst => {
                    items.extend(explanation_items);
                    items.push(option_item);
                }
                ResponseType::AnswerFirst => {
                    items.push(option_item);
                    items.extend(explanation_items);
                }
            }
            items
                .iter()
                .enumerate()
                .map(|(i, item)| format!("{}. {item}", i + 1))
                .collect::<Vec<_>>()
                .join("\n")
        }
    };
    Ok(text)
}

/// Assemble the templated prompt for one inference call. Few-shot prompts
/// embed the exemplar question and its gold response in the system text,
/// ahead of the test question.
pub fn render_inference_prompt(
    config: &GenerationConfig,
    template: &ChatTemplateSpec,
    record: &QuestionRecord,
    exemplar: Option<&QuestionRecord>,
) -> Result<RenderedPrompt, PromptError> {
    template.validate()?;
    let exemplar = match (config.prompt_type, exemplar) {
        (PromptType::ZeroShot, None) => None,
        (PromptType::ZeroShot, Some(ex)) => {
            return Err(PromptError::ExemplarForbidden {
                reason: format!("config is zero-shot but exemplar {} was supplied", ex.id),
            })
        }
        (PromptType::FewShot, None) => {
            return Err(PromptError::ExemplarRequired {
                detail: format!("no exemplar supplied for record {}", record.id),
            })
        }
        (PromptType::FewShot, Some(ex)) => {
            if ex.id == record.id {
                return Err(PromptError::ExemplarForbidden {
                    reason: format!("exemplar {} is the question under test", ex.id),
                });
            }
            Some(ex)
        }
    };

    let base_system = system_prompt(config);
    let (system_text, exemplar_pair) = match exemplar {
        None => (base_system, None),
        Some(ex) => {
            let question = render_question(ex);
            let response = serialize_target(config, ex)?;
            let system_text = format!(
                "{base_system}\n\nHere is an example question and its expected response:\n\n{question}\n\n{response}"
            );
            (system_text, Some((question, response)))
        }
    };
    let user_text = render_question(record);
    let full_text = format!(
        "{}{}{}{}{}{}{}{}",
        template.begin_of_text,
        template.system_open,
        system_text,
        template.system_close,
        template.user_open,
        user_text,
        template.user_close,
        template.assistant_open
    );
    Ok(RenderedPrompt {
        system_text,
        user_text,
        exemplar: exemplar_pair,
        full_text,
    })
}

/// One SFT training pair: templated prompt plus the gold completion ending in
/// the template's end-of-turn token.
pub fn render_sft_sample(
    config: &GenerationConfig,
    template: &ChatTemplateSpec,
    record: &QuestionRecord,
    exemplar: Option<&QuestionRecord>,
) -> Result<SftSample, PromptError> {
    let prompt = render_inference_prompt(config, template, record, exemplar)?;
    let completion = format!(
        "{}{}",
        serialize_target(config, record)?,
        template.end_of_turn
    );
    Ok(SftSample {
        prompt: prompt.full_text,
        completion,
    })
}

/// Write one prompt/completion pair per line for every record. Few-shot
/// configs pick the exemplar matching each record's domain. Returns the
/// number of lines written; output bytes are deterministic.
pub fn export_sft_dataset(
    corpus: &Corpus,
    config: &GenerationConfig,
    template: &ChatTemplateSpec,
    exemplars: Option<&BTreeMap<DomainTag, QuestionRecord>>,
    path: impl AsRef<Path>,
) -> Result<usize, PromptError> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in &corpus.records {
        let exemplar = match config.prompt_type {
            PromptType::ZeroShot => None,
            PromptType::FewShot => Some(exemplars.and_then(|m| m.get(&record.domain)).ok_or_else(
                || PromptError::ExemplarRequired {
                    detail: format!(
                        "no exemplar for domain {} (record {})",
                        record.domain, record.id
                    ),
                },
            )?),
        };
        let sample = render_sft_sample(config, template, record, exemplar)?;
        out.push_str(&serde_json::to_string(&sample).expect("sample serialization cannot fail"));
        out.push('\n');
    }
    std::fs::write(path, &out).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(corpus.records.len())
}

/// Strip trailing whitespace per line and trailing blank lines. This is the
/// only tolerated deviation when snapshot-matching the canonical templates.
pub fn normalize_trailing_whitespace(text: &str) -> String {
    let mut out: String = text
        .lines()
        .map(|line| line.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    while out.ends_with('\n') {
        out.pop();
    }
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::fixtures::{exemplar_set, record_custom};

    fn config(
        prompt_type: PromptType,
        explanation_type: ExplanationType,
        response_type: ResponseType,
        response_format: ResponseFormat,
    ) -> GenerationConfig {
        GenerationConfig {
            prompt_type,
            explanation_type,
            response_type,
            response_format,
            temperature: 0.0,
            seed: 1,
            max_tokens: 512,
        }
    }

    fn sample_record() -> QuestionRecord {
        record_custom(
            "q-torts-1",
            DomainTag::Torts,
            "A visitor trips over an unmarked step. Which of the following is most accurate?",
            Label::B,
            true,
        )
    }

    #[test]
    fn matrix_has_24_cells() {
        let cells = GenerationConfig::matrix(0.0, 1, 512);
        assert_eq!(cells.len(), 24);
        let codes: std::collections::HashSet<String> =
            cells.iter().map(|c| c.short_code()).collect();
        assert_eq!(codes.len(), 24);
    }

    #[test]
    fn system_prompt_is_byte_stable() {
        for cell in GenerationConfig::matrix(0.0, 1, 512) {
            assert_eq!(system_prompt(&cell), system_prompt(&cell));
        }
    }

    #[test]
    fn answer_first_is_a_field_reordering_of_fact_first() {
        for response_format in ResponseFormat::ALL {
            for explanation_type in ExplanationType::ALL {
                let fact = system_prompt(&config(
                    PromptType::ZeroShot,
                    explanation_type,
                    ResponseType::FactFirst,
                    response_format,
                ));
                let answer = system_prompt(&config(
                    PromptType::ZeroShot,
                    explanation_type,
                    ResponseType::AnswerFirst,
                    response_format,
                ));
                assert_ne!(fact, answer);
                // same multiset of lines once list numbering is stripped
                let strip = |s: &str| {
                    let mut lines: Vec<String> = s
                        .lines()
                        .map(|l| {
                            l.trim_start_matches(|c: char| c.is_ascii_digit())
                                .trim_start_matches(". ")
                                .to_string()
                        })
                        .collect();
                    lines.sort();
                    lines
                };
                assert_eq!(strip(&fact), strip(&answer));
            }
        }
    }

    #[test]
    fn render_question_layout() {
        let mut record = sample_record();
        record.body = "Q?".into();
        for (label, text) in record.options.iter_mut() {
            *text = match label {
                Label::A => "a".into(),
                Label::B => "b".into(),
                Label::C => "c".into(),
                Label::D => "d".into(),
            };
        }
        assert_eq!(render_question(&record), "Q?\n\nA) a\nB) b\nC) c\nD) d");
    }

    #[test]
    fn render_question_preserves_newlines_in_options() {
        let mut record = sample_record();
        record
            .options
            .insert(Label::C, "line one\nline two".to_string());
        let text = render_question(&record);
        assert!(text.contains("C) line one\nline two"));
    }

    #[test]
    fn numbered_unstructured_target_ends_with_option_item() {
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::NumberedList,
        );
        let text = serialize_target(&cfg, &sample_record()).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("3. Chosen Option Label: "), "{last}");
    }

    #[test]
    fn structured_target_requires_structured_explanation() {
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Structured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let mut record = sample_record();
        record.structured_explanation = None;
        let err = serialize_target(&cfg, &record).unwrap_err();
        assert!(err.to_string().contains("q-torts-1"));
    }

    #[test]
    fn fact_first_and_answer_first_targets_have_identical_contents() {
        for response_format in ResponseFormat::ALL {
            for explanation_type in ExplanationType::ALL {
                let fact = serialize_target(
                    &config(
                        PromptType::ZeroShot,
                        explanation_type,
                        ResponseType::FactFirst,
                        response_format,
                    ),
                    &sample_record(),
                )
                .unwrap();
                let answer = serialize_target(
                    &config(
                        PromptType::ZeroShot,
                        explanation_type,
                        ResponseType::AnswerFirst,
                        response_format,
                    ),
                    &sample_record(),
                )
                .unwrap();
                assert_ne!(fact, answer);
                // identical contents when order is erased
                let canon = |s: &str| {
                    let mut chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
                    chars.sort_unstable();
                    chars
                };
                let mut fact_chars = canon(&fact);
                let mut answer_chars = canon(&answer);
                // numbered lists renumber on reorder; drop digits
                fact_chars.retain(|c| !c.is_ascii_digit());
                answer_chars.retain(|c| !c.is_ascii_digit());
                assert_eq!(fact_chars, answer_chars);
            }
        }
    }

    #[test]
    fn few_shot_prompt_embeds_exemplar_before_test_question() {
        let cfg = config(
            PromptType::FewShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::Markdown,
        );
        let exemplars = exemplar_set(false);
        let record = sample_record();
        let exemplar = &exemplars[&record.domain];
        let prompt =
            render_inference_prompt(&cfg, &ChatTemplateSpec::llama3(), &record, Some(exemplar))
                .unwrap();
        let (exemplar_question, exemplar_response) = prompt.exemplar.clone().unwrap();
        let exemplar_pos = prompt.full_text.find(&exemplar_question).unwrap();
        let gold_pos = prompt.full_text.find(&exemplar_response).unwrap();
        let test_pos = prompt.full_text.find(&prompt.user_text).unwrap();
        assert!(exemplar_pos < gold_pos && gold_pos < test_pos);
        assert!(exemplar_response.contains(&exemplar.explanation));
    }

    #[test]
    fn zero_shot_prompt_contains_exactly_one_question_block() {
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let record = sample_record();
        let prompt =
            render_inference_prompt(&cfg, &ChatTemplateSpec::llama2(), &record, None).unwrap();
        assert_eq!(prompt.full_text.matches(&record.body).count(), 1);
        assert!(prompt.exemplar.is_none());
        // full_text contains system and user text exactly once each, in order
        let sys_pos = prompt.full_text.find(&prompt.system_text).unwrap();
        let user_pos = prompt.full_text.find(&prompt.user_text).unwrap();
        assert!(sys_pos < user_pos);
        assert_eq!(prompt.full_text.matches(&prompt.system_text).count(), 1);
    }

    #[test]
    fn exemplar_equal_to_record_is_rejected() {
        let cfg = config(
            PromptType::FewShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let record = sample_record();
        let err =
            render_inference_prompt(&cfg, &ChatTemplateSpec::llama3(), &record, Some(&record))
                .unwrap_err();
        assert!(matches!(err, PromptError::ExemplarForbidden { .. }));
    }

    #[test]
    fn zero_shot_with_exemplar_is_rejected() {
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let record = sample_record();
        let exemplars = exemplar_set(false);
        let err = render_inference_prompt(
            &cfg,
            &ChatTemplateSpec::llama3(),
            &record,
            Some(&exemplars[&DomainTag::Torts]),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ExemplarForbidden { .. }));
    }

    #[test]
    fn export_on_unstructured_corpus_names_first_offending_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Structured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let corpus = crate::fixtures::synthetic_corpus(
            "ex",
            &[(DomainTag::Torts, 3)],
            crate::corpus::SplitTag::Train,
            false,
        );
        let err = export_sft_dataset(
            &corpus,
            &cfg,
            &ChatTemplateSpec::llama3(),
            None,
            dir.path().join("out.jsonl"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ex-0-0"), "{err}");
    }

    #[test]
    fn sft_completion_ends_with_end_of_turn() {
        let cfg = config(
            PromptType::ZeroShot,
            ExplanationType::Unstructured,
            ResponseType::FactFirst,
            ResponseFormat::Json,
        );
        let record = sample_record();
        for template in [ChatTemplateSpec::llama2(), ChatTemplateSpec::llama3()] {
            let sample = render_sft_sample(&cfg, &template, &record, None).unwrap();
            assert!(sample.completion.ends_with(&template.end_of_turn));
        }
    }

    #[test]
    fn normalize_strips_trailing_whitespace_only() {
        assert_eq!(
            normalize_trailing_whitespace("a \t\nb\n\t\nc\n\n"),
            "a\nb\n\nc"
        );
        assert_eq!(normalize_trailing_whitespace("abc"), "abc");
    }
}
