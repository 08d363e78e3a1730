//! Response-field extraction: recover (domain, option, explanation) from raw
//! model text, tolerating the documented failure modes (prompt echoes,
//! fictitious follow-up questions, repetition loops, truncation).
//!
//! The pipeline is deliberately lenient and symmetric across models: a
//! format-aware field lookup runs first, then relaxed text patterns anywhere
//! in the response. Absence of a field is a flag, never an error; parsing is
//! total over arbitrary UTF-8 input.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_match_key, DomainTag, Label};
use crate::promptgen::{ExplanationType, GenerationConfig, ResponseFormat};

/// Malformed-field flags; a response parses "ok" when both are clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseStatus {
    pub malformed_label: bool,
    pub malformed_explanation: bool,
}

impl ParseStatus {
    pub fn ok(&self) -> bool {
        !self.malformed_label && !self.malformed_explanation
    }
}

/// Identifiers for the recovery stages a parse applied, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EchoStripped,
    FictitiousTruncated,
    FictitiousCutSuppressed,
    DomainMatched,
    DomainMissing,
    OptionField,
    OptionRelaxed,
    OptionMissing,
    ExplanationField,
    ExplanationResidual,
    ExplanationMissing,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::EchoStripped => "echo_stripped",
            Stage::FictitiousTruncated => "fictitious_truncated",
            Stage::FictitiousCutSuppressed => "fictitious_cut_suppressed",
            Stage::DomainMatched => "domain_matched",
            Stage::DomainMissing => "domain_missing",
            Stage::OptionField => "option_field",
            Stage::OptionRelaxed => "option_relaxed",
            Stage::OptionMissing => "option_missing",
            Stage::ExplanationField => "explanation_field",
            Stage::ExplanationResidual => "explanation_residual",
            Stage::ExplanationMissing => "explanation_missing",
        };
        f.write_str(name)
    }
}

/// Extraction result for one response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub domain: Option<DomainTag>,
    pub option: Option<Label>,
    pub explanation: Option<String>,
    pub status: ParseStatus,
    pub recovery_trace: Vec<Stage>,
}

/// Default markers that open a hallucinated follow-up question.
pub const DEFAULT_FICTITIOUS_MARKERS: [&str; 3] = ["\n*Question:", "\nQuestion:", "\n**Question"];

/// Byte spans of whitespace-separated tokens.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Remove a leading echo of the rendered system prompt, matching token
/// sequences so interior whitespace differences do not defeat the strip.
/// Never removes anything when `rendered_system` is absent or empty.
pub fn strip_prompt_echo(raw: &str, rendered_system: Option<&str>) -> String {
    let Some(system) = rendered_system else {
        return raw.to_string();
    };
    let system_tokens: Vec<&str> = system.split_whitespace().collect();
    if system_tokens.is_empty() {
        return raw.to_string();
    }
    let mut text = raw;
    loop {
        let spans = token_spans(text);
        if spans.len() < system_tokens.len() {
            break;
        }
        let matches = system_tokens
            .iter()
            .zip(spans.iter())
            .all(|(tok, (s, e))| *tok == &text[*s..*e]);
        if !matches {
            break;
        }
        let cut = spans[system_tokens.len() - 1].1;
        text = text[cut..].trim_start();
    }
    text.to_string()
}

enum CutOutcome {
    NotFound,
    Cut,
    Suppressed,
}

fn truncate_fictitious_inner<'a>(raw: &'a str, markers: &[&str]) -> (&'a str, CutOutcome) {
    let earliest = markers.iter().filter_map(|m| raw.find(m)).min();
    match earliest {
        None => (raw, CutOutcome::NotFound),
        Some(pos) => {
            if raw[..pos].trim().is_empty() {
                // cutting here would empty the response
                (raw, CutOutcome::Suppressed)
            } else {
                (&raw[..pos], CutOutcome::Cut)
            }
        }
    }
}

/// Cut the text at the earliest fictitious-question marker, unless the cut
/// would leave nothing.
pub fn truncate_fictitious(raw: &str) -> String {
    truncate_fictitious_with(raw, &DEFAULT_FICTITIOUS_MARKERS)
}

/// As [`truncate_fictitious`], with a caller-supplied marker set.
pub fn truncate_fictitious_with(raw: &str, markers: &[&str]) -> String {
    truncate_fictitious_inner(raw, markers).0.to_string()
}

/// Scan a text slice and return a balanced `{...}` object, respecting string
/// literals and escapes.
fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
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
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn json_lookup<'a>(value: &'a serde_json::Value, wanted: &str) -> Option<&'a serde_json::Value> {
    let obj = value.as_object()?;
    for (key, val) in obj {
        if normalize_match_key(key) == wanted {
            return Some(val);
        }
    }
    None
}

/// First standalone option letter inside a located answer field.
static FIELD_LETTER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b([A-Da-d])\b").unwrap());

fn find_label_in_field(field: &str) -> Option<Label> {
    FIELD_LETTER
        .captures(field)
        .and_then(|c| Label::from_char(c[1].chars().next().unwrap()))
}

/// Markdown section: lines following a `## <name>` heading, up to the next
/// heading of depth <= 2. `###` subsections stay inside the section.
fn markdown_section(text: &str, name: &str) -> Option<String> {
    let wanted = normalize_match_key(name);
    let lines: Vec<&str> = text.lines().collect();
    let mut start = None;
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("##") {
            let rest = rest.trim_start_matches('#');
            if normalize_match_key(rest) == wanted {
                start = Some(i + 1);
                break;
            }
        }
    }
    let start = start?;
    let mut body = Vec::new();
    for line in &lines[start..] {
        let trimmed = line.trim_start();
        if trimmed.starts_with("##") && !trimmed.starts_with("###") {
            break;
        }
        body.push(*line);
    }
    let joined = body.join("\n").trim().to_string();
    (!joined.is_empty()).then_some(joined)
}

static NUMBERED_ITEM: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^\s*\d+[.)]\s*([A-Za-z][A-Za-z _]*?)\s*:\s*").unwrap());

/// Items of a numbered-list response: normalized label -> content (content
/// runs to the next numbered item).
fn numbered_items(text: &str) -> Vec<(String, String)> {
    let mut items = Vec::new();
    let matches: Vec<(usize, usize, String)> = NUMBERED_ITEM
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (whole.start(), whole.end(), normalize_match_key(&c[1]))
        })
        .collect();
    for (i, (_, content_start, label)) in matches.iter().enumerate() {
        let content_end = matches.get(i + 1).map(|(s, _, _)| *s).unwrap_or(text.len());
        let content = text[*content_start..content_end].trim().to_string();
        items.push((label.clone(), content));
    }
    items
}

fn numbered_item<'a>(items: &'a [(String, String)], label: &str) -> Option<&'a str> {
    items
        .iter()
        .find(|(l, _)| l == label)
        .map(|(_, c)| c.as_str())
}

/// Stage 1: format-aware option field lookup.
fn option_stage1(text: &str, config: &GenerationConfig) -> Option<Label> {
    match config.response_format {
        ResponseFormat::Json => {
            let obj = first_json_object(text)?;
            let value: serde_json::Value = serde_json::from_str(obj).ok()?;
            let field = json_lookup(&value, "chosen option label")?;
            match field {
                serde_json::Value::String(s) => find_label_in_field(s),
                other => find_label_in_field(&other.to_string()),
            }
        }
        ResponseFormat::Markdown => {
            let section = markdown_section(text, "Chosen Option")?;
            find_label_in_field(&section)
        }
        ResponseFormat::NumberedList => {
            let items = numbered_items(text);
            let field = numbered_item(&items, "chosen option label")
                .or_else(|| numbered_item(&items, "chosen option"))?;
            find_label_in_field(field)
        }
    }
}

static KEY_OPTION: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r#"(?i)["']?chosen[ _]option[ _]label["']?\s*[:=]\s*["']?\s*\(?([A-Da-d])\b"#)
        .unwrap()
});
static KEYWORD_OPTION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(answer|option|choice)\b").unwrap());
static AFTER_KEYWORD: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r#"(?i)^\s*(?:label\s*:?\s*)?(?:is\s+|was\s+|:\s*|=\s*|-\s*)?(?:the\s+|clearly\s+|most\s+|likely\s+|probably\s+|definitely\s+|correct\s+|best\s+|option\s+|choice\s+|answer\s+|letter\s+)*["'(]?([A-Da-d])\b"#,
    )
    .unwrap()
});
static PAREN_LETTER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\(([A-Da-d])\)").unwrap());
static QUOTED_LETTER: Lazy<Regex> = Lazy::new(|| Regex::new(r#"["']([A-Da-d])["']"#).unwrap());
static STANDALONE_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^\s*\(?([A-D])\)?[.:]?\s*$").unwrap());

/// A lowercase captured letter is only accepted when it ends a clause;
/// otherwise it is almost certainly the article "a" or ordinary prose.
fn accept_letter(text: &str, capture: regex::Match<'_>) -> Option<Label> {
    let letter = capture.as_str().chars().next().unwrap();
    if letter.is_ascii_uppercase() {
        return Label::from_char(letter);
    }
    let rest = text[capture.end()..]
        .chars()
        .find(|c| !c.is_whitespace() || *c == '\n');
    match rest {
        None => Label::from_char(letter),
        Some('\n') => Label::from_char(letter),
        Some(c) if c.is_alphanumeric() => None,
        Some(_) => Label::from_char(letter),
    }
}

/// Stage 2: relaxed patterns anywhere in the text. The last match wins; the
/// conclusion of a response is terminal, restatements come earlier.
fn option_stage2(text: &str) -> Option<Label> {
    if let Some(caps) = KEY_OPTION.captures(text) {
        if let Some(label) = Label::from_char(caps[1].chars().next().unwrap()) {
            return Some(label);
        }
    }
    let mut keyword_hit = None;
    for keyword in KEYWORD_OPTION.find_iter(text) {
        let rest = &text[keyword.end()..];
        if let Some(caps) = AFTER_KEYWORD.captures(rest) {
            if let Some(label) = accept_letter(rest, caps.get(1).unwrap()) {
                keyword_hit = Some(label);
            }
        }
    }
    if keyword_hit.is_some() {
        return keyword_hit;
    }
    let mut mark_hit = None;
    for caps in PAREN_LETTER
        .captures_iter(text)
        .chain(QUOTED_LETTER.captures_iter(text))
    {
        if let Some(label) = Label::from_char(caps[1].chars().next().unwrap()) {
            mark_hit = Some(label);
        }
    }
    if mark_hit.is_some() {
        return mark_hit;
    }
    STANDALONE_LINE
        .captures_iter(text)
        .last()
        .and_then(|c| Label::from_char(c[1].chars().next().unwrap()))
}

fn extract_option_traced(text: &str, config: &GenerationConfig) -> (Option<Label>, Stage) {
    if let Some(label) = option_stage1(text, config) {
        return (Some(label), Stage::OptionField);
    }
    match option_stage2(text) {
        Some(label) => (Some(label), Stage::OptionRelaxed),
        None => (None, Stage::OptionMissing),
    }
}

/// Extract the chosen option label, if any.
pub fn extract_option(text: &str, config: &GenerationConfig) -> Option<Label> {
    extract_option_traced(text, config).0
}

/// Case/punctuation-insensitive substring match against canonical domain
/// names and aliases; the earliest (then longest) match wins.
pub fn extract_domain(text: &str) -> Option<DomainTag> {
    let haystack = format!(" {} ", normalize_match_key(text));
    let mut best: Option<(usize, usize, DomainTag)> = None;
    for tag in DomainTag::ALL {
        for name in std::iter::once(tag.canonical_name()).chain(tag.aliases().iter().copied()) {
            let needle = format!(" {} ", normalize_match_key(name));
            if let Some(pos) = haystack.find(&needle) {
                let candidate = (pos, usize::MAX - needle.len(), tag);
                if best.is_none_or(|b| (candidate.0, candidate.1) < (b.0, b.1)) {
                    best = Some(candidate);
                }
            }
        }
    }
    best.map(|(_, _, tag)| tag)
}

const IRAC_KEYS: [&str; 4] = [
    "legal concept",
    "fact analysis",
    "rule application",
    "legal conclusion",
];

fn json_explanation(value: &serde_json::Value) -> Option<String> {
    match json_lookup(value, "explanation")? {
        serde_json::Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        serde_json::Value::Object(_) => {
            let nested = json_lookup(value, "explanation").unwrap();
            let mut parts = Vec::new();
            for key in IRAC_KEYS {
                if let Some(serde_json::Value::String(s)) = json_lookup(nested, key) {
                    if !s.trim().is_empty() {
                        parts.push(s.clone());
                    }
                }
            }
            if parts.is_empty() {
                if let Some(obj) = nested.as_object() {
                    for val in obj.values() {
                        if let serde_json::Value::String(s) = val {
                            if !s.trim().is_empty() {
                                parts.push(s.clone());
                            }
                        }
                    }
                }
            }
            (!parts.is_empty()).then(|| parts.join("\n\n"))
        }
        _ => None,
    }
}

static KEY_EXPLANATION_SLICE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r#"(?is)["']explanation["']\s*:\s*(.*?)(?:,?\s*["']chosen[ _]option[ _]label["']|\s*\}\s*$|$)"#)
        .unwrap()
});

fn clean_json_fragment(fragment: &str) -> String {
    fragment
        .trim()
        .trim_start_matches(['{', '"', '\''])
        .trim_end_matches([',', '}', '"', '\''])
        .trim()
        .to_string()
}

fn explanation_stage1(text: &str, config: &GenerationConfig) -> Option<String> {
    match config.response_format {
        ResponseFormat::Json => {
            if let Some(obj) = first_json_object(text) {
                if let Ok(value) = serde_json::from_str::<serde_json::Value>(obj) {
                    if let Some(explanation) = json_explanation(&value) {
                        return Some(explanation);
                    }
                }
            }
            // JSON that no longer parses: slice out the raw field value
            let caps = KEY_EXPLANATION_SLICE.captures(text)?;
            let cleaned = clean_json_fragment(&caps[1]);
            (!cleaned.is_empty()).then_some(cleaned)
        }
        ResponseFormat::Markdown => {
            let section = markdown_section(text, "Explanation")?;
            let without_subheadings: String = section
                .lines()
                .filter(|line| !line.trim_start().starts_with("###"))
                .collect::<Vec<_>>()
                .join("\n");
            let cleaned = collapse_blank_lines(&without_subheadings);
            (!cleaned.is_empty()).then_some(cleaned)
        }
        ResponseFormat::NumberedList => {
            let items = numbered_items(text);
            let mut parts = Vec::new();
            match config.explanation_type {
                ExplanationType::Structured => {
                    for key in IRAC_KEYS {
                        if let Some(content) = numbered_item(&items, key) {
                            if !content.is_empty() {
                                parts.push(content.to_string());
                            }
                        }
                    }
                    if parts.is_empty() {
                        if let Some(content) = numbered_item(&items, "explanation") {
                            if !content.is_empty() {
                                parts.push(content.to_string());
                            }
                        }
                    }
                }
                ExplanationType::Unstructured => {
                    if let Some(content) = numbered_item(&items, "explanation") {
                        if !content.is_empty() {
                            parts.push(content.to_string());
                        }
                    }
                    if parts.is_empty() {
                        for key in IRAC_KEYS {
                            if let Some(content) = numbered_item(&items, key) {
                                if !content.is_empty() {
                                    parts.push(content.to_string());
                                }
                            }
                        }
                    }
                }
            }
            (!parts.is_empty()).then(|| parts.join("\n\n"))
        }
    }
}

fn collapse_blank_lines(text: &str) -> String {
    let mut out = Vec::new();
    let mut last_blank = true;
    for line in text.lines() {
        let blank = line.trim().is_empty();
        if blank && last_blank {
            continue;
        }
        out.push(line);
        last_blank = blank;
    }
    while out.last().is_some_and(|l| l.trim().is_empty()) {
        out.pop();
    }
    out.join("\n").trim().to_string()
}

static FIELD_LINE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r#"(?i)^\s*(?:\d+[.)]\s*)?(?:#{1,6}\s*)?["']?(?:chosen[ _]domain|chosen[ _]option(?:[ _]label)?|domain)["']?\s*[:\-]?"#,
    )
    .unwrap()
});
static ANSWER_LINE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r#"(?i)^\s*\(?(?:the\s+)?(?:correct\s+)?(?:answer|option|choice)\b[^\n]{0,40}$"#)
        .unwrap()
});

/// Stage 2: residual prose once domain/option field lines and structural
/// noise are removed; accepted when at least 20 characters remain.
fn explanation_stage2(text: &str) -> Option<String> {
    let mut kept = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if FIELD_LINE.is_match(line) && trimmed.len() <= 120 {
            continue;
        }
        if ANSWER_LINE.is_match(line) {
            continue;
        }
        if STANDALONE_LINE.is_match(line) {
            continue;
        }
        if matches!(trimmed, "{" | "}" | "```" | "---") {
            continue;
        }
        kept.push(trimmed);
    }
    let residual = kept.join("\n");
    let residual = residual.trim();
    (residual.chars().count() >= 20).then(|| residual.to_string())
}

fn extract_explanation_traced(text: &str, config: &GenerationConfig) -> (Option<String>, Stage) {
    if let Some(explanation) = explanation_stage1(text, config) {
        return (Some(explanation), Stage::ExplanationField);
    }
    match explanation_stage2(text) {
        Some(explanation) => (Some(explanation), Stage::ExplanationResidual),
        None => (None, Stage::ExplanationMissing),
    }
}

/// Extract the explanation text, if any.
pub fn extract_explanation(text: &str, config: &GenerationConfig) -> Option<String> {
    extract_explanation_traced(text, config).0
}

/// Full pipeline: echo strip, fictitious-question truncation, then field
/// extraction. Total over arbitrary input; flags and a stage trace record
/// what happened.
pub fn parse_response(
    raw: &str,
    config: &GenerationConfig,
    rendered_system: Option<&str>,
) -> ParsedResponse {
    parse_response_with_markers(raw, config, rendered_system, &DEFAULT_FICTITIOUS_MARKERS)
}

/// As [`parse_response`], with a caller-supplied fictitious-question marker set.
pub fn parse_response_with_markers(
    raw: &str,
    config: &GenerationConfig,
    rendered_system: Option<&str>,
    markers: &[&str],
) -> ParsedResponse {
    let mut trace = Vec::new();

    let stripped = strip_prompt_echo(raw, rendered_system);
    if stripped != raw {
        trace.push(Stage::EchoStripped);
    }

    let (text, outcome) = truncate_fictitious_inner(&stripped, markers);
    match outcome {
        CutOutcome::Cut => trace.push(Stage::FictitiousTruncated),
        CutOutcome::Suppressed => trace.push(Stage::FictitiousCutSuppressed),
        CutOutcome::NotFound => {}
    }

    let domain = extract_domain(text);
    trace.push(if domain.is_some() {
        Stage::DomainMatched
    } else {
        Stage::DomainMissing
    });

    let (option, option_stage) = extract_option_traced(text, config);
    trace.push(option_stage);

    let (explanation, explanation_stage) = extract_explanation_traced(text, config);
    trace.push(explanation_stage);

    let status = ParseStatus {
        malformed_label: option.is_none(),
        malformed_explanation: explanation.is_none(),
    };
    ParsedResponse {
        domain,
        option,
        explanation,
        status,
        recovery_trace: trace,
    }
}

/// One annotated golden-corpus case, as stored line-delimited by the test
/// suite: raw text, config, expected fields, expected flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub raw_text: String,
    pub config: GenerationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_system: Option<String>,
    pub expected_domain: Option<String>,
    pub expected_option: Option<String>,
    pub expected_flags: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::record_custom;
    use crate::promptgen::{serialize_target, system_prompt, PromptType, ResponseType};
    use proptest::prelude::*;

    fn config(response_format: ResponseFormat, response_type: ResponseType) -> GenerationConfig {
        GenerationConfig {
            prompt_type: PromptType::ZeroShot,
            explanation_type: ExplanationType::Unstructured,
            response_type,
            response_format,
            temperature: 0.0,
            seed: 1,
            max_tokens: 512,
        }
    }

    #[test]
    fn echo_strip_removes_system_prefix() {
        let system = "Respond in the STRICT format.\n\n{\n\t\"x\"\n}";
        let answer = "{\"chosen_option_label\": \"A\"}";
        let raw = format!("{system}\n{answer}");
        assert_eq!(strip_prompt_echo(&raw, Some(system)), answer);
    }

    #[test]
    fn echo_strip_tolerates_interior_whitespace_changes() {
        let system = "Answer the following question. Provide the information:";
        let raw = "Answer  the following\nquestion. Provide the  information: The residual text.";
        assert_eq!(strip_prompt_echo(raw, Some(system)), "The residual text.");
    }

    #[test]
    fn echo_strip_is_identity_without_rendered_system() {
        let raw = "anything at all";
        assert_eq!(strip_prompt_echo(raw, None), raw);
        assert_eq!(strip_prompt_echo(raw, Some("")), raw);
        assert_eq!(strip_prompt_echo(raw, Some("different prefix")), raw);
    }

    #[test]
    fn fictitious_truncation_cuts_at_earliest_marker() {
        let raw = "The answer is (C).\n*Question: A man buys a horse...\nQuestion: another";
        assert_eq!(truncate_fictitious(raw), "The answer is (C).");
    }

    #[test]
    fn fictitious_truncation_without_marker_is_identity() {
        let raw = "No markers in here.";
        assert_eq!(truncate_fictitious(raw), raw);
    }

    #[test]
    fn fictitious_cut_that_would_empty_the_text_is_suppressed() {
        let raw = "\nQuestion: only a question, no answer before it";
        assert_eq!(truncate_fictitious(raw), raw);
        let parsed = parse_response(
            raw,
            &config(ResponseFormat::Markdown, ResponseType::FactFirst),
            None,
        );
        assert!(parsed
            .recovery_trace
            .contains(&Stage::FictitiousCutSuppressed));
    }

    #[test]
    fn option_from_strict_json() {
        let cfg = config(ResponseFormat::Json, ResponseType::FactFirst);
        let text = r#"{"chosen_domain": "Torts", "explanation": "Because of the rule.", "chosen_option_label": "A"}"#;
        assert_eq!(extract_option(text, &cfg), Some(Label::A));
    }

    #[test]
    fn option_from_numbered_item_with_parentheses() {
        let cfg = config(ResponseFormat::NumberedList, ResponseType::FactFirst);
        let text = "1. Chosen Domain: Torts\n2. Explanation: The rule controls here entirely.\n3. Chosen Option Label: (B)";
        assert_eq!(extract_option(text, &cfg), Some(Label::B));
    }

    #[test]
    fn option_from_free_prose_conclusion() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        let text = "Considering the facts, the statute of frauds does not apply, so the answer is clearly option d.";
        assert_eq!(extract_option(text, &cfg), Some(Label::D));
    }

    #[test]
    fn article_a_is_not_mistaken_for_an_option() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        let text = "The best option is a claim in negligence, though none of this names a letter.";
        assert_eq!(extract_option(text, &cfg), None);
    }

    #[test]
    fn last_relaxed_match_wins_in_free_text() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        let text =
            "Option B restates the premise. But weighing everything, the correct choice is C.";
        assert_eq!(extract_option(text, &cfg), Some(Label::C));
    }

    #[test]
    fn standalone_letter_line_is_found() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        let text = "## Chosen Option\nB\n";
        assert_eq!(extract_option(text, &cfg), Some(Label::B));
        let free = "Some reasoning first.\n\n(C)\n";
        assert_eq!(extract_option(free, &cfg), Some(Label::C));
    }

    #[test]
    fn domain_extraction_handles_aliases_and_position() {
        assert_eq!(
            extract_domain("## Domain\nConstitutional Law"),
            Some(DomainTag::ConstitutionalLaw)
        );
        assert_eq!(
            extract_domain("criminal law and procedure"),
            Some(DomainTag::CriminalLaw)
        );
        assert_eq!(extract_domain("no legal area here"), None);
        // first match by position wins
        assert_eq!(
            extract_domain("Chosen Domain: Torts. The contracts angle is secondary."),
            Some(DomainTag::Torts)
        );
    }

    #[test]
    fn explanation_from_markdown_structured_sections() {
        let cfg = GenerationConfig {
            explanation_type: ExplanationType::Structured,
            ..config(ResponseFormat::Markdown, ResponseType::FactFirst)
        };
        let record = record_custom(
            "r1",
            DomainTag::Torts,
            "Body of the question?",
            Label::A,
            true,
        );
        let gold = serialize_target(&cfg, &record).unwrap();
        let explanation = extract_explanation(&gold, &cfg).unwrap();
        let irac = record.structured_explanation.unwrap();
        for part in [
            &irac.legal_concept,
            &irac.fact_analysis,
            &irac.rule_application,
            &irac.legal_conclusion,
        ] {
            assert!(explanation.contains(part.as_str()), "missing {part}");
        }
        assert!(!explanation.contains("###"));
    }

    #[test]
    fn option_only_reply_has_no_explanation() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        assert_eq!(extract_explanation("Answer: C", &cfg), None);
    }

    #[test]
    fn residual_prose_with_trailing_answer_is_captured() {
        let cfg = config(ResponseFormat::Json, ResponseType::FactFirst);
        let text = "The recited facts establish a bailment, and the bailee's duty was breached when the goods were left unattended.\nAnswer: C";
        let parsed = parse_response(text, &cfg, None);
        assert_eq!(parsed.option, Some(Label::C));
        let explanation = parsed.explanation.unwrap();
        assert!(explanation.contains("bailment"));
        assert!(!explanation.contains("Answer:"));
        assert!(parsed.recovery_trace.contains(&Stage::ExplanationResidual));
    }

    #[test]
    fn gold_round_trip_all_configs() {
        let record = record_custom(
            "rt-1",
            DomainTag::CivilProcedure,
            "A filing deadline passes. Which of the following is most accurate?",
            Label::C,
            true,
        );
        let mut checked = 0;
        for cell in GenerationConfig::matrix(0.0, 7, 512) {
            let gold = serialize_target(&cell, &record).unwrap();
            let parsed = parse_response(&gold, &cell, Some(&system_prompt(&cell)));
            assert!(
                parsed.status.ok(),
                "cell {} flags {:?}",
                cell.short_code(),
                parsed.status
            );
            assert_eq!(parsed.option, Some(Label::C), "cell {}", cell.short_code());
            assert_eq!(
                parsed.domain,
                Some(DomainTag::CivilProcedure),
                "cell {}",
                cell.short_code()
            );
            checked += 1;
        }
        assert_eq!(checked, 24);
    }

    #[test]
    fn loop_repetition_fact_first_sets_malformed_label_only() {
        let cfg = config(ResponseFormat::Markdown, ResponseType::FactFirst);
        let mut text = String::from(
            "## Domain\nTorts\n\n## Explanation\nThe duty question controls the case. The duty question controls the case.",
        );
        for _ in 0..30 {
            text.push_str(" The duty question controls the case.");
        }
        let parsed = parse_response(&text, &cfg, None);
        assert_eq!(parsed.option, None);
        assert!(parsed.status.malformed_label);
        assert!(!parsed.status.malformed_explanation);
        assert_eq!(parsed.domain, Some(DomainTag::Torts));
    }

    #[test]
    fn parse_never_panics_on_noise() {
        let cfg = config(ResponseFormat::Json, ResponseType::FactFirst);
        for raw in [
            "",
            "{",
            "}{}{",
            "\u{0}\u{1}\u{2}",
            "## ## ##",
            "1. 2. 3.",
            "\"\"\"",
            "{\"explanation\": \"unterminated",
        ] {
            let _ = parse_response(raw, &cfg, Some("system"));
        }
        // one large input
        let big = "x".repeat(1 << 20);
        let parsed = parse_response(&big, &cfg, None);
        assert!(!parsed.recovery_trace.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parse_is_total_on_arbitrary_text(raw in ".{0,400}") {
            for format in ResponseFormat::ALL {
                let cfg = config(format, ResponseType::FactFirst);
                let parsed = parse_response(&raw, &cfg, Some("a short system prompt"));
                prop_assert!(!parsed.recovery_trace.is_empty());
                prop_assert_eq!(parsed.status.malformed_label, parsed.option.is_none());
                prop_assert_eq!(parsed.status.malformed_explanation, parsed.explanation.is_none());
            }
        }

        #[test]
        fn stage1_success_implies_full_pipeline_agreement(seed in 0u64..500) {
            // inputs that parse ok via the format-aware stage alone must parse
            // identically through the full pipeline
            let record = record_custom(
                &format!("p-{seed}"),
                DomainTag::ALL[(seed % 7) as usize],
                "A question body for the leniency property?",
                Label::ALL[(seed % 4) as usize],
                true,
            );
            for cell in GenerationConfig::matrix(0.0, seed, 256) {
                let gold = serialize_target(&cell, &record).unwrap();
                let stage1 = option_stage1(&gold, &cell);
                prop_assert!(stage1.is_some());
                prop_assert_eq!(extract_option(&gold, &cell), stage1);
            }
        }
    }
}
