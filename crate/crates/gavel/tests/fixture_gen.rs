//! Regenerates the committed fixture files under `tests/fixtures/` from the
//! deterministic synthetic builders. Run explicitly after changing prompt
//! templates or synthetic modes:
//!
//! ```bash
//! cargo test -p gavel --test fixture_gen -- --ignored
//! ```
//!
//! Every generated golden case is parsed back and checked against its own
//! annotation before anything is written, so a committed corpus is always
//! self-consistent at generation time.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gavel::client::{
    request_fingerprint, synthetic_complete, CompletionRequest, ReplayStore, SyntheticMode,
};
use gavel::corpus::{save_corpus, Corpus, DomainTag, Label, SplitTag};
use gavel::fixtures::{exemplar_set, synthetic_corpus};
use gavel::parse::{parse_response, GoldenCase};
use gavel::promptgen::{
    render_inference_prompt, serialize_target, system_prompt, ExplanationType, GenerationConfig,
    PromptType, ResponseFormat, ResponseType,
};

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Test-set shaped per-domain counts.
const TEST_COUNTS: [(DomainTag, usize); 7] = [
    (DomainTag::CriminalLaw, 27),
    (DomainTag::Evidence, 30),
    (DomainTag::Contracts, 29),
    (DomainTag::Torts, 27),
    (DomainTag::ConstitutionalLaw, 29),
    (DomainTag::CivilProcedure, 29),
    (DomainTag::RealProperty, 29),
];

const REPLAY_MODEL: &str = "replay-model";
const MAX_TOKENS: u32 = 256;

fn mini_corpus() -> Corpus {
    let counts: Vec<(DomainTag, usize)> = DomainTag::ALL.into_iter().map(|d| (d, 2)).collect();
    synthetic_corpus("mini", &counts, SplitTag::Test, true)
}

fn exemplar_corpus() -> Corpus {
    Corpus {
        records: exemplar_set(true).into_values().collect(),
        split_tag: SplitTag::Train,
    }
}

fn request_for(
    config: &GenerationConfig,
    record: &gavel::QuestionRecord,
    exemplars: &BTreeMap<DomainTag, gavel::QuestionRecord>,
) -> (CompletionRequest, String) {
    let exemplar = match config.prompt_type {
        PromptType::ZeroShot => None,
        PromptType::FewShot => Some(&exemplars[&record.domain]),
    };
    let prompt =
        render_inference_prompt(config, &gavel::ChatTemplateSpec::llama3(), record, exemplar)
            .expect("fixture prompts always render");
    let request = CompletionRequest {
        system_text: prompt.system_text.clone(),
        user_text: prompt.user_text,
        temperature: config.temperature,
        seed: config.seed,
        max_tokens: config.max_tokens,
        stop_sequences: vec!["<|eot_id|>".to_string()],
    };
    (request, prompt.system_text)
}

/// Mode schedule for the 200-question replay store: mostly faithful with a
/// deterministic sprinkle of each failure mode.
fn mode_for_index(i: usize) -> SyntheticMode {
    if i % 7 == 3 {
        SyntheticMode::LoopRepetition
    } else if i % 11 == 5 {
        SyntheticMode::FictitiousQuestion
    } else if i % 13 == 7 {
        SyntheticMode::PromptEcho
    } else if i % 17 == 11 {
        SyntheticMode::Truncated
    } else {
        SyntheticMode::Faithful
    }
}

fn replay_cells() -> [GenerationConfig; 2] {
    [
        GenerationConfig {
            prompt_type: PromptType::ZeroShot,
            explanation_type: ExplanationType::Unstructured,
            response_type: ResponseType::FactFirst,
            response_format: ResponseFormat::Json,
            temperature: 0.0,
            seed: 1,
            max_tokens: MAX_TOKENS,
        },
        GenerationConfig {
            prompt_type: PromptType::ZeroShot,
            explanation_type: ExplanationType::Structured,
            response_type: ResponseType::AnswerFirst,
            response_format: ResponseFormat::Markdown,
            temperature: 0.0,
            seed: 1,
            max_tokens: MAX_TOKENS,
        },
    ]
}

fn expected_for(mode: SyntheticMode, config: &GenerationConfig) -> (bool, Vec<String>) {
    // (option extractable, flags)
    let fact_first = config.response_type == ResponseType::FactFirst;
    match mode {
        SyntheticMode::Faithful | SyntheticMode::FictitiousQuestion | SyntheticMode::PromptEcho => {
            (true, Vec::new())
        }
        SyntheticMode::LoopRepetition | SyntheticMode::Truncated => {
            if fact_first {
                (false, vec!["malformed_label".to_string()])
            } else {
                (true, Vec::new())
            }
        }
    }
}

fn handwritten_cases() -> Vec<GoldenCase> {
    let nl_un_ff = GenerationConfig {
        prompt_type: PromptType::ZeroShot,
        explanation_type: ExplanationType::Unstructured,
        response_type: ResponseType::FactFirst,
        response_format: ResponseFormat::NumberedList,
        temperature: 0.0,
        seed: 1,
        max_tokens: MAX_TOKENS,
    };
    let md_un_ff = GenerationConfig {
        response_format: ResponseFormat::Markdown,
        ..nl_un_ff.clone()
    };
    let json_un_ff = GenerationConfig {
        response_format: ResponseFormat::Json,
        ..nl_un_ff.clone()
    };

    let mut cases = Vec::new();
    cases.push(GoldenCase {
        name: "hand-parenthesized-label-item".into(),
        raw_text: "1. Chosen Domain: Torts\n2. Explanation: The statute controls this outcome entirely.\n3. Chosen Option Label: (B)".into(),
        config: nl_un_ff.clone(),
        rendered_system: Some(system_prompt(&nl_un_ff)),
        expected_domain: Some("Torts".into()),
        expected_option: Some("B".into()),
        expected_flags: Vec::new(),
    });
    cases.push(GoldenCase {
        name: "hand-prose-conclusion-lowercase".into(),
        raw_text: "Considering the Evidence rules, the hearsay exception covers the excited utterance here, so the answer is clearly option d.".into(),
        config: md_un_ff.clone(),
        rendered_system: Some(system_prompt(&md_un_ff)),
        expected_domain: Some("Evidence".into()),
        expected_option: Some("D".into()),
        expected_flags: Vec::new(),
    });
    {
        let gold = "{\"chosen_domain\": \"Contracts\", \"explanation\": \"The offer lapsed before acceptance, so no contract formed on these facts.\", \"chosen_option_label\": \"C\"}";
        let system = system_prompt(&json_un_ff);
        let echoed = format!("{}\n{gold}", system.replace(", ", ",  "));
        cases.push(GoldenCase {
            name: "hand-echo-with-changed-whitespace".into(),
            raw_text: echoed,
            config: json_un_ff.clone(),
            rendered_system: Some(system),
            expected_domain: Some("Contracts".into()),
            expected_option: Some("C".into()),
            expected_flags: Vec::new(),
        });
    }
    cases.push(GoldenCase {
        name: "hand-suppressed-first-line-cut".into(),
        raw_text: "\nQuestion: a restatement of the stem without any answer content.".into(),
        config: md_un_ff.clone(),
        rendered_system: Some(system_prompt(&md_un_ff)),
        expected_domain: None,
        expected_option: None,
        expected_flags: vec!["malformed_label".into()],
    });
    cases.push(GoldenCase {
        name: "hand-quoted-letter-only".into(),
        raw_text: "The correct choice is \"C\".".into(),
        config: md_un_ff.clone(),
        rendered_system: Some(system_prompt(&md_un_ff)),
        expected_domain: None,
        expected_option: Some("C".into()),
        expected_flags: vec!["malformed_explanation".into()],
    });
    cases.push(GoldenCase {
        name: "hand-standalone-letter-section".into(),
        raw_text: "## Domain\nCivil Procedure\n\n## Explanation\nThe filing deadline computation excludes the final holiday under the rule.\n\n## Chosen Option\n(A)".into(),
        config: md_un_ff.clone(),
        rendered_system: Some(system_prompt(&md_un_ff)),
        expected_domain: Some("Civil Procedure".into()),
        expected_option: Some("A".into()),
        expected_flags: vec![],
    });
    cases
}

fn flags_of(parsed: &gavel::parse::ParsedResponse) -> Vec<String> {
    let mut flags = Vec::new();
    if parsed.status.malformed_label {
        flags.push("malformed_label".to_string());
    }
    if parsed.status.malformed_explanation {
        flags.push("malformed_explanation".to_string());
    }
    flags
}

fn check_case(case: &GoldenCase) {
    let parsed = parse_response(
        &case.raw_text,
        &case.config,
        case.rendered_system.as_deref(),
    );
    let domain = parsed.domain.map(|d| d.canonical_name().to_string());
    let option = parsed.option.map(|l| l.as_str().to_string());
    assert_eq!(
        domain, case.expected_domain,
        "case {}: domain mismatch\nraw:\n{}",
        case.name, case.raw_text
    );
    assert_eq!(
        option, case.expected_option,
        "case {}: option mismatch\nraw:\n{}",
        case.name, case.raw_text
    );
    assert_eq!(
        flags_of(&parsed),
        case.expected_flags,
        "case {}: flags mismatch\nraw:\n{}",
        case.name,
        case.raw_text
    );
}

#[test]
#[ignore = "regenerates committed fixtures; run explicitly"]
fn regenerate_fixtures() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(&dir).unwrap();

    // corpora
    let mini = mini_corpus();
    save_corpus(&mini, dir.join("mini_corpus.jsonl")).unwrap();
    let exemplars_corpus = exemplar_corpus();
    save_corpus(&exemplars_corpus, dir.join("exemplars.jsonl")).unwrap();
    let test_200 = synthetic_corpus("t", &TEST_COUNTS, SplitTag::Test, true);
    assert_eq!(test_200.len(), 200);
    save_corpus(&test_200, dir.join("test_200.jsonl")).unwrap();

    let exemplars = exemplar_set(true);

    // 200-question replay store over two configuration cells, mixed modes
    let mut store = ReplayStore::new();
    for config in replay_cells() {
        for (i, record) in test_200.records.iter().enumerate() {
            let (request, _system) = request_for(&config, record, &exemplars);
            let gold = serialize_target(&config, record).unwrap();
            let mode = mode_for_index(i);
            let result = synthetic_complete(mode, &request, Some(&gold)).unwrap();
            store.insert(
                request_fingerprint(&request, REPLAY_MODEL),
                result.text,
                result.finish_reason,
            );
        }
    }
    store.save(dir.join("replay_200.jsonl")).unwrap();

    // faithful replay store across the full 24-cell matrix on the mini corpus
    let mut mini_store = ReplayStore::new();
    for config in GenerationConfig::matrix(0.0, 1, MAX_TOKENS) {
        for record in &mini.records {
            let (request, _system) = request_for(&config, record, &exemplars);
            let gold = serialize_target(&config, record).unwrap();
            let result =
                synthetic_complete(SyntheticMode::Faithful, &request, Some(&gold)).unwrap();
            mini_store.insert(
                request_fingerprint(&request, REPLAY_MODEL),
                result.text,
                result.finish_reason,
            );
        }
    }
    mini_store.save(dir.join("replay_mini_24.jsonl")).unwrap();

    // annotated golden parse corpus: 24 configs x 5 modes + handwritten cases
    let mut cases = Vec::new();
    let mut case_index = 0usize;
    for config in GenerationConfig::matrix(0.0, 1, MAX_TOKENS) {
        for mode in SyntheticMode::ALL {
            let record = &mini.records[case_index % mini.records.len()];
            case_index += 1;
            let (request, system) = request_for(&config, record, &exemplars);
            let gold = serialize_target(&config, record).unwrap();
            let result = synthetic_complete(mode, &request, Some(&gold)).unwrap();
            let (option_present, flags) = expected_for(mode, &config);
            cases.push(GoldenCase {
                name: format!(
                    "gen-{}-{}-{}",
                    mode.as_str(),
                    config.short_code(),
                    record.id
                ),
                raw_text: result.text,
                config: config.clone(),
                rendered_system: Some(system),
                expected_domain: Some(record.domain.canonical_name().to_string()),
                expected_option: option_present.then(|| record.correct_label.as_str().to_string()),
                expected_flags: flags,
            });
        }
    }
    cases.extend(handwritten_cases());
    assert!(
        cases.len() >= 120,
        "need at least 120 cases, got {}",
        cases.len()
    );

    // self-check before committing anything
    for case in &cases {
        check_case(case);
    }

    let mut out = String::new();
    for case in &cases {
        out.push_str(&serde_json::to_string(case).unwrap());
        out.push('\n');
    }
    std::fs::write(dir.join("golden_parses.jsonl"), out).unwrap();

    println!(
        "regenerated fixtures: mini={} exemplars={} test={} replay={} mini_store={} golden={}",
        mini.len(),
        exemplars_corpus.len(),
        test_200.len(),
        store.len(),
        mini_store.len(),
        cases.len()
    );
}

#[test]
fn fixture_inputs_are_deterministic() {
    // the generator must produce identical corpora on every call
    let a = gavel::corpus::serialize_corpus(&mini_corpus());
    let b = gavel::corpus::serialize_corpus(&mini_corpus());
    assert_eq!(a, b);
    let counts: usize = TEST_COUNTS.iter().map(|(_, n)| n).sum();
    assert_eq!(counts, 200);
    // one label schedule sanity point
    let mini = mini_corpus();
    assert_eq!(mini.records[0].correct_label, Label::A);
}
