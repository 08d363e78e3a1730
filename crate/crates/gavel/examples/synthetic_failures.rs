//! The hallucination taxonomy against the response parser: repetition loops,
//! fictitious follow-up questions, prompt echoes, and truncation, in both
//! fact-first and answer-first orders.
//!
//! ```bash
//! cargo run -p gavel --example synthetic_failures
//! ```

use gavel::client::{synthetic_complete, CompletionRequest, SyntheticMode};
use gavel::fixtures::record_custom;
use gavel::parse::parse_response;
use gavel::promptgen::{serialize_target, system_prompt};
use gavel::{
    DomainTag, ExplanationType, GenerationConfig, Label, PromptType, ResponseFormat, ResponseType,
};

fn main() -> anyhow::Result<()> {
    let record = record_custom(
        "h-1",
        DomainTag::Torts,
        "A visitor trips over an unmarked step. Which of the following is most accurate?",
        Label::B,
        true,
    );

    for response_type in [ResponseType::FactFirst, ResponseType::AnswerFirst] {
        let config = GenerationConfig {
            prompt_type: PromptType::ZeroShot,
            explanation_type: ExplanationType::Unstructured,
            response_type,
            response_format: ResponseFormat::Markdown,
            temperature: 0.0,
            seed: 1,
            max_tokens: 128,
        };
        let system = system_prompt(&config);
        let gold = serialize_target(&config, &record)?;
        let request = CompletionRequest {
            system_text: system.clone(),
            user_text: "rendered question goes here".to_string(),
            temperature: 0.0,
            seed: 1,
            max_tokens: 128,
            stop_sequences: Vec::new(),
        };

        println!("=== {} ===", config.short_code());
        for mode in SyntheticMode::ALL {
            let result = synthetic_complete(mode, &request, Some(&gold))?;
            let parsed = parse_response(&result.text, &config, Some(&system));
            let preview: String = result.text.chars().take(72).collect();
            println!(
                "{:<20} option={:<4} flags=[label:{} expl:{}] trace={:?}",
                mode.as_str(),
                parsed
                    .option
                    .map(|l| l.as_str().to_string())
                    .unwrap_or_else(|| "-".to_string()),
                parsed.status.malformed_label,
                parsed.status.malformed_explanation,
                parsed
                    .recovery_trace
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
            );
            println!("    text: {}...", preview.replace('\n', "\\n"));
        }
        println!();
    }
    Ok(())
}
