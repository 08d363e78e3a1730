//! SFT dataset export: per-domain sampling, gold-target serialization, and
//! chat-dialect completion pairs.
//!
//! ```bash
//! cargo run -p gavel --example export_sft
//! ```

use gavel::corpus::sample_per_domain;
use gavel::fixtures::{exemplar_set, synthetic_corpus};
use gavel::promptgen::export_sft_dataset;
use gavel::{
    ChatTemplateSpec, DomainTag, ExplanationType, GenerationConfig, PromptType, ResponseFormat,
    ResponseType, SplitTag,
};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let train = synthetic_corpus(
        "train",
        &[
            (DomainTag::CriminalLaw, 40),
            (DomainTag::Evidence, 35),
            (DomainTag::Contracts, 50),
            (DomainTag::Torts, 12),
            (DomainTag::ConstitutionalLaw, 30),
            (DomainTag::CivilProcedure, 14),
            (DomainTag::RealProperty, 33),
        ],
        SplitTag::Train,
        true,
    );

    // ten samples per domain, capped at availability
    let sampled = sample_per_domain(&train, 10, 42);
    println!("sampled {} records (10 per domain, capped)", sampled.len());

    let zero_shot_json = GenerationConfig {
        prompt_type: PromptType::ZeroShot,
        explanation_type: ExplanationType::Unstructured,
        response_type: ResponseType::FactFirst,
        response_format: ResponseFormat::Json,
        temperature: 0.0,
        seed: 42,
        max_tokens: 512,
    };
    let path = dir.path().join("sft_zero_shot_json.jsonl");
    let written = export_sft_dataset(
        &sampled,
        &zero_shot_json,
        &ChatTemplateSpec::llama2(),
        None,
        &path,
    )?;
    println!("wrote {written} zero-shot JSON pairs (llama2 dialect)");

    let few_shot_markdown = GenerationConfig {
        prompt_type: PromptType::FewShot,
        explanation_type: ExplanationType::Structured,
        response_type: ResponseType::AnswerFirst,
        response_format: ResponseFormat::Markdown,
        ..zero_shot_json
    };
    let exemplars = exemplar_set(true);
    let path2 = dir.path().join("sft_few_shot_markdown.jsonl");
    let written = export_sft_dataset(
        &sampled,
        &few_shot_markdown,
        &ChatTemplateSpec::llama3(),
        Some(&exemplars),
        &path2,
    )?;
    println!("wrote {written} few-shot markdown pairs (llama3 dialect)");

    let text = std::fs::read_to_string(&path)?;
    let sample: serde_json::Value = serde_json::from_str(text.lines().next().unwrap())?;
    println!("\n--- one training pair ---");
    println!("prompt:\n{}", sample["prompt"].as_str().unwrap());
    println!("completion:\n{}", sample["completion"].as_str().unwrap());
    Ok(())
}
