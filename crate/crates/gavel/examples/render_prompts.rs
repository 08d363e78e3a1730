//! The prompt configuration matrix: system prompts per cell and a fully
//! templated few-shot inference prompt.
//!
//! ```bash
//! cargo run -p gavel --example render_prompts
//! ```

use gavel::fixtures::{exemplar_set, record_custom};
use gavel::promptgen::{render_inference_prompt, system_prompt};
use gavel::{
    ChatTemplateSpec, DomainTag, ExplanationType, GenerationConfig, Label, PromptType,
    ResponseFormat, ResponseType,
};

fn main() -> anyhow::Result<()> {
    let cells = GenerationConfig::matrix(0.0, 1, 512);
    println!("the matrix has {} cells:", cells.len());
    for cell in &cells {
        println!("  {}", cell.short_code());
    }

    let config = GenerationConfig {
        prompt_type: PromptType::ZeroShot,
        explanation_type: ExplanationType::Structured,
        response_type: ResponseType::FactFirst,
        response_format: ResponseFormat::Markdown,
        temperature: 0.0,
        seed: 1,
        max_tokens: 512,
    };
    println!(
        "\n--- system prompt ({}) ---\n{}",
        config.short_code(),
        system_prompt(&config)
    );

    // the answer-first variant only reorders the field blocks
    let answer_first = GenerationConfig {
        response_type: ResponseType::AnswerFirst,
        ..config.clone()
    };
    println!(
        "\n--- system prompt ({}) ---\n{}",
        answer_first.short_code(),
        system_prompt(&answer_first)
    );

    // a few-shot prompt embeds one worked example ahead of the test question
    let record = record_custom(
        "demo-1",
        DomainTag::Torts,
        "A visitor trips over an unmarked step in a dim hallway. Which of the following is most accurate?",
        Label::B,
        true,
    );
    let few_shot = GenerationConfig {
        prompt_type: PromptType::FewShot,
        ..config
    };
    let exemplars = exemplar_set(true);
    let prompt = render_inference_prompt(
        &few_shot,
        &ChatTemplateSpec::llama3(),
        &record,
        Some(&exemplars[&record.domain]),
    )?;
    println!(
        "\n--- full templated prompt ({}) ---\n{}",
        few_shot.short_code(),
        prompt.full_text
    );
    Ok(())
}
