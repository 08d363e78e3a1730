//! Explanation restructuring with a teacher backend: prompt construction,
//! structural parsing, retries, and failure accounting. Runs offline against
//! a scripted replay teacher.
//!
//! ```bash
//! cargo run -p gavel --example distill_explanations
//! ```

use gavel::client::{request_fingerprint, Backend, CompletionRequest, FinishReason, ReplayStore};
use gavel::distill::{
    build_distill_prompt, distill_corpus, parse_irac, DistillOptions, DISTILL_SYSTEM_PROMPT,
};
use gavel::fixtures::{irac_for, synthetic_corpus};
use gavel::{DomainTag, SplitTag};

fn main() -> anyhow::Result<()> {
    let corpus = synthetic_corpus(
        "d",
        &[(DomainTag::ConstitutionalLaw, 6)],
        SplitTag::Train,
        false,
    );
    let exemplar_pair = (
        "States may not protect local institutions from out-of-state competition; \
         the statute does exactly that."
            .to_string(),
        irac_for("exemplar"),
    );
    let options = DistillOptions {
        max_attempts: 2,
        workers: 2,
        ..DistillOptions::default()
    };

    // script a teacher: record 2 replies with headings in bold markdown,
    // record 4 never produces labeled sections, everything else replies with
    // plain labeled headings
    let mut store = ReplayStore::new();
    for (i, record) in corpus.records.iter().enumerate() {
        let prompt = build_distill_prompt(record, &exemplar_pair)?;
        for attempt in 0..u64::from(options.max_attempts) {
            let request = CompletionRequest {
                system_text: DISTILL_SYSTEM_PROMPT.to_string(),
                user_text: prompt.clone(),
                temperature: options.temperature,
                seed: options.seed.wrapping_add(attempt),
                max_tokens: options.max_tokens,
                stop_sequences: Vec::new(),
            };
            let irac = irac_for(&record.id);
            let reply = match i {
                2 => format!(
                    "**Legal Concept**: {}\n**Fact Analysis**: {}\n**Rule Application**: {}\n**Legal Conclusion**: {}",
                    irac.legal_concept, irac.fact_analysis, irac.rule_application, irac.legal_conclusion
                ),
                4 => "I cannot structure this one, here is prose instead.".to_string(),
                _ => irac.heading_form(),
            };
            store.insert(
                request_fingerprint(&request, "teacher-70b"),
                reply,
                FinishReason::Stop,
            );
        }
    }

    let backend = Backend::replay("teacher-70b", store);
    let (distilled, failures) = distill_corpus(&backend, &corpus, &exemplar_pair, &options)?;

    for record in &distilled.records {
        match &record.structured_explanation {
            Some(irac) => println!(
                "{}: structured (concept: {})",
                record.id, irac.legal_concept
            ),
            None => println!("{}: kept raw explanation", record.id),
        }
    }
    println!("\nfailure report:");
    for failure in &failures {
        println!(
            "  {} after {} attempts: {}",
            failure.id, failure.attempts, failure.reason
        );
    }

    // the structural parser also accepts object-style teacher replies
    let object_reply = r#"{"Legal_Concept": "Preemption.", "Fact_Analysis": "A state rule conflicts with a federal standard.", "Rule_Application": "The conflicting state rule must yield.", "Legal_Conclusion": "The federal standard controls."}"#;
    println!(
        "\nobject-style reply parses: {}",
        parse_irac(object_reply).is_some()
    );
    Ok(())
}
