//! Deterministic synthetic corpora for tests, examples, and offline demos.
//!
//! Nothing here touches the network. Record bodies and explanations are
//! generated text, unique per id, and deliberately avoid phrasings that the
//! response parser treats as answer markers (parenthesized single letters,
//! "the answer is ...", standalone option lines) so that synthetic responses
//! exercise exactly the failure mode they are built for.

use std::collections::BTreeMap;

use crate::corpus::{Corpus, DomainTag, Label, QuestionRecord, SplitTag};
use crate::distill::IracExplanation;

/// A minimal well-formed record. Body and texts derive from the id.
pub fn record(id: &str, domain: DomainTag, correct: Label) -> QuestionRecord {
    let body = format!(
        "A dispute reaches the court in matter {id}. The parties disagree over which rule \
         controls the outcome on these facts. Which of the following is most accurate?"
    );
    record_custom(id, domain, &body, correct, false)
}

/// A record with an explicit body, used by de-duplication tests.
pub fn record_with_body(id: &str, domain: DomainTag, body: &str) -> QuestionRecord {
    record_custom(id, domain, body, Label::A, false)
}

/// Full builder. When `structured` is set the record also carries a
/// four-field restructured explanation.
pub fn record_custom(
    id: &str,
    domain: DomainTag,
    body: &str,
    correct: Label,
    structured: bool,
) -> QuestionRecord {
    let mut options = BTreeMap::new();
    options.insert(Label::A, format!("the first stated outcome in matter {id}"));
    options.insert(
        Label::B,
        format!("the second stated outcome in matter {id}"),
    );
    options.insert(Label::C, format!("the third stated outcome in matter {id}"));
    options.insert(
        Label::D,
        format!("the fourth stated outcome in matter {id}"),
    );
    let explanation = format!(
        "The controlling rule favors the narrower reading of the statute. The remaining \
         alternatives each misstate the governing standard in matter {id}. On the recited \
         facts the stricter test applies and resolves the question."
    );
    QuestionRecord {
        id: id.to_string(),
        domain,
        body: body.to_string(),
        options,
        correct_label: correct,
        explanation,
        structured_explanation: structured.then(|| irac_for(id)),
    }
}

/// Deterministic four-field explanation for a record id.
pub fn irac_for(id: &str) -> IracExplanation {
    IracExplanation {
        legal_concept: format!("The doctrine governing matter {id} and its limiting principle."),
        fact_analysis: format!(
            "The recited facts in matter {id} establish the elements the stricter test requires."
        ),
        rule_application: format!(
            "Applying the governing standard to matter {id}, the narrower reading controls."
        ),
        legal_conclusion: format!(
            "The stricter test resolves matter {id} in favor of the stated holding."
        ),
    }
}

/// Build a corpus with the given per-domain counts. Ids are
/// `{prefix}-{domain-index}-{i}`; every body is unique.
pub fn synthetic_corpus(
    prefix: &str,
    counts: &[(DomainTag, usize)],
    split_tag: SplitTag,
    structured: bool,
) -> Corpus {
    let mut records = Vec::new();
    for (domain_index, (domain, count)) in counts.iter().enumerate() {
        for i in 0..*count {
            let id = format!("{prefix}-{domain_index}-{i}");
            let body = format!(
                "In matter {id}, a party seeks relief after a disputed event. The record \
                 shows item {i} of the {domain} pool. Which of the following is most accurate?"
            );
            let correct = Label::ALL[(i + domain_index) % 4];
            records.push(record_custom(&id, *domain, &body, correct, structured));
        }
    }
    Corpus { records, split_tag }
}

/// One exemplar per domain, suitable for few-shot prompts. Ids carry an
/// `ex-` prefix so they never collide with test corpora.
pub fn exemplar_set(structured: bool) -> BTreeMap<DomainTag, QuestionRecord> {
    DomainTag::ALL
        .into_iter()
        .enumerate()
        .map(|(i, domain)| {
            let id = format!("ex-{i}");
            let body = format!(
                "In exemplar matter {id}, the parties dispute a familiar point of {domain} \
                 law. Which of the following is most accurate?"
            );
            (
                domain,
                record_custom(&id, domain, &body, Label::ALL[i % 4], structured),
            )
        })
        .collect()
}
