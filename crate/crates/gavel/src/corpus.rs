//! Bar-exam question corpora: loading, validation, de-duplication,
//! per-domain sampling, and train/test leakage checks.
//!
//! The on-disk format is UTF-8 JSON, either one record per line or a single
//! array of records. Every record carries an id, a legal domain, the question
//! body, the four labeled options, the correct label, and an explanation
//! (optionally restructured, see [`crate::distill`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distill::IracExplanation;

/// The seven legal domains tested on the exam.
///
/// Declaration order is the canonical reporting order and is used for
/// deterministic per-domain iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    CriminalLaw,
    Evidence,
    Contracts,
    Torts,
    ConstitutionalLaw,
    CivilProcedure,
    RealProperty,
}

impl DomainTag {
    pub const ALL: [DomainTag; 7] = [
        DomainTag::CriminalLaw,
        DomainTag::Evidence,
        DomainTag::Contracts,
        DomainTag::Torts,
        DomainTag::ConstitutionalLaw,
        DomainTag::CivilProcedure,
        DomainTag::RealProperty,
    ];

    /// Canonical display name, used when serializing records and rendering
    /// gold responses.
    pub fn canonical_name(self) -> &'static str {
        match self {
            DomainTag::CriminalLaw => "Criminal Law",
            DomainTag::Evidence => "Evidence",
            DomainTag::Contracts => "Contracts",
            DomainTag::Torts => "Torts",
            DomainTag::ConstitutionalLaw => "Constitutional Law",
            DomainTag::CivilProcedure => "Civil Procedure",
            DomainTag::RealProperty => "Real Property",
        }
    }

    /// Closed alias table. Source documents name some domains differently
    /// ("Criminal Law and Procedure", "Contract Law", "Tort Law", bare
    /// "Property"); anything outside this table is a hard error when loading
    /// a corpus.
    pub fn aliases(self) -> &'static [&'static str] {
        match self {
            DomainTag::CriminalLaw => &["Criminal Law and Procedure"],
            DomainTag::Contracts => &["Contract Law"],
            DomainTag::Torts => &["Tort Law"],
            DomainTag::RealProperty => &["Property"],
            _ => &[],
        }
    }

    /// Parse a domain string, case- and punctuation-insensitively, against
    /// the canonical names and the closed alias table.
    pub fn parse(s: &str) -> Option<DomainTag> {
        let key = normalize_match_key(s);
        for tag in DomainTag::ALL {
            if normalize_match_key(tag.canonical_name()) == key {
                return Some(tag);
            }
            if tag.aliases().iter().any(|a| normalize_match_key(a) == key) {
                return Some(tag);
            }
        }
        None
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

/// Lowercase, map punctuation to spaces, collapse whitespace runs.
pub(crate) fn normalize_match_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// One of the four option labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    D,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::A, Label::B, Label::C, Label::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::C => "C",
            Label::D => "D",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "A" | "a" => Some(Label::A),
            "B" | "b" => Some(Label::B),
            "C" | "c" => Some(Label::C),
            "D" | "d" => Some(Label::D),
            _ => None,
        }
    }

    pub fn from_char(c: char) -> Option<Label> {
        match c.to_ascii_uppercase() {
            'A' => Some(Label::A),
            'B' => Some(Label::B),
            'C' => Some(Label::C),
            'D' => Some(Label::D),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One exam item.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRecord {
    pub id: String,
    pub domain: DomainTag,
    pub body: String,
    /// Option text per label; always exactly four entries, each non-empty.
    pub options: BTreeMap<Label, String>,
    pub correct_label: Label,
    pub explanation: String,
    pub structured_explanation: Option<IracExplanation>,
}

impl QuestionRecord {
    pub fn option_text(&self, label: Label) -> &str {
        &self.options[&label]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Train => f.write_str("train"),
            SplitTag::Test => f.write_str("test"),
        }
    }
}

/// An ordered, validated collection of records with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<QuestionRecord>,
    pub split_tag: SplitTag,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QuestionRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {id}, field {field}: {problem}")]
    Schema {
        id: String,
        field: String,
        problem: String,
    },
    #[error("{path}: line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CorpusError {
    fn schema(id: &str, field: &str, problem: impl Into<String>) -> CorpusError {
        CorpusError::Schema {
            id: id.to_string(),
            field: field.to_string(),
            problem: problem.into(),
        }
    }
}

/// Wire form of a record. Field order here fixes the serialized byte layout.
#[derive(Serialize, Deserialize)]
struct RecordOnDisk {
    id: String,
    domain: String,
    body: String,
    options: BTreeMap<String, String>,
    correct_label: String,
    explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    structured_explanation: Option<IracExplanation>,
}

impl RecordOnDisk {
    fn validate(self) -> Result<QuestionRecord, CorpusError> {
        let id = self.id;
        if id.is_empty() {
            return Err(CorpusError::schema("<unset>", "id", "missing or empty id"));
        }
        let domain = DomainTag::parse(&self.domain).ok_or_else(|| {
            CorpusError::schema(
                &id,
                "domain",
                format!("unknown domain string {:?}", self.domain),
            )
        })?;
        if self.body.trim().is_empty() {
            return Err(CorpusError::schema(&id, "body", "empty question body"));
        }
        if self.explanation.trim().is_empty() {
            return Err(CorpusError::schema(&id, "explanation", "empty explanation"));
        }
        let mut options = BTreeMap::new();
        for label in Label::ALL {
            match self.options.get(label.as_str()) {
                Some(text) if !text.trim().is_empty() => {
                    options.insert(label, text.clone());
                }
                Some(_) => {
                    return Err(CorpusError::schema(
                        &id,
                        "options",
                        format!("empty text for option {label}"),
                    ))
                }
                None => {
                    return Err(CorpusError::schema(
                        &id,
                        "options",
                        format!("missing option {label}"),
                    ))
                }
            }
        }
        for key in self.options.keys() {
            if Label::parse(key).is_none() || !matches!(key.as_str(), "A" | "B" | "C" | "D") {
                return Err(CorpusError::schema(
                    &id,
                    "options",
                    format!("unexpected option key {key:?}"),
                ));
            }
        }
        let correct_label = Label::parse(&self.correct_label).ok_or_else(|| {
            CorpusError::schema(
                &id,
                "correct_label",
                format!("label {:?} is not one of A/B/C/D", self.correct_label),
            )
        })?;
        if let Some(irac) = &self.structured_explanation {
            if let Err(field) = irac.check_fields() {
                return Err(CorpusError::schema(
                    &id,
                    "structured_explanation",
                    format!("empty field {field}"),
                ));
            }
        }
        Ok(QuestionRecord {
            id,
            domain,
            body: self.body,
            options,
            correct_label,
            explanation: self.explanation,
            structured_explanation: self.structured_explanation,
        })
    }

    fn from_record(record: &QuestionRecord) -> RecordOnDisk {
        RecordOnDisk {
            id: record.id.clone(),
            domain: record.domain.canonical_name().to_string(),
            body: record.body.clone(),
            options: record
                .options
                .iter()
                .map(|(label, text)| (label.as_str().to_string(), text.clone()))
                .collect(),
            correct_label: record.correct_label.as_str().to_string(),
            explanation: record.explanation.clone(),
            structured_explanation: record.structured_explanation.clone(),
        }
    }
}

/// Load and validate a corpus from a line-delimited or array-form record file.
pub fn load_corpus(path: impl AsRef<Path>, split_tag: SplitTag) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, split_tag, &path.display().to_string())
}

/// Parse corpus text (JSONL or a JSON array) and validate every record.
pub fn parse_corpus(text: &str, split_tag: SplitTag, path: &str) -> Result<Corpus, CorpusError> {
    let raw: Vec<RecordOnDisk> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|source| CorpusError::Json {
            path: path.to_string(),
            line: source.line(),
            source,
        })?
    } else {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|source| CorpusError::Json {
                path: path.to_string(),
                line: i + 1,
                source,
            })?;
            out.push(rec);
        }
        out
    };

    let mut seen = HashMap::new();
    let mut records = Vec::with_capacity(raw.len());
    for rec in raw {
        let record = rec.validate()?;
        if let Some(_first) = seen.insert(record.id.clone(), ()) {
            return Err(CorpusError::schema(&record.id, "id", "duplicate id"));
        }
        records.push(record);
    }
    Ok(Corpus { records, split_tag })
}

/// Serialize a corpus as line-delimited records, byte-stable.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for record in &corpus.records {
        let disk = RecordOnDisk::from_record(record);
        out.push_str(&serde_json::to_string(&disk).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, serialize_corpus(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Stable content hash over the serialized records (split tag excluded).
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_corpus(corpus).as_bytes());
    hex_digest(hasher)
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Normalized body used as the duplicate key: lowercase, whitespace runs
/// collapsed to single spaces, trimmed.
pub fn normalize_body(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut pending_space = false;
    for ch in body.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        }
    }
    out
}

/// Remove records whose normalized bodies duplicate an earlier record.
/// First occurrence wins; order is otherwise preserved.
pub fn dedup(corpus: &Corpus) -> (Corpus, usize) {
    let mut seen = HashMap::new();
    let mut records = Vec::with_capacity(corpus.records.len());
    for record in &corpus.records {
        let key = normalize_body(&record.body);
        if seen.insert(key, ()).is_none() {
            records.push(record.clone());
        }
    }
    let removed = corpus.records.len() - records.len();
    (
        Corpus {
            records,
            split_tag: corpus.split_tag,
        },
        removed,
    )
}

/// Every (train_id, test_id) pair whose normalized bodies collide. An empty
/// result certifies train/test disjointness.
pub fn check_overlap(train: &Corpus, test: &Corpus) -> Vec<(String, String)> {
    let mut by_body: HashMap<String, Vec<&str>> = HashMap::new();
    for record in &test.records {
        by_body
            .entry(normalize_body(&record.body))
            .or_default()
            .push(&record.id);
    }
    let mut collisions = Vec::new();
    for record in &train.records {
        if let Some(test_ids) = by_body.get(&normalize_body(&record.body)) {
            for test_id in test_ids {
                collisions.push((record.id.clone(), test_id.to_string()));
            }
        }
    }
    collisions
}

/// Draw `min(n, available)` records per domain, uniformly without
/// replacement, using a generator seeded by `(seed, domain)`. Output order is
/// domain order, then original corpus order within each domain.
pub fn sample_per_domain(corpus: &Corpus, n: usize, seed: u64) -> Corpus {
    let mut records = Vec::new();
    for (domain_index, domain) in DomainTag::ALL.into_iter().enumerate() {
        let pool: Vec<usize> = corpus
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.domain == domain)
            .map(|(i, _)| i)
            .collect();
        let mut picked: Vec<usize> = if n >= pool.len() {
            pool
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(domain_index as u64),
            );
            rand::seq::index::sample(&mut rng, pool.len(), n)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        };
        picked.sort_unstable();
        records.extend(picked.into_iter().map(|i| corpus.records[i].clone()));
    }
    Corpus {
        records,
        split_tag: corpus.split_tag,
    }
}

/// Per-domain record counts; every domain is present (zero when absent).
pub fn domain_distribution(corpus: &Corpus) -> BTreeMap<DomainTag, usize> {
    let mut counts: BTreeMap<DomainTag, usize> =
        DomainTag::ALL.into_iter().map(|d| (d, 0)).collect();
    for record in &corpus.records {
        *counts.get_mut(&record.domain).expect("all domains present") += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{record, record_with_body};

    fn corpus_of(records: Vec<QuestionRecord>) -> Corpus {
        Corpus {
            records,
            split_tag: SplitTag::Train,
        }
    }

    #[test]
    fn domain_parse_accepts_canonical_names_and_aliases() {
        assert_eq!(
            DomainTag::parse("Criminal Law"),
            Some(DomainTag::CriminalLaw)
        );
        assert_eq!(
            DomainTag::parse("Criminal Law and Procedure"),
            Some(DomainTag::CriminalLaw)
        );
        assert_eq!(DomainTag::parse("property"), Some(DomainTag::RealProperty));
        assert_eq!(DomainTag::parse("Tort Law"), Some(DomainTag::Torts));
        assert_eq!(DomainTag::parse("contract law"), Some(DomainTag::Contracts));
        assert_eq!(
            DomainTag::parse("CIVIL-PROCEDURE"),
            Some(DomainTag::CivilProcedure)
        );
        assert_eq!(
            DomainTag::parse("real   property"),
            Some(DomainTag::RealProperty)
        );
        assert_eq!(DomainTag::parse("maritime law"), None);
        assert_eq!(DomainTag::parse(""), None);
    }

    #[test]
    fn load_preserves_order_and_roundtrips() {
        let records = vec![
            record("q1", DomainTag::Torts, Label::A),
            record("q2", DomainTag::Evidence, Label::C),
            record("q3", DomainTag::Contracts, Label::D),
        ];
        let corpus = corpus_of(records);
        let text = serialize_corpus(&corpus);
        let reloaded = parse_corpus(&text, SplitTag::Train, "<mem>").unwrap();
        assert_eq!(reloaded.records, corpus.records);
        // serialize again: byte identical
        assert_eq!(serialize_corpus(&reloaded), text);
    }

    #[test]
    fn load_accepts_array_form() {
        let corpus = corpus_of(vec![record("q1", DomainTag::Torts, Label::A)]);
        let lines = serialize_corpus(&corpus);
        let array = format!("[{}]", lines.trim_end());
        let reloaded = parse_corpus(&array, SplitTag::Train, "<mem>").unwrap();
        assert_eq!(reloaded.records, corpus.records);
    }

    #[test]
    fn missing_option_is_a_schema_error_naming_the_record() {
        let mut disk = serde_json::to_value(RecordOnDisk::from_record(&record(
            "q7",
            DomainTag::Torts,
            Label::A,
        )))
        .unwrap();
        disk["options"].as_object_mut().unwrap().remove("D");
        let line = serde_json::to_string(&disk).unwrap();
        let err = parse_corpus(&line, SplitTag::Train, "<mem>").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q7") && msg.contains("option D"), "{msg}");
    }

    #[test]
    fn unknown_domain_is_a_hard_error() {
        let mut disk = serde_json::to_value(RecordOnDisk::from_record(&record(
            "q9",
            DomainTag::Torts,
            Label::A,
        )))
        .unwrap();
        disk["domain"] = serde_json::json!("Admiralty");
        let line = serde_json::to_string(&disk).unwrap();
        let err = parse_corpus(&line, SplitTag::Train, "<mem>").unwrap_err();
        assert!(err.to_string().contains("Admiralty"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let corpus = corpus_of(vec![
            record("dup", DomainTag::Torts, Label::A),
            record("dup", DomainTag::Evidence, Label::B),
        ]);
        let text = serialize_corpus(&corpus);
        let err = parse_corpus(&text, SplitTag::Train, "<mem>").unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn dedup_collapses_case_and_whitespace_variants() {
        let corpus = corpus_of(vec![
            record_with_body("a", DomainTag::Torts, "A dog  bites\na man."),
            record_with_body("b", DomainTag::Torts, "a DOG bites a man."),
            record_with_body("c", DomainTag::Torts, "Something else entirely."),
        ]);
        let (deduped, removed) = dedup(&corpus);
        assert_eq!(removed, 1);
        assert_eq!(
            deduped
                .records
                .iter()
                .map(|r| r.id.as_str())
                .collect::<Vec<_>>(),
            vec!["a", "c"]
        );
    }

    #[test]
    fn dedup_identity_on_distinct_bodies() {
        let corpus = corpus_of(vec![
            record_with_body("a", DomainTag::Torts, "First body."),
            record_with_body("b", DomainTag::Torts, "Second body."),
        ]);
        let (deduped, removed) = dedup(&corpus);
        assert_eq!(removed, 0);
        assert_eq!(deduped.records, corpus.records);
    }

    #[test]
    fn dedup_is_idempotent() {
        let corpus = corpus_of(vec![
            record_with_body("a", DomainTag::Torts, "Body one."),
            record_with_body("b", DomainTag::Torts, "body  ONE."),
            record_with_body("c", DomainTag::Torts, "Body two."),
        ]);
        let (once, _) = dedup(&corpus);
        let (twice, removed_again) = dedup(&once);
        assert_eq!(removed_again, 0);
        assert_eq!(once, twice);
    }

    #[test]
    fn overlap_finds_planted_duplicate() {
        let train = corpus_of(vec![
            record_with_body("t1", DomainTag::Torts, "Unique train question."),
            record_with_body("t2", DomainTag::Torts, "The copied question text."),
        ]);
        let test = Corpus {
            records: vec![record_with_body(
                "x1",
                DomainTag::Torts,
                "  the COPIED question\ttext.",
            )],
            split_tag: SplitTag::Test,
        };
        assert_eq!(
            check_overlap(&train, &test),
            vec![("t2".to_string(), "x1".to_string())]
        );
    }

    #[test]
    fn overlap_empty_for_disjoint_corpora() {
        let train = corpus_of(vec![record_with_body("t1", DomainTag::Torts, "Alpha.")]);
        let test = Corpus {
            records: vec![record_with_body("x1", DomainTag::Torts, "Beta.")],
            split_tag: SplitTag::Test,
        };
        assert!(check_overlap(&train, &test).is_empty());
    }

    #[test]
    fn self_overlap_of_deduped_corpus_is_its_size() {
        let corpus = corpus_of(vec![
            record_with_body("a", DomainTag::Torts, "One."),
            record_with_body("b", DomainTag::Torts, "Two."),
            record_with_body("c", DomainTag::Torts, "Three."),
        ]);
        let (deduped, _) = dedup(&corpus);
        assert_eq!(check_overlap(&deduped, &deduped).len(), deduped.len());
    }

    #[test]
    fn sampling_is_deterministic_and_a_subset() {
        let mut records = Vec::new();
        for i in 0..30 {
            records.push(record_with_body(
                &format!("t{i}"),
                DomainTag::Torts,
                &format!("Torts question number {i}."),
            ));
        }
        for i in 0..5 {
            records.push(record_with_body(
                &format!("e{i}"),
                DomainTag::Evidence,
                &format!("Evidence question number {i}."),
            ));
        }
        let corpus = corpus_of(records);
        let a = sample_per_domain(&corpus, 10, 42);
        let b = sample_per_domain(&corpus, 10, 42);
        assert_eq!(a, b);
        // per-domain counts: min(n, available)
        let dist = domain_distribution(&a);
        assert_eq!(dist[&DomainTag::Torts], 10);
        assert_eq!(dist[&DomainTag::Evidence], 5);
        // subset of the original corpus
        for record in &a.records {
            assert!(corpus.get(&record.id).is_some());
        }
        // different seed, different torts draw (overwhelmingly likely)
        let c = sample_per_domain(&corpus, 10, 43);
        assert_ne!(
            a.records.iter().map(|r| &r.id).collect::<Vec<_>>(),
            c.records.iter().map(|r| &r.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sampling_more_than_available_takes_everything() {
        let corpus = corpus_of(vec![
            record("t1", DomainTag::Torts, Label::A),
            record("e1", DomainTag::Evidence, Label::B),
        ]);
        let sampled = sample_per_domain(&corpus, 400, 7);
        assert_eq!(sampled.len(), 2);
    }

    #[test]
    fn distribution_of_empty_corpus_is_all_zero() {
        let corpus = corpus_of(vec![]);
        let dist = domain_distribution(&corpus);
        assert_eq!(dist.len(), 7);
        assert!(dist.values().all(|&c| c == 0));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = corpus_of(vec![record("q1", DomainTag::Torts, Label::A)]);
        let b = corpus_of(vec![record("q1", DomainTag::Torts, Label::B)]);
        assert_ne!(corpus_fingerprint(&a), corpus_fingerprint(&b));
        assert_eq!(corpus_fingerprint(&a), corpus_fingerprint(&a.clone()));
    }
}
