//! Grading and aggregation: score parsed responses against gold labels and
//! summarize accuracy/malformed statistics across runs, configurations,
//! domains, and sample sizes.
//!
//! Correctness is the label match alone; the chosen domain and the generated
//! explanation never affect the grade. A response with no extractable label
//! is graded incorrect and additionally counted as malformed.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DomainTag, Label};
use crate::parse::{ParseStatus, ParsedResponse};
use crate::promptgen::GenerationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedAnswer {
    pub question_id: String,
    pub correct: bool,
    pub status: ParseStatus,
    pub predicted: Option<Label>,
    pub gold: Label,
}

/// One (model, config, train-sample-size) evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model_id: String,
    pub config: GenerationConfig,
    /// 0 means the untrained baseline.
    pub train_sample_size: usize,
    pub graded: Vec<GradedAnswer>,
    pub accuracy: f64,
    pub malformed_label_count: usize,
    pub malformed_explanation_count: usize,
}

/// Five-number summary (plus count) of a metric over a group of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub group_key: BTreeMap<String, String>,
    pub n_runs: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MalformedLabelCount,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MalformedLabelCount => "malformed_label_count",
        }
    }

    fn of(self, run: &RunResult) -> f64 {
        match self {
            Metric::Accuracy => run.accuracy,
            Metric::MalformedLabelCount => run.malformed_label_count as f64,
        }
    }
}

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("alignment error: {detail}")]
    Alignment { detail: String },
    #[error("empty group: no runs to aggregate")]
    EmptyGroup,
    #[error("unknown grouping dimension {name:?}")]
    UnknownDimension { name: String },
}

/// Grade one parsed response. Correct iff the extracted option equals the
/// gold label; a missing option grades incorrect.
pub fn grade(parsed: &ParsedResponse, record: &crate::corpus::QuestionRecord) -> GradedAnswer {
    let correct = parsed.option == Some(record.correct_label);
    GradedAnswer {
        question_id: record.id.clone(),
        correct,
        status: parsed.status,
        predicted: parsed.option,
        gold: record.correct_label,
    }
}

/// Grade a full run. The parsed list must cover every corpus question
/// exactly once; output order follows corpus order.
pub fn grade_run(
    parsed: &[(String, ParsedResponse)],
    corpus: &Corpus,
    model_id: &str,
    config: &GenerationConfig,
    train_sample_size: usize,
) -> Result<RunResult, GradeError> {
    let mut by_id: HashMap<&str, &ParsedResponse> = HashMap::new();
    for (id, response) in parsed {
        if by_id.insert(id.as_str(), response).is_some() {
            return Err(GradeError::Alignment {
                detail: format!("duplicate answer for question id {id}"),
            });
        }
    }
    let corpus_ids: HashSet<&str> = corpus.records.iter().map(|r| r.id.as_str()).collect();
    for id in by_id.keys() {
        if !corpus_ids.contains(id) {
            return Err(GradeError::Alignment {
                detail: format!("answer for unknown question id {id}"),
            });
        }
    }

    let mut graded = Vec::with_capacity(corpus.records.len());
    for record in &corpus.records {
        let response = by_id
            .get(record.id.as_str())
            .ok_or_else(|| GradeError::Alignment {
                detail: format!("missing answer for question id {}", record.id),
            })?;
        graded.push(grade(response, record));
    }

    let correct = graded.iter().filter(|g| g.correct).count();
    let malformed_label_count = graded.iter().filter(|g| g.status.malformed_label).count();
    let malformed_explanation_count = graded
        .iter()
        .filter(|g| g.status.malformed_explanation)
        .count();
    let accuracy = if graded.is_empty() {
        0.0
    } else {
        correct as f64 / graded.len() as f64
    };
    Ok(RunResult {
        model_id: model_id.to_string(),
        config: config.clone(),
        train_sample_size,
        graded,
        accuracy,
        malformed_label_count,
        malformed_explanation_count,
    })
}

/// Named dimensions usable in `aggregate` group-by lists.
pub const DIMENSIONS: [&str; 8] = [
    "model",
    "sample_size",
    "prompt_type",
    "explanation_type",
    "response_type",
    "response_format",
    "temperature",
    "seed",
];

fn dimension_value(run: &RunResult, name: &str) -> Result<String, GradeError> {
    let value = match name {
        "model" => run.model_id.clone(),
        "sample_size" => run.train_sample_size.to_string(),
        "prompt_type" => enum_str(&run.config.prompt_type),
        "explanation_type" => enum_str(&run.config.explanation_type),
        "response_type" => enum_str(&run.config.response_type),
        "response_format" => enum_str(&run.config.response_format),
        "temperature" => format_float(run.config.temperature),
        "seed" => run.config.seed.to_string(),
        _ => {
            return Err(GradeError::UnknownDimension {
                name: name.to_string(),
            })
        }
    };
    Ok(value)
}

fn enum_str<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub(crate) fn format_float(x: f64) -> String {
    // shortest round-trip form; stable for identical inputs
    let s = format!("{x}");
    s
}

/// Group runs by the named dimensions and summarize the metric per group
/// with population statistics. Groups are emitted in natural key order
/// (numeric where the values parse as numbers).
pub fn aggregate(
    runs: &[RunResult],
    group_by: &[&str],
    metric: Metric,
) -> Result<Vec<AggregateStats>, GradeError> {
    if runs.is_empty() {
        return Err(GradeError::EmptyGroup);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for run in runs {
        let key: Vec<String> = group_by
            .iter()
            .map(|name| dimension_value(run, name))
            .collect::<Result<_, _>>()?;
        groups.entry(key).or_default().push(metric.of(run));
    }

    let mut keys: Vec<Vec<String>> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| natural_key_order(a, b));

    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let values = &groups[&key];
        let group_key: BTreeMap<String, String> = group_by
            .iter()
            .map(|name| name.to_string())
            .zip(key.iter().cloned())
            .collect();
        out.push(stats_over(group_key, values));
    }
    Ok(out)
}

fn natural_key_order(a: &[String], b: &[String]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(nx), Ok(ny)) => nx.partial_cmp(&ny).unwrap_or(std::cmp::Ordering::Equal),
            _ => x.cmp(y),
        };
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

fn stats_over(group_key: BTreeMap<String, String>, values: &[f64]) -> AggregateStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // population standard deviation over the enumerated config grid
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = variance.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    AggregateStats {
        group_key,
        n_runs: n,
        mean,
        std,
        median,
        min: sorted[0],
        max: sorted[n - 1],
    }
}

/// Per-domain accuracy over one run. Domains absent from the corpus are
/// absent from the map.
pub fn per_domain_accuracy(
    run: &RunResult,
    corpus: &Corpus,
) -> Result<BTreeMap<DomainTag, f64>, GradeError> {
    let domain_of: HashMap<&str, DomainTag> = corpus
        .records
        .iter()
        .map(|r| (r.id.as_str(), r.domain))
        .collect();
    let mut correct: BTreeMap<DomainTag, usize> = BTreeMap::new();
    let mut total: BTreeMap<DomainTag, usize> = BTreeMap::new();
    for graded in &run.graded {
        let domain =
            domain_of
                .get(graded.question_id.as_str())
                .ok_or_else(|| GradeError::Alignment {
                    detail: format!(
                        "graded answer for unknown question id {}",
                        graded.question_id
                    ),
                })?;
        *total.entry(*domain).or_default() += 1;
        if graded.correct {
            *correct.entry(*domain).or_default() += 1;
        }
    }
    Ok(total
        .into_iter()
        .map(|(domain, n)| {
            let c = correct.get(&domain).copied().unwrap_or(0);
            (domain, c as f64 / n as f64)
        })
        .collect())
}
