//! `gavel` is an evaluation harness for multiple-choice bar-exam question
//! answering with language models. It covers the whole loop at desk scale:
//! corpus curation, prompt-matrix rendering, SFT dataset export, completion
//! backends (live, replay, synthetic), lenient response parsing, grading,
//! and bias/learning-curve analysis.
//!
//! The library is the primary interface; each major capability has a
//! runnable example:
//!
//! ```text
//! examples/
//! ├── ingest_corpus.rs        # validate, de-duplicate, leakage-check corpora
//! ├── render_prompts.rs       # the 24-cell prompt configuration matrix
//! ├── export_sft.rs           # sampled SFT datasets in chat dialects
//! ├── distill_explanations.rs # restructure explanations via a teacher backend
//! ├── synthetic_failures.rs   # hallucination modes vs. the response parser
//! ├── run_matrix.rs           # deterministic end-to-end matrix run (replay)
//! └── analyze_results.rs      # option bias, RMS bias, power-law fits
//! ```
//!
//! Run one with `cargo run -p gavel --example ingest_corpus`. The thin
//! `gavel` binary exposes the same pipeline as subcommands (`ingest`,
//! `distill`, `export-sft`, `run`, `report`), each driven by a TOML config
//! file.
//!
//! No module here talks to the network except [`client`]'s live backend;
//! everything else is pure and deterministic, which is what makes byte-exact
//! replay runs possible.

pub mod analyze;
pub mod client;
pub mod corpus;
pub mod distill;
pub mod fixtures;
pub mod grade;
pub mod parse;
pub mod pipeline;
mod pool;
pub mod promptgen;

pub use corpus::{Corpus, DomainTag, Label, QuestionRecord, SplitTag};
pub use promptgen::{
    ChatTemplateSpec, ExplanationType, GenerationConfig, PromptType, ResponseFormat, ResponseType,
};
