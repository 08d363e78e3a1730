//! A deterministic end-to-end matrix run: 24 configuration cells over a
//! small corpus against the synthetic backend, then skip-on-rerun and a full
//! report.
//!
//! ```bash
//! cargo run -p gavel --example run_matrix
//! ```

use gavel::client::SyntheticMode;
use gavel::corpus::save_corpus;
use gavel::fixtures::{exemplar_set, synthetic_corpus};
use gavel::pipeline::{cmd_matrix_run, cmd_report, BackendConfig, MatrixSpec, ReportSpec, RunSpec};
use gavel::{Corpus, DomainTag, SplitTag};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let counts: Vec<(DomainTag, usize)> = DomainTag::ALL.into_iter().map(|d| (d, 2)).collect();
    let corpus = synthetic_corpus("q", &counts, SplitTag::Test, true);
    let corpus_path = dir.path().join("test.jsonl");
    save_corpus(&corpus, &corpus_path)?;
    let exemplars = Corpus {
        records: exemplar_set(true).into_values().collect(),
        split_tag: SplitTag::Train,
    };
    let exemplars_path = dir.path().join("exemplars.jsonl");
    save_corpus(&exemplars, &exemplars_path)?;

    let spec = RunSpec {
        model_id: "demo-model".to_string(),
        test_corpus: corpus_path,
        out_dir: dir.path().join("runs"),
        template: "llama3".to_string(),
        exemplars: Some(exemplars_path),
        max_tokens: 256,
        workers: 4,
        failure_threshold: 0.2,
        fixed_time: Some(0),
        question_limit: None,
        record_replay: Some(dir.path().join("recorded_store.jsonl")),
        backend: BackendConfig::Synthetic {
            mode: SyntheticMode::Faithful,
        },
        matrix: MatrixSpec::default(),
    };

    let manifests = cmd_matrix_run(&spec)?;
    println!("completed {} runs:", manifests.len());
    for manifest in &manifests {
        println!(
            "  {} {} ({}/{})",
            manifest.run_id,
            manifest.config.short_code(),
            manifest.questions_answered,
            manifest.questions_total
        );
    }

    // a second invocation skips every completed run
    let again = cmd_matrix_run(&spec)?;
    println!("\nrerun: {} manifests, all already complete", again.len());

    let files = cmd_report(&ReportSpec {
        runs_dir: dir.path().join("runs"),
        out_dir: dir.path().join("report"),
        plots: true,
    })?;
    println!("\nreport files:");
    for file in &files {
        println!("  {}", file.file_name().unwrap().to_string_lossy());
    }
    let summary = std::fs::read_to_string(dir.path().join("report/summary.md"))?;
    println!("\n{summary}");
    Ok(())
}
