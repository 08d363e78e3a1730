//! Corpus ingestion: validation, de-duplication, and train/test leakage
//! checks.
//!
//! ```bash
//! cargo run -p gavel --example ingest_corpus
//! ```

use gavel::corpus::{
    check_overlap, dedup, domain_distribution, load_corpus, save_corpus, SplitTag,
};
use gavel::fixtures::synthetic_corpus;
use gavel::DomainTag;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;

    // a synthetic train set with duplicated study material and a test set
    let mut train = synthetic_corpus(
        "train",
        &[
            (DomainTag::CriminalLaw, 30),
            (DomainTag::Evidence, 28),
            (DomainTag::Contracts, 32),
            (DomainTag::Torts, 8),
            (DomainTag::ConstitutionalLaw, 24),
            (DomainTag::CivilProcedure, 9),
            (DomainTag::RealProperty, 26),
        ],
        SplitTag::Train,
        false,
    );
    // plant near-duplicates: same stems with different casing and spacing
    for i in 0..12 {
        let mut copy = train.records[i].clone();
        copy.id = format!("dup-{i}");
        copy.body = format!("  {}  ", copy.body.to_uppercase());
        train.records.push(copy);
    }
    let test = synthetic_corpus("test", &[(DomainTag::Torts, 5)], SplitTag::Test, false);

    let train_path = dir.path().join("train.jsonl");
    save_corpus(&train, &train_path)?;
    let train = load_corpus(&train_path, SplitTag::Train)?;
    println!("loaded {} train records", train.len());

    let (train, removed) = dedup(&train);
    println!(
        "de-duplication removed {removed} records, {} survive",
        train.len()
    );

    let collisions = check_overlap(&train, &test);
    println!("train/test overlap: {} collisions", collisions.len());

    println!("\nper-domain distribution of the deduplicated train set:");
    for (domain, count) in domain_distribution(&train) {
        println!("  {:<20} {count}", domain.canonical_name());
    }

    // a planted leak is caught by the same check
    let mut leaked = train.clone();
    leaked.records[0].body = test.records[3].body.clone();
    let collisions = check_overlap(&leaked, &test);
    println!(
        "\nafter planting one test question in train: {:?}",
        collisions
    );
    Ok(())
}
