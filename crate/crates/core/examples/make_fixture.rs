//! Writes the synthetic fixture corpus used by the shipped report config.
//!
//! Usage: cargo run --example make_fixture -- <dir>

use std::fs;
use std::path::PathBuf;

use oudlens::corpus::write_labels;
use oudlens::synth::{events_csv, generate, SynthConfig, DEMO_LEXICON};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "fixtures".to_string()),
    );
    fs::create_dir_all(&dir)?;
    let data = generate(&SynthConfig::default());
    fs::write(
        dir.join("corpus.jsonl"),
        oudlens::corpus::serialize_corpus(&data.corpus),
    )?;
    write_labels(
        &data.oud_labels,
        fs::File::create(dir.join("oud_labels.csv"))?,
    )?;
    write_labels(
        &data.recovery_labels,
        fs::File::create(dir.join("recovery_labels.csv"))?,
    )?;
    fs::write(dir.join("events.csv"), events_csv(&data.events))?;
    fs::write(dir.join("lexicon.tsv"), DEMO_LEXICON)?;
    println!("{} posts written to {}", data.corpus.len(), dir.display());
    Ok(())
}
