//! Mines question-pause-answer examples from a directory of transcripts.
//!
//! cargo run --example extract_dataset -- [dir]
//! Defaults to the synthetic episodes under tests/fixtures/corpus.

use std::path::PathBuf;

use qpa_grpo::dataset::dataset_stats;
use qpa_grpo::extract::{build_dataset, QpaConfig};
use qpa_grpo::transcript::{parse_transcript, FormatHint};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus"));
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();

    let mut episodes = Vec::new();
    for path in paths.iter().filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("srt" | "vtt"))) {
        let id = path.file_stem().unwrap().to_string_lossy();
        episodes.push(parse_transcript(&std::fs::read(path)?, FormatHint::Auto, &id)?.cues);
    }

    let cfg = QpaConfig::default();
    let out = build_dataset(&episodes, &cfg);
    for e in out.dataset.examples.iter().take(5) {
        println!("{}  Q: {}  ({} ms pause)  A: {}", e.question_id, e.question, e.pause.duration_ms(), e.answer);
    }
    println!("...");
    println!("{} skipped questions", out.skips.len());
    print!("{}", dataset_stats(&out.dataset));
    Ok(())
}
