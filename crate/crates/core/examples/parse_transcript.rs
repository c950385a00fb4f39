//! Parses a subtitle file (SRT or WebVTT) and prints its cues.
//!
//! cargo run --example parse_transcript -- path/to/file.srt

use qpa_grpo::transcript::{format_srt_timestamp, parse_transcript, FormatHint};

const SAMPLE: &str = "\
WEBVTT

1
00:00:01.000 --> 00:00:03.500
<v Dora>Where is the <i>blue</i> ball?

2
00:00:07.000 --> 00:00:08.000
Under the tree!
";

fn main() -> anyhow::Result<()> {
    let (raw, name) = match std::env::args().nth(1) {
        Some(path) => (std::fs::read(&path)?, path),
        None => (SAMPLE.as_bytes().to_vec(), "sample".to_string()),
    };
    let parsed = parse_transcript(&raw, FormatHint::Auto, &name)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    for c in &parsed.cues.cues {
        let who = c.speaker.as_deref().unwrap_or("-");
        println!("{:>4}  {} -> {}  [{who}] {}", c.index, format_srt_timestamp(c.start_ms), format_srt_timestamp(c.end_ms), c.text);
    }
    Ok(())
}
