//! SRT / WebVTT parsing into ordered, normalized cue lists.
//!
//! Timestamps are kept as integer milliseconds so that gap arithmetic in the
//! extractor is exact. Text is stripped of markup, whitespace-collapsed and
//! NFC-normalized; a leading `NAME:` speaker label is split off into
//! [`Cue::speaker`].

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// One timestamped subtitle line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
    pub speaker: Option<String>,
}

impl Cue {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// The cues of one episode, sorted by start time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueList {
    pub episode_id: String,
    pub cues: Vec<Cue>,
}

impl CueList {
    /// Builds a cue list from already-normalized cues, sorting by start time and
    /// reassigning indices.
    pub fn new(episode_id: impl Into<String>, mut cues: Vec<Cue>) -> Result<Self, TranscriptError> {
        let episode_id = episode_id.into();
        if episode_id.is_empty() {
            return Err(TranscriptError::EmptyEpisodeId);
        }
        if cues.is_empty() {
            return Err(TranscriptError::EmptyTranscript);
        }
        cues.sort_by_key(|c| (c.start_ms, c.end_ms));
        for (i, c) in cues.iter_mut().enumerate() {
            c.index = i;
        }
        Ok(Self { episode_id, cues })
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatHint {
    Srt,
    Vtt,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtitleFormat {
    Srt,
    Vtt,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    Decode { offset: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("transcript contains no cues")]
    EmptyTranscript,
    #[error("episode id must not be empty")]
    EmptyEpisodeId,
}

impl TranscriptError {
    fn format(line: usize, message: impl Into<String>) -> Self {
        Self::Format { line, message: message.into() }
    }

    /// Short machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Decode { .. } => "decode",
            Self::Format { .. } => "format",
            Self::EmptyTranscript => "empty_transcript",
            Self::EmptyEpisodeId => "empty_episode_id",
        }
    }
}

/// A non-fatal parse diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub file: String,
    pub line: usize,
    pub category: String,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: [{}] {}", self.file, self.line, self.category, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTranscript {
    pub cues: CueList,
    pub warnings: Vec<ParseWarning>,
}

/// Parses raw subtitle bytes. `episode_id` names the resulting list and is also
/// used as the `file` field of any warnings.
pub fn parse_transcript(
    raw: &[u8],
    hint: FormatHint,
    episode_id: &str,
) -> Result<ParsedTranscript, TranscriptError> {
    if episode_id.is_empty() {
        return Err(TranscriptError::EmptyEpisodeId);
    }
    let text = std::str::from_utf8(raw).map_err(|e| TranscriptError::Decode { offset: e.valid_up_to() })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();

    let format = match hint {
        FormatHint::Srt => SubtitleFormat::Srt,
        FormatHint::Vtt => SubtitleFormat::Vtt,
        FormatHint::Auto => detect_format(&lines)?,
    };

    let blocks = match format {
        SubtitleFormat::Srt => parse_srt_blocks(&lines)?,
        SubtitleFormat::Vtt => parse_vtt_blocks(&lines)?,
    };
    assemble(blocks, episode_id)
}

fn detect_format(lines: &[&str]) -> Result<SubtitleFormat, TranscriptError> {
    let Some((i, first)) = lines.iter().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Err(TranscriptError::EmptyTranscript);
    };
    let first = first.trim();
    if is_vtt_header(first) {
        Ok(SubtitleFormat::Vtt)
    } else if first.chars().all(|c| c.is_ascii_digit()) {
        Ok(SubtitleFormat::Srt)
    } else {
        Err(TranscriptError::format(i + 1, "cannot detect subtitle format (expected WEBVTT header or SRT cue number)"))
    }
}

fn is_vtt_header(line: &str) -> bool {
    match line.strip_prefix("WEBVTT") {
        Some(rest) => rest.is_empty() || rest.starts_with([' ', '\t']),
        None => false,
    }
}

/// A cue block before normalization; `line` is the 1-based timing line.
struct RawBlock {
    line: usize,
    start_ms: u64,
    end_ms: u64,
    text_lines: Vec<String>,
}

fn parse_srt_blocks(lines: &[&str]) -> Result<Vec<RawBlock>, TranscriptError> {
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let number = lines[i].trim();
        if !number.chars().all(|c| c.is_ascii_digit()) {
            return Err(TranscriptError::format(i + 1, format!("expected cue number, found {number:?}")));
        }
        i += 1;
        let Some(timing) = lines.get(i) else {
            return Err(TranscriptError::format(i, "cue number without timing line"));
        };
        let (start_ms, end_ms) = parse_timing_line(timing, SubtitleFormat::Srt, i + 1)?;
        let line = i + 1;
        i += 1;
        let mut text_lines = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            text_lines.push(lines[i].to_string());
            i += 1;
        }
        blocks.push(RawBlock { line, start_ms, end_ms, text_lines });
    }
    Ok(blocks)
}

fn parse_vtt_blocks(lines: &[&str]) -> Result<Vec<RawBlock>, TranscriptError> {
    let header = lines.first().map(|l| l.trim_end()).unwrap_or("");
    if !is_vtt_header(header) {
        return Err(TranscriptError::format(1, "missing WEBVTT header"));
    }
    let mut i = 1;
    // header block runs until the first blank line
    while i < lines.len() && !lines[i].trim().is_empty() {
        i += 1;
    }
    let mut blocks = Vec::new();
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let first = lines[i].trim();
        if first.starts_with("NOTE") || first == "STYLE" || first == "REGION" {
            while i < lines.len() && !lines[i].trim().is_empty() {
                i += 1;
            }
            continue;
        }
        // optional cue identifier
        if !first.contains("-->") {
            i += 1;
            if i >= lines.len() || lines[i].trim().is_empty() {
                return Err(TranscriptError::format(i, "missing \"-->\" timing line after cue identifier"));
            }
        }
        let (start_ms, end_ms) = parse_timing_line(lines[i], SubtitleFormat::Vtt, i + 1)?;
        let line = i + 1;
        i += 1;
        let mut text_lines = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            text_lines.push(lines[i].to_string());
            i += 1;
        }
        blocks.push(RawBlock { line, start_ms, end_ms, text_lines });
    }
    Ok(blocks)
}

fn parse_timing_line(line: &str, format: SubtitleFormat, line_no: usize) -> Result<(u64, u64), TranscriptError> {
    let Some((start, rest)) = line.split_once("-->") else {
        return Err(TranscriptError::format(line_no, "missing \"-->\" separator"));
    };
    // VTT cue settings follow the end timestamp
    let end = rest.split_whitespace().next().unwrap_or("");
    let start_ms = parse_timestamp(start.trim(), format)
        .ok_or_else(|| TranscriptError::format(line_no, format!("unparseable timestamp {:?}", start.trim())))?;
    let end_ms = parse_timestamp(end, format)
        .ok_or_else(|| TranscriptError::format(line_no, format!("unparseable timestamp {end:?}")))?;
    if end_ms <= start_ms {
        return Err(TranscriptError::format(line_no, format!("cue ends ({end_ms} ms) at or before it starts ({start_ms} ms)")));
    }
    Ok((start_ms, end_ms))
}

/// Parses `HH:MM:SS,mmm` (SRT) or `[HH:]MM:SS.mmm` (VTT) into milliseconds.
pub fn parse_timestamp(s: &str, format: SubtitleFormat) -> Option<u64> {
    let sep = match format {
        SubtitleFormat::Srt => ',',
        SubtitleFormat::Vtt => '.',
    };
    let (clock, millis) = s.split_once(sep)?;
    if millis.len() != 3 || !millis.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let parts: Vec<&str> = clock.split(':').collect();
    let (h, m, sec) = match (format, parts.as_slice()) {
        (_, [h, m, s]) => (*h, *m, *s),
        (SubtitleFormat::Vtt, [m, s]) => ("0", *m, *s),
        _ => return None,
    };
    let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
    if !digits(h) || m.len() != 2 || sec.len() != 2 || !digits(m) || !digits(sec) {
        return None;
    }
    let (h, m, sec): (u64, u64, u64) = (h.parse().ok()?, m.parse().ok()?, sec.parse().ok()?);
    if m >= 60 || sec >= 60 {
        return None;
    }
    let ms: u64 = millis.parse().ok()?;
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

/// Formats milliseconds as an SRT timestamp `HH:MM:SS,mmm`.
pub fn format_srt_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, millis) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02},{millis:03}")
}

/// Formats milliseconds as a WebVTT timestamp `HH:MM:SS.mmm`.
pub fn format_vtt_timestamp(ms: u64) -> String {
    format_srt_timestamp(ms).replacen(',', ".", 1)
}

fn assemble(blocks: Vec<RawBlock>, episode_id: &str) -> Result<ParsedTranscript, TranscriptError> {
    let mut warnings = Vec::new();
    let warn = |warnings: &mut Vec<ParseWarning>, line, category: &str, message: String| {
        warnings.push(ParseWarning { file: episode_id.to_string(), line, category: category.to_string(), message })
    };

    let mut staged: Vec<(usize, Cue)> = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut speaker = None;
        let mut parts = Vec::with_capacity(block.text_lines.len());
        for raw_line in &block.text_lines {
            let (voice, rest) = split_voice_tag(raw_line);
            let normalized = normalize_cue_text(rest);
            let (label, text) = split_speaker(&normalized);
            if speaker.is_none() {
                speaker = voice.or(label);
            }
            if !text.is_empty() {
                parts.push(text.to_string());
            }
        }
        let text = parts.join(" ");
        if text.is_empty() {
            warn(&mut warnings, block.line, "empty_text", "cue has no text after markup removal; dropped".into());
            continue;
        }
        staged.push((block.line, Cue { index: 0, start_ms: block.start_ms, end_ms: block.end_ms, text, speaker }));
    }

    if staged.windows(2).any(|w| w[1].1.start_ms < w[0].1.start_ms) {
        warn(&mut warnings, staged[0].0, "reordered", "cue blocks were out of order and have been sorted by start time".into());
    }
    staged.sort_by_key(|(line, c)| (c.start_ms, c.end_ms, *line));

    for w in staged.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        if b.start_ms < a.end_ms {
            let overlap = a.end_ms.min(b.end_ms) - b.start_ms;
            let shorter = a.duration_ms().min(b.duration_ms());
            if overlap * 2 > shorter {
                warn(
                    &mut warnings,
                    w[1].0,
                    "overlap",
                    format!("cue overlaps its predecessor by {overlap} ms (more than half of the shorter cue)"),
                );
            }
        }
    }

    let cues = CueList::new(episode_id, staged.into_iter().map(|(_, c)| c).collect())?;
    Ok(ParsedTranscript { cues, warnings })
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^<>]*>|\{\\[^{}]*\}").unwrap())
}

fn voice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*<v(?:\.[^\s>]+)?\s+([^>]+)>").unwrap())
}

fn speaker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\p{Lu}[\p{Lu}\p{Nd}'\-]*|\p{Lu}[\p{Ll}\p{Nd}'\-]+):(?:\s+|$)").unwrap())
}

fn split_voice_tag(line: &str) -> (Option<String>, &str) {
    match voice_re().captures(line) {
        Some(caps) => {
            let name = caps[1].trim().to_string();
            (Some(name).filter(|n| !n.is_empty()), &line[caps.get(0).unwrap().end()..])
        }
        None => (None, line),
    }
}

/// Splits a leading speaker label (`DORA:` or `Boots:`) off normalized text.
pub fn split_speaker(text: &str) -> (Option<String>, &str) {
    match speaker_re().captures(text) {
        Some(caps) => {
            let rest = &text[caps.get(0).unwrap().end()..];
            (Some(caps[1].to_string()), rest.trim())
        }
        None => (None, text),
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&nbsp;", " ")
        .replace("&lrm;", "")
        .replace("&rlm;", "")
        .replace("&amp;", "&")
}

/// Removes markup, collapses whitespace, NFC-normalizes and trims.
pub fn normalize_cue_text(raw: &str) -> String {
    let mut s = raw.to_string();
    loop {
        let next = tag_re().replace_all(&decode_entities(&s), "").into_owned();
        if next == s {
            break;
        }
        s = next;
    }
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.nfc().collect::<String>().trim().to_string()
}
