use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One speaker turn of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct RttmSegment {
    pub session: String,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmSegment {
    pub fn new(session: &str, onset: f64, duration: f64, speaker: &str) -> Self {
        Self {
            session: session.to_string(),
            onset,
            duration,
            speaker: speaker.to_string(),
        }
    }

    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Parses `SPEAKER` records. Every non-blank, non-comment line must have
/// exactly ten fields; other record types are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmSegment>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 RTTM fields, found {}", f.len())));
        }
        if f[0] != "SPEAKER" {
            continue;
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad {what} '{s}'")))
        };
        let onset = num(f[3], "onset")?;
        let duration = num(f[4], "duration")?;
        if onset < 0.0 || duration <= 0.0 {
            return Err(err(format!("onset {onset} must be ≥ 0 and duration {duration} > 0")));
        }
        out.push(RttmSegment::new(f[1], onset, duration, f[7]));
    }
    Ok(out)
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<Vec<RttmSegment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text)
}

/// Serializes with millisecond resolution.
pub fn format_rttm(segs: &[RttmSegment]) -> String {
    let mut s = String::new();
    for g in segs {
        let _ = writeln!(
            s,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            g.session, g.onset, g.duration, g.speaker
        );
    }
    s
}

pub fn write_rttm(path: impl AsRef<Path>, segs: &[RttmSegment]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_rttm(segs)).map_err(|e| Error::io(path, e))
}

/// Sorted union of all turns as (onset, offset) intervals.
pub fn speech_regions(segs: &[RttmSegment]) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> = segs.iter().map(|s| (s.onset, s.offset())).collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}
