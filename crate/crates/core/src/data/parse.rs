use std::collections::HashMap;
use std::path::Path;

use super::{EventTriplet, RawCascade};
use crate::error::{Error, Result};

/// Records that parsed cleanly, plus per-line problems. Malformed lines
/// are errors; structurally inconsistent records are skipped with a warning.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawCascade>,
    pub errors: Vec<Error>,
    pub warnings: Vec<String>,
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<ParseOutcome> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, &path.display().to_string())
}

/// Parses text in the one-cascade-per-line format. `source_name` is only
/// used in diagnostics.
pub fn parse_str(text: &str, source_name: &str) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(LineResult::Record(r)) => out.records.push(r),
            Ok(LineResult::Skipped(msg)) => {
                log::warn!("{source_name}:{line_no}: {msg}; record skipped");
                out.warnings.push(format!("{source_name}:{line_no}: {msg}"));
            }
            Err(msg) => out.errors.push(Error::Parse { path: source_name.to_string(), line: line_no, msg }),
        }
    }
    Ok(out)
}

enum LineResult {
    Record(RawCascade),
    Skipped(String),
}

fn parse_line(line: &str) -> std::result::Result<LineResult, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 4 {
        return Err(format!("expected at least 4 fields, found {}", tokens.len()));
    }
    let id = tokens[0].to_string();
    let origin = tokens[1].to_string();
    let publish_time: i64 = tokens[2]
        .parse()
        .map_err(|_| format!("invalid publish time `{}`", tokens[2]))?;
    let num_paths: usize = tokens[3]
        .parse()
        .map_err(|_| format!("invalid path count `{}`", tokens[3]))?;
    let paths = &tokens[4..];
    if paths.len() != num_paths {
        return Err(format!("declared {num_paths} paths, found {}", paths.len()));
    }

    let mut root_time: Option<f64> = None;
    let mut pending: Vec<EventTriplet> = Vec::with_capacity(paths.len());
    for p in paths {
        let (chain, time) = p.rsplit_once(':').ok_or_else(|| format!("path `{p}` lacks `:time`"))?;
        let time: f64 = time.parse().map_err(|_| format!("invalid time in path `{p}`"))?;
        if !time.is_finite() {
            return Err(format!("non-finite time in path `{p}`"));
        }
        let users: Vec<&str> = chain.split('/').collect();
        if users.iter().any(|u| u.is_empty()) {
            return Err(format!("empty user id in path `{p}`"));
        }
        if users[0] != origin {
            return Err(format!("path `{p}` does not start at origin `{origin}`"));
        }
        if users.len() == 1 {
            root_time = Some(root_time.map_or(time, |r: f64| r.min(time)));
            continue;
        }
        let m = users.len();
        pending.push(EventTriplet::new(users[m - 2], users[m - 1], time));
    }

    let offset = root_time.unwrap_or(0.0);
    for t in &mut pending {
        t.time -= offset;
    }
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));

    // A parent must have joined no later than the child it spreads to.
    let mut joined: HashMap<&str, f64> = HashMap::new();
    joined.insert(origin.as_str(), 0.0);
    for t in &pending {
        joined.entry(t.target.as_str()).or_insert(t.time);
    }
    for t in &pending {
        if t.time < 0.0 {
            return Ok(LineResult::Skipped(format!("event at negative relative time {}", t.time)));
        }
        if t.source == t.target {
            return Ok(LineResult::Skipped(format!("self-reshare by `{}`", t.source)));
        }
        if let Some(&pt) = joined.get(t.source.as_str()) {
            if t.time < pt {
                return Ok(LineResult::Skipped(format!(
                    "non-monotone path: `{}` joined at {} but `{}` reshared from them at {}",
                    t.source, pt, t.target, t.time
                )));
            }
        }
    }

    Ok(LineResult::Record(RawCascade { id, origin, publish_time, triplets: pending }))
}
