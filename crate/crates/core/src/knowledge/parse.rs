//! Parsers for model answers in the extraction stage.

use serde_json::Value;

use super::ExtractedKnowledge;
use crate::prompts::{BEHAVIOR_LABEL, PURPOSE_LABEL};

/// Text after the `Function purpose:` label, up to the end of that line (or
/// the next non-empty line if the label ends its line).
pub fn parse_purpose(text: &str) -> Option<String> {
    let at = find_ci(text, PURPOSE_LABEL)?;
    let rest = &text[at + PURPOSE_LABEL.len()..];
    rest.lines()
        .map(|l| l.trim().trim_matches(|c| c == '"' || c == '\'' || c == '*').trim())
        .find(|l| !l.is_empty())
        .map(String::from)
}

/// Numbered list items, optionally after the behavior label. Items may share
/// one line (`1. a 2. b`) or sit on separate lines. Falls back to `-`/`*`
/// bullets when no numbering is found.
pub fn parse_behavior(text: &str) -> Option<Vec<String>> {
    let body = match find_ci(text, BEHAVIOR_LABEL) {
        Some(at) => &text[at + BEHAVIOR_LABEL.len()..],
        None => text,
    };
    let items = numbered_items(body);
    if !items.is_empty() {
        return Some(items);
    }
    let bullets: Vec<String> = body
        .lines()
        .map(str::trim)
        .filter_map(|l| l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")))
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    (!bullets.is_empty()).then_some(bullets)
}

fn numbered_items(body: &str) -> Vec<String> {
    // (marker start, content start) for markers 1, 2, 3, ... in order
    let mut marks: Vec<(usize, usize)> = Vec::new();
    let bytes = body.as_bytes();
    let mut expected = 1u32;
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || bytes[i - 1].is_ascii_whitespace();
        if boundary && bytes[i].is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let punct = j < bytes.len() && (bytes[j] == b'.' || bytes[j] == b')');
            let spaced = j + 1 >= bytes.len() || bytes[j + 1].is_ascii_whitespace();
            if punct && spaced && body[i..j].parse::<u32>().ok() == Some(expected) {
                marks.push((i, (j + 1).min(bytes.len())));
                expected += 1;
                i = j + 1;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let mut out = Vec::new();
    for (k, &(_, start)) in marks.iter().enumerate() {
        let end = marks.get(k + 1).map(|m| m.0).unwrap_or(body.len());
        let item = body[start..end].trim();
        if !item.is_empty() {
            out.push(item.to_string());
        }
    }
    out
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.to_ascii_lowercase();
    h.find(&needle.to_ascii_lowercase())
}

const KEY_ALIASES: [(&str, &[&str]); 4] = [
    ("triggering_action", &["triggering_action", "trigger_action", "triggering action"]),
    (
        "abstract_description",
        &["abstract_description", "abstract_vulnerability_description", "abstract vulnerability description"],
    ),
    (
        "detailed_description",
        &["detailed_description", "detailed_vulnerability_description", "detailed vulnerability description"],
    ),
    ("solution", &["solution", "solution_description", "fixing_solution", "fixing solution"]),
];

/// Pulls the four knowledge fields out of the first JSON object in `text`
/// that carries all of them. Keys may be nested one or more levels deep and
/// may use a few common spellings. Arrays of strings are joined with spaces.
pub fn parse_extracted_knowledge(text: &str) -> Option<ExtractedKnowledge> {
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(v)) = stream.next() else {
            continue;
        };
        let get = |aliases: &[&str]| find_key(&v, aliases).filter(|s| !s.trim().is_empty());
        let vals: Option<Vec<String>> = KEY_ALIASES.iter().map(|(_, a)| get(a)).collect();
        if let Some(vals) = vals {
            let mut it = vals.into_iter();
            return Some(ExtractedKnowledge {
                triggering_action: it.next()?,
                abstract_description: it.next()?,
                detailed_description: it.next()?,
                solution: it.next()?,
            });
        }
    }
    None
}

fn find_key(v: &Value, aliases: &[&str]) -> Option<String> {
    let obj = v.as_object()?;
    for (k, val) in obj {
        let norm = k.to_ascii_lowercase();
        if aliases.iter().any(|a| *a == norm) {
            if let Some(s) = as_text(val) {
                return Some(s);
            }
        }
    }
    obj.values().find_map(|child| find_key(child, aliases))
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Array(a) => {
            let parts: Option<Vec<&str>> = a.iter().map(Value::as_str).collect();
            parts.map(|p| p.join(" "))
        }
        _ => None,
    }
}
