//! Minimal unified-diff application, enough to check that a record's
//! `patch_diff` turns its vulnerable function into its patched function.
//!
//! Two inputs are accepted: ordinary unified diffs with `@@ -a,b +c,d @@`
//! hunk headers (file headers such as `---`/`+++`/`diff --git` are skipped),
//! and header-less line diffs where every line carries a ` `, `+` or `-`
//! prefix and the whole text is one hunk located by content.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed hunk header {0:?}")]
    BadHeader(String),
    #[error("hunk {hunk} does not match the source text")]
    NoMatch { hunk: usize },
    #[error("hunk {hunk} body is shorter than its header claims")]
    Truncated { hunk: usize },
    #[error("diff contains no hunks")]
    Empty,
}

#[derive(Debug, Default)]
struct Hunk {
    /// 1-based start line in the old text; `None` for header-less diffs.
    old_start: Option<usize>,
    old: Vec<String>,
    new: Vec<String>,
    old_no_eol: bool,
    new_no_eol: bool,
    last_kind: Option<char>,
}

pub fn apply_unified(source: &str, diff: &str) -> Result<String, DiffError> {
    let hunks = parse(diff)?;

    let trailing_nl = source.ends_with('\n');
    let body = if trailing_nl { &source[..source.len() - 1] } else { source };
    let mut lines: Vec<String> = if source.is_empty() {
        Vec::new()
    } else {
        body.split('\n').map(str::to_owned).collect()
    };

    let mut out_trailing_nl = trailing_nl;
    // Offset accumulated from earlier hunks (new length minus old length).
    let mut delta: isize = 0;
    let mut cursor = 0usize;
    for (i, h) in hunks.iter().enumerate() {
        let hint = match h.old_start {
            Some(s) if h.old.is_empty() => (s as isize + delta).max(0) as usize,
            Some(s) => (s as isize - 1 + delta).max(0) as usize,
            None => cursor,
        };
        let at = locate(&lines, &h.old, hint, cursor).ok_or(DiffError::NoMatch { hunk: i + 1 })?;
        lines.splice(at..at + h.old.len(), h.new.iter().cloned());
        cursor = at + h.new.len();
        delta += h.new.len() as isize - h.old.len() as isize;
        if h.new_no_eol {
            out_trailing_nl = false;
        } else if h.old_no_eol {
            out_trailing_nl = true;
        }
    }

    let mut out = lines.join("\n");
    if out_trailing_nl && !lines.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

/// Finds `needle` in `lines` at or after `floor`, preferring the position
/// closest to `hint`.
fn locate(lines: &[String], needle: &[String], hint: usize, floor: usize) -> Option<usize> {
    let fits = |at: usize| at + needle.len() <= lines.len() && lines[at..at + needle.len()] == *needle;
    if needle.is_empty() {
        return Some(hint.clamp(floor, lines.len()));
    }
    let hint = hint.max(floor);
    let max = lines.len().saturating_sub(needle.len());
    for d in 0..=lines.len() {
        if hint + d <= max && fits(hint + d) {
            return Some(hint + d);
        }
        if d > 0 && hint >= d && hint - d >= floor && fits(hint - d) {
            return Some(hint - d);
        }
    }
    None
}

fn parse(diff: &str) -> Result<Vec<Hunk>, DiffError> {
    let lines: Vec<&str> = diff.lines().collect();
    if lines.iter().any(|l| l.starts_with("@@")) {
        parse_with_headers(&lines)
    } else {
        let mut h = Hunk::default();
        let mut any = false;
        for l in &lines {
            if l.starts_with("---") || l.starts_with("+++") || l.starts_with("diff ") || l.starts_with("index ") {
                continue;
            }
            any |= push_body_line(&mut h, l);
        }
        if !any {
            return Err(DiffError::Empty);
        }
        Ok(vec![h])
    }
}

fn parse_with_headers(lines: &[&str]) -> Result<Vec<Hunk>, DiffError> {
    let mut hunks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let l = lines[i];
        i += 1;
        if !l.starts_with("@@") {
            continue;
        }
        let (old_start, old_len, new_len) = parse_header(l)?;
        let mut h = Hunk { old_start: Some(old_start), ..Hunk::default() };
        while h.old.len() < old_len || h.new.len() < new_len {
            let Some(body) = lines.get(i) else {
                return Err(DiffError::Truncated { hunk: hunks.len() + 1 });
            };
            if body.starts_with("@@") {
                return Err(DiffError::Truncated { hunk: hunks.len() + 1 });
            }
            push_body_line(&mut h, body);
            i += 1;
        }
        if let Some(next) = lines.get(i) {
            if next.starts_with('\\') {
                push_body_line(&mut h, next);
                i += 1;
            }
        }
        hunks.push(h);
    }
    if hunks.is_empty() {
        return Err(DiffError::Empty);
    }
    Ok(hunks)
}

/// Returns whether the line contributed content.
fn push_body_line(h: &mut Hunk, l: &str) -> bool {
    let kind = l.chars().next();
    match kind {
        Some(' ') => {
            h.old.push(l[1..].to_owned());
            h.new.push(l[1..].to_owned());
        }
        // Some tools strip the single space from blank context lines.
        None => {
            h.old.push(String::new());
            h.new.push(String::new());
        }
        Some('-') => h.old.push(l[1..].to_owned()),
        Some('+') => h.new.push(l[1..].to_owned()),
        // "\ No newline at end of file" qualifies the preceding line.
        Some('\\') => {
            match h.last_kind {
                Some('-') => h.old_no_eol = true,
                Some('+') => h.new_no_eol = true,
                Some(_) => {
                    h.old_no_eol = true;
                    h.new_no_eol = true;
                }
                None => {}
            }
            return false;
        }
        _ => return false,
    }
    h.last_kind = Some(kind.unwrap_or(' '));
    true
}

fn parse_header(l: &str) -> Result<(usize, usize, usize), DiffError> {
    let bad = || DiffError::BadHeader(l.to_owned());
    let inner = l.strip_prefix("@@").and_then(|r| r.split("@@").next()).ok_or_else(bad)?;
    let mut parts = inner.split_whitespace();
    let old = parts.next().and_then(|p| p.strip_prefix('-')).ok_or_else(bad)?;
    let new = parts.next().and_then(|p| p.strip_prefix('+')).ok_or_else(bad)?;
    let range = |r: &str| -> Result<(usize, usize), DiffError> {
        match r.split_once(',') {
            Some((s, n)) => Ok((s.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?)),
            None => Ok((r.parse().map_err(|_| bad())?, 1)),
        }
    };
    let (os, ol) = range(old)?;
    let (_, nl) = range(new)?;
    Ok((os, ol, nl))
}
