use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    Unparsed,
}

/// Reads a final yes/no commitment from a model answer.
///
/// The last standalone `yes` or `no` (any case) wins. If the sentence holding
/// it also contains the opposite word, or neither word occurs at all, the
/// answer is `Unparsed`. Sentences end at `.`, `!`, `?` or a newline.
pub fn parse_yes_no(text: &str) -> Answer {
    let Some((pos, answer)) = words(text).filter_map(|(i, w)| classify(w).map(|a| (i, a))).last() else {
        return Answer::Unparsed;
    };
    let is_end = |c: char| matches!(c, '.' | '!' | '?' | '\n');
    let start = text[..pos].rfind(is_end).map_or(0, |i| i + 1);
    let end = text[pos..].find(is_end).map_or(text.len(), |i| pos + i);
    let conflicting = words(&text[start..end]).any(|(_, w)| classify(w).is_some_and(|a| a != answer));
    if conflicting {
        Answer::Unparsed
    } else {
        answer
    }
}

fn classify(word: &str) -> Option<Answer> {
    if word.eq_ignore_ascii_case("yes") {
        Some(Answer::Yes)
    } else if word.eq_ignore_ascii_case("no") {
        Some(Answer::No)
    } else {
        None
    }
}

/// Alphabetic runs with their byte offsets.
fn words(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out.into_iter()
}

/// Reads the two lines of a combined cause/fix answer (`Cause: YES`,
/// `Fix: NO`). A missing line is `Unparsed`.
pub fn parse_cause_fix(text: &str) -> (Answer, Answer) {
    let line_answer = |label: &str| {
        text.lines()
            .rev()
            .find_map(|l| {
                let t = l.trim().trim_start_matches(['*', '-', '#', ' ']);
                let head = t.get(..label.len())?;
                head.eq_ignore_ascii_case(label).then(|| &t[label.len()..])
            })
            .map_or(Answer::Unparsed, parse_yes_no)
    };
    (line_answer("cause:"), line_answer("fix:"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Answer::*;

    #[test]
    fn examples() {
        assert_eq!(parse_yes_no("...therefore the answer is YES."), Yes);
        assert_eq!(parse_yes_no("No."), No);
        assert_eq!(parse_yes_no("It could be yes or no depending on the caller."), Unparsed);
        assert_eq!(parse_yes_no(""), Unparsed);
        assert_eq!(parse_yes_no("The lock is not held."), Unparsed);
    }

    #[test]
    fn last_commitment_wins_across_sentences() {
        assert_eq!(parse_yes_no("No obvious issue at first. After review: YES"), Yes);
        assert_eq!(parse_yes_no("Yes, the pattern matches.\nFinal answer: **NO**"), No);
    }

    #[test]
    fn substrings_do_not_count() {
        assert_eq!(parse_yes_no("None of the nodes. Notably yesterday."), Unparsed);
        assert_eq!(parse_yes_no("kno no-op"), No);
    }

    #[test]
    fn combined_lines() {
        assert_eq!(parse_cause_fix("Cause: YES\nFix: NO"), (Yes, No));
        assert_eq!(parse_cause_fix("**Cause:** no\n- fix: yes, it checks"), (No, Yes));
        assert_eq!(parse_cause_fix("YES"), (Unparsed, Unparsed));
    }
}
