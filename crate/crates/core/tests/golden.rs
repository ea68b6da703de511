//! Golden files: prompt assembly byte for byte, and the yes/no reading of
//! a corpus of model answers. Set `UPDATE_GOLDEN=1` to rewrite the prompt
//! files after an intended template change.

mod common;

use common::golden::{assembled, golden_dir, mismatches};
use vulrag::detection::{parse_yes_no, Answer};

#[test]
fn prompts_match_golden_files() {
    let bad = mismatches(std::env::var_os("UPDATE_GOLDEN").is_some());
    assert!(bad.is_empty(), "{bad:#?}");
}
#[test]
fn every_golden_file_is_checked() {
    let names: Vec<_> = assembled().into_iter().map(|(n, _)| format!("{n}.txt")).collect();
    for entry in std::fs::read_dir(golden_dir().join("prompts")).unwrap() {
        let file = entry.unwrap().file_name().to_string_lossy().into_owned();
        assert!(names.contains(&file), "stale golden file {file}");
    }
}

#[test]
fn yes_no_corpus() {
    let text = std::fs::read_to_string(golden_dir().join("yes_no.jsonl")).unwrap();
    let mut wrong = Vec::new();
    for line in text.lines() {
        let case: serde_json::Value = serde_json::from_str(line).unwrap();
        let expect = match case["expect"].as_str().unwrap() {
            "yes" => Answer::Yes,
            "no" => Answer::No,
            _ => Answer::Unparsed,
        };
        let input = case["text"].as_str().unwrap();
        let got = parse_yes_no(input);
        if got != expect {
            wrong.push(format!("{input:?}: expected {expect:?}, got {got:?}"));
        }
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
}
