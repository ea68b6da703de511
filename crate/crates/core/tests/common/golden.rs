//! Prompt golden files: the assembled prompts and where they live.

use std::path::{Path, PathBuf};

use vulrag::prompts;

const CODE: &str = "static int sensor_read(struct sensor *s)\n{\n\treturn s->buf[s->pos];\n}";
const PATCHED: &str = "static int sensor_read(struct sensor *s)\n{\n\tif (!s->buf)\n\t\treturn -ENODEV;\n\treturn s->buf[s->pos];\n}";
const DIFF: &str = "@@ -1,4 +1,6 @@\n static int sensor_read(struct sensor *s)\n {\n+\tif (!s->buf)\n+\t\treturn -ENODEV;\n \treturn s->buf[s->pos];\n }\n";
const CWE: &str = "NULL Pointer Dereference: The product dereferences a pointer that it expects to be valid but is NULL.";
const KNOW: &str = "{\n  \"vulnerability_causes\": {\n    \"triggering_action\": \"reading the buffer\"\n  },\n  \"fixing_solution\": \"check the buffer\"\n}";

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn assembled() -> Vec<(&'static str, String)> {
    vec![
        ("basic", prompts::basic(CODE)),
        ("cot1", prompts::cot1(CODE)),
        ("cot2", prompts::cot2(CODE)),
        ("cwe_enhanced", prompts::cwe_enhanced(CODE, CWE)),
        ("purpose", prompts::purpose(CODE)),
        ("behavior", prompts::behavior(CODE)),
        (
            "extraction_round1",
            prompts::extraction_round1("CVE-2021-0001", CODE, " A NULL pointer dereference in the sensor read path.", DIFF, PATCHED),
        ),
        (
            "extraction_round2",
            prompts::extraction_round2(r#"{"triggering_action": "example one"}"#, r#"{"triggering_action": "example two"}"#),
        ),
        ("abstraction", prompts::abstraction("### Guidelines:\n- Replace concrete names with their role.", KNOW)),
        ("find_cause", prompts::find_cause(CODE, KNOW)),
        ("find_fix", prompts::find_fix(CODE, KNOW)),
        ("find_cause_and_fix", prompts::find_cause_and_fix(CODE, KNOW)),
        ("code_rag", prompts::code_rag(CODE, "CVE-2020-0002", CODE, Some(PATCHED))),
        ("code_rag_no_patch", prompts::code_rag(CODE, "CVE-2020-0002", CODE, None)),
    ]
}

/// Golden files that differ from the assembled prompt, with the first
/// differing byte. With `update` set the files are rewritten instead.
pub fn mismatches(update: bool) -> Vec<String> {
    let mut out = Vec::new();
    for (name, text) in assembled() {
        let path = golden_dir().join("prompts").join(format!("{name}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(want) if want == text => {}
            Ok(want) => {
                let at = want.bytes().zip(text.bytes()).position(|(a, b)| a != b).unwrap_or(want.len().min(text.len()));
                out.push(format!("{name}: first difference at byte {at}"));
            }
            Err(e) => out.push(format!("{}: {e}", path.display())),
        }
    }
    out
}
