//! Shared pieces of the end-to-end fixture: a scripted model that stands in
//! for the hosted one, and the five-stage pipeline run over the fixture.
#![allow(dead_code)]

pub mod golden;

use std::path::{Path, PathBuf};

use vulrag::config::{self, RunConfig};
use vulrag::detection::{DetectionVerdict, Strategy, VerdictRecord};
use vulrag::gateway::{ChatRequest, ChatResponse, Gateway, GatewayError};
use vulrag::pipeline::{self, DetectInputs, PipelineError};
use vulrag::prompts;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

pub fn replay_cache() -> PathBuf {
    fixture_dir().join("replay.jsonl")
}

/// The settings the shipped cache was recorded with.
pub fn fixture_config(cache: &Path) -> RunConfig {
    let file = fixture_dir().join("run.toml");
    config::load_config(Some(&file), Vec::new(), [("gateway.cache", cache.display().to_string())]).unwrap()
}

/// Hazard call, guard text, and the knowledge the model "learns" from a fix
/// that adds the guard.
struct Hazard {
    call: &'static str,
    guard: &'static str,
    trigger: &'static str,
    summary: &'static str,
    detail: &'static str,
    solution: &'static str,
}

const HAZARDS: [Hazard; 3] = [
    Hazard {
        call: "kfree",
        guard: "cancel_work_sync",
        trigger: "Freeing an object with `kfree` while deferred work that uses it may still be queued or running.",
        summary: "Use after free caused by releasing memory before stopping its asynchronous users.",
        detail: "the object is freed while a work item can still dereference it.",
        solution: "Call `cancel_work_sync` on every work item that touches the object before freeing it.",
    },
    Hazard {
        call: "dev_get_drvdata",
        guard: "if (!priv)",
        trigger: "Dereferencing the pointer returned by `dev_get_drvdata` without checking it.",
        summary: "NULL pointer dereference of optional driver data.",
        detail: "the private data is used although it is NULL when the device is not bound.",
        solution: "Check the driver data with `if (!priv)` and return an error before any use.",
    },
    Hazard {
        call: "memcpy",
        guard: "if (len >",
        trigger: "Copying a caller supplied length with `memcpy` into a fixed size buffer.",
        summary: "Out-of-bounds write from an unchecked copy length.",
        detail: "the copy length is never compared with the size of the destination.",
        solution: "Reject lengths larger than the destination with an `if (len >` size check before copying.",
    },
];

fn hazard_in(code: &str) -> Option<&'static Hazard> {
    HAZARDS.iter().find(|h| code.contains(h.call))
}

fn hazard_named_in(knowledge: &str) -> Option<&'static Hazard> {
    HAZARDS.iter().find(|h| knowledge.contains(&format!("`{}`", h.call)))
}

fn function_name(code: &str) -> &str {
    let head = code.lines().find(|l| l.contains('(') && !l.trim_start().starts_with("/*")).unwrap_or("");
    let before = head.split('(').next().unwrap_or("");
    before.rsplit([' ', '*']).next().unwrap_or("")
}

fn yes_no(b: bool) -> &'static str {
    if b { "YES" } else { "NO" }
}

fn ok(text: String) -> Result<ChatResponse, GatewayError> {
    Ok(ChatResponse::complete(text))
}

const SCENARIO: &str = ". In a similar code scenario, the following vulnerabilities have been found: ";

/// A deterministic stand-in for the model, answering every prompt the
/// pipeline sends for the fixture.
pub fn fixture_model(req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let p = &req.messages.last().expect("non-empty request").content;

    if let Some(code) = p.strip_suffix(&format!(" {}", prompts::PURPOSE_QUESTION)) {
        let comment = code.split("/*").nth(1).and_then(|s| s.split("*/").next()).unwrap_or("handle a request");
        return ok(format!("Function purpose: The function is used to {}.", comment.trim()));
    }
    if let Some(code) = p.strip_suffix(&format!(" {}", prompts::BEHAVIOR_QUESTION)) {
        let steps: Vec<String> = code
            .lines()
            .map(str::trim)
            .filter(|l| l.ends_with(';') || l.starts_with("if ("))
            .take(4)
            .enumerate()
            .map(|(i, l)| format!("{}. Executes `{}`", i + 1, l))
            .collect();
        return ok(format!("{} {}", prompts::BEHAVIOR_LABEL, steps.join(" ")));
    }
    if p.starts_with("This is a code snippet with a vulnerability") {
        let h = hazard_in(p).ok_or_else(|| GatewayError::InvalidRequest("no known hazard".into()))?;
        return ok(format!(
            "The patch adds `{}` so that the `{}` call in `{}` can no longer operate on invalid memory.",
            h.guard,
            h.call,
            function_name(p.split_once(":\n").map_or(p.as_str(), |x| x.1))
        ));
    }
    if p.starts_with("I want you to act as a vulnerability detection expert and organize") || p == prompts::FORMAT_REMINDER {
        let round1 = &req.messages[0].content;
        let vulnerable = round1.split_once(":\n").map_or("", |x| x.1);
        let h = hazard_in(vulnerable).ok_or_else(|| GatewayError::InvalidRequest("no known hazard".into()))?;
        let v = serde_json::json!({
            "triggering_action": h.trigger,
            "abstract_description": h.summary,
            "detailed_description": format!("In `{}`, {}", function_name(vulnerable), h.detail),
            "solution": h.solution,
        });
        return ok(format!("```json\n{}\n```", serde_json::to_string_pretty(&v).unwrap()));
    }
    if let Some((_, rest)) = p.split_once("### Vulnerability Knowledge:\n") {
        let json = rest.split("\n\nReturn the abstracted").next().unwrap_or(rest);
        let mut v: serde_json::Value =
            serde_json::from_str(json).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let detail = v["detailed_description"].as_str().unwrap_or("").to_string();
        let general = match detail.split_once("`, ") {
            Some((_, tail)) if detail.starts_with("In `") => format!("In a function of this kind, {tail}"),
            _ => detail,
        };
        v["detailed_description"] = general.into();
        return ok(serde_json::to_string_pretty(&v).unwrap());
    }
    if p.starts_with("Given the following code and related vulnerability") {
        let (code, knowledge) = p.split_once(SCENARIO).ok_or_else(|| GatewayError::InvalidRequest("shape".into()))?;
        let h = hazard_named_in(knowledge);
        let cause = h.is_some_and(|h| code.contains(h.call));
        let fix = h.is_some_and(|h| code.contains(h.guard));
        if p.contains(prompts::COMBINED_ANSWER_FORMAT) {
            return ok(format!("Cause: {}\nFix: {}", yes_no(cause), yes_no(fix)));
        }
        let answer = if p.contains("corresponding fixing solution") { fix } else { cause };
        return ok(format!("After comparing the code with the knowledge. Conclusion: {}", yes_no(answer)));
    }
    if p.contains("### Code Snippet: \n") {
        // A naive reviewer: any risky call is a finding.
        let risky = hazard_in(p.split("### Code Snippet: \n").last().unwrap_or("")).is_some();
        return ok(format!("The code calls routines that handle memory. Answer: {}", yes_no(risky)));
    }
    Err(GatewayError::InvalidRequest(format!("fixture model has no answer for: {}", &p[..p.len().min(80)])))
}

/// Artifacts of one full pipeline run.
pub struct E2eRun {
    pub dir: PathBuf,
    pub kb: PathBuf,
    pub verdicts: PathBuf,
    pub basic_verdicts: PathBuf,
    pub report: PathBuf,
}

impl E2eRun {
    pub fn vul_rag_verdicts(&self) -> Vec<DetectionVerdict> {
        let (_, records) = vulrag::detection::read_verdicts(&self.verdicts).unwrap();
        records
            .into_iter()
            .map(|r| match r {
                VerdictRecord::Ok(v) => v,
                VerdictRecord::Error { code_ref, error, .. } => panic!("{code_ref}: {error}"),
            })
            .collect()
    }
}

/// build-bench, build-kb, index, detect (Vul-RAG and the basic baseline) and
/// eval over the fixture records, all inside `dir`.
pub fn run_pipeline(dir: &Path, cfg: &RunConfig, gw: &Gateway) -> Result<E2eRun, PipelineError> {
    let bench = dir.join("bench");
    pipeline::build_bench(&fixture_dir().join("records.jsonl"), &bench, cfg)?;
    let kb_path = dir.join("kb.jsonl");
    let built = pipeline::build_kb(&bench.join("train.jsonl"), None, &kb_path, cfg, gw)?;
    assert!(built.failures.is_empty(), "{:?}", built.failures);
    let idx = pipeline::index(&kb_path, &dir.join("idx"), cfg)?;
    let kb = pipeline::load_kb(&kb_path)?;
    let test = pipeline::read_split(&bench.join("test.jsonl"))?;
    let codes = pipeline::inputs_from_bench(&test);

    let verdicts = dir.join("verdicts.jsonl");
    let inputs = || DetectInputs { codes: &codes, kb: Some(&kb), index: Some(&idx) };
    pipeline::detect(inputs(), Strategy::VulRag, &verdicts, cfg, gw)?;
    let basic_verdicts = dir.join("verdicts-basic.jsonl");
    pipeline::detect(inputs(), Strategy::Basic, &basic_verdicts, cfg, gw)?;

    let report = dir.join("report.json");
    pipeline::eval(&verdicts, &bench.join("test.jsonl"), &report, None)?;
    Ok(E2eRun { dir: dir.to_path_buf(), kb: kb_path, verdicts, basic_verdicts, report })
}
