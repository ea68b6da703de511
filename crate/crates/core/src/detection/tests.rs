use std::sync::Arc;

use super::*;
use crate::gateway::{ChatRequest, ChatResponse, ReplayCache};
use crate::knowledge::{FixingSolution, KnowledgeItem, Source, VulnerabilityCauses};

const CODE: &str = "static void dev_release(struct dev *d) { mutex_lock(&d->lock); kfree(d->buf); }";

/// Knowledge items carry their scripted answers in the triggering action:
/// `cause=yes fix=no` and so on.
fn item(id: &str, answers: &str) -> KnowledgeItem {
    KnowledgeItem {
        item_id: id.into(),
        source: Source { cve_id: format!("CVE-2021-{id}"), instance_id: id.into() },
        cwe_id: "CWE-416".into(),
        semantics: FunctionalSemantics {
            abstract_purpose: "Release a device and free its buffer.".into(),
            detailed_behavior: vec!["takes the device lock".into(), "frees the buffer".into()],
        },
        causes: VulnerabilityCauses {
            triggering_action: answers.into(),
            abstract_description: "missing synchronization".into(),
            detailed_description: "buffer freed while still in use".into(),
        },
        fix: FixingSolution { solution_description: "cancel pending users first".into() },
        source_vulnerable_code: CODE.replace("dev_release", &format!("release_{id}")),
        source_patched_code: format!("/* patched {id} */"),
        abstraction_applied: true,
        pre_abstraction: None,
    }
}

fn model(req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let p = &req.messages[0].content;
    let pick = |key: &str| {
        let at = p.find(key).map(|i| i + key.len());
        at.map(|i| if p[i..].starts_with("yes") { "YES" } else if p[i..].starts_with("no") { "NO" } else { "maybe" })
    };
    let text = if p.ends_with("format: \"Function purpose:\".") {
        "Function purpose: Release a device and free its buffer.".to_string()
    } else if p.contains("in the list format") {
        "1. takes the device lock 2. frees the buffer".to_string()
    } else if p.contains(prompts::COMBINED_ANSWER_FORMAT) {
        format!("Cause: {}\nFix: {}", pick("cause=").unwrap(), pick("fix=").unwrap())
    } else if p.contains("vulnerability caused") {
        format!("Conclusion: {}", pick("cause=").unwrap())
    } else if p.contains("corresponding fixing solution") {
        format!("Conclusion: {}", pick("fix=").unwrap())
    } else if p.contains("gateway-down") {
        return Err(GatewayError::Status { code: 400, body: "bad".into() });
    } else if p.contains("ambiguous") {
        "could be yes or no".to_string()
    } else {
        "After analysis: NO".to_string()
    };
    Ok(ChatResponse::complete(text))
}

fn gateway() -> Gateway {
    Gateway::live(Box::new(model), Some(Arc::new(ReplayCache::in_memory())))
}

fn detector<'a>(gw: &'a Gateway, kb: &'a KnowledgeBase, idx: &'a KnowledgeIndex) -> Detector<'a> {
    Detector {
        gateway: gw,
        settings: ModelSettings::default(),
        kb: Some(kb),
        index: Some(idx),
        retrieval: RetrievalSettings::default(),
        combined: false,
        cwe_descriptions: None,
    }
}

fn kb_of(answers: &[&str]) -> KnowledgeBase {
    KnowledgeBase::new(answers.iter().enumerate().map(|(i, a)| item(&format!("k{i:02}"), a)).collect())
}

fn input(code_ref: &str, code: &str) -> CodeInput {
    CodeInput { code_ref: code_ref.into(), code: code.into(), cwe_id: Some("CWE-416".into()) }
}

#[test]
fn first_deciding_item_stops_the_loop() {
    let kb = kb_of(&["cause=yes fix=no", "cause=yes fix=no", "cause=no"]);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let v = detector(&gw, &kb, &idx).detect_vul_rag("c", CODE).unwrap();
    assert_eq!(v.label, Label::Vulnerable);
    assert_eq!(v.deciding_item.as_deref(), Some("k00"));
    assert_eq!(v.judgments.len(), 1);
    assert_eq!(v.judgments[0].transcripts.len(), 2);
    // purpose, behavior, cause, fix
    assert_eq!(gw.call_log().len(), 4);
}

#[test]
fn exhausting_candidates_gives_non_vulnerable() {
    let answers: Vec<&str> = (0..12).map(|i| if i % 2 == 0 { "cause=yes fix=yes" } else { "cause=no" }).collect();
    let kb = kb_of(&answers);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let v = detector(&gw, &kb, &idx).detect_vul_rag("c", CODE).unwrap();
    assert_eq!((v.label, v.deciding_item.as_deref()), (Label::NonVulnerable, None));
    assert_eq!(v.judgments.len(), 10);
    // fix is asked only after a yes on the cause
    let asked = v.judgments.iter().filter(|j| j.fix_applied.is_some()).count();
    assert_eq!(2 + 10 + asked, gw.call_log().len());
    assert_eq!(derive_label(&v.judgments), (v.label, v.deciding_item.clone()));
}

#[test]
fn later_item_can_decide() {
    let kb = kb_of(&["cause=no", "cause=maybe", "cause=yes fix=maybe", "cause=yes fix=no"]);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let v = detector(&gw, &kb, &idx).detect_vul_rag("c", CODE).unwrap();
    let causes: Vec<_> = v.judgments.iter().map(|j| j.cause_present).collect();
    assert_eq!(causes, [Answer::No, Answer::Unparsed, Answer::Yes, Answer::Yes]);
    assert_eq!(v.judgments[2].fix_applied, Some(Answer::Unparsed));
    assert_eq!(v.deciding_item.as_deref(), Some("k03"));
}

#[test]
fn empty_retrieval_is_vacuously_benign() {
    let kb = KnowledgeBase::new(vec![]);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let v = detector(&gw, &kb, &idx).detect_vul_rag("c", CODE).unwrap();
    assert_eq!(v.label, Label::NonVulnerable);
    assert!(v.judgments.is_empty());
}

#[test]
fn combined_mode_uses_one_call_per_item() {
    let kb = kb_of(&["cause=yes fix=yes", "cause=yes fix=no"]);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let d = Detector { combined: true, ..detector(&gw, &kb, &idx) };
    let v = d.detect_vul_rag("c", CODE).unwrap();
    assert_eq!(v.deciding_item.as_deref(), Some("k01"));
    assert!(v.judgments.iter().all(|j| j.transcripts.len() == 1));
    assert_eq!(gw.call_log().len(), 4);
}

#[test]
fn baselines() {
    let kb = kb_of(&["cause=no"]);
    let idx = KnowledgeIndex::build(&kb);
    let gw = gateway();
    let d = detector(&gw, &kb, &idx);
    let v = d.detect_baseline(&input("c", CODE), Strategy::Basic).unwrap();
    assert_eq!(v.label, Label::NonVulnerable);
    assert_eq!(v.baseline.unwrap().prompt, prompts::basic(CODE));

    assert!(matches!(d.detect_baseline(&input("c", CODE), Strategy::CweEnhanced), Err(DetectionError::Precondition(_))));
    let cwe = CweDescriptions::builtin();
    let with_cwe = Detector { cwe_descriptions: Some(&cwe), ..detector(&gw, &kb, &idx) };
    let v = with_cwe.detect_baseline(&input("c", CODE), Strategy::CweEnhanced).unwrap();
    assert!(v.baseline.unwrap().prompt.contains("### CWE Description: Use After Free"));

    let v = d.detect_baseline(&input("c", CODE), Strategy::CodeRag).unwrap();
    assert_eq!(v.context_item.as_deref(), Some("k00"));
    assert!(v.baseline.unwrap().prompt.contains(&kb.items[0].source_vulnerable_code));

    let err = d.detect_baseline(&input("c", "int ambiguous;"), Strategy::Cot1).unwrap_err();
    assert!(matches!(err, DetectionError::Unparsed(_)));
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.cli_name().parse::<Strategy>().unwrap(), s);
    }
    assert_eq!("cwe_enhanced".parse::<Strategy>().unwrap(), Strategy::CweEnhanced);
    assert!("magic".parse::<Strategy>().is_err());
}

mod batch {
    use super::*;
    use crate::artifact::ArtifactHeader;

    fn header() -> ArtifactHeader {
        ArtifactHeader::new(VERDICT_ARTIFACT, VERDICT_SCHEMA_VERSION, &"test")
    }

    fn inputs() -> Vec<CodeInput> {
        vec![
            input("a", "int a(void) { return 1; }"),
            input("b", "int b(void) { gateway-down; }"),
            input("c", "int c(void) { return 3; }"),
            input("d", "int d(void) { return 4; }"),
        ]
    }

    #[test]
    fn runs_resumes_and_keeps_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("verdicts.jsonl");
        let kb = kb_of(&["cause=no"]);
        let idx = KnowledgeIndex::build(&kb);
        let gw = gateway();
        let d = detector(&gw, &kb, &idx);
        let run = |ins: &[CodeInput]| run_batch(ins, 3, &out, &header(), &|i| d.detect_record(i, Strategy::Basic)).unwrap();

        // "interrupted" after the first two inputs
        let first = run(&inputs()[..2]);
        assert_eq!((first.ran, first.resumed), (2, 0));

        let second = run(&inputs());
        // a was done; b failed and runs again; c, d are new
        assert_eq!((second.ran, second.resumed), (3, 1));
        let refs: Vec<_> = second.records.iter().map(|r| r.code_ref()).collect();
        assert_eq!(refs, ["a", "b", "c", "d"]);
        assert!(matches!(second.records[1], VerdictRecord::Error { .. }));
        assert_eq!(second.records.iter().filter(|r| matches!(r, VerdictRecord::Ok(_))).count(), 3);

        let bytes = std::fs::read(&out).unwrap();
        let third = run(&inputs());
        assert_eq!((third.ran, third.resumed), (1, 3));
        assert_eq!(std::fs::read(&out).unwrap(), bytes);
        assert_eq!(read_verdicts(&out).unwrap().1, third.records);
    }

    #[test]
    fn torn_last_line_is_ignored_on_resume() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("v.jsonl");
        let kb = kb_of(&["cause=no"]);
        let idx = KnowledgeIndex::build(&kb);
        let gw = gateway();
        let d = detector(&gw, &kb, &idx);
        let ins = [input("a", "int a;"), input("c", "int c;")];
        run_batch(&ins[..1], 1, &out, &header(), &|i| d.detect_record(i, Strategy::Basic)).unwrap();
        let mut text = std::fs::read_to_string(&out).unwrap();
        text.push_str("{\"status\":\"ok\",\"code_r");
        std::fs::write(&out, text).unwrap();
        let r = run_batch(&ins, 1, &out, &header(), &|i| d.detect_record(i, Strategy::Basic)).unwrap();
        assert_eq!((r.ran, r.resumed), (1, 1));
    }

    #[test]
    fn duplicate_refs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ins = [input("a", "x"), input("a", "y")];
        assert!(run_batch(&ins, 1, &dir.path().join("v.jsonl"), &header(), &|_| unreachable!()).is_err());
    }
}
