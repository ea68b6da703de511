mod common;

use std::sync::Arc;

use common::*;
use vulrag::config::GatewayMode;
use vulrag::detection::Label;
use vulrag::gateway::{Gateway, ReplayCache};
use vulrag::pipeline;

/// Records the shipped replay cache by running the pipeline against the
/// scripted model. Run it after changing a prompt or the fixture:
/// `cargo test -p vulrag --test e2e -- --ignored regenerate`.
#[test]
#[ignore = "rewrites tests/fixtures/e2e/replay.jsonl"]
fn regenerate_replay_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ReplayCache::in_memory());
    let cfg = fixture_config(&replay_cache());
    let gw = Gateway::live(Box::new(fixture_model), Some(cache.clone()));
    run_pipeline(dir.path(), &cfg, &gw).unwrap();
    cache.save(replay_cache()).unwrap();
}

fn replay_run(dir: &std::path::Path) -> E2eRun {
    let cfg = fixture_config(&replay_cache());
    assert_eq!(cfg.gateway.mode, GatewayMode::Replay);
    let gw = pipeline::make_gateway(&cfg).unwrap();
    let run = run_pipeline(dir, &cfg, &gw).unwrap();
    assert!(gw.call_log().iter().all(|c| c.cached));
    run
}

#[test]
fn replayed_pipeline_matches_the_scripted_model() {
    let replayed = tempfile::tempdir().unwrap();
    let a = replay_run(replayed.path());

    let live = tempfile::tempdir().unwrap();
    let gw = Gateway::live(Box::new(fixture_model), None);
    let b = run_pipeline(live.path(), &fixture_config(&replay_cache()), &gw).unwrap();
    for (x, y) in [(&a.kb, &b.kb), (&a.verdicts, &b.verdicts), (&a.report, &b.report)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn fixture_bench_drops_chain_head_loop_and_malformed_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(&replay_cache());
    let out = pipeline::build_bench(&fixture_dir().join("records.jsonl"), dir.path(), &cfg).unwrap();
    assert_eq!(out.records_in, 10);
    assert_eq!((out.train, out.test), (3, 3));
    let mut kinds: Vec<String> = out
        .rejections
        .iter()
        .map(|r| match r {
            pipeline::Rejection::Malformed { cve_id, .. } => format!("malformed {}", cve_id.as_deref().unwrap_or("?")),
            pipeline::Rejection::Reverted { instance_id, .. } => format!("reverted {instance_id}"),
            pipeline::Rejection::TooLong { instance_id } => format!("long {instance_id}"),
        })
        .collect();
    kinds.sort();
    assert_eq!(kinds, ["malformed CVE-2022-3000", "reverted ctl-1", "reverted ctl-2", "reverted sensor-1"]);
}

#[test]
fn vul_rag_separates_every_fixture_pair_and_the_naive_baseline_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let run = replay_run(dir.path());
    let verdicts = run.vul_rag_verdicts();
    assert_eq!(verdicts.len(), 6);
    for v in &verdicts {
        let expect = if v.code_ref.ends_with(":vulnerable") { Label::Vulnerable } else { Label::NonVulnerable };
        assert_eq!(v.label, expect, "{}", v.code_ref);
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&run.report).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["overall"]["pair_accuracy"], 1.0);

    let (_, basic) = vulrag::detection::read_verdicts(&run.basic_verdicts).unwrap();
    let m = vulrag::metrics::build_reports(&basic, &pipeline::read_split(&run.dir.join("bench/test.jsonl")).unwrap(), None);
    assert_eq!(m[0].overall.pair_accuracy, Some(0.0));
}

#[test]
fn knowledge_items_are_complete_and_abstracted() {
    let dir = tempfile::tempdir().unwrap();
    let run = replay_run(dir.path());
    let kb = pipeline::load_kb(&run.kb).unwrap();
    assert_eq!(kb.items.len(), 3);
    for item in &kb.items {
        assert!(item.is_complete());
        assert!(item.abstraction_applied);
        assert!(item.causes.detailed_description.starts_with("In a function of this kind"));
        assert!(item.pre_abstraction.is_some());
    }
}
