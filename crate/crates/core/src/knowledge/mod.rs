//! Knowledge-base construction.
//!
//! Each training pair becomes one [`KnowledgeItem`] through four model
//! exchanges: purpose and behavior summaries of the vulnerable function, a
//! two-round causes/fix extraction (explain the fix, then structure the
//! explanation as JSON guided by two demonstrations), and an abstraction pass
//! that rewrites concrete identifiers in the causes and fix.

mod parse;
mod types;

pub use parse::{parse_behavior, parse_extracted_knowledge, parse_purpose};
pub use types::{
    ExtractedKnowledge, FixingSolution, FunctionalSemantics, KnowledgeBase, KnowledgeItem, Source,
    VulnerabilityCauses, KB_SCHEMA_VERSION,
};

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::corpus::VulnInstance;
use crate::gateway::{ChatMessage, ChatResponse, FinishReason, Gateway, GatewayError, ModelSettings};
use crate::prompts;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not parse {what} from model output: {raw:?}")]
    Parse { what: &'static str, raw: String },
    #[error("model output truncated twice for {what}")]
    Truncated { what: &'static str },
    #[error("{0}")]
    Precondition(String),
    #[error("knowledge configuration: {0}")]
    Config(String),
    #[error("training set contains test-split CVEs: {}", .0.join(", "))]
    Leakage(Vec<String>),
    #[error("{failed} of {attempted} extractions failed (budget {budget}); first errors: {}", .first.join("; "))]
    FailureBudget { failed: usize, attempted: usize, budget: f64, first: Vec<String> },
}

/// The two few-shot records shown in the second extraction round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstrations([ExtractedKnowledge; 2]);

impl Demonstrations {
    /// The demonstrations shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/demos.jsonl")).expect("builtin demonstrations are valid")
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KnowledgeError::Config(format!("demonstrations file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// One JSON object per line, each with the four knowledge keys. Exactly
    /// two records are required.
    pub fn parse(text: &str) -> Result<Self, KnowledgeError> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<ExtractedKnowledge>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| KnowledgeError::Config(format!("demonstration record: {e}")))?;
        let pair: [ExtractedKnowledge; 2] = records
            .try_into()
            .map_err(|v: Vec<_>| KnowledgeError::Config(format!("expected exactly 2 demonstrations, found {}", v.len())))?;
        Ok(Demonstrations(pair))
    }

    pub fn rendered(&self) -> (String, String) {
        (self.0[0].to_pretty_json(), self.0[1].to_pretty_json())
    }
}

/// Guideline text spliced into the abstraction prompt.
pub fn builtin_abstraction_guidelines() -> &'static str {
    include_str!("../../data/abstraction_guidelines.txt")
}

fn ask(
    gateway: &Gateway,
    settings: &ModelSettings,
    messages: Vec<ChatMessage>,
    what: &'static str,
) -> Result<ChatResponse, KnowledgeError> {
    let resp = gateway.complete_extending(&settings.request(messages))?;
    if resp.finish_reason == FinishReason::Truncated {
        return Err(KnowledgeError::Truncated { what });
    }
    Ok(resp)
}

/// Abstract purpose and detailed behavior of `code`, one call each. Used for
/// knowledge items and for the code under detection alike.
pub fn extract_semantics(
    gateway: &Gateway,
    settings: &ModelSettings,
    code: &str,
) -> Result<FunctionalSemantics, KnowledgeError> {
    if code.trim().is_empty() {
        return Err(KnowledgeError::Precondition("cannot summarize empty code".into()));
    }
    let p = ask(gateway, settings, vec![ChatMessage::user(prompts::purpose(code))], "abstract purpose")?;
    let abstract_purpose =
        parse_purpose(&p.text).ok_or(KnowledgeError::Parse { what: "abstract purpose", raw: p.text })?;
    let b = ask(gateway, settings, vec![ChatMessage::user(prompts::behavior(code))], "detailed behavior")?;
    let detailed_behavior =
        parse_behavior(&b.text).ok_or(KnowledgeError::Parse { what: "detailed behavior", raw: b.text })?;
    Ok(FunctionalSemantics { abstract_purpose, detailed_behavior })
}

pub struct Extractor<'a> {
    pub gateway: &'a Gateway,
    pub settings: ModelSettings,
    pub demos: &'a Demonstrations,
    pub guidelines: &'a str,
}

impl Extractor<'_> {
    /// Sends one conversation. A truncated answer is retried once with twice
    /// the output budget.
    fn ask(&self, messages: Vec<ChatMessage>, what: &'static str) -> Result<ChatResponse, KnowledgeError> {
        ask(self.gateway, &self.settings, messages, what)
    }

    pub fn extract_semantics(&self, code: &str) -> Result<FunctionalSemantics, KnowledgeError> {
        extract_semantics(self.gateway, &self.settings, code)
    }

    /// Two-round causes/fix extraction with one reformat retry on the
    /// structured round.
    pub fn extract_causes_and_fix(&self, inst: &VulnInstance) -> Result<ExtractedKnowledge, KnowledgeError> {
        let round1 = prompts::extraction_round1(
            &inst.cve_id,
            &inst.vulnerable_code,
            &inst.cve_description,
            &inst.patch_diff,
            &inst.patched_code,
        );
        let explanation = self.ask(vec![ChatMessage::user(round1.clone())], "fix explanation")?;
        let (ex1, ex2) = self.demos.rendered();
        let mut messages = vec![
            ChatMessage::user(round1),
            ChatMessage::assistant(explanation.text),
            ChatMessage::user(prompts::extraction_round2(&ex1, &ex2)),
        ];
        self.structured(&mut messages, "causes and fixing solution")
    }

    fn structured(&self, messages: &mut Vec<ChatMessage>, what: &'static str) -> Result<ExtractedKnowledge, KnowledgeError> {
        let answer = self.ask(messages.clone(), what)?;
        if let Some(k) = parse_extracted_knowledge(&answer.text) {
            return Ok(k);
        }
        tracing::warn!(what, "unparseable structured answer, asking to reformat");
        messages.push(ChatMessage::assistant(answer.text));
        messages.push(ChatMessage::user(prompts::FORMAT_REMINDER));
        let retry = self.ask(messages.clone(), what)?;
        parse_extracted_knowledge(&retry.text).ok_or(KnowledgeError::Parse { what, raw: retry.text })
    }

    /// Rewrites causes and fix into identifier-free form. Semantics and
    /// source code are untouched.
    pub fn abstract_item(&self, item: &KnowledgeItem) -> Result<KnowledgeItem, KnowledgeError> {
        if item.abstraction_applied {
            return Err(KnowledgeError::Precondition(format!("item {} is already abstracted", item.item_id)));
        }
        let current = ExtractedKnowledge::join(&item.causes, &item.fix);
        let prompt = prompts::abstraction(self.guidelines, &current.to_pretty_json());
        let mut messages = vec![ChatMessage::user(prompt)];
        let abstracted = self.structured(&mut messages, "abstracted knowledge")?;
        let (causes, fix) = abstracted.split();
        Ok(KnowledgeItem { causes, fix, abstraction_applied: true, pre_abstraction: Some(current), ..item.clone() })
    }

    pub fn extract_item(&self, inst: &VulnInstance, abstraction: bool) -> Result<KnowledgeItem, KnowledgeError> {
        let semantics = self.extract_semantics(&inst.vulnerable_code)?;
        let (causes, fix) = self.extract_causes_and_fix(inst)?.split();
        let item = KnowledgeItem {
            item_id: KnowledgeItem::id_for(&inst.instance_id),
            source: Source { cve_id: inst.cve_id.clone(), instance_id: inst.instance_id.clone() },
            cwe_id: inst.cwe_id.clone(),
            semantics,
            causes,
            fix,
            source_vulnerable_code: inst.vulnerable_code.clone(),
            source_patched_code: inst.patched_code.clone(),
            abstraction_applied: false,
            pre_abstraction: None,
        };
        let item = if abstraction { self.abstract_item(&item)? } else { item };
        if !item.is_complete() {
            return Err(KnowledgeError::Parse { what: "knowledge item", raw: format!("{item:?}") });
        }
        Ok(item)
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub abstraction: bool,
    /// Largest tolerated failure fraction among attempted instances.
    pub failure_budget: f64,
    pub jobs: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { abstraction: true, failure_budget: 0.5, jobs: 1 }
    }
}

#[derive(Debug, Default)]
pub struct BuildReport {
    /// Newly produced items, in training-set order.
    pub produced: Vec<KnowledgeItem>,
    /// Instances skipped because an item for them already exists.
    pub skipped: usize,
    /// `(instance_id, error)` for every failed extraction.
    pub failures: Vec<(String, String)>,
}

/// Extracts one item per training instance.
///
/// Instances whose id is in `done` are skipped (resume). `on_item` is called
/// once per new item as soon as it exists, under a lock, so the caller can
/// persist progress. Fails before any model call if a training CVE appears
/// in `test_cves`.
pub fn build_knowledge_base(
    extractor: &Extractor<'_>,
    train: &[VulnInstance],
    test_cves: &BTreeSet<String>,
    done: &BTreeSet<String>,
    opts: &BuildOptions,
    on_item: &(dyn Fn(&KnowledgeItem) -> std::io::Result<()> + Sync),
) -> Result<BuildReport, KnowledgeError> {
    if train.is_empty() {
        return Err(KnowledgeError::Precondition("training set is empty".into()));
    }
    let leaked: BTreeSet<&str> =
        train.iter().filter(|i| test_cves.contains(&i.cve_id)).map(|i| i.cve_id.as_str()).collect();
    if !leaked.is_empty() {
        return Err(KnowledgeError::Leakage(leaked.into_iter().map(String::from).collect()));
    }

    let todo: Vec<&VulnInstance> = train.iter().filter(|i| !done.contains(&i.instance_id)).collect();
    let skipped = train.len() - todo.len();
    let results: Vec<Mutex<Option<Result<KnowledgeItem, String>>>> = todo.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let sink = Mutex::new(());
    let sink_err: Mutex<Option<std::io::Error>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..opts.jobs.clamp(1, todo.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(inst) = todo.get(k) else { break };
                let r = extractor.extract_item(inst, opts.abstraction);
                if let Ok(item) = &r {
                    let _guard = sink.lock().unwrap();
                    if let Err(e) = on_item(item) {
                        sink_err.lock().unwrap().get_or_insert(e);
                    }
                } else if let Err(e) = &r {
                    tracing::warn!(instance = %inst.instance_id, error = %e, "knowledge extraction failed");
                }
                *results[k].lock().unwrap() = Some(r.map_err(|e| e.to_string()));
            });
        }
    });
    if let Some(e) = sink_err.into_inner().unwrap() {
        return Err(KnowledgeError::Config(format!("persisting knowledge item: {e}")));
    }

    let mut report = BuildReport { skipped, ..BuildReport::default() };
    for (inst, slot) in todo.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every slot is filled") {
            Ok(item) => report.produced.push(item),
            Err(e) => report.failures.push((inst.instance_id.clone(), e)),
        }
    }
    let attempted = todo.len();
    if attempted > 0 && report.failures.len() as f64 > opts.failure_budget * attempted as f64 {
        return Err(KnowledgeError::FailureBudget {
            failed: report.failures.len(),
            attempted,
            budget: opts.failure_budget,
            first: report.failures.iter().take(3).map(|(id, e)| format!("{id}: {e}")).collect(),
        });
    }
    Ok(report)
}
