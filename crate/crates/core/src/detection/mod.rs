//! Vulnerability detection.
//!
//! The knowledge-augmented strategy walks the fused candidate list one item
//! at a time. For each item it asks whether the code shows the item's
//! vulnerability cause and, only if it does, whether the item's fixing
//! solution is already present. The first item with cause present and fix
//! absent makes the code vulnerable; running out of items makes it benign.
//! The baselines ask a single yes/no question.

mod answer;
mod batch;
mod cwe;

pub use answer::{parse_cause_fix, parse_yes_no, Answer};
pub use batch::{read_verdicts, run_batch, BatchOutcome, CodeInput};
pub use cwe::CweDescriptions;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelSettings};
use crate::knowledge::{self, FunctionalSemantics, KnowledgeBase, KnowledgeError};
use crate::prompts;
use crate::retrieval::{preprocess, Field, KnowledgeIndex, RankedCandidate, RetrievalQuery, RetrievalSettings};

pub const VERDICT_ARTIFACT: &str = "verdicts";
pub const VERDICT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    VulRag,
    Basic,
    Cot1,
    Cot2,
    CweEnhanced,
    CodeRag,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Strategy::VulRag, Strategy::Basic, Strategy::Cot1, Strategy::Cot2, Strategy::CweEnhanced, Strategy::CodeRag];

    /// The spelling used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Strategy::VulRag => "vul-rag",
            Strategy::Basic => "basic",
            Strategy::Cot1 => "cot1",
            Strategy::Cot2 => "cot2",
            Strategy::CweEnhanced => "cwe",
            Strategy::CodeRag => "code-rag",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.cli_name() == norm || (norm == "cwe-enhanced" && *st == Strategy::CweEnhanced))
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.cli_name()).collect();
                format!("unknown strategy {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    NonVulnerable,
}

/// One prompt and the answer it got.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemJudgment {
    pub item_id: String,
    pub cause_present: Answer,
    /// `None` when the fix question was not asked (cause not present).
    pub fix_applied: Option<Answer>,
    pub transcripts: Vec<Exchange>,
}

impl ItemJudgment {
    /// Cause present and fix absent. An unparsed cause counts as absent and
    /// an unparsed fix as present, so neither can make code vulnerable.
    pub fn is_deciding(&self) -> bool {
        self.cause_present == Answer::Yes && self.fix_applied == Some(Answer::No)
    }
}

/// Label and deciding item implied by a judgment sequence.
pub fn derive_label(judgments: &[ItemJudgment]) -> (Label, Option<String>) {
    match judgments.iter().find(|j| j.is_deciding()) {
        Some(j) => (Label::Vulnerable, Some(j.item_id.clone())),
        None => (Label::NonVulnerable, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub code_ref: String,
    pub strategy: Strategy,
    pub label: Label,
    pub deciding_item: Option<String>,
    pub judgments: Vec<ItemJudgment>,
    /// Semantics extracted from the analyzed code (knowledge strategy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<FunctionalSemantics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<RankedCandidate>,
    /// The single exchange of a baseline strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Exchange>,
    /// Knowledge item whose code was shown by the code-level RAG baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_item: Option<String>,
}

/// One line of a verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerdictRecord {
    Ok(DetectionVerdict),
    Error { code_ref: String, strategy: Strategy, error: String },
}

impl VerdictRecord {
    pub fn code_ref(&self) -> &str {
        match self {
            VerdictRecord::Ok(v) => &v.code_ref,
            VerdictRecord::Error { code_ref, .. } => code_ref,
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            VerdictRecord::Ok(v) => v.strategy,
            VerdictRecord::Error { strategy, .. } => *strategy,
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("semantics extraction: {0}")]
    Semantics(#[from] KnowledgeError),
    #[error("{0}")]
    Precondition(String),
    #[error("baseline answer could not be read as yes or no: {0:?}")]
    Unparsed(String),
}

/// Everything a detection needs besides the code itself.
pub struct Detector<'a> {
    pub gateway: &'a Gateway,
    pub settings: ModelSettings,
    pub kb: Option<&'a KnowledgeBase>,
    pub index: Option<&'a KnowledgeIndex>,
    pub retrieval: RetrievalSettings,
    /// Ask cause and fix in one prompt per item.
    pub combined: bool,
    pub cwe_descriptions: Option<&'a CweDescriptions>,
}

impl Detector<'_> {
    fn ask(&self, prompt: String) -> Result<Exchange, GatewayError> {
        let resp = self.gateway.complete_extending(&self.settings.request(vec![ChatMessage::user(prompt.clone())]))?;
        Ok(Exchange { prompt, response: resp.text })
    }

    fn knowledge(&self) -> Result<(&KnowledgeBase, &KnowledgeIndex), DetectionError> {
        match (self.kb, self.index) {
            (Some(kb), Some(idx)) => Ok((kb, idx)),
            _ => Err(DetectionError::Precondition("this strategy needs a knowledge base and its index".into())),
        }
    }

    pub fn detect(&self, input: &CodeInput, strategy: Strategy) -> Result<DetectionVerdict, DetectionError> {
        match strategy {
            Strategy::VulRag => self.detect_vul_rag(&input.code_ref, &input.code),
            s => self.detect_baseline(input, s),
        }
    }

    /// As [`Detector::detect`], folding errors into an error record.
    pub fn detect_record(&self, input: &CodeInput, strategy: Strategy) -> VerdictRecord {
        match self.detect(input, strategy) {
            Ok(v) => VerdictRecord::Ok(v),
            Err(e) => {
                tracing::warn!(code_ref = %input.code_ref, error = %e, "detection failed");
                VerdictRecord::Error { code_ref: input.code_ref.clone(), strategy, error: e.to_string() }
            }
        }
    }

    pub fn detect_vul_rag(&self, code_ref: &str, code: &str) -> Result<DetectionVerdict, DetectionError> {
        let (kb, index) = self.knowledge()?;
        let semantics = knowledge::extract_semantics(self.gateway, &self.settings, code)?;
        let query = RetrievalQuery { code: code.to_string(), semantics };
        let retrieved = index.retrieve(&query, &self.retrieval).candidates;

        let mut judgments = Vec::new();
        for cand in &retrieved {
            let item = kb.get(&cand.item_id).ok_or_else(|| {
                DetectionError::Precondition(format!("index names item {} which the knowledge base lacks", cand.item_id))
            })?;
            let rendered = item.render_knowledge();
            let judgment = if self.combined {
                let ex = self.ask(prompts::find_cause_and_fix(code, &rendered))?;
                let (cause, fix) = parse_cause_fix(&ex.response);
                ItemJudgment { item_id: item.item_id.clone(), cause_present: cause, fix_applied: Some(fix), transcripts: vec![ex] }
            } else {
                let cause_ex = self.ask(prompts::find_cause(code, &rendered))?;
                let cause = parse_yes_no(&cause_ex.response);
                let mut transcripts = vec![cause_ex];
                let fix = if cause == Answer::Yes {
                    let fix_ex = self.ask(prompts::find_fix(code, &rendered))?;
                    let fix = parse_yes_no(&fix_ex.response);
                    transcripts.push(fix_ex);
                    Some(fix)
                } else {
                    None
                };
                ItemJudgment { item_id: item.item_id.clone(), cause_present: cause, fix_applied: fix, transcripts }
            };
            if judgment.cause_present == Answer::Unparsed || judgment.fix_applied == Some(Answer::Unparsed) {
                tracing::warn!(code_ref, item = %judgment.item_id, "unparsed judgment, scored conservatively");
            }
            let stop = judgment.is_deciding();
            judgments.push(judgment);
            if stop {
                break;
            }
        }
        let (label, deciding_item) = derive_label(&judgments);
        Ok(DetectionVerdict {
            code_ref: code_ref.to_string(),
            strategy: Strategy::VulRag,
            label,
            deciding_item,
            judgments,
            semantics: Some(query.semantics),
            retrieved,
            baseline: None,
            context_item: None,
        })
    }

    pub fn detect_baseline(&self, input: &CodeInput, strategy: Strategy) -> Result<DetectionVerdict, DetectionError> {
        let code = &input.code;
        let mut context_item = None;
        let prompt = match strategy {
            Strategy::VulRag => return Err(DetectionError::Precondition("vul-rag is not a baseline".into())),
            Strategy::Basic => prompts::basic(code),
            Strategy::Cot1 => prompts::cot1(code),
            Strategy::Cot2 => prompts::cot2(code),
            Strategy::CweEnhanced => {
                let desc = self
                    .cwe_descriptions
                    .and_then(|d| d.lookup(input.cwe_id.as_deref()))
                    .ok_or_else(|| {
                        DetectionError::Precondition(format!(
                            "no CWE description for {} ({})",
                            input.code_ref,
                            input.cwe_id.as_deref().unwrap_or("CWE unknown")
                        ))
                    })?;
                prompts::cwe_enhanced(code, desc)
            }
            Strategy::CodeRag => {
                let (kb, index) = self.knowledge()?;
                let hit = index.field(Field::Code).top_n(&preprocess(code), 1, &self.retrieval.bm25);
                match hit.first().and_then(|(id, _)| kb.get(id)) {
                    Some(item) => {
                        context_item = Some(item.item_id.clone());
                        prompts::code_rag(
                            code,
                            &item.source.cve_id,
                            &item.source_vulnerable_code,
                            Some(&item.source_patched_code),
                        )
                    }
                    None => {
                        tracing::warn!(code_ref = %input.code_ref, "no similar training code, using the basic prompt");
                        prompts::basic(code)
                    }
                }
            }
        };
        let ex = self.ask(prompt)?;
        let label = match parse_yes_no(&ex.response) {
            Answer::Yes => Label::Vulnerable,
            Answer::No => Label::NonVulnerable,
            Answer::Unparsed => return Err(DetectionError::Unparsed(ex.response)),
        };
        Ok(DetectionVerdict {
            code_ref: input.code_ref.clone(),
            strategy,
            label,
            deciding_item: None,
            judgments: Vec::new(),
            semantics: None,
            retrieved: Vec::new(),
            baseline: Some(ex),
            context_item,
        })
    }
}

#[cfg(test)]
mod tests;
