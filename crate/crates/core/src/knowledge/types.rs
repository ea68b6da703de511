use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalSemantics {
    /// One-sentence summary of what the function is for.
    pub abstract_purpose: String,
    /// Ordered behavior statements.
    pub detailed_behavior: Vec<String>,
}

impl FunctionalSemantics {
    pub fn is_complete(&self) -> bool {
        !self.abstract_purpose.trim().is_empty()
            && !self.detailed_behavior.is_empty()
            && self.detailed_behavior.iter().all(|b| !b.trim().is_empty())
    }

    /// The behavior list as one retrieval document.
    pub fn behavior_text(&self) -> String {
        self.detailed_behavior.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnerabilityCauses {
    pub triggering_action: String,
    pub abstract_description: String,
    pub detailed_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixingSolution {
    pub solution_description: String,
}

/// Causes and fix in the flat shape the model reads and writes: the
/// round-2 extraction answer, the demonstrations and the abstraction
/// input/output all use these four keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedKnowledge {
    pub triggering_action: String,
    pub abstract_description: String,
    pub detailed_description: String,
    pub solution: String,
}

impl ExtractedKnowledge {
    pub fn split(self) -> (VulnerabilityCauses, FixingSolution) {
        (
            VulnerabilityCauses {
                triggering_action: self.triggering_action,
                abstract_description: self.abstract_description,
                detailed_description: self.detailed_description,
            },
            FixingSolution { solution_description: self.solution },
        )
    }

    pub fn join(causes: &VulnerabilityCauses, fix: &FixingSolution) -> Self {
        ExtractedKnowledge {
            triggering_action: causes.triggering_action.clone(),
            abstract_description: causes.abstract_description.clone(),
            detailed_description: causes.detailed_description.clone(),
            solution: fix.solution_description.clone(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain strings serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub cve_id: String,
    pub instance_id: String,
}

/// One knowledge-base record: functional semantics, vulnerability causes and
/// fixing solution distilled from a single vulnerable/patched pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub item_id: String,
    pub source: Source,
    pub cwe_id: String,
    pub semantics: FunctionalSemantics,
    pub causes: VulnerabilityCauses,
    pub fix: FixingSolution,
    pub source_vulnerable_code: String,
    pub source_patched_code: String,
    pub abstraction_applied: bool,
    /// Causes and fix as first extracted, kept when abstraction rewrote them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_abstraction: Option<ExtractedKnowledge>,
}

impl KnowledgeItem {
    pub fn id_for(instance_id: &str) -> String {
        format!("KI-{instance_id}")
    }

    /// All seven elements present and non-empty.
    pub fn is_complete(&self) -> bool {
        let c = &self.causes;
        self.semantics.is_complete()
            && [&c.triggering_action, &c.abstract_description, &c.detailed_description, &self.fix.solution_description]
                .iter()
                .all(|s| !s.trim().is_empty())
    }

    /// Causes and fixing solution as they are shown to the model at
    /// detection time.
    pub fn render_knowledge(&self) -> String {
        let v = serde_json::json!({
            "vulnerability_causes": {
                "triggering_action": self.causes.triggering_action,
                "abstract_description": self.causes.abstract_description,
                "detailed_description": self.causes.detailed_description,
            },
            "fixing_solution": self.fix.solution_description,
        });
        serde_json::to_string_pretty(&v).expect("plain strings serialize")
    }
}

pub const KB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub schema_version: u32,
    pub items: Vec<KnowledgeItem>,
}

impl KnowledgeBase {
    pub fn new(items: Vec<KnowledgeItem>) -> Self {
        KnowledgeBase { schema_version: KB_SCHEMA_VERSION, items }
    }

    pub fn get(&self, item_id: &str) -> Option<&KnowledgeItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Item ids unique and every item complete.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for i in &self.items {
            if !seen.insert(&i.item_id) {
                return Err(format!("duplicate item id {}", i.item_id));
            }
            if !i.is_complete() {
                return Err(format!("item {} has an empty element", i.item_id));
            }
        }
        Ok(())
    }
}
