//! Knowledge retrieval.
//!
//! Three BM25 indexes, one per knowledge field, are queried with the matching
//! element of the query (code, purpose, behavior). The three top-n lists are
//! merged with reciprocal-rank fusion.

mod bm25;
mod fusion;
mod preprocess;

pub use bm25::{Bm25Params, Field, FieldIndex, FrequencySide, IndexedDoc};
pub use fusion::{fuse, rrf_exact, RankedCandidate};
pub use preprocess::{is_stop_word, preprocess};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError, ArtifactHeader};
use crate::knowledge::{FunctionalSemantics, KnowledgeBase};

pub const INDEX_ARTIFACT: &str = "knowledge-index";
pub const INDEX_SCHEMA_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    /// Items kept per field before fusion.
    pub n: usize,
    /// Items kept after fusion.
    pub final_k: usize,
    pub bm25: Bm25Params,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings { n: 10, final_k: 10, bm25: Bm25Params::default() }
    }
}

/// The code under analysis plus its extracted semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub code: String,
    pub semantics: FunctionalSemantics,
}

impl RetrievalQuery {
    pub fn element(&self, field: Field) -> String {
        match field {
            Field::Code => self.code.clone(),
            Field::AbstractPurpose => self.semantics.abstract_purpose.clone(),
            Field::DetailedBehavior => self.semantics.behavior_text(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Per-field top-n lists, before fusion.
    pub per_element: BTreeMap<Field, Vec<(String, f64)>>,
    pub candidates: Vec<RankedCandidate>,
}

impl Retrieval {
    /// Size of the union before duplicates are removed.
    pub fn pre_dedup_count(&self) -> usize {
        self.per_element.values().map(Vec::len).sum()
    }
}

/// The three field indexes built from one knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    fields: [FieldIndex; 3],
}

impl KnowledgeIndex {
    pub fn build(kb: &KnowledgeBase) -> Self {
        let field = |f: Field| {
            FieldIndex::build(
                f,
                kb.items.iter().map(|i| {
                    let text = match f {
                        Field::Code => i.source_vulnerable_code.clone(),
                        Field::AbstractPurpose => i.semantics.abstract_purpose.clone(),
                        Field::DetailedBehavior => i.semantics.behavior_text(),
                    };
                    (i.item_id.clone(), preprocess(&text))
                }),
            )
        };
        KnowledgeIndex { fields: Field::ALL.map(field) }
    }

    pub fn field(&self, f: Field) -> &FieldIndex {
        &self.fields[f as usize]
    }

    pub fn len(&self) -> usize {
        self.fields[0].doc_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn retrieve(&self, query: &RetrievalQuery, settings: &RetrievalSettings) -> Retrieval {
        let per_element: BTreeMap<Field, Vec<(String, f64)>> = Field::ALL
            .into_iter()
            .map(|f| (f, self.field(f).top_n(&preprocess(&query.element(f)), settings.n, &settings.bm25)))
            .collect();
        let lists: Vec<(Field, Vec<String>)> =
            per_element.iter().map(|(f, l)| (*f, l.iter().map(|(id, _)| id.clone()).collect())).collect();
        let candidates = fuse(&lists, settings.final_k);
        Retrieval { per_element, candidates }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(INDEX_FILE)
    }

    /// Writes `dir/index.jsonl`: a header, then one line per field.
    pub fn save(&self, dir: &Path, config: &impl Serialize) -> Result<(), ArtifactError> {
        std::fs::create_dir_all(dir)
            .map_err(|source| ArtifactError::Io { path: dir.display().to_string(), source })?;
        let header = ArtifactHeader::new(INDEX_ARTIFACT, INDEX_SCHEMA_VERSION, config);
        artifact::write_jsonl(&Self::path_in(dir), &header, &self.fields)
    }

    pub fn load(dir: &Path) -> Result<Self, ArtifactError> {
        let path = Self::path_in(dir);
        let (_, fields): (_, Vec<FieldIndex>) = artifact::read_jsonl(&path, INDEX_ARTIFACT)?;
        let bad = |message: String| ArtifactError::Format { path: path.display().to_string(), line: 0, message };
        let got: Vec<Field> = fields.iter().map(FieldIndex::field).collect();
        if got != Field::ALL {
            return Err(bad(format!("expected fields {:?}, found {got:?}", Field::ALL)));
        }
        let fields: [FieldIndex; 3] = fields.try_into().expect("length checked");
        if fields.iter().any(|f| !f.item_ids().eq(fields[0].item_ids())) {
            return Err(bad("field indexes cover different items".into()));
        }
        Ok(KnowledgeIndex { fields })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{FixingSolution, KnowledgeItem, Source, VulnerabilityCauses};

    pub(crate) fn item(id: &str, code: &str, purpose: &str, behavior: &[&str]) -> KnowledgeItem {
        KnowledgeItem {
            item_id: id.into(),
            source: Source { cve_id: "CVE-2020-0001".into(), instance_id: id.into() },
            cwe_id: "CWE-416".into(),
            semantics: FunctionalSemantics {
                abstract_purpose: purpose.into(),
                detailed_behavior: behavior.iter().map(|s| s.to_string()).collect(),
            },
            causes: VulnerabilityCauses {
                triggering_action: "t".into(),
                abstract_description: "a".into(),
                detailed_description: "d".into(),
            },
            fix: FixingSolution { solution_description: "s".into() },
            source_vulnerable_code: code.into(),
            source_patched_code: code.into(),
            abstraction_applied: true,
            pre_abstraction: None,
        }
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::new(vec![
            item("k1", "mutex_lock(&dev->lock); kfree(dev);", "Release a device.", &["takes the lock", "frees device"]),
            item("k2", "memcpy(buf, src, len);", "Copy user data into a buffer.", &["copies bytes"]),
            item("k3", "spin_lock(&q->lock); list_del(&q->node);", "Remove a queue entry.", &["locks the queue"]),
        ])
    }

    #[test]
    fn three_element_query_fuses() {
        let idx = KnowledgeIndex::build(&kb());
        let q = RetrievalQuery {
            code: "mutex_lock(&d->lock); kfree(d);".into(),
            semantics: FunctionalSemantics {
                abstract_purpose: "Release the device.".into(),
                detailed_behavior: vec!["frees the device".into()],
            },
        };
        let r = idx.retrieve(&q, &RetrievalSettings::default());
        assert_eq!(r.candidates[0].item_id, "k1");
        assert_eq!(r.candidates[0].per_element_rank.len(), 3);
        assert_eq!(r.candidates[0].rrf_exact, "3");
        assert!(r.pre_dedup_count() <= 30 && r.candidates.len() <= 10);
    }

    #[test]
    fn empty_kb_gives_nothing() {
        let idx = KnowledgeIndex::build(&KnowledgeBase::new(vec![]));
        let q = RetrievalQuery {
            code: "x".into(),
            semantics: FunctionalSemantics { abstract_purpose: "x".into(), detailed_behavior: vec!["x".into()] },
        };
        assert!(idx.retrieve(&q, &RetrievalSettings::default()).candidates.is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = KnowledgeIndex::build(&kb());
        idx.save(dir.path(), &RetrievalSettings::default()).unwrap();
        assert_eq!(KnowledgeIndex::load(dir.path()).unwrap(), idx);
    }
}
