use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// The knowledge-item fields that are indexed, one per query element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Code,
    AbstractPurpose,
    DetailedBehavior,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Code, Field::AbstractPurpose, Field::DetailedBehavior];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Code => "code",
            Field::AbstractPurpose => "abstract_purpose",
            Field::DetailedBehavior => "detailed_behavior",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which side supplies the term frequency and the length in the BM25
/// saturation term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySide {
    /// `f(w, q)` and `|q|`: the formula taken literally.
    #[default]
    Query,
    /// `f(w, d)` and `|d|`: classic Okapi.
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k: f64,
    pub b: f64,
    pub frequency: FrequencySide,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k: 1.2, b: 0.75, frequency: FrequencySide::Query }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedDoc {
    pub len: u32,
    pub tf: BTreeMap<String, u32>,
}

/// BM25 index over one field. Only integer statistics are stored, so a
/// saved index reloads to exactly the same scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredIndex", into = "StoredIndex")]
pub struct FieldIndex {
    field: Field,
    docs: BTreeMap<String, IndexedDoc>,
    postings: BTreeMap<String, Vec<(String, u32)>>,
    avgdl: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredIndex {
    field: Field,
    docs: BTreeMap<String, IndexedDoc>,
}

impl From<StoredIndex> for FieldIndex {
    fn from(s: StoredIndex) -> Self {
        FieldIndex::from_docs(s.field, s.docs)
    }
}

impl From<FieldIndex> for StoredIndex {
    fn from(i: FieldIndex) -> Self {
        StoredIndex { field: i.field, docs: i.docs }
    }
}

impl FieldIndex {
    /// Indexes already preprocessed token lists keyed by item id. A later
    /// duplicate id replaces the earlier one.
    pub fn build<I, S>(field: Field, docs: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let docs = docs
            .into_iter()
            .map(|(id, tokens)| {
                let mut tf = BTreeMap::new();
                for t in &tokens {
                    *tf.entry(t.clone()).or_insert(0) += 1;
                }
                (id.into(), IndexedDoc { len: tokens.len() as u32, tf })
            })
            .collect();
        Self::from_docs(field, docs)
    }

    fn from_docs(field: Field, docs: BTreeMap<String, IndexedDoc>) -> Self {
        let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
        for (id, d) in &docs {
            for (t, &f) in &d.tf {
                postings.entry(t.clone()).or_default().push((id.clone(), f));
            }
        }
        let total: u64 = docs.values().map(|d| d.len as u64).sum();
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        FieldIndex { field, docs, postings, avgdl }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc(&self, item_id: &str) -> Option<&IndexedDoc> {
        self.docs.get(item_id)
    }

    pub fn postings(&self, term: &str) -> &[(String, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// `ln((N - n + 0.5) / (n + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings(term).len() as f64;
        let big_n = self.docs.len() as f64;
        ((big_n - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// BM25 similarity of `query` to one item. Each distinct query term that
    /// occurs in the item contributes once; terms are visited in sorted
    /// order so the floating-point sum is reproducible. Unknown items and
    /// empty queries score 0.
    pub fn score(&self, query: &[String], item_id: &str, params: &Bm25Params) -> f64 {
        let Some(doc) = self.docs.get(item_id) else { return 0.0 };
        let mut qtf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in query {
            *qtf.entry(t.as_str()).or_insert(0) += 1;
        }
        let qlen = query.len() as f64;
        let mut parts = Vec::with_capacity(qtf.len());
        for (term, &fq) in &qtf {
            let Some(&fd) = doc.tf.get(*term) else { continue };
            let (f, len) = match params.frequency {
                FrequencySide::Query => (fq as f64, qlen),
                FrequencySide::Document => (fd as f64, doc.len as f64),
            };
            let norm = if self.avgdl > 0.0 { len / self.avgdl } else { 0.0 };
            parts.push(self.idf(term) * f * (params.k + 1.0) / (f + params.k * (1.0 - params.b + params.b * norm)));
        }
        // Add in value order so equal contributions from different terms give
        // bit-equal totals and the id tie-break applies.
        parts.sort_by(f64::total_cmp);
        parts.iter().sum()
    }

    /// Top `n` items by score, highest first, ties by item id. Items scoring
    /// 0 are left out.
    pub fn top_n(&self, query: &[String], n: usize, params: &Bm25Params) -> Vec<(String, f64)> {
        let mut candidates: Vec<&str> =
            query.iter().flat_map(|t| self.postings(t)).map(|(id, _)| id.as_str()).collect();
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(String, f64)> = candidates
            .into_iter()
            .map(|id| (id.to_string(), self.score(query, id, params)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(n);
        scored
    }
}
