use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::Field;

/// Exact fused score: the sum of `1/rank` over the fields that ranked the
/// item. A field that did not rank it contributes nothing.
pub fn rrf_exact<I: IntoIterator<Item = u32>>(ranks: I) -> Ratio<u128> {
    ranks.into_iter().fold(Ratio::from_integer(0), |acc, r| {
        assert!(r >= 1, "ranks start at 1");
        acc + Ratio::new(1, r as u128)
    })
}

fn to_f64(r: &Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub item_id: String,
    /// 1-based rank of the item in each field list that contains it.
    pub per_element_rank: BTreeMap<Field, u32>,
    pub rrf_score: f64,
    /// The same score as a reduced fraction, e.g. `7/12`.
    pub rrf_exact: String,
}

/// Unions per-field rankings, scores every distinct item by reciprocal
/// ranks and keeps the `final_k` best, ties by item id.
pub fn fuse(lists: &[(Field, Vec<String>)], final_k: usize) -> Vec<RankedCandidate> {
    let mut ranks: BTreeMap<&str, BTreeMap<Field, u32>> = BTreeMap::new();
    for (field, list) in lists {
        for (i, id) in list.iter().enumerate() {
            // keep the best rank if a list repeats an id
            ranks.entry(id.as_str()).or_default().entry(*field).or_insert(i as u32 + 1);
        }
    }
    let mut scored: Vec<(Ratio<u128>, &str, BTreeMap<Field, u32>)> =
        ranks.into_iter().map(|(id, r)| (rrf_exact(r.values().copied()), id, r)).collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(final_k);
    scored
        .into_iter()
        .map(|(score, id, per_element_rank)| RankedCandidate {
            item_id: id.to_string(),
            per_element_rank,
            rrf_score: to_f64(&score),
            rrf_exact: score.to_string(),
        })
        .collect()
}
