//! Benchmark construction: parse CVE fix records into function-level
//! vulnerable/patched pairs, drop pairs whose patch was later modified or
//! reverted, drop oversize functions, and split into train and test.

pub mod diff;
mod graph;
mod instance;
mod split;

pub use graph::{build_patch_graph, filter_reverted, FilterOutcome, NodeId, PatchEdge, PatchGraph, Removal};
pub use instance::{is_cve_id, parse_instances, ParseOptions, ParseOutcome, RecordError, VulnInstance};
pub use split::{filter_by_token_limit, split_dataset, DatasetSplit, SplitError, SplitMode, TokenEstimator};

use std::collections::{BTreeMap, BTreeSet};

/// Per-CWE CVE and pair counts for one split.
pub fn cwe_counts(instances: &[VulnInstance]) -> BTreeMap<String, (usize, usize)> {
    let mut cves: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut pairs: BTreeMap<&str, usize> = BTreeMap::new();
    for i in instances {
        cves.entry(&i.cwe_id).or_default().insert(&i.cve_id);
        *pairs.entry(&i.cwe_id).or_default() += 1;
    }
    pairs
        .into_iter()
        .map(|(cwe, n)| (cwe.to_string(), (cves[cwe].len(), n)))
        .collect()
}

/// Renders the train/test statistics table: one column per CWE, rows for CVE
/// and pair counts in each split.
pub fn summary_table(split: &DatasetSplit) -> String {
    let train = cwe_counts(&split.train);
    let test = cwe_counts(&split.test);
    let cwes: BTreeSet<&String> = train.keys().chain(test.keys()).collect();

    let mut header = vec!["".to_string()];
    header.extend(cwes.iter().map(|c| c.to_string()));
    header.push("Total".into());
    let row = |label: &str, m: &BTreeMap<String, (usize, usize)>, pick: fn(&(usize, usize)) -> usize, total: usize| {
        let mut r = vec![label.to_string()];
        r.extend(cwes.iter().map(|c| m.get(*c).map(pick).unwrap_or(0).to_string()));
        r.push(total.to_string());
        r
    };
    let distinct = |v: &[VulnInstance]| v.iter().map(|i| &i.cve_id).collect::<BTreeSet<_>>().len();
    let rows = vec![
        header,
        row("Test CVE Num.", &test, |c| c.0, distinct(&split.test)),
        row("Test Pair Num.", &test, |c| c.1, split.test.len()),
        row("Train CVE Num.", &train, |c| c.0, distinct(&split.train)),
        row("Train Pair Num.", &train, |c| c.1, split.train.len()),
    ];
    render_table(&rows)
}

pub(crate) fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (ri, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if ri == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}
