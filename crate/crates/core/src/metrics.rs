//! Scoring verdicts against benchmark pairs.
//!
//! Every benchmark pair contributes two codes: the vulnerable function, whose
//! true label is vulnerable, and the patched function, whose true label is
//! non-vulnerable. Pairwise accuracy counts pairs where both are right.
//! Balanced recall and precision average the two per-class rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VulnInstance;
use crate::detection::{Label, Strategy, VerdictRecord};

pub const REPORT_ARTIFACT: &str = "eval-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Vulnerable,
    Patched,
}

impl Member {
    pub fn truth(self) -> Label {
        match self {
            Member::Vulnerable => Label::Vulnerable,
            Member::Patched => Label::NonVulnerable,
        }
    }
}

/// `{instance_id}:vulnerable` or `{instance_id}:patched`.
pub fn code_ref(instance_id: &str, member: Member) -> String {
    match member {
        Member::Vulnerable => format!("{instance_id}:vulnerable"),
        Member::Patched => format!("{instance_id}:patched"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Vulnerable code labeled vulnerable.
    pub true_vul: u64,
    /// Vulnerable code labeled non-vulnerable.
    pub false_nvul: u64,
    /// Patched code labeled non-vulnerable.
    pub true_nvul: u64,
    /// Patched code labeled vulnerable.
    pub false_vul: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Vulnerable, Label::Vulnerable) => self.true_vul += 1,
            (Label::Vulnerable, Label::NonVulnerable) => self.false_nvul += 1,
            (Label::NonVulnerable, Label::NonVulnerable) => self.true_nvul += 1,
            (Label::NonVulnerable, Label::Vulnerable) => self.false_vul += 1,
        }
    }

    pub fn total_vul(&self) -> u64 {
        self.true_vul + self.false_nvul
    }

    pub fn total_nvul(&self) -> u64 {
        self.true_nvul + self.false_vul
    }

    pub fn predict_vul(&self) -> u64 {
        self.true_vul + self.false_vul
    }

    pub fn predict_nvul(&self) -> u64 {
        self.true_nvul + self.false_nvul
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no {0} samples, per-class recall is undefined")]
    EmptyClass(&'static str),
    #[error("no complete pairs to score")]
    NoPairs,
    #[error("pair {pair} has no verdict for its {member:?} code")]
    MissingVerdict { pair: String, member: Member },
}

/// Mean of the two per-class recalls, computed as one division of exact
/// integers so that on balanced classes it is bit-identical to accuracy.
pub fn balanced_recall(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total_vul() == 0 {
        return Err(MetricsError::EmptyClass("vulnerable"));
    }
    if c.total_nvul() == 0 {
        return Err(MetricsError::EmptyClass("non-vulnerable"));
    }
    let (tv, tn) = (c.total_vul() as u128, c.total_nvul() as u128);
    let num = c.true_vul as u128 * tn + c.true_nvul as u128 * tv;
    Ok(num as f64 / (2 * tv * tn) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedPrecision {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Mean of the two per-class precisions. A class that was never predicted
/// contributes 0 and adds a warning.
pub fn balanced_precision(c: &ConfusionCounts) -> BalancedPrecision {
    let mut warnings = Vec::new();
    let mut term = |hit: u64, predicted: u64, class: &str| {
        if predicted == 0 {
            warnings.push(format!("degenerate predictor: nothing predicted {class}, precision term set to 0"));
            0.0
        } else {
            hit as f64 / predicted as f64
        }
    };
    let v = term(c.true_vul, c.predict_vul(), "vulnerable");
    let n = term(c.true_nvul, c.predict_nvul(), "non-vulnerable");
    BalancedPrecision { value: (v + n) / 2.0, warnings }
}

/// Predicted labels for one benchmark pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairVerdicts {
    pub pair_id: String,
    pub vulnerable: Option<Label>,
    pub patched: Option<Label>,
}

/// Share of pairs whose vulnerable code is labeled vulnerable and whose
/// patched code is labeled non-vulnerable.
pub fn pairwise_accuracy(pairs: &[PairVerdicts]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let mut correct = 0u64;
    for p in pairs {
        let missing = |member| MetricsError::MissingVerdict { pair: p.pair_id.clone(), member };
        let v = p.vulnerable.ok_or_else(|| missing(Member::Vulnerable))?;
        let n = p.patched.ok_or_else(|| missing(Member::Patched))?;
        if v == Label::Vulnerable && n == Label::NonVulnerable {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Metrics over one slice of the benchmark (one CWE or everything).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Pairs in the benchmark slice.
    pub pairs: u64,
    /// Pairs with a verdict for both members.
    pub complete_pairs: u64,
    pub pair_accuracy: Option<f64>,
    pub balanced_recall: Option<f64>,
    pub balanced_precision: f64,
    pub counts: ConfusionCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn row(pairs: &[PairVerdicts]) -> MetricRow {
    let mut counts = ConfusionCounts::default();
    for p in pairs {
        if let Some(l) = p.vulnerable {
            counts.add(Label::Vulnerable, l);
        }
        if let Some(l) = p.patched {
            counts.add(Label::NonVulnerable, l);
        }
    }
    let complete: Vec<PairVerdicts> =
        pairs.iter().filter(|p| p.vulnerable.is_some() && p.patched.is_some()).cloned().collect();
    let mut warnings = Vec::new();
    let pair_accuracy = pairwise_accuracy(&complete).map_err(|e| warnings.push(format!("pair accuracy: {e}"))).ok();
    let balanced_recall = balanced_recall(&counts).map_err(|e| warnings.push(format!("balanced recall: {e}"))).ok();
    let precision = balanced_precision(&counts);
    warnings.extend(precision.warnings);
    MetricRow {
        pairs: pairs.len() as u64,
        complete_pairs: complete.len() as u64,
        pair_accuracy,
        balanced_recall,
        balanced_precision: precision.value,
        counts,
        warnings,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Codes in the benchmark (two per pair).
    pub expected: u64,
    /// Codes with a usable verdict.
    pub scored: u64,
    /// Codes whose detection ended in an error record.
    pub errors: Vec<String>,
    /// Codes with no record at all.
    pub missing: Vec<String>,
    /// Verdicts whose code is not in the benchmark.
    pub unmatched: Vec<String>,
}

impl Coverage {
    pub fn ratio(&self) -> f64 {
        if self.expected == 0 {
            0.0
        } else {
            self.scored as f64 / self.expected as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    /// Left empty unless the caller supplies one, so reports of identical
    /// runs are byte-identical.
    pub timestamp: Option<String>,
    pub per_cwe: BTreeMap<String, MetricRow>,
    pub overall: MetricRow,
    pub coverage: Coverage,
}

/// One report per strategy found in `verdicts`, in strategy order.
pub fn build_reports(verdicts: &[VerdictRecord], bench: &[VulnInstance], timestamp: Option<&str>) -> Vec<EvalReport> {
    let mut by_strategy: BTreeMap<Strategy, Vec<&VerdictRecord>> = BTreeMap::new();
    for v in verdicts {
        by_strategy.entry(v.strategy()).or_default().push(v);
    }
    by_strategy.into_iter().map(|(s, recs)| build_report(s, &recs, bench, timestamp)).collect()
}

pub fn build_report(
    strategy: Strategy,
    verdicts: &[&VerdictRecord],
    bench: &[VulnInstance],
    timestamp: Option<&str>,
) -> EvalReport {
    let mut labels: BTreeMap<&str, Option<Label>> = BTreeMap::new();
    for v in verdicts.iter().filter(|v| v.strategy() == strategy) {
        let label = match v {
            VerdictRecord::Ok(d) => Some(d.label),
            VerdictRecord::Error { .. } => None,
        };
        if labels.insert(v.code_ref(), label).is_some() {
            tracing::warn!(code_ref = v.code_ref(), "duplicate verdict, the later one is used");
        }
    }

    let mut coverage = Coverage { expected: 2 * bench.len() as u64, ..Coverage::default() };
    let mut known = std::collections::BTreeSet::new();
    let mut by_cwe: BTreeMap<&str, Vec<PairVerdicts>> = BTreeMap::new();
    for inst in bench {
        let mut get = |member| {
            let r = code_ref(&inst.instance_id, member);
            let label = match labels.get(r.as_str()) {
                Some(Some(l)) => {
                    coverage.scored += 1;
                    Some(*l)
                }
                Some(None) => {
                    coverage.errors.push(r.clone());
                    None
                }
                None => {
                    coverage.missing.push(r.clone());
                    None
                }
            };
            known.insert(r);
            label
        };
        let pv = PairVerdicts {
            pair_id: inst.instance_id.clone(),
            vulnerable: get(Member::Vulnerable),
            patched: get(Member::Patched),
        };
        by_cwe.entry(inst.cwe_id.as_str()).or_default().push(pv);
    }
    coverage.unmatched = labels.keys().filter(|r| !known.contains(**r)).map(|r| r.to_string()).collect();

    let all: Vec<PairVerdicts> = by_cwe.values().flatten().cloned().collect();
    EvalReport {
        strategy,
        timestamp: timestamp.map(String::from),
        per_cwe: by_cwe.iter().map(|(c, p)| (c.to_string(), row(p))).collect(),
        overall: row(&all),
        coverage,
    }
}

fn fmt_rate(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Text table with one block per report: a row per CWE, then the overall
/// row and the coverage line.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let mut rows = vec![
            ["CWE", "Pairs", "Pair Acc", "Bal Recall", "Bal Precision", "TV", "FNV", "TNV", "FV"]
                .map(String::from)
                .to_vec(),
        ];
        let line = |name: &str, m: &MetricRow| {
            vec![
                name.to_string(),
                format!("{}/{}", m.complete_pairs, m.pairs),
                fmt_rate(m.pair_accuracy),
                fmt_rate(m.balanced_recall),
                format!("{:.4}", m.balanced_precision),
                m.counts.true_vul.to_string(),
                m.counts.false_nvul.to_string(),
                m.counts.true_nvul.to_string(),
                m.counts.false_vul.to_string(),
            ]
        };
        rows.extend(r.per_cwe.iter().map(|(c, m)| line(c, m)));
        rows.push(line("Overall", &r.overall));
        out.push_str(&format!("Strategy: {}\n", r.strategy));
        out.push_str(&crate::corpus::render_table(&rows));
        let c = &r.coverage;
        out.push_str(&format!(
            "Coverage: {}/{} codes scored ({:.1}%), {} errors, {} missing, {} unmatched\n\n",
            c.scored,
            c.expected,
            100.0 * c.ratio(),
            c.errors.len(),
            c.missing.len(),
            c.unmatched.len()
        ));
    }
    out
}
