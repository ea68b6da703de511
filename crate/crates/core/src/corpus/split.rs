use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::VulnInstance;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("test ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Split each CWE separately.
    #[default]
    Stratified,
    Global,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<VulnInstance>,
    pub test: Vec<VulnInstance>,
    pub seed: u64,
    pub ratio: f64,
    pub warnings: Vec<String>,
}

/// Randomly divides `instances` into train and test so that roughly `ratio`
/// of each stratum's instances land in test.
///
/// All instances of a CVE stay on one side. A CVE is filed under the
/// lexicographically smallest CWE among its instances. Within a stratum the
/// CVE groups are shuffled with a seed derived from `(seed, stratum)` and
/// taken first-fit until the instance target `round(ratio * size)` is met.
pub fn split_dataset(
    instances: &[VulnInstance],
    ratio: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetSplit, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::BadRatio(ratio));
    }

    // cve -> indices, keeping input order inside each group
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        groups.entry(inst.cve_id.as_str()).or_default().push(i);
    }
    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for (cve, idxs) in &groups {
        let key = match mode {
            SplitMode::Global => "*".to_string(),
            SplitMode::Stratified => idxs.iter().map(|&i| instances[i].cwe_id.as_str()).min().unwrap().to_string(),
        };
        strata.entry(key).or_default().push(cve);
    }

    let mut in_test = vec![false; instances.len()];
    let mut warnings = Vec::new();
    for (stratum, cves) in &strata {
        if cves.len() == 1 {
            warnings.push(format!("{stratum}: single CVE {}, assigned to train", cves[0]));
            continue;
        }
        let size: usize = cves.iter().map(|c| groups[c].len()).sum();
        let target = (ratio * size as f64).round() as usize;

        let mut order = cves.clone();
        order.shuffle(&mut stratum_rng(seed, stratum));

        let mut taken = 0usize;
        for cve in order {
            if taken >= target {
                break;
            }
            let g = &groups[cve];
            // Skip a group only if taking it lands further from the target
            // than stopping here would.
            if taken + g.len() > target && taken + g.len() - target > target - taken {
                continue;
            }
            taken += g.len();
            for &i in g {
                in_test[i] = true;
            }
        }
        if taken.abs_diff(target) > 1 {
            warnings.push(format!(
                "{stratum}: CVE grouping forced {taken} test instances against a target of {target}"
            ));
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (inst, t) in instances.iter().zip(in_test) {
        if t { test.push(inst.clone()) } else { train.push(inst.clone()) }
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(DatasetSplit { train, test, seed, ratio, warnings })
}

fn stratum_rng(seed: u64, stratum: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stratum.as_bytes());
    let d = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&d);
    ChaCha8Rng::from_seed(key)
}

/// Estimates a token count as `ceil(chars / chars_per_token)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub chars_per_token: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        TokenEstimator { chars_per_token: 4 }
    }
}

impl TokenEstimator {
    pub fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

/// Splits off instances whose vulnerable or patched function is estimated
/// above `limit` tokens. Returns `(kept, removed)`.
pub fn filter_by_token_limit(
    instances: Vec<VulnInstance>,
    limit: usize,
    est: TokenEstimator,
) -> (Vec<VulnInstance>, Vec<VulnInstance>) {
    instances.into_iter().partition(|i| {
        est.estimate(&i.vulnerable_code) <= limit && est.estimate(&i.patched_code) <= limit
    })
}
