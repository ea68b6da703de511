use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::diff;

/// One function-level vulnerable/patched pair taken from a CVE fix commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnInstance {
    pub instance_id: String,
    pub cve_id: String,
    pub cwe_id: String,
    pub cve_description: String,
    pub vulnerable_code: String,
    pub patched_code: String,
    pub patch_diff: String,
}

impl VulnInstance {
    /// Checks the structural invariants that do not need the diff applier.
    pub fn validate(&self) -> Result<(), String> {
        if !is_cve_id(&self.cve_id) {
            return Err(format!("malformed cve_id {:?}", self.cve_id));
        }
        if self.vulnerable_code == self.patched_code {
            return Err("vulnerable_code and patched_code are identical".into());
        }
        Ok(())
    }
}

/// `CVE-\d{4}-\d+`
pub fn is_cve_id(s: &str) -> bool {
    let Some(rest) = s.strip_prefix("CVE-") else {
        return false;
    };
    let Some((year, seq)) = rest.split_once('-') else {
        return false;
    };
    year.len() == 4
        && year.bytes().all(|b| b.is_ascii_digit())
        && !seq.is_empty()
        && seq.bytes().all(|b| b.is_ascii_digit())
}

/// Raw input line. Every field is optional here so that a missing field can
/// be reported instead of failing the whole stream.
#[derive(Debug, Default, Deserialize)]
struct RawRecord {
    instance_id: Option<String>,
    cve_id: Option<String>,
    cwe_id: Option<String>,
    cve_description: Option<String>,
    vulnerable_code: Option<String>,
    patched_code: Option<String>,
    patch_diff: Option<String>,
}

/// A record that could not be turned into an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub cve_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ParseOptions {
    /// Re-apply `patch_diff` to `vulnerable_code` and require it to reproduce
    /// `patched_code` byte for byte.
    pub verify_diffs: bool,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub instances: Vec<VulnInstance>,
    pub errors: Vec<RecordError>,
}

/// Parses a line-delimited JSON record stream into instances.
///
/// Blank lines are ignored. Malformed records become [`RecordError`]s and the
/// stream continues. Records without an `instance_id` get a content-derived
/// one, so ids are stable across runs.
pub fn parse_instances<R: BufRead>(reader: R, opts: ParseOptions) -> std::io::Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RecordError {
                    line: lineno,
                    cve_id: sniff_cve_id(&line),
                    reason: format!("invalid record: {e}"),
                });
                continue;
            }
        };
        match into_instance(raw, opts) {
            Ok(mut inst) => {
                let n = seen.entry(inst.instance_id.clone()).or_insert(0);
                *n += 1;
                if *n > 1 {
                    inst.instance_id = format!("{}~{}", inst.instance_id, n);
                }
                out.instances.push(inst);
            }
            Err((cve_id, reason)) => out.errors.push(RecordError { line: lineno, cve_id, reason }),
        }
    }
    Ok(out)
}

fn into_instance(raw: RawRecord, opts: ParseOptions) -> Result<VulnInstance, (Option<String>, String)> {
    let cve = raw.cve_id.clone();
    let fail = |reason: String| (cve.clone(), reason);

    let mut missing = Vec::new();
    let mut take = |name: &'static str, v: Option<String>| -> String {
        match v {
            Some(s) if !s.is_empty() => s,
            _ => {
                missing.push(name);
                String::new()
            }
        }
    };
    let cve_id = take("cve_id", raw.cve_id);
    let cwe_id = take("cwe_id", raw.cwe_id);
    let cve_description = take("cve_description", raw.cve_description);
    let vulnerable_code = take("vulnerable_code", raw.vulnerable_code);
    let patched_code = take("patched_code", raw.patched_code);
    let patch_diff = take("patch_diff", raw.patch_diff);
    if !missing.is_empty() {
        return Err(fail(format!("missing field(s): {}", missing.join(", "))));
    }

    let instance_id = raw
        .instance_id
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| derive_instance_id(&cve_id, &vulnerable_code, &patched_code));

    let inst = VulnInstance {
        instance_id,
        cve_id,
        cwe_id,
        cve_description,
        vulnerable_code,
        patched_code,
        patch_diff,
    };
    inst.validate().map_err(fail)?;
    if opts.verify_diffs {
        let applied = diff::apply_unified(&inst.vulnerable_code, &inst.patch_diff)
            .map_err(|e| fail(format!("patch_diff does not apply: {e}")))?;
        if applied != inst.patched_code {
            return Err(fail("patch_diff applied to vulnerable_code does not reproduce patched_code".into()));
        }
    }
    Ok(inst)
}

fn derive_instance_id(cve_id: &str, vulnerable: &str, patched: &str) -> String {
    let mut h = Sha256::new();
    h.update(vulnerable.as_bytes());
    h.update([0u8]);
    h.update(patched.as_bytes());
    let digest = hex::encode(h.finalize());
    format!("{cve_id}@{}", &digest[..12])
}

fn sniff_cve_id(line: &str) -> Option<String> {
    let start = line.find("CVE-")?;
    let tail: String = line[start..]
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '-')
        .collect();
    is_cve_id(&tail).then_some(tail)
}
