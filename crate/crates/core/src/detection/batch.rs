use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{VerdictRecord, VERDICT_ARTIFACT};
use crate::artifact::{self, ArtifactError, ArtifactHeader};

/// One function to analyze.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeInput {
    pub code_ref: String,
    pub code: String,
    /// Used by the CWE-enhanced baseline.
    #[serde(default)]
    pub cwe_id: Option<String>,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    /// One record per input, in input order.
    pub records: Vec<VerdictRecord>,
    /// Inputs whose verdict was taken from an earlier run.
    pub resumed: usize,
    /// Inputs detected in this run.
    pub ran: usize,
}

/// Strict read of a verdict file.
pub fn read_verdicts(path: &Path) -> Result<(ArtifactHeader, Vec<VerdictRecord>), ArtifactError> {
    artifact::read_jsonl(path, VERDICT_ARTIFACT)
}

/// Successful verdicts already in `path`. A line cut short by an interrupted
/// run is skipped; error records are dropped so those inputs run again.
fn finished(path: &Path) -> Result<BTreeMap<String, VerdictRecord>, ArtifactError> {
    let records: Vec<VerdictRecord> = artifact::read_jsonl_lenient(path, VERDICT_ARTIFACT)?;
    Ok(records
        .into_iter()
        .filter(|r| matches!(r, VerdictRecord::Ok(_)))
        .map(|r| (r.code_ref().to_string(), r))
        .collect())
}

/// Detects every input, `jobs` at a time, appending each record to `out` as
/// soon as it exists. Inputs with a successful verdict already in `out` are
/// not run again. When all inputs are done, `out` is rewritten with one
/// record per input in input order, so the final file does not depend on
/// scheduling.
pub fn run_batch(
    inputs: &[CodeInput],
    jobs: usize,
    out: &Path,
    header: &ArtifactHeader,
    detect: &(dyn Fn(&CodeInput) -> VerdictRecord + Sync),
) -> Result<BatchOutcome, ArtifactError> {
    let mut seen = BTreeSet::new();
    if let Some(dup) = inputs.iter().find(|i| !seen.insert(i.code_ref.as_str())) {
        return Err(ArtifactError::Format {
            path: out.display().to_string(),
            line: 0,
            message: format!("duplicate code_ref {}", dup.code_ref),
        });
    }

    let done = finished(out)?;
    let todo: Vec<usize> = (0..inputs.len()).filter(|&i| !done.contains_key(&inputs[i].code_ref)).collect();
    let results: Vec<Mutex<Option<VerdictRecord>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let file_lock = Mutex::new(());
    let write_err: Mutex<Option<ArtifactError>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, todo.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let record = detect(&inputs[i]);
                {
                    let _g = file_lock.lock().unwrap();
                    if let Err(e) = artifact::append_jsonl(out, header, &record) {
                        write_err.lock().unwrap().get_or_insert(e);
                    }
                }
                *results[i].lock().unwrap() = Some(record);
            });
        }
    });
    if let Some(e) = write_err.into_inner().unwrap() {
        return Err(e);
    }

    let ran = todo.len();
    let mut done = done;
    let records: Vec<VerdictRecord> = inputs
        .iter()
        .zip(results)
        .map(|(input, slot)| {
            slot.into_inner().unwrap().unwrap_or_else(|| done.remove(&input.code_ref).expect("resumed record"))
        })
        .collect();
    let tmp = out.with_extension("jsonl.tmp");
    artifact::write_jsonl(&tmp, header, &records)?;
    std::fs::rename(&tmp, out).map_err(|source| ArtifactError::Io { path: out.display().to_string(), source })?;
    Ok(BatchOutcome { records, resumed: inputs.len() - ran, ran })
}
