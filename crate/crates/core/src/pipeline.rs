//! The six pipeline stages as library calls over files. The command-line
//! tool is a thin layer over these.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError, ArtifactHeader};
use crate::config::{ConfigError, GatewayMode, RunConfig};
use crate::corpus::{self, ParseOptions, RecordError, Removal, TokenEstimator, VulnInstance};
use crate::detection::{self, CodeInput, CweDescriptions, Detector, Strategy, VerdictRecord};
use crate::gateway::{Gateway, GatewayError, HttpBackend, ReplayCache};
use crate::knowledge::{self, BuildOptions, Demonstrations, Extractor, KnowledgeBase, KnowledgeError, KnowledgeItem};
use crate::metrics::{self, EvalReport, Member};
use crate::retrieval::{KnowledgeIndex, Retrieval, RetrievalQuery};

pub const TRAIN_ARTIFACT: &str = "train-split";
pub const TEST_ARTIFACT: &str = "test-split";
pub const REJECTS_ARTIFACT: &str = "bench-rejections";
pub const KB_ARTIFACT: &str = "knowledge-base";
pub const SPLIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad invocation: missing inputs or settings the stage cannot run
    /// without.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn require(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Gateway described by the configuration. Replay mode needs a cache file;
/// live mode reads the API key from the configured variable and caches
/// through when a cache file is set.
pub fn make_gateway(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let g = &cfg.gateway;
    let gw = match g.mode {
        GatewayMode::Replay => {
            let path = cfg
                .cache_path()
                .ok_or_else(|| PipelineError::Usage("replay mode needs a cache file (gateway.cache)".into()))?;
            require(&path, "replay cache")?;
            Gateway::replay(Arc::new(ReplayCache::load(&path)?))
        }
        GatewayMode::Live => {
            let key = std::env::var(&g.api_key_env).map_err(|_| {
                PipelineError::Usage(format!("live mode needs an API key in ${}", g.api_key_env))
            })?;
            let backend = HttpBackend::new(&g.base_url, key, Duration::from_secs(g.timeout_secs));
            let cache = cfg.cache_path().map(|p| ReplayCache::open(&p).map(Arc::new)).transpose()?;
            Gateway::live(Box::new(backend), cache)
        }
    };
    Ok(gw.with_retry(cfg.retry_policy()).with_in_flight_limit(g.in_flight))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Rejection {
    Malformed { line: usize, cve_id: Option<String>, reason: String },
    Reverted { instance_id: String, reason: Removal },
    TooLong { instance_id: String },
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub records_in: usize,
    pub train: usize,
    pub test: usize,
    pub rejections: Vec<Rejection>,
    pub warnings: Vec<String>,
    pub summary: String,
}

/// Parses records, drops reverted and oversized pairs, splits, and writes
/// `train.jsonl`, `test.jsonl`, `rejections.jsonl` and `summary.txt` into
/// `out_dir`.
pub fn build_bench(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<BenchOutcome, PipelineError> {
    require(input, "input")?;
    let c = &cfg.corpus;
    let parsed = corpus::parse_instances(
        BufReader::new(File::open(input).map_err(io(input))?),
        ParseOptions { verify_diffs: c.verify_diffs },
    )
    .map_err(io(input))?;
    let records_in = parsed.instances.len() + parsed.errors.len();
    let mut rejections: Vec<Rejection> = parsed
        .errors
        .into_iter()
        .map(|RecordError { line, cve_id, reason }| Rejection::Malformed { line, cve_id, reason })
        .collect();

    let graph = corpus::build_patch_graph(&parsed.instances);
    let filtered = corpus::filter_reverted(&graph, &parsed.instances);
    let mut warnings: Vec<String> =
        filtered.branch_nodes.iter().map(|n| format!("patch graph branches at node {n}")).collect();
    rejections.extend(
        filtered.removed.iter().map(|(id, why)| Rejection::Reverted { instance_id: id.clone(), reason: *why }),
    );
    let est = TokenEstimator { chars_per_token: c.chars_per_token };
    let (kept, too_long) = corpus::filter_by_token_limit(filtered.retained, c.token_limit, est);
    rejections.extend(too_long.into_iter().map(|i| Rejection::TooLong { instance_id: i.instance_id }));

    let split = corpus::split_dataset(&kept, c.ratio, c.seed, c.split).map_err(|e| PipelineError::Failed(e.to_string()))?;
    warnings.extend(split.warnings.iter().cloned());

    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let header_cfg = cfg.for_header();
    let hdr = |name| ArtifactHeader::new(name, SPLIT_SCHEMA_VERSION, &header_cfg);
    artifact::write_jsonl(&out_dir.join("train.jsonl"), &hdr(TRAIN_ARTIFACT), &split.train)?;
    artifact::write_jsonl(&out_dir.join("test.jsonl"), &hdr(TEST_ARTIFACT), &split.test)?;
    artifact::write_jsonl(&out_dir.join("rejections.jsonl"), &hdr(REJECTS_ARTIFACT), &rejections)?;
    let summary = corpus::summary_table(&split);
    let summary_path = out_dir.join("summary.txt");
    std::fs::write(&summary_path, &summary).map_err(io(&summary_path))?;

    Ok(BenchOutcome { records_in, train: split.train.len(), test: split.test.len(), rejections, warnings, summary })
}

/// Reads a train or test split file.
pub fn read_split(path: &Path) -> Result<Vec<VulnInstance>, PipelineError> {
    require(path, "split file")?;
    match artifact::read_jsonl(path, TEST_ARTIFACT) {
        Ok((_, v)) => Ok(v),
        Err(ArtifactError::WrongKind { found, .. }) if found == TRAIN_ARTIFACT => {
            Ok(artifact::read_jsonl(path, TRAIN_ARTIFACT)?.1)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, PipelineError> {
    require(path, "knowledge base")?;
    let (header, items): (_, Vec<KnowledgeItem>) = artifact::read_jsonl(path, KB_ARTIFACT)?;
    if header.schema_version != knowledge::KB_SCHEMA_VERSION {
        return Err(PipelineError::Failed(format!(
            "{}: knowledge base schema {} is not supported (expected {})",
            path.display(),
            header.schema_version,
            knowledge::KB_SCHEMA_VERSION
        )));
    }
    let kb = KnowledgeBase::new(items);
    kb.check().map_err(|e| PipelineError::Failed(format!("{}: {e}", path.display())))?;
    Ok(kb)
}

#[derive(Debug)]
pub struct KbOutcome {
    pub items: usize,
    pub produced: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

/// Builds (or resumes) the knowledge base for `train_path` into `out`.
///
/// Test-split CVEs are read from `test_path`, or from a `test.jsonl` next to
/// the training file; any overlap aborts before the first model call.
pub fn build_kb(
    train_path: &Path,
    test_path: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
    gateway: &Gateway,
) -> Result<KbOutcome, PipelineError> {
    let train = read_split(train_path)?;
    let sibling = train_path.with_file_name("test.jsonl");
    let test_path = test_path.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let test_cves: BTreeSet<String> = match &test_path {
        Some(p) => read_split(p)?.into_iter().map(|i| i.cve_id).collect(),
        None => {
            tracing::warn!("no test split given, leakage check skipped");
            BTreeSet::new()
        }
    };

    let k = &cfg.knowledge;
    let demos = if k.demos.is_empty() { Demonstrations::builtin() } else { Demonstrations::load(Path::new(&k.demos))? };
    let guidelines = if k.guidelines.is_empty() {
        knowledge::builtin_abstraction_guidelines().to_string()
    } else {
        let p = Path::new(&k.guidelines);
        std::fs::read_to_string(p).map_err(io(p))?
    };

    let header = ArtifactHeader::new(KB_ARTIFACT, knowledge::KB_SCHEMA_VERSION, &cfg.for_header());
    let existing: Vec<KnowledgeItem> = artifact::read_jsonl_lenient(out, KB_ARTIFACT)?;
    let wanted: BTreeSet<&str> = train.iter().map(|i| i.instance_id.as_str()).collect();
    let mut by_instance: BTreeMap<String, KnowledgeItem> = existing
        .into_iter()
        .filter(|i| i.is_complete() && i.abstraction_applied == k.abstraction && wanted.contains(i.source.instance_id.as_str()))
        .map(|i| (i.source.instance_id.clone(), i))
        .collect();
    let done: BTreeSet<String> = by_instance.keys().cloned().collect();

    let extractor = Extractor { gateway, settings: cfg.model_settings(), demos: &demos, guidelines: &guidelines };
    let opts = BuildOptions {
        abstraction: k.abstraction,
        failure_budget: k.failure_budget,
        jobs: k.jobs.min(cfg.gateway.in_flight).max(1),
    };
    let sink = |item: &KnowledgeItem| {
        artifact::append_jsonl(out, &header, item).map_err(|e| std::io::Error::other(e.to_string()))
    };
    let report = knowledge::build_knowledge_base(&extractor, &train, &test_cves, &done, &opts, &sink)?;

    let produced = report.produced.len();
    for item in report.produced {
        by_instance.insert(item.source.instance_id.clone(), item);
    }
    let items: Vec<KnowledgeItem> = train.iter().filter_map(|i| by_instance.remove(&i.instance_id)).collect();
    let kb = KnowledgeBase::new(items);
    kb.check().map_err(PipelineError::Failed)?;
    let tmp = out.with_extension("jsonl.tmp");
    artifact::write_jsonl(&tmp, &header, &kb.items)?;
    std::fs::rename(&tmp, out).map_err(io(out))?;
    Ok(KbOutcome { items: kb.items.len(), produced, skipped: report.skipped, failures: report.failures })
}

/// Builds the three field indexes for the knowledge base at `kb_path`.
pub fn index(kb_path: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<KnowledgeIndex, PipelineError> {
    let kb = load_kb(kb_path)?;
    let idx = KnowledgeIndex::build(&kb);
    idx.save(out_dir, &cfg.for_header())?;
    Ok(idx)
}

pub fn load_index(dir: &Path) -> Result<KnowledgeIndex, PipelineError> {
    require(&KnowledgeIndex::path_in(dir), "index")?;
    Ok(KnowledgeIndex::load(dir)?)
}

/// Extracts the semantics of `code` and runs the three-element query.
pub fn retrieve(index: &KnowledgeIndex, code: &str, cfg: &RunConfig, gateway: &Gateway) -> Result<Retrieval, PipelineError> {
    let semantics = knowledge::extract_semantics(gateway, &cfg.model_settings(), code)?;
    let query = RetrievalQuery { code: code.to_string(), semantics };
    Ok(index.retrieve(&query, &cfg.retrieval_settings()))
}

pub fn render_retrieval(r: &Retrieval) -> String {
    let mut rows = vec![["Rank", "Item", "RRF", "Exact", "Code", "Purpose", "Behavior"].map(String::from).to_vec()];
    for (i, c) in r.candidates.iter().enumerate() {
        let rank = |f| c.per_element_rank.get(&f).map_or_else(|| "-".to_string(), |r: &u32| r.to_string());
        rows.push(vec![
            (i + 1).to_string(),
            c.item_id.clone(),
            format!("{:.6}", c.rrf_score),
            c.rrf_exact.clone(),
            rank(crate::retrieval::Field::Code),
            rank(crate::retrieval::Field::AbstractPurpose),
            rank(crate::retrieval::Field::DetailedBehavior),
        ]);
    }
    corpus::render_table(&rows)
}

/// Both members of every benchmark pair, vulnerable first.
pub fn inputs_from_bench(instances: &[VulnInstance]) -> Vec<CodeInput> {
    instances
        .iter()
        .flat_map(|i| {
            [(Member::Vulnerable, &i.vulnerable_code), (Member::Patched, &i.patched_code)].map(|(m, code)| CodeInput {
                code_ref: metrics::code_ref(&i.instance_id, m),
                code: code.clone(),
                cwe_id: Some(i.cwe_id.clone()),
            })
        })
        .collect()
}

/// A source file, or every regular file of a directory in name order. The
/// code reference is the file name.
pub fn inputs_from_path(path: &Path, cwe_id: Option<&str>) -> Result<Vec<CodeInput>, PipelineError> {
    require(path, "code path")?;
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| {
            Ok(CodeInput {
                code_ref: f.file_name().map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned()),
                code: std::fs::read_to_string(f).map_err(io(f))?,
                cwe_id: cwe_id.map(String::from),
            })
        })
        .collect()
}

pub struct DetectInputs<'a> {
    pub codes: &'a [CodeInput],
    pub kb: Option<&'a KnowledgeBase>,
    pub index: Option<&'a KnowledgeIndex>,
}

/// Runs one strategy over all inputs into the verdict file `out`.
pub fn detect(
    inputs: DetectInputs<'_>,
    strategy: Strategy,
    out: &Path,
    cfg: &RunConfig,
    gateway: &Gateway,
) -> Result<detection::BatchOutcome, PipelineError> {
    if matches!(strategy, Strategy::VulRag | Strategy::CodeRag) && (inputs.kb.is_none() || inputs.index.is_none()) {
        return Err(PipelineError::Usage(format!("strategy {strategy} needs --kb and --idx")));
    }
    let cwe = match (strategy, cfg.detection.cwe_desc.as_str()) {
        (Strategy::CweEnhanced, "") => Some(CweDescriptions::builtin()),
        (Strategy::CweEnhanced, p) => {
            let p = Path::new(p);
            require(p, "CWE description file")?;
            Some(CweDescriptions::load(p).map_err(io(p))?)
        }
        _ => None,
    };
    let detector = Detector {
        gateway,
        settings: cfg.model_settings(),
        kb: inputs.kb,
        index: inputs.index,
        retrieval: cfg.retrieval_settings(),
        combined: cfg.detection.combined,
        cwe_descriptions: cwe.as_ref(),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let header = ArtifactHeader::new(detection::VERDICT_ARTIFACT, detection::VERDICT_SCHEMA_VERSION, &cfg.for_header());
    let jobs = cfg.detection.jobs.min(cfg.gateway.in_flight).max(1);
    Ok(detection::run_batch(inputs.codes, jobs, out, &header, &|c| detector.detect_record(c, strategy))?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub header: ArtifactHeader,
    pub reports: Vec<EvalReport>,
}

/// Scores a verdict file against a benchmark split. Writes `out` as JSON and
/// the rendered table next to it with a `.txt` extension; returns the table.
pub fn eval(
    verdicts_path: &Path,
    bench_path: &Path,
    out: &Path,
    timestamp: Option<&str>,
) -> Result<(Vec<EvalReport>, String), PipelineError> {
    require(verdicts_path, "verdict file")?;
    let bench = read_split(bench_path)?;
    let (vheader, verdicts): (_, Vec<VerdictRecord>) = detection::read_verdicts(verdicts_path)?;
    let reports = metrics::build_reports(&verdicts, &bench, timestamp);
    let text = metrics::render_reports(&reports);
    let file = ReportFile {
        header: ArtifactHeader::new(metrics::REPORT_ARTIFACT, metrics::REPORT_SCHEMA_VERSION, &vheader.config),
        reports,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let json = serde_json::to_string_pretty(&file).expect("reports serialize") + "\n";
    std::fs::write(out, json).map_err(io(out))?;
    let txt = out.with_extension("txt");
    std::fs::write(&txt, &text).map_err(io(&txt))?;
    Ok((file.reports, text))
}
