use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vulrag::config::{self, ConfigError, RunConfig};
use vulrag::detection::{Strategy, VerdictRecord};
use vulrag::pipeline::{self, DetectInputs, PipelineError};

/// Knowledge-level retrieval-augmented vulnerability detection.
///
/// Settings resolve as: command-line flags, then `VULRAG_<SECTION>__<KEY>`
/// environment variables, then the `--config` file, then built-in defaults.
/// Exit status is 0 on success, 1 on an operational failure and 2 on a
/// usage error.
#[derive(Parser, Debug)]
#[command(name = "vulrag", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set retrieval.b=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Call the configured model endpoint instead of replaying the cache.
    #[arg(long, global = true)]
    live: bool,
    /// Replay cache file (read in replay mode, written through in live mode).
    #[arg(long, global = true, value_name = "FILE")]
    cache: Option<PathBuf>,
    /// Worker threads, capped by the gateway's in-flight limit.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse patch records, drop reverted and oversized pairs, split train/test.
    BuildBench {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Fraction of CVEs held out for testing.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "token-limit")]
        token_limit: Option<usize>,
    },
    /// Extract one knowledge item per training pair.
    BuildKb {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        /// Test split for the leakage check; defaults to test.jsonl beside --train.
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Two demonstration records for the extraction prompts.
        #[arg(long, value_name = "FILE")]
        demos: Option<PathBuf>,
        /// Generalize identifiers in the extracted knowledge (default).
        #[arg(long = "abstract", overrides_with = "no_abstract")]
        abstract_: bool,
        #[arg(long = "no-abstract")]
        no_abstract: bool,
    },
    /// Build the three BM25 field indexes over a knowledge base.
    Index {
        #[arg(long, value_name = "FILE")]
        kb: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Show the knowledge items retrieved for one function.
    Retrieve {
        #[arg(long, value_name = "DIR")]
        idx: PathBuf,
        #[arg(long, value_name = "FILE")]
        code: PathBuf,
        /// Hits kept per field before fusion.
        #[arg(long)]
        n: Option<usize>,
        /// Candidates kept after fusion.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Label functions as vulnerable or not.
    Detect {
        #[arg(long, value_name = "DIR")]
        idx: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        kb: Option<PathBuf>,
        /// A source file or a directory of them.
        #[arg(long, value_name = "PATH", required_unless_present = "bench", conflicts_with = "bench")]
        code: Option<PathBuf>,
        /// A benchmark split; both members of every pair are detected.
        #[arg(long, value_name = "FILE")]
        bench: Option<PathBuf>,
        /// vul-rag, basic, cot1, cot2, cwe or code-rag.
        #[arg(long)]
        strategy: Option<String>,
        /// CWE description table for the cwe strategy.
        #[arg(long = "cwe-desc", value_name = "FILE")]
        cwe_desc: Option<PathBuf>,
        /// CWE of the --code inputs, for the cwe strategy.
        #[arg(long)]
        cwe: Option<String>,
        /// Ask cause and fix in one prompt per knowledge item.
        #[arg(long)]
        combined: bool,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score verdicts against a benchmark split.
    Eval {
        #[arg(long, value_name = "FILE")]
        verdicts: PathBuf,
        #[arg(long, value_name = "FILE")]
        bench: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Recorded in the report; omitted by default so reruns match.
        #[arg(long)]
        timestamp: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Operational(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Usage(m) => Failure::Usage(m),
            PipelineError::Config(c) => c.into(),
            other => Failure::Operational(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::UnknownKey { .. } | ConfigError::BadValue { .. } | ConfigError::Invalid(_) => {
                Failure::Usage(e.to_string())
            }
            ConfigError::File { .. } => Failure::Operational(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Operational(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Flags that map onto configuration keys, lowest precedence first.
fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Failure> {
    let g = &cli.global;
    let mut out = Vec::new();
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects SECTION.KEY=VALUE, got {s:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: String| out.push((k.to_string(), v));
    if g.live {
        push("gateway.mode", "live".into());
    }
    if let Some(c) = &g.cache {
        push("gateway.cache", path_str(c));
    }
    if let Some(j) = g.jobs {
        push("detection.jobs", j.to_string());
        push("knowledge.jobs", j.to_string());
    }
    match &cli.command {
        Command::BuildBench { ratio, seed, token_limit, .. } => {
            if let Some(r) = ratio {
                push("corpus.ratio", r.to_string());
            }
            if let Some(s) = seed {
                push("corpus.seed", s.to_string());
            }
            if let Some(t) = token_limit {
                push("corpus.token_limit", t.to_string());
            }
        }
        Command::BuildKb { demos, abstract_, no_abstract, .. } => {
            if let Some(d) = demos {
                push("knowledge.demos", path_str(d));
            }
            if *no_abstract {
                push("knowledge.abstraction", "false".into());
            } else if *abstract_ {
                push("knowledge.abstraction", "true".into());
            }
        }
        Command::Retrieve { n, k, .. } => {
            if let Some(n) = n {
                push("retrieval.n", n.to_string());
            }
            if let Some(k) = k {
                push("retrieval.final_k", k.to_string());
            }
        }
        Command::Detect { strategy, cwe_desc, combined, .. } => {
            if let Some(s) = strategy {
                push("detection.strategy", s.clone());
            }
            if let Some(c) = cwe_desc {
                push("detection.cwe_desc", path_str(c));
            }
            if *combined {
                push("detection.combined", "true".into());
            }
        }
        Command::Index { .. } | Command::Eval { .. } => {}
    }
    Ok(out)
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let flags = overrides(cli)?;
    if let Some(f) = &cli.global.config {
        if !f.exists() {
            return Err(Failure::Usage(format!("config file {} does not exist", f.display())));
        }
    }
    Ok(config::load_config(
        cli.global.config.as_deref(),
        std::env::vars(),
        flags.iter().map(|(k, v)| (k.as_str(), v.clone())),
    )?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::BuildBench { input, out, .. } => {
            let o = pipeline::build_bench(input, out, &cfg)?;
            for w in &o.warnings {
                tracing::warn!("{w}");
            }
            tracing::info!(
                records = o.records_in,
                train = o.train,
                test = o.test,
                rejected = o.rejections.len(),
                "benchmark written to {}",
                out.display()
            );
            print!("{}", o.summary);
        }
        Command::BuildKb { train, test, out, .. } => {
            let gw = pipeline::make_gateway(&cfg)?;
            let o = pipeline::build_kb(train, test.as_deref(), out, &cfg, &gw)?;
            for (id, why) in &o.failures {
                tracing::warn!(instance = %id, "extraction failed: {why}");
            }
            tracing::info!(items = o.items, produced = o.produced, resumed = o.skipped, "knowledge base written");
            if !o.failures.is_empty() {
                return Err(Failure::Operational(format!(
                    "{} of {} instances failed extraction; rerun to retry them",
                    o.failures.len(),
                    o.failures.len() + o.produced
                )));
            }
        }
        Command::Index { kb, out } => {
            let idx = pipeline::index(kb, out, &cfg)?;
            tracing::info!(items = idx.len(), "index written to {}", out.display());
        }
        Command::Retrieve { idx, code, .. } => {
            let index = pipeline::load_index(idx)?;
            if !code.is_file() {
                return Err(Failure::Usage(format!("code file {} does not exist", code.display())));
            }
            let text = std::fs::read_to_string(code)
                .map_err(|e| Failure::Operational(format!("{}: {e}", code.display())))?;
            let gw = pipeline::make_gateway(&cfg)?;
            let r = pipeline::retrieve(&index, &text, &cfg, &gw)?;
            print!("{}", pipeline::render_retrieval(&r));
        }
        Command::Detect { idx, kb, code, bench, cwe, out, .. } => {
            let strategy: Strategy = cfg.strategy()?;
            let inputs = match (code, bench) {
                (Some(c), _) => pipeline::inputs_from_path(c, cwe.as_deref())?,
                (None, Some(b)) => pipeline::inputs_from_bench(&pipeline::read_split(b)?),
                (None, None) => unreachable!("clap requires one of --code and --bench"),
            };
            let needs_kb = matches!(strategy, Strategy::VulRag | Strategy::CodeRag);
            let (kb, index) = match (needs_kb, kb, idx) {
                (true, Some(k), Some(i)) => (Some(pipeline::load_kb(k)?), Some(pipeline::load_index(i)?)),
                (true, _, _) => return Err(Failure::Usage(format!("strategy {strategy} needs --kb and --idx"))),
                (false, _, _) => (None, None),
            };
            let gw = pipeline::make_gateway(&cfg)?;
            let o = pipeline::detect(
                DetectInputs { codes: &inputs, kb: kb.as_ref(), index: index.as_ref() },
                strategy,
                out,
                &cfg,
                &gw,
            )?;
            let errors: Vec<_> = o
                .records
                .iter()
                .filter_map(|r| match r {
                    VerdictRecord::Error { code_ref, error, .. } => Some(format!("{code_ref}: {error}")),
                    VerdictRecord::Ok(_) => None,
                })
                .collect();
            tracing::info!(ran = o.ran, resumed = o.resumed, errors = errors.len(), "verdicts written to {}", out.display());
            if !errors.is_empty() {
                for e in &errors {
                    eprintln!("{e}");
                }
                return Err(Failure::Operational(format!("{} of {} inputs failed", errors.len(), o.records.len())));
            }
        }
        Command::Eval { verdicts, bench, out, timestamp } => {
            let (_, table) = pipeline::eval(verdicts, bench, out, timestamp.as_deref())?;
            print!("{table}");
        }
    }
    Ok(())
}
