use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use contam_audit::baselines::{
    knn_with_similarity, mixture_simulation, oracle_retrieval, source_knn_retrieval,
    PrecomputedSimilarity, Retrieved, DEFAULT_TRIALS,
};
use contam_audit::contamination::{load_catalog_tiers, threshold_grid, Tier, DEFAULT_SOFT_LOW};
use contam_audit::corpus::{corpus_stats, filter_valid, load_corpus, Corpus, Format};
use contam_audit::metrics::{
    load_hypotheses, BleuConfig, CaseMode, EvalOptions, DEFAULT_RESAMPLES, DEFAULT_SEED,
};
use contam_audit::ngram::{Field, NgramIndex, DEFAULT_N};
use contam_audit::report::{self, AuditConfig};
use contam_audit::splitter::{
    build_split, decontaminate_by_docs, verify_split, DedupMode, SplitSpec, VerifyConfig,
};
use contam_audit::textnorm::normalize;
use contam_audit::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_FAILED_CERTIFICATE: u8 = 3;

#[derive(Parser)]
#[command(name = "contam-audit", version, about = "Train/test contamination auditing for parallel corpora")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics (total, valid, unique normalized targets, documents).
    Stats {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Normalize stdin line by line.
    Normalize,
    /// Exact, soft and document-level contamination of test (and valid) against train.
    Audit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[command(flatten)]
        grams: GramArgs,
        #[arg(long, default_value_t = DEFAULT_SOFT_LOW)]
        soft_low: f64,
        /// Number of most frequent training targets listed.
        #[arg(long, default_value_t = report::DEFAULT_TOP_FORMULAS)]
        top_formulas: usize,
        /// Write the training target index for reuse.
        #[arg(long)]
        save_index: Option<PathBuf>,
        /// Reuse a training target index written by --save-index.
        #[arg(long)]
        load_index: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// BLEU with bootstrap CI and chrF++ per contamination subset.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Catalog JSONL written by `audit`.
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, value_enum, default_value_t = Case::Lc)]
        case: Case,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Retrieval baselines emitting hypothesis JSONL.
    Baseline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// Neighbours kept for diagnostics (source-knn).
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_N)]
        n: usize,
        /// JSONL of {test_id, train_id, similarity} replacing n-gram source similarity.
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated BLEU as a function of the contaminated fraction.
    Mixture {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.32,0.5,1.0")]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Simulated test-set size (default: number of valid test items).
        #[arg(long)]
        corpus_size: Option<usize>,
        /// CSV output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Document-level split with target deduplication and a certificate.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
        ratios: Vec<f64>,
        /// `cap:K` or `cluster`.
        #[arg(long, default_value = "cap:1", value_parser = parse_dedup)]
        dedup: DedupMode,
        #[arg(long)]
        stratify_genre: bool,
        #[arg(long, default_value_t = DEFAULT_N)]
        n: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Both)]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certificate for an existing split; exits 3 when it fails.
    Verify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        grams: GramArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Remove training samples from test documents and report persistence.
    Decontaminate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Both)]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the JSON schema of an output artifact.
    Schema {
        #[arg(value_parser = schema_names())]
        artifact: String,
    },
}

#[derive(Args)]
struct GramArgs {
    #[arg(long, default_value_t = DEFAULT_N)]
    n: usize,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long, default_value = "0.50:1.00:0.05")]
    thresholds: String,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = OutFormat::Both)]
    format: OutFormat,
    /// Output directory (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    Md,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Lc,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Oracle,
    SourceKnn,
}

fn schema_names() -> Vec<&'static str> {
    report::schemas().into_iter().map(|(n, _)| n).collect()
}

fn parse_dedup(s: &str) -> Result<DedupMode, String> {
    match s {
        "cluster" | "cluster-and-drop" => Ok(DedupMode::ClusterAndDrop),
        _ => s
            .strip_prefix("cap:")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k >= 1)
            .map(DedupMode::FrequencyCap)
            .ok_or_else(|| format!("expected `cap:K` with K >= 1 or `cluster`, got {s:?}")),
    }
}

fn parse_thresholds(s: &str) -> contam_audit::Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad thresholds {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        return threshold_grid(v[0], v[1], v[2]);
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

enum Failure {
    Error(Error),
    Certificate,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = Result<(), Failure>;

fn load(path: &Path, role: &str) -> contam_audit::Result<Corpus> {
    let mut c = load_corpus(path, Format::from_path(path))?;
    c.name = role.to_owned();
    Ok(c)
}

fn ensure_parent(path: &Path) -> contam_audit::Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> contam_audit::Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}

/// Writes `stem.json` and/or `stem.md`; the Markdown is rendered from the
/// parsed JSON so both carry the same numbers.
fn emit<T: Serialize + DeserializeOwned>(
    value: &T,
    stem: &str,
    format: OutFormat,
    out: Option<&Path>,
    markdown: impl Fn(&T) -> String,
) -> contam_audit::Result<()> {
    let json = to_json(value);
    let md = || markdown(&serde_json::from_str(&json).expect("round-trips"));
    match out {
        Some(dir) => {
            if format != OutFormat::Md {
                write_file(&dir.join(format!("{stem}.json")), &json)?;
            }
            if format != OutFormat::Json {
                write_file(&dir.join(format!("{stem}.md")), &md())?;
            }
        }
        None => {
            let mut stdout = io::stdout().lock();
            let text = match format {
                OutFormat::Json => json,
                OutFormat::Md => md(),
                OutFormat::Both => format!("{json}\n{}", md()),
            };
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn emit_text(text: &str, out: Option<&Path>) -> contam_audit::Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn run(cli: Cli) -> CmdResult {
    let seed = cli.seed;
    match cli.command {
        Command::Stats {
            train,
            valid,
            test,
            output,
        } => {
            let mut stats = BTreeMap::new();
            for (role, path) in [("train", train), ("valid", valid), ("test", test)] {
                if let Some(p) = path {
                    stats.insert(role.to_owned(), corpus_stats(&load(&p, role)?));
                }
            }
            if stats.is_empty() {
                return Err(Error::Config("give at least one of --train, --valid, --test".into()).into());
            }
            emit(&stats, "stats", output.format, output.out.as_deref(), report::stats_markdown)?;
        }
        Command::Normalize => {
            let stdin = io::stdin().lock();
            let mut stdout = io::BufWriter::new(io::stdout().lock());
            for line in stdin.lines() {
                let line = line.map_err(|e| Error::io("<stdin>", e))?;
                writeln!(stdout, "{}", normalize(&line)).map_err(|e| Error::io("<stdout>", e))?;
            }
            stdout.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Audit {
            train,
            test,
            valid,
            grams,
            soft_low,
            top_formulas,
            save_index,
            load_index,
            output,
        } => {
            let thresholds = parse_thresholds(&grams.thresholds)?;
            let train = load(&train, "train")?;
            let test = load(&test, "test")?;
            let valid = valid.map(|p| load(&p, "valid")).transpose()?;
            let index = match &load_index {
                Some(p) => Some(NgramIndex::load(p, &filter_valid(&train))?),
                None => None,
            };
            let mut config = AuditConfig::new(grams.n, soft_low, thresholds, seed);
            config.top_formulas = top_formulas;
            let index = match (index, &save_index) {
                (None, Some(p)) => {
                    let filtered = filter_valid(&train);
                    if filtered.is_empty() {
                        return Err(Error::EmptyIndex.into());
                    }
                    let ix = NgramIndex::build(&filtered, grams.n, Field::Target)?;
                    ensure_parent(p)?;
                    ix.save(p)?;
                    Some(ix)
                }
                (index, _) => index,
            };
            let audit = report::run_audit(&train, &test, valid.as_ref(), config, index)?;
            emit(
                &audit.report,
                "audit_report",
                output.format,
                output.out.as_deref(),
                report::audit_markdown,
            )?;
            if let Some(dir) = &output.out {
                if output.format != OutFormat::Md {
                    write_file(&dir.join("catalog.jsonl"), &to_jsonl(&audit.catalog))?;
                }
                if output.format != OutFormat::Json {
                    write_file(&dir.join("catalog.md"), &report::catalog_markdown(&audit.catalog))?;
                }
            }
        }
        Command::Evaluate {
            test,
            hyp,
            catalog,
            resamples,
            case,
            output,
        } => {
            let test = filter_valid(&load(&test, "test")?);
            let hyps = load_hypotheses(&hyp)?;
            let tiers = load_catalog_tiers(&catalog)?;
            let options = EvalOptions {
                bleu: BleuConfig {
                    case_mode: match case {
                        Case::Lc => CaseMode::Lc,
                        Case::Mixed => CaseMode::Mixed,
                    },
                    ..BleuConfig::default()
                },
                resamples,
                seed,
            };
            let r = report::run_evaluation(&test, &hyps, &tiers, &options)?;
            emit(&r, "evaluation", output.format, output.out.as_deref(), report::eval_markdown)?;
        }
        Command::Baseline {
            train,
            test,
            kind,
            k,
            n,
            similarity,
            out,
        } => {
            let train = filter_valid(&load(&train, "train")?);
            let test = filter_valid(&load(&test, "test")?);
            let rows: Vec<Retrieved> = if train.is_empty() {
                return Err(Error::EmptyIndex.into());
            } else {
                match (kind, similarity) {
                    (BaselineKind::Oracle, _) => {
                        let ix = NgramIndex::build(&train, n, Field::Target)?;
                        oracle_retrieval(&test, &train, &ix)
                    }
                    (BaselineKind::SourceKnn, Some(p)) => {
                        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                        let sim = PrecomputedSimilarity::from_jsonl(p.display().to_string(), &text)?;
                        knn_with_similarity(&test, &train, &sim, k)
                    }
                    (BaselineKind::SourceKnn, None) => {
                        let ix = NgramIndex::build(&train, n, Field::Source)?;
                        source_knn_retrieval(&test, &train, &ix, k)
                    }
                }
            };
            emit_text(&to_jsonl(&rows), out.as_deref())?;
        }
        Command::Mixture {
            test,
            hyp,
            catalog,
            alphas,
            trials,
            corpus_size,
            out,
        } => {
            let test = filter_valid(&load(&test, "test")?);
            let hyps = load_hypotheses(&hyp)?;
            let tiers = load_catalog_tiers(&catalog)?;
            let missing: Vec<String> = test
                .iter()
                .filter(|s| !hyps.contains_key(&s.id))
                .map(|s| s.id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingHypotheses(missing).into());
            }
            let (mut exact, mut clean) = (Vec::new(), Vec::new());
            for s in &test {
                let tier = tiers.get(&s.id).ok_or_else(|| {
                    Error::Config(format!("no contamination tier for test id {:?}", s.id))
                })?;
                let pair = (hyps[&s.id].hypothesis.as_str(), s.target.as_str());
                if *tier == Tier::Exact {
                    exact.push(pair);
                } else {
                    clean.push(pair);
                }
            }
            let size = corpus_size.unwrap_or(test.len());
            let curve = mixture_simulation(&exact, &clean, &alphas, size, trials, seed)?;
            emit_text(&curve.to_csv(), out.as_deref())?;
        }
        Command::Split {
            corpus,
            ratios,
            dedup,
            stratify_genre,
            n,
            format,
            out,
        } => {
            let ratios: [f64; 3] = ratios.try_into().map_err(|r: Vec<f64>| {
                Error::Config(format!("expected 3 ratios (train,valid,test), got {}", r.len()))
            })?;
            let corpus = load(&corpus, "corpus")?;
            let spec = SplitSpec {
                ratios,
                seed,
                dedup_mode: dedup,
                stratify_by_genre: stratify_genre,
                n,
            };
            let (set, cert) = build_split(&corpus, &spec)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for part in set.parts() {
                part.write_jsonl(&out.join(format!("{}.jsonl", part.name)))?;
            }
            emit(&cert, "certificate", format, Some(&out), report::certificate_markdown)?;
            if !cert.pass {
                return Err(Failure::Certificate);
            }
        }
        Command::Verify {
            train,
            valid,
            test,
            grams,
            output,
        } => {
            let config = VerifyConfig {
                n: grams.n,
                thresholds: parse_thresholds(&grams.thresholds)?,
                ..VerifyConfig::default()
            };
            let train = filter_valid(&load(&train, "train")?);
            let valid = match valid {
                Some(p) => filter_valid(&load(&p, "valid")?),
                None => Corpus::new("valid", Vec::new())?,
            };
            let test = filter_valid(&load(&test, "test")?);
            let cert = verify_split(&train, &valid, &test, &config)?;
            emit(&cert, "certificate", output.format, output.out.as_deref(), report::certificate_markdown)?;
            if !cert.pass {
                return Err(Failure::Certificate);
            }
        }
        Command::Decontaminate {
            train,
            test,
            format,
            out,
        } => {
            let train = filter_valid(&load(&train, "train")?);
            let test = filter_valid(&load(&test, "test")?);
            let (cleaned, r) = decontaminate_by_docs(&train, &test)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            cleaned.write_jsonl(&out.join("train.jsonl"))?;
            emit(&r, "decontamination", format, Some(&out), report::decontamination_markdown)?;
        }
        Command::Schema { artifact } => {
            let (_, schema) = report::schemas()
                .into_iter()
                .find(|(n, _)| *n == artifact)
                .expect("validated by clap");
            emit_text(&to_json(&schema), None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Certificate) => {
            eprintln!("split certificate failed");
            ExitCode::from(EXIT_FAILED_CERTIFICATE)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_DATA })
        }
    }
}
