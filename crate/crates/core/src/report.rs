//! Audit report assembly and Markdown rendering of every JSON artifact.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contamination::{
    classify_tiers, detect_exact_with, doc_leakage, item_catalog, persistence_analysis,
    sweep_from_coverages, test_coverages, ContaminationRecord, DocLeakageReport, MatchMode,
    SweepPoint, Tier, LOW_SOURCE_SIMILARITY,
};
use crate::corpus::{corpus_stats, filter_valid, hex, Corpus, CorpusStats};
use crate::error::{Error, Result};
use crate::baselines::{MixtureCurve, Retrieved};
use crate::metrics::{stratified_eval, BleuConfig, EvalOptions, Hypothesis, MetricReport};
use crate::ngram::{Field, NgramIndex};
use crate::splitter::{DecontaminationReport, SplitCertificate};
use crate::textnorm::{normalize, NORMALIZATION_VERSION};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TOP_FORMULAS: usize = 20;

/// sha256 of the canonical JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct InputEcho {
    pub name: String,
    pub samples: usize,
    pub content_hash: String,
}

impl InputEcho {
    pub fn of(corpus: &Corpus) -> Self {
        InputEcho {
            name: corpus.name.clone(),
            samples: corpus.len(),
            content_hash: corpus.content_hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AuditConfig {
    pub n: usize,
    pub soft_low: f64,
    pub thresholds: Vec<f64>,
    pub normalization: String,
    /// Measure behind every source-similarity number in the report.
    pub source_similarity: String,
    pub low_source_similarity: f64,
    pub top_formulas: usize,
    pub seed: u64,
    pub inputs: Vec<InputEcho>,
}

impl AuditConfig {
    pub fn new(n: usize, soft_low: f64, thresholds: Vec<f64>, seed: u64) -> Self {
        AuditConfig {
            n,
            soft_low,
            thresholds,
            normalization: NORMALIZATION_VERSION.to_owned(),
            source_similarity: format!("char-{n}gram-coverage(normalized source)"),
            low_source_similarity: LOW_SOURCE_SIMILARITY,
            top_formulas: DEFAULT_TOP_FORMULAS,
            seed,
            inputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ContaminationSummary {
    /// Valid (non-empty source and target) items compared against train.
    pub evaluated: usize,
    pub exact_count: usize,
    pub exact_rate: f64,
    pub raw_exact_count: usize,
    pub raw_exact_rate: f64,
    pub exact_ids: Vec<String>,
    pub tier_sizes: BTreeMap<String, usize>,
    pub threshold_sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FormulaEntry {
    pub normalized: String,
    /// First raw training form in load order.
    pub example: String,
    pub train_frequency: usize,
    pub train_docs: usize,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LeakageSummary {
    #[serde(flatten)]
    pub report: DocLeakageReport,
    /// Test exact matches that survive removal of every training sample from
    /// a test document.
    pub persisting_exact: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AuditReport {
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: AuditConfig,
    /// Unfiltered statistics per input corpus.
    pub corpus_stats: BTreeMap<String, CorpusStats>,
    pub test: ContaminationSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<ContaminationSummary>,
    /// Exact test items with some target-matching training sample whose
    /// source similarity is below `low_source_similarity`.
    pub low_source_similarity_exact: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_leakage: Option<LeakageSummary>,
    pub formulaic_targets: Vec<FormulaEntry>,
    pub notes: Vec<String>,
}

pub struct Audit {
    pub report: AuditReport,
    pub catalog: Vec<ContaminationRecord>,
}

fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

fn summarize(held_out: &Corpus, train: &Corpus, index: Option<&NgramIndex>, config: &AuditConfig) -> Result<ContaminationSummary> {
    let exact = detect_exact_with(held_out, train, MatchMode::Normalized);
    let raw = detect_exact_with(held_out, train, MatchMode::Raw);
    let mut tier_sizes: BTreeMap<String, usize> =
        Tier::ALL.iter().map(|t| (t.name().to_owned(), 0)).collect();
    let threshold_sweep = match index {
        Some(index) => {
            for tier in classify_tiers(held_out, index, &exact, config.soft_low)?.values() {
                *tier_sizes.get_mut(tier.name()).expect("all tiers present") += 1;
            }
            sweep_from_coverages(&test_coverages(held_out, index), &config.thresholds)?
        }
        None => {
            *tier_sizes.get_mut(Tier::Clean.name()).expect("clean tier") = held_out.len();
            sweep_from_coverages(&[], &config.thresholds)?
        }
    };
    Ok(ContaminationSummary {
        evaluated: held_out.len(),
        exact_count: exact.len(),
        exact_rate: rate(exact.len(), held_out.len()),
        raw_exact_count: raw.len(),
        raw_exact_rate: rate(raw.len(), held_out.len()),
        exact_ids: exact.into_iter().collect(),
        tier_sizes,
        threshold_sweep,
    })
}

/// Most frequent normalized training targets, most frequent first.
pub fn formulaic_targets(train: &Corpus, test: &Corpus, top: usize) -> Vec<FormulaEntry> {
    let mut entries: HashMap<String, (String, usize, BTreeSet<&str>)> = HashMap::new();
    for s in train {
        let key = normalize(&s.target).into_string();
        if key.is_empty() {
            continue;
        }
        let e = entries.entry(key).or_insert_with(|| (s.target.clone(), 0, BTreeSet::new()));
        e.1 += 1;
        if let Some(d) = s.doc_id.as_deref() {
            e.2.insert(d);
        }
    }
    let mut ranked: Vec<_> = entries.into_iter().collect();
    ranked.sort_by(|(ka, a), (kb, b)| b.1.cmp(&a.1).then(ka.cmp(kb)));
    ranked.truncate(top);
    let mut test_ids: HashMap<String, Vec<String>> = HashMap::new();
    for s in test {
        test_ids
            .entry(normalize(&s.target).into_string())
            .or_default()
            .push(s.id.clone());
    }
    ranked
        .into_iter()
        .map(|(normalized, (example, train_frequency, docs))| {
            let mut ids = test_ids.remove(&normalized).unwrap_or_default();
            ids.sort();
            FormulaEntry {
                example,
                train_frequency,
                train_docs: docs.len(),
                test_ids: ids,
                normalized,
            }
        })
        .collect()
}

/// Full audit of `test` (and optionally `valid`) against `train`. Corpora
/// are valid-filtered before comparison; `train_index`, when supplied, must
/// index the filtered training targets with `config.n`.
pub fn run_audit(
    train: &Corpus,
    test: &Corpus,
    valid: Option<&Corpus>,
    mut config: AuditConfig,
    train_index: Option<NgramIndex>,
) -> Result<Audit> {
    let mut corpus_stats_map = BTreeMap::new();
    config.inputs.clear();
    for c in [Some(train), valid, Some(test)].into_iter().flatten() {
        corpus_stats_map.insert(c.name.clone(), corpus_stats(c));
        config.inputs.push(InputEcho::of(c));
    }
    let train_f = filter_valid(train);
    let test_f = filter_valid(test);
    let valid_f = valid.map(filter_valid);

    let (target_index, source_index) = if train_f.is_empty() {
        (None, None)
    } else {
        let target_index = match train_index {
            Some(ix) => {
                if ix.n() != config.n || ix.field() != Field::Target || ix.corpus_hash() != train_f.content_hash() {
                    return Err(Error::Index(
                        "supplied index does not match the filtered training targets or n".into(),
                    ));
                }
                ix
            }
            None => NgramIndex::build(&train_f, config.n, Field::Target)?,
        };
        let source_index = NgramIndex::build(&train_f, config.n, Field::Source)?;
        (Some(target_index), Some(source_index))
    };

    let test_summary = summarize(&test_f, &train_f, target_index.as_ref(), &config)?;
    let valid_summary = valid_f
        .as_ref()
        .map(|v| summarize(v, &train_f, target_index.as_ref(), &config))
        .transpose()?;

    let catalog = match (&target_index, &source_index) {
        (Some(t), Some(s)) => item_catalog(&test_f, &train_f, t, s, config.soft_low)?,
        _ => Vec::new(),
    };
    let low_source_similarity_exact = catalog
        .iter()
        .filter(|r| {
            r.min_source_similarity_over_matches
                .is_some_and(|m| m < config.low_source_similarity)
        })
        .count();

    let mut notes = vec![format!(
        "coverage is computed over character {}-grams of normalized text ({}); counts under a raw-text gram convention can differ by a few items",
        config.n, config.normalization
    )];
    let doc_leakage = match doc_leakage(&test_f, &train_f) {
        Ok(report) => {
            let removed: BTreeSet<String> = report
                .per_doc
                .iter()
                .filter(|d| d.train_count > 0)
                .map(|d| d.doc_id.clone())
                .collect();
            Some(LeakageSummary {
                persisting_exact: persistence_analysis(&test_f, &train_f, &removed)
                    .into_iter()
                    .collect(),
                report,
            })
        }
        Err(Error::MissingDocId(id)) => {
            notes.push(format!("document leakage skipped: sample {id:?} has no doc_id"));
            None
        }
        Err(e) => return Err(e),
    };
    if train_f.is_empty() {
        notes.push("training corpus has no valid samples; every test item is clean".into());
    }

    let formulaic = formulaic_targets(&train_f, &test_f, config.top_formulas);
    let report = AuditReport {
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        config_hash: config_hash(&config),
        config,
        corpus_stats: corpus_stats_map,
        test: test_summary,
        valid: valid_summary,
        low_source_similarity_exact,
        doc_leakage,
        formulaic_targets: formulaic,
        notes,
    };
    Ok(Audit { report, catalog })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalConfig {
    pub bleu: BleuConfig,
    pub resamples: usize,
    pub seed: u64,
    pub test: InputEcho,
    /// sha256 over the joined hypotheses in test order.
    pub hypotheses_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalReport {
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: EvalConfig,
    pub subsets: Vec<MetricReport>,
}

/// Stratified evaluation of id-joined hypotheses.
pub fn run_evaluation(
    test: &Corpus,
    hypotheses: &HashMap<String, Hypothesis>,
    tiers: &BTreeMap<String, Tier>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let subsets = stratified_eval(test, hypotheses, tiers, options)?;
    let mut hasher = Sha256::new();
    for s in test {
        let h = &hypotheses[&s.id].hypothesis;
        for part in [s.id.as_str(), h.as_str()] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
    }
    let config = EvalConfig {
        bleu: options.bleu,
        resamples: options.resamples,
        seed: options.seed,
        test: InputEcho::of(test),
        hypotheses_hash: hex(&hasher.finalize()),
    };
    Ok(EvalReport {
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        config_hash: config_hash(&config),
        config,
        subsets,
    })
}

/// JSON schemas of every artifact the CLI writes, keyed by artifact name.
pub fn schemas() -> Vec<(&'static str, schemars::schema::RootSchema)> {
    use schemars::schema_for;
    vec![
        ("audit", schema_for!(AuditReport)),
        ("catalog_record", schema_for!(ContaminationRecord)),
        ("certificate", schema_for!(SplitCertificate)),
        ("decontamination", schema_for!(DecontaminationReport)),
        ("evaluation", schema_for!(EvalReport)),
        ("mixture", schema_for!(MixtureCurve)),
        ("retrieved", schema_for!(Retrieved)),
        ("stats", schema_for!(BTreeMap<String, CorpusStats>)),
    ]
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.digits$}"))
}

pub fn stats_markdown(stats: &BTreeMap<String, CorpusStats>) -> String {
    let mut out = String::from("| corpus | total | non-empty target | valid | unique targets | docs |\n|---|---:|---:|---:|---:|---:|\n");
    for (name, s) in stats {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            cell(name),
            s.total,
            s.nonempty_target,
            s.valid,
            s.unique_targets,
            s.docs
        );
    }
    out
}

fn summary_markdown(out: &mut String, title: &str, s: &ContaminationSummary) {
    let _ = writeln!(out, "## {title}\n");
    let _ = writeln!(
        out,
        "- exact (normalized): {}/{} ({})",
        s.exact_count,
        s.evaluated,
        pct(s.exact_rate)
    );
    let _ = writeln!(
        out,
        "- exact (raw): {}/{} ({})",
        s.raw_exact_count,
        s.evaluated,
        pct(s.raw_exact_rate)
    );
    let tiers: Vec<String> = s.tier_sizes.iter().map(|(t, n)| format!("{t} {n}")).collect();
    let _ = writeln!(out, "- tiers: {}\n", tiers.join(", "));
    out.push_str("| threshold | flagged | rate |\n|---:|---:|---:|\n");
    for p in &s.threshold_sweep {
        let _ = writeln!(
            out,
            "| {:.2} | {} | {} |",
            p.threshold,
            p.flagged,
            pct(rate(p.flagged, s.evaluated))
        );
    }
    out.push('\n');
}

pub fn audit_markdown(r: &AuditReport) -> String {
    let c = &r.config;
    let mut out = String::from("# Contamination audit\n\n");
    let _ = writeln!(
        out,
        "toolkit {} | config {} | n={} | soft_low={:.2} | {} | seed {}\n",
        r.toolkit_version,
        &r.config_hash[..12],
        c.n,
        c.soft_low,
        c.normalization,
        c.seed
    );
    out.push_str("## Corpora\n\n");
    out.push_str(&stats_markdown(&r.corpus_stats));
    out.push('\n');
    summary_markdown(&mut out, "Test contamination", &r.test);
    if let Some(v) = &r.valid {
        summary_markdown(&mut out, "Validation contamination", v);
    }
    let _ = writeln!(
        out,
        "Exact test items with a matching training sample below {} source similarity ({}): {}\n",
        pct(c.low_source_similarity),
        c.source_similarity,
        r.low_source_similarity_exact
    );
    if let Some(d) = &r.doc_leakage {
        let l = &d.report;
        out.push_str("## Document leakage\n\n");
        let _ = writeln!(
            out,
            "- test documents also in training: {}/{}",
            l.overlapping_docs, l.test_docs
        );
        let _ = writeln!(
            out,
            "- training samples in test documents: {}/{} ({})",
            l.train_in_test_docs,
            l.train_total,
            pct(l.train_fraction)
        );
        let _ = writeln!(
            out,
            "- exact matches persisting after removing those documents: {}\n",
            d.persisting_exact.len()
        );
        out.push_str("| doc | train | test |\n|---|---:|---:|\n");
        for o in &l.per_doc {
            let _ = writeln!(out, "| {} | {} | {} |", cell(&o.doc_id), o.train_count, o.test_count);
        }
        out.push('\n');
    }
    out.push_str("## Formulaic training targets\n\n| target | train freq | train docs | test items |\n|---|---:|---:|---|\n");
    for f in &r.formulaic_targets {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            cell(&f.example),
            f.train_frequency,
            f.train_docs,
            f.test_ids.join(", ")
        );
    }
    if !r.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &r.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}

pub fn catalog_markdown(records: &[ContaminationRecord]) -> String {
    let mut out = String::from(
        "| id | doc | tier | coverage | train freq | max src sim | min src sim (matches) | target |\n|---|---|---|---:|---:|---:|---:|---|\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.3} | {} | {:.3} | {} | {} |",
            cell(&r.sample_id),
            cell(r.doc_id.as_deref().unwrap_or("")),
            r.tier.name(),
            r.coverage.value,
            r.train_frequency,
            r.max_source_similarity,
            opt(r.min_source_similarity_over_matches, 3),
            cell(&r.target)
        );
    }
    out
}

pub fn eval_markdown(report: &EvalReport) -> String {
    let mut out = format!(
        "# Translation quality by contamination status\n\ntoolkit {} | config {}\n\n",
        report.toolkit_version,
        &report.config_hash[..12]
    );
    out.push_str(&subsets_markdown(&report.subsets));
    out
}

pub fn subsets_markdown(reports: &[MetricReport]) -> String {
    let mut out = String::from("| subset | n | BLEU | 95% CI | chrF++ | external |\n|---|---:|---:|---|---:|---:|\n");
    for r in reports {
        let ci = r
            .bleu_ci
            .map_or_else(|| "n/a".to_owned(), |(lo, hi)| format!("[{lo:.1}, {hi:.1}]"));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.subset,
            r.n,
            opt(r.bleu, 1),
            ci,
            opt(r.chrfpp, 1),
            opt(r.external_mean, 3)
        );
    }
    if let Some(r) = reports.first() {
        let _ = write!(
            out,
            "\nBLEU {} | chrF++ {} | bootstrap {} resamples, seed {}\n",
            r.signature, r.chrf_signature, r.resamples, r.seed
        );
    }
    out
}

pub fn certificate_markdown(c: &SplitCertificate) -> String {
    let mut out = format!(
        "# Split certificate: {}\n\n",
        if c.pass { "PASS" } else { "FAIL" }
    );
    let sizes: Vec<String> = c.sizes.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(out, "- sizes: {}", sizes.join(", "));
    let _ = writeln!(out, "- exact target overlap (test vs train): {}", c.exact_overlap_count);
    let _ = writeln!(out, "- exact target overlap (valid vs train): {}", c.valid_overlap_count);
    let _ = writeln!(out, "- documents in more than one split: {}", c.doc_overlap_count);
    let _ = writeln!(out, "- dedup removals: {}\n", c.dedup_removals);
    out.push_str("| threshold | flagged |\n|---:|---:|\n");
    for p in &c.threshold_sweep {
        let _ = writeln!(out, "| {:.2} | {} |", p.threshold, p.flagged);
    }
    out.push_str("\n| split | genre | samples |\n|---|---|---:|\n");
    for (split, genres) in &c.genre_distribution {
        for (g, n) in genres {
            let _ = writeln!(out, "| {split} | {} | {n} |", cell(g));
        }
    }
    out
}

pub fn decontamination_markdown(r: &DecontaminationReport) -> String {
    format!(
        "# Document decontamination\n\n- removed training samples: {} ({})\n- removed documents: {}\n- exact matches before: {}\n- exact matches persisting: {} ({})\n",
        r.removed,
        pct(r.removed_fraction),
        r.removed_doc_ids.len(),
        r.exact_before.len(),
        r.persisting_exact.len(),
        r.persisting_exact.join(", ")
    )
}
