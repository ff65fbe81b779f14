//! Corpus BLEU (13a tokenization, exponential smoothing) and chrF++,
//! score-compatible with the common reference scorer, plus paired bootstrap
//! confidence intervals and tier-stratified evaluation.
//!
//! Both metrics are computed from per-segment sufficient statistics so that
//! bootstrap resampling only re-sums integer vectors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::contamination::Tier;
use crate::corpus::{read_jsonl, Corpus};
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 12345;

/// Whitespace as understood by Python's `str.split()`, which the reference
/// tokenizers use: Unicode White_Space plus the ASCII separators 0x1C..0x1F.
fn is_py_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

fn py_split(s: &str) -> impl Iterator<Item = &str> {
    s.split(is_py_space).filter(|t| !t.is_empty())
}

static TOK_13A: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        (Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(), " ${1} "),
        (Regex::new(r"([^0-9])([.,])").unwrap(), "${1} ${2} "),
        (Regex::new(r"([.,])([^0-9])").unwrap(), " ${1} ${2}"),
        (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
    ]
});

/// mteval-v13a tokenization.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in TOK_13A.iter() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    py_split(&line).map(str::to_owned).collect()
}

/// A corpus-level metric decomposed into additive per-segment statistics.
pub trait CorpusMetric: Sync {
    fn segment_stats(&self, hypothesis: &str, reference: &str) -> Vec<u64>;
    fn score_from_stats(&self, totals: &[u64]) -> f64;
    fn signature(&self) -> String;

    fn corpus_score(&self, hypotheses: &[&str], references: &[&str]) -> Result<f64> {
        let stats = corpus_stats(self, hypotheses, references)?;
        Ok(self.score_from_stats(&sum_stats(&stats, 0..stats.len())))
    }
}

fn corpus_stats<M: CorpusMetric + ?Sized>(
    metric: &M,
    hypotheses: &[&str],
    references: &[&str],
) -> Result<Vec<Vec<u64>>> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(hypotheses
        .par_iter()
        .zip(references.par_iter())
        .map(|(h, r)| metric.segment_stats(h, r))
        .collect())
}

fn sum_stats(stats: &[Vec<u64>], idx: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut total = vec![0u64; stats[0].len()];
    for i in idx {
        for (t, v) in total.iter_mut().zip(&stats[i]) {
            *t += v;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum CaseMode {
    Lc,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct BleuConfig {
    pub case_mode: CaseMode,
    pub max_order: usize,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            case_mode: CaseMode::Lc,
            max_order: 4,
        }
    }
}

impl BleuConfig {
    pub fn signature(&self) -> String {
        let case = match self.case_mode {
            CaseMode::Lc => "lc",
            CaseMode::Mixed => "mixed",
        };
        format!("nrefs:1|case:{case}|eff:no|tok:13a|smooth:exp")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bleu {
    pub config: BleuConfig,
}

impl Bleu {
    pub fn new(config: BleuConfig) -> Self {
        Bleu { config }
    }

    fn preprocess(&self, s: &str) -> Vec<String> {
        let s = s.trim_end_matches(is_py_space);
        match self.config.case_mode {
            CaseMode::Lc => tokenize_13a(&s.to_lowercase()),
            CaseMode::Mixed => tokenize_13a(s),
        }
    }
}

fn word_ngram_counts(tokens: &[String], max_order: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for n in 1..=max_order {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl CorpusMetric for Bleu {
    /// `[hyp_len, ref_len, correct_1..N, total_1..N]`
    fn segment_stats(&self, hypothesis: &str, reference: &str) -> Vec<u64> {
        let order = self.config.max_order;
        let hyp = self.preprocess(hypothesis);
        let rf = self.preprocess(reference);
        let hyp_counts = word_ngram_counts(&hyp, order);
        let ref_counts = word_ngram_counts(&rf, order);
        let mut stats = vec![0u64; 2 + 2 * order];
        stats[0] = hyp.len() as u64;
        stats[1] = rf.len() as u64;
        for (gram, &count) in &hyp_counts {
            let n = gram.len() - 1;
            stats[2 + order + n] += count;
            if let Some(&r) = ref_counts.get(gram) {
                stats[2 + n] += count.min(r);
            }
        }
        stats
    }

    fn score_from_stats(&self, s: &[u64]) -> f64 {
        let order = self.config.max_order;
        let (sys_len, ref_len) = (s[0] as f64, s[1] as f64);
        let correct = &s[2..2 + order];
        let total = &s[2 + order..2 + 2 * order];
        let bp = if sys_len < ref_len {
            if sys_len > 0.0 {
                (1.0 - ref_len / sys_len).exp()
            } else {
                0.0
            }
        } else {
            1.0
        };
        if correct.iter().all(|&c| c == 0) {
            return 0.0;
        }
        let mut precisions = vec![0.0f64; order];
        let mut smooth = 1.0f64;
        for n in 0..order {
            if total[n] == 0 {
                break;
            }
            precisions[n] = if correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * total[n] as f64)
            } else {
                100.0 * correct[n] as f64 / total[n] as f64
            };
        }
        let log_sum: f64 = precisions
            .iter()
            .map(|&p| if p == 0.0 { -9_999_999_999.0 } else { p.ln() })
            .sum();
        bp * (log_sum / order as f64).exp()
    }

    fn signature(&self) -> String {
        self.config.signature()
    }
}

pub fn corpus_bleu(hypotheses: &[&str], references: &[&str], config: &BleuConfig) -> Result<f64> {
    Bleu::new(*config).corpus_score(hypotheses, references)
}

/// chrF++: character n-grams up to 6 (whitespace removed), word n-grams up
/// to 2, beta 2, case-sensitive.
#[derive(Debug, Clone, Copy)]
pub struct ChrfPlusPlus {
    pub char_order: usize,
    pub word_order: usize,
    pub beta: f64,
}

impl Default for ChrfPlusPlus {
    fn default() -> Self {
        ChrfPlusPlus {
            char_order: 6,
            word_order: 2,
            beta: 2.0,
        }
    }
}

const CHRF_PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

fn chrf_words(sent: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in py_split(sent) {
        let mut chars = w.chars();
        let first = chars.next().expect("non-empty token");
        let last = w.chars().next_back().expect("non-empty token");
        if chars.next().is_none() {
            out.push(w.to_owned());
        } else if CHRF_PUNCT.contains(last) {
            out.push(w[..w.len() - last.len_utf8()].to_owned());
            out.push(last.to_string());
        } else if CHRF_PUNCT.contains(first) {
            out.push(first.to_string());
            out.push(w[first.len_utf8()..].to_owned());
        } else {
            out.push(w.to_owned());
        }
    }
    out
}

fn counter<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, u64> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

impl ChrfPlusPlus {
    fn ngram_counters(&self, sent: &str) -> Vec<HashMap<String, u64>> {
        let chars: Vec<char> = sent.chars().filter(|c| !is_py_space(*c)).collect();
        let mut out = Vec::with_capacity(self.char_order + self.word_order);
        for n in 1..=self.char_order {
            out.push(counter(
                chars.windows(n).map(|w| w.iter().collect::<String>()),
            ));
        }
        let words = chrf_words(sent);
        for n in 1..=self.word_order {
            out.push(counter(words.windows(n).map(|w| w.join(" "))));
        }
        out
    }

    fn f_score(&self, stats: &[u64]) -> f64 {
        let factor = self.beta * self.beta;
        let order = self.char_order + self.word_order;
        let (mut avg_prec, mut avg_rec, mut effective) = (0.0f64, 0.0f64, 0usize);
        for i in 0..order {
            let (n_hyp, n_ref, n_match) = (stats[3 * i], stats[3 * i + 1], stats[3 * i + 2]);
            if n_hyp > 0 && n_ref > 0 {
                avg_prec += n_match as f64 / n_hyp as f64;
                avg_rec += n_match as f64 / n_ref as f64;
                effective += 1;
            }
        }
        if effective == 0 {
            return 0.0;
        }
        avg_prec /= effective as f64;
        avg_rec /= effective as f64;
        if avg_prec + avg_rec == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
    }
}

impl CorpusMetric for ChrfPlusPlus {
    /// `[hyp, ref, match]` per order, character orders first.
    fn segment_stats(&self, hypothesis: &str, reference: &str) -> Vec<u64> {
        let hyp = self.ngram_counters(hypothesis);
        let rf = self.ngram_counters(reference);
        let mut stats = Vec::with_capacity(3 * hyp.len());
        for (h, r) in hyp.iter().zip(&rf) {
            let mut matched = 0;
            let mut hyp_count = 0;
            for (g, &c) in h {
                hyp_count += c;
                if let Some(&rc) = r.get(g) {
                    matched += c.min(rc);
                }
            }
            stats.push(if r.is_empty() { 0 } else { hyp_count });
            stats.push(r.values().sum());
            stats.push(matched);
        }
        stats
    }

    fn score_from_stats(&self, totals: &[u64]) -> f64 {
        self.f_score(totals)
    }

    fn signature(&self) -> String {
        format!(
            "nrefs:1|case:mixed|eff:yes|nc:{}|nw:{}|space:no",
            self.char_order, self.word_order
        )
    }
}

pub fn chrf_pp(hypotheses: &[&str], references: &[&str]) -> Result<f64> {
    ChrfPlusPlus::default().corpus_score(hypotheses, references)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// RNG for one bootstrap trial; a function of `(seed, stream)` only, so
/// trials can run in any order or in parallel.
pub(crate) fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Metric score of each paired resample (sentence indices drawn with replacement).
pub fn bootstrap_scores<M: CorpusMetric + ?Sized>(
    metric: &M,
    stats: &[Vec<u64>],
    resamples: usize,
    seed: u64,
) -> Vec<f64> {
    let n = stats.len();
    (0..resamples)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial as u64);
            let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            metric.score_from_stats(&sum_stats(stats, draw))
        })
        .collect()
}

/// Point estimate plus 2.5/97.5 percentile bounds over `resamples` paired
/// bootstrap resamples.
pub fn bootstrap_ci<M: CorpusMetric + ?Sized>(
    hypotheses: &[&str],
    references: &[&str],
    metric: &M,
    resamples: usize,
    seed: u64,
) -> Result<Interval> {
    if resamples == 0 {
        return Err(Error::Config("resamples must be at least 1".into()));
    }
    let stats = corpus_stats(metric, hypotheses, references)?;
    Ok(interval_from_stats(metric, &stats, resamples, seed))
}

fn interval_from_stats<M: CorpusMetric + ?Sized>(
    metric: &M,
    stats: &[Vec<u64>],
    resamples: usize,
    seed: u64,
) -> Interval {
    let point = metric.score_from_stats(&sum_stats(stats, 0..stats.len()));
    let mut scores = bootstrap_scores(metric, stats, resamples, seed);
    scores.sort_by(f64::total_cmp);
    Interval {
        point,
        lo: percentile(&scores, 2.5),
        hi: percentile(&scores, 97.5),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricReport {
    pub subset: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu_ci: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chrfpp: Option<f64>,
    /// Mean of an externally computed per-sentence score (e.g. a neural
    /// metric), when every sentence in the subset carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_mean: Option<f64>,
    pub signature: String,
    pub chrf_signature: String,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub bleu: BleuConfig,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bleu: BleuConfig::default(),
            resamples: DEFAULT_RESAMPLES,
            seed: DEFAULT_SEED,
        }
    }
}

/// A hypothesis for one test id, with an optional external sentence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Hypothesis {
    pub id: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_score: Option<f64>,
}

/// Hypotheses keyed by id from JSONL `{"id", "hypothesis", "external_score"?}`
/// rows; numeric ids are accepted as their decimal string.
pub fn load_hypotheses(path: &Path) -> Result<HashMap<String, Hypothesis>> {
    let mut out: HashMap<String, Hypothesis> = HashMap::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (line, mut value) in read_jsonl::<serde_json::Value>(path)? {
        if let Some(id) = value.get_mut("id") {
            if let Some(n) = id.as_u64() {
                *id = serde_json::Value::String(n.to_string());
            }
        }
        let h: Hypothesis = serde_json::from_value(value).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: e.to_string(),
        })?;
        if let Some(first) = lines.insert(h.id.clone(), line) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                id: h.id,
                first,
                second: line,
            });
        }
        out.insert(h.id.clone(), h);
    }
    Ok(out)
}

pub const SUBSETS: [&str; 6] = ["all", "contaminated", "clean", "tier:exact", "tier:soft", "tier:clean"];

fn in_subset(subset: &str, tier: Tier) -> bool {
    match subset {
        "all" => true,
        "contaminated" | "tier:exact" => tier == Tier::Exact,
        "clean" => tier != Tier::Exact,
        "tier:soft" => tier == Tier::Soft,
        "tier:clean" => tier == Tier::Clean,
        _ => false,
    }
}

/// BLEU with bootstrap CI and chrF++ for All, Contaminated (exact), Clean
/// (non-exact), and each granular tier.
pub fn stratified_eval(
    test: &Corpus,
    hypotheses: &HashMap<String, Hypothesis>,
    tiers: &BTreeMap<String, Tier>,
    options: &EvalOptions,
) -> Result<Vec<MetricReport>> {
    let missing: Vec<String> = test
        .iter()
        .filter(|s| !hypotheses.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingHypotheses(missing));
    }
    let untiered: Vec<&str> = test
        .iter()
        .filter(|s| !tiers.contains_key(&s.id))
        .map(|s| s.id.as_str())
        .collect();
    if !untiered.is_empty() {
        return Err(Error::Config(format!(
            "no contamination tier for test ids: {}",
            untiered.join(", ")
        )));
    }
    let bleu = Bleu::new(options.bleu);
    let chrf = ChrfPlusPlus::default();

    SUBSETS
        .iter()
        .map(|&subset| {
            let members: Vec<_> = test
                .iter()
                .filter(|s| in_subset(subset, tiers[&s.id]))
                .map(|s| (&hypotheses[&s.id], s.target.as_str()))
                .collect();
            let mut report = MetricReport {
                subset: subset.to_owned(),
                n: members.len(),
                bleu: None,
                bleu_ci: None,
                chrfpp: None,
                external_mean: None,
                signature: bleu.signature(),
                chrf_signature: chrf.signature(),
                resamples: options.resamples,
                seed: options.seed,
            };
            if members.is_empty() {
                return Ok(report);
            }
            let hyps: Vec<&str> = members.iter().map(|(h, _)| h.hypothesis.as_str()).collect();
            let refs: Vec<&str> = members.iter().map(|(_, r)| *r).collect();
            let ci = bootstrap_ci(&hyps, &refs, &bleu, options.resamples, options.seed)?;
            report.bleu = Some(ci.point);
            report.bleu_ci = Some((ci.lo, ci.hi));
            report.chrfpp = Some(chrf.corpus_score(&hyps, &refs)?);
            let ext: Option<Vec<f64>> = members.iter().map(|(h, _)| h.external_score).collect();
            report.external_mean = ext.map(|v| v.iter().sum::<f64>() / v.len() as f64);
            Ok(report)
        })
        .collect()
}
