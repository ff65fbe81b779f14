//! Per-item contamination verdicts, tiering, threshold sweeps, and
//! document-level leakage analyses.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, Corpus, Sample};
use crate::error::{Error, Result};
use crate::ngram::{CoverageScore, NgramIndex};
use crate::textnorm::{normalize, NormalizedText};

pub const DEFAULT_SOFT_LOW: f64 = 0.70;

/// Source similarity below which a contaminating training match is treated as
/// coming from an unrelated source text.
pub const LOW_SOURCE_SIMILARITY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Exact,
    Soft,
    Clean,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Exact, Tier::Soft, Tier::Clean];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Exact => "exact",
            Tier::Soft => "soft",
            Tier::Clean => "clean",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Compare `normalize(target)`.
    Normalized,
    /// Byte-for-byte equality of the raw target strings.
    Raw,
}

/// Training targets grouped by normalized form, positions in load order.
pub struct TargetTable<'a> {
    train: &'a Corpus,
    by_norm: HashMap<NormalizedText, Vec<usize>>,
    raw: HashSet<&'a str>,
}

impl<'a> TargetTable<'a> {
    pub fn new(train: &'a Corpus) -> Self {
        let norms: Vec<NormalizedText> = train
            .samples()
            .par_iter()
            .map(|s| normalize(&s.target))
            .collect();
        let mut by_norm: HashMap<NormalizedText, Vec<usize>> = HashMap::new();
        for (pos, norm) in norms.into_iter().enumerate() {
            by_norm.entry(norm).or_default().push(pos);
        }
        let raw = train.iter().map(|s| s.target.as_str()).collect();
        TargetTable {
            train,
            by_norm,
            raw,
        }
    }

    pub fn matches(&self, target: &str) -> impl Iterator<Item = &'a Sample> + '_ {
        let norm = normalize(target);
        self.by_norm
            .get(&norm)
            .into_iter()
            .flatten()
            .map(|&p| &self.train.samples()[p])
    }

    pub fn frequency(&self, target: &str) -> usize {
        self.by_norm.get(&normalize(target)).map_or(0, Vec::len)
    }

    pub fn contains(&self, target: &str, mode: MatchMode) -> bool {
        match mode {
            MatchMode::Normalized => self.by_norm.contains_key(&normalize(target)),
            MatchMode::Raw => self.raw.contains(target),
        }
    }
}

/// Test ids whose normalized target occurs among the normalized training targets.
pub fn detect_exact(test: &Corpus, train: &Corpus) -> BTreeSet<String> {
    detect_exact_with(test, train, MatchMode::Normalized)
}

pub fn detect_exact_with(test: &Corpus, train: &Corpus, mode: MatchMode) -> BTreeSet<String> {
    let table = TargetTable::new(train);
    test.iter()
        .filter(|s| table.contains(&s.target, mode))
        .map(|s| s.id.clone())
        .collect()
}

fn check_threshold(t: f64, what: &str) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must lie in (0, 1], got {t}")))
    }
}

/// Target coverage of every test item against `train_index`, in test order.
pub fn test_coverages(test: &Corpus, train_index: &NgramIndex) -> Vec<CoverageScore> {
    test.samples()
        .par_iter()
        .map(|s| train_index.coverage(&s.target))
        .collect()
}

pub fn tier_for(exact: bool, coverage: &CoverageScore, soft_low: f64) -> Tier {
    if exact {
        Tier::Exact
    } else if coverage.at_least(soft_low) {
        Tier::Soft
    } else {
        Tier::Clean
    }
}

pub fn classify_tiers(
    test: &Corpus,
    train_index: &NgramIndex,
    exact_ids: &BTreeSet<String>,
    soft_low: f64,
) -> Result<BTreeMap<String, Tier>> {
    check_threshold(soft_low, "soft_low")?;
    let coverages = test_coverages(test, train_index);
    Ok(test
        .iter()
        .zip(&coverages)
        .map(|(s, c)| (s.id.clone(), tier_for(exact_ids.contains(&s.id), c, soft_low)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SweepPoint {
    pub threshold: f64,
    pub flagged: usize,
}

pub fn sweep_from_coverages(coverages: &[CoverageScore], thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    thresholds
        .iter()
        .map(|&t| {
            check_threshold(t, "threshold")?;
            Ok(SweepPoint {
                threshold: t,
                flagged: coverages.iter().filter(|c| c.at_least(t)).count(),
            })
        })
        .collect()
}

/// Number of test items with coverage at or above each threshold.
pub fn threshold_sweep(
    test: &Corpus,
    train_index: &NgramIndex,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    sweep_from_coverages(&test_coverages(test, train_index), thresholds)
}

/// `lo:hi:step`, inclusive of `hi`, rounded to ten decimals so that values
/// such as 0.70 compare exactly.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || lo > hi {
        return Err(Error::Config(format!("bad threshold range {lo}:{hi}:{step}")));
    }
    let steps = ((hi - lo) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10)
        .collect();
    for &t in &grid {
        check_threshold(t, "threshold")?;
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ContaminationRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub target: String,
    pub tier: Tier,
    pub exact: bool,
    pub coverage: CoverageScore,
    pub train_frequency: usize,
    pub matching_train_ids: Vec<String>,
    pub matching_doc_ids: Vec<String>,
    pub max_source_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_source_similarity_over_matches: Option<f64>,
}

/// One record per test item, ordered by sample id.
///
/// Source similarity is n-gram coverage of the test source against a single
/// training source: the maximum over all training samples, and for exact
/// items the minimum over the target-matching training samples.
pub fn item_catalog(
    test: &Corpus,
    train: &Corpus,
    train_index: &NgramIndex,
    source_index: &NgramIndex,
    soft_low: f64,
) -> Result<Vec<ContaminationRecord>> {
    check_threshold(soft_low, "soft_low")?;
    let table = TargetTable::new(train);
    let mut records: Vec<ContaminationRecord> = test
        .samples()
        .par_iter()
        .map(|s| {
            let coverage = train_index.coverage(&s.target);
            let matches: Vec<&Sample> = table.matches(&s.target).collect();
            let exact = !matches.is_empty();
            let max_source_similarity = match source_index.best_match(&s.source) {
                Ok((_, c)) => c.value,
                Err(_) => 0.0,
            };
            let min_source_similarity_over_matches = exact.then(|| {
                matches
                    .iter()
                    .map(|m| {
                        source_index
                            .coverage_against(&s.source, &m.id)
                            .map_or(0.0, |c| c.value)
                    })
                    .fold(f64::INFINITY, f64::min)
            });
            let matching_doc_ids: BTreeSet<String> =
                matches.iter().filter_map(|m| m.doc_id.clone()).collect();
            ContaminationRecord {
                sample_id: s.id.clone(),
                doc_id: s.doc_id.clone(),
                target: s.target.clone(),
                tier: tier_for(exact, &coverage, soft_low),
                exact,
                coverage,
                train_frequency: matches.len(),
                matching_train_ids: matches.iter().map(|m| m.id.clone()).collect(),
                matching_doc_ids: matching_doc_ids.into_iter().collect(),
                max_source_similarity,
                min_source_similarity_over_matches,
            }
        })
        .collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(records)
}

/// Tier per sample id from a catalog JSONL file.
pub fn load_catalog_tiers(path: &Path) -> Result<BTreeMap<String, Tier>> {
    let mut tiers = BTreeMap::new();
    for (line, r) in read_jsonl::<ContaminationRecord>(path)? {
        if tiers.insert(r.sample_id.clone(), r.tier).is_some() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                reason: format!("duplicate sample_id {:?}", r.sample_id),
            });
        }
    }
    Ok(tiers)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct DocOverlap {
    pub doc_id: String,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DocLeakageReport {
    /// Every test document, most training samples first.
    pub per_doc: Vec<DocOverlap>,
    pub test_docs: usize,
    pub overlapping_docs: usize,
    pub train_in_test_docs: usize,
    pub train_total: usize,
    pub train_fraction: f64,
}

pub fn doc_leakage(test: &Corpus, train: &Corpus) -> Result<DocLeakageReport> {
    let mut test_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in test {
        *test_counts.entry(s.require_doc()?).or_default() += 1;
    }
    let mut train_counts: HashMap<&str, usize> = HashMap::new();
    for s in train {
        *train_counts.entry(s.require_doc()?).or_default() += 1;
    }
    let mut per_doc: Vec<DocOverlap> = test_counts
        .iter()
        .map(|(&doc, &test_count)| DocOverlap {
            doc_id: doc.to_owned(),
            train_count: train_counts.get(doc).copied().unwrap_or(0),
            test_count,
        })
        .collect();
    per_doc.sort_by(|a, b| {
        b.train_count
            .cmp(&a.train_count)
            .then(b.test_count.cmp(&a.test_count))
            .then(a.doc_id.cmp(&b.doc_id))
    });
    let overlapping_docs = per_doc.iter().filter(|d| d.train_count > 0).count();
    let train_in_test_docs: usize = per_doc.iter().map(|d| d.train_count).sum();
    Ok(DocLeakageReport {
        test_docs: per_doc.len(),
        overlapping_docs,
        train_in_test_docs,
        train_total: train.len(),
        train_fraction: if train.is_empty() {
            0.0
        } else {
            train_in_test_docs as f64 / train.len() as f64
        },
        per_doc,
    })
}

/// Test ids that remain exact matches once every training sample from
/// `removed_doc_ids` is dropped.
pub fn persistence_analysis(
    test: &Corpus,
    train: &Corpus,
    removed_doc_ids: &BTreeSet<String>,
) -> BTreeSet<String> {
    let residue = train.filter("residue", |s| {
        s.doc_id
            .as_ref()
            .map_or(true, |d| !removed_doc_ids.contains(d))
    });
    detect_exact(test, &residue)
}
