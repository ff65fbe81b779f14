//! Document-disjoint, target-deduplicated split construction and split
//! verification.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::contamination::{
    detect_exact, persistence_analysis, threshold_grid, threshold_sweep, SweepPoint,
};
use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::metrics::trial_rng;
use crate::ngram::{Field, NgramIndex, DEFAULT_N};
use crate::textnorm::{normalize, NormalizedText, NORMALIZATION_VERSION};

pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;
pub const SPLIT_NAMES: [&str; 3] = ["train", "valid", "test"];
pub const UNKNOWN_GENRE: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", tag = "mode", content = "cap")]
pub enum DedupMode {
    /// Keep at most `k` training samples per normalized target.
    FrequencyCap(usize),
    /// Drop every training sample whose normalized target occurs in valid or test.
    ClusterAndDrop,
}

impl Default for DedupMode {
    fn default() -> Self {
        DedupMode::FrequencyCap(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SplitSpec {
    /// train, valid, test
    pub ratios: [f64; 3],
    pub seed: u64,
    pub dedup_mode: DedupMode,
    pub stratify_by_genre: bool,
    pub n: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.8, 0.1, 0.1],
            seed: 12345,
            dedup_mode: DedupMode::default(),
            stratify_by_genre: false,
            n: DEFAULT_N,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive: {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        if self.dedup_mode == DedupMode::FrequencyCap(0) {
            return Err(Error::Config("frequency cap must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::ZeroGramLength);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

impl SplitSet {
    pub fn parts(&self) -> [&Corpus; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

struct Doc<'a> {
    id: &'a str,
    genre: String,
    size: usize,
}

fn majority_genre(counts: &BTreeMap<&str, usize>) -> String {
    // BTreeMap order makes ties resolve to the lexicographically smallest
    let mut best: Option<(&str, usize)> = None;
    for (&g, &c) in counts {
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((g, c));
        }
    }
    best.map_or(UNKNOWN_GENRE, |(g, _)| g).to_owned()
}

fn collect_docs(corpus: &Corpus) -> Result<Vec<Doc<'_>>> {
    let mut order: Vec<&str> = Vec::new();
    let mut genres: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for s in corpus {
        let doc = s.require_doc()?;
        let size = sizes.entry(doc).or_insert_with(|| {
            order.push(doc);
            0
        });
        *size += 1;
        let genre = s.genre.as_deref().filter(|g| !g.is_empty()).unwrap_or(UNKNOWN_GENRE);
        *genres.entry(doc).or_default().entry(genre).or_default() += 1;
    }
    order.sort_unstable();
    Ok(order
        .into_iter()
        .map(|id| Doc {
            id,
            genre: majority_genre(&genres[id]),
            size: sizes[id],
        })
        .collect())
}

/// Assigns whole documents to train/valid/test. Documents are shuffled by
/// seed, then placed largest first into the split whose sample count falls
/// furthest below its target (lower split index on ties). Every split is
/// guaranteed at least one document. With `stratify_by_genre` the same
/// procedure runs independently within each genre.
pub fn doc_partition(corpus: &Corpus, spec: &SplitSpec) -> Result<SplitSet> {
    spec.validate()?;
    let mut docs = collect_docs(corpus)?;
    if docs.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 documents to split, found {}",
            docs.len()
        )));
    }
    let mut rng = trial_rng(spec.seed, 0);
    docs.shuffle(&mut rng);
    docs.sort_by(|a, b| b.size.cmp(&a.size));

    let groups: Vec<Vec<&Doc>> = if spec.stratify_by_genre {
        let mut by_genre: BTreeMap<&str, Vec<&Doc>> = BTreeMap::new();
        for d in &docs {
            by_genre.entry(d.genre.as_str()).or_default().push(d);
        }
        by_genre.into_values().collect()
    } else {
        vec![docs.iter().collect()]
    };

    let mut assignment: HashMap<&str, usize> = HashMap::with_capacity(docs.len());
    let mut doc_counts = [0usize; 3];
    let mut remaining = docs.len();
    for group in groups {
        let total: usize = group.iter().map(|d| d.size).sum();
        let targets = spec.ratios.map(|r| r * total as f64);
        let mut filled = [0usize; 3];
        for d in group {
            let empty: Vec<usize> = (0..3).filter(|&i| doc_counts[i] == 0).collect();
            let candidates: Vec<usize> = if !empty.is_empty() && remaining <= empty.len() {
                empty
            } else {
                (0..3).collect()
            };
            let mut pick = candidates[0];
            for &i in &candidates[1..] {
                let deficit = targets[i] - filled[i] as f64;
                if deficit > targets[pick] - filled[pick] as f64 {
                    pick = i;
                }
            }
            assignment.insert(d.id, pick);
            filled[pick] += d.size;
            doc_counts[pick] += 1;
            remaining -= 1;
        }
    }

    let mut parts: [Vec<Sample>; 3] = Default::default();
    for s in corpus {
        // require_doc succeeded for every sample above
        let split = assignment[s.doc_id.as_deref().unwrap_or_default()];
        let mut s = s.clone();
        s.split_tag = Some(SPLIT_NAMES[split].to_owned());
        parts[split].push(s);
    }
    let [train, valid, test] = parts;
    Ok(SplitSet {
        train: corpus.derived("train", train),
        valid: corpus.derived("valid", valid),
        test: corpus.derived("test", test),
    })
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub train: Corpus,
    pub removed_ids: Vec<String>,
}

impl DedupOutcome {
    pub fn removals(&self) -> usize {
        self.removed_ids.len()
    }
}

/// Deduplicates training targets. Every training sample whose normalized
/// target occurs in `held_out` is dropped; under a frequency cap the first
/// `k` remaining occurrences of each normalized target are kept as well.
pub fn dedup_targets(train: &Corpus, held_out: &[&Corpus], mode: DedupMode) -> Result<DedupOutcome> {
    let cap = match mode {
        DedupMode::FrequencyCap(0) => {
            return Err(Error::Config("frequency cap must be at least 1".into()));
        }
        DedupMode::FrequencyCap(k) => k,
        DedupMode::ClusterAndDrop => usize::MAX,
    };
    let held: BTreeSet<NormalizedText> = held_out
        .iter()
        .flat_map(|c| c.iter())
        .map(|s| normalize(&s.target))
        .collect();
    let mut seen: HashMap<NormalizedText, usize> = HashMap::new();
    let mut kept = Vec::with_capacity(train.len());
    let mut removed_ids = Vec::new();
    for s in train {
        let key = normalize(&s.target);
        if held.contains(&key) {
            removed_ids.push(s.id.clone());
            continue;
        }
        let c = seen.entry(key).or_default();
        *c += 1;
        if *c <= cap {
            kept.push(s.clone());
        } else {
            removed_ids.push(s.id.clone());
        }
    }
    Ok(DedupOutcome {
        train: train.derived(train.name.clone(), kept),
        removed_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VerifyConfig {
    pub n: usize,
    pub thresholds: Vec<f64>,
    pub normalization: String,
    pub split_spec: Option<SplitSpec>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n: DEFAULT_N,
            thresholds: threshold_grid(0.5, 1.0, 0.05).expect("static grid"),
            normalization: NORMALIZATION_VERSION.to_owned(),
            split_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SplitCertificate {
    pub schema_version: u32,
    pub sizes: BTreeMap<String, usize>,
    /// Test items whose normalized target occurs in train.
    pub exact_overlap_count: usize,
    pub exact_overlap_ids: Vec<String>,
    /// Validation items whose normalized target occurs in train.
    pub valid_overlap_count: usize,
    /// Test target coverage against train at each threshold.
    pub threshold_sweep: Vec<SweepPoint>,
    /// Documents present in more than one split.
    pub doc_overlap_count: usize,
    pub overlapping_doc_ids: Vec<String>,
    pub dedup_removals: usize,
    pub genre_distribution: BTreeMap<String, BTreeMap<String, usize>>,
    pub config: VerifyConfig,
    pub pass: bool,
}

/// Checks a split for target overlap and document leakage. A split passes
/// when neither test nor valid shares a normalized target with train and no
/// document spans two splits.
pub fn verify_split(
    train: &Corpus,
    valid: &Corpus,
    test: &Corpus,
    config: &VerifyConfig,
) -> Result<SplitCertificate> {
    if config.n == 0 {
        return Err(Error::ZeroGramLength);
    }
    let exact_ids: Vec<String> = detect_exact(test, train).into_iter().collect();
    let valid_overlap_count = detect_exact(valid, train).len();

    let threshold_sweep = if train.is_empty() || test.is_empty() {
        config
            .thresholds
            .iter()
            .map(|&threshold| SweepPoint { threshold, flagged: 0 })
            .collect()
    } else {
        let index = NgramIndex::build(train, config.n, Field::Target)?;
        threshold_sweep(test, &index, &config.thresholds)?
    };

    let parts = [train, valid, test];
    let mut doc_splits: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut genre_distribution = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    for (i, part) in parts.iter().enumerate() {
        let mut genres: BTreeMap<String, usize> = BTreeMap::new();
        for s in part.iter() {
            if let Some(d) = s.doc_id.as_deref().filter(|d| !d.is_empty()) {
                doc_splits.entry(d).or_default().insert(i);
            }
            let g = s.genre.as_deref().filter(|g| !g.is_empty()).unwrap_or(UNKNOWN_GENRE);
            *genres.entry(g.to_owned()).or_default() += 1;
        }
        genre_distribution.insert(SPLIT_NAMES[i].to_owned(), genres);
        sizes.insert(SPLIT_NAMES[i].to_owned(), part.len());
    }
    let overlapping_doc_ids: Vec<String> = doc_splits
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(d, _)| d.to_owned())
        .collect();

    let pass = exact_ids.is_empty() && valid_overlap_count == 0 && overlapping_doc_ids.is_empty();
    Ok(SplitCertificate {
        schema_version: CERTIFICATE_SCHEMA_VERSION,
        sizes,
        exact_overlap_count: exact_ids.len(),
        exact_overlap_ids: exact_ids,
        valid_overlap_count,
        threshold_sweep,
        doc_overlap_count: overlapping_doc_ids.len(),
        overlapping_doc_ids,
        dedup_removals: 0,
        genre_distribution,
        config: config.clone(),
        pass,
    })
}

/// Document partition, target deduplication and verification in one step.
pub fn build_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(SplitSet, SplitCertificate)> {
    let mut set = doc_partition(corpus, spec)?;
    let outcome = dedup_targets(&set.train, &[&set.valid, &set.test], spec.dedup_mode)?;
    set.train = outcome.train;
    let config = VerifyConfig {
        n: spec.n,
        split_spec: Some(spec.clone()),
        ..VerifyConfig::default()
    };
    let mut cert = verify_split(&set.train, &set.valid, &set.test, &config)?;
    cert.dedup_removals = outcome.removed_ids.len();
    Ok((set, cert))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DecontaminationReport {
    pub removed: usize,
    pub removed_fraction: f64,
    pub removed_doc_ids: Vec<String>,
    pub exact_before: Vec<String>,
    /// Exact matches that survive removal of every shared document.
    pub persisting_exact: Vec<String>,
}

/// Removes every training sample whose document also appears in test.
pub fn decontaminate_by_docs(train: &Corpus, test: &Corpus) -> Result<(Corpus, DecontaminationReport)> {
    let test_docs: BTreeSet<&str> = test.iter().map(|s| s.require_doc()).collect::<Result<_>>()?;
    let mut removed_docs: BTreeSet<String> = BTreeSet::new();
    for s in train {
        let d = s.require_doc()?;
        if test_docs.contains(d) {
            removed_docs.insert(d.to_owned());
        }
    }
    let cleaned = train.filter(train.name.clone(), |s| {
        !removed_docs.contains(s.doc_id.as_deref().unwrap_or_default())
    });
    let removed = train.len() - cleaned.len();
    let report = DecontaminationReport {
        removed,
        removed_fraction: if train.is_empty() {
            0.0
        } else {
            removed as f64 / train.len() as f64
        },
        exact_before: detect_exact(test, train).into_iter().collect(),
        persisting_exact: persistence_analysis(test, train, &removed_docs).into_iter().collect(),
        removed_doc_ids: removed_docs.into_iter().collect(),
    };
    Ok((cleaned, report))
}
