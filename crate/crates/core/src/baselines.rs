//! Memorization-probing retrieval baselines and the contamination-rate
//! mixture simulation.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::metrics::{trial_rng, Bleu, BleuConfig, CorpusMetric};
use crate::ngram::NgramIndex;

pub const DEFAULT_TRIALS: usize = 200;

/// A retrieved hypothesis. Serializes to the hypothesis JSONL format with
/// extra diagnostic fields that evaluation ignores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Retrieved {
    pub id: String,
    pub hypothesis: String,
    /// Ranked training ids, best first.
    pub train_ids: Vec<String>,
    pub similarities: Vec<f64>,
    pub measure: String,
}

fn measure_name(index: &NgramIndex) -> String {
    format!("char{}gram-coverage:{:?}", index.n(), index.field()).to_lowercase()
}

fn hit(
    id: &str,
    train: &Corpus,
    ranked: Vec<(String, f64)>,
    measure: &str,
) -> Retrieved {
    let hypothesis = ranked
        .first()
        .and_then(|(tid, _)| train.get(tid))
        .map(|s| s.target.clone())
        .unwrap_or_default();
    let (train_ids, similarities) = ranked.into_iter().unzip();
    Retrieved {
        id: id.to_owned(),
        hypothesis,
        train_ids,
        similarities,
        measure: measure.to_owned(),
    }
}

/// Copies the raw training target that best covers each test target.
pub fn oracle_retrieval(
    test: &Corpus,
    train: &Corpus,
    train_target_index: &NgramIndex,
) -> Vec<Retrieved> {
    knn(test, train, train_target_index, 1, |s| &s.target)
}

/// Copies the target of the training sample whose source best covers the
/// test source; `k` neighbours are kept for diagnostics.
pub fn source_knn_retrieval(
    test: &Corpus,
    train: &Corpus,
    source_index: &NgramIndex,
    k: usize,
) -> Vec<Retrieved> {
    knn(test, train, source_index, k.max(1), |s| &s.source)
}

fn knn(
    test: &Corpus,
    train: &Corpus,
    index: &NgramIndex,
    k: usize,
    field: impl Fn(&Sample) -> &str + Sync,
) -> Vec<Retrieved> {
    let measure = measure_name(index);
    test.samples()
        .par_iter()
        .map(|s| {
            // degenerate queries retrieve nothing
            let ranked = index
                .top_k(field(s), k)
                .map(|v| v.into_iter().map(|(id, c)| (id, c.value)).collect())
                .unwrap_or_default();
            hit(&s.id, train, ranked, &measure)
        })
        .collect()
}

/// Pluggable source-side similarity for retrieval, e.g. externally computed
/// embedding similarities.
pub trait SourceSimilarity: Sync {
    fn name(&self) -> String;
    fn similarity(&self, test_id: &str, train_id: &str) -> f64;
}

/// Similarities read from a `(test_id, train_id) -> score` table; missing
/// pairs score 0.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedSimilarity {
    pub name: String,
    pub scores: HashMap<(String, String), f64>,
}

#[derive(Debug, Deserialize)]
struct SimilarityRow {
    test_id: String,
    train_id: String,
    similarity: f64,
}

impl PrecomputedSimilarity {
    /// JSONL rows `{"test_id": .., "train_id": .., "similarity": ..}`.
    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut scores = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: SimilarityRow = serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: "similarity table".into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            scores.insert((row.test_id, row.train_id), row.similarity);
        }
        Ok(PrecomputedSimilarity {
            name: name.into(),
            scores,
        })
    }
}

impl SourceSimilarity for PrecomputedSimilarity {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn similarity(&self, test_id: &str, train_id: &str) -> f64 {
        self.scores
            .get(&(test_id.to_owned(), train_id.to_owned()))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Source retrieval under an arbitrary similarity; ties go to the shorter
/// training source, then the smaller id.
pub fn knn_with_similarity(
    test: &Corpus,
    train: &Corpus,
    similarity: &dyn SourceSimilarity,
    k: usize,
) -> Vec<Retrieved> {
    let name = similarity.name();
    test.samples()
        .par_iter()
        .map(|q| {
            let mut ranked: Vec<(&Sample, f64)> = train
                .iter()
                .map(|t| (t, similarity.similarity(&q.id, &t.id)))
                .collect();
            ranked.sort_by(|(a, sa), (b, sb)| {
                sb.total_cmp(sa)
                    .then(a.source.chars().count().cmp(&b.source.chars().count()))
                    .then(a.id.cmp(&b.id))
            });
            ranked.truncate(k.max(1));
            let ranked = ranked.into_iter().map(|(t, s)| (t.id.clone(), s)).collect();
            hit(&q.id, train, ranked, &name)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MixtureCurve {
    pub alphas: Vec<f64>,
    pub scores: Vec<f64>,
    pub trials: usize,
    pub corpus_size: usize,
    pub seed: u64,
}

impl MixtureCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,score,trials,seed\n");
        for (a, s) in self.alphas.iter().zip(&self.scores) {
            out.push_str(&format!("{a},{s:.4},{},{}\n", self.trials, self.seed));
        }
        out
    }
}

/// Mean corpus BLEU over `trials` simulated test sets of `corpus_size`
/// pairs, of which `round(alpha * corpus_size)` are drawn with replacement
/// from the exact pool and the rest from the clean pool.
pub fn mixture_simulation(
    exact_pairs: &[(&str, &str)],
    clean_pairs: &[(&str, &str)],
    alphas: &[f64],
    corpus_size: usize,
    trials: usize,
    seed: u64,
) -> Result<MixtureCurve> {
    if corpus_size == 0 || trials == 0 {
        return Err(Error::Config("corpus size and trials must be at least 1".into()));
    }
    let mut sorted = alphas.to_vec();
    for &a in &sorted {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
        }
    }
    sorted.sort_by(f64::total_cmp);

    let bleu = Bleu::new(BleuConfig::default());
    let stats = |pool: &[(&str, &str)]| -> Vec<Vec<u64>> {
        pool.par_iter().map(|(h, r)| bleu.segment_stats(h, r)).collect()
    };
    let exact = stats(exact_pairs);
    let clean = stats(clean_pairs);
    let width = 2 + 2 * bleu.config.max_order;

    let scores = sorted
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let n_exact = (alpha * corpus_size as f64).round() as usize;
            let n_clean = corpus_size - n_exact;
            if n_exact > 0 && exact.is_empty() {
                return Err(Error::Config(format!("alpha {alpha} needs a non-empty exact pool")));
            }
            if n_clean > 0 && clean.is_empty() {
                return Err(Error::Config(format!("alpha {alpha} needs a non-empty clean pool")));
            }
            let total: f64 = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(seed, ((ai as u64) << 32) | t as u64);
                    let mut sum = vec![0u64; width];
                    for (pool, count) in [(&exact, n_exact), (&clean, n_clean)] {
                        for _ in 0..count {
                            let row = &pool[rng.gen_range(0..pool.len())];
                            for (s, v) in sum.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                    }
                    bleu.score_from_stats(&sum)
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(total / trials as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(MixtureCurve {
        alphas: sorted,
        scores,
        trials,
        corpus_size,
        seed,
    })
}
