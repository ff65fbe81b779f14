//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 1-5 need the released dataset: point `CONTAM_AUDIT_DATA` at a
//! directory holding `train.jsonl`, `valid.jsonl`, `test.jsonl` and
//! `test_clean.jsonl` (the 34-sample decontaminated test set).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use contam_audit::baselines::{mixture_simulation, oracle_retrieval};
use contam_audit::contamination::{
    classify_tiers, detect_exact, detect_exact_with, doc_leakage, item_catalog,
    persistence_analysis, test_coverages, threshold_grid, threshold_sweep, MatchMode, Tier,
};
use contam_audit::corpus::{corpus_stats, filter_valid, load_corpus, Corpus, Format, Sample};
use contam_audit::metrics::{
    bootstrap_ci, chrf_pp, corpus_bleu, stratified_eval, Bleu, BleuConfig, CaseMode,
    EvalOptions, Hypothesis,
};
use contam_audit::ngram::{char_ngrams, Field, NgramIndex};
use contam_audit::splitter::{
    build_split, doc_partition, verify_split, DedupMode, SplitSpec,
    VerifyConfig,
};
use contam_audit::textnorm::normalize;

const METRIC_TOL: f64 = 0.01;
const SWEEP_070_TOL: usize = 2;
const TRAIN_FRACTION_TOL: f64 = 0.002;
const ORACLE_BLEU_TOL: f64 = 0.5;
const STATS_SECONDS: f64 = 30.0;
const AUDIT_SECONDS: f64 = 60.0;
const IDEMPOTENCE_CASES: u32 = 10_000;
const PROPERTY_CASES: u32 = 256;
const SPLIT_CORPORA: usize = 50;
const CLEAN_POOL_BLEU: f64 = 40.0;
const CLEAN_POOL_TOL: f64 = 5.0;
const MIXTURE_ALPHAS: [f64; 4] = [0.0, 0.32, 0.5, 1.0];
const MIXTURE_TRIALS: usize = 200;
const MIXTURE_SIZE: usize = 50;
const SEED: u64 = 12345;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn near(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{label}: got {got}, want {want} ± {tol}"))
}

fn equal<T: PartialEq + std::fmt::Debug>(label: &str, got: T, want: T) -> Result<(), String> {
    ensure(got == want, || format!("{label}: got {got:?}, want {want:?}"))
}

// ---------------------------------------------------------------- dataset

struct Released {
    train: Corpus,
    valid: Corpus,
    test: Corpus,
    test_clean: Corpus,
}

fn data_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("CONTAM_AUDIT_DATA")?);
    ["train", "valid", "test", "test_clean"]
        .iter()
        .all(|n| dir.join(format!("{n}.jsonl")).is_file())
        .then_some(dir)
}

fn load(dir: &Path, name: &str) -> Result<Corpus, String> {
    let mut c = load_corpus(&dir.join(format!("{name}.jsonl")), Format::Jsonl).map_err(|e| e.to_string())?;
    c.name = name.to_owned();
    Ok(c)
}

fn criterion_1(dir: &Path) -> Check {
    let start = Instant::now();
    let train = corpus_stats(&load(dir, "train")?);
    let test = corpus_stats(&load(dir, "test")?);
    let valid = corpus_stats(&load(dir, "valid")?);
    let secs = start.elapsed().as_secs_f64();
    equal("train total", train.total, 61_330)?;
    equal("train non-empty target", train.nonempty_target, 55_397)?;
    equal("train valid", train.valid, 18_669)?;
    equal("unique normalized targets", train.unique_targets, 15_842)?;
    equal("valid test samples", test.valid, 50)?;
    equal("valid validation samples", valid.valid, 75)?;
    ensure(secs < STATS_SECONDS, || format!("took {secs:.1}s"))?;
    Ok(format!("61330/55397/18669/15842/50/75 in {secs:.1}s"))
}

fn criterion_2(d: &Released) -> Check {
    let start = Instant::now();
    let train = filter_valid(&d.train);
    let test = filter_valid(&d.test);
    let valid = filter_valid(&d.valid);
    let raw = detect_exact_with(&test, &train, MatchMode::Raw).len();
    let norm = detect_exact(&test, &train).len();
    let val = detect_exact(&valid, &train).len();
    let index = NgramIndex::build(&train, 8, Field::Target).map_err(|e| e.to_string())?;
    let sweep = threshold_sweep(&test, &index, &[0.70]).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    equal("raw exact", raw, 15)?;
    equal("normalized exact", norm, 16)?;
    equal("validation exact", val, 23)?;
    let flagged = sweep[0].flagged;
    ensure(flagged.abs_diff(25) <= SWEEP_070_TOL, || format!("sweep(0.70) = {flagged}, want 25 ± {SWEEP_070_TOL}"))?;
    ensure(secs < AUDIT_SECONDS, || format!("took {secs:.1}s"))?;
    Ok(format!("raw 15, normalized 16/50, valid 23/75, sweep(0.70) {flagged} in {secs:.1}s"))
}

fn criterion_3(d: &Released) -> Check {
    let train = filter_valid(&d.train);
    let test = filter_valid(&d.test);
    let leak = doc_leakage(&test, &train).map_err(|e| e.to_string())?;
    equal("overlapping docs", leak.overlapping_docs, 33)?;
    near("training fraction", leak.train_fraction, 0.284, TRAIN_FRACTION_TOL)?;
    ensure(
        leak.per_doc.iter().any(|o| o.train_count == 804 && o.test_count == 5),
        || "no document with 804 train / 5 test samples".into(),
    )?;
    let removed: BTreeSet<String> = leak
        .per_doc
        .iter()
        .filter(|o| o.train_count > 0)
        .map(|o| o.doc_id.clone())
        .collect();
    let persisting = persistence_analysis(&test, &train, &removed);
    equal("persisting exact ids", persisting.len(), 8)?;
    let targets = NgramIndex::build(&train, 8, Field::Target).map_err(|e| e.to_string())?;
    let sources = NgramIndex::build(&train, 8, Field::Source).map_err(|e| e.to_string())?;
    let catalog = item_catalog(&test, &train, &targets, &sources, 0.70).map_err(|e| e.to_string())?;
    let freq = catalog
        .iter()
        .find(|r| normalize(&r.target) == normalize("Werde gekocht."))
        .map(|r| r.train_frequency);
    equal("\"Werde gekocht.\" frequency", freq, Some(87))?;
    Ok(format!("33 docs, fraction {:.4}, 8 persist, freq 87", leak.train_fraction))
}

fn criterion_4(d: &Released) -> Check {
    let train = filter_valid(&d.train);
    let config = VerifyConfig::default();
    let original = verify_split(&train, &filter_valid(&d.valid), &filter_valid(&d.test), &config)
        .map_err(|e| e.to_string())?;
    equal("original exact overlap", original.exact_overlap_count, 16)?;
    equal("original pass", original.pass, false)?;
    let clean = filter_valid(&d.test_clean);
    equal("clean test size", clean.len(), 34)?;
    let empty = Corpus::new("valid", Vec::new()).map_err(|e| e.to_string())?;
    let cert = verify_split(&train, &empty, &clean, &config).map_err(|e| e.to_string())?;
    equal("decontaminated exact overlap", cert.exact_overlap_count, 0)?;
    Ok("original fails with 16; decontaminated test has 0".into())
}

fn criterion_5(d: &Released) -> Check {
    let train = filter_valid(&d.train);
    let test = filter_valid(&d.test);
    let index = NgramIndex::build(&train, 8, Field::Target).map_err(|e| e.to_string())?;
    let hyps: HashMap<String, Hypothesis> = oracle_retrieval(&test, &train, &index)
        .into_iter()
        .map(|r| {
            let h = Hypothesis { id: r.id.clone(), hypothesis: r.hypothesis, external_score: None };
            (r.id, h)
        })
        .collect();
    let tiers = classify_tiers(&test, &index, &detect_exact(&test, &train), 0.70).map_err(|e| e.to_string())?;
    let options = EvalOptions { resamples: 100, ..EvalOptions::default() };
    let reports = stratified_eval(&test, &hyps, &tiers, &options).map_err(|e| e.to_string())?;
    let bleu = |subset: &str| reports.iter().find(|r| r.subset == subset).and_then(|r| r.bleu).unwrap_or(f64::NAN);
    near("exact-subset BLEU", bleu("contaminated"), 81.8, ORACLE_BLEU_TOL)?;
    near("clean-subset BLEU", bleu("clean"), 0.0, ORACLE_BLEU_TOL)?;
    Ok(format!("exact {:.2}, clean {:.2}", bleu("contaminated"), bleu("clean")))
}

// ---------------------------------------------------------------- 6

fn parity_fixture() -> Value {
    serde_json::from_str(include_str!("fixtures/metric_parity.json")).unwrap()
}

fn parity_pairs(fx: &Value) -> Vec<(String, String)> {
    fx["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["hypothesis"].as_str().unwrap().to_owned(), p["reference"].as_str().unwrap().to_owned()))
        .collect()
}

fn criterion_6() -> Check {
    let fx = parity_fixture();
    let pairs = parity_pairs(&fx);
    let h: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
    let r: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    equal("pairs", h.len(), 20)?;
    let sig = fx["bleu_signature"].as_str().unwrap();
    let ours = BleuConfig::default().signature();
    ensure(sig.starts_with(&ours), || format!("signature {ours} vs reference {sig}"))?;
    let lc = corpus_bleu(&h, &r, &BleuConfig::default()).map_err(|e| e.to_string())?;
    near("corpus BLEU (lc)", lc, fx["corpus_bleu_lc"].as_f64().unwrap(), METRIC_TOL)?;
    let mixed = corpus_bleu(&h, &r, &BleuConfig { case_mode: CaseMode::Mixed, ..BleuConfig::default() })
        .map_err(|e| e.to_string())?;
    near("corpus BLEU (mixed)", mixed, fx["corpus_bleu_mixed"].as_f64().unwrap(), METRIC_TOL)?;
    let chrf = chrf_pp(&h, &r).map_err(|e| e.to_string())?;
    near("corpus chrF++", chrf, fx["corpus_chrfpp"].as_f64().unwrap(), METRIC_TOL)?;
    Ok(format!("BLEU {lc:.4}, chrF++ {chrf:.4} (± {METRIC_TOL})"))
}

// ---------------------------------------------------------------- 7

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run_prop<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn mixed_string() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => prop::char::range('a', 'z'),
            2 => prop::char::range('A', 'Z'),
            2 => prop::sample::select(vec![' ', '\t', '\n', '\u{00A0}', '\u{2003}']),
            2 => prop::sample::select(vec!['.', ',', '[', ']', '-', '«', '»', '„', '“', '…', '_']),
            1 => prop::sample::select(vec!['\u{0301}', '\u{0308}', '\u{0327}']),
            1 => prop::sample::select(vec!['ß', 'ẞ', 'Ä', 'ö', 'İ', 'Σ', 'ς', 'K', 'Å']),
            1 => any::<char>(),
        ],
        0..40,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn small_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', ' ', '.', 'A', 'ä']), 0..16)
        .prop_map(|v| v.into_iter().collect())
}

fn corpus_of(prefix: &str, targets: &[String]) -> Corpus {
    Corpus::new(
        prefix,
        targets
            .iter()
            .enumerate()
            .map(|(i, t)| Sample::new(format!("{prefix}{i}"), "src", t.clone()).with_doc(format!("{prefix}-doc{}", i % 7)))
            .collect(),
    )
    .unwrap()
}

fn prop_idempotence() -> Result<(), String> {
    let check = |s: String| {
        let once = normalize(&s);
        prop_assert_eq!(normalize(once.as_str()), once);
        Ok(())
    };
    run_prop("idempotence (any)", IDEMPOTENCE_CASES, any::<String>(), check)?;
    run_prop("idempotence (mixed)", IDEMPOTENCE_CASES, mixed_string(), check)
}

fn prop_containment() -> Result<(), String> {
    let strategy = (prop::collection::vec(small_text(), 1..20), small_text(), 1usize..6);
    run_prop("containment soundness", PROPERTY_CASES, strategy, |(texts, query, n)| {
        let corpus = corpus_of("t", &texts);
        let index = NgramIndex::build(&corpus, n, Field::Target).unwrap();
        let normalized: Vec<String> = texts.iter().map(|t| normalize(t).into_string()).collect();
        let q = normalize(&query);
        let grams = char_ngrams(q.as_str(), n).unwrap();
        let oracle = grams.iter().filter(|g| normalized.iter().any(|t| t.contains(*g))).count();
        let c = index.coverage(&query);
        prop_assert_eq!(c.gram_count, grams.len());
        prop_assert_eq!(c.matched, oracle);
        prop_assert!(c.value >= 0.0 && c.value <= 1.0);
        Ok(())
    })
}

fn prop_monotonicity() -> Result<(), String> {
    let strategy = (
        prop::collection::vec(small_text(), 1..15),
        prop::collection::vec(small_text(), 0..10),
        small_text(),
        1usize..6,
    );
    run_prop("index monotonicity", PROPERTY_CASES, strategy, |(a, b, query, n)| {
        let mut ab = a.clone();
        ab.extend(b);
        let small = NgramIndex::build(&corpus_of("t", &a), n, Field::Target).unwrap();
        let large = NgramIndex::build(&corpus_of("t", &ab), n, Field::Target).unwrap();
        prop_assert!(small.coverage(&query).matched <= large.coverage(&query).matched);
        Ok(())
    })
}

fn prop_tiers_and_sweep() -> Result<(), String> {
    let grid = threshold_grid(0.5, 1.0, 0.05).unwrap();
    let strategy = (
        prop::collection::vec(small_text(), 1..30),
        prop::collection::vec(small_text(), 0..30),
        0.05f64..=1.0,
    );
    run_prop("tier partition and sweep", PROPERTY_CASES, strategy, |(train, test, soft_low)| {
        let train = corpus_of("t", &train);
        let test = corpus_of("q", &test);
        let index = NgramIndex::build(&train, 4, Field::Target).unwrap();
        let exact = detect_exact(&test, &train);
        let tiers = classify_tiers(&test, &index, &exact, soft_low).unwrap();
        prop_assert_eq!(tiers.len(), test.len());
        let coverages = test_coverages(&test, &index);
        for (s, c) in test.iter().zip(&coverages) {
            if tiers[&s.id] == Tier::Exact {
                prop_assert!(c.gram_count == 0 || c.value == 1.0, "exact item {} has coverage {}", s.id, c.value);
            }
        }
        let sweep = threshold_sweep(&test, &index, &grid).unwrap();
        for w in sweep.windows(2) {
            prop_assert!(w[0].flagged >= w[1].flagged);
        }
        Ok(())
    })
}

fn quadratic_exact(test: &Corpus, train: &Corpus) -> BTreeSet<String> {
    test.iter()
        .filter(|q| train.iter().any(|t| normalize(&t.target) == normalize(&q.target)))
        .map(|q| q.id.clone())
        .collect()
}

fn doc_labeled(prefix: &'static str, max: usize) -> impl Strategy<Value = Corpus> {
    prop::collection::vec((small_text(), 0usize..12), 0..max).prop_map(move |rows| {
        Corpus::new(
            prefix,
            rows.into_iter()
                .enumerate()
                .map(|(i, (t, d))| Sample::new(format!("{prefix}{i}"), "src", t).with_doc(format!("D{d}")))
                .collect(),
        )
        .unwrap()
    })
}

fn prop_quadratic_oracles() -> Result<(), String> {
    run_prop(
        "detect_exact oracle",
        PROPERTY_CASES,
        (doc_labeled("t", 200), doc_labeled("q", 200)),
        |(train, test)| {
            prop_assert_eq!(detect_exact(&test, &train), quadratic_exact(&test, &train));
            Ok(())
        },
    )?;
    let config = VerifyConfig { thresholds: vec![0.7], ..VerifyConfig::default() };
    run_prop(
        "verify_split oracle",
        PROPERTY_CASES,
        (doc_labeled("t", 120), doc_labeled("v", 40), doc_labeled("q", 40)),
        |(train, valid, test)| {
            let cert = verify_split(&train, &valid, &test, &config).unwrap();
            let test_overlap = quadratic_exact(&test, &train).len();
            let valid_overlap = quadratic_exact(&valid, &train).len();
            let docs = |c: &Corpus| -> BTreeSet<String> { c.iter().filter_map(|s| s.doc_id.clone()).collect() };
            let (dt, dv, dq) = (docs(&train), docs(&valid), docs(&test));
            let mut shared: BTreeSet<String> = dt.intersection(&dv).cloned().collect();
            shared.extend(dt.intersection(&dq).cloned());
            shared.extend(dv.intersection(&dq).cloned());
            prop_assert_eq!(cert.exact_overlap_count, test_overlap);
            prop_assert_eq!(cert.valid_overlap_count, valid_overlap);
            prop_assert_eq!(cert.doc_overlap_count, shared.len());
            prop_assert_eq!(cert.pass, test_overlap == 0 && valid_overlap == 0 && shared.is_empty());
            Ok(())
        },
    )
}

fn prop_bootstrap() -> Result<(), String> {
    let bleu = Bleu::new(BleuConfig::default());
    let fx = parity_fixture();
    let pairs = parity_pairs(&fx);
    let h: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
    let r: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    let a = bootstrap_ci(&h, &r, &bleu, 500, 99).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&h, &r, &bleu, 500, 99).map_err(|e| e.to_string())?;
    equal("bootstrap determinism", a, b)?;
    ensure(a.lo <= a.point && a.point <= a.hi, || format!("point outside interval: {a:?}"))?;
    for (hyp, reference) in pairs.iter().take(5) {
        let one = bootstrap_ci(&[hyp.as_str()], &[reference.as_str()], &bleu, 200, 5).map_err(|e| e.to_string())?;
        ensure(one.lo == one.point && one.hi == one.point, || format!("single sentence not degenerate: {one:?}"))?;
    }
    Ok(())
}

fn prop_mixture() -> Result<(), String> {
    let fx = parity_fixture();
    let pairs = parity_pairs(&fx);
    let exact: Vec<(&str, &str)> = pairs.iter().map(|p| (p.1.as_str(), p.1.as_str())).collect();
    let clean: Vec<(&str, &str)> = pairs.iter().map(|p| (p.0.as_str(), p.1.as_str())).collect();
    let only_exact = mixture_simulation(&exact, &clean, &[1.0], 30, 50, 1).map_err(|e| e.to_string())?;
    near("alpha=1 score", only_exact.scores[0], 100.0, 1e-9)?;
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let curve = mixture_simulation(&exact, &clean, &grid, 30, 100, 4).map_err(|e| e.to_string())?;
    let again = mixture_simulation(&exact, &clean, &grid, 30, 100, 4).map_err(|e| e.to_string())?;
    equal("mixture determinism", &curve, &again)?;
    for w in curve.scores.windows(2) {
        ensure(w[0] <= w[1], || format!("curve not monotone: {:?}", curve.scores))?;
    }
    Ok(())
}

fn criterion_7() -> Check {
    let suites: [(&str, fn() -> Result<(), String>); 8] = [
        ("textnorm idempotence", prop_idempotence),
        ("ngram containment", prop_containment),
        ("index monotonicity", prop_monotonicity),
        ("tiers and sweep", prop_tiers_and_sweep),
        ("quadratic oracles", prop_quadratic_oracles),
        ("bootstrap", prop_bootstrap),
        ("mixture", prop_mixture),
        ("persistence consistency", prop_persistence),
    ];
    let mut failures = Vec::new();
    for (name, suite) in suites {
        if let Err(e) = guarded(suite) {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{} suites, {IDEMPOTENCE_CASES} idempotence cases per generator", suites.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn prop_persistence() -> Result<(), String> {
    run_prop(
        "persistence consistency",
        PROPERTY_CASES,
        (doc_labeled("t", 60), doc_labeled("q", 30)),
        |(train, test)| {
            prop_assert_eq!(persistence_analysis(&test, &train, &BTreeSet::new()), detect_exact(&test, &train));
            let all: BTreeSet<String> = train.iter().filter_map(|s| s.doc_id.clone()).collect();
            prop_assert!(persistence_analysis(&test, &train, &all).is_empty());
            Ok(())
        },
    )
}

// ---------------------------------------------------------------- 8

const FORMULAS: [&str; 5] = [
    "Werde gekocht und getrunken",
    "Werde fein zerrieben",
    "Ein Opfer das der König gibt",
    "Worte zu sprechen über dieses Auge",
    "Hunderte opfern ihm an diesem Tag",
];

/// A random doc-labeled corpus with formulae planted in several documents;
/// returns the corpus and, per sample id, the planted formula index.
fn planted_corpus(rng: &mut ChaCha8Rng) -> (Corpus, HashMap<String, usize>) {
    let n_docs = rng.gen_range(6..20);
    let mut samples = Vec::new();
    let mut planted = HashMap::new();
    let genres = ["medical", "religious", "funerary"];
    for d in 0..n_docs {
        let genre = genres.choose(rng).unwrap();
        for i in 0..rng.gen_range(1..9) {
            let id = format!("D{d}-{i}");
            let target = if rng.gen_bool(0.25) {
                let f = rng.gen_range(0..FORMULAS.len());
                planted.insert(id.clone(), f);
                // surface variation that normalization removes
                match rng.gen_range(0..3) {
                    0 => format!("{}.", FORMULAS[f]),
                    1 => format!("[{}]", FORMULAS[f].to_uppercase()),
                    _ => format!("  {} !", FORMULAS[f].to_lowercase()),
                }
            } else {
                format!("Satz {i} aus Dokument {d}")
            };
            samples.push(Sample::new(id, format!("S{d} {i}"), target).with_doc(format!("D{d}")).with_genre(*genre));
        }
    }
    (Corpus::new("corpus", samples).unwrap(), planted)
}

fn formulas_in(c: &Corpus, planted: &HashMap<String, usize>) -> BTreeSet<usize> {
    c.iter().filter_map(|s| planted.get(&s.id).copied()).collect()
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut crossing, mut generated) = (0, 0);
    while generated < SPLIT_CORPORA {
        let (corpus, planted) = planted_corpus(&mut rng);
        let docs: BTreeSet<&str> = corpus.iter().filter_map(|s| s.doc_id.as_deref()).collect();
        if docs.len() < 3 {
            continue;
        }
        generated += 1;
        let spec = SplitSpec {
            seed: rng.gen(),
            dedup_mode: DedupMode::ClusterAndDrop,
            stratify_by_genre: rng.gen_bool(0.5),
            ..SplitSpec::default()
        };
        let (set, cert) = build_split(&corpus, &spec).map_err(|e| e.to_string())?;
        ensure(cert.pass, || format!("corpus {generated}: pipeline certificate failed: {cert:?}"))?;
        let in_train = formulas_in(&set.train, &planted);
        ensure(
            in_train.is_disjoint(&formulas_in(&set.valid, &planted))
                && in_train.is_disjoint(&formulas_in(&set.test, &planted)),
            || format!("corpus {generated}: planted formula survives across splits"),
        )?;

        let raw = doc_partition(&corpus, &spec).map_err(|e| e.to_string())?;
        let raw_cert = verify_split(&raw.train, &raw.valid, &raw.test, &VerifyConfig::default())
            .map_err(|e| e.to_string())?;
        let train_f = formulas_in(&raw.train, &planted);
        let crosses = !train_f.is_disjoint(&formulas_in(&raw.valid, &planted))
            || !train_f.is_disjoint(&formulas_in(&raw.test, &planted));
        crossing += crosses as usize;
        equal(&format!("corpus {generated}: doc-only split passes"), raw_cert.pass, !crosses)?;
        equal(&format!("corpus {generated}: doc overlap"), raw_cert.doc_overlap_count, 0)?;
    }
    ensure(crossing > 0, || "no generated corpus had a crossing duplicate".into())?;
    Ok(format!(
        "{SPLIT_CORPORA} corpora: pipeline always passes; doc-only split failed exactly on the {crossing} with crossing duplicates"
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Check {
    let fx = parity_fixture();
    let pairs = parity_pairs(&fx);
    let clean: Vec<(&str, &str)> = pairs.iter().map(|p| (p.0.as_str(), p.1.as_str())).collect();
    let exact: Vec<(&str, &str)> = pairs.iter().map(|p| (p.1.as_str(), p.1.as_str())).collect();
    let (h, r): (Vec<&str>, Vec<&str>) = clean.iter().copied().unzip();
    let clean_bleu = corpus_bleu(&h, &r, &BleuConfig::default()).map_err(|e| e.to_string())?;
    near("clean pool BLEU", clean_bleu, CLEAN_POOL_BLEU, CLEAN_POOL_TOL)?;
    let curve = mixture_simulation(&exact, &clean, &MIXTURE_ALPHAS, MIXTURE_SIZE, MIXTURE_TRIALS, SEED)
        .map_err(|e| e.to_string())?;
    for w in curve.scores.windows(2) {
        ensure(w[0] < w[1], || format!("not strictly increasing: {:?}", curve.scores))?;
    }
    near("alpha=1", *curve.scores.last().unwrap(), 100.0, 1e-9)?;
    let shown: Vec<String> = curve.scores.iter().map(|s| format!("{s:.1}")).collect();
    Ok(format!("clean pool {clean_bleu:.1}; curve {}", shown.join(" -> ")))
}

// ---------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn main() -> ExitCode {
    let mut results: BTreeMap<u8, (&str, Outcome)> = BTreeMap::new();
    let dataset_names = [
        (1, "corpus statistics"),
        (2, "contamination counts"),
        (3, "document leakage and persistence"),
        (4, "split verification on released splits"),
        (5, "oracle retrieval evaluation"),
    ];
    match data_dir() {
        None => {
            for (id, name) in dataset_names {
                results.insert(id, (name, Outcome::Skip("set CONTAM_AUDIT_DATA to the released dataset".into())));
            }
        }
        Some(dir) => {
            let loaded = guarded(|| {
                Ok(Released {
                    train: load(&dir, "train")?,
                    valid: load(&dir, "valid")?,
                    test: load(&dir, "test")?,
                    test_clean: load(&dir, "test_clean")?,
                })
            });
            let run: [(u8, &str, Box<dyn Fn(&Released) -> Check>); 5] = [
                (1, dataset_names[0].1, Box::new(|_| criterion_1(&dir))),
                (2, dataset_names[1].1, Box::new(criterion_2)),
                (3, dataset_names[2].1, Box::new(criterion_3)),
                (4, dataset_names[3].1, Box::new(criterion_4)),
                (5, dataset_names[4].1, Box::new(criterion_5)),
            ];
            for (id, name, check) in run {
                let outcome = match &loaded {
                    Ok(d) => match guarded(|| check(d)) {
                        Ok(m) => Outcome::Pass(m),
                        Err(m) => Outcome::Fail(m),
                    },
                    Err(e) => Outcome::Fail(format!("loading dataset: {e}")),
                };
                results.insert(id, (name, outcome));
            }
        }
    }
    let always: [(u8, &str, fn() -> Check); 4] = [
        (6, "metric parity", criterion_6),
        (7, "property suites", criterion_7),
        (8, "end-to-end split safety", criterion_8),
        (9, "mixture curve sanity", criterion_9),
    ];
    for (id, name, check) in always {
        let outcome = match guarded(check) {
            Ok(m) => Outcome::Pass(m),
            Err(m) => Outcome::Fail(m),
        };
        results.insert(id, (name, outcome));
    }

    let mut failed = false;
    for (id, (name, outcome)) in &results {
        let (tag, msg) = match outcome {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed = true;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("{tag} criterion {id}: {name} | {msg}");
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
