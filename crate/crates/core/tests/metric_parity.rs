//! Parity against scores frozen from the reference scorer
//! (see fixtures/gen_metric_fixtures.py).

use contam_audit::metrics::{
    chrf_pp, corpus_bleu, tokenize_13a, BleuConfig, CaseMode, ChrfPlusPlus, CorpusMetric,
};
use serde_json::Value;

fn fixture() -> Value {
    serde_json::from_str(include_str!("fixtures/metric_parity.json")).unwrap()
}

fn pairs(fx: &Value) -> (Vec<String>, Vec<String>) {
    fx["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            (
                p["hypothesis"].as_str().unwrap().to_owned(),
                p["reference"].as_str().unwrap().to_owned(),
            )
        })
        .unzip()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn signature_matches_reference() {
    let fx = fixture();
    let reference = fx["bleu_signature"].as_str().unwrap();
    assert!(reference.starts_with(&BleuConfig::default().signature()));
    let chrf = fx["chrf_signature"].as_str().unwrap();
    assert!(chrf.starts_with(&ChrfPlusPlus::default().signature()));
}

#[test]
fn tokenizer_matches_reference() {
    let fx = fixture();
    for case in fx["tokenize_13a"].as_array().unwrap() {
        let text = case["text"].as_str().unwrap();
        let expected: Vec<&str> = case["tokens"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_str().unwrap())
            .collect();
        assert_eq!(tokenize_13a(text.trim_end()), expected, "text {text:?}");
    }
}

#[test]
fn corpus_scores_match_reference() {
    let fx = fixture();
    let (h, r) = pairs(&fx);
    let (h, r) = (refs(&h), refs(&r));
    let lc = corpus_bleu(&h, &r, &BleuConfig::default()).unwrap();
    assert!((lc - fx["corpus_bleu_lc"].as_f64().unwrap()).abs() < 0.01, "{lc}");
    let mixed = corpus_bleu(
        &h,
        &r,
        &BleuConfig {
            case_mode: CaseMode::Mixed,
            ..BleuConfig::default()
        },
    )
    .unwrap();
    assert!((mixed - fx["corpus_bleu_mixed"].as_f64().unwrap()).abs() < 0.01, "{mixed}");
    let chrf = chrf_pp(&h, &r).unwrap();
    assert!((chrf - fx["corpus_chrfpp"].as_f64().unwrap()).abs() < 0.01, "{chrf}");
}

#[test]
fn sentence_chrf_matches_reference() {
    let fx = fixture();
    let (h, r) = pairs(&fx);
    let metric = ChrfPlusPlus::default();
    for (i, expected) in fx["sentence_chrfpp"].as_array().unwrap().iter().enumerate() {
        let got = metric.corpus_score(&[h[i].as_str()], &[r[i].as_str()]).unwrap();
        assert!((got - expected.as_f64().unwrap()).abs() < 0.01, "pair {i}: {got}");
    }
}

#[test]
fn subset_scores_match_reference() {
    let fx = fixture();
    let (h, r) = pairs(&fx);
    for sub in fx["subsets"].as_array().unwrap() {
        let idx: Vec<usize> = sub["indices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| i.as_u64().unwrap() as usize)
            .collect();
        let hs: Vec<&str> = idx.iter().map(|&i| h[i].as_str()).collect();
        let rs: Vec<&str> = idx.iter().map(|&i| r[i].as_str()).collect();
        let b = corpus_bleu(&hs, &rs, &BleuConfig::default()).unwrap();
        assert!((b - sub["bleu_lc"].as_f64().unwrap()).abs() < 0.01, "{idx:?}: {b}");
        let c = chrf_pp(&hs, &rs).unwrap();
        assert!((c - sub["chrfpp"].as_f64().unwrap()).abs() < 0.01, "{idx:?}: {c}");
    }
}
