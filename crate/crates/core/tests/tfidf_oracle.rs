//! Feature values against a direct, loop-by-loop recomputation of the
//! weighting on random small corpora.

use std::collections::HashSet;

use hsbench::features::{assemble_features, fit_vocabulary, VocabConfig};
use hsbench::seed;
use hsbench::textprep::CleanDoc;
use rand::Rng;

const ALPHABET: [&str; 9] = ["a", "b", "c", "d", "e", "kasar", "f", "g", "h"];

fn random_corpus(rng: &mut seed::Rng) -> Vec<CleanDoc> {
    let n = rng.random_range(1..=20);
    (0..n)
        .map(|_| {
            let len = rng.random_range(0..=15);
            (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
        })
        .collect()
}

fn grams(doc: &CleanDoc, lo: usize, hi: usize) -> Vec<String> {
    let t = &doc.tokens;
    let mut out = Vec::new();
    for n in lo..=hi {
        if t.len() >= n {
            for i in 0..=t.len() - n {
                out.push(t[i..i + n].join("_"));
            }
        }
    }
    out
}

/// Vocabulary by brute force: every candidate term with its document
/// frequency, ranked by df descending then term, cut at `cap`, re-sorted
/// lexicographically.
fn oracle_vocab(docs: &[CleanDoc], cfg: VocabConfig) -> Vec<(String, usize)> {
    let mut all: Vec<String> = docs.iter().flat_map(|d| grams(d, cfg.ngram_min, cfg.ngram_max)).collect();
    all.sort();
    all.dedup();
    let mut ranked: Vec<(String, usize)> = all
        .into_iter()
        .map(|t| {
            let df = docs.iter().filter(|d| grams(d, cfg.ngram_min, cfg.ngram_max).contains(&t)).count();
            (t, df)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.max_terms);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    ranked
}

#[test]
fn features_match_brute_force_on_random_corpora() {
    let lexicon: HashSet<String> = ["kasar".to_string()].into();
    let mut rng = seed::rng(2024);
    for case in 0..100 {
        let docs = random_corpus(&mut rng);
        let cfg = VocabConfig {
            max_terms: rng.random_range(1..=30),
            ngram_min: 1,
            ngram_max: rng.random_range(1..=2),
        };
        let vocab = fit_vocabulary(&docs, cfg).unwrap();
        let expect_vocab = oracle_vocab(&docs, cfg);
        let terms: Vec<&str> = expect_vocab.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(vocab.terms(), terms.as_slice(), "case {case}");
        let n = docs.len() as f64;
        for doc in &docs {
            let got = assemble_features(doc, &vocab, &lexicon).to_dense();
            assert_eq!(got.len(), terms.len() + 1);
            let doc_grams = grams(doc, cfg.ngram_min, cfg.ngram_max);
            for (j, (term, df)) in expect_vocab.iter().enumerate() {
                let tf = doc_grams.iter().filter(|g| *g == term).count() as f64;
                let idf = (n / (*df as f64 + 1.0)).ln().max(0.0);
                assert!((got[j] - tf * idf).abs() <= 1e-12, "case {case} term {term}");
            }
            let abusive = doc.tokens.iter().filter(|t| *t == "kasar").count() as f64;
            assert_eq!(got[terms.len()], abusive, "case {case}");
        }
    }
}
