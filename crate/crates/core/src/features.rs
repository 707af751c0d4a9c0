//! Sparse TF-IDF over unigrams and bigrams, with the abusive-word count
//! appended as one extra column.
//!
//! Weight of term `t` in document `d` is `tf(t, d) * max(0, ln(N / (df(t) + 1)))`
//! with raw counts for `tf`. The clamp keeps every feature non-negative, which
//! the multinomial Naive Bayes requires.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{abusive_count, CleanDoc};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit a vocabulary on zero documents")]
    NoDocuments,
    #[error("invalid n-gram range ({0}, {1})")]
    BadNgramRange(usize, usize),
    #[error("row {row}: column indices must be strictly increasing and below {dim}")]
    BadRow { row: usize, dim: usize },
    #[error("vocabulary file: {0}")]
    Parse(String),
}

pub const DEFAULT_MAX_TERMS: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub max_terms: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            max_terms: DEFAULT_MAX_TERMS,
            ngram_min: 1,
            ngram_max: 2,
        }
    }
}

/// Contiguous n-grams of `doc` for every n in the range, joined by `_`.
pub fn ngrams(doc: &CleanDoc, ngram_min: usize, ngram_max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in ngram_min..=ngram_max {
        out.extend(doc.tokens.windows(n).map(|w| w.join("_")));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Retained terms in ascending lexicographic order; position is the column.
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
    config: VocabConfig,
}

/// `max(0, ln(N / (df + 1)))`
pub fn clamped_idf(n_docs: usize, df: usize) -> f64 {
    (n_docs as f64 / (df as f64 + 1.0)).ln().max(0.0)
}

impl Vocabulary {
    fn from_parts(mut entries: Vec<(String, usize)>, n_docs: usize, config: VocabConfig) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let df: Vec<usize> = entries.iter().map(|e| e.1).collect();
        let idf = df.iter().map(|&d| clamped_idf(n_docs, d)).collect();
        Self {
            terms: entries.into_iter().map(|e| e.0).collect(),
            index,
            df,
            idf,
            n_docs,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Width of an assembled feature vector: the terms plus the abusive slot.
    pub fn feature_dim(&self) -> usize {
        self.terms.len() + 1
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.column(term).map(|c| self.df[c])
    }

    pub fn idf(&self, column: usize) -> f64 {
        self.idf[column]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn config(&self) -> VocabConfig {
        self.config
    }

    /// Audit format: a header line with N and the cap, then `term<TAB>df` rows.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "n_docs={}\tmax_terms={}\tngram_min={}\tngram_max={}\n",
            self.n_docs, c.max_terms, c.ngram_min, c.ngram_max
        );
        for (t, d) in self.terms.iter().zip(&self.df) {
            let _ = writeln!(s, "{t}\t{d}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FeatureError::Parse("empty file".into()))?;
        let mut meta = HashMap::new();
        for field in header.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| FeatureError::Parse(format!("bad header field {field:?}")))?;
            let v: usize = v.parse().map_err(|_| FeatureError::Parse(format!("bad number in {field:?}")))?;
            meta.insert(k, v);
        }
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| FeatureError::Parse(format!("header lacks {k}")));
        let config = VocabConfig {
            max_terms: get("max_terms")?,
            ngram_min: get("ngram_min")?,
            ngram_max: get("ngram_max")?,
        };
        let n_docs = get("n_docs")?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let (t, d) = line
                .split_once('\t')
                .ok_or_else(|| FeatureError::Parse(format!("line {}: expected term<TAB>df", i + 2)))?;
            let d = d.parse().map_err(|_| FeatureError::Parse(format!("line {}: bad df", i + 2)))?;
            entries.push((t.to_string(), d));
        }
        Ok(Self::from_parts(entries, n_docs, config))
    }
}

/// Keeps the `max_terms` candidates with the highest document frequency,
/// breaking ties by ascending term.
pub fn fit_vocabulary(docs: &[CleanDoc], config: VocabConfig) -> Result<Vocabulary, FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::NoDocuments);
    }
    if config.ngram_min == 0 || config.ngram_min > config.ngram_max {
        return Err(FeatureError::BadNgramRange(config.ngram_min, config.ngram_max));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        let distinct: HashSet<String> = ngrams(doc, config.ngram_min, config.ngram_max).into_iter().collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(config.max_terms);
    Ok(Vocabulary::from_parts(ranked, docs.len(), config))
}

/// One row: TF-IDF pairs in ascending column order plus the abusive slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub tfidf: Vec<(usize, f64)>,
    pub abusive: f64,
    pub n_terms: usize,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.n_terms + 1
    }

    /// Sparse row over the full width. The abusive slot is stored only when
    /// non-zero.
    pub fn to_sparse(&self) -> Vec<(usize, f64)> {
        let mut row = self.tfidf.clone();
        if self.abusive != 0.0 {
            row.push((self.n_terms, self.abusive));
        }
        row
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for &(c, w) in &self.tfidf {
            v[c] = w;
        }
        v[self.n_terms] = self.abusive;
        v
    }
}

pub fn tfidf_vector(doc: &CleanDoc, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let c = vocab.config;
    let mut tf: HashMap<usize, usize> = HashMap::new();
    for g in ngrams(doc, c.ngram_min, c.ngram_max) {
        if let Some(col) = vocab.column(&g) {
            *tf.entry(col).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<(usize, f64)> = tf
        .into_iter()
        .map(|(col, n)| (col, n as f64 * vocab.idf[col]))
        .collect();
    pairs.sort_unstable_by_key(|p| p.0);
    pairs
}

pub fn assemble_features(doc: &CleanDoc, vocab: &Vocabulary, lexicon: &HashSet<String>) -> FeatureVector {
    FeatureVector {
        tfidf: tfidf_vector(doc, vocab),
        abusive: abusive_count(doc, lexicon) as f64,
        n_terms: vocab.len(),
    }
}

/// Row-major sparse matrix. Every row's column indices are strictly
/// increasing and below `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, FeatureError> {
        for (r, row) in rows.iter().enumerate() {
            let increasing = row.windows(2).all(|w| w[0].0 < w[1].0);
            if !increasing || row.last().is_some_and(|&(c, _)| c >= dim) {
                return Err(FeatureError::BadRow { row: r, dim });
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let rows = rows
            .iter()
            .map(|r| {
                assert_eq!(r.len(), dim, "ragged dense rows");
                r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(c, &v)| (c, v)).collect()
            })
            .collect();
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = &self.rows[row];
        r.binary_search_by_key(&col, |p| p.0).map_or(0.0, |k| r[k].1)
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn min_value(&self) -> f64 {
        self.rows.iter().flatten().map(|p| p.1).fold(0.0, f64::min)
    }
}

pub fn transform_corpus(docs: &[CleanDoc], vocab: &Vocabulary, lexicon: &HashSet<String>) -> FeatureMatrix {
    use rayon::prelude::*;
    let rows = docs
        .par_iter()
        .map(|d| assemble_features(d, vocab, lexicon).to_sparse())
        .collect();
    FeatureMatrix {
        dim: vocab.feature_dim(),
        rows,
    }
}
