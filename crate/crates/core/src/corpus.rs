//! Corpus ingestion, descriptive statistics and the stratified hold-out split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{seed, Label};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: column {column:?} not found in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: column {column:?} has non-binary label {value:?}")]
    BadLabel {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: {message}")]
    Malformed {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("class {class} has {count} member(s); at least 2 are needed to hold one out")]
    DegenerateClass { class: Label, count: usize },
}

/// One annotated row of the table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub text: String,
    pub hs: Label,
    pub abusive: Label,
}

/// Which label column a run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hs,
    Abusive,
}

impl Task {
    pub fn label(self, tweet: &LabeledTweet) -> Label {
        match self {
            Task::Hs => tweet.hs,
            Task::Abusive => tweet.abusive,
        }
    }

    pub fn labels(self, corpus: &[LabeledTweet]) -> Vec<Label> {
        corpus.iter().map(|t| self.label(t)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Hs => "hs",
            Task::Abusive => "abusive",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hs" => Ok(Task::Hs),
            "abusive" => Ok(Task::Abusive),
            other => Err(format!("unknown task {other:?} (expected hs or abusive)")),
        }
    }
}

/// Header names of the three columns that are read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub text: String,
    pub hs: String,
    pub abusive: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            text: "Tweet".into(),
            hs: "HS".into(),
            abusive: "Abusive".into(),
        }
    }
}

/// Picks the delimiter among comma, semicolon and tab that occurs most often
/// in the header line. Comma wins ties.
pub fn detect_delimiter(header: &str) -> u8 {
    let mut best = (b',', header.matches(',').count());
    for d in *b";\t" {
        let n = header.bytes().filter(|&b| b == d).count();
        if n > best.1 {
            best = (d, n);
        }
    }
    best.0
}

fn parse_label(cell: &str) -> Option<Label> {
    match cell.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Reads the annotation table. Invalid UTF-8 is replaced, not rejected.
pub fn load_corpus(path: &Path, columns: &ColumnMap) -> Result<Vec<LabeledTweet>, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let header_line = text.lines().next().unwrap_or("");

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header_line))
        .flexible(true)
        .from_reader(text.as_bytes());

    let malformed = |row: usize, e: csv::Error| CorpusError::Malformed {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(|e| malformed(1, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (text_col, hs_col, ab_col) = (find(&columns.text)?, find(&columns.hs)?, find(&columns.abusive)?);

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers are 1-based data rows (the header is not counted).
        let row = i + 1;
        let record = record.map_err(|e| malformed(row, e))?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let label = |col: usize, name: &str| {
            parse_label(cell(col)).ok_or_else(|| CorpusError::BadLabel {
                path: path.to_path_buf(),
                row,
                column: name.to_string(),
                value: cell(col).to_string(),
            })
        };
        out.push(LabeledTweet {
            text: cell(text_col).to_string(),
            hs: label(hs_col, &columns.hs)?,
            abusive: label(ab_col, &columns.abusive)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_rows: usize,
    /// (negatives, positives)
    pub hs_counts: (usize, usize),
    pub abusive_counts: (usize, usize),
    /// word count -> number of tweets
    pub length_histogram: BTreeMap<usize, usize>,
    pub mean_length: f64,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn corpus_stats(corpus: &[LabeledTweet]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut hs = (0, 0);
    let mut ab = (0, 0);
    let mut hist = BTreeMap::new();
    for t in corpus {
        if t.hs == 1 { hs.1 += 1 } else { hs.0 += 1 }
        if t.abusive == 1 { ab.1 += 1 } else { ab.0 += 1 }
        *hist.entry(word_count(&t.text)).or_insert(0) += 1;
    }
    let words: usize = hist.iter().map(|(len, freq)| len * freq).sum();
    Ok(CorpusStats {
        total_rows: corpus.len(),
        hs_counts: hs,
        abusive_counts: ab,
        length_histogram: hist,
        mean_length: words as f64 / corpus.len() as f64,
    })
}

/// Hold-out partition of row indices. Both lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Number of members of a class of size `count` that go to the held-out side.
pub fn class_holdout(count: usize, fraction: f64) -> usize {
    ((count as f64 * fraction).round() as usize).clamp(1, count - 1)
}

/// Groups row indices by class, each group in ascending order.
pub(crate) fn class_members(labels: &[Label]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y == 1)].push(i);
    }
    by_class
}

/// Per-class sampling without replacement of `round(|class| * fraction)` rows.
pub fn stratified_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<DataSplit, CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    if labels.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut rng = seed::rng(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for (class, mut members) in class_members(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(CorpusError::DegenerateClass {
                class: class as Label,
                count: members.len(),
            });
        }
        let n_test = class_holdout(members.len(), test_fraction);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        train_indices: train,
        test_indices: test,
        seed,
        test_fraction,
    })
}

/// Writes `length_hist.csv` content (columns `words,count`).
pub fn length_hist_csv(stats: &CorpusStats) -> String {
    let mut s = String::from("words,count\n");
    for (len, freq) in &stats.length_histogram {
        s.push_str(&format!("{len},{freq}\n"));
    }
    s
}
