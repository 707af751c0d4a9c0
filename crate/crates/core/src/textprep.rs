//! The shared cleaning pipeline and the abusive-word count.
//!
//! `preprocess` = `clean_text` -> `tokenize` -> `normalize_slang` ->
//! `remove_stopwords`. Both the sparse and the neural branch consume its
//! output, so any change here moves both.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: expected `surface,canonical`")]
    BadSlangLine { path: PathBuf, line: usize },
    #[error("abusive lexicon is empty")]
    EmptyLexicon,
}

/// Ordered, lowercase, non-empty tokens without whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CleanDoc {
    pub tokens: Vec<String>,
}

impl CleanDoc {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

impl<S: Into<String>> FromIterator<S> for CleanDoc {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self::new(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct NormalizationResources {
    /// surface form -> replacement tokens (one or more)
    pub slang_map: HashMap<String, Vec<String>>,
    pub stopwords: HashSet<String>,
    pub abusive_lexicon: HashSet<String>,
}

const BUNDLED_SLANG: &str = include_str!("../resources/slang.csv");
const BUNDLED_STOPWORDS: &str = include_str!("../resources/stopwords.txt");
const BUNDLED_LEXICON: &str = include_str!("../resources/abusive.txt");

fn read_lossy(path: &Path) -> Result<String, ResourceError> {
    fs::read(path)
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .map_err(|source| ResourceError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().trim_start_matches('\u{feff}')))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses a two-column slang table. Columns are split at the first comma or
/// tab; the replacement is cleaned like tweet text so multi-word values become
/// several tokens.
pub fn parse_slang(text: &str, origin: &Path) -> Result<HashMap<String, Vec<String>>, ResourceError> {
    let mut map = HashMap::new();
    for (line, l) in content_lines(text) {
        let (surface, canonical) = l
            .split_once(['\t', ','])
            .ok_or_else(|| ResourceError::BadSlangLine {
                path: origin.to_path_buf(),
                line,
            })?;
        let surface = surface.trim().to_lowercase();
        let replacement = tokenize(&clean_text(canonical));
        if surface.is_empty() {
            continue;
        }
        // First mapping of a surface form wins.
        map.entry(surface).or_insert(replacement);
    }
    Ok(map)
}

/// One lowercase token per line.
pub fn parse_token_set(text: &str) -> HashSet<String> {
    content_lines(text).map(|(_, l)| l.to_lowercase()).collect()
}

impl NormalizationResources {
    pub fn load(slang: &Path, stopwords: &Path, lexicon: &Path) -> Result<Self, ResourceError> {
        Ok(Self {
            slang_map: parse_slang(&read_lossy(slang)?, slang)?,
            stopwords: parse_token_set(&read_lossy(stopwords)?),
            abusive_lexicon: parse_token_set(&read_lossy(lexicon)?),
        })
    }

    /// Small synthetic resources compiled into the crate, for tests and demos.
    pub fn bundled() -> Self {
        Self {
            slang_map: parse_slang(BUNDLED_SLANG, Path::new("<bundled slang>")).expect("bundled slang parses"),
            stopwords: parse_token_set(BUNDLED_STOPWORDS),
            abusive_lexicon: parse_token_set(BUNDLED_LEXICON),
        }
    }

    pub fn require_lexicon(&self) -> Result<(), ResourceError> {
        if self.abusive_lexicon.is_empty() {
            Err(ResourceError::EmptyLexicon)
        } else {
            Ok(())
        }
    }
}

fn escape_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Literal escape sequences left in scraped text: `\n`, `\xf0`, ...
    RE.get_or_init(|| Regex::new(r"\\(?:x[0-9a-f]{2}|[ntr])").unwrap())
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:[a-z][a-z0-9+.-]*://|www\.)\S*").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w*").unwrap())
}

/// Anonymization placeholders and the retweet marker.
const DROPPED_TOKENS: [&str; 3] = ["user", "url", "rt"];

/// Lowercases, strips URLs, mentions, placeholders and symbols. The result only
/// contains `[a-z0-9]` words separated by single spaces.
pub fn clean_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let s = escape_re().replace_all(&lower, " ");
    let s = url_re().replace_all(&s, " ");
    let s = mention_re().replace_all(&s, " ");
    let s: String = s
        .chars()
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { ' ' })
        .collect();
    let mut out = String::with_capacity(s.len());
    for w in s.split_whitespace().filter(|w| !DROPPED_TOKENS.contains(w)) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

pub fn tokenize(cleaned: &str) -> Vec<String> {
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn normalize_slang(tokens: Vec<String>, slang_map: &HashMap<String, Vec<String>>) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        match slang_map.get(&t) {
            Some(replacement) => out.extend(replacement.iter().cloned()),
            None => out.push(t),
        }
    }
    out
}

pub fn remove_stopwords(tokens: Vec<String>, stopwords: &HashSet<String>) -> Vec<String> {
    tokens.into_iter().filter(|t| !stopwords.contains(t)).collect()
}

pub fn preprocess(raw: &str, resources: &NormalizationResources) -> CleanDoc {
    let tokens = tokenize(&clean_text(raw));
    let tokens = normalize_slang(tokens, &resources.slang_map);
    CleanDoc::new(remove_stopwords(tokens, &resources.stopwords))
}

/// Number of token positions whose token is in the lexicon.
pub fn abusive_count(doc: &CleanDoc, lexicon: &HashSet<String>) -> usize {
    doc.tokens.iter().filter(|t| lexicon.contains(*t)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn set(s: &[&str]) -> HashSet<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn clean_examples() {
        assert_eq!(clean_text("Cek http://a.b @budi !!"), "cek");
        assert_eq!(clean_text("RT USER: Dasar BODOH"), "dasar bodoh");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("URL URL lihat www.x.id/a?b=1 dan https://t.co/xyz"), "lihat dan");
        assert_eq!(clean_text("b4ngs4t!!! 100%"), "b4ngs4t 100");
        assert_eq!(clean_text("kata\\nbaru \\xf0\\x9f\\x98\\x82 lucu"), "kata baru lucu");
        assert_eq!(clean_text("USER, user_name: rtx"), "name rtx");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("dasar bodoh"), toks(&["dasar", "bodoh"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize(" a  b "), toks(&["a", "b"]));
    }

    #[test]
    fn slang_examples() {
        let map: HashMap<_, _> = [("gk".to_string(), toks(&["tidak"])), ("km".to_string(), toks(&["kamu"]))].into();
        assert_eq!(normalize_slang(toks(&["gk", "mau"]), &map), toks(&["tidak", "mau"]));
        assert_eq!(normalize_slang(toks(&["zzz"]), &map), toks(&["zzz"]));
        assert_eq!(normalize_slang(toks(&["km", "km"]), &map), toks(&["kamu", "kamu"]));
        let phrase: HashMap<_, _> = [("otw".to_string(), toks(&["on", "the", "way"]))].into();
        assert_eq!(normalize_slang(toks(&["a", "otw", "b"]), &phrase), toks(&["a", "on", "the", "way", "b"]));
    }

    #[test]
    fn stopword_examples() {
        assert_eq!(remove_stopwords(toks(&["orang", "yang", "bodoh"]), &set(&["yang"])), toks(&["orang", "bodoh"]));
        assert_eq!(remove_stopwords(toks(&["a", "b"]), &HashSet::new()), toks(&["a", "b"]));
        assert!(remove_stopwords(toks(&["yang", "yang"]), &set(&["yang"])).is_empty());
    }

    #[test]
    fn preprocess_examples() {
        let res = NormalizationResources::bundled();
        assert!(preprocess("USER USER", &res).is_empty());
        // slang "yg" expands to the stopword "yang", which is then removed
        assert_eq!(preprocess("Org yg GK jelas @x", &res).tokens, toks(&["orang", "tidak", "jelas"]));
    }

    #[test]
    fn abusive_count_examples() {
        let lex = set(&["anjing", "bodoh"]);
        let doc: CleanDoc = ["anjing", "anjing", "bodoh", "x"].into_iter().collect();
        assert_eq!(abusive_count(&doc, &lex), 3);
        assert_eq!(abusive_count(&doc, &HashSet::new()), 0);
        assert_eq!(abusive_count(&["a", "b"].into_iter().collect(), &lex), 0);
    }

    #[test]
    fn slang_file_parsing() {
        let map = parse_slang("# c\nGk,tidak\nbtw\tby the way\n\n", Path::new("x")).unwrap();
        assert_eq!(map["gk"], toks(&["tidak"]));
        assert_eq!(map["btw"], toks(&["by", "the", "way"]));
        assert!(matches!(parse_slang("nocolumns\n", Path::new("x")), Err(ResourceError::BadSlangLine { line: 1, .. })));
    }

    #[test]
    fn bundled_resources_are_lowercase() {
        let res = NormalizationResources::bundled();
        assert!(res.require_lexicon().is_ok());
        for w in res.slang_map.keys().chain(&res.stopwords).chain(&res.abusive_lexicon) {
            assert_eq!(w, &w.to_lowercase());
        }
        assert!(NormalizationResources::default().require_lexicon().is_err());
    }

    proptest! {
        #[test]
        fn clean_output_charset(raw in "\\PC{0,60}") {
            let c = clean_text(&raw);
            prop_assert!(c.chars().all(|ch| ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == ' '));
            prop_assert!(!c.starts_with(' ') && !c.ends_with(' ') && !c.contains("  "));
        }

        #[test]
        fn pipeline_composition_and_idempotence(raw in "[a-zA-Z0-9@:/. ,!#]{0,80}") {
            let res = NormalizationResources::bundled();
            let doc = preprocess(&raw, &res);
            let chained = remove_stopwords(
                normalize_slang(tokenize(&clean_text(&raw)), &res.slang_map),
                &res.stopwords,
            );
            prop_assert_eq!(&doc.tokens, &chained);
            prop_assert!(doc.tokens.iter().all(|t| !t.is_empty() && !t.contains(' ')));
            // Bundled slang values are fixed points of the map, so a second pass is a no-op.
            prop_assert_eq!(preprocess(&doc.joined(), &res), doc);
            let once = clean_text(&raw);
            prop_assert_eq!(clean_text(&once), once);
        }

        #[test]
        fn abusive_count_monotone(tokens in prop::collection::vec("[a-d]", 0..10), extra in "[a-d]") {
            let lex = set(&["a", "c"]);
            let before = abusive_count(&CleanDoc::new(tokens.clone()), &lex);
            let mut longer = tokens;
            longer.push(extra);
            prop_assert!(abusive_count(&CleanDoc::new(longer), &lex) >= before);
        }
    }
}
