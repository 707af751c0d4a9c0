//! Synthetic, separable tweet corpus for smoke tests and demos.
//!
//! A tweet is hateful exactly when it contains one of the hate tokens of the
//! bundled lexicon; any lexicon token makes it abusive. Tweets carry the usual
//! noise (mentions, links, retweet markers, escapes, slang, capitals) so the
//! whole cleaning pipeline is exercised.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::corpus::LabeledTweet;
use crate::seed;

/// Share of hateful rows, mirroring the 58:42 balance of the real table.
pub const POSITIVE_SHARE: f64 = 0.42;
pub const MIN_ROWS: usize = 20;

pub const HATE_TOKENS: [&str; 6] = ["zorgak", "brumek", "kvelta", "druvok", "snarpi", "grolim"];
pub const MILD_TOKENS: [&str; 4] = ["plonk", "gruzz", "tobek", "wombar"];

/// Kept small: every neutral bigram recurs often enough to carry no signal.
const NEUTRAL: [&str; 16] = [
    "makan", "pagi", "jalan", "kota", "hujan", "kerja", "rumah", "teman", "sekolah", "pasar", "kopi", "buku",
    "malam", "motor", "libur", "senang",
];
const SLANG: [&str; 8] = ["gk", "bgt", "yg", "org", "otw", "tdk", "jgn", "utk"];
const STOP: [&str; 5] = ["yang", "di", "dan", "ini", "itu"];
const NOISE: [&str; 6] = ["USER", "URL", "RT", "@kawan_lama", "https://t.co/x9Zq", "\\n"];
const PUNCT: [&str; 5] = ["!!", "?", ".", ",", "..."];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least {MIN_ROWS} rows, got {0}")]
    TooSmall(usize),
    #[error("label noise must lie in [0, 0.5], got {0}")]
    BadNoise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    /// Probability of flipping the hate label after generation.
    pub label_noise: f64,
}

impl SynthConfig {
    pub fn new(rows: usize, seed: u64) -> Self {
        Self { rows, seed, label_noise: 0.0 }
    }
}

fn tweet(rng: &mut seed::Rng, hateful: bool, mild: bool) -> String {
    let len = rng.random_range(4..=12);
    // the first word is always neutral so no tweet cleans down to nothing
    let mut words: Vec<String> = (0..len)
        .map(|i| {
            let roll: f64 = rng.random();
            let w = if i == 0 {
                NEUTRAL.choose(rng).expect("non-empty")
            } else if roll < 0.12 {
                SLANG.choose(rng).expect("non-empty")
            } else if roll < 0.22 {
                STOP.choose(rng).expect("non-empty")
            } else {
                NEUTRAL.choose(rng).expect("non-empty")
            };
            w.to_string()
        })
        .collect();
    fn plant(words: &mut Vec<String>, tok: &str, rng: &mut seed::Rng) {
        let at = rng.random_range(0..=words.len());
        words.insert(at, tok.to_string());
    }
    if hateful {
        for _ in 0..rng.random_range(2..=3) {
            plant(&mut words, HATE_TOKENS.choose(rng).expect("non-empty"), rng);
        }
    }
    if mild {
        plant(&mut words, MILD_TOKENS.choose(rng).expect("non-empty"), rng);
    }
    for w in words.iter_mut() {
        let roll: f64 = rng.random();
        if roll < 0.08 {
            *w = w.to_uppercase();
        } else if roll < 0.16 {
            w.push_str(PUNCT.choose(rng).expect("non-empty"));
        }
    }
    if rng.random_bool(0.4) {
        plant(&mut words, NOISE.choose(rng).expect("non-empty"), rng);
    }
    if rng.random_bool(0.2) {
        words.insert(0, "RT".into());
    }
    words.join(" ")
}

/// Generates `rows` tweets over a small neutral vocabulary (so that no
/// neutral bigram is rare) with exactly `round(rows * 0.42)` hateful ones
/// before any label noise.
pub fn make_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledTweet>, SynthError> {
    if cfg.rows < MIN_ROWS {
        return Err(SynthError::TooSmall(cfg.rows));
    }
    if !(0.0..=0.5).contains(&cfg.label_noise) {
        return Err(SynthError::BadNoise(cfg.label_noise));
    }
    let mut rng = seed::rng_for(cfg.seed, "synth");
    let n_pos = (cfg.rows as f64 * POSITIVE_SHARE).round() as usize;
    let mut plan: Vec<bool> = (0..cfg.rows).map(|i| i < n_pos).collect();
    plan.shuffle(&mut rng);
    let rows = plan
        .into_iter()
        .map(|hateful| {
            let mild = rng.random_bool(if hateful { 0.2 } else { 0.3 });
            let text = tweet(&mut rng, hateful, mild);
            let mut hs = u8::from(hateful);
            if cfg.label_noise > 0.0 && rng.random_bool(cfg.label_noise) {
                hs ^= 1;
            }
            LabeledTweet { text, hs, abusive: u8::from(hateful || mild) }
        })
        .collect();
    Ok(rows)
}

/// Comma-separated rendering with the default `Tweet,HS,Abusive` header.
pub fn to_csv(rows: &[LabeledTweet]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Tweet", "HS", "Abusive"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.text.as_str(), &r.hs.to_string(), &r.abusive.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("inputs are UTF-8")
}
