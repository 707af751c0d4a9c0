//! Binary hate-speech benchmarking on short tweets.
//!
//! Two branches share one cleaning pipeline ([`textprep`]) and one held-out
//! split ([`corpus`]):
//!
//! - the conventional branch turns documents into TF-IDF plus an
//!   abusive-word count ([`features`]), trains Naive Bayes, a linear SVM and a
//!   random forest ([`classic`]) and ranks them by cross-validated F1
//!   ([`autobench`]);
//! - the neural branch encodes padded token ids ([`neural`]) through a
//!   hand-differentiated CNN-BiLSTM ([`numerics`]).
//!
//! Both are scored by the same metrics and report writers ([`eval`]).

pub mod autobench;
pub mod classic;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod neural;
pub mod numerics;
pub mod seed;
pub mod svg;
pub mod synth;
pub mod textprep;

/// Binary class label, 0 or 1. Positive (1) is hate speech.
pub type Label = u8;
