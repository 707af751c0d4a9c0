//! Model comparison harness: stratified folds, per-fold metrics, a leaderboard
//! ranked by unweighted mean F1 over folds, and champion refit.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classic::{ClassicError, Estimator, Scorer};
use crate::corpus::class_members;
use crate::eval::{self, EvalError, MetricsReport};
use crate::features::{self, FeatureMatrix, VocabConfig};
use crate::textprep::CleanDoc;
use crate::{seed, Label};

#[derive(Debug, Error)]
pub enum AutobenchError {
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("class {class} has {count} member(s), fewer than the {k} folds")]
    ClassTooSmall { class: Label, count: usize, k: usize },
    #[error("fold assignment covers {folds} rows but there are {rows}")]
    FoldMismatch { folds: usize, rows: usize },
    #[error("fold {fold}: {source}")]
    Training {
        fold: usize,
        #[source]
        source: ClassicError,
    },
    #[error("fold {fold}: {source}")]
    Evaluation {
        fold: usize,
        #[source]
        source: EvalError,
    },
    #[error("no estimators to compare")]
    NoEstimators,
    #[error("leaderboard is empty")]
    EmptyLeaderboard,
    #[error("refit: {0}")]
    Refit(#[source] ClassicError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Shuffles each class and deals its members round-robin over the folds.
pub fn kfold_stratified(y: &[Label], k: usize, seed: u64) -> Result<FoldAssignment, AutobenchError> {
    if k < 2 {
        return Err(AutobenchError::BadFoldCount(k));
    }
    let mut rng = seed::rng(seed);
    let mut fold_of = vec![0; y.len()];
    for (class, mut members) in class_members(y).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(AutobenchError::ClassTooSmall { class: class as Label, count: members.len(), k });
        }
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

fn score_fold<M: Scorer>(model: &M, x: &FeatureMatrix, y: &[Label], fold: usize) -> Result<MetricsReport, AutobenchError> {
    let scores = model.score(x).map_err(|source| AutobenchError::Training { fold, source })?;
    let (_, report) = eval::evaluate_scores(y, &scores, model.default_threshold())
        .map_err(|source| AutobenchError::Evaluation { fold, source })?;
    Ok(report)
}

/// Cross-validation where `features(train_rows, test_rows)` supplies the
/// matrices of each fold.
pub fn cross_validate_with<E, F>(
    estimator: &E,
    y: &[Label],
    folds: &FoldAssignment,
    features: F,
) -> Result<Vec<MetricsReport>, AutobenchError>
where
    E: Estimator,
    F: Fn(&[usize], &[usize]) -> (FeatureMatrix, FeatureMatrix) + Sync,
{
    if folds.fold_of.len() != y.len() {
        return Err(AutobenchError::FoldMismatch { folds: folds.fold_of.len(), rows: y.len() });
    }
    (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let (train_rows, test_rows) = (folds.train_rows(fold), folds.test_rows(fold));
            let (x_train, x_test) = features(&train_rows, &test_rows);
            let y_train: Vec<Label> = train_rows.iter().map(|&i| y[i]).collect();
            let y_test: Vec<Label> = test_rows.iter().map(|&i| y[i]).collect();
            let model = estimator
                .fit(&x_train, &y_train)
                .map_err(|source| AutobenchError::Training { fold, source })?;
            score_fold(&model, &x_test, &y_test, fold)
        })
        .collect()
}

/// Cross-validation over one fixed feature matrix.
pub fn cross_validate<E: Estimator>(
    estimator: &E,
    x: &FeatureMatrix,
    y: &[Label],
    folds: &FoldAssignment,
) -> Result<Vec<MetricsReport>, AutobenchError> {
    if x.n_rows() != y.len() {
        return Err(AutobenchError::FoldMismatch { folds: x.n_rows(), rows: y.len() });
    }
    cross_validate_with(estimator, y, folds, |tr, te| (x.select(tr), x.select(te)))
}

/// Cross-validation that refits the vocabulary on each fold's training rows.
pub fn cross_validate_refit<E: Estimator>(
    estimator: &E,
    docs: &[CleanDoc],
    y: &[Label],
    folds: &FoldAssignment,
    vocab: VocabConfig,
    lexicon: &std::collections::HashSet<String>,
) -> Result<Vec<MetricsReport>, AutobenchError> {
    cross_validate_with(estimator, y, folds, |tr, te| {
        let pick = |rows: &[usize]| rows.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
        let train_docs = pick(tr);
        let v = features::fit_vocabulary(&train_docs, vocab).expect("fold has training documents");
        (
            features::transform_corpus(&train_docs, &v, lexicon),
            features::transform_corpus(&pick(te), &v, lexicon),
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry<E> {
    pub name: String,
    pub spec: E,
    pub per_fold: Vec<MetricsReport>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
}

impl<E> LeaderboardEntry<E> {
    pub fn new(name: String, spec: E, per_fold: Vec<MetricsReport>) -> Self {
        let k = per_fold.len() as f64;
        let mean_f1 = per_fold.iter().map(|m| m.f1).sum::<f64>() / k;
        let mean_accuracy = per_fold.iter().map(|m| m.accuracy).sum::<f64>() / k;
        Self { name, spec, per_fold, mean_f1, mean_accuracy }
    }
}

/// Entries sorted best first; the champion is entry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard<E> {
    pub entries: Vec<LeaderboardEntry<E>>,
    pub champion: usize,
}

fn rank_order<E>(a: &LeaderboardEntry<E>, b: &LeaderboardEntry<E>) -> Ordering {
    b.mean_f1
        .total_cmp(&a.mean_f1)
        .then_with(|| b.mean_accuracy.total_cmp(&a.mean_accuracy))
        .then_with(|| a.name.cmp(&b.name))
}

impl<E> Leaderboard<E> {
    pub fn from_entries(mut entries: Vec<LeaderboardEntry<E>>) -> Result<Self, AutobenchError> {
        if entries.is_empty() {
            return Err(AutobenchError::NoEstimators);
        }
        entries.sort_by(rank_order);
        Ok(Self { entries, champion: 0 })
    }

    pub fn champion(&self) -> &LeaderboardEntry<E> {
        &self.entries[self.champion]
    }

    /// `name,f1_fold1..f1_foldK,mean_f1,mean_accuracy,rank`
    pub fn to_csv(&self) -> String {
        let k = self.entries.first().map_or(0, |e| e.per_fold.len());
        let mut s = String::from("family");
        for i in 1..=k {
            s.push_str(&format!(",f1_fold{i}"));
        }
        s.push_str(",mean_f1,mean_accuracy,rank\n");
        for (rank, e) in self.entries.iter().enumerate() {
            s.push_str(&e.name);
            for m in &e.per_fold {
                s.push_str(&format!(",{}", m.f1));
            }
            s.push_str(&format!(",{},{},{}\n", e.mean_f1, e.mean_accuracy, rank + 1));
        }
        s
    }
}

pub fn compare_models_with<E, F>(
    estimators: &[E],
    y: &[Label],
    folds: &FoldAssignment,
    features: F,
) -> Result<Leaderboard<E>, AutobenchError>
where
    E: Estimator + Clone + Send,
    F: Fn(&[usize], &[usize]) -> (FeatureMatrix, FeatureMatrix) + Sync,
{
    if estimators.is_empty() {
        return Err(AutobenchError::NoEstimators);
    }
    let entries = estimators
        .par_iter()
        .map(|e| Ok(LeaderboardEntry::new(e.name(), e.clone(), cross_validate_with(e, y, folds, &features)?)))
        .collect::<Result<Vec<_>, AutobenchError>>()?;
    Leaderboard::from_entries(entries)
}

pub fn compare_models<E: Estimator + Clone + Send>(
    estimators: &[E],
    x: &FeatureMatrix,
    y: &[Label],
    folds: &FoldAssignment,
) -> Result<Leaderboard<E>, AutobenchError> {
    if x.n_rows() != y.len() {
        return Err(AutobenchError::FoldMismatch { folds: x.n_rows(), rows: y.len() });
    }
    compare_models_with(estimators, y, folds, |tr, te| (x.select(tr), x.select(te)))
}

pub fn refit_champion<E: Estimator>(
    leaderboard: &Leaderboard<E>,
    x: &FeatureMatrix,
    y: &[Label],
) -> Result<E::Model, AutobenchError> {
    let entry = leaderboard.entries.get(leaderboard.champion).ok_or(AutobenchError::EmptyLeaderboard)?;
    entry.spec.fit(x, y).map_err(AutobenchError::Refit)
}
