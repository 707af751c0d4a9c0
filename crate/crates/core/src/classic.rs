//! The three conventional estimators behind one contract: multinomial Naive
//! Bayes, a Pegasos-trained linear SVM and a Gini random forest.
//!
//! Scores are oriented so that higher means "more likely class 1": the NB
//! log-posterior margin, the SVM signed distance, the forest's positive vote
//! fraction.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::{seed, Label};

#[derive(Debug, Error, PartialEq)]
pub enum ClassicError {
    #[error("training matrix has {rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("need at least 2 training rows")]
    TooFewRows,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label at row {0} is not binary")]
    NonBinary(usize),
    #[error("naive bayes needs non-negative features (found {0})")]
    NegativeFeature(f64),
    #[error("model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown estimator family {0:?}")]
    UnknownFamily(String),
    #[error("{family}: unknown hyperparameter {key:?}")]
    UnknownHyperparameter { family: Family, key: String },
    #[error("{family}: invalid value {value} for {key}")]
    InvalidHyperparameter { family: Family, key: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NaiveBayes,
    LinearSvm,
    RandomForest,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::NaiveBayes, Family::LinearSvm, Family::RandomForest];

    pub fn name(self) -> &'static str {
        match self {
            Family::NaiveBayes => "naive_bayes",
            Family::LinearSvm => "linear_svm",
            Family::RandomForest => "random_forest",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = ClassicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_bayes" | "nb" => Ok(Family::NaiveBayes),
            "linear_svm" | "svm" => Ok(Family::LinearSvm),
            "random_forest" | "rf" => Ok(Family::RandomForest),
            other => Err(ClassicError::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Fraction(f64),
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (dim as f64).sqrt() as usize,
            MaxFeatures::Fraction(f) => (f * dim as f64) as usize,
            MaxFeatures::Count(c) => c,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparameters {
    NaiveBayes {
        alpha: f64,
    },
    LinearSvm {
        lambda: f64,
        epochs: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        max_features: MaxFeatures,
        bootstrap: bool,
    },
}

impl Hyperparameters {
    pub fn defaults(family: Family) -> Self {
        match family {
            Family::NaiveBayes => Self::NaiveBayes { alpha: 1.0 },
            Family::LinearSvm => Self::LinearSvm { lambda: 1e-4, epochs: 20 },
            Family::RandomForest => Self::RandomForest {
                n_trees: 200,
                max_depth: 32,
                max_features: MaxFeatures::Sqrt,
                bootstrap: true,
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Self::NaiveBayes { .. } => Family::NaiveBayes,
            Self::LinearSvm { .. } => Family::LinearSvm,
            Self::RandomForest { .. } => Family::RandomForest,
        }
    }
}

/// A family, its validated hyperparameters and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
}

fn positive_int(family: Family, key: &str, v: f64) -> Result<usize, ClassicError> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(ClassicError::InvalidHyperparameter { family, key: key.into(), value: v })
    }
}

impl EstimatorSpec {
    pub fn default_for(family: Family, seed: u64) -> Self {
        Self { hyperparameters: Hyperparameters::defaults(family), seed }
    }

    /// Builds a spec from `key -> value` overrides of the family defaults.
    ///
    /// Keys: `alpha` (NB); `lambda`, `epochs` (SVM); `n_trees`, `max_depth`,
    /// `max_features` (<= 1 is a fraction of the width, > 1 a count; absent
    /// means square root), `bootstrap` (0/1) (RF).
    pub fn new(family: Family, overrides: &BTreeMap<String, f64>, seed: u64) -> Result<Self, ClassicError> {
        let mut hp = Hyperparameters::defaults(family);
        for (key, &v) in overrides {
            let bad = || ClassicError::InvalidHyperparameter { family, key: key.clone(), value: v };
            match (&mut hp, key.as_str()) {
                (Hyperparameters::NaiveBayes { alpha }, "alpha") => {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(bad());
                    }
                    *alpha = v;
                }
                (Hyperparameters::LinearSvm { lambda, .. }, "lambda") => {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(bad());
                    }
                    *lambda = v;
                }
                (Hyperparameters::LinearSvm { epochs, .. }, "epochs") => *epochs = positive_int(family, key, v)?,
                (Hyperparameters::RandomForest { n_trees, .. }, "n_trees") => *n_trees = positive_int(family, key, v)?,
                (Hyperparameters::RandomForest { max_depth, .. }, "max_depth") => {
                    *max_depth = positive_int(family, key, v)?
                }
                (Hyperparameters::RandomForest { max_features, .. }, "max_features") => {
                    *max_features = if v > 0.0 && v <= 1.0 {
                        MaxFeatures::Fraction(v)
                    } else {
                        MaxFeatures::Count(positive_int(family, key, v)?)
                    };
                }
                (Hyperparameters::RandomForest { bootstrap, .. }, "bootstrap") => {
                    *bootstrap = match v {
                        0.0 => false,
                        1.0 => true,
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(ClassicError::UnknownHyperparameter { family, key: key.clone() }),
            }
        }
        Ok(Self { hyperparameters: hp, seed })
    }

    pub fn family(&self) -> Family {
        self.hyperparameters.family()
    }
}

/// Something that can be trained into a scorer; the unit the leaderboard ranks.
pub trait Estimator: Sync {
    type Model: Scorer + Send;

    /// Name used for display and as the last ranking tie-break.
    fn name(&self) -> String;

    fn fit(&self, x: &FeatureMatrix, y: &[Label]) -> Result<Self::Model, ClassicError>;
}

pub trait Scorer {
    fn score(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ClassicError>;

    fn default_threshold(&self) -> f64;

    fn predict(&self, x: &FeatureMatrix, threshold: f64) -> Result<Vec<Label>, ClassicError> {
        Ok(threshold_scores(&self.score(x)?, threshold))
    }
}

pub fn threshold_scores(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores.iter().map(|&s| Label::from(s > threshold)).collect()
}

impl Estimator for EstimatorSpec {
    type Model = TrainedModel;

    fn name(&self) -> String {
        self.family().name().to_string()
    }

    fn fit(&self, x: &FeatureMatrix, y: &[Label]) -> Result<TrainedModel, ClassicError> {
        train(self, x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainedModel {
    NaiveBayes {
        /// ln P(class), indexed by class
        log_prior: [f64; 2],
        /// ln P(feature | class), indexed [class][feature]
        log_likelihood: [Vec<f64>; 2],
    },
    LinearSvm {
        weights: Vec<f64>,
        bias: f64,
    },
    RandomForest {
        dim: usize,
        trees: Vec<Tree>,
    },
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            Self::NaiveBayes { .. } => Family::NaiveBayes,
            Self::LinearSvm { .. } => Family::LinearSvm,
            Self::RandomForest { .. } => Family::RandomForest,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::NaiveBayes { log_likelihood, .. } => log_likelihood[0].len(),
            Self::LinearSvm { weights, .. } => weights.len(),
            Self::RandomForest { dim, .. } => *dim,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl Scorer for TrainedModel {
    fn score(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ClassicError> {
        if x.dim() != self.dim() {
            return Err(ClassicError::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        Ok(match self {
            Self::NaiveBayes { log_prior, log_likelihood } => {
                let base = log_prior[1] - log_prior[0];
                x.rows()
                    .map(|row| {
                        base + row
                            .iter()
                            .map(|&(c, v)| v * (log_likelihood[1][c] - log_likelihood[0][c]))
                            .sum::<f64>()
                    })
                    .collect()
            }
            Self::LinearSvm { weights, bias } => x.rows().map(|row| sparse_dot(row, weights) + bias).collect(),
            Self::RandomForest { trees, .. } => x
                .rows()
                .map(|row| {
                    let votes = trees.iter().filter(|t| t.predict(row) == 1).count();
                    votes as f64 / trees.len() as f64
                })
                .collect(),
        })
    }

    fn default_threshold(&self) -> f64 {
        match self {
            Self::RandomForest { .. } => 0.5,
            _ => 0.0,
        }
    }
}

pub fn score(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<f64>, ClassicError> {
    model.score(x)
}

pub fn predict(model: &TrainedModel, x: &FeatureMatrix, threshold: f64) -> Result<Vec<Label>, ClassicError> {
    model.predict(x, threshold)
}

fn sparse_dot(row: &[(usize, f64)], w: &[f64]) -> f64 {
    row.iter().map(|&(c, v)| v * w[c]).sum()
}

fn check_training_data(x: &FeatureMatrix, y: &[Label]) -> Result<(), ClassicError> {
    if x.n_rows() != y.len() {
        return Err(ClassicError::LengthMismatch { rows: x.n_rows(), labels: y.len() });
    }
    if y.len() < 2 {
        return Err(ClassicError::TooFewRows);
    }
    if let Some(i) = y.iter().position(|&v| v > 1) {
        return Err(ClassicError::NonBinary(i));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(ClassicError::SingleClass);
    }
    Ok(())
}

pub fn train(spec: &EstimatorSpec, x: &FeatureMatrix, y: &[Label]) -> Result<TrainedModel, ClassicError> {
    check_training_data(x, y)?;
    match spec.hyperparameters {
        Hyperparameters::NaiveBayes { alpha } => train_naive_bayes(x, y, alpha),
        Hyperparameters::LinearSvm { lambda, epochs } => Ok(train_pegasos(x, y, lambda, epochs, spec.seed)),
        Hyperparameters::RandomForest { n_trees, max_depth, max_features, bootstrap } => {
            let params = ForestParams {
                n_trees,
                max_depth,
                max_features: max_features.resolve(x.dim()),
                bootstrap,
            };
            Ok(train_forest(x, y, &params, spec.seed))
        }
    }
}

// ---------------------------------------------------------------- naive bayes

/// Multinomial likelihood with real-valued counts and additive smoothing.
fn train_naive_bayes(x: &FeatureMatrix, y: &[Label], alpha: f64) -> Result<TrainedModel, ClassicError> {
    let min = x.min_value();
    if min < 0.0 {
        return Err(ClassicError::NegativeFeature(min));
    }
    let dim = x.dim();
    let mut mass = [vec![0.0; dim], vec![0.0; dim]];
    let mut n_class = [0usize; 2];
    for (row, &label) in x.rows().zip(y) {
        let c = usize::from(label);
        n_class[c] += 1;
        for &(j, v) in row {
            mass[c][j] += v;
        }
    }
    let n = y.len() as f64;
    let log_prior = [(n_class[0] as f64 / n).ln(), (n_class[1] as f64 / n).ln()];
    let log_likelihood = mass.map(|m| {
        let total: f64 = m.iter().sum::<f64>() + alpha * dim as f64;
        m.iter().map(|&v| ((v + alpha) / total).ln()).collect()
    });
    Ok(TrainedModel::NaiveBayes { log_prior, log_likelihood })
}

// ------------------------------------------------------------------- pegasos

/// Pegasos: step `1/(lambda t)`, hinge subgradient, projection onto the ball
/// of radius `1/sqrt(lambda)`. The bias is an extra constant-1 coordinate and
/// is regularized with the weights. `w = scale * v` keeps updates sparse.
fn train_pegasos(x: &FeatureMatrix, y: &[Label], lambda: f64, epochs: usize, seed: u64) -> TrainedModel {
    let dim = x.dim();
    let mut v = vec![0.0; dim + 1];
    let bias = dim;
    let mut scale = 1.0f64;
    let mut norm_sq = 0.0f64; // |v|^2
    let radius = 1.0 / lambda.sqrt();
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    let mut rng = seed::rng(seed);
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let row = x.row(i);
            let sign = if y[i] == 1 { 1.0 } else { -1.0 };
            let vx = sparse_dot(row, &v) + v[bias];
            let margin = sign * scale * vx;
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|e| *e = 0.0);
                scale = 1.0;
                norm_sq = 0.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * sign / scale;
                // |v + step x|^2 = |v|^2 + 2 step v.x + step^2 |x|^2, evaluated
                // against the pre-update v (zero when just reset).
                let vx_now = if shrink <= 0.0 { 0.0 } else { vx };
                let x_sq: f64 = row.iter().map(|p| p.1 * p.1).sum::<f64>() + 1.0;
                norm_sq += 2.0 * step * vx_now + step * step * x_sq;
                for &(j, val) in row {
                    v[j] += step * val;
                }
                v[bias] += step;
            }
            let norm = scale * norm_sq.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|e| *e *= scale);
                norm_sq = v.iter().map(|e| e * e).sum();
                scale = 1.0;
            }
        }
    }
    let mut weights: Vec<f64> = v.iter().map(|e| e * scale).collect();
    let b = weights.pop().unwrap_or(0.0);
    TrainedModel::LinearSvm { weights, bias: b }
}

// ------------------------------------------------------------- random forest

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted class counts of the training rows that reached the leaf.
    Leaf { counts: [f64; 2] },
}

/// Flat node array; index 0 is the root. Rows go left when
/// `value <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[(usize, f64)]) -> Label {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Split { feature, threshold, left, right } => {
                    let v = row.binary_search_by_key(&feature, |p| p.0).map_or(0.0, |i| row[i].1);
                    k = if v <= threshold { left } else { right };
                }
                Node::Leaf { counts } => return Label::from(counts[1] > counts[0]),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Candidate features examined per node.
    pub max_features: usize,
    pub bootstrap: bool,
}

/// Column-major copy of the non-zeros, built once per forest.
struct ColumnView {
    cols: Vec<Vec<(u32, f64)>>,
}

impl ColumnView {
    fn new(x: &FeatureMatrix) -> Self {
        let mut cols = vec![Vec::new(); x.dim()];
        for (r, row) in x.rows().enumerate() {
            for &(c, v) in row {
                cols[c].push((r as u32, v));
            }
        }
        Self { cols }
    }
}

fn gini(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    if w <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (w0 / w, w1 / w);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best midpoint split of one feature given `(value, class, weight)` of every
/// row in the node. Ties keep the lowest threshold.
pub(crate) fn best_threshold(values: &mut [(f64, Label, f64)]) -> Option<(f64, f64)> {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = [0.0; 2];
    for &(_, c, w) in values.iter() {
        total[usize::from(c)] += w;
    }
    let parent = gini(total[0], total[1]);
    let n = total[0] + total[1];
    let mut left = [0.0; 2];
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < values.len() {
        let v = values[i].0;
        while i < values.len() && values[i].0 == v {
            left[usize::from(values[i].1)] += values[i].2;
            i += 1;
        }
        if i == values.len() {
            break;
        }
        let next = values[i].0;
        let (l, r) = (left[0] + left[1], n - left[0] - left[1]);
        let gain = parent - l / n * gini(left[0], left[1]) - r / n * gini(total[0] - left[0], total[1] - left[1]);
        let mut threshold = (v + next) / 2.0;
        if threshold >= next {
            threshold = v;
        }
        if best.is_none_or(|b| gain > b.1 + 1e-12) {
            best = Some((threshold, gain));
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [Label],
    columns: &'a ColumnView,
    weight: Vec<f64>,
    node_of: Vec<u32>,
    params: ForestParams,
}

impl TreeBuilder<'_> {
    fn class_totals(&self, rows: &[u32]) -> [f64; 2] {
        let mut t = [0.0; 2];
        for &r in rows {
            t[usize::from(self.y[r as usize])] += self.weight[r as usize];
        }
        t
    }

    /// `(value, class, weight)` for every row of the node, zeros included.
    fn feature_values(&self, node: u32, rows: &[u32], feature: usize, totals: [f64; 2]) -> Vec<(f64, Label, f64)> {
        let col = &self.columns.cols[feature];
        let mut vals = Vec::new();
        if col.len() < rows.len() * 4 {
            for &(r, v) in col {
                let ru = r as usize;
                if self.weight[ru] > 0.0 && self.node_of[ru] == node {
                    vals.push((v, self.y[ru], self.weight[ru]));
                }
            }
        } else {
            for &r in rows {
                let v = self.x.get(r as usize, feature);
                if v != 0.0 {
                    vals.push((v, self.y[r as usize], self.weight[r as usize]));
                }
            }
        }
        let mut nz = [0.0; 2];
        for &(_, c, w) in &vals {
            nz[usize::from(c)] += w;
        }
        for c in 0..2 {
            let zero_mass = totals[c] - nz[c];
            if zero_mass > 1e-9 {
                vals.push((0.0, c as Label, zero_mass));
            }
        }
        vals
    }

    fn build(mut self, rng: &mut seed::Rng) -> Tree {
        let dim = self.x.dim();
        let root_rows: Vec<u32> = (0..self.y.len() as u32).filter(|&r| self.weight[r as usize] > 0.0).collect();
        let mut nodes = vec![Node::Leaf { counts: [0.0; 2] }];
        let mut stack = vec![(0u32, root_rows, 0usize)];
        while let Some((node, rows, depth)) = stack.pop() {
            let totals = self.class_totals(&rows);
            let pure = totals[0] == 0.0 || totals[1] == 0.0;
            let mut choice: Option<SplitChoice> = None;
            if !pure && depth < self.params.max_depth {
                let mut candidates = rand::seq::index::sample(rng, dim, self.params.max_features).into_vec();
                candidates.sort_unstable();
                for feature in candidates {
                    let mut vals = self.feature_values(node, &rows, feature, totals);
                    if let Some((threshold, gain)) = best_threshold(&mut vals) {
                        if gain > 1e-12 && choice.is_none_or(|c| gain > c.gain + 1e-12) {
                            choice = Some(SplitChoice { feature, threshold, gain });
                        }
                    }
                }
            }
            let Some(split) = choice else {
                nodes[node as usize] = Node::Leaf { counts: totals };
                continue;
            };
            let (left, right) = (nodes.len() as u32, nodes.len() as u32 + 1);
            nodes.push(Node::Leaf { counts: [0.0; 2] });
            nodes.push(Node::Leaf { counts: [0.0; 2] });
            let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
            for r in rows {
                if self.x.get(r as usize, split.feature) <= split.threshold {
                    self.node_of[r as usize] = left;
                    lrows.push(r);
                } else {
                    self.node_of[r as usize] = right;
                    rrows.push(r);
                }
            }
            nodes[node as usize] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: left as usize,
                right: right as usize,
            };
            stack.push((right, rrows, depth + 1));
            stack.push((left, lrows, depth + 1));
        }
        Tree { nodes }
    }
}

fn grow_tree(x: &FeatureMatrix, y: &[Label], columns: &ColumnView, params: ForestParams, tree_seed: u64) -> Tree {
    let mut rng = seed::rng(tree_seed);
    let n = y.len();
    let weight = if params.bootstrap {
        let mut w = vec![0.0; n];
        for _ in 0..n {
            w[rng.random_range(0..n)] += 1.0;
        }
        w
    } else {
        vec![1.0; n]
    };
    TreeBuilder { x, y, columns, weight, node_of: vec![0; n], params }.build(&mut rng)
}

#[cfg(test)]
/// Grows one tree without label checks (single-class data gives a lone leaf).
pub(crate) fn fit_tree(x: &FeatureMatrix, y: &[Label], params: ForestParams, tree_seed: u64) -> Tree {
    grow_tree(x, y, &ColumnView::new(x), params, tree_seed)
}

pub(crate) fn train_forest(x: &FeatureMatrix, y: &[Label], params: &ForestParams, seed: u64) -> TrainedModel {
    let columns = ColumnView::new(x);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, &columns, *params, seed::derive_index(seed, t as u64)))
        .collect();
    TrainedModel::RandomForest { dim: x.dim(), trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec(family: Family, kv: &[(&str, f64)], seed: u64) -> EstimatorSpec {
        let map = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        EstimatorSpec::new(family, &map, seed).unwrap()
    }

    fn accuracy(pred: &[Label], y: &[Label]) -> f64 {
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    /// Two docs per class over disjoint vocabularies (columns 0-1 vs 2-3).
    fn disjoint_docs() -> (FeatureMatrix, Vec<Label>) {
        let x = FeatureMatrix::from_dense(&[
            vec![2.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 2.0],
            vec![0.0, 0.0, 1.0, 1.0],
        ]);
        (x, vec![0, 0, 1, 1])
    }

    #[test]
    fn naive_bayes_matches_hand_posterior() {
        let (x, y) = disjoint_docs();
        let model = train(&spec(Family::NaiveBayes, &[], 0), &x, &y).unwrap();
        // class 0 mass (3, 2, 0, 0), class 1 mass (0, 0, 2, 3); alpha 1, total 5 + 4
        let ll0 = [4.0f64 / 9.0, 3.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0].map(f64::ln);
        let ll1 = [1.0f64 / 9.0, 1.0 / 9.0, 3.0 / 9.0, 4.0 / 9.0].map(f64::ln);
        let scores = model.score(&x).unwrap();
        for (i, row) in [[2.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 2.0], [0.0, 0.0, 1.0, 1.0]]
            .iter()
            .enumerate()
        {
            let want: f64 = (0..4).map(|j| row[j] * (ll1[j] - ll0[j])).sum();
            assert!((scores[i] - want).abs() < 1e-12);
        }
        assert_eq!(model.predict(&x, 0.0).unwrap(), y);
    }

    #[test]
    fn naive_bayes_symmetric_margin_is_zero() {
        let (x, y) = disjoint_docs();
        // mirror: swapping columns (0,1,2,3) -> (3,2,1,0) swaps the classes
        let model = train(&spec(Family::NaiveBayes, &[], 0), &x, &y).unwrap();
        let probe = FeatureMatrix::from_dense(&[vec![1.0, 1.0, 1.0, 1.0], vec![0.0; 4]]);
        let s = model.score(&probe).unwrap();
        assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
    }

    #[test]
    fn naive_bayes_rejects_negative_and_stays_finite() {
        let x = FeatureMatrix::from_dense(&[vec![-1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            train(&spec(Family::NaiveBayes, &[], 0), &x, &[0, 1]),
            Err(ClassicError::NegativeFeature(-1.0))
        );
        // a column never seen in training still has a finite likelihood
        let x = FeatureMatrix::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let m = train(&spec(Family::NaiveBayes, &[("alpha", 0.01)], 0), &x, &[0, 1]).unwrap();
        let s = m.score(&FeatureMatrix::from_dense(&[vec![0.0, 0.0, 50.0]])).unwrap();
        assert!(s[0].is_finite());
    }

    fn toy_2d(n: usize, seed: u64) -> (FeatureMatrix, Vec<Label>) {
        let mut rng = seed::rng(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let positive = i % 2 == 0;
            let x1 = rng.random_range(0.5..2.0) * if positive { 1.0 } else { -1.0 };
            rows.push(vec![x1, rng.random_range(-2.0..2.0)]);
            y.push(Label::from(positive));
        }
        (FeatureMatrix::from_dense(&rows), y)
    }

    #[test]
    fn svm_separates_toy_set() {
        let (x, y) = toy_2d(60, 5);
        let m = train(&spec(Family::LinearSvm, &[("epochs", 50.0)], 9), &x, &y).unwrap();
        // brute force check of every final classification
        assert_eq!(accuracy(&m.predict(&x, 0.0).unwrap(), &y), 1.0);
    }

    #[test]
    fn svm_regularization_shrinks_weights() {
        let (x, y) = toy_2d(60, 6);
        let norm = |lambda: f64| match train(&spec(Family::LinearSvm, &[("lambda", lambda)], 1), &x, &y).unwrap() {
            TrainedModel::LinearSvm { weights, .. } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
            _ => unreachable!(),
        };
        let (a, b, c) = (norm(0.01), norm(0.1), norm(100.0));
        assert!(b < a, "{b} !< {a}");
        assert!(c < 0.2, "{c}");
    }

    #[test]
    fn zero_svm_scores_zero() {
        let m = TrainedModel::LinearSvm { weights: vec![0.0; 3], bias: 0.0 };
        let x = FeatureMatrix::from_dense(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 5.0]]);
        assert_eq!(m.score(&x).unwrap(), vec![0.0, 0.0]);
        let wrong = FeatureMatrix::from_dense(&[vec![1.0, 2.0]]);
        assert_eq!(m.score(&wrong), Err(ClassicError::DimensionMismatch { expected: 3, got: 2 }));
    }

    /// Exhaustive enumeration of (feature, midpoint) Gini gains on unit weights.
    fn brute_best_split(rows: &[Vec<f64>], y: &[Label]) -> (usize, f64) {
        let n = y.len() as f64;
        let g = |s: &[Label]| {
            let k = s.len() as f64;
            if k == 0.0 {
                return 0.0;
            }
            let p = s.iter().filter(|&&v| v == 1).count() as f64 / k;
            1.0 - p * p - (1.0 - p) * (1.0 - p)
        };
        let mut best = (usize::MAX, 0.0, 0.0);
        for f in 0..rows[0].len() {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<Label>, Vec<Label>) = {
                    let mut l = vec![];
                    let mut r = vec![];
                    for (row, &lab) in rows.iter().zip(y) {
                        if row[f] <= t { l.push(lab) } else { r.push(lab) }
                    }
                    (l, r)
                };
                let gain = g(y) - l.len() as f64 / n * g(&l) - r.len() as f64 / n * g(&r);
                if gain > best.2 + 1e-12 {
                    best = (f, t, gain);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn stump_splits_on_informative_feature() {
        let mut rng = seed::rng(3);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let label = Label::from(i % 2 == 1);
            rows.push(vec![rng.random_range(0.0..1.0), f64::from(label), rng.random_range(0.0..1.0)]);
            y.push(label);
        }
        let (want_feature, want_threshold) = brute_best_split(&rows, &y);
        assert_eq!(want_feature, 1);
        let x = FeatureMatrix::from_dense(&rows);
        let params = ForestParams { n_trees: 1, max_depth: 1, max_features: 3, bootstrap: false };
        let tree = fit_tree(&x, &y, params, 11);
        match tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, want_feature);
                assert_eq!(threshold, want_threshold);
            }
            other => panic!("root is {other:?}"),
        }
        assert_eq!(tree.depth(), 1);
        // through the public path with bootstrap on
        let m = train(
            &spec(Family::RandomForest, &[("n_trees", 1.0), ("max_depth", 1.0), ("max_features", 3.0)], 4),
            &x,
            &y,
        )
        .unwrap();
        let TrainedModel::RandomForest { trees, .. } = &m else { unreachable!() };
        assert!(matches!(trees[0].nodes[0], Node::Split { feature: 1, .. }));
    }

    #[test]
    fn brute_and_fast_splits_agree_on_random_data() {
        for s in 0..30 {
            let mut rng = seed::rng(100 + s);
            let n = rng.random_range(4..25);
            let d = rng.random_range(1..5);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| if rng.random_bool(0.5) { 0.0 } else { f64::from(rng.random_range(-3i32..4)) }).collect())
                .collect();
            let y: Vec<Label> = (0..n).map(|_| Label::from(rng.random_bool(0.5))).collect();
            let x = FeatureMatrix::from_dense(&rows);
            let params = ForestParams { n_trees: 1, max_depth: 1, max_features: d, bootstrap: false };
            let tree = fit_tree(&x, &y, params, 0);
            let (bf, bt) = brute_best_split(&rows, &y);
            match tree.nodes[0] {
                Node::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (bf, bt), "case {s}"),
                Node::Leaf { .. } => assert_eq!(bf, usize::MAX, "case {s}: expected a split"),
            }
        }
    }

    #[test]
    fn single_label_trees_predict_that_label() {
        let x = FeatureMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0]]);
        for label in [0, 1] {
            let params = ForestParams { n_trees: 5, max_depth: 8, max_features: 1, bootstrap: true };
            let y = vec![label; 3];
            let model = TrainedModel::RandomForest {
                dim: 2,
                trees: (0..5).map(|t| fit_tree(&x, &y, params, t)).collect(),
            };
            let probe = FeatureMatrix::from_dense(&[vec![9.0, 9.0], vec![0.0, 0.0]]);
            assert_eq!(model.predict(&probe, 0.5).unwrap(), vec![label; 2]);
        }
    }

    #[test]
    fn forest_vote_fraction_counts_trees() {
        let (x, y) = toy_2d(40, 8);
        let m = train(&spec(Family::RandomForest, &[("n_trees", 7.0)], 2), &x, &y).unwrap();
        let TrainedModel::RandomForest { trees, .. } = &m else { unreachable!() };
        assert_eq!(trees.len(), 7);
        let s = m.score(&x).unwrap();
        for (i, row) in x.rows().enumerate() {
            let votes = trees.iter().filter(|t| t.predict(row) == 1).count();
            assert_eq!(s[i], votes as f64 / 7.0);
            assert!((0.0..=1.0).contains(&s[i]));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy_2d(50, 1);
        // naive Bayes needs non-negative counts
        let dense: Vec<Vec<f64>> = x
            .rows()
            .map(|r| {
                let mut v = vec![0.0; x.dim()];
                r.iter().for_each(|&(c, w)| v[c] = w.abs());
                v
            })
            .collect();
        let x = FeatureMatrix::from_dense(&dense);
        for family in Family::ALL {
            let s = spec(family, &[], 77);
            let (a, b) = (train(&s, &x, &y).unwrap(), train(&s, &x, &y).unwrap());
            assert_eq!(a, b);
            assert_eq!(TrainedModel::from_json(&a.to_json()).unwrap(), a);
        }
    }

    #[test]
    fn predict_thresholds() {
        assert_eq!(threshold_scores(&[-1.0, 2.0], 0.0), vec![0, 1]);
        assert_eq!(threshold_scores(&[0.2, 0.4], 0.5), vec![0, 0]);
        let mut rng = seed::rng(1);
        for _ in 0..100 {
            let s: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(-1.0..1.0);
            assert_eq!(threshold_scores(&[s], t)[0], Label::from(s - t > 0.0));
        }
    }

    #[test]
    fn training_errors() {
        let x = FeatureMatrix::from_dense(&[vec![1.0], vec![2.0]]);
        let nb = spec(Family::NaiveBayes, &[], 0);
        assert_eq!(train(&nb, &x, &[1, 1]), Err(ClassicError::SingleClass));
        assert_eq!(train(&nb, &x, &[1]), Err(ClassicError::LengthMismatch { rows: 2, labels: 1 }));
        let empty = FeatureMatrix::from_dense(&[]);
        assert_eq!(train(&nb, &empty, &[]), Err(ClassicError::TooFewRows));
    }

    #[test]
    fn hyperparameter_validation() {
        let m = |kv: &[(&str, f64)]| kv.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
        assert!(EstimatorSpec::new(Family::NaiveBayes, &m(&[("alpha", 0.0)]), 0).is_err());
        assert!(EstimatorSpec::new(Family::NaiveBayes, &m(&[("lambda", 1.0)]), 0).is_err());
        assert!(EstimatorSpec::new(Family::LinearSvm, &m(&[("epochs", 2.5)]), 0).is_err());
        assert!(EstimatorSpec::new(Family::RandomForest, &m(&[("bootstrap", 2.0)]), 0).is_err());
        let rf = EstimatorSpec::new(Family::RandomForest, &m(&[("max_features", 0.5)]), 0).unwrap();
        assert!(matches!(rf.hyperparameters, Hyperparameters::RandomForest { max_features: MaxFeatures::Fraction(f), .. } if f == 0.5));
        assert_eq!(MaxFeatures::Sqrt.resolve(5001), 70);
        assert_eq!("rf".parse::<Family>().unwrap(), Family::RandomForest);
        assert!("knn".parse::<Family>().is_err());
        assert_eq!(
            EstimatorSpec::default_for(Family::LinearSvm, 3).hyperparameters,
            Hyperparameters::LinearSvm { lambda: 1e-4, epochs: 20 }
        );
    }
}
