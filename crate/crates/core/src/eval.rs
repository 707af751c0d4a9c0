//! Confusion counts, accuracy/precision/recall/F1, rank AUC and the report
//! bundle written at the end of every run.
//!
//! The positive class is label 1 throughout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svg::{self, Canvas, Frame};
use crate::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("entry {index} is not a binary label")]
    NonBinary { index: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("report needs at least one metrics payload")]
    NoPayload,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (t, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            _ => return Err(EvalError::NonBinary { index }),
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// Ratios whose denominator was zero; they are reported as 0.
    pub undefined: UndefinedFlags,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        (num / den, false)
    } else {
        (0.0, true)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let (precision, p_undef) = ratio(tp, tp + fp);
    let (recall, r_undef) = ratio(tp, tp + fn_);
    let (f1, f_undef) = if p_undef || r_undef {
        (0.0, true)
    } else {
        ratio(2.0 * precision * recall, precision + recall)
    };
    Ok(MetricsReport {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1,
        auc: None,
        undefined: UndefinedFlags {
            precision: p_undef,
            recall: r_undef,
            f1: f_undef,
        },
    })
}

/// Confusion, metrics and (when both classes are present) AUC in one go.
pub fn evaluate_scores(
    y_true: &[Label],
    scores: &[f64],
    threshold: f64,
) -> Result<(ConfusionMatrix, MetricsReport), EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), scores.len()));
    }
    let pred: Vec<Label> = scores.iter().map(|&s| Label::from(s > threshold)).collect();
    let cm = confusion(y_true, &pred)?;
    let mut m = metrics(&cm)?;
    m.auc = auc(y_true, scores).ok();
    Ok((cm, m))
}

/// Mann-Whitney AUC from average ranks; tied scores count one half.
pub fn auc(y_true: &[Label], scores: &[f64]) -> Result<f64, EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), scores.len()));
    }
    if let Some(index) = y_true.iter().position(|&y| y > 1) {
        return Err(EvalError::NonBinary { index });
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, with ranks doubled to stay integral under ties.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled: (i + 1) + (j + 1)
        let twice_avg = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as u64;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Percent with one decimal, rounding halves up.
pub fn percent_1dp(x: f64) -> f64 {
    ((x * 1000.0 + 0.5 + 1e-9).floor()) / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
}

/// Test-set result of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub task: String,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    /// Free-form run metadata (config, seeds, sizes). Must not contain
    /// anything time-dependent if byte-identical reruns are wanted.
    pub run: serde_json::Value,
    pub leaderboard: Option<serde_json::Value>,
    pub results: Vec<MethodResult>,
    pub curves: Option<Vec<CurvePoint>>,
}

pub fn metrics_csv(results: &[MethodResult]) -> String {
    let mut s = String::from("method,acc,prec,rec,f1\n");
    for r in results {
        let m = &r.metrics;
        s.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{:.1}\n",
            r.method,
            percent_1dp(m.accuracy),
            percent_1dp(m.precision),
            percent_1dp(m.recall),
            percent_1dp(m.f1)
        ));
    }
    s
}

pub fn curves_csv(curves: &[CurvePoint]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_loss,train_auc,val_auc\n");
    for c in curves {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.epoch,
            c.train_loss,
            c.val_loss,
            opt(c.train_auc),
            opt(c.val_auc)
        ));
    }
    s
}

pub fn confusion_svg(title: &str, cm: &ConfusionMatrix, class_names: [&str; 2]) -> String {
    let mut c = Canvas::new(340.0, 320.0);
    let cells = [[cm.tn, cm.fp], [cm.fn_, cm.tp]];
    svg::heatmap(&mut c, Frame { x: 90.0, y: 40.0, w: 220.0, h: 220.0 }, title, class_names, cells);
    c.finish()
}

pub fn curves_svg(curves: &[CurvePoint]) -> String {
    let mut c = Canvas::new(760.0, 320.0);
    let col = |f: fn(&CurvePoint) -> f64| curves.iter().map(f).collect::<Vec<_>>();
    svg::lines(
        &mut c,
        Frame { x: 60.0, y: 40.0, w: 300.0, h: 230.0 },
        "loss",
        &[("train", col(|p| p.train_loss)), ("validation", col(|p| p.val_loss))],
    );
    svg::lines(
        &mut c,
        Frame { x: 440.0, y: 40.0, w: 300.0, h: 230.0 },
        "AUC",
        &[
            ("train", col(|p| p.train_auc.unwrap_or(f64::NAN))),
            ("validation", col(|p| p.val_auc.unwrap_or(f64::NAN))),
        ],
    );
    c.finish()
}

pub fn write_file(path: &Path, content: &str) -> Result<(), EvalError> {
    fs::write(path, content).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json`, `metrics.csv`, one `confusion_<task>_<method>.svg`
/// per result (`confusion_<task>.svg` when there is a single result) and
/// `curves.svg` when curves are present. Returns the written paths.
pub fn emit_report(dir: &Path, bundle: &ReportBundle) -> Result<Vec<PathBuf>, EvalError> {
    if bundle.results.is_empty() {
        return Err(EvalError::NoPayload);
    }
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: String, content: String| -> Result<(), EvalError> {
        let p = dir.join(name);
        write_file(&p, &content)?;
        written.push(p);
        Ok(())
    };
    let json = serde_json::to_string_pretty(bundle).expect("report serializes");
    put("report.json".into(), json + "\n")?;
    put("metrics.csv".into(), metrics_csv(&bundle.results))?;
    let single = bundle.results.len() == 1;
    for r in &bundle.results {
        let name = if single {
            format!("confusion_{}.svg", r.task)
        } else {
            format!("confusion_{}_{}.svg", r.task, r.method)
        };
        let title = format!("{} ({})", r.method, r.task);
        put(name, confusion_svg(&title, &r.confusion, ["0", "1"]))?;
    }
    if let Some(curves) = bundle.curves.as_ref().filter(|c| !c.is_empty()) {
        put("curves.svg".into(), curves_svg(curves))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive pair counting.
    fn auc_pairs(y: &[Label], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn golden_cm() -> ConfusionMatrix {
        ConfusionMatrix { tn: 1282, tp: 919, fp: 233, fn_: 192 }
    }

    #[test]
    fn confusion_basics() {
        let cm = confusion(&[1, 0], &[1, 0]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, tn: 1, fp: 0, fn_: 0 });
        let y = [1, 1, 0, 0, 1];
        let p = [1, 0, 0, 1, 1];
        let flipped: Vec<Label> = p.iter().map(|v| 1 - v).collect();
        let (a, b) = (confusion(&y, &p).unwrap(), confusion(&y, &flipped).unwrap());
        assert_eq!((a.tp, a.tn, a.fp, a.fn_), (b.fn_, b.fp, b.tn, b.tp));
        assert!(matches!(confusion(&[1], &[1, 0]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(confusion(&[1, 2], &[1, 0]), Err(EvalError::NonBinary { index: 1 })));
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn reported_counts_reproduce_reported_row() {
        let cm = golden_cm();
        assert_eq!(cm.total(), 2626);
        let m = metrics(&cm).unwrap();
        assert_eq!(
            [percent_1dp(m.accuracy), percent_1dp(m.precision), percent_1dp(m.recall), percent_1dp(m.f1)],
            [83.8, 79.8, 82.7, 81.2]
        );
        assert!((m.accuracy - 0.838).abs() < 5e-4);
        assert!((m.precision - 0.798).abs() < 5e-4);
        assert!((m.recall - 0.827).abs() < 5e-4);
        assert!((m.f1 - 0.812).abs() < 5e-4);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let perfect = metrics(&ConfusionMatrix { tp: 3, tn: 2, fp: 0, fn_: 0 }).unwrap();
        assert_eq!([perfect.accuracy, perfect.precision, perfect.recall, perfect.f1], [1.0; 4]);
        assert!(!perfect.undefined.any());
        let m = metrics(&ConfusionMatrix { tp: 0, tn: 4, fp: 0, fn_: 2 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.undefined.precision && m.undefined.f1 && !m.undefined.recall);
        assert!(matches!(metrics(&ConfusionMatrix::default()), Err(EvalError::Empty)));
    }

    #[test]
    fn auc_examples() {
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&y, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&y, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(auc(&y, &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap(), 0.75);
        assert!(matches!(auc(&[1, 1], &[0.1, 0.2]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(percent_1dp(0.8125), 81.3);
        assert_eq!(percent_1dp(0.81249), 81.2);
        assert_eq!(percent_1dp(1.0), 100.0);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let cm = golden_cm();
        let results: Vec<MethodResult> = ["svm", "nb", "rf", "cnn_bilstm"]
            .iter()
            .map(|m| MethodResult { method: m.to_string(), task: "hs".into(), confusion: cm, metrics: metrics(&cm).unwrap() })
            .collect();
        let bundle = ReportBundle { run: serde_json::json!({"seed": 1}), leaderboard: None, results, curves: None };
        let files = emit_report(dir.path(), &bundle).unwrap();
        assert!(!dir.path().join("curves.svg").exists());
        assert_eq!(files.len(), 2 + 4);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,acc,prec,rec,f1");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "cnn_bilstm,83.8,79.8,82.7,81.2");
        let first = fs::read(dir.path().join("report.json")).unwrap();
        emit_report(dir.path(), &bundle).unwrap();
        assert_eq!(first, fs::read(dir.path().join("report.json")).unwrap());

        let empty = ReportBundle { results: vec![], ..bundle.clone() };
        assert!(matches!(emit_report(dir.path(), &empty), Err(EvalError::NoPayload)));

        let curves = vec![CurvePoint { epoch: 1, train_loss: 0.6, val_loss: 0.65, train_auc: Some(0.7), val_auc: None }];
        let one = ReportBundle { results: bundle.results[..1].to_vec(), curves: Some(curves.clone()), ..bundle };
        emit_report(dir.path(), &one).unwrap();
        assert!(dir.path().join("curves.svg").exists());
        assert!(dir.path().join("confusion_hs.svg").exists());
        assert_eq!(curves_csv(&curves), "epoch,train_loss,val_loss,train_auc,val_auc\n1,0.6,0.65,0.7,\n");
    }

    #[test]
    fn unwritable_directory_errors() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let cm = golden_cm();
        let bundle = ReportBundle {
            run: serde_json::Value::Null,
            leaderboard: None,
            results: vec![MethodResult { method: "x".into(), task: "hs".into(), confusion: cm, metrics: metrics(&cm).unwrap() }],
            curves: None,
        };
        assert!(matches!(emit_report(&f.path().join("sub"), &bundle), Err(EvalError::Io { .. })));
    }

    fn arb_cm() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..500, 0u64..500, 0u64..500, 0u64..500)
            .prop_filter("non-empty", |c| c.0 + c.1 + c.2 + c.3 > 0)
            .prop_map(|(tp, tn, fp, fn_)| ConfusionMatrix { tp, tn, fp, fn_ })
    }

    proptest! {
        #[test]
        fn metric_identities(cm in arb_cm()) {
            let m = metrics(&cm).unwrap();
            let acc = (cm.tp + cm.tn) as f64 / cm.total() as f64;
            prop_assert!((m.accuracy - acc).abs() <= 1e-12);
            if m.precision + m.recall > 0.0 {
                let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - f1).abs() <= 1e-12);
            }
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn auc_matches_pair_counting(
            pairs in prop::collection::vec((0u8..2, 0i32..5), 2..=12),
        ) {
            let y: Vec<Label> = pairs.iter().map(|p| p.0).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let s: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            prop_assert_eq!(auc(&y, &s).unwrap(), auc_pairs(&y, &s));
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            pairs in prop::collection::vec((0u8..2, -3.0f64..3.0), 2..40),
        ) {
            let y: Vec<Label> = pairs.iter().map(|p| p.0).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let s: Vec<f64> = pairs.iter().map(|p| (p.1 * 4.0).round() / 4.0).collect();
            let t: Vec<f64> = s.iter().map(|v| (2.0 * v).exp() + 7.0).collect();
            prop_assert_eq!(auc(&y, &s).unwrap(), auc(&y, &t).unwrap());
        }
    }
}
