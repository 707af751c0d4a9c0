//! The commands as library calls: each reads a [`RunConfig`], writes its
//! artifacts under `config.out` and returns a summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hsbench::autobench::{compare_models, compare_models_with, kfold_stratified, Leaderboard};
use hsbench::classic::{self, EstimatorSpec, Scorer, TrainedModel};
use hsbench::corpus::{corpus_stats, length_hist_csv, load_corpus, stratified_split, CorpusStats, DataSplit, LabeledTweet};
use hsbench::eval::{self, emit_report, evaluate_scores, CurvePoint, MethodResult, ReportBundle};
use hsbench::features::{fit_vocabulary, transform_corpus};
use hsbench::neural::{
    self, build_model, encode_pad, fit_tokenizer, predict_proba, LabeledSequence, ModelConfig, PaddedSequence,
    TokenizerState, TrainingLog, OOV_ID,
};
use hsbench::numerics::{read_checkpoint, write_checkpoint, Checkpoint, LayerParams, NumericsError};
use hsbench::svg::{self, Canvas, Frame};
use hsbench::synth::{make_synthetic_corpus, to_csv, SynthConfig};
use hsbench::textprep::{preprocess, CleanDoc, NormalizationResources};
use hsbench::Label;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
const CHECKPOINT_FORMAT: &str = "hsbench-cnn-bilstm/1";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| io_err(path, e))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn note(msg: impl AsRef<str>) {
    eprintln!("hsbench: {}", msg.as_ref());
}

/// Loaded, cleaned and split corpus. Test rows are only reachable after
/// [`Prepared::begin_evaluation`]; fitting accessors refuse afterwards.
pub struct Prepared {
    pub rows: Vec<LabeledTweet>,
    pub docs: Vec<CleanDoc>,
    pub labels: Vec<Label>,
    pub resources: NormalizationResources,
    split: DataSplit,
    evaluating: bool,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let path = cfg.data_path()?;
        let rows = load_corpus(path, &cfg.column_map()).map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
        let resources = cfg.resources()?;
        let docs = rows.iter().map(|r| preprocess(&r.text, &resources)).collect();
        let labels = cfg.task.labels(&rows);
        let split = stratified_split(&labels, cfg.test_fraction, cfg.seeds().split)
            .map_err(|e| CliError::Ingestion(format!("split: {e}")))?;
        Ok(Self { rows, docs, labels, resources, split, evaluating: false })
    }

    pub fn train_indices(&self) -> Result<&[usize], CliError> {
        if self.evaluating {
            return Err(CliError::Training("training rows requested after final evaluation began".into()));
        }
        Ok(&self.split.train_indices)
    }

    pub fn begin_evaluation(&mut self) {
        self.evaluating = true;
    }

    pub fn test_indices(&self) -> Result<&[usize], CliError> {
        if !self.evaluating {
            return Err(CliError::Training("test rows requested before fitting finished".into()));
        }
        Ok(&self.split.test_indices)
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        (self.split.train_indices.len(), self.split.test_indices.len())
    }

    fn docs_at(&self, idx: &[usize]) -> Vec<CleanDoc> {
        idx.iter().map(|&i| self.docs[i].clone()).collect()
    }

    fn labels_at(&self, idx: &[usize]) -> Vec<Label> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Run metadata for `report.json`. Leaves out the output directory so reruns
/// into different directories stay byte-identical.
fn run_metadata(cfg: &RunConfig, command: &str, prepared: &Prepared) -> Value {
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = config.as_object_mut() {
        obj.remove("out");
    }
    let (train, test) = prepared.split_sizes();
    json!({
        "command": command,
        "task": cfg.task.name(),
        "seeds": cfg.seeds(),
        "rows": prepared.rows.len(),
        "train_rows": train,
        "test_rows": test,
        "config": config,
    })
}

fn method_result(method: &str, cfg: &RunConfig, y: &[Label], scores: &[f64], threshold: f64) -> Result<MethodResult, CliError> {
    let (confusion, metrics) = evaluate_scores(y, scores, threshold).map_err(|e| CliError::Training(e.to_string()))?;
    Ok(MethodResult { method: method.to_string(), task: cfg.task.name().to_string(), confusion, metrics })
}

// -------------------------------------------------------------------- eda

#[derive(Debug, Clone)]
pub struct EdaSummary {
    pub stats: CorpusStats,
    pub train_rows: usize,
    pub test_rows: usize,
}

pub fn run_eda(cfg: &RunConfig) -> Result<EdaSummary, CliError> {
    let path = cfg.data_path()?;
    let rows = load_corpus(path, &cfg.column_map()).map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
    let stats = corpus_stats(&rows).map_err(|e| CliError::Ingestion(e.to_string()))?;
    let labels = cfg.task.labels(&rows);
    let split = stratified_split(&labels, cfg.test_fraction, cfg.seeds().split)
        .map_err(|e| CliError::Ingestion(format!("split: {e}")))?;
    create_out(&cfg.out)?;
    let doc = json!({
        "total_rows": stats.total_rows,
        "hs": { "negative": stats.hs_counts.0, "positive": stats.hs_counts.1 },
        "abusive": { "negative": stats.abusive_counts.0, "positive": stats.abusive_counts.1 },
        "mean_length": stats.mean_length,
        "split": {
            "task": cfg.task.name(),
            "test_fraction": cfg.test_fraction,
            "train_rows": split.train_indices.len(),
            "test_rows": split.test_indices.len(),
        },
    });
    write(&cfg.out.join("stats.json"), pretty(&doc))?;
    write(&cfg.out.join("length_hist.csv"), length_hist_csv(&stats))?;
    write(&cfg.out.join("eda.svg"), eda_svg(&stats))?;
    Ok(EdaSummary { train_rows: split.train_indices.len(), test_rows: split.test_indices.len(), stats })
}

fn eda_svg(stats: &CorpusStats) -> String {
    let mut c = Canvas::new(900.0, 320.0);
    let n = stats.total_rows as f64;
    let share = |k: usize| k as f64 / n;
    let balance = vec![
        ("HS=0".to_string(), share(stats.hs_counts.0)),
        ("HS=1".to_string(), share(stats.hs_counts.1)),
        ("Abusive=0".to_string(), share(stats.abusive_counts.0)),
        ("Abusive=1".to_string(), share(stats.abusive_counts.1)),
    ];
    svg::bars(&mut c, Frame { x: 50.0, y: 40.0, w: 300.0, h: 230.0 }, "Label balance", &balance);
    let hist: Vec<(usize, usize)> = stats.length_histogram.iter().map(|(&k, &v)| (k, v)).collect();
    svg::histogram(&mut c, Frame { x: 430.0, y: 40.0, w: 430.0, h: 230.0 }, "Tweet length", "words", &hist);
    c.finish()
}

// ------------------------------------------------------------------ bench

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub leaderboard: Leaderboard<EstimatorSpec>,
    /// Test metrics of every configured estimator, in leaderboard order.
    pub results: Vec<MethodResult>,
    pub champion: String,
    pub seconds: f64,
}

fn unique_names(specs: &[EstimatorSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = s.family().name();
            let dup = specs.iter().filter(|o| o.family() == s.family()).count() > 1;
            if dup { format!("{name}_{}", i + 1) } else { name.to_string() }
        })
        .collect()
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchSummary, CliError> {
    let start = Instant::now();
    let mut prepared = Prepared::load(cfg)?;
    let train_idx = prepared.train_indices()?.to_vec();
    let train_docs = prepared.docs_at(&train_idx);
    let y_train = prepared.labels_at(&train_idx);
    let lexicon = prepared.resources.abusive_lexicon.clone();
    let vocab = fit_vocabulary(&train_docs, cfg.features).map_err(|e| CliError::Training(e.to_string()))?;
    let x_train = transform_corpus(&train_docs, &vocab, &lexicon);
    let specs = cfg.estimator_specs()?;
    let folds = kfold_stratified(&y_train, cfg.bench.folds, cfg.seeds().folds).map_err(|e| CliError::Training(e.to_string()))?;
    let board = if cfg.bench.refit_vocab_per_fold {
        compare_models_with(&specs, &y_train, &folds, |tr, te| {
            let pick = |rows: &[usize]| rows.iter().map(|&i| train_docs[i].clone()).collect::<Vec<_>>();
            let fold_docs = pick(tr);
            let v = fit_vocabulary(&fold_docs, cfg.features).expect("fold has training documents");
            (transform_corpus(&fold_docs, &v, &lexicon), transform_corpus(&pick(te), &v, &lexicon))
        })
    } else {
        compare_models(&specs, &x_train, &y_train, &folds)
    }
    .map_err(|e| CliError::Training(e.to_string()))?;
    note(format!("cross-validation done in {:.1}s", start.elapsed().as_secs_f64()));

    let names = unique_names(&specs);
    let ranked: Vec<(String, EstimatorSpec)> = board
        .entries
        .iter()
        .map(|e| {
            let i = specs.iter().position(|s| *s == e.spec).expect("entry comes from specs");
            (names[i].clone(), e.spec.clone())
        })
        .collect();
    let models: Vec<TrainedModel> = ranked
        .iter()
        .map(|(_, s)| classic::train(s, &x_train, &y_train).map_err(|e| CliError::Training(e.to_string())))
        .collect::<Result<_, _>>()?;

    prepared.begin_evaluation();
    let test_idx = prepared.test_indices()?.to_vec();
    let x_test = transform_corpus(&prepared.docs_at(&test_idx), &vocab, &lexicon);
    let y_test = prepared.labels_at(&test_idx);
    let results = ranked
        .iter()
        .zip(&models)
        .map(|((name, _), m)| {
            let scores = m.score(&x_test).map_err(|e| CliError::Training(e.to_string()))?;
            method_result(name, cfg, &y_test, &scores, m.default_threshold())
        })
        .collect::<Result<Vec<_>, _>>()?;

    create_out(&cfg.out)?;
    let champion = ranked[0].0.clone();
    let board_json = leaderboard_json(&board, &ranked);
    write(&cfg.out.join("leaderboard.csv"), leaderboard_csv(&board, &ranked))?;
    write(&cfg.out.join("leaderboard.json"), pretty(&board_json))?;
    write(&cfg.out.join("vocabulary.tsv"), vocab.to_text())?;
    write(&cfg.out.join("champion_model.json"), models[0].to_json())?;
    let mut run = run_metadata(cfg, "bench", &prepared);
    run["champion"] = json!(champion);
    run["vocabulary_size"] = json!(vocab.len());
    emit_report(&cfg.out, &ReportBundle { run, leaderboard: Some(board_json), results: results.clone(), curves: None })?;
    let seconds = start.elapsed().as_secs_f64();
    note(format!("bench finished in {seconds:.1}s; champion {champion}"));
    Ok(BenchSummary { leaderboard: board, results, champion, seconds })
}

fn leaderboard_csv(board: &Leaderboard<EstimatorSpec>, ranked: &[(String, EstimatorSpec)]) -> String {
    // same layout as the library's, with display names in the first column
    let csv = board.to_csv();
    let mut lines = csv.lines();
    let mut out = String::from(lines.next().unwrap_or_default());
    out.push('\n');
    for (line, (name, _)) in lines.zip(ranked) {
        let rest = line.split_once(',').map_or("", |(_, r)| r);
        out.push_str(&format!("{name},{rest}\n"));
    }
    out
}

fn leaderboard_json(board: &Leaderboard<EstimatorSpec>, ranked: &[(String, EstimatorSpec)]) -> Value {
    let entries: Vec<Value> = board
        .entries
        .iter()
        .zip(ranked)
        .enumerate()
        .map(|(rank, (e, (name, _)))| {
            json!({
                "rank": rank + 1,
                "name": name,
                "spec": e.spec,
                "fold_f1": e.per_fold.iter().map(|m| m.f1).collect::<Vec<_>>(),
                "fold_accuracy": e.per_fold.iter().map(|m| m.accuracy).collect::<Vec<_>>(),
                "mean_f1": e.mean_f1,
                "mean_accuracy": e.mean_accuracy,
            })
        })
        .collect();
    json!({ "champion": ranked[0].0, "entries": entries })
}

// ----------------------------------------------------------------- neural

/// Everything the neural commands derive from the training portion.
pub struct NeuralData {
    pub tokenizer: TokenizerState,
    pub train_set: Vec<LabeledSequence>,
    pub val_set: Vec<LabeledSequence>,
}

/// Carves the validation subset out of the training portion, fits the
/// tokenizer on the remainder and encodes both. Documents with no tokens
/// cannot be fed to the network and are dropped with a note.
pub fn neural_data(prepared: &Prepared, model: &ModelConfig, validation_seed: u64) -> Result<NeuralData, CliError> {
    let train_idx = prepared.train_indices()?;
    let y = prepared.labels_at(train_idx);
    let carve = stratified_split(&y, model.val_fraction, validation_seed)
        .map_err(|e| CliError::Training(format!("validation split: {e}")))?;
    let fit_idx: Vec<usize> = carve.train_indices.iter().map(|&i| train_idx[i]).collect();
    let val_idx: Vec<usize> = carve.test_indices.iter().map(|&i| train_idx[i]).collect();
    let tokenizer = fit_tokenizer(&prepared.docs_at(&fit_idx), model.max_vocab).map_err(|e| CliError::Training(e.to_string()))?;
    let encode = |idx: &[usize], what: &str| -> Vec<LabeledSequence> {
        let all: Vec<LabeledSequence> = idx
            .iter()
            .map(|&i| (encode_pad(&prepared.docs[i], &tokenizer, model.max_len), prepared.labels[i]))
            .collect();
        let kept: Vec<LabeledSequence> = all.into_iter().filter(|s| s.0.true_length > 0).collect();
        if kept.len() < idx.len() {
            note(format!("dropped {} {what} tweets that are empty after cleaning", idx.len() - kept.len()));
        }
        kept
    };
    let train_set = encode(&fit_idx, "training");
    let val_set = encode(&val_idx, "validation");
    Ok(NeuralData { tokenizer, train_set, val_set })
}

/// Test-time encoding. A tweet that cleans to nothing is scored as a single
/// out-of-vocabulary token so every test row receives a prediction.
pub fn encode_for_inference(doc: &CleanDoc, tokenizer: &TokenizerState, max_len: usize) -> PaddedSequence {
    let s = encode_pad(doc, tokenizer, max_len);
    if s.true_length > 0 {
        return s;
    }
    let mut ids = vec![0; max_len];
    ids[0] = OOV_ID;
    PaddedSequence { ids, true_length: 1 }
}

fn neural_test_result(
    prepared: &mut Prepared,
    cfg: &RunConfig,
    params: &LayerParams,
    tokenizer: &TokenizerState,
    model: &ModelConfig,
) -> Result<MethodResult, CliError> {
    prepared.begin_evaluation();
    let test_idx = prepared.test_indices()?.to_vec();
    let seqs: Vec<PaddedSequence> = test_idx
        .iter()
        .map(|&i| encode_for_inference(&prepared.docs[i], tokenizer, model.max_len))
        .collect();
    let probs = predict_proba(params, &seqs, model.pooling).map_err(|e| CliError::Training(e.to_string()))?;
    method_result("cnn_bilstm", cfg, &prepared.labels_at(&test_idx), &probs, 0.5)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: TrainingLog,
    pub result: MethodResult,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let start = Instant::now();
    let mut prepared = Prepared::load(cfg)?;
    let model = cfg.model_config();
    let data = neural_data(&prepared, &model, cfg.seeds().validation)?;
    let params = build_model(&model, data.tokenizer.vocab_size()).map_err(|e| CliError::Config(e.to_string()))?;
    note(format!(
        "training on {} tweets, validating on {}, vocabulary {}",
        data.train_set.len(),
        data.val_set.len(),
        data.tokenizer.vocab_size()
    ));
    let (best, log) = neural::train(params, &data.train_set, &data.val_set, &model).map_err(|e| CliError::Training(e.to_string()))?;
    for e in &log.epochs {
        note(format!(
            "epoch {:>2}: train loss {:.4}, val loss {:.4}, val auc {}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_auc.map_or("-".into(), |a| format!("{a:.4}"))
        ));
    }

    create_out(&cfg.out)?;
    let header = json!({
        "format": CHECKPOINT_FORMAT,
        "task": cfg.task.name(),
        "vocab_size": data.tokenizer.vocab_size(),
        "model": model,
        "best_epoch": log.best().epoch,
    });
    let ckpt_path = cfg.out.join(CHECKPOINT_FILE);
    let file = std::fs::File::create(&ckpt_path).map_err(|e| io_err(&ckpt_path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), &Checkpoint::from_params(header, &best))
        .map_err(|e| io_err(&ckpt_path, e))?;

    let result = neural_test_result(&mut prepared, cfg, &best, &data.tokenizer, &model)?;
    write(&cfg.out.join("curves.csv"), eval::curves_csv(&log.epochs))?;
    let mut run = run_metadata(cfg, "train", &prepared);
    run["best_epoch"] = json!(log.best().epoch);
    run["epochs_run"] = json!(log.epochs.len());
    run["stopped_early"] = json!(log.stopped_early);
    run["vocabulary_size"] = json!(data.tokenizer.vocab_size());
    run["train_sequences"] = json!(data.train_set.len());
    run["validation_sequences"] = json!(data.val_set.len());
    let curves: Vec<CurvePoint> = log.epochs.clone();
    emit_report(&cfg.out, &ReportBundle { run, leaderboard: None, results: vec![result.clone()], curves: Some(curves) })?;
    let seconds = start.elapsed().as_secs_f64();
    note(format!("train finished in {seconds:.1}s; best epoch {}", log.best().epoch));
    Ok(TrainSummary { log, result, checkpoint: ckpt_path, seconds })
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub result: MethodResult,
}

/// Scores the test split with saved parameters. The tokenizer is rebuilt from
/// the same deterministic split, so the checkpoint must match the config.
pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<EvaluateSummary, CliError> {
    let file = std::fs::File::open(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let ckpt = read_checkpoint(std::io::BufReader::new(file)).map_err(|e| io_err(checkpoint, e))?;
    if ckpt.header.get("format").and_then(Value::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(CliError::Config(format!("{} is not a {CHECKPOINT_FORMAT} checkpoint", checkpoint.display())));
    }
    let mut prepared = Prepared::load(cfg)?;
    let model = cfg.model_config();
    let data = neural_data(&prepared, &model, cfg.seeds().validation)?;
    let dims = model.dims(data.tokenizer.vocab_size());
    let params = LayerParams::from_named(dims, &ckpt.arrays).map_err(|e| match e {
        NumericsError::ShapeMismatch { .. } | NumericsError::MissingArray(_) => {
            CliError::Config(format!("checkpoint does not match the configuration: {e}"))
        }
        other => CliError::Io(other.to_string()),
    })?;
    let result = neural_test_result(&mut prepared, cfg, &params, &data.tokenizer, &model)?;
    let mut run = run_metadata(cfg, "evaluate", &prepared);
    run["checkpoint_header"] = ckpt.header.clone();
    emit_report(&cfg.out, &ReportBundle { run, leaderboard: None, results: vec![result.clone()], curves: None })?;
    Ok(EvaluateSummary { result })
}

// ------------------------------------------------------------------ synth

pub fn run_synth(rows: usize, seed: u64, label_noise: f64, output: &Path) -> Result<usize, CliError> {
    let cfg = SynthConfig { rows, seed, label_noise };
    let data = make_synthetic_corpus(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_out(dir)?;
    }
    write(output, to_csv(&data))?;
    Ok(data.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_config(dir: &Path) -> RunConfig {
        let data = dir.join("s.csv");
        run_synth(200, 1, 0.0, &data).unwrap();
        RunConfig { data: Some(data), out: dir.join("out"), ..RunConfig::default() }
    }

    #[test]
    fn test_rows_are_fenced_off_until_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Prepared::load(&synthetic_config(dir.path())).unwrap();
        assert!(p.test_indices().is_err());
        let train: Vec<usize> = p.train_indices().unwrap().to_vec();
        p.begin_evaluation();
        assert!(p.train_indices().is_err());
        let test = p.test_indices().unwrap();
        assert_eq!(train.len() + test.len(), 200);
        assert!(test.iter().all(|i| !train.contains(i)));
    }

    #[test]
    fn validation_is_carved_from_training_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_config(dir.path());
        let p = Prepared::load(&cfg).unwrap();
        let data = neural_data(&p, &cfg.model_config(), cfg.seeds().validation).unwrap();
        assert_eq!(data.train_set.len() + data.val_set.len(), 160);
        assert_eq!(data.val_set.len(), 16);
    }

    #[test]
    fn empty_documents_are_still_scored() {
        let tok = TokenizerState::from_tokens(vec!["a".into()]);
        let s = encode_for_inference(&CleanDoc::default(), &tok, 5);
        assert_eq!((s.ids.as_slice(), s.true_length), (&[OOV_ID, 0, 0, 0, 0][..], 1));
        let doc: CleanDoc = ["a"].into_iter().collect();
        assert_eq!(encode_for_inference(&doc, &tok, 3).content(), &[2]);
    }
}
