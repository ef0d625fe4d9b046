//! Runs a model on a task: split table handling, per-fold execution,
//! run assembly, and scoring.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::arff::{ArffDocument, Attribute, DataTable, Row, Value};
use crate::cache::{CacheError, CachedClient};
use crate::entities::*;
use crate::extension::{self, ExtensionError, ModelSpec};
use crate::protocol::codec;

pub const PREDICTIVE_ACCURACY: &str = "predictive_accuracy";
pub const DEFAULT_BASE_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("split table integrity: {0}")]
    SplitIntegrity(String),
    #[error("unknown metric: {0}")]
    UnknownMetric(String),
    #[error("cannot score an empty prediction list")]
    EmptyPredictions,
    #[error("unsupported task: {0}")]
    Unsupported(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("repeat {repeat} fold {fold} failed: {source}")]
    Fold {
        repeat: u32,
        fold: u32,
        #[source]
        source: ExtensionError,
    },
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// One train/test split of a task, indices ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub repeat: u32,
    pub fold: u32,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn integrity(msg: String) -> RunnerError {
    RunnerError::SplitIntegrity(msg)
}

/// Splits of `task` from its split table, ordered by (repeat, fold). The
/// row universe is every row id that appears in the table.
pub fn iter_splits(task: &Task, doc: &ArffDocument) -> Result<Vec<Split>, RunnerError> {
    iter_splits_checked(task, doc, None)
}

/// Like [`iter_splits`], with the universe fixed to `0..n_rows`.
pub fn iter_splits_for(task: &Task, doc: &ArffDocument, n_rows: usize) -> Result<Vec<Split>, RunnerError> {
    iter_splits_checked(task, doc, Some(n_rows))
}

fn iter_splits_checked(task: &Task, doc: &ArffDocument, n_rows: Option<usize>) -> Result<Vec<Split>, RunnerError> {
    let col = |name: &str| {
        doc.attribute_index(name)
            .ok_or_else(|| integrity(format!("split table lacks attribute {name}")))
    };
    let (type_i, row_i, repeat_i, fold_i) = (col("type")?, col("rowid")?, col("repeat")?, col("fold")?);
    let int = |v: &Value, what: &str, line: usize| -> Result<u64, RunnerError> {
        match v.as_number() {
            Some(x) if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 * 4096.0 => Ok(x as u64),
            _ => Err(integrity(format!("row {line}: {what} is not a non-negative integer"))),
        }
    };
    // (repeat, fold) -> (train, test)
    let mut groups: BTreeMap<(u32, u32), (BTreeSet<usize>, BTreeSet<usize>)> = BTreeMap::new();
    let mut seen_rows = BTreeSet::new();
    for line in 0..doc.rows.len() {
        let cells = doc.dense_row(line);
        let row = int(&cells[row_i], "rowid", line)? as usize;
        let repeat = int(&cells[repeat_i], "repeat", line)? as u32;
        let fold = int(&cells[fold_i], "fold", line)? as u32;
        let entry = groups.entry((repeat, fold)).or_default();
        let fresh = match cells[type_i].as_text() {
            Some("TRAIN") => entry.0.insert(row),
            Some("TEST") => entry.1.insert(row),
            _ => return Err(integrity(format!("row {line}: type must be TRAIN or TEST"))),
        };
        if !fresh {
            return Err(integrity(format!("row id {row} listed twice in repeat {repeat} fold {fold}")));
        }
        seen_rows.insert(row);
    }
    let universe: BTreeSet<usize> = match n_rows {
        Some(n) => {
            if let Some(&r) = seen_rows.iter().find(|&&r| r >= n) {
                return Err(integrity(format!("row id {r} outside the dataset of {n} rows")));
            }
            (0..n).collect()
        }
        None => seen_rows,
    };
    let ep = &task.estimation_procedure;
    let folds = ep.folds();
    let expected: BTreeSet<(u32, u32)> = (0..ep.repeats).flat_map(|r| (0..folds).map(move |f| (r, f))).collect();
    let present: BTreeSet<(u32, u32)> = groups.keys().copied().collect();
    if present != expected {
        return Err(integrity(format!(
            "split table has {} (repeat, fold) groups, the procedure needs {} repeats x {folds} folds",
            present.len(),
            ep.repeats
        )));
    }
    for (&(repeat, fold), (train, test)) in &groups {
        if let Some(r) = train.intersection(test).next() {
            return Err(integrity(format!("row id {r} is both train and test in repeat {repeat} fold {fold}")));
        }
        if test.is_empty() {
            return Err(integrity(format!("repeat {repeat} fold {fold} has no test rows")));
        }
        if train.len() + test.len() != universe.len() {
            return Err(integrity(format!(
                "repeat {repeat} fold {fold} covers {} of {} row ids",
                train.len() + test.len(),
                universe.len()
            )));
        }
    }
    if matches!(ep.resampling, Resampling::CrossValidation { .. }) {
        for repeat in 0..ep.repeats {
            let mut covered = BTreeSet::new();
            for fold in 0..folds {
                for &r in &groups[&(repeat, fold)].1 {
                    if !covered.insert(r) {
                        return Err(integrity(format!("row id {r} is in more than one test fold of repeat {repeat}")));
                    }
                }
            }
            if covered != universe {
                let missing = universe.difference(&covered).next().copied().unwrap_or_default();
                return Err(integrity(format!("row id {missing} is in no test fold of repeat {repeat}")));
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((repeat, fold), (train, test))| Split {
            repeat,
            fold,
            train: train.into_iter().collect(),
            test: test.into_iter().collect(),
        })
        .collect())
}

/// Split table attributes shared with the server.
pub fn split_attributes() -> Vec<Attribute> {
    vec![
        Attribute::nominal("type", ["TRAIN", "TEST"]),
        Attribute::numeric("rowid"),
        Attribute::numeric("repeat"),
        Attribute::numeric("fold"),
    ]
}

/// Generates a split table for `n` rows. Each repeat shuffles the rows with
/// a generator seeded by `seed + repeat`; cross-validation assigns shuffled
/// position `i` to fold `i % folds`, holdout puts the first
/// `round(n * percentage / 100)` shuffled rows (at least 1, at most n-1) in
/// the test set.
pub fn make_splits(procedure: &EstimationProcedure, n: usize, seed: u64, relation: &str) -> ArffDocument {
    let mut doc = ArffDocument::new(relation, split_attributes());
    let folds = procedure.folds() as usize;
    for repeat in 0..procedure.repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(repeat as u64)));
        let mut fold_of = vec![0usize; n];
        let mut is_test = vec![false; n];
        match procedure.resampling {
            Resampling::CrossValidation { .. } => {
                for (pos, &r) in order.iter().enumerate() {
                    fold_of[r] = pos % folds;
                }
            }
            Resampling::Holdout { percentage } => {
                let k = ((n as f64 * percentage / 100.0).round() as usize).clamp(1, n.saturating_sub(1).max(1));
                for &r in &order[..k.min(n)] {
                    is_test[r] = true;
                }
            }
        }
        for fold in 0..folds {
            for r in 0..n {
                let test = match procedure.resampling {
                    Resampling::CrossValidation { .. } => fold_of[r] == fold,
                    Resampling::Holdout { .. } => is_test[r],
                };
                doc.rows.push(Row::Dense(vec![
                    Value::text(if test { "TEST" } else { "TRAIN" }),
                    Value::Number(r as f64),
                    Value::Number(repeat as f64),
                    Value::Number(fold as f64),
                ]));
            }
        }
    }
    doc
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub base_seed: u64,
    /// Parallel fold workers; 0 uses one per CPU.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            base_seed: DEFAULT_BASE_SEED,
            workers: 0,
        }
    }
}

/// Seed handed to the extension for one fold.
pub fn fold_seed(base_seed: u64, repeat: u32, folds: u32, fold: u32) -> u64 {
    base_seed.wrapping_add(repeat as u64 * folds as u64 + fold as u64)
}

fn truth_labels(task: &Task, table: &DataTable) -> Result<Vec<Option<String>>, RunnerError> {
    let col = table
        .column(&task.target_name)
        .ok_or_else(|| RunnerError::InvalidData(format!("target {} not in the dataset", task.target_name)))?;
    if col.kind != FeatureKind::Nominal {
        return Err(RunnerError::InvalidData(format!("target {} is not nominal", task.target_name)));
    }
    Ok((0..table.row_count).map(|r| col.label(r).map(str::to_string)).collect())
}

/// Executes `model` over `splits` of an already loaded dataset.
pub fn run_on_data(
    model: &ModelSpec,
    task: &Task,
    table: &DataTable,
    splits: &[Split],
    options: &RunOptions,
) -> Result<Run, RunnerError> {
    if task.task_type != TaskType::SupervisedClassification {
        return Err(RunnerError::Unsupported(format!("{} tasks", task.task_type.as_str())));
    }
    let task_id = task.id.unwrap_or_default();
    let truth = truth_labels(task, table)?;
    let flow = extension::model_to_flow(model)?;
    let folds = task.estimation_procedure.folds();
    let labels = &task.class_labels;

    let execute = || -> Vec<Result<extension::FoldOutput, RunnerError>> {
        splits
            .par_iter()
            .map(|s| {
                let seed = fold_seed(options.base_seed, s.repeat, folds, s.fold);
                extension::fit_predict_fold(model, table, &task.target_name, labels, &s.train, &s.test, seed).map_err(
                    |source| RunnerError::Fold {
                        repeat: s.repeat,
                        fold: s.fold,
                        source,
                    },
                )
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| RunnerError::InvalidData(format!("worker pool: {e}")))?;
    let outputs = pool.install(execute);

    let mut predictions = Vec::new();
    let mut trace_rows = Vec::new();
    for (split, out) in splits.iter().zip(outputs) {
        let out = out?;
        for p in out.predictions {
            let truth = truth[p.row].clone().ok_or_else(|| {
                RunnerError::InvalidData(format!("row {} has no target value", p.row))
            })?;
            predictions.push(PredictionRow {
                repeat: split.repeat,
                fold: split.fold,
                row_id: p.row as u64,
                prediction: PredictionValue::Label(p.label),
                truth: PredictionValue::Label(truth),
                confidences: p.confidences,
            });
        }
        trace_rows.extend(out.trace.into_iter().map(|c| TraceRow {
            repeat: split.repeat,
            fold: split.fold,
            iteration: c.iteration,
            setup_string: c.setup_string,
            evaluation: c.evaluation,
            selected: c.selected,
        }));
    }
    predictions.sort_by_key(|p| (p.repeat, p.fold, p.row_id));
    let accuracy = score(&predictions, PREDICTIVE_ACCURACY)?;
    Ok(Run {
        id: None,
        task_id,
        flow_id: None,
        setup: flow.parameter_settings(),
        seed: options.base_seed,
        predictions,
        trace: if trace_rows.is_empty() { None } else { Some(Trace { rows: trace_rows }) },
        local_evaluations: BTreeMap::from([(PREDICTIVE_ACCURACY.to_string(), accuracy)]),
    })
}

/// Fetches the dataset and split table of `task` through the cache and
/// runs `model` on it.
pub fn run_model_on_task(
    client: &CachedClient,
    model: &ModelSpec,
    task: &Task,
    options: &RunOptions,
) -> Result<Run, RunnerError> {
    let task_id = task
        .id
        .ok_or_else(|| RunnerError::Unsupported("task has no id".into()))?;
    let dataset = client.get_dataset(task.dataset_id)?;
    let problems = task.validate_against(&dataset);
    if !problems.is_empty() {
        return Err(RunnerError::InvalidData(problems.join("; ")));
    }
    let table = client.fetch_dataset_payload(&dataset)?;
    let splits_doc = client.get_task_splits(task_id)?;
    let splits = iter_splits_for(task, &splits_doc, table.row_count)?;
    run_on_data(model, task, &table, &splits, options)
}

/// Publishes the model's flow (the server deduplicates) and then the run.
/// Returns the run with its flow and run ids filled in.
pub fn publish_run(client: &CachedClient, model: &ModelSpec, task: &Task, run: &Run) -> Result<Run, RunnerError> {
    let flow = extension::model_to_flow(model)?;
    let flow_id = client.publish_flow(&flow)?;
    let mut run = run.clone();
    run.flow_id = Some(flow_id);
    let run_id = client.publish_run(&run, &task.class_labels)?;
    run.id = Some(run_id);
    Ok(run)
}

/// Pooled score over all repeats and folds.
pub fn score(predictions: &[PredictionRow], function: &str) -> Result<f64, RunnerError> {
    if function != PREDICTIVE_ACCURACY {
        return Err(RunnerError::UnknownMetric(function.to_string()));
    }
    if predictions.is_empty() {
        return Err(RunnerError::EmptyPredictions);
    }
    let correct = predictions.iter().filter(|p| p.prediction == p.truth).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Prediction file of `run` for `task`.
pub fn predictions_to_arff(run: &Run, task: &Task) -> ArffDocument {
    codec::predictions_to_arff(task.id.unwrap_or(run.task_id), &task.class_labels, &run.predictions)
}

pub fn predictions_from_arff(doc: &ArffDocument) -> Result<Vec<PredictionRow>, RunnerError> {
    codec::predictions_from_arff(doc)
        .map(|(_, rows)| rows)
        .map_err(|e| RunnerError::InvalidData(e.message))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::arff::{coerce_table, parse, serialize};

    fn cv_task(repeats: u32, folds: u32) -> Task {
        Task {
            id: Some(102),
            task_type: TaskType::SupervisedClassification,
            dataset_id: 102,
            target_name: "class".into(),
            estimation_procedure: EstimationProcedure::cross_validation(repeats, folds),
            class_labels: vec!["a".into(), "b".into()],
        }
    }

    const TINY_SPLITS: &str = "@RELATION splits
@ATTRIBUTE type {TRAIN,TEST}
@ATTRIBUTE rowid NUMERIC
@ATTRIBUTE repeat NUMERIC
@ATTRIBUTE fold NUMERIC
@DATA
TRAIN,1,0,0
TEST,0,0,0
TRAIN,3,0,0
TEST,2,0,0
TEST,1,0,1
TRAIN,0,0,1
TEST,3,0,1
TRAIN,2,0,1
";

    #[test]
    fn tiny_table_enumerates_as_listed() {
        let splits = iter_splits(&cv_task(1, 2), &parse(TINY_SPLITS).unwrap()).unwrap();
        assert_eq!(
            splits,
            vec![
                Split { repeat: 0, fold: 0, train: vec![1, 3], test: vec![0, 2] },
                Split { repeat: 0, fold: 1, train: vec![0, 2], test: vec![1, 3] },
            ]
        );
    }

    #[test]
    fn violations_are_rejected() {
        let task = cv_task(1, 2);
        let dup = TINY_SPLITS.replace("TEST,1,0,1", "TEST,2,0,1").replace("TRAIN,2,0,1", "TRAIN,1,0,1");
        assert!(matches!(iter_splits(&task, &parse(&dup).unwrap()), Err(RunnerError::SplitIntegrity(_))));
        assert!(iter_splits(&cv_task(1, 3), &parse(TINY_SPLITS).unwrap()).is_err());
        assert!(iter_splits_for(&task, &parse(TINY_SPLITS).unwrap(), 5).is_err());
        let both = TINY_SPLITS.replace("TRAIN,1,0,0", "TEST,1,0,0");
        assert!(iter_splits(&task, &parse(&both).unwrap()).is_err());
    }

    #[test]
    fn two_rows_two_folds() {
        let task = cv_task(1, 2);
        let doc = make_splits(&task.estimation_procedure, 2, 9, "s");
        let splits = iter_splits_for(&task, &doc, 2).unwrap();
        assert!(splits.iter().all(|s| s.test.len() == 1 && s.train.len() == 1));
    }

    proptest! {
        #[test]
        fn generated_splits_pass_integrity(n in 2usize..60, repeats in 1u32..3, folds in 2u32..6, seed in any::<u64>(), pct in 1.0f64..99.0) {
            prop_assume!(folds as usize <= n);
            let cv = EstimationProcedure::cross_validation(repeats, folds);
            let mut task = cv_task(repeats, folds);
            let splits = iter_splits_for(&task, &make_splits(&cv, n, seed, "s"), n).unwrap();
            prop_assert_eq!(splits.len(), (repeats * folds) as usize);
            task.estimation_procedure = EstimationProcedure { resampling: Resampling::Holdout { percentage: pct }, repeats, splits_ref: String::new() };
            let splits = iter_splits_for(&task, &make_splits(&task.estimation_procedure, n, seed, "s"), n).unwrap();
            prop_assert_eq!(splits.len(), repeats as usize);
        }
    }

    fn pred(label: &str, truth: &str) -> PredictionRow {
        PredictionRow {
            repeat: 0,
            fold: 0,
            row_id: 0,
            prediction: PredictionValue::Label(label.into()),
            truth: PredictionValue::Label(truth.into()),
            confidences: vec![],
        }
    }

    #[test]
    fn scoring() {
        assert_eq!(score(&[pred("a", "a"), pred("b", "b")], PREDICTIVE_ACCURACY).unwrap(), 1.0);
        let three_of_four = [pred("a", "a"), pred("b", "b"), pred("a", "a"), pred("a", "b")];
        assert_eq!(score(&three_of_four, PREDICTIVE_ACCURACY).unwrap(), 0.75);
        assert!(matches!(score(&[], PREDICTIVE_ACCURACY), Err(RunnerError::EmptyPredictions)));
        assert!(matches!(score(&three_of_four, "area_under_roc_curve"), Err(RunnerError::UnknownMetric(_))));
    }

    fn data(n: usize) -> String {
        let mut s = String::from("@RELATION d\n@ATTRIBUTE x NUMERIC\n@ATTRIBUTE y NUMERIC\n@ATTRIBUTE class {a,b}\n@DATA\n");
        for i in 0..n {
            let x = (i * 7 % 11) as f64;
            let y = (i * 3 % 5) as f64;
            let c = if x + y > 7.0 { "b" } else { "a" };
            s.push_str(&format!("{x},{y},{c}\n"));
        }
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn schedule_independence_and_completeness(
            n in 12usize..40, seed in any::<u64>(), base in any::<u64>(),
            model in prop_oneof![Just("majority"), Just("nn"), Just("stump,max_depth=2"), Just("pipeline:impute.mean,onehot,stump")]
        ) {
            let task = cv_task(2, 3);
            let table = coerce_table(&parse(&data(n)).unwrap());
            let splits = iter_splits_for(&task, &make_splits(&task.estimation_procedure, n, seed, "s"), n).unwrap();
            let model: ModelSpec = model.parse().unwrap();
            let seq = run_on_data(&model, &task, &table, &splits, &RunOptions { base_seed: base, workers: 1 });
            let seq = match seq {
                Err(RunnerError::Fold { source: ExtensionError::DegenerateFold(_), .. }) => return Ok(()),
                other => other.unwrap(),
            };
            let par = run_on_data(&model, &task, &table, &splits, &RunOptions { base_seed: base, workers: 4 }).unwrap();
            prop_assert_eq!(serialize(&predictions_to_arff(&seq, &task)), serialize(&predictions_to_arff(&par, &task)));
            prop_assert_eq!(&seq, &par);
            for repeat in 0..2 {
                let mut ids: Vec<u64> = seq.predictions.iter().filter(|p| p.repeat == repeat).map(|p| p.row_id).collect();
                ids.sort_unstable();
                prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
            }
            prop_assert_eq!(seq.local_evaluations[PREDICTIVE_ACCURACY], score(&seq.predictions, PREDICTIVE_ACCURACY).unwrap());
            prop_assert!(seq.is_valid());
            prop_assert_eq!(seq.seed, base);
        }
    }

    #[test]
    fn predictions_file_schema() {
        let task = cv_task(1, 2);
        let table = coerce_table(&parse(&data(4)).unwrap());
        let splits = iter_splits(&task, &parse(TINY_SPLITS).unwrap()).unwrap();
        let run = run_on_data(&"majority".parse().unwrap(), &task, &table, &splits, &RunOptions::default()).unwrap();
        let doc = predictions_to_arff(&run, &task);
        assert_eq!(doc.attributes.len(), 5 + 2);
        assert_eq!(doc.relation, "openml_task_102_predictions");
        let back = parse(&serialize(&doc)).unwrap();
        assert!(back.validate().is_empty());
        assert_eq!(predictions_from_arff(&back).unwrap(), run.predictions);
        assert_eq!(run.seed, DEFAULT_BASE_SEED);
    }

    #[test]
    fn fold_failures_name_the_fold() {
        // Fold 0 trains on rows 1 and 3, which share one class.
        let task = cv_task(1, 2);
        let text = "@RELATION d\n@ATTRIBUTE x NUMERIC\n@ATTRIBUTE class {a,b}\n@DATA\n0,a\n1,a\n2,b\n3,a\n";
        let table = coerce_table(&parse(text).unwrap());
        let splits = iter_splits(&task, &parse(TINY_SPLITS).unwrap()).unwrap();
        let err = run_on_data(&"nn".parse().unwrap(), &task, &table, &splits, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, RunnerError::Fold { repeat: 0, fold: 0, .. }), "{err}");
    }
}
