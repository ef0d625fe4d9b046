//! The reference learners and transformers.
//!
//! Data flows through a [`Frame`]: numeric columns with missing cells and
//! categorical columns as codes. Transformers are fitted on training rows
//! and then applied row-wise to the whole frame, so a test row's features
//! depend only on training statistics and the row itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arff::{ColumnData, DataTable};

use super::reference::{is_transformer, max_depth};
use super::{ExtensionError, ModelNode, ModelSpec};

/// Prediction for one test row.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPrediction {
    /// Row index into the table.
    pub row: usize,
    pub label: String,
    /// Aligned with the class labels.
    pub confidences: Vec<f64>,
}

/// One evaluated configuration of a hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCandidate {
    pub iteration: u32,
    pub setup_string: String,
    pub evaluation: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    /// In the order of the requested test rows.
    pub predictions: Vec<FoldPrediction>,
    pub trace: Vec<TraceCandidate>,
}

/// Parses `name=v1|v2;other=a|b` into the list of grid points, first name
/// varying slowest.
pub fn parse_grid(grid: &str) -> Result<Vec<Vec<(String, String)>>, String> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for part in grid.split(';') {
        let (name, values) = part
            .split_once('=')
            .ok_or_else(|| format!("grid axis {part:?} lacks '='"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err("grid axis with an empty name".into());
        }
        if axes.iter().any(|(n, _)| n == name) {
            return Err(format!("grid axis {name} given twice"));
        }
        let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(format!("grid axis {name} has an empty value"));
        }
        axes.push((name.to_string(), values));
    }
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (name, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((name.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Stratified two-way split of the labelled training rows used by grid
/// search. Rows are grouped by class in class order, each group is
/// shuffled by one generator seeded with `seed`, and rows are dealt to the
/// two halves alternately across groups. Both halves are returned sorted.
pub fn inner_split(train: &[usize], labels: &[Option<usize>], seed: u64) -> [Vec<usize>; 2] {
    let mut rows: Vec<usize> = train.iter().copied().filter(|&r| labels[r].is_some()).collect();
    rows.sort_unstable();
    let classes = rows.iter().filter_map(|&r| labels[r]).max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halves = [Vec::new(), Vec::new()];
    let mut turn = 0;
    for c in 0..classes {
        let mut group: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == Some(c)).collect();
        group.shuffle(&mut rng);
        for r in group {
            halves[turn % 2].push(r);
            turn += 1;
        }
    }
    halves[0].sort_unstable();
    halves[1].sort_unstable();
    halves
}

#[derive(Debug, Clone)]
enum Col {
    Num(Vec<Option<f64>>),
    Cat { codes: Vec<Option<u32>>, k: usize },
}

#[derive(Debug, Clone)]
struct Frame {
    cols: Vec<Col>,
}

impl Frame {
    /// Input features of `table`: every column except the target; string
    /// and date columns are dropped.
    fn from_table(table: &DataTable, target: usize) -> Frame {
        let cols = table
            .columns
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .filter_map(|(_, c)| match &c.data {
                ColumnData::Real(v) => Some(Col::Num(v.clone())),
                ColumnData::Categorical { codes, categories } => Some(Col::Cat {
                    codes: codes.clone(),
                    k: categories.len(),
                }),
                ColumnData::Text(_) => None,
            })
            .collect();
        Frame { cols }
    }
}

fn train_mean(values: &[Option<f64>], train: &[usize]) -> f64 {
    let (sum, n) = train
        .iter()
        .filter_map(|&r| values[r])
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone)]
enum Step {
    /// Training mean per numeric column; `None` for categorical columns.
    Impute(Vec<Option<f64>>),
    OneHot,
}

impl Step {
    fn fit(kind: &str, frame: &Frame, train: &[usize]) -> Step {
        if kind == "ref.onehot" {
            return Step::OneHot;
        }
        Step::Impute(
            frame
                .cols
                .iter()
                .map(|c| match c {
                    Col::Num(v) => Some(train_mean(v, train)),
                    Col::Cat { .. } => None,
                })
                .collect(),
        )
    }

    fn apply(&self, frame: &Frame) -> Frame {
        let cols = match self {
            Step::Impute(means) => frame
                .cols
                .iter()
                .zip(means)
                .map(|(c, m)| match (c, m) {
                    (Col::Num(v), Some(m)) => Col::Num(v.iter().map(|x| Some(x.unwrap_or(*m))).collect()),
                    (c, _) => c.clone(),
                })
                .collect(),
            Step::OneHot => frame
                .cols
                .iter()
                .flat_map(|c| match c {
                    Col::Num(_) => vec![c.clone()],
                    Col::Cat { codes, k } => (0..*k as u32)
                        .map(|j| Col::Num(codes.iter().map(|x| Some(if *x == Some(j) { 1.0 } else { 0.0 })).collect()))
                        .collect(),
                })
                .collect(),
        };
        Frame { cols }
    }
}

/// Default featurization in front of every learner: mean imputation of
/// numeric columns, one-hot encoding of categorical ones (a missing code
/// encodes as all zeros).
#[derive(Debug, Clone)]
struct Featurizer {
    impute: Step,
}

impl Featurizer {
    fn fit(frame: &Frame, train: &[usize]) -> Featurizer {
        Featurizer {
            impute: Step::fit("ref.impute.mean", frame, train),
        }
    }

    fn matrix(&self, frame: &Frame) -> Vec<Vec<f64>> {
        let f = Step::OneHot.apply(&self.impute.apply(frame));
        let n = f.cols.first().map_or(0, |c| match c {
            Col::Num(v) => v.len(),
            Col::Cat { codes, .. } => codes.len(),
        });
        (0..n)
            .map(|r| {
                f.cols
                    .iter()
                    .map(|c| match c {
                        Col::Num(v) => v[r].unwrap_or(0.0),
                        Col::Cat { .. } => unreachable!("one-hot output is numeric"),
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Tree {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Tree>,
        right: Box<Tree>,
    },
}

impl Tree {
    fn predict(&self, x: &[f64]) -> &[f64] {
        match self {
            Tree::Leaf(conf) => conf,
            Tree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn frequencies(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Greedy depth-limited threshold tree. Each split maximizes training
/// accuracy; ties go to the lowest feature index, then the lowest
/// threshold; a node splits only if accuracy strictly improves.
#[allow(clippy::needless_range_loop)]
fn grow(x: &[Vec<f64>], y: &[usize], rows: &[usize], depth: usize, k: usize) -> Tree {
    let mut counts = vec![0usize; k];
    for &r in rows {
        counts[y[r]] += 1;
    }
    let base = counts.iter().copied().max().unwrap_or(0);
    if depth == 0 || base == rows.len() {
        return Tree::Leaf(frequencies(&counts));
    }
    let dims = x.first().map_or(0, Vec::len);
    let mut best: Option<(usize, usize, f64)> = None;
    let mut order = rows.to_vec();
    for f in 0..dims {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = vec![0usize; k];
        for i in 0..order.len() - 1 {
            left[y[order[i]]] += 1;
            let (a, b) = (x[order[i]][f], x[order[i + 1]][f]);
            if a == b {
                continue;
            }
            let score = left.iter().max().unwrap() + counts.iter().zip(&left).map(|(c, l)| c - l).max().unwrap();
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, a + (b - a) / 2.0));
            }
        }
    }
    match best {
        Some((score, feature, threshold)) if score > base => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| x[row][feature] <= threshold);
            Tree::Split {
                feature,
                threshold,
                left: Box::new(grow(x, y, &l, depth - 1, k)),
                right: Box::new(grow(x, y, &r, depth - 1, k)),
            }
        }
        _ => Tree::Leaf(frequencies(&counts)),
    }
}

#[derive(Debug, Clone)]
enum State {
    Majority(Vec<f64>),
    Tree(Featurizer, Tree),
    Nn {
        featurizer: Featurizer,
        /// (row, class) of each training row, ascending by row.
        points: Vec<(usize, usize)>,
        seed: u64,
    },
    Pipeline(Vec<Step>, Box<State>),
    Grid(Box<State>),
}

struct Ctx<'a> {
    y: &'a [Option<usize>],
    labels: &'a [String],
    seed: u64,
}

impl Ctx<'_> {
    fn need_two_classes(&self, kind: &str, train: &[usize]) -> Result<(), ExtensionError> {
        let first = train.iter().find_map(|&r| self.y[r]);
        match first {
            None => Err(ExtensionError::DegenerateFold(format!("{kind}: no labelled training rows"))),
            Some(c) if train.iter().all(|&r| self.y[r].is_none_or(|v| v == c)) => Err(ExtensionError::DegenerateFold(
                format!("{kind} needs two classes, training rows are all {}", self.labels[c]),
            )),
            Some(_) => Ok(()),
        }
    }
}

fn fit_node(node: &ModelNode, frame: &Frame, ctx: &Ctx<'_>, train: &[usize]) -> Result<(State, Vec<TraceCandidate>), ExtensionError> {
    let k = ctx.labels.len();
    match node.kind.as_str() {
        "ref.majority" => {
            let mut counts = vec![0usize; k];
            for &r in train {
                if let Some(c) = ctx.y[r] {
                    counts[c] += 1;
                }
            }
            if counts.iter().all(|&c| c == 0) {
                return Err(ExtensionError::DegenerateFold("ref.majority: no labelled training rows".into()));
            }
            Ok((State::Majority(frequencies(&counts)), Vec::new()))
        }
        "ref.stump" => {
            ctx.need_two_classes(&node.kind, train)?;
            let featurizer = Featurizer::fit(frame, train);
            let x = featurizer.matrix(frame);
            let y: Vec<usize> = ctx.y.iter().map(|c| c.unwrap_or(0)).collect();
            let rows: Vec<usize> = train.iter().copied().filter(|&r| ctx.y[r].is_some()).collect();
            let tree = grow(&x, &y, &rows, max_depth(node), k);
            Ok((State::Tree(featurizer, tree), Vec::new()))
        }
        "ref.nn" => {
            ctx.need_two_classes(&node.kind, train)?;
            let points = train.iter().filter_map(|&r| ctx.y[r].map(|c| (r, c))).collect();
            Ok((
                State::Nn {
                    featurizer: Featurizer::fit(frame, train),
                    points,
                    seed: ctx.seed,
                },
                Vec::new(),
            ))
        }
        "ref.pipeline" => {
            let ((_, learner), steps) = node
                .children
                .split_last()
                .ok_or_else(|| ExtensionError::InvalidStructure("empty pipeline".into()))?;
            let mut current = frame.clone();
            let mut fitted = Vec::new();
            for (_, step) in steps {
                let s = Step::fit(&step.kind, &current, train);
                current = s.apply(&current);
                fitted.push(s);
            }
            let (state, trace) = fit_node(learner, &current, ctx, train)?;
            Ok((State::Pipeline(fitted, Box::new(state)), trace))
        }
        "ref.gridsearch" => fit_grid(node, frame, ctx, train),
        kind if is_transformer(kind) => Err(ExtensionError::InvalidStructure(format!("{kind} is not a learner"))),
        kind => Err(ExtensionError::UnknownFlow(kind.to_string())),
    }
}

fn fit_grid(node: &ModelNode, frame: &Frame, ctx: &Ctx<'_>, train: &[usize]) -> Result<(State, Vec<TraceCandidate>), ExtensionError> {
    let inner = node
        .child("inner")
        .ok_or_else(|| ExtensionError::InvalidStructure("gridsearch without inner".into()))?;
    let grid = node.param("grid").unwrap_or_default();
    let points = parse_grid(grid).map_err(|reason| ExtensionError::InvalidParameter {
        path: "grid".into(),
        value: grid.to_string(),
        reason,
    })?;
    let halves = inner_split(train, ctx.y, ctx.seed);
    let total = halves[0].len() + halves[1].len();
    if halves.iter().any(Vec::is_empty) {
        return Err(ExtensionError::DegenerateFold(format!(
            "ref.gridsearch needs at least two labelled training rows, got {total}"
        )));
    }
    let mut candidates = Vec::with_capacity(points.len());
    let mut nodes = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut candidate = inner.clone();
        for (k, v) in point {
            candidate.set_path(k, v)?;
        }
        let mut correct = 0usize;
        for f in 0..2 {
            let (state, _) = fit_node(&candidate, frame, ctx, &halves[1 - f])?;
            for (r, conf) in halves[f].iter().zip(predict_rows(&state, frame, &halves[f])) {
                if Some(argmax(&conf)) == ctx.y[*r] {
                    correct += 1;
                }
            }
        }
        candidates.push(TraceCandidate {
            iteration: i as u32,
            setup_string: point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
            evaluation: correct as f64 / total as f64,
            selected: false,
        });
        nodes.push(candidate);
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.evaluation > candidates[best].evaluation {
            best = i;
        }
    }
    candidates[best].selected = true;
    let (state, _) = fit_node(&nodes[best], frame, ctx, train)?;
    Ok((State::Grid(Box::new(state)), candidates))
}

/// Index of the largest confidence; the first one wins ties.
pub(crate) fn argmax(conf: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in conf.iter().enumerate() {
        if c > conf[best] {
            best = i;
        }
    }
    best
}

fn predict_rows(state: &State, frame: &Frame, rows: &[usize]) -> Vec<Vec<f64>> {
    match state {
        State::Majority(conf) => rows.iter().map(|_| conf.clone()).collect(),
        State::Tree(featurizer, tree) => {
            let x = featurizer.matrix(frame);
            rows.iter().map(|&r| tree.predict(&x[r]).to_vec()).collect()
        }
        State::Nn { featurizer, points, seed } => {
            let x = featurizer.matrix(frame);
            let k = points.iter().map(|&(_, c)| c + 1).max().unwrap_or(0);
            rows.iter()
                .map(|&t| {
                    let mut best = f64::INFINITY;
                    let mut ties: Vec<usize> = Vec::new();
                    for &(r, c) in points {
                        let d: f64 = x[t].iter().zip(&x[r]).map(|(a, b)| (a - b) * (a - b)).sum();
                        if d < best {
                            best = d;
                            ties.clear();
                            ties.push(c);
                        } else if d == best {
                            ties.push(c);
                        }
                    }
                    // Exact ties: a draw from a generator keyed by the seed and
                    // the test row, independent of the other test rows.
                    let pick = if ties.len() == 1 {
                        ties[0]
                    } else {
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        rng.set_stream(t as u64);
                        ties[rng.gen_range(0..ties.len())]
                    };
                    let mut conf = vec![0.0; k];
                    conf[pick] = 1.0;
                    conf
                })
                .collect()
        }
        State::Pipeline(steps, learner) => {
            let mut current = frame.clone();
            for s in steps {
                current = s.apply(&current);
            }
            predict_rows(learner, &current, rows)
        }
        State::Grid(best) => predict_rows(best, frame, rows),
    }
}

/// A trained model; predictions depend only on the spec, the training
/// rows, and the seed.
#[derive(Debug, Clone)]
pub struct FittedModel {
    spec: ModelSpec,
    seed: u64,
    target: String,
    class_labels: Vec<String>,
    state: State,
    trace: Vec<TraceCandidate>,
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trace(&self) -> &[TraceCandidate] {
        &self.trace
    }

    /// Predictions for `rows`, in the given order.
    pub fn predict(&self, table: &DataTable, rows: &[usize]) -> Result<Vec<FoldPrediction>, ExtensionError> {
        let (target, _) = target_labels(table, &self.target, &self.class_labels)?;
        if let Some(&r) = rows.iter().find(|&&r| r >= table.row_count) {
            return Err(ExtensionError::InvalidInput(format!("row index {r} outside the table")));
        }
        let frame = Frame::from_table(table, target);
        let k = self.class_labels.len();
        Ok(rows
            .iter()
            .zip(predict_rows(&self.state, &frame, rows))
            .map(|(&row, mut conf)| {
                conf.resize(k, 0.0);
                FoldPrediction {
                    row,
                    label: self.class_labels[argmax(&conf)].clone(),
                    confidences: conf,
                }
            })
            .collect())
    }
}

/// Target column index and per-row class index into `class_labels`.
fn target_labels(table: &DataTable, target: &str, class_labels: &[String]) -> Result<(usize, Vec<Option<usize>>), ExtensionError> {
    let idx = table
        .column_index(target)
        .ok_or_else(|| ExtensionError::InvalidInput(format!("target column {target} not in table")))?;
    let ColumnData::Categorical { codes, categories } = &table.columns[idx].data else {
        return Err(ExtensionError::InvalidInput(format!("target column {target} is not nominal")));
    };
    let map = categories
        .iter()
        .map(|c| {
            class_labels
                .iter()
                .position(|l| l == c)
                .ok_or_else(|| ExtensionError::InvalidInput(format!("target value {c} is not a class label")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((idx, codes.iter().map(|c| c.map(|c| map[c as usize])).collect()))
}

pub(crate) fn fit_model(
    spec: ModelSpec,
    table: &DataTable,
    target: &str,
    class_labels: &[String],
    train: &[usize],
    seed: u64,
) -> Result<FittedModel, ExtensionError> {
    if class_labels.is_empty() {
        return Err(ExtensionError::InvalidInput("no class labels".into()));
    }
    let (target_idx, y) = target_labels(table, target, class_labels)?;
    if let Some(&r) = train.iter().find(|&&r| r >= table.row_count) {
        return Err(ExtensionError::InvalidInput(format!("row index {r} outside the table")));
    }
    // Training depends on the set of rows, not on the order given.
    let mut train = train.to_vec();
    train.sort_unstable();
    let frame = Frame::from_table(table, target_idx);
    let ctx = Ctx {
        y: &y,
        labels: class_labels,
        seed,
    };
    let (state, trace) = fit_node(&spec.root, &frame, &ctx, &train)?;
    Ok(FittedModel {
        spec,
        seed,
        target: target.to_string(),
        class_labels: class_labels.to_vec(),
        state,
        trace,
    })
}
