//! Subject-held-out SVC probes over learned representations.
//!
//! A probe measures how linearly (well, RBF-separably) a label is encoded in
//! the representation space. Splits are always at the subject level so that
//! windows from one recording can never leak between train and test.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use smartcore::linalg::basic::matrix::DenseMatrix;
use smartcore::svm::svc::{SVCParameters, SVC};
use smartcore::svm::Kernels;

use crate::error::{Error, Result};

/// Regularization strength for every probe SVC.
const SVC_C: f64 = 1.0;
/// Fixed seed for the SVC optimizer shuffle, so fits are reproducible.
const SVC_SEED: u64 = 0;
/// Columns with standard deviation below this are left unscaled.
const STD_FLOOR: f64 = 1e-12;

/// A fitted probe: standardization stats plus the (standardized) training set.
///
/// The underlying SVC borrows its training data, so instead of holding fitted
/// classifiers this stores the standardized matrix and refits on demand in
/// `predict`. Fits are cheap at probe scale and fully deterministic.
pub struct Probe {
    mean: Vec<f64>,
    std: Vec<f64>,
    gamma: f64,
    train_z: Vec<Vec<f64>>,
    train_y: Vec<i32>,
    classes: Vec<i32>,
    train_subjects: BTreeSet<String>,
}

/// Per-fold summary of a cross-validation run.
#[derive(Debug, Clone, Serialize)]
pub struct FoldOutcome {
    /// Subjects held out in this fold, comma separated.
    pub held_out: String,
    /// Number of test windows in the fold.
    pub n_test: usize,
    /// Fraction of test windows classified correctly.
    pub accuracy: f64,
}

/// Aggregate result of a cross-validated probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    /// Name of the label column that was probed.
    pub label: String,
    /// Sorted class ids seen anywhere in the dataset.
    pub classes: Vec<i32>,
    /// Pooled confusion matrix, rows = true class, columns = predicted class,
    /// both in `classes` order.
    pub confusion: Vec<Vec<usize>>,
    /// Pooled accuracy over every test prediction from every fold.
    pub accuracy: f64,
    /// True positive rate for the positive class. Binary problems only, and
    /// absent when the test set contains no positives.
    pub sensitivity: Option<f64>,
    /// True negative rate. Binary problems only, absent without negatives.
    pub specificity: Option<f64>,
    /// Per-fold breakdown.
    pub folds: Vec<FoldOutcome>,
    /// Unweighted mean of fold accuracies.
    pub accuracy_mean: f64,
    /// Sample standard deviation of fold accuracies, absent with one fold.
    pub accuracy_std: Option<f64>,
}

impl Probe {
    /// Standardizes the training set, derives the RBF bandwidth, and records
    /// which subjects contributed so later scoring can enforce disjointness.
    pub fn fit(features: &[Vec<f64>], labels: &[i32], subjects: &[String]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::data("probe training set is empty"));
        }
        if features.len() != labels.len() || features.len() != subjects.len() {
            return Err(Error::data(format!(
                "probe inputs disagree on length: {} features, {} labels, {} subjects",
                features.len(),
                labels.len(),
                subjects.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::data("probe features have zero dimensions"));
        }
        if let Some(bad) = features.iter().find(|row| row.len() != dim) {
            return Err(Error::data(format!(
                "ragged probe features: expected {dim} columns, found {}",
                bad.len()
            )));
        }

        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for row in features {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(row) {
                let c = v - m;
                *s += c * c / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
            if *s < STD_FLOOR {
                *s = 1.0;
            }
        }

        let train_z: Vec<Vec<f64>> = features
            .iter()
            .map(|row| standardize_row(row, &mean, &std))
            .collect();

        // Bandwidth follows the common "scale" heuristic: one over feature
        // count times the overall variance of the standardized inputs.
        let total = (train_z.len() * dim) as f64;
        let grand_mean: f64 = train_z.iter().flatten().sum::<f64>() / total;
        let pooled_var: f64 = train_z
            .iter()
            .flatten()
            .map(|v| {
                let c = v - grand_mean;
                c * c
            })
            .sum::<f64>()
            / total;
        let gamma = if pooled_var > 0.0 {
            1.0 / (dim as f64 * pooled_var)
        } else {
            1.0 / dim as f64
        };

        let mut classes: Vec<i32> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();

        Ok(Probe {
            mean,
            std,
            gamma,
            train_z,
            train_y: labels.to_vec(),
            classes,
            train_subjects: subjects.iter().cloned().collect(),
        })
    }

    /// Class ids the probe can emit, ascending.
    pub fn classes(&self) -> &[i32] {
        &self.classes
    }

    /// RBF bandwidth derived from the training data.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Predicts a class id for each feature row.
    ///
    /// Multiclass problems use one-vs-one voting over binary SVCs. Vote ties
    /// resolve to the lower class id so results never depend on hash order.
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<i32>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.mean.len();
        if let Some(bad) = features.iter().find(|row| row.len() != dim) {
            return Err(Error::data(format!(
                "probe expects {dim} columns, found {}",
                bad.len()
            )));
        }
        if self.classes.len() == 1 {
            return Ok(vec![self.classes[0]; features.len()]);
        }

        let test_z: Vec<Vec<f64>> = features
            .iter()
            .map(|row| standardize_row(row, &self.mean, &self.std))
            .collect();
        let test_m = DenseMatrix::from_2d_vec(&test_z)
            .map_err(|e| Error::data(format!("building test matrix: {e}")))?;

        let mut votes = vec![vec![0usize; self.classes.len()]; features.len()];
        for (ia, &ca) in self.classes.iter().enumerate() {
            for (ib, &cb) in self.classes.iter().enumerate().skip(ia + 1) {
                let mut sub_x: Vec<Vec<f64>> = Vec::new();
                let mut sub_y: Vec<i32> = Vec::new();
                for (row, &y) in self.train_z.iter().zip(&self.train_y) {
                    if y == ca || y == cb {
                        sub_x.push(row.clone());
                        sub_y.push(y);
                    }
                }
                let sub_m = DenseMatrix::from_2d_vec(&sub_x)
                    .map_err(|e| Error::data(format!("building train matrix: {e}")))?;
                let params = SVCParameters::default()
                    .with_c(SVC_C)
                    .with_seed(Some(SVC_SEED))
                    .with_kernel(Kernels::rbf().with_gamma(self.gamma));
                let svc = SVC::fit(&sub_m, &sub_y, &params)
                    .map_err(|e| Error::data(format!("SVC fit failed: {e}")))?;
                let pred = svc
                    .predict(&test_m)
                    .map_err(|e| Error::data(format!("SVC predict failed: {e}")))?;
                for (slot, p) in votes.iter_mut().zip(&pred) {
                    // Predictions come back as the class id cast to f64.
                    let won = if (p - ca as f64).abs() <= (p - cb as f64).abs() {
                        ia
                    } else {
                        ib
                    };
                    slot[won] += 1;
                }
            }
        }

        Ok(votes
            .iter()
            .map(|v| {
                let mut best = 0usize;
                for (i, &count) in v.iter().enumerate() {
                    if count > v[best] {
                        best = i;
                    }
                }
                self.classes[best]
            })
            .collect())
    }

    /// Predicts on a held-out set after checking it shares no subjects with
    /// the training data. Returns the predictions for pooling by the caller.
    pub fn score(
        &self,
        features: &[Vec<f64>],
        subjects: &[String],
    ) -> Result<Vec<i32>> {
        if features.len() != subjects.len() {
            return Err(Error::data(format!(
                "probe score inputs disagree: {} features, {} subjects",
                features.len(),
                subjects.len()
            )));
        }
        for s in subjects {
            if self.train_subjects.contains(s) {
                return Err(Error::data(format!(
                    "subject {s} appears in both train and test splits"
                )));
            }
        }
        self.predict(features)
    }
}

fn standardize_row(row: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(mean)
        .zip(std)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

/// Groups row indices by subject id, sorted by subject.
fn by_subject(subjects: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        map.entry(s.as_str()).or_default().push(i);
    }
    map
}

/// Most frequent label among the given rows, ties to the lower label.
fn majority_label(labels: &[i32], rows: &[usize]) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &r in rows {
        *counts.entry(labels[r]).or_default() += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&l, _)| l)
        .expect("majority_label called with empty rows")
}

/// Runs one train/test split and updates the pooled confusion matrix.
fn run_fold(
    features: &[Vec<f64>],
    labels: &[i32],
    subjects: &[String],
    test_rows: &[usize],
    classes: &[i32],
    confusion: &mut [Vec<usize>],
) -> Result<FoldOutcome> {
    let test_set: BTreeSet<usize> = test_rows.iter().copied().collect();
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut train_s = Vec::new();
    for i in 0..features.len() {
        if !test_set.contains(&i) {
            train_x.push(features[i].clone());
            train_y.push(labels[i]);
            train_s.push(subjects[i].clone());
        }
    }
    let probe = Probe::fit(&train_x, &train_y, &train_s)?;

    let test_x: Vec<Vec<f64>> = test_rows.iter().map(|&i| features[i].clone()).collect();
    let test_s: Vec<String> = test_rows.iter().map(|&i| subjects[i].clone()).collect();
    let preds = probe.score(&test_x, &test_s)?;

    let class_idx: BTreeMap<i32, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut correct = 0usize;
    for (&row, &pred) in test_rows.iter().zip(&preds) {
        let truth = labels[row];
        if pred == truth {
            correct += 1;
        }
        let (ti, pi) = (class_idx[&truth], class_idx[&pred]);
        confusion[ti][pi] += 1;
    }

    let mut held: Vec<&str> = test_rows.iter().map(|&i| subjects[i].as_str()).collect();
    held.sort_unstable();
    held.dedup();
    Ok(FoldOutcome {
        held_out: held.join(","),
        n_test: test_rows.len(),
        accuracy: correct as f64 / test_rows.len() as f64,
    })
}

/// Accuracy plus, for binary problems, sensitivity and specificity from a
/// pooled confusion matrix indexed `[actual][predicted]` over `classes`.
///
/// The positive class is the one labelled 1 when present, otherwise the one
/// with the larger id. Rates whose denominator is zero come back as `None`,
/// as do both rates for non-binary problems.
pub fn confusion_metrics(
    confusion: &[Vec<usize>],
    classes: &[i32],
) -> (f64, Option<f64>, Option<f64>) {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..classes.len()).map(|i| confusion[i][i]).sum();
    let accuracy = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };

    let (mut sensitivity, mut specificity) = (None, None);
    if classes.len() == 2 {
        let pos = if classes.contains(&1) {
            classes.iter().position(|&c| c == 1).unwrap()
        } else {
            1
        };
        let neg = 1 - pos;
        let tp = confusion[pos][pos] as f64;
        let fn_ = confusion[pos][neg] as f64;
        let tn = confusion[neg][neg] as f64;
        let fp = confusion[neg][pos] as f64;
        if tp + fn_ > 0.0 {
            sensitivity = Some(tp / (tp + fn_));
        }
        if tn + fp > 0.0 {
            specificity = Some(tn / (tn + fp));
        }
    }
    (accuracy, sensitivity, specificity)
}

/// Builds the aggregate result from pooled confusion counts and fold stats.
fn summarize(
    label: &str,
    classes: Vec<i32>,
    confusion: Vec<Vec<usize>>,
    folds: Vec<FoldOutcome>,
) -> ProbeResult {
    let (accuracy, sensitivity, specificity) = confusion_metrics(&confusion, &classes);

    let k = folds.len() as f64;
    let accuracy_mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / k;
    let accuracy_std = if folds.len() >= 2 {
        let ss: f64 = folds
            .iter()
            .map(|f| {
                let c = f.accuracy - accuracy_mean;
                c * c
            })
            .sum();
        Some((ss / (k - 1.0)).sqrt())
    } else {
        None
    };

    ProbeResult {
        label: label.to_string(),
        classes,
        confusion,
        accuracy,
        sensitivity,
        specificity,
        folds,
        accuracy_mean,
        accuracy_std,
    }
}

fn sorted_classes(labels: &[i32]) -> Vec<i32> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Leave-one-subject-out cross-validation.
pub fn loo_cv(
    label: &str,
    features: &[Vec<f64>],
    labels: &[i32],
    subjects: &[String],
) -> Result<ProbeResult> {
    if features.len() != labels.len() || features.len() != subjects.len() {
        return Err(Error::data("cross-validation inputs disagree on length"));
    }
    let groups = by_subject(subjects);
    if groups.len() < 2 {
        return Err(Error::data(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            groups.len()
        )));
    }
    let classes = sorted_classes(labels);
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut folds = Vec::new();
    for rows in groups.values() {
        folds.push(run_fold(
            features,
            labels,
            subjects,
            rows,
            &classes,
            &mut confusion,
        )?);
    }
    Ok(summarize(label, classes, confusion, folds))
}

/// Subject-level k-fold cross-validation.
///
/// Subjects are sorted by (majority label, id) and dealt round-robin into
/// folds, which balances classes across folds without any randomness.
pub fn kfold_cv(
    label: &str,
    features: &[Vec<f64>],
    labels: &[i32],
    subjects: &[String],
    k: usize,
) -> Result<ProbeResult> {
    if features.len() != labels.len() || features.len() != subjects.len() {
        return Err(Error::data("cross-validation inputs disagree on length"));
    }
    if k < 2 {
        return Err(Error::data(format!("k-fold needs k >= 2, got {k}")));
    }
    let groups = by_subject(subjects);
    if groups.len() < k {
        return Err(Error::data(format!(
            "k-fold with k={k} needs at least {k} subjects, found {}",
            groups.len()
        )));
    }

    let mut order: Vec<(&str, &Vec<usize>)> =
        groups.iter().map(|(s, rows)| (*s, rows)).collect();
    order.sort_by_key(|(s, rows)| (majority_label(labels, rows), s.to_string()));

    let mut fold_rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, (_, rows)) in order.iter().enumerate() {
        fold_rows[i % k].extend(rows.iter().copied());
    }

    let classes = sorted_classes(labels);
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut folds = Vec::new();
    for rows in &fold_rows {
        folds.push(run_fold(
            features,
            labels,
            subjects,
            rows,
            &classes,
            &mut confusion,
        )?);
    }
    Ok(summarize(label, classes, confusion, folds))
}
