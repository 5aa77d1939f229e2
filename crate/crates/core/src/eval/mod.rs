//! Confusion matrices, per-class metrics and report files.
//!
//! Report directory layout (all tab-separated, `\n` line endings):
//!
//! - `summary.tsv`: one row per method with accuracy and macro metrics
//! - `confusion_<method>.tsv`: rows are true labels, columns predictions
//! - `metrics_<method>.tsv`: per-class precision, recall, F1, FPR
//! - `curves_<run>.tsv`: per-epoch training curves

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TrainHistory;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `K×K` counts, rows = true label, columns = predicted label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        Self { class_names, counts: vec![vec![0; k]; k] }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = class_names.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Argument(format!("counts must be {k}×{k}")));
        }
        Ok(Self { class_names, counts })
    }

    /// Tally `(true, predicted)` label pairs.
    pub fn from_labels(truth: &[usize], predicted: &[usize], class_names: Vec<String>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(EvalError::Argument(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(class_names);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.n_classes();
        if truth >= k || predicted >= k {
            return Err(EvalError::Argument(format!("label pair ({truth}, {predicted}) out of range for {k} classes")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Which metrics had an empty denominator and were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub false_positive_rate: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.false_positive_rate
    }

    fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.precision, "precision"),
            (self.recall, "recall"),
            (self.f1, "f1"),
            (self.false_positive_rate, "fpr"),
        ]
        .iter()
        .filter(|(b, _)| *b)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "-".into()
        } else {
            names.join(",")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `FP / (FP + TN)`.
    pub false_positive_rate: f64,
    pub undefined: Undefined,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, i: usize) -> ClassMetrics {
    let tp = cm.get(i, i);
    let fn_ = cm.row_sum(i) - tp;
    let fp = cm.col_sum(i) - tp;
    let tn = cm.total() - tp - fn_ - fp;
    let (precision, up) = ratio(tp, tp + fp);
    let (recall, ur) = ratio(tp, tp + fn_);
    let (fpr, uf) = ratio(fp, fp + tn);
    let (f1, u1) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    ClassMetrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        false_positive_rate: fpr,
        undefined: Undefined { precision: up, recall: ur, f1: u1, false_positive_rate: uf },
    }
}

/// `trace / total`.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Argument("confusion matrix is empty".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// One evaluated method, e.g. `c3d` or `pca_knn`.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub name: String,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone)]
pub struct RunCurves {
    pub name: String,
    pub history: TrainHistory,
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(EvalError::Argument(format!("report name {name:?} must be non-empty [A-Za-z0-9_-]")))
    }
}

/// Render report files as `(file name, contents)` in a fixed order.
pub fn render_report(methods: &[MethodResult], curves: &[RunCurves]) -> Result<Vec<(String, String)>> {
    if methods.is_empty() {
        return Err(EvalError::Argument("report needs at least one method".into()));
    }
    for n in methods.iter().map(|m| &m.name).chain(curves.iter().map(|c| &c.name)) {
        check_name(n)?;
    }
    let mut files = Vec::new();

    let mut summary = String::from("method\taccuracy_pct\tcorrect\ttotal\tmacro_precision\tmacro_recall\tmacro_f1\n");
    for m in methods {
        let cm = &m.confusion;
        let acc = overall_accuracy(cm)?;
        let k = cm.n_classes() as f64;
        let per: Vec<ClassMetrics> = (0..cm.n_classes()).map(|i| class_metrics(cm, i)).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per.iter().map(f).sum::<f64>() / k;
        writeln!(
            summary,
            "{}\t{:.2}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            m.name,
            100.0 * acc,
            cm.trace(),
            cm.total(),
            mean(|c| c.precision),
            mean(|c| c.recall),
            mean(|c| c.f1)
        )
        .expect("write to string");
    }
    files.push(("summary.tsv".to_string(), summary));

    for m in methods {
        let cm = &m.confusion;
        let mut s = String::from("true\\pred");
        for n in cm.class_names() {
            s.push('\t');
            s.push_str(n);
        }
        s.push('\n');
        for (name, row) in cm.class_names().iter().zip(cm.counts()) {
            s.push_str(name);
            for c in row {
                write!(s, "\t{c}").expect("write to string");
            }
            s.push('\n');
        }
        files.push((format!("confusion_{}.tsv", m.name), s));

        let mut s = String::from("class\tprecision\trecall\tf1\tfalse_positive_rate\tsupport\tundefined\n");
        for (i, name) in cm.class_names().iter().enumerate() {
            let c = class_metrics(cm, i);
            writeln!(
                s,
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                c.precision,
                c.recall,
                c.f1,
                c.false_positive_rate,
                cm.row_sum(i),
                c.undefined.label()
            )
            .expect("write to string");
        }
        files.push((format!("metrics_{}.tsv", m.name), s));
    }

    for c in curves {
        let h = &c.history;
        let mut s = String::from("epoch\ttrain_loss\ttrain_accuracy\ttest_accuracy\tlearning_rate\n");
        for e in 0..h.train_loss.len() {
            writeln!(
                s,
                "{e}\t{:.6}\t{:.6}\t{:.6}\t{:e}",
                h.train_loss[e],
                h.train_accuracy[e],
                h.test_accuracy.get(e).copied().unwrap_or(0.0),
                h.learning_rate.get(e).copied().unwrap_or(0.0)
            )
            .expect("write to string");
        }
        files.push((format!("curves_{}.tsv", c.name), s));
    }
    Ok(files)
}

/// Render and write every report file into `dir`.
pub fn write_report(dir: &Path, methods: &[MethodResult], curves: &[RunCurves]) -> Result<Vec<String>> {
    let files = render_report(methods, curves)?;
    fs::create_dir_all(dir)?;
    for (name, body) in &files {
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, dir.join(name))?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}
