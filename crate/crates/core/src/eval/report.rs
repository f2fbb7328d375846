//! Scoring predictions against gold labels, and the report artifacts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::models::Prediction;
use crate::thread_model::{Dataset, Stance, Veracity};

use super::cv::{Metrics, RunStats};
use super::metrics::{f1_scores, rmse, ConfusionMatrix, RMSE_DEFINITION};
use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    A,
    B,
}

impl Task {
    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::A => Stance::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            Task::B => Veracity::ALL.iter().map(|v| v.as_str().to_string()).collect(),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Task::A => "Task A (stance)",
            Task::B => "Task B (veracity)",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Task::A => "a",
            Task::B => "b",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: String,
    pub n_items: usize,
    pub classes: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// Classes whose F1 was undefined and reported as 0.
    pub undefined_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_definition: Option<String>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    fn build(task: Task, split: &str, gold: &[usize], predicted: &[usize], rmse: Option<f64>) -> Result<Self, EvalError> {
        let classes = task.class_names();
        let cm = ConfusionMatrix::from_pairs(classes.len(), gold, predicted)?;
        let f1 = f1_scores(&cm);
        Ok(EvalReport {
            task,
            split: split.to_string(),
            n_items: gold.len(),
            undefined_classes: f1.undefined.iter().map(|&c| classes[c].clone()).collect(),
            classes,
            per_class_f1: f1.per_class,
            macro_f1: f1.macro_f1,
            rmse_definition: rmse.map(|_| RMSE_DEFINITION.to_string()),
            rmse,
            confusion: cm.rows(),
        })
    }

    /// Flat named scores, prefixed with the task key (`a.macro_f1`, `b.rmse`, ...).
    pub fn metrics(&self) -> Metrics {
        let k = self.task.key();
        let mut m = Metrics::new();
        m.insert(format!("{k}.macro_f1"), self.macro_f1);
        for (name, &f) in self.classes.iter().zip(&self.per_class_f1) {
            m.insert(format!("{k}.f1.{name}"), f);
        }
        if let Some(r) = self.rmse {
            m.insert(format!("{k}.rmse"), r);
        }
        m
    }
}

fn by_id(predictions: &[Prediction]) -> Result<HashMap<&str, &Prediction>, EvalError> {
    let mut map = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if map.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::Mismatch(format!("duplicate prediction for {}", p.id)));
        }
    }
    Ok(map)
}

/// Scores stance predictions on every labelled post of `dataset`.
pub fn evaluate_stance(predictions: &[Prediction], dataset: &Dataset, split: &str) -> Result<EvalReport, EvalError> {
    let map = by_id(predictions)?;
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    for post in dataset.posts() {
        let Some(label) = post.sdqc_label else { continue };
        let p = map
            .get(post.id.as_str())
            .ok_or_else(|| EvalError::Mismatch(format!("no prediction for post {}", post.id)))?;
        gold.push(label.index());
        predicted.push(p.class_index());
    }
    if gold.is_empty() {
        return Err(EvalError::Mismatch("no stance-labelled posts to evaluate".into()));
    }
    EvalReport::build(Task::A, split, &gold, &predicted, None)
}

/// Scores veracity predictions on every labelled thread, including RMSE.
pub fn evaluate_veracity(predictions: &[Prediction], dataset: &Dataset, split: &str) -> Result<EvalReport, EvalError> {
    let map = by_id(predictions)?;
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    let mut confidence = Vec::new();
    for thread in &dataset.threads {
        let Some(label) = thread.veracity_label else { continue };
        let p = map
            .get(thread.id())
            .ok_or_else(|| EvalError::Mismatch(format!("no prediction for thread {}", thread.id())))?;
        gold.push(label.index());
        predicted.push(p.class_index());
        confidence.push(p.confidence);
    }
    if gold.is_empty() {
        return Err(EvalError::Mismatch("no veracity-labelled threads to evaluate".into()));
    }
    let r = rmse(&predicted, &confidence, &gold)?;
    EvalReport::build(Task::B, split, &gold, &predicted, Some(r))
}

/// Predicts "comment" with certainty for every post.
pub fn always_comment(dataset: &Dataset) -> Vec<Prediction> {
    let names: Vec<&str> = Stance::ALL.iter().map(|s| s.as_str()).collect();
    let mut probs = vec![0.0; Stance::ALL.len()];
    probs[Stance::Comment.index()] = 1.0;
    dataset
        .posts()
        .map(|p| Prediction::from_probabilities(&p.id, probs.clone(), &names))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub train_threads: usize,
    pub test_threads: usize,
    pub reports: Vec<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub tasks: Vec<Task>,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub fold_sizes: Vec<usize>,
    pub assignment: BTreeMap<String, usize>,
    pub folds: Vec<FoldResult>,
    /// Mean ± sample std over every (repeat, fold) score.
    pub aggregate: BTreeMap<String, RunStats>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportFile {
    Evaluation { entries: Vec<NamedReport> },
    CrossValidation(CvReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: EvalReport,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn pct_std(s: &RunStats) -> String {
    format!("{:.1} ± {:.1}", s.mean * 100.0, s.std * 100.0)
}

fn table(title: &str, header: &[String], rows: &[(String, Vec<String>)]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    let name_w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max(4);
    for (_, cells) in rows {
        for (w, c) in widths.iter_mut().zip(cells) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:name_w$}", "");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (name, cells) in rows {
        let _ = write!(out, "{name:name_w$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

fn header(task: Task) -> Vec<String> {
    let mut h: Vec<String> = task.class_names().iter().map(|c| format!("{c} F1")).collect();
    h.push("macro-F1".into());
    if task == Task::B {
        h.push("RMSE".into());
    }
    h
}

/// Human-readable tables, scores ×100 with one decimal.
pub fn render(report: &ReportFile) -> String {
    let mut out = String::new();
    match report {
        ReportFile::Evaluation { entries } => {
            for task in [Task::A, Task::B] {
                let rows: Vec<(String, Vec<String>)> = entries
                    .iter()
                    .filter(|e| e.report.task == task)
                    .map(|e| {
                        let mut cells: Vec<String> = e.report.per_class_f1.iter().map(|&f| pct(f)).collect();
                        cells.push(pct(e.report.macro_f1));
                        if let Some(r) = e.report.rmse {
                            cells.push(format!("{r:.3}"));
                        }
                        (format!("{} [{}]", e.name, e.report.split), cells)
                    })
                    .collect();
                if !rows.is_empty() {
                    out.push_str(&table(&format!("{}, scores x100", task.title()), &header(task), &rows));
                    if task == Task::B {
                        let _ = writeln!(out, "RMSE: {RMSE_DEFINITION}");
                    }
                    out.push('\n');
                }
            }
        }
        ReportFile::CrossValidation(cv) => {
            for &task in &cv.tasks {
                let k = task.key();
                let mut rows = Vec::new();
                for f in &cv.folds {
                    if let Some(r) = f.reports.iter().find(|r| r.task == task) {
                        let mut cells: Vec<String> = r.per_class_f1.iter().map(|&v| pct(v)).collect();
                        cells.push(pct(r.macro_f1));
                        if let Some(x) = r.rmse {
                            cells.push(format!("{x:.3}"));
                        }
                        rows.push((format!("run {} fold {}", f.repeat, f.fold), cells));
                    }
                }
                let mut agg: Vec<String> = task
                    .class_names()
                    .iter()
                    .map(|c| cv.aggregate.get(&format!("{k}.f1.{c}")).map(pct_std).unwrap_or_default())
                    .collect();
                agg.push(cv.aggregate.get(&format!("{k}.macro_f1")).map(pct_std).unwrap_or_default());
                if task == Task::B {
                    agg.push(
                        cv.aggregate
                            .get(&format!("{k}.rmse"))
                            .map(|s| format!("{:.3} ± {:.3}", s.mean, s.std))
                            .unwrap_or_default(),
                    );
                }
                rows.push(("mean ± std".to_string(), agg));
                let title = format!(
                    "{}, {}-fold grouped CV x {} runs, scores x100",
                    task.title(),
                    cv.k,
                    cv.repeats
                );
                out.push_str(&table(&title, &header(task), &rows));
                if task == Task::B {
                    let _ = writeln!(out, "RMSE: {RMSE_DEFINITION}");
                }
                out.push('\n');
            }
        }
    }
    out
}
