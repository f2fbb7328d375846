//! Cross-validated training and scoring of the full pipeline.

use rayon::prelude::*;

use crate::embeddings::{EmbeddingMix, EmbeddingStore};
use crate::models::{train_pipeline, ConfigA, ConfigB, StanceClassifier};
use crate::thread_model::Dataset;

use super::cv::{grouped_kfold, summarize, Metrics};
use super::report::{evaluate_stance, evaluate_veracity, CvReport, FoldResult, Task};
use super::EvalError;

#[derive(Clone, Debug)]
pub struct CvOptions {
    pub tasks: Vec<Task>,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub config_a: ConfigA,
    pub config_b: ConfigB,
}

/// Model seed for one (repeat, fold) cell.
pub fn cell_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    seed.wrapping_add((repeat as u64) << 32).wrapping_add(fold as u64)
}

/// Trains and scores one model per (repeat, fold). Folds are fixed by
/// `options.seed`; repeats differ only in model seeds.
pub fn cross_validate(
    dataset: &Dataset,
    store: &EmbeddingStore,
    mix: &EmbeddingMix,
    options: &CvOptions,
) -> Result<CvReport, EvalError> {
    if options.repeats == 0 {
        return Err(EvalError::Mismatch("need at least one repeat".into()));
    }
    if options.tasks.is_empty() {
        return Err(EvalError::Mismatch("no task selected".into()));
    }
    let assignment = grouped_kfold(dataset, options.k, options.seed)?;
    let cells: Vec<(usize, usize)> = (0..options.repeats)
        .flat_map(|r| (0..options.k).map(move |f| (r, f)))
        .collect();
    let folds = cells
        .par_iter()
        .map(|&(repeat, fold)| {
            let seed = cell_seed(options.seed, repeat, fold);
            let (train, test) = assignment.split(dataset, fold);
            log::info!(
                "run {repeat} fold {fold}: {} train threads, {} test threads",
                train.threads.len(),
                test.threads.len()
            );
            let split = format!("cv-fold-{fold}");
            let mut reports = Vec::new();
            if options.tasks.contains(&Task::B) {
                let pipeline = train_pipeline(&train, store, mix, &options.config_a, &options.config_b, seed)?;
                let (stance, veracity) = pipeline.predict(&test, store)?;
                if options.tasks.contains(&Task::A) {
                    reports.push(evaluate_stance(&stance, &test, &split)?);
                }
                reports.push(evaluate_veracity(&veracity, &test, &split)?);
            } else {
                let (model, _) = StanceClassifier::train(&train, store, mix, &options.config_a, seed)?;
                reports.push(evaluate_stance(&model.predict(&test, store)?, &test, &split)?);
            }
            Ok(FoldResult {
                repeat,
                fold,
                seed,
                train_threads: train.threads.len(),
                test_threads: test.threads.len(),
                reports,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let metrics: Vec<Metrics> = folds
        .iter()
        .map(|f| f.reports.iter().flat_map(|r| r.metrics()).collect())
        .collect();
    let summary = summarize(metrics)?;
    let mut tasks = options.tasks.clone();
    tasks.sort();
    tasks.dedup();
    Ok(CvReport {
        tasks,
        k: options.k,
        repeats: options.repeats,
        seed: options.seed,
        fold_sizes: assignment.fold_sizes(dataset),
        assignment: assignment.folds,
        folds,
        aggregate: summary.stats,
    })
}
