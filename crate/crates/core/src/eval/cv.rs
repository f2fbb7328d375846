//! Group-aware k-fold cross validation and repeated-run statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::thread_model::{Dataset, Platform, Split, Thread};

use super::EvalError;

/// Fold index for every thread id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, thread_id: &str) -> Option<usize> {
        self.folds.get(thread_id).copied()
    }

    /// `(train, test)` for one fold.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> (Dataset, Dataset) {
        let train = dataset.filter_threads(|t| self.fold_of(t.id()) != Some(fold), Split::Train);
        let test = dataset.filter_threads(|t| self.fold_of(t.id()) == Some(fold), Split::Test);
        (train, test)
    }

    /// Posts per fold.
    pub fn fold_sizes(&self, dataset: &Dataset) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for t in &dataset.threads {
            if let Some(f) = self.fold_of(t.id()) {
                sizes[f] += t.len();
            }
        }
        sizes
    }
}

/// Grouping key: the topic of a Twitter thread, or the thread itself on Reddit.
pub fn group_key(thread: &Thread) -> Result<String, EvalError> {
    match thread.platform() {
        Platform::Twitter => thread
            .topic()
            .map(|t| format!("twitter/{t}"))
            .ok_or_else(|| EvalError::Fold(format!("Twitter thread {} has no topic", thread.id()))),
        Platform::Reddit => Ok(format!("reddit/{}", thread.id())),
    }
}

/// Assigns whole groups to `k` folds, balancing post counts: groups are
/// shuffled by `seed`, stably ordered by size (largest first), and each goes
/// to the currently lightest fold (lowest index on ties).
pub fn grouped_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::Fold(format!("need at least 2 folds, got {k}")));
    }
    let mut groups: BTreeMap<String, (usize, Vec<String>)> = BTreeMap::new();
    for t in &dataset.threads {
        let g = groups.entry(group_key(t)?).or_default();
        g.0 += t.len();
        g.1.push(t.id().to_string());
    }
    if groups.len() < k {
        return Err(EvalError::Fold(format!("{} groups cannot fill {k} folds", groups.len())));
    }
    let mut order: Vec<(usize, Vec<String>)> = groups.into_values().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|g| std::cmp::Reverse(g.0));
    let mut load = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for (size, threads) in order {
        let f = (0..k).min_by_key(|&i| (load[i], i)).unwrap_or(0);
        load[f] += size;
        for t in threads {
            folds.insert(t, f);
        }
    }
    Ok(FoldAssignment { k, folds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Result<RunStats, EvalError> {
    let n = values.len();
    if n < 2 {
        return Err(EvalError::Mismatch(format!("need at least 2 runs for a standard deviation, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(RunStats {
        mean,
        std: var.sqrt(),
        n,
    })
}

/// Named scores of one run.
pub type Metrics = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<Metrics>,
    pub stats: BTreeMap<String, RunStats>,
}

/// Aggregates metrics present in every run.
pub fn summarize(runs: Vec<Metrics>) -> Result<RunSummary, EvalError> {
    let mut stats = BTreeMap::new();
    if let Some(first) = runs.first() {
        for name in first.keys() {
            let values: Option<Vec<f64>> = runs.iter().map(|r| r.get(name).copied()).collect();
            if let Some(values) = values {
                stats.insert(name.clone(), mean_std(&values)?);
            }
        }
    }
    Ok(RunSummary { runs, stats })
}

/// Runs `run` once per seed (in parallel) and aggregates the results in seed order.
pub fn repeated_runs<E, F>(seeds: &[u64], run: F) -> Result<RunSummary, E>
where
    F: Fn(u64) -> Result<Metrics, E> + Sync,
    E: Send + From<EvalError>,
{
    let runs = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>, E>>()?;
    Ok(summarize(runs)?)
}
