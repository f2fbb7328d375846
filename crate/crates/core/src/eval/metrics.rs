//! Confusion matrices, per-class and macro F1, and confidence RMSE.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Human-readable form of the RMSE used throughout, embedded in reports.
pub const RMSE_DEFINITION: &str = "sqrt(mean(err^2)) with err = 1 - confidence when the predicted label is correct, else confidence";

/// `k × k` counts, rows indexed by gold class and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, gold: &[usize], predicted: &[usize]) -> Result<Self, EvalError> {
        if gold.len() != predicted.len() {
            return Err(EvalError::Mismatch(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(k);
        for (&g, &p) in gold.iter().zip(predicted) {
            cm.add(g, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, gold: usize, predicted: usize) -> Result<(), EvalError> {
        if gold >= self.k || predicted >= self.k {
            return Err(EvalError::Mismatch(format!(
                "label pair ({gold}, {predicted}) outside {} classes",
                self.k
            )));
        }
        self.counts[gold * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn gold_count(&self, class: usize) -> u64 {
        (0..self.k).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, class)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
    /// Classes whose precision or recall had a zero denominator; their F1
    /// is reported as 0.
    pub undefined: Vec<usize>,
}

pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let mut per_class = Vec::with_capacity(cm.classes());
    let mut undefined = Vec::new();
    for c in 0..cm.classes() {
        let tp = cm.get(c, c) as f64;
        let predicted = cm.predicted_count(c) as f64;
        let gold = cm.gold_count(c) as f64;
        if predicted == 0.0 || gold == 0.0 {
            undefined.push(c);
        }
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if gold > 0.0 { tp / gold } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(f1);
    }
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    F1Scores {
        per_class,
        macro_f1,
        undefined,
    }
}

/// Confidence RMSE; see [`RMSE_DEFINITION`].
pub fn rmse(predicted: &[usize], confidence: &[f64], gold: &[usize]) -> Result<f64, EvalError> {
    if predicted.len() != gold.len() || confidence.len() != gold.len() {
        return Err(EvalError::Mismatch(format!(
            "{} predictions, {} confidences, {} gold labels",
            predicted.len(),
            confidence.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(EvalError::Mismatch("RMSE over zero items".into()));
    }
    let sum: f64 = predicted
        .iter()
        .zip(confidence)
        .zip(gold)
        .map(|((&p, &c), &g)| {
            let err = if p == g { 1.0 - c } else { c };
            err * err
        })
        .sum();
    Ok((sum / gold.len() as f64).sqrt())
}
