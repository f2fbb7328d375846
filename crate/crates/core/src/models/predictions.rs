//! Per-post and per-thread prediction records, stored as JSON Lines:
//! `{"id": ..., "probabilities": [...], "label": ..., "confidence": ...}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::thread_model::Stance;

use super::ModelError;

const SUM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub probabilities: Vec<f64>,
    pub label: String,
    pub confidence: f64,
}

impl Prediction {
    /// `names` gives the label for each class index.
    pub fn from_probabilities(id: impl Into<String>, probabilities: Vec<f64>, names: &[&str]) -> Self {
        let k = argmax(&probabilities);
        Prediction {
            id: id.into(),
            label: names[k].to_string(),
            confidence: probabilities[k],
            probabilities,
        }
    }

    pub fn class_index(&self) -> usize {
        argmax(&self.probabilities)
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for p in predictions {
        let line = serde_json::to_string(p).map_err(|e| ModelError::Integrity(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads predictions, checking that every row is a probability distribution
/// over `classes` outcomes.
pub fn read_predictions(path: impl AsRef<Path>, classes: usize) -> Result<Vec<Prediction>, ModelError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ModelError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| ModelError::Parse {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let p: Prediction = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if p.probabilities.len() != classes {
            return Err(parse(format!("expected {classes} probabilities, found {}", p.probabilities.len())));
        }
        let sum: f64 = p.probabilities.iter().sum();
        if p.probabilities.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(parse(format!("probabilities of {} do not form a distribution", p.id)));
        }
        out.push(p);
    }
    Ok(out)
}

/// Stance predictions keyed by post id.
pub fn stance_estimate_map(predictions: &[Prediction]) -> Result<HashMap<String, [f64; 4]>, ModelError> {
    let mut map = HashMap::with_capacity(predictions.len());
    for p in predictions {
        let arr: [f64; 4] = p.probabilities.as_slice().try_into().map_err(|_| {
            ModelError::Integrity(format!(
                "post {} has {} stance probabilities, expected {}",
                p.id,
                p.probabilities.len(),
                Stance::ALL.len()
            ))
        })?;
        if map.insert(p.id.clone(), arr).is_some() {
            return Err(ModelError::Integrity(format!("duplicate prediction for post {}", p.id)));
        }
    }
    Ok(map)
}
