//! Trained networks bundled with the preprocessing state fitted alongside
//! them, plus checkpoint conversion.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingMix, EmbeddingStore};
use crate::features::{fit_scaler, MinMaxScaler};
use crate::nn::{Checkpoint, ModelKind, NnError};
use crate::thread_model::{Dataset, Stance, Veracity};

use super::config::{ConfigA, ConfigB};
use super::predictions::{stance_estimate_map, Prediction};
use super::samples::{collate_stance, collate_veracity, stance_samples, veracity_samples, StanceSample, VeracitySample};
use super::stance::StanceModel;
use super::train::{fit_stance, fit_veracity};
use super::veracity::VeracityModel;
use super::ModelError;

const INFERENCE_CHUNK: usize = 256;

fn stance_names() -> Vec<&'static str> {
    Stance::ALL.iter().map(|s| s.as_str()).collect()
}

fn veracity_names() -> Vec<&'static str> {
    Veracity::ALL.iter().map(|v| v.as_str()).collect()
}

fn meta_error(e: serde_json::Error) -> ModelError {
    ModelError::Nn(NnError::Format(format!("checkpoint metadata: {e}")))
}

#[derive(Serialize, Deserialize)]
struct StanceMeta {
    config: ConfigA,
    embed_dim: usize,
    aux_dim: usize,
    scaler: MinMaxScaler,
    mix: EmbeddingMix,
}

#[derive(Serialize, Deserialize)]
struct VeracityMeta {
    config: ConfigB,
    input_dim: usize,
    scaler: MinMaxScaler,
}

#[derive(Clone, Debug)]
pub struct StanceClassifier {
    pub model: StanceModel<f32>,
    pub scaler: MinMaxScaler,
    pub mix: EmbeddingMix,
}

impl StanceClassifier {
    /// Fits the scaler and the network on `train`. Returns the per-epoch loss.
    pub fn train(
        train: &Dataset,
        store: &EmbeddingStore,
        mix: &EmbeddingMix,
        config: &ConfigA,
        seed: u64,
    ) -> Result<(Self, Vec<f64>), ModelError> {
        let scaler = fit_scaler(train.posts())?;
        let samples = stance_samples(train, store, mix, &scaler)?;
        let outcome = fit_stance::<f32>(&samples, config, seed)?;
        Ok((
            StanceClassifier {
                model: outcome.model,
                scaler,
                mix: mix.clone(),
            },
            outcome.loss_trace,
        ))
    }

    pub fn predict_samples(&self, samples: &[StanceSample]) -> Result<Vec<Prediction>, ModelError> {
        let names = stance_names();
        let chunks: Vec<Vec<Prediction>> = samples
            .par_chunks(INFERENCE_CHUNK)
            .map(|chunk| {
                let mut model = self.model.clone();
                let refs: Vec<&StanceSample> = chunk.iter().collect();
                let batch = collate_stance::<f32>(&refs)?;
                let probs = model.forward(&batch, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                Ok(chunk
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let p = probs.row(i).iter().map(|&v| v as f64).collect();
                        Prediction::from_probabilities(&s.post_id, p, &names)
                    })
                    .collect())
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// One prediction per post, in dataset order.
    pub fn predict(&self, dataset: &Dataset, store: &EmbeddingStore) -> Result<Vec<Prediction>, ModelError> {
        let samples = stance_samples(dataset, store, &self.mix, &self.scaler)?;
        self.predict_samples(&samples)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let meta = StanceMeta {
            config: self.model.config().clone(),
            embed_dim: self.model.embed_dim(),
            aux_dim: self.model.aux_dim(),
            scaler: self.scaler.clone(),
            mix: self.mix.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(meta_error)?;
        Ok(Checkpoint::from_tensors(ModelKind::Stance, meta, &self.model.state()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.kind != ModelKind::Stance {
            return Err(NnError::Format("checkpoint does not hold a stance model".into()).into());
        }
        let meta: StanceMeta = serde_json::from_value(ck.meta.clone()).map_err(meta_error)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = StanceModel::new(&meta.config, meta.embed_dim, meta.aux_dim, &mut rng)?;
        ck.restore_into(model.state_mut())?;
        Ok(StanceClassifier {
            model,
            scaler: meta.scaler,
            mix: meta.mix,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct VeracityClassifier {
    pub model: VeracityModel<f32>,
    pub scaler: MinMaxScaler,
}

impl VeracityClassifier {
    /// `estimates` maps every post of `train` to its stance probabilities.
    pub fn train(
        train: &Dataset,
        estimates: &HashMap<String, [f64; 4]>,
        config: &ConfigB,
        seed: u64,
    ) -> Result<(Self, Vec<f64>), ModelError> {
        let scaler = fit_scaler(train.posts())?;
        let samples = veracity_samples(train, &scaler, estimates)?;
        let outcome = fit_veracity::<f32>(&samples, config, seed)?;
        Ok((
            VeracityClassifier {
                model: outcome.model,
                scaler,
            },
            outcome.loss_trace,
        ))
    }

    pub fn predict_samples(&self, samples: &[VeracitySample]) -> Result<Vec<Prediction>, ModelError> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let names = veracity_names();
        let mut model = self.model.clone();
        let refs: Vec<&VeracitySample> = samples.iter().collect();
        let x = collate_veracity::<f32>(&refs)?;
        let probs = model.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = probs.row(i).iter().map(|&v| v as f64).collect();
                Prediction::from_probabilities(&s.thread_id, p, &names)
            })
            .collect())
    }

    /// One prediction per thread, in dataset order.
    pub fn predict(
        &self,
        dataset: &Dataset,
        estimates: &HashMap<String, [f64; 4]>,
    ) -> Result<Vec<Prediction>, ModelError> {
        let samples = veracity_samples(dataset, &self.scaler, estimates)?;
        self.predict_samples(&samples)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let meta = VeracityMeta {
            config: self.model.config().clone(),
            input_dim: self.model.input_dim(),
            scaler: self.scaler.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(meta_error)?;
        Ok(Checkpoint::from_tensors(ModelKind::Veracity, meta, &self.model.state()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.kind != ModelKind::Veracity {
            return Err(NnError::Format("checkpoint does not hold a veracity model".into()).into());
        }
        let meta: VeracityMeta = serde_json::from_value(ck.meta.clone()).map_err(meta_error)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = VeracityModel::new(&meta.config, meta.input_dim, &mut rng)?;
        ck.restore_into(model.state_mut())?;
        Ok(VeracityClassifier {
            model,
            scaler: meta.scaler,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Both stages trained on one split: the veracity model learns from the
/// stance model's estimates on that same split.
#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub stance: StanceClassifier,
    pub veracity: VeracityClassifier,
    pub stance_loss: Vec<f64>,
    pub veracity_loss: Vec<f64>,
}

pub fn train_pipeline(
    train: &Dataset,
    store: &EmbeddingStore,
    mix: &EmbeddingMix,
    config_a: &ConfigA,
    config_b: &ConfigB,
    seed: u64,
) -> Result<TrainedPipeline, ModelError> {
    let (stance, stance_loss) = StanceClassifier::train(train, store, mix, config_a, seed)?;
    let estimates = stance_estimate_map(&stance.predict(train, store)?)?;
    let (veracity, veracity_loss) = VeracityClassifier::train(train, &estimates, config_b, seed.wrapping_add(1))?;
    Ok(TrainedPipeline {
        stance,
        veracity,
        stance_loss,
        veracity_loss,
    })
}

impl TrainedPipeline {
    /// Stance predictions for every post and veracity predictions for every thread.
    pub fn predict(
        &self,
        dataset: &Dataset,
        store: &EmbeddingStore,
    ) -> Result<(Vec<Prediction>, Vec<Prediction>), ModelError> {
        let stance = self.stance.predict(dataset, store)?;
        let estimates = stance_estimate_map(&stance)?;
        let veracity = self.veracity.predict(dataset, &estimates)?;
        Ok((stance, veracity))
    }
}
