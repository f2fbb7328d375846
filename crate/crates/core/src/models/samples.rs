//! Model-ready examples and mini-batch collation.

use std::collections::HashMap;

use crate::embeddings::{mix_layers, EmbeddingMix, EmbeddingStore};
use crate::features::{aux_features_a, aux_features_b, MinMaxScaler};
use crate::nn::{Scalar, Tensor};
use crate::preprocess::normalize_and_tokenize;
use crate::thread_model::{Dataset, Stance, Veracity};

use super::ModelError;

#[derive(Clone, Debug)]
pub struct StanceSample {
    pub post_id: String,
    /// Mixed token embeddings `[T, D]`.
    pub tokens: Tensor<f32>,
    pub aux: Vec<f64>,
    pub label: Option<Stance>,
}

#[derive(Clone, Debug)]
pub struct VeracitySample {
    pub thread_id: String,
    pub features: Vec<f64>,
    pub label: Option<Veracity>,
}

/// A padded batch; positions at or beyond `lengths[b]` are zero.
#[derive(Clone, Debug)]
pub struct StanceBatch<F> {
    pub tokens: Tensor<F>,
    pub lengths: Vec<usize>,
    pub aux: Tensor<F>,
}

/// One sample per post, in dataset order. Each post's stored sequence length
/// must match its preprocessed token count.
pub fn stance_samples(
    dataset: &Dataset,
    store: &EmbeddingStore,
    mix: &EmbeddingMix,
    scaler: &MinMaxScaler,
) -> Result<Vec<StanceSample>, ModelError> {
    let mut out = Vec::with_capacity(dataset.num_posts());
    for (post, thread) in dataset.posts_with_threads() {
        let stored = store.get(&post.id)?;
        let expected = normalize_and_tokenize(&post.raw_text).model_tokens().len();
        if stored.tokens() != expected {
            return Err(ModelError::Integrity(format!(
                "post {}: embedding store holds {} tokens, preprocessing yields {expected}",
                post.id,
                stored.tokens()
            )));
        }
        let aux = aux_features_a(post, thread, store, mix, scaler)?.to_vec();
        out.push(StanceSample {
            post_id: post.id.clone(),
            tokens: mix_layers::<f32>(stored, mix)?,
            aux,
            label: post.sdqc_label,
        });
    }
    Ok(out)
}

/// One sample per thread, in dataset order.
pub fn veracity_samples(
    dataset: &Dataset,
    scaler: &MinMaxScaler,
    estimates: &HashMap<String, [f64; 4]>,
) -> Result<Vec<VeracitySample>, ModelError> {
    dataset
        .threads
        .iter()
        .map(|thread| {
            Ok(VeracitySample {
                thread_id: thread.id().to_string(),
                features: aux_features_b(thread, scaler, estimates)?.to_vec(),
                label: thread.veracity_label,
            })
        })
        .collect()
}

pub fn collate_stance<F: Scalar>(samples: &[&StanceSample]) -> Result<StanceBatch<F>, ModelError> {
    let first = samples
        .first()
        .ok_or_else(|| ModelError::Integrity("empty batch".into()))?;
    let d = first.tokens.dim(1);
    let a = first.aux.len();
    let t = samples.iter().map(|s| s.tokens.dim(0)).max().unwrap_or(0);
    let b = samples.len();
    let mut tokens = Tensor::zeros(&[b, t, d]);
    let mut aux = Tensor::zeros(&[b, a]);
    let mut lengths = Vec::with_capacity(b);
    for (i, s) in samples.iter().enumerate() {
        if s.tokens.dim(1) != d || s.aux.len() != a {
            return Err(ModelError::Integrity(format!("post {} has inconsistent feature widths", s.post_id)));
        }
        let l = s.tokens.dim(0);
        let dst = &mut tokens.data_mut()[i * t * d..(i * t + l) * d];
        for (o, &v) in dst.iter_mut().zip(s.tokens.data()) {
            *o = F::of(v as f64);
        }
        for (o, &v) in aux.row_mut(i).iter_mut().zip(&s.aux) {
            *o = F::of(v);
        }
        lengths.push(l);
    }
    Ok(StanceBatch { tokens, lengths, aux })
}

pub fn collate_veracity<F: Scalar>(samples: &[&VeracitySample]) -> Result<Tensor<F>, ModelError> {
    let width = samples.first().map(|s| s.features.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.features.len() != width {
            return Err(ModelError::Integrity(format!("thread {} has inconsistent feature width", s.thread_id)));
        }
        data.extend(s.features.iter().map(|&v| F::of(v)));
    }
    Ok(Tensor::from_vec(&[samples.len(), width], data)?)
}
