//! Auxiliary feature vectors for the stance (11 dims) and veracity (15 dims)
//! models.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{average_embedding, cosine_similarity, mix_layers, EmbeddingError, EmbeddingMix, EmbeddingStore};
use crate::thread_model::{DataError, Platform, Post, PostDepth, Thread};

pub const AUX_A_DIM: usize = 11;
pub const AUX_B_DIM: usize = 15;

/// Upvote feature used where the platform has no votes.
pub const NEUTRAL_UPVOTE_RATIO: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit scaler: {0}")]
    DegenerateFit(String),
    #[error("scaler used before fitting")]
    NotFitted,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("no stance estimate for post {0}")]
    MissingEstimate(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

const FOLLOWERS: usize = 0;
const FOLLOWING: usize = 1;
const RATIO: usize = 2;

/// Min-max scaling of follower count, following count and their ratio,
/// fitted on Twitter training posts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub fitted: bool,
}

impl Default for MinMaxScaler {
    fn default() -> Self {
        MinMaxScaler {
            min: [0.0; 3],
            max: [0.0; 3],
            fitted: false,
        }
    }
}

impl MinMaxScaler {
    /// Scales raw value `v` of feature `i` into [0, 1]; constant features map to 0.
    pub fn transform(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[i], self.max[i]);
        if hi <= lo {
            return 0.0;
        }
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// followers / following, or the fitted maximum ratio when following is 0.
    fn raw_ratio(&self, post: &Post) -> f64 {
        if post.following_count == 0 {
            self.max[RATIO]
        } else {
            post.follower_count as f64 / post.following_count as f64
        }
    }
}

pub fn fit_scaler<'a>(train_posts: impl IntoIterator<Item = &'a Post>) -> Result<MinMaxScaler, FeatureError> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut n_twitter = 0usize;
    let mut n_ratio = 0usize;
    for p in train_posts.into_iter().filter(|p| p.platform == Platform::Twitter) {
        n_twitter += 1;
        let vals = [(FOLLOWERS, p.follower_count as f64), (FOLLOWING, p.following_count as f64)];
        for (i, v) in vals {
            min[i] = min[i].min(v);
            max[i] = max[i].max(v);
        }
        if p.following_count > 0 {
            n_ratio += 1;
            let r = p.follower_count as f64 / p.following_count as f64;
            min[RATIO] = min[RATIO].min(r);
            max[RATIO] = max[RATIO].max(r);
        }
    }
    if n_twitter == 0 {
        return Err(FeatureError::DegenerateFit("no Twitter posts in training data".into()));
    }
    if n_ratio == 0 {
        min[RATIO] = 0.0;
        max[RATIO] = 0.0;
    }
    Ok(MinMaxScaler { min, max, fitted: true })
}

/// `[not verified, verified, followers, following, ratio]` for Twitter; zeros for Reddit.
pub fn user_meta_vector(post: &Post, scaler: &MinMaxScaler) -> Result<[f64; 5], FeatureError> {
    if !scaler.fitted {
        return Err(FeatureError::NotFitted);
    }
    if post.platform == Platform::Reddit {
        return Ok([0.0; 5]);
    }
    let verified = if post.user_verified { [0.0, 1.0] } else { [1.0, 0.0] };
    Ok([
        verified[0],
        verified[1],
        scaler.transform(FOLLOWERS, post.follower_count as f64),
        scaler.transform(FOLLOWING, post.following_count as f64),
        scaler.transform(RATIO, scaler.raw_ratio(post)),
    ])
}

fn platform_onehot(p: Platform) -> [f64; 2] {
    match p {
        Platform::Twitter => [1.0, 0.0],
        Platform::Reddit => [0.0, 1.0],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxFeaturesA {
    pub platform_onehot: [f64; 2],
    pub user_meta: [f64; 5],
    pub cos_to_source: f64,
    pub depth_onehot: [f64; 3],
}

impl AuxFeaturesA {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(AUX_A_DIM);
        v.extend_from_slice(&self.platform_onehot);
        v.extend_from_slice(&self.user_meta);
        v.push(self.cos_to_source);
        v.extend_from_slice(&self.depth_onehot);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxFeaturesB {
    pub platform_onehot: [f64; 2],
    pub user_meta: [f64; 5],
    pub media_onehot: [f64; 2],
    pub upvote_ratio: f64,
    pub reply_fractions: [f64; 2],
    pub sdq_mean: [f64; 3],
}

impl AuxFeaturesB {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(AUX_B_DIM);
        v.extend_from_slice(&self.platform_onehot);
        v.extend_from_slice(&self.user_meta);
        v.extend_from_slice(&self.media_onehot);
        v.push(self.upvote_ratio);
        v.extend_from_slice(&self.reply_fractions);
        v.extend_from_slice(&self.sdq_mean);
        v
    }
}

/// Token-averaged mixed embedding of one post.
pub fn averaged_post_embedding(
    store: &EmbeddingStore,
    mix: &EmbeddingMix,
    post_id: &str,
) -> Result<Vec<f64>, EmbeddingError> {
    let m = mix_layers::<f64>(store.get(post_id)?, mix)?;
    average_embedding(&m)
}

pub fn aux_features_a(
    post: &Post,
    thread: &Thread,
    store: &EmbeddingStore,
    mix: &EmbeddingMix,
    scaler: &MinMaxScaler,
) -> Result<AuxFeaturesA, FeatureError> {
    let depth = thread.depth_of(&post.id)?;
    let post_avg = averaged_post_embedding(store, mix, &post.id)?;
    let cos_to_source = if depth == PostDepth::Source {
        1.0
    } else {
        let source_avg = averaged_post_embedding(store, mix, &thread.source.id)?;
        cosine_similarity(&post_avg, &source_avg)
    };
    let mut depth_onehot = [0.0; 3];
    depth_onehot[depth.index()] = 1.0;
    Ok(AuxFeaturesA {
        platform_onehot: platform_onehot(post.platform),
        user_meta: user_meta_vector(post, scaler)?,
        cos_to_source,
        depth_onehot,
    })
}

/// `estimates` maps post id to (support, deny, query, comment) probabilities.
pub fn aux_features_b(
    thread: &Thread,
    scaler: &MinMaxScaler,
    estimates: &HashMap<String, [f64; 4]>,
) -> Result<AuxFeaturesB, FeatureError> {
    let source = &thread.source;
    let has_media = source.has_image || source.has_url;
    let upvote_ratio = match source.platform {
        Platform::Twitter => NEUTRAL_UPVOTE_RATIO,
        Platform::Reddit => source.upvote_ratio.unwrap_or(NEUTRAL_UPVOTE_RATIO),
    };
    let n = thread.len() as f64;
    let mut direct = 0usize;
    let mut nested = 0usize;
    let mut sdq = [0.0; 3];
    for p in thread.posts() {
        match thread.depth_of(&p.id)? {
            PostDepth::DirectReply => direct += 1,
            PostDepth::NestedReply => nested += 1,
            PostDepth::Source => {}
        }
        let est = estimates
            .get(&p.id)
            .ok_or_else(|| FeatureError::MissingEstimate(p.id.clone()))?;
        for (acc, &v) in sdq.iter_mut().zip(est) {
            *acc += v;
        }
    }
    sdq.iter_mut().for_each(|v| *v /= n);
    Ok(AuxFeaturesB {
        platform_onehot: platform_onehot(source.platform),
        user_meta: user_meta_vector(source, scaler)?,
        media_onehot: if has_media { [1.0, 0.0] } else { [0.0, 1.0] },
        upvote_ratio,
        reply_fractions: [direct as f64 / n, nested as f64 / n],
        sdq_mean: sdq,
    })
}
