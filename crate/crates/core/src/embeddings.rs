//! Layered contextual token embeddings: the on-disk store, the weighted layer
//! mix, and the per-post quantities derived from it.
//!
//! Store layout (all integers and floats little-endian):
//!
//! ```text
//! magic    4 bytes "CLRE"
//! version  u16     1
//! dim      u32     embedding dimension D
//! layers   u32     number of stored layers (L + 1)
//! count    u64     number of posts
//! per post:
//!   id_len u16, id bytes (UTF-8)
//!   tokens u16     T
//!   values (L + 1) × T × D f32, layer-major then token-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Scalar, Tensor};
use crate::preprocess::{TokenSequence, EMPTY_TOKEN};

pub const STORE_MAGIC: &[u8; 4] = b"CLRE";
pub const STORE_VERSION: u16 = 1;
/// Bytes before the first post entry.
pub const STORE_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding store format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("embedding shape error: {0}")]
    Shape(String),
    #[error("cannot average an empty token sequence")]
    EmptySequence,
    #[error("no embeddings stored for post {0}")]
    Missing(String),
}

/// All stored layers for one post: `layers × tokens × dim` values.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredTokenEmbeddings {
    pub post_id: String,
    layers: usize,
    tokens: usize,
    dim: usize,
    values: Vec<f32>,
}

impl LayeredTokenEmbeddings {
    pub fn new(
        post_id: impl Into<String>,
        layers: usize,
        tokens: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        let post_id = post_id.into();
        if values.len() != layers * tokens * dim {
            return Err(EmbeddingError::Shape(format!(
                "post {post_id}: {} values for {layers}×{tokens}×{dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Format(format!("post {post_id}: non-finite embedding value")));
        }
        Ok(LayeredTokenEmbeddings {
            post_id,
            layers,
            tokens,
            dim,
            values,
        })
    }

    pub fn zeros(post_id: impl Into<String>, layers: usize, tokens: usize, dim: usize) -> Self {
        LayeredTokenEmbeddings {
            post_id: post_id.into(),
            layers,
            tokens,
            dim,
            values: vec![0.0; layers * tokens * dim],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// `tokens × dim` slice for layer `j`.
    pub fn layer(&self, j: usize) -> &[f32] {
        let n = self.tokens * self.dim;
        &self.values[j * n..(j + 1) * n]
    }
}

/// Scalar mix `gamma · Σ_j s_j · h_j` over the stored layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMix {
    pub gamma: f64,
    pub layer_weights: Vec<f64>,
}

impl EmbeddingMix {
    /// gamma = 1, every layer weighted 1/(L+1).
    pub fn uniform(layers: usize) -> Self {
        EmbeddingMix {
            gamma: 1.0,
            layer_weights: vec![1.0 / layers as f64; layers],
        }
    }

    /// Picks out layer `j` unchanged.
    pub fn selector(j: usize, layers: usize) -> Self {
        let mut layer_weights = vec![0.0; layers];
        layer_weights[j] = 1.0;
        EmbeddingMix {
            gamma: 1.0,
            layer_weights,
        }
    }
}

/// Mixes the stored layers into a `tokens × dim` matrix.
pub fn mix_layers<F: Scalar>(e: &LayeredTokenEmbeddings, mix: &EmbeddingMix) -> Result<Tensor<F>, EmbeddingError> {
    if mix.layer_weights.len() != e.layers {
        return Err(EmbeddingError::Shape(format!(
            "{} mixing weights for {} layers",
            mix.layer_weights.len(),
            e.layers
        )));
    }
    if !mix.gamma.is_finite() || mix.layer_weights.iter().any(|w| !w.is_finite()) {
        return Err(EmbeddingError::Shape("non-finite mixing weights".into()));
    }
    let n = e.tokens * e.dim;
    let mut out = vec![0.0f64; n];
    for (j, &s) in mix.layer_weights.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for (o, &h) in out.iter_mut().zip(e.layer(j)) {
            *o += s * h as f64;
        }
    }
    let data = out.into_iter().map(|v| F::of(mix.gamma * v)).collect();
    Tensor::from_vec(&[e.tokens, e.dim], data).map_err(|err| EmbeddingError::Shape(err.to_string()))
}

/// Mean over the token axis of a `tokens × dim` matrix.
pub fn average_embedding<F: Scalar>(m: &Tensor<F>) -> Result<Vec<F>, EmbeddingError> {
    if m.ndim() != 2 {
        return Err(EmbeddingError::Shape(format!("expected a matrix, got {:?}", m.shape())));
    }
    let (t, d) = (m.dim(0), m.dim(1));
    if t == 0 {
        return Err(EmbeddingError::EmptySequence);
    }
    let mut out = vec![F::zero(); d];
    for row in m.data().chunks_exact(d.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let tf = F::of(t as f64);
    out.iter_mut().for_each(|o| *o /= tf);
    Ok(out)
}

/// Cosine of the angle between `a` and `b`; 0 when either is the zero vector.
pub fn cosine_similarity<F: Scalar>(a: &[F], b: &[F]) -> F {
    let dot: F = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<F>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<F>().sqrt();
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    (dot / (na * nb)).max(-F::one()).min(F::one())
}

/// Precomputed embeddings keyed by post id, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    layers: usize,
    entries: IndexMap<String, LayeredTokenEmbeddings>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, layers: usize) -> Self {
        EmbeddingStore {
            dim,
            layers,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, e: LayeredTokenEmbeddings) -> Result<(), EmbeddingError> {
        if e.dim != self.dim || e.layers != self.layers {
            return Err(EmbeddingError::Shape(format!(
                "post {}: {} layers × dim {} does not match store {} × {}",
                e.post_id, e.layers, e.dim, self.layers, self.dim
            )));
        }
        if e.tokens == 0 || e.tokens > u16::MAX as usize {
            return Err(EmbeddingError::Shape(format!("post {}: {} tokens", e.post_id, e.tokens)));
        }
        if e.post_id.len() > u16::MAX as usize {
            return Err(EmbeddingError::Shape("post id longer than 65535 bytes".into()));
        }
        if self.entries.contains_key(&e.post_id) {
            return Err(EmbeddingError::Format(format!("duplicate post id {}", e.post_id)));
        }
        self.entries.insert(e.post_id.clone(), e);
        Ok(())
    }

    pub fn get(&self, post_id: &str) -> Result<&LayeredTokenEmbeddings, EmbeddingError> {
        self.entries
            .get(post_id)
            .ok_or_else(|| EmbeddingError::Missing(post_id.to_string()))
    }

    pub fn contains(&self, post_id: &str) -> bool {
        self.entries.contains_key(post_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LayeredTokenEmbeddings> {
        self.entries.values()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbeddingError> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.layers as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        let mut buf = Vec::new();
        for e in self.entries.values() {
            w.write_all(&(e.post_id.len() as u16).to_le_bytes())?;
            w.write_all(e.post_id.as_bytes())?;
            w.write_all(&(e.tokens as u16).to_le_bytes())?;
            buf.clear();
            buf.extend(e.values.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(EmbeddingError::Format("bad magic, not an embedding store".into()));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != STORE_VERSION {
            return Err(EmbeddingError::Format(format!("unsupported store version {version}")));
        }
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let layers = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8);
        if dim == 0 || layers == 0 {
            return Err(EmbeddingError::Format(format!("invalid dimensions D={dim}, layers={layers}")));
        }
        let mut store = EmbeddingStore::new(dim, layers);
        for _ in 0..count {
            r.read_exact(&mut b2)?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| EmbeddingError::Format("post id is not UTF-8".into()))?;
            r.read_exact(&mut b2)?;
            let tokens = u16::from_le_bytes(b2) as usize;
            let mut bytes = vec![0u8; layers * tokens * dim * 4];
            r.read_exact(&mut bytes)?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let e = LayeredTokenEmbeddings::new(id, layers, tokens, dim, values)?;
            store.insert(e).map_err(|e| EmbeddingError::Format(e.to_string()))?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(EmbeddingError::Format("trailing bytes after last entry".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    store.save(path)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, EmbeddingError> {
    EmbeddingStore::load(path)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic stand-in for a pretrained contextual embedder. Each vector
/// is a pure function of (token, position, layer, seed) with entries in [-1, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FakeEmbedder {
    pub seed: u64,
    pub layers: usize,
    pub dim: usize,
}

impl FakeEmbedder {
    pub fn new(seed: u64, layers: usize, dim: usize) -> Self {
        FakeEmbedder { seed, layers, dim }
    }

    pub fn embed(&self, post_id: &str, seq: &TokenSequence) -> LayeredTokenEmbeddings {
        test_provider(post_id, seq, self.seed, self.layers, self.dim)
    }

    pub fn build_store<'a>(
        &self,
        posts: impl IntoIterator<Item = (&'a str, &'a TokenSequence)>,
    ) -> Result<EmbeddingStore, EmbeddingError> {
        let mut store = EmbeddingStore::new(self.dim, self.layers);
        for (id, seq) in posts {
            store.insert(self.embed(id, seq))?;
        }
        Ok(store)
    }
}

pub fn test_provider(post_id: &str, seq: &TokenSequence, seed: u64, layers: usize, dim: usize) -> LayeredTokenEmbeddings {
    let tokens = seq.model_tokens();
    if tokens.len() == 1 && tokens[0] == EMPTY_TOKEN {
        return LayeredTokenEmbeddings::zeros(post_id, layers, 1, dim);
    }
    let t = tokens.len();
    let mut values = vec![0.0f32; layers * t * dim];
    for j in 0..layers {
        for (k, tok) in tokens.iter().enumerate() {
            let mut state = fnv1a(tok.as_bytes());
            state = splitmix64(state ^ (k as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            state = splitmix64(state ^ (j as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
            state = splitmix64(state ^ seed);
            let row = &mut values[(j * t + k) * dim..(j * t + k + 1) * dim];
            for v in row.iter_mut() {
                state = splitmix64(state);
                // top 24 bits -> [0, 1) exactly representable in f32
                let unit = (state >> 40) as f32 / (1u64 << 24) as f32;
                *v = 2.0 * unit - 1.0;
            }
        }
    }
    LayeredTokenEmbeddings {
        post_id: post_id.to_string(),
        layers,
        tokens: t,
        dim,
        values,
    }
}
