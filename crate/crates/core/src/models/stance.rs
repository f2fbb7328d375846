//! Convolutional stance network.
//!
//! ```text
//! tokens [B,T,D] ─┬─ conv k=2 → relu → batchnorm ─┐
//!                 └─ conv k=3 → relu → batchnorm ─┴─ concat [B,T,|S|C] (repeated per conv layer)
//!   → masked mean over T [B,|S|C] → concat aux [B,|S|C+11]
//!   → (dense → relu → dropout) × L → dense → softmax [B,4]
//! ```

use rand::Rng;

use crate::nn::{
    add_l2_grad, channel_concat, channel_split, masked_avg_pool, masked_avg_pool_backward, relu, relu_backward,
    softmax, softmax_cross_entropy_backward, weighted_cross_entropy, BatchNorm, Conv1d, Dense, LossSpec,
    NnError, Param, Scalar, Tensor,
};
use crate::thread_model::Stance;

use super::config::ConfigA;
use super::samples::StanceBatch;
use super::veracity::DenseBlock;
use super::ModelError;

#[derive(Clone, Debug)]
pub struct ConvBranch<F> {
    pub conv: Conv1d<F>,
    pub norm: BatchNorm<F>,
    activation: Option<Tensor<F>>,
}

#[derive(Clone, Debug)]
struct Cache<F> {
    lengths: Vec<usize>,
    time: usize,
    probs: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct StanceModel<F> {
    config: ConfigA,
    embed_dim: usize,
    aux_dim: usize,
    conv: Vec<Vec<ConvBranch<F>>>,
    blocks: Vec<DenseBlock<F>>,
    output: Dense<F>,
    cache: Option<Cache<F>>,
}

impl<F: Scalar> StanceModel<F> {
    pub fn new<R: Rng>(config: &ConfigA, embed_dim: usize, aux_dim: usize, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        if embed_dim == 0 {
            return Err(ModelError::Config("embedding dimension must be positive".into()));
        }
        let mut conv = Vec::with_capacity(config.conv_layers);
        let mut width = embed_dim;
        for l in 0..config.conv_layers {
            let branches = config
                .kernel_sizes
                .iter()
                .map(|&k| {
                    let name = format!("conv{l}.k{k}");
                    ConvBranch {
                        conv: Conv1d::new(&name, k, width, config.channels, rng),
                        norm: BatchNorm::new(&format!("{name}.bn"), config.channels),
                        activation: None,
                    }
                })
                .collect();
            conv.push(branches);
            width = config.kernel_sizes.len() * config.channels;
        }
        let pooled = config.pooled_dim(embed_dim);
        debug_assert_eq!(width, pooled);
        let mut blocks = Vec::with_capacity(config.dense_layers);
        let mut inputs = pooled + aux_dim;
        for l in 0..config.dense_layers {
            blocks.push(DenseBlock::new(&format!("dense{l}"), inputs, config.hidden, config.dropout, rng)?);
            inputs = config.hidden;
        }
        let output = Dense::new("output", inputs, Stance::ALL.len(), rng);
        let model = StanceModel {
            config: config.clone(),
            embed_dim,
            aux_dim,
            conv,
            blocks,
            output,
            cache: None,
        };
        let expected = pooled + aux_dim;
        if model.dense_input_dim() != expected {
            return Err(ModelError::Config(format!(
                "dense stack input is {}, expected {expected}",
                model.dense_input_dim()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ConfigA {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    /// Width of the vector entering the dense stack (pooled text ⊕ aux).
    pub fn dense_input_dim(&self) -> usize {
        self.blocks
            .first()
            .map(|b| b.dense.inputs())
            .unwrap_or_else(|| self.output.inputs())
    }

    /// Class probabilities `[B, 4]`.
    pub fn forward<R: Rng>(&mut self, batch: &StanceBatch<F>, training: bool, rng: &mut R) -> Result<Tensor<F>, ModelError> {
        batch.tokens.expect_ndim(3, "stance tokens")?;
        let (b, t, d) = (batch.tokens.dim(0), batch.tokens.dim(1), batch.tokens.dim(2));
        if d != self.embed_dim {
            return Err(NnError::Shape(format!("token embeddings have width {d}, model expects {}", self.embed_dim)).into());
        }
        batch.aux.expect_shape(&[b, self.aux_dim], "stance aux features")?;
        let mut h = batch.tokens.clone();
        for layer in &mut self.conv {
            let mut outs = Vec::with_capacity(layer.len());
            for br in layer.iter_mut() {
                let a = relu(&br.conv.forward(&h)?);
                outs.push(br.norm.forward(&a, &batch.lengths, training)?);
                br.activation = Some(a);
            }
            h = channel_concat(&outs.iter().collect::<Vec<_>>())?;
        }
        let pooled = masked_avg_pool(&h, &batch.lengths)?;
        let mut x = channel_concat(&[&pooled, &batch.aux])?;
        for block in &mut self.blocks {
            x = block.forward(&x, training, rng)?;
        }
        let probs = softmax(&self.output.forward(&x)?)?;
        probs.check_finite("stance output")?;
        self.cache = Some(Cache {
            lengths: batch.lengths.clone(),
            time: t,
            probs: probs.clone(),
        });
        Ok(probs)
    }

    /// Loss of the most recent forward pass, including the L2 term.
    pub fn loss(&self, labels: &[usize], spec: &LossSpec) -> Result<F, ModelError> {
        let cache = self.cache.as_ref().ok_or_else(|| NnError::Shape("loss before forward".into()))?;
        Ok(weighted_cross_entropy(&cache.probs, labels, spec, &self.params())?)
    }

    /// Accumulates parameter gradients of the loss for the most recent
    /// forward pass.
    pub fn backward(&mut self, labels: &[usize], spec: &LossSpec) -> Result<(), ModelError> {
        let cache = self.cache.take().ok_or_else(|| NnError::Shape("backward before forward".into()))?;
        let mut g = softmax_cross_entropy_backward(&cache.probs, labels, spec)?;
        g = self.output.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let pooled_dim = g.dim(1) - self.aux_dim;
        let dpooled = channel_split(&g, &[pooled_dim, self.aux_dim])?.swap_remove(0);
        let mut dh = masked_avg_pool_backward(&dpooled, &cache.lengths, cache.time)?;
        for (l, layer) in self.conv.iter_mut().enumerate().rev() {
            let widths: Vec<usize> = layer.iter().map(|br| br.conv.out_channels).collect();
            let parts = channel_split(&dh, &widths)?;
            let need_input = l > 0;
            let mut dx: Option<Tensor<F>> = None;
            for (br, gpart) in layer.iter_mut().zip(parts) {
                let gn = br.norm.backward(&gpart)?;
                let act = br
                    .activation
                    .take()
                    .ok_or_else(|| NnError::Shape("conv backward before forward".into()))?;
                let ga = relu_backward(&act, &gn);
                if let Some(gi) = br.conv.backward(&ga, need_input)? {
                    match dx.as_mut() {
                        None => dx = Some(gi),
                        Some(acc) => acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, &v)| *a += v),
                    }
                }
            }
            if l > 0 {
                dh = dx.expect("input gradient requested for inner layer");
            }
        }
        add_l2_grad(&mut self.params_mut(), spec.l2_weight);
        self.cache = Some(cache);
        Ok(())
    }

    /// One forward/backward pass in training mode. Gradients are zeroed first.
    pub fn forward_backward<R: Rng>(
        &mut self,
        batch: &StanceBatch<F>,
        labels: &[usize],
        spec: &LossSpec,
        rng: &mut R,
    ) -> Result<F, ModelError> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        self.forward(batch, true, rng)?;
        let loss = self.loss(labels, spec)?;
        self.backward(labels, spec)?;
        Ok(loss)
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = Vec::new();
        for br in self.conv.iter().flatten() {
            out.extend([&br.conv.weight, &br.conv.bias, &br.norm.scale, &br.norm.shift]);
        }
        for block in &self.blocks {
            out.extend([&block.dense.weight, &block.dense.bias]);
        }
        out.extend([&self.output.weight, &self.output.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
        for br in self.conv.iter_mut().flatten() {
            out.push(&mut br.conv.weight);
            out.push(&mut br.conv.bias);
            out.push(&mut br.norm.scale);
            out.push(&mut br.norm.shift);
        }
        for block in &mut self.blocks {
            out.push(&mut block.dense.weight);
            out.push(&mut block.dense.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Everything a checkpoint must hold: parameter values, then the
    /// batch-norm running statistics.
    pub fn state(&self) -> Vec<&Tensor<F>> {
        let mut out: Vec<&Tensor<F>> = self.params().into_iter().map(|p| &p.value).collect();
        for br in self.conv.iter().flatten() {
            out.push(&br.norm.running_mean);
            out.push(&br.norm.running_var);
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut values: Vec<&mut Tensor<F>> = Vec::new();
        let mut stats: Vec<&mut Tensor<F>> = Vec::new();
        for br in self.conv.iter_mut().flatten() {
            values.push(&mut br.conv.weight.value);
            values.push(&mut br.conv.bias.value);
            values.push(&mut br.norm.scale.value);
            values.push(&mut br.norm.shift.value);
            stats.push(&mut br.norm.running_mean);
            stats.push(&mut br.norm.running_var);
        }
        for block in &mut self.blocks {
            values.push(&mut block.dense.weight.value);
            values.push(&mut block.dense.bias.value);
        }
        values.push(&mut self.output.weight.value);
        values.push(&mut self.output.bias.value);
        values.extend(stats);
        values
    }
}
