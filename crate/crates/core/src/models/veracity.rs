//! Feed-forward veracity network: (dense → relu → dropout) × L → dense → softmax.

use rand::Rng;

use crate::nn::{
    add_l2_grad, relu, relu_backward, softmax, softmax_cross_entropy_backward, weighted_cross_entropy, Dense, Dropout,
    LossSpec, NnError, Param, Scalar, Tensor,
};
use crate::thread_model::Veracity;

use super::config::ConfigB;
use super::ModelError;

/// dense → relu → dropout
#[derive(Clone, Debug)]
pub struct DenseBlock<F> {
    pub dense: Dense<F>,
    dropout: Dropout<F>,
    activation: Option<Tensor<F>>,
}

impl<F: Scalar> DenseBlock<F> {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, dropout: f64, rng: &mut R) -> Result<Self, NnError> {
        Ok(DenseBlock {
            dense: Dense::new(name, inputs, outputs, rng),
            dropout: Dropout::new(dropout)?,
            activation: None,
        })
    }

    pub fn forward<R: Rng>(&mut self, x: &Tensor<F>, training: bool, rng: &mut R) -> Result<Tensor<F>, NnError> {
        let a = relu(&self.dense.forward(x)?);
        let out = self.dropout.forward(&a, training, rng);
        self.activation = Some(a);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        let a = self
            .activation
            .take()
            .ok_or_else(|| NnError::Shape("dense block backward before forward".into()))?;
        let g = relu_backward(&a, &self.dropout.backward(grad_out));
        self.dense.backward(&g)
    }
}

#[derive(Clone, Debug)]
pub struct VeracityModel<F> {
    config: ConfigB,
    input_dim: usize,
    blocks: Vec<DenseBlock<F>>,
    output: Dense<F>,
    probs: Option<Tensor<F>>,
}

impl<F: Scalar> VeracityModel<F> {
    pub fn new<R: Rng>(config: &ConfigB, input_dim: usize, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        if input_dim == 0 {
            return Err(ModelError::Config("input dimension must be positive".into()));
        }
        let mut blocks = Vec::with_capacity(config.dense_layers);
        let mut inputs = input_dim;
        for l in 0..config.dense_layers {
            blocks.push(DenseBlock::new(&format!("dense{l}"), inputs, config.hidden, config.dropout, rng)?);
            inputs = config.hidden;
        }
        let output = Dense::new("output", inputs, Veracity::ALL.len(), rng);
        Ok(VeracityModel {
            config: config.clone(),
            input_dim,
            blocks,
            output,
            probs: None,
        })
    }

    pub fn config(&self) -> &ConfigB {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Class probabilities `[B, 3]`.
    pub fn forward<R: Rng>(&mut self, x: &Tensor<F>, training: bool, rng: &mut R) -> Result<Tensor<F>, ModelError> {
        x.expect_ndim(2, "veracity features")?;
        if x.dim(1) != self.input_dim {
            return Err(NnError::Shape(format!("{} features, model expects {}", x.dim(1), self.input_dim)).into());
        }
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(&h, training, rng)?;
        }
        let probs = softmax(&self.output.forward(&h)?)?;
        probs.check_finite("veracity output")?;
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    pub fn loss(&self, labels: &[usize], spec: &LossSpec) -> Result<F, ModelError> {
        let probs = self.probs.as_ref().ok_or_else(|| NnError::Shape("loss before forward".into()))?;
        Ok(weighted_cross_entropy(probs, labels, spec, &self.params())?)
    }

    pub fn backward(&mut self, labels: &[usize], spec: &LossSpec) -> Result<(), ModelError> {
        let probs = self.probs.as_ref().ok_or_else(|| NnError::Shape("backward before forward".into()))?;
        let mut g = softmax_cross_entropy_backward(probs, labels, spec)?;
        g = self.output.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        add_l2_grad(&mut self.params_mut(), spec.l2_weight);
        Ok(())
    }

    pub fn forward_backward<R: Rng>(
        &mut self,
        x: &Tensor<F>,
        labels: &[usize],
        spec: &LossSpec,
        rng: &mut R,
    ) -> Result<F, ModelError> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        self.forward(x, true, rng)?;
        let loss = self.loss(labels, spec)?;
        self.backward(labels, spec)?;
        Ok(loss)
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend([&block.dense.weight, &block.dense.bias]);
        }
        out.extend([&self.output.weight, &self.output.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
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

    pub fn state(&self) -> Vec<&Tensor<F>> {
        self.params().into_iter().map(|p| &p.value).collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.params_mut().into_iter().map(|p| &mut p.value).collect()
    }
}
