use serde::{Deserialize, Serialize};

use crate::nn::LossSpec;

use super::ModelError;

/// Stance (SDQC) network and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigA {
    pub conv_layers: usize,
    pub kernel_sizes: Vec<usize>,
    pub channels: usize,
    pub dense_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// support, deny, query, comment
    pub class_weights: Vec<f64>,
    pub l2: f64,
}

impl Default for ConfigA {
    fn default() -> Self {
        ConfigA {
            conv_layers: 1,
            kernel_sizes: vec![2, 3],
            channels: 64,
            dense_layers: 3,
            hidden: 128,
            dropout: 0.5,
            learning_rate: 1e-3,
            batch_size: 512,
            epochs: 100,
            class_weights: vec![1.0, 1.0, 1.0, 0.2],
            l2: 1e-2,
        }
    }
}

impl ConfigA {
    /// Width of the pooled sequence vector, |S|·C (or the embedding width
    /// when there are no convolution layers).
    pub fn pooled_dim(&self, embed_dim: usize) -> usize {
        if self.conv_layers == 0 {
            embed_dim
        } else {
            self.kernel_sizes.len() * self.channels
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            class_weights: self.class_weights.clone(),
            l2_weight: self.l2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(format!("stance config: {m}")));
        if self.conv_layers > 0 && (self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0)) {
            return bad("kernel sizes must be non-empty and positive");
        }
        if self.conv_layers > 0 && self.channels == 0 {
            return bad("channels must be positive");
        }
        if self.dense_layers > 0 && self.hidden == 0 {
            return bad("hidden units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive");
        }
        if self.class_weights.len() != 4 {
            return bad("need four class weights");
        }
        self.loss_spec().validate()?;
        Ok(())
    }
}

/// Veracity network and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigB {
    pub dense_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// true, false, unverified
    pub class_weights: Vec<f64>,
    pub l2: f64,
}

impl Default for ConfigB {
    fn default() -> Self {
        ConfigB {
            dense_layers: 2,
            hidden: 512,
            dropout: 0.25,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 5000,
            class_weights: vec![1.0, 1.0, 0.3],
            l2: 1e-2,
        }
    }
}

impl ConfigB {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            class_weights: self.class_weights.clone(),
            l2_weight: self.l2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(format!("veracity config: {m}")));
        if self.dense_layers > 0 && self.hidden == 0 {
            return bad("hidden units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive");
        }
        if self.class_weights.len() != 3 {
            return bad("need three class weights");
        }
        self.loss_spec().validate()?;
        Ok(())
    }
}
