use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class-weighted cross-entropy with an L2 penalty on weight matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub class_weights: Vec<f64>,
    pub l2_weight: f64,
}

impl LossSpec {
    pub fn new(class_weights: Vec<f64>, l2_weight: f64) -> Result<Self, NnError> {
        let spec = LossSpec {
            class_weights,
            l2_weight,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.class_weights.is_empty() || self.class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(NnError::Parameter(format!(
                "class weights must be positive and finite, got {:?}",
                self.class_weights
            )));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(NnError::Parameter(format!("l2 weight {} must be >= 0", self.l2_weight)));
        }
        Ok(())
    }

    fn check_labels(&self, batch: usize, k: usize, labels: &[usize]) -> Result<(), NnError> {
        if k != self.class_weights.len() {
            return Err(NnError::Shape(format!(
                "{k} classes but {} class weights",
                self.class_weights.len()
            )));
        }
        if labels.len() != batch {
            return Err(NnError::Shape(format!("{} labels for batch of {batch}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NnError::Shape(format!("label {bad} out of range for {k} classes")));
        }
        Ok(())
    }
}

/// Sum of squared entries over the regularized parameters.
pub fn l2_penalty<F: Scalar>(params: &[&Param<F>]) -> F {
    params
        .iter()
        .filter(|p| p.regularized)
        .map(|p| p.value.sum_squares())
        .sum()
}

/// `(1/B) Σ w[y]·(-ln p[y]) + l2 · Σ‖W‖²` over the regularized parameters.
pub fn weighted_cross_entropy<F: Scalar>(
    probs: &Tensor<F>,
    labels: &[usize],
    spec: &LossSpec,
    params: &[&Param<F>],
) -> Result<F, NnError> {
    probs.expect_ndim(2, "loss probabilities")?;
    let (b, k) = (probs.dim(0), probs.dim(1));
    spec.check_labels(b, k, labels)?;
    if b == 0 {
        return Err(NnError::Shape("loss over an empty batch".into()));
    }
    let floor = F::of(PROB_FLOOR);
    let mut total = F::zero();
    for (i, &y) in labels.iter().enumerate() {
        let mut p = probs.row(i)[y];
        if p < floor {
            log::warn!("probability {p} at gold label clamped to {PROB_FLOOR}");
            p = floor;
        }
        total += F::of(spec.class_weights[y]) * -p.ln();
    }
    let data_loss = total / F::of(b as f64);
    Ok(data_loss + F::of(spec.l2_weight) * l2_penalty(params))
}

/// Gradient of the data term with respect to the probabilities.
pub fn weighted_cross_entropy_backward<F: Scalar>(
    probs: &Tensor<F>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<Tensor<F>, NnError> {
    probs.expect_ndim(2, "loss probabilities")?;
    let (b, k) = (probs.dim(0), probs.dim(1));
    spec.check_labels(b, k, labels)?;
    let floor = F::of(PROB_FLOOR);
    let bf = F::of(b as f64);
    let mut g = Tensor::zeros(&[b, k]);
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.row(i)[y];
        if p >= floor {
            g.row_mut(i)[y] = -F::of(spec.class_weights[y]) / (bf * p);
        }
    }
    Ok(g)
}

/// Gradient of the data term with respect to the softmax logits:
/// `w[y]/B · (p - onehot(y))`. Equal to chaining [`weighted_cross_entropy_backward`]
/// through `softmax_backward` but stable when a probability underflows.
pub fn softmax_cross_entropy_backward<F: Scalar>(
    probs: &Tensor<F>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<Tensor<F>, NnError> {
    probs.expect_ndim(2, "loss probabilities")?;
    let (b, k) = (probs.dim(0), probs.dim(1));
    spec.check_labels(b, k, labels)?;
    let bf = F::of(b as f64);
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let w = F::of(spec.class_weights[y]) / bf;
        let row = g.row_mut(i);
        row[y] -= F::one();
        row.iter_mut().for_each(|v| *v *= w);
    }
    Ok(g)
}

/// Adds `2·l2·W` to the gradient of every regularized parameter.
pub fn add_l2_grad<F: Scalar>(params: &mut [&mut Param<F>], l2_weight: f64) {
    if l2_weight == 0.0 {
        return;
    }
    let k = F::of(2.0 * l2_weight);
    for p in params.iter_mut().filter(|p| p.regularized) {
        let Param { value, grad, .. } = &mut **p;
        for (g, &w) in grad.data_mut().iter_mut().zip(value.data()) {
            *g += k * w;
        }
    }
}
