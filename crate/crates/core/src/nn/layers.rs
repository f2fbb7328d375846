//! Layers with hand-written forward and backward passes.
//!
//! Stateful layers cache what their backward pass needs during `forward`;
//! calling `backward` without a preceding training-mode `forward` is an error.
//! Sequence tensors are `[batch, time, channels]` with per-item valid lengths;
//! positions past an item's length are padding and are written as zeros.

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use super::NnError;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// Whether the L2 penalty applies (weight matrices only).
    pub regularized: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>, regularized: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
            regularized,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn fan_uniform<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.gen_range(-a..a))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn check_lengths(lengths: &[usize], batch: usize, time: usize) -> Result<(), NnError> {
    if lengths.len() != batch {
        return Err(NnError::Shape(format!(
            "{} lengths for a batch of {batch}",
            lengths.len()
        )));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > time) {
        return Err(NnError::Shape(format!(
            "sequence length {bad} outside 1..={time}"
        )));
    }
    Ok(())
}

/// 1-D convolution over time with zero padding that preserves length.
/// For even kernel sizes the extra padding column goes on the right.
#[derive(Clone, Debug)]
pub struct Conv1d<F> {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[kernel_size, in_channels, out_channels]`
    pub weight: Param<F>,
    pub bias: Param<F>,
    input: Option<Tensor<F>>,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new<R: Rng>(name: &str, kernel_size: usize, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        assert!(kernel_size >= 1, "kernel size must be positive");
        let w = fan_uniform(
            &[kernel_size, in_channels, out_channels],
            kernel_size * in_channels,
            kernel_size * out_channels,
            rng,
        );
        Conv1d {
            kernel_size,
            in_channels,
            out_channels,
            weight: Param::new(format!("{name}.weight"), w, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels]), false),
            input: None,
        }
    }

    fn left_pad(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        x.expect_ndim(3, "conv1d input")?;
        let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
        if d != self.in_channels {
            return Err(NnError::Shape(format!(
                "conv1d expects {} input channels, got {d}",
                self.in_channels
            )));
        }
        let c = self.out_channels;
        let left = self.left_pad();
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let xs = x.data();
        let mut out = Tensor::zeros(&[b, t, c]);
        let od = out.data_mut();
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut od[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                orow.copy_from_slice(bias);
                for k in 0..self.kernel_size {
                    let src = ti + k;
                    if src < left || src - left >= t {
                        continue;
                    }
                    let s = src - left;
                    let xrow = &xs[(bi * t + s) * d..(bi * t + s + 1) * d];
                    for (di, &xv) in xrow.iter().enumerate() {
                        if xv == F::zero() {
                            continue;
                        }
                        let wrow = &w[(k * d + di) * c..(k * d + di + 1) * c];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, grad_out: &Tensor<F>, need_input_grad: bool) -> Result<Option<Tensor<F>>, NnError> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| NnError::Shape("conv1d backward before forward".into()))?;
        let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
        let c = self.out_channels;
        grad_out.expect_shape(&[b, t, c], "conv1d grad")?;
        let left = self.left_pad();
        let xs = x.data();
        let g = grad_out.data();
        {
            let db = self.bias.grad.data_mut();
            for row in g.chunks_exact(c) {
                for (acc, &gv) in db.iter_mut().zip(row) {
                    *acc += gv;
                }
            }
        }
        let mut dx = if need_input_grad {
            Some(Tensor::zeros(&[b, t, d]))
        } else {
            None
        };
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        for bi in 0..b {
            for ti in 0..t {
                let grow = &g[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for k in 0..self.kernel_size {
                    let src = ti + k;
                    if src < left || src - left >= t {
                        continue;
                    }
                    let s = src - left;
                    let xrow = &xs[(bi * t + s) * d..(bi * t + s + 1) * d];
                    for (di, &xv) in xrow.iter().enumerate() {
                        let base = (k * d + di) * c;
                        if xv != F::zero() {
                            for (acc, &gv) in dw[base..base + c].iter_mut().zip(grow) {
                                *acc += xv * gv;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dot: F = w[base..base + c].iter().zip(grow).map(|(&a, &b)| a * b).sum();
                            dx.data_mut()[(bi * t + s) * d + di] += dot;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Per-channel batch normalization over all valid (batch, time) positions.
#[derive(Clone, Debug)]
pub struct BatchNorm<F> {
    pub channels: usize,
    pub scale: Param<F>,
    pub shift: Param<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BatchNormCache<F>>,
}

#[derive(Clone, Debug)]
struct BatchNormCache<F> {
    normalized: Tensor<F>,
    inv_std: Vec<F>,
    lengths: Vec<usize>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            channels,
            scale: Param::new(format!("{name}.scale"), Tensor::full(&[channels], F::one()), false),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(&[channels]), false),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], F::one()),
            momentum: 0.1,
            epsilon: 1e-5,
            cache: None,
        }
    }

    /// `x` is `[batch, time, channels]`; `lengths` marks the valid prefix of each item.
    pub fn forward(&mut self, x: &Tensor<F>, lengths: &[usize], training: bool) -> Result<Tensor<F>, NnError> {
        x.expect_ndim(3, "batchnorm input")?;
        let (b, t, c) = (x.dim(0), x.dim(1), x.dim(2));
        if c != self.channels {
            return Err(NnError::Shape(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels
            )));
        }
        check_lengths(lengths, b, t)?;
        let eps = F::of(self.epsilon);
        let xs = x.data();
        let valid_rows = || {
            lengths
                .iter()
                .enumerate()
                .flat_map(move |(bi, &l)| (0..l).map(move |ti| bi * t + ti))
        };
        let scale = self.scale.value.data();
        let shift = self.shift.value.data();
        let mut out = Tensor::zeros(&[b, t, c]);

        if !training {
            let rm = self.running_mean.data();
            let inv: Vec<F> = self.running_var.data().iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
            let od = out.data_mut();
            for r in valid_rows() {
                for ch in 0..c {
                    let xhat = (xs[r * c + ch] - rm[ch]) * inv[ch];
                    od[r * c + ch] = scale[ch] * xhat + shift[ch];
                }
            }
            self.cache = None;
            return Ok(out);
        }

        if b < 2 {
            return Err(NnError::DegenerateBatch(format!(
                "batch normalization in training mode needs at least 2 items, got {b}"
            )));
        }
        let n: usize = lengths.iter().sum();
        let nf = F::of(n as f64);
        let mut mean = vec![F::zero(); c];
        for r in valid_rows() {
            for ch in 0..c {
                mean[ch] += xs[r * c + ch];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![F::zero(); c];
        for r in valid_rows() {
            for ch in 0..c {
                let dv = xs[r * c + ch] - mean[ch];
                var[ch] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();

        let mut normalized = Tensor::zeros(&[b, t, c]);
        {
            let nd = normalized.data_mut();
            let od = out.data_mut();
            for r in valid_rows() {
                for ch in 0..c {
                    let xhat = (xs[r * c + ch] - mean[ch]) * inv_std[ch];
                    nd[r * c + ch] = xhat;
                    od[r * c + ch] = scale[ch] * xhat + shift[ch];
                }
            }
        }

        let m = F::of(self.momentum);
        let unbias = F::of(n as f64 / (n.max(2) - 1) as f64);
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (F::one() - m) * *rm + m * mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (F::one() - m) * *rv + m * var[ch] * unbias;
        }
        self.cache = Some(BatchNormCache {
            normalized,
            inv_std,
            lengths: lengths.to_vec(),
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::Shape("batchnorm backward without a training forward".into()))?;
        let xhat = &cache.normalized;
        grad_out.expect_shape(xhat.shape(), "batchnorm grad")?;
        let (t, c) = (xhat.dim(1), xhat.dim(2));
        let rows: Vec<usize> = cache
            .lengths
            .iter()
            .enumerate()
            .flat_map(|(bi, &l)| (0..l).map(move |ti| bi * t + ti))
            .collect();
        let nf = F::of(rows.len() as f64);
        let g = grad_out.data();
        let xh = xhat.data();
        let scale = self.scale.value.data();

        let mut sum_g = vec![F::zero(); c];
        let mut sum_gx = vec![F::zero(); c];
        for &r in &rows {
            for ch in 0..c {
                sum_g[ch] += g[r * c + ch];
                sum_gx[ch] += g[r * c + ch] * xh[r * c + ch];
            }
        }
        for ch in 0..c {
            self.shift.grad.data_mut()[ch] += sum_g[ch];
            self.scale.grad.data_mut()[ch] += sum_gx[ch];
        }
        let mut dx = Tensor::zeros(xhat.shape());
        let dxd = dx.data_mut();
        for &r in &rows {
            for ch in 0..c {
                // dxhat = g * scale; sums over dxhat are scale * sums over g.
                let k = scale[ch] * cache.inv_std[ch] / nf;
                dxd[r * c + ch] = k * (nf * g[r * c + ch] - sum_g[ch] - xh[r * c + ch] * sum_gx[ch]);
            }
        }
        Ok(dx)
    }
}

/// Fully connected layer, `weight` is `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    input: Option<Tensor<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = fan_uniform(&[inputs, outputs], inputs, outputs, rng);
        Dense {
            weight: Param::new(format!("{name}.weight"), w, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs]), false),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.len() + self.bias.value.len()
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        x.expect_ndim(2, "dense input")?;
        let (b, n_in) = (x.dim(0), x.dim(1));
        if n_in != self.inputs() {
            return Err(NnError::Shape(format!(
                "{} expects {} inputs, got {n_in}",
                self.weight.name,
                self.inputs()
            )));
        }
        let n_out = self.outputs();
        let w = self.weight.value.data();
        let mut out = Tensor::zeros(&[b, n_out]);
        for i in 0..b {
            let orow = out.row_mut(i);
            orow.copy_from_slice(self.bias.value.data());
            for (j, &xv) in x.row(i).iter().enumerate() {
                if xv == F::zero() {
                    continue;
                }
                for (o, &wv) in orow.iter_mut().zip(&w[j * n_out..(j + 1) * n_out]) {
                    *o += xv * wv;
                }
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| NnError::Shape("dense backward before forward".into()))?;
        let (b, n_in) = (x.dim(0), x.dim(1));
        let n_out = self.outputs();
        grad_out.expect_shape(&[b, n_out], "dense grad")?;
        let w = self.weight.value.data();
        let mut dx = Tensor::zeros(&[b, n_in]);
        for i in 0..b {
            let g = grad_out.row(i);
            for (acc, &gv) in self.bias.grad.data_mut().iter_mut().zip(g) {
                *acc += gv;
            }
            let xrow = x.row(i);
            let dw = self.weight.grad.data_mut();
            for j in 0..n_in {
                let wrow = &w[j * n_out..(j + 1) * n_out];
                let xv = xrow[j];
                for (acc, &gv) in dw[j * n_out..(j + 1) * n_out].iter_mut().zip(g) {
                    *acc += xv * gv;
                }
                dx.data_mut()[i * n_in + j] = wrow.iter().zip(g).map(|(&a, &b)| a * b).sum();
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout.
#[derive(Clone, Debug)]
pub struct Dropout<F> {
    rate: f64,
    mask: Option<Vec<F>>,
}

impl<F: Scalar> Dropout<F> {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<R: Rng>(&mut self, x: &Tensor<F>, training: bool, rng: &mut R) -> Tensor<F> {
        if !training || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = F::of(1.0 / (1.0 - self.rate));
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.rate { F::zero() } else { keep })
            .collect();
        let mut out = x.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&self, grad_out: &Tensor<F>) -> Tensor<F> {
        match &self.mask {
            None => grad_out.clone(),
            Some(mask) => {
                let mut g = grad_out.clone();
                for (o, &m) in g.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                g
            }
        }
    }
}

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward<F: Scalar>(output: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= F::zero() {
            *gv = F::zero();
        }
    }
    g
}

/// Concatenates along the last axis; all leading axes must agree.
pub fn channel_concat<F: Scalar>(xs: &[&Tensor<F>]) -> Result<Tensor<F>, NnError> {
    let first = xs
        .first()
        .ok_or_else(|| NnError::Shape("channel_concat of nothing".into()))?;
    let lead = &first.shape()[..first.ndim() - 1];
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        if x.ndim() != first.ndim() || &x.shape()[..x.ndim() - 1] != lead {
            return Err(NnError::Shape(format!(
                "channel_concat: {:?} does not match {:?}",
                x.shape(),
                first.shape()
            )));
        }
        widths.push(x.shape()[x.ndim() - 1]);
    }
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (x, &w) in xs.iter().zip(&widths) {
            data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`channel_concat`]: splits the last axis into blocks of `widths`.
pub fn channel_split<F: Scalar>(x: &Tensor<F>, widths: &[usize]) -> Result<Vec<Tensor<F>>, NnError> {
    let last = x.shape()[x.ndim() - 1];
    if widths.iter().sum::<usize>() != last {
        return Err(NnError::Shape(format!(
            "channel_split: widths {widths:?} do not sum to {last}"
        )));
    }
    let lead = &x.shape()[..x.ndim() - 1];
    let rows: usize = lead.iter().product();
    let mut outs: Vec<Vec<F>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let row = &x.data()[r * last..(r + 1) * last];
        let mut off = 0;
        for (out, &w) in outs.iter_mut().zip(widths) {
            out.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(data, &w)| {
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::from_vec(&shape, data)
        })
        .collect()
}

/// Mean over the valid time steps of each item: `[B, T, C]` to `[B, C]`.
pub fn masked_avg_pool<F: Scalar>(x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>, NnError> {
    x.expect_ndim(3, "pool input")?;
    let (b, t, c) = (x.dim(0), x.dim(1), x.dim(2));
    if t == 0 {
        return Err(NnError::Shape("average pooling over an empty time axis".into()));
    }
    check_lengths(lengths, b, t)?;
    let mut out = Tensor::zeros(&[b, c]);
    for (bi, &l) in lengths.iter().enumerate() {
        let orow = out.row_mut(bi);
        for ti in 0..l {
            let xrow = &x.data()[(bi * t + ti) * c..(bi * t + ti + 1) * c];
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o += v;
            }
        }
        let lf = F::of(l as f64);
        orow.iter_mut().for_each(|o| *o /= lf);
    }
    Ok(out)
}

pub fn global_avg_pool<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    x.expect_ndim(3, "pool input")?;
    let lengths = vec![x.dim(1); x.dim(0)];
    masked_avg_pool(x, &lengths)
}

pub fn masked_avg_pool_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    lengths: &[usize],
    time: usize,
) -> Result<Tensor<F>, NnError> {
    grad_out.expect_ndim(2, "pool grad")?;
    let (b, c) = (grad_out.dim(0), grad_out.dim(1));
    check_lengths(lengths, b, time)?;
    let mut dx = Tensor::zeros(&[b, time, c]);
    for (bi, &l) in lengths.iter().enumerate() {
        let lf = F::of(l as f64);
        let g = grad_out.row(bi);
        for ti in 0..l {
            let drow = &mut dx.data_mut()[(bi * time + ti) * c..(bi * time + ti + 1) * c];
            for (d, &gv) in drow.iter_mut().zip(g) {
                *d = gv / lf;
            }
        }
    }
    Ok(dx)
}

/// Row-wise softmax of a `[B, K]` tensor.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    x.expect_ndim(2, "softmax input")?;
    let mut out = x.clone();
    for i in 0..x.dim(0) {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output.
pub fn softmax_backward<F: Scalar>(probs: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    grad_out.expect_shape(probs.shape(), "softmax grad")?;
    let mut dx = Tensor::zeros(probs.shape());
    for i in 0..probs.dim(0) {
        let p = probs.row(i);
        let g = grad_out.row(i);
        let dot: F = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for ((d, &pv), &gv) in dx.row_mut(i).iter_mut().zip(p).zip(g) {
            *d = pv * (gv - dot);
        }
    }
    Ok(dx)
}
