//! Analytic gradients against central finite differences, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rumorpipe::features::AUX_A_DIM;
use rumorpipe::models::{ConfigA, ConfigB, StanceBatch, StanceModel, VeracityModel};
use rumorpipe::nn::{
    add_l2_grad, channel_concat, channel_split, l2_penalty, masked_avg_pool, masked_avg_pool_backward, relu,
    relu_backward, softmax, softmax_backward, softmax_cross_entropy_backward, weighted_cross_entropy,
    weighted_cross_entropy_backward, BatchNorm, Conv1d, Dense, Dropout, LossSpec, Param, Tensor,
};

use super::{central_differences, relative_error};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values bounded away from zero so ReLU kinks stay out of reach.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check(name: &str, analytic: &Tensor<f64>, numeric: Vec<f64>, out: &mut Vec<(String, f64)>) {
    out.push((name.to_string(), relative_error(analytic.data(), &numeric)));
}

fn dense(out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let mut layer = Dense::<f64>::new("d", 4, 5, rng);
    let x = random(&[3, 4], rng);
    let r = random(&[3, 5], rng);
    layer.forward(&x).unwrap();
    let dx = layer.backward(&r).unwrap();
    let (dw, db) = (layer.weight.grad.clone(), layer.bias.grad.clone());
    let mut m = (layer, x);
    let loss = |m: &mut (Dense<f64>, Tensor<f64>)| dot(&m.0.forward(&m.1).unwrap(), &r);
    let n = m.1.len();
    check("dense input", &dx, central_differences(&mut m, n, |m, i| &mut m.1.data_mut()[i], loss), out);
    let n = m.0.weight.value.len();
    check("dense weight", &dw, central_differences(&mut m, n, |m, i| &mut m.0.weight.value.data_mut()[i], loss), out);
    check("dense bias", &db, central_differences(&mut m, 5, |m, i| &mut m.0.bias.value.data_mut()[i], loss), out);
}

fn conv(k: usize, out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let mut layer = Conv1d::<f64>::new("c", k, 3, 4, rng);
    let x = random(&[2, 5, 3], rng);
    let r = random(&[2, 5, 4], rng);
    layer.forward(&x).unwrap();
    let dx = layer.backward(&r, true).unwrap().unwrap();
    let (dw, db) = (layer.weight.grad.clone(), layer.bias.grad.clone());
    let mut m = (layer, x);
    let loss = |m: &mut (Conv1d<f64>, Tensor<f64>)| dot(&m.0.forward(&m.1).unwrap(), &r);
    let n = m.1.len();
    check(&format!("conv k={k} input"), &dx, central_differences(&mut m, n, |m, i| &mut m.1.data_mut()[i], loss), out);
    let n = m.0.weight.value.len();
    check(
        &format!("conv k={k} weight"),
        &dw,
        central_differences(&mut m, n, |m, i| &mut m.0.weight.value.data_mut()[i], loss),
        out,
    );
    check(
        &format!("conv k={k} bias"),
        &db,
        central_differences(&mut m, 4, |m, i| &mut m.0.bias.value.data_mut()[i], loss),
        out,
    );
}

fn batchnorm(out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let mut layer = BatchNorm::<f64>::new("bn", 3);
    for v in layer.scale.value.data_mut() {
        *v = rng.gen_range(0.5..1.5);
    }
    for v in layer.shift.value.data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let lengths = vec![5, 3];
    let mut x = random(&[2, 5, 3], rng);
    // padded positions hold zeros, as upstream layers guarantee
    for v in &mut x.data_mut()[(5 + 3) * 3..] {
        *v = 0.0;
    }
    let r = random(&[2, 5, 3], rng);
    layer.forward(&x, &lengths, true).unwrap();
    let dx = layer.backward(&r).unwrap();
    let (ds, dh) = (layer.scale.grad.clone(), layer.shift.grad.clone());
    let mut m = (layer, x);
    let loss = |m: &mut (BatchNorm<f64>, Tensor<f64>)| dot(&m.0.forward(&m.1, &lengths, true).unwrap(), &r);
    let n = m.1.len();
    check("batchnorm input", &dx, central_differences(&mut m, n, |m, i| &mut m.1.data_mut()[i], loss), out);
    check("batchnorm scale", &ds, central_differences(&mut m, 3, |m, i| &mut m.0.scale.value.data_mut()[i], loss), out);
    check("batchnorm shift", &dh, central_differences(&mut m, 3, |m, i| &mut m.0.shift.value.data_mut()[i], loss), out);
}

fn dropout(out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let mut layer = Dropout::<f64>::new(0.5).unwrap();
    let x = random(&[4, 6], rng);
    let r = random(&[4, 6], rng);
    layer.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(9));
    let dx = layer.backward(&r);
    let mut m = (layer, x);
    let n = m.1.len();
    let numeric = central_differences(&mut m, n, |m, i| &mut m.1.data_mut()[i], |m| {
        dot(&m.0.forward(&m.1, true, &mut ChaCha8Rng::seed_from_u64(9)), &r)
    });
    check("dropout input", &dx, numeric, out);
}

fn functional(out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let r3 = random(&[2, 4, 3], rng);
    let mut x = away_from_zero(&[2, 4, 3], rng);
    let y = relu(&x);
    let dx = relu_backward(&y, &r3);
    let n = x.len();
    let numeric = central_differences(&mut x, n, |x, i| &mut x.data_mut()[i], |x| dot(&relu(x), &r3));
    check("relu", &dx, numeric, out);

    let lengths = vec![4, 2];
    let r2 = random(&[2, 3], rng);
    let mut x = random(&[2, 4, 3], rng);
    let dx = masked_avg_pool_backward(&r2, &lengths, 4).unwrap();
    let numeric = central_differences(&mut x, n, |x, i| &mut x.data_mut()[i], |x| {
        dot(&masked_avg_pool(x, &lengths).unwrap(), &r2)
    });
    check("masked mean pool", &dx, numeric, out);

    let r = random(&[3, 4], rng);
    let mut x = random(&[3, 4], rng);
    let dx = softmax_backward(&softmax(&x).unwrap(), &r).unwrap();
    let numeric = central_differences(&mut x, 12, |x, i| &mut x.data_mut()[i], |x| dot(&softmax(x).unwrap(), &r));
    check("softmax", &dx, numeric, out);

    let a = random(&[2, 3, 2], rng);
    let b = random(&[2, 3, 4], rng);
    let r = random(&[2, 3, 6], rng);
    let parts = channel_split(&r, &[2, 4]).unwrap();
    let mut m = (a, b);
    let numeric = central_differences(&mut m, 12, |m, i| &mut m.0.data_mut()[i], |m| {
        dot(&channel_concat(&[&m.0, &m.1]).unwrap(), &r)
    });
    check("channel concat", &parts[0], numeric, out);
}

fn losses(out: &mut Vec<(String, f64)>, rng: &mut ChaCha8Rng) {
    let spec = LossSpec::new(vec![1.0, 1.0, 1.0, 0.2], 0.0).unwrap();
    let labels = [0usize, 3, 2];
    let mut logits = random(&[3, 4], rng);
    let probs = softmax(&logits).unwrap();
    let g_probs = weighted_cross_entropy_backward(&probs, &labels, &spec).unwrap();
    let mut p = probs.clone();
    let numeric = central_differences(&mut p, 12, |p, i| &mut p.data_mut()[i], |p| {
        weighted_cross_entropy(p, &labels, &spec, &[]).unwrap()
    });
    check("weighted cross-entropy", &g_probs, numeric, out);

    let g_logits = softmax_cross_entropy_backward(&probs, &labels, &spec).unwrap();
    let numeric = central_differences(&mut logits, 12, |x, i| &mut x.data_mut()[i], |x| {
        weighted_cross_entropy(&softmax(x).unwrap(), &labels, &spec, &[]).unwrap()
    });
    check("softmax cross-entropy", &g_logits, numeric, out);

    let mut param = Param::new("w", random(&[3, 2], rng), true);
    add_l2_grad(&mut [&mut param], 0.01);
    let analytic = param.grad.clone();
    let numeric = central_differences(&mut param, 6, |p, i| &mut p.value.data_mut()[i], |p| {
        0.01 * l2_penalty(&[&*p])
    });
    check("l2 penalty", &analytic, numeric, out);
}

/// Gradient checks for every layer and loss; `(name, relative error)`.
pub fn layer_checks() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    dense(&mut out, &mut rng);
    for k in [1, 2, 3, 4] {
        conv(k, &mut out, &mut rng);
    }
    batchnorm(&mut out, &mut rng);
    dropout(&mut out, &mut rng);
    functional(&mut out, &mut rng);
    losses(&mut out, &mut rng);
    out
}

/// Zero-initialized biases can leave a unit exactly on the ReLU kink (all of
/// its inputs dropped), where finite differences are meaningless.
fn jitter_biases<'a>(params: impl IntoIterator<Item = &'a mut Param<f64>>, rng: &mut ChaCha8Rng) {
    for p in params {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v += rng.gen_range(0.05..0.2) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
        }
    }
}

fn mini_stance(conv_layers: usize) -> (StanceModel<f64>, StanceBatch<f64>) {
    let config = ConfigA {
        conv_layers,
        kernel_sizes: vec![2, 3],
        channels: 3,
        dense_layers: 3,
        hidden: 5,
        ..ConfigA::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7 + conv_layers as u64);
    let mut model = StanceModel::<f64>::new(&config, 8, AUX_A_DIM, &mut rng).unwrap();
    jitter_biases(model.params_mut(), &mut rng);
    let lengths = vec![4, 3];
    let mut tokens = random(&[2, 4, 8], &mut rng);
    for v in &mut tokens.data_mut()[(4 + 3) * 8..] {
        *v = 0.0;
    }
    let aux = random(&[2, AUX_A_DIM], &mut rng);
    (model, StanceBatch { tokens, lengths, aux })
}

/// End-to-end stance stack (2 samples, T=4, D=8, 3 channels per kernel):
/// relative error per parameter tensor, plus every tensor concatenated.
pub fn stance_model_checks(conv_layers: usize) -> Vec<(String, f64)> {
    let (mut model, batch) = mini_stance(conv_layers);
    let labels = [1usize, 3];
    let spec = ConfigA::default().loss_spec();
    const DROPOUT_SEED: u64 = 99;
    model
        .forward_backward(&batch, &labels, &spec, &mut ChaCha8Rng::seed_from_u64(DROPOUT_SEED))
        .unwrap();
    let analytic: Vec<(String, Tensor<f64>)> = model.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let mut out = Vec::new();
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    for (idx, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let numeric = central_differences(
            &mut model,
            n,
            |m, i| &mut m.params_mut().swap_remove(idx).value.data_mut()[i],
            |m| {
                m.forward(&batch, true, &mut ChaCha8Rng::seed_from_u64(DROPOUT_SEED)).unwrap();
                m.loss(&labels, &spec).unwrap()
            },
        );
        all_a.extend_from_slice(grad.data());
        all_n.extend_from_slice(&numeric);
        out.push((format!("stance[{conv_layers} conv] {name}"), relative_error(grad.data(), &numeric)));
    }
    out.push((format!("stance[{conv_layers} conv] all parameters"), relative_error(&all_a, &all_n)));
    out
}

pub fn veracity_model_checks() -> Vec<(String, f64)> {
    let config = ConfigB {
        hidden: 6,
        ..ConfigB::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = VeracityModel::<f64>::new(&config, 15, &mut rng).unwrap();
    jitter_biases(model.params_mut(), &mut rng);
    let x = random(&[4, 15], &mut rng);
    let labels = [0usize, 2, 1, 2];
    let spec = config.loss_spec();
    model
        .forward_backward(&x, &labels, &spec, &mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();
    let grads: Vec<(String, Tensor<f64>)> = model.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let mut out = Vec::new();
    for (idx, (name, grad)) in grads.iter().enumerate() {
        let numeric = central_differences(
            &mut model,
            grad.len(),
            |m, i| &mut m.params_mut().swap_remove(idx).value.data_mut()[i],
            |m| {
                m.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
                m.loss(&labels, &spec).unwrap()
            },
        );
        out.push((format!("veracity {name}"), relative_error(grad.data(), &numeric)));
    }
    out
}
