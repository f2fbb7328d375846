//! Mini-batch training loops.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Adam, Scalar};

use super::config::{ConfigA, ConfigB};
use super::samples::{collate_stance, collate_veracity, StanceSample, VeracitySample};
use super::stance::StanceModel;
use super::veracity::VeracityModel;
use super::ModelError;

/// A trained network with its per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub loss_trace: Vec<f64>,
}

/// Shuffled mini-batches over `0..n`. A trailing batch of one example is
/// merged into the batch before it so batch statistics stay defined.
pub fn batch_indices<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

fn check_loss(loss: f64, epoch: usize, batch: usize) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteLoss { epoch, batch })
    }
}

/// Trains a fresh stance network on the labelled samples. Unlabelled samples
/// are ignored.
pub fn fit_stance<F: Scalar>(
    samples: &[StanceSample],
    config: &ConfigA,
    seed: u64,
) -> Result<TrainOutcome<StanceModel<F>>, ModelError> {
    let labelled: Vec<(&StanceSample, usize)> = samples
        .iter()
        .filter_map(|s| s.label.map(|l| (s, l.index())))
        .collect();
    let first = labelled.first().ok_or(ModelError::EmptyTraining)?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = StanceModel::<F>::new(config, first.tokens.dim(1), first.aux.len(), &mut rng)?;
    let spec = config.loss_spec();
    let mut adam = Adam::new(config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (bi, idx) in batch_indices(labelled.len(), config.batch_size, &mut rng).iter().enumerate() {
            let chosen: Vec<&StanceSample> = idx.iter().map(|&i| labelled[i].0).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| labelled[i].1).collect();
            let batch = collate_stance::<F>(&chosen)?;
            let loss = model.forward_backward(&batch, &labels, &spec, &mut rng)?.as_f64();
            check_loss(loss, epoch, bi)?;
            adam.step(&mut model.params_mut())?;
            total += loss * idx.len() as f64;
        }
        let mean = total / labelled.len() as f64;
        log::debug!("stance epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    if let Some(last) = trace.last() {
        log::info!("stance model trained for {} epochs, final loss {last:.5}", config.epochs);
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Trains a fresh veracity network on the labelled samples.
pub fn fit_veracity<F: Scalar>(
    samples: &[VeracitySample],
    config: &ConfigB,
    seed: u64,
) -> Result<TrainOutcome<VeracityModel<F>>, ModelError> {
    let labelled: Vec<(&VeracitySample, usize)> = samples
        .iter()
        .filter_map(|s| s.label.map(|l| (s, l.index())))
        .collect();
    let first = labelled.first().ok_or(ModelError::EmptyTraining)?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VeracityModel::<F>::new(config, first.features.len(), &mut rng)?;
    let spec = config.loss_spec();
    let mut adam = Adam::new(config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (bi, idx) in batch_indices(labelled.len(), config.batch_size, &mut rng).iter().enumerate() {
            let chosen: Vec<&VeracitySample> = idx.iter().map(|&i| labelled[i].0).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| labelled[i].1).collect();
            let x = collate_veracity::<F>(&chosen)?;
            let loss = model.forward_backward(&x, &labels, &spec, &mut rng)?.as_f64();
            check_loss(loss, epoch, bi)?;
            adam.step(&mut model.params_mut())?;
            total += loss * idx.len() as f64;
        }
        let mean = total / labelled.len() as f64;
        log::debug!("veracity epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    if let Some(last) = trace.last() {
        log::info!("veracity model trained for {} epochs, final loss {last:.5}", config.epochs);
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}
