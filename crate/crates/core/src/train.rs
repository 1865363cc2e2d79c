//! Epoch loop: sample, forward/backward per instance, one optimizer step per
//! mini-batch, periodic validation with early stopping on HR@10.

use std::time::Instant;

use crate::data::{sample_epoch, InteractionStore, TestInstance};
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, DEFAULT_K};
use crate::models::Model;
use crate::nn::{bce_loss, sigmoid};
use crate::optim::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub neg_ratio: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub eval_every: usize,
    /// Stop after this many evaluations without a better validation HR@10.
    pub patience: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 0.001,
            l2: 1e-6,
            neg_ratio: 4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            eval_every: 1,
            patience: Some(5),
        }
    }
}

/// Mixes the run seed with the epoch number for the sampler.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs one epoch over `store` and returns the mean training BCE.
pub fn train_epoch(
    model: &mut Model,
    grads: &mut Model,
    optimizer: &mut Optimizer,
    store: &InteractionStore,
    settings: &TrainSettings,
    epoch: usize,
) -> Result<f64> {
    let data = sample_epoch(store, settings.neg_ratio, epoch_seed(settings.seed, epoch))?;
    let mut total = 0.0;
    for batch in data.batches(settings.batch_size) {
        for k in 0..batch.len() {
            let (u, i, y) = (batch.users[k], batch.items[k], batch.labels[k]);
            let tape = model.forward_unchecked(store, u, i);
            let p = sigmoid(tape.logit());
            total += bce_loss(p, y);
            // σ and BCE fused: ∂L/∂logit = ŷ − y
            model.backward(store, &tape, p - y, grads)?;
        }
        optimizer.step(model, grads, batch.len())?;
    }
    Ok(total / data.len() as f64)
}

/// Mean BCE of `model` over `instances` without updating anything.
pub fn mean_loss(model: &Model, store: &InteractionStore, users: &[usize], items: &[usize], labels: &[f64]) -> f64 {
    let total: f64 = users
        .iter()
        .zip(items)
        .zip(labels)
        .map(|((&u, &i), &y)| bce_loss(sigmoid(model.forward_unchecked(store, u, i).logit()), y))
        .sum();
    total / users.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation HR@10 (the last model when no
    /// validation set is given).
    pub best: Model,
    pub best_report: Option<EvalReport>,
    pub epochs_run: usize,
    pub losses: Vec<f64>,
    pub seconds: f64,
}

/// Trains `model` in place. `on_report` sees every validation report,
/// starting with the untrained model at epoch 0.
pub fn fit(
    model: &mut Model,
    store: &InteractionStore,
    validation: Option<&[TestInstance]>,
    settings: &TrainSettings,
    mut on_report: impl FnMut(&EvalReport) -> Result<()>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut optimizer = Optimizer::new(settings.optimizer, settings.lr, settings.l2);
    let mut grads = model.zeros_like();
    let mut best = model.clone();
    let mut best_report: Option<EvalReport> = None;
    let mut stale = 0;
    let mut losses = Vec::new();

    let mut validate = |model: &Model, epoch: usize, loss: Option<f64>| -> Result<Option<EvalReport>> {
        let Some(instances) = validation else { return Ok(None) };
        let mut report = evaluate(model, store, instances, DEFAULT_K)?;
        report.epoch = epoch;
        report.loss = loss;
        report.split = Some("validation".into());
        on_report(&report)?;
        Ok(Some(report))
    };

    if let Some(r) = validate(model, 0, None)? {
        best_report = Some(r);
    }

    let mut epochs_run = 0;
    for epoch in 1..=settings.epochs {
        let loss = train_epoch(model, &mut grads, &mut optimizer, store, settings, epoch)?;
        losses.push(loss);
        epochs_run = epoch;
        log::info!("epoch {epoch}: loss {loss:.6}");

        let due = epoch % settings.eval_every.max(1) == 0 || epoch == settings.epochs;
        if !due {
            continue;
        }
        let Some(report) = validate(model, epoch, Some(loss))? else {
            best = model.clone();
            continue;
        };
        let improved = best_report
            .as_ref()
            .is_none_or(|b| report.hr_at(DEFAULT_K) > b.hr_at(DEFAULT_K));
        if improved {
            best = model.clone();
            best_report = Some(report);
            stale = 0;
        } else {
            stale += 1;
            if settings.patience.is_some_and(|p| stale >= p) {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    if validation.is_none() {
        best = model.clone();
    }

    Ok(TrainOutcome {
        best,
        best_report,
        epochs_run,
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}
