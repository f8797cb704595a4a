use serde::{Deserialize, Serialize};

use super::{Mode, NetworkParams, StageTrace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    /// Multiplier applied at each epoch listed in `decay_epochs`.
    pub decay_factor: f64,
    /// 1-based epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    /// Fraction of the training set visited per epoch.
    pub epoch_fraction: f64,
}

impl Default for TrainSchedule {
    /// 0.1, decayed by 0.3 at epochs 40 and 60, plain SGD, 1/20 of the data
    /// per epoch.
    fn default() -> Self {
        TrainSchedule {
            initial_lr: 0.1,
            decay_factor: 0.3,
            decay_epochs: vec![40, 60],
            momentum: 0.0,
            epoch_fraction: 0.05,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay factor must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.epoch_fraction > 0.0 && self.epoch_fraction <= 1.0) {
            return Err(Error::invalid("epoch fraction must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial_lr * self.decay_factor.powi(decays as i32)
    }
}

/// A recorded training-mode forward pass.
#[derive(Debug)]
pub struct TrainPass {
    logits: Vec<f64>,
    batch: usize,
    step: u64,
    trace: Vec<StageTrace>,
}

impl TrainPass {
    /// `[batch, classes]` pre-softmax scores.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients, aligned with [`NetworkParams::tensors`]; entries
/// for non-trainable tensors are empty.
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl NetworkParams {
    /// Training-mode forward pass (batch statistics, dropout drawn from a
    /// stream keyed by the step counter) that keeps what backprop needs.
    pub fn forward_train(&self, patches: &[f64], batch: usize) -> Result<TrainPass> {
        self.check_batch(patches, batch)?;
        let mut rng = self.dropout_rng();
        let mut trace = Vec::with_capacity(self.stages.len());
        let logits = self.run(patches, batch, Mode::Train, &mut rng, Some(&mut trace));
        Ok(TrainPass {
            logits,
            batch,
            step: self.step_counter,
            trace,
        })
    }

    /// Gradients of a loss with respect to every trainable tensor, given the
    /// loss gradient on the pass's logits.
    pub fn backward(&self, pass: &TrainPass, dlogits: &[f64]) -> Result<Gradients> {
        if dlogits.len() != pass.logits.len() {
            return Err(Error::invalid(format!(
                "logit gradient has {} values, expected {}",
                dlogits.len(),
                pass.logits.len()
            )));
        }
        if pass.step != self.step_counter {
            return Err(Error::invalid("training pass is stale; parameters changed since it ran"));
        }
        Ok(Gradients(self.backward_trace(&pass.trace, pass.batch, dlogits)))
    }
}

/// Stochastic gradient descent with optional momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    schedule: TrainSchedule,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Sgd {
            schedule,
            velocity: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    /// Applies one update from a recorded pass and returns the gradient
    /// norm. On a non-finite gradient nothing is modified.
    pub fn apply(
        &mut self,
        params: &mut NetworkParams,
        pass: &TrainPass,
        dlogits: &[f64],
        epoch: usize,
    ) -> Result<f64> {
        if dlogits.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged("non-finite logit gradient".into()));
        }
        let grads = params.backward(pass, dlogits)?;
        let norm = grads.norm();
        if !norm.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "gradient norm {norm} at step {}",
                params.step_counter
            )));
        }
        let lr = self.schedule.learning_rate(epoch);
        let momentum = self.schedule.momentum;
        if momentum > 0.0 && self.velocity.is_empty() {
            self.velocity = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for (i, (tensor, grad)) in params.tensors.iter_mut().zip(&grads.0).enumerate() {
            if !tensor.trainable {
                continue;
            }
            if momentum > 0.0 {
                let v = &mut self.velocity[i];
                for ((w, g), v) in tensor.data.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
            } else {
                for (w, g) in tensor.data.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
        }
        params.update_running_stats(&pass.trace, pass.batch);
        params.step_counter += 1;
        Ok(norm)
    }

    /// Re-runs the training forward pass on `patches` and applies `dlogits`.
    /// The pass is reproducible from the step counter, so the logits match
    /// the ones `dlogits` was computed from.
    pub fn train_step(
        &mut self,
        params: &mut NetworkParams,
        patches: &[f64],
        batch: usize,
        dlogits: &[f64],
        epoch: usize,
    ) -> Result<f64> {
        let pass = params.forward_train(patches, batch)?;
        self.apply(params, &pass, dlogits, epoch)
    }
}
