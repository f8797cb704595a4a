use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::Model;
use crate::alphabet::Alphabet;
use crate::charnet::{build_network, NetworkConfig, Sgd, TrainSchedule};
use crate::ctc::{ctc_logit_gradient, LabelSequence};
use crate::error::{Error, Result};
use crate::textline::{extract_windows, read_pgm, ManifestRecord, TextLineImage, WindowConfig};

const SHUFFLE_SALT: u64 = 0x5eed_0f5a_11e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetProfile {
    /// The full 15-layer topology.
    Full,
    /// The reduced CPU profile.
    Desk,
}

impl NetProfile {
    pub fn config(self, classes: usize, input_channels: usize, seed: u64) -> NetworkConfig {
        match self {
            NetProfile::Full => NetworkConfig::full(classes, input_channels, seed),
            NetProfile::Desk => NetworkConfig::desk(classes, input_channels, seed),
        }
    }
}

impl fmt::Display for NetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetProfile::Full => "paper",
            NetProfile::Desk => "desk",
        })
    }
}

impl FromStr for NetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(NetProfile::Full),
            "desk" => Ok(NetProfile::Desk),
            other => Err(Error::invalid(format!("unknown network profile {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub profile: NetProfile,
    pub windows: WindowConfig,
    pub schedule: TrainSchedule,
    pub epochs: usize,
    /// Lines whose windows go through one forward pass, sharing batch-norm
    /// statistics and one SGD step.
    pub batch_lines: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(profile: NetProfile, windows: WindowConfig) -> Self {
        TrainConfig {
            profile,
            windows,
            schedule: TrainSchedule::default(),
            epochs: 1,
            batch_lines: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        self.schedule.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_lines == 0 {
            return Err(Error::invalid("batch must hold at least one line"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Lines that contributed a gradient.
    pub lines: usize,
    /// Lines skipped because their transcript needs more frames than the
    /// line yields.
    pub skipped: usize,
    /// Mean per-line CTC loss of the contributing lines.
    pub mean_loss: f64,
}

struct Sample {
    line: TextLineImage,
    target: LabelSequence,
}

/// Loads, normalizes and encodes a manifest's lines for training.
fn load_samples(records: &[ManifestRecord], alphabet: &Alphabet, windows: &WindowConfig) -> Result<Vec<Sample>> {
    records
        .par_iter()
        .map(|r| {
            let raw = read_pgm(&r.resolved)?;
            Ok(Sample {
                line: windows.normalize(&raw)?,
                target: LabelSequence::new(alphabet.encode(&r.transcript)?)?,
            })
        })
        .collect()
}

/// Epoch-by-epoch training of a fresh network on manifest records. Each
/// epoch visits a seeded random `epoch_fraction` of the lines in batches of
/// `batch_lines`.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    samples: Vec<Sample>,
    sgd: Sgd,
    per_epoch: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(records: &[ManifestRecord], alphabet: &Alphabet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::invalid("training manifest is empty"));
        }
        let net = cfg.profile.config(alphabet.num_classes(), cfg.windows.channels(), cfg.seed);
        if net.input_size != cfg.windows.patch_size {
            return Err(Error::InvalidConfig(format!(
                "{} network takes {}-pixel patches, not {}",
                cfg.profile, net.input_size, cfg.windows.patch_size
            )));
        }
        let model = Model::new(build_network(&net)?, alphabet.clone(), cfg.windows.clone())?;
        let samples = load_samples(records, alphabet, &cfg.windows)?;
        let per_epoch = ((samples.len() as f64 * cfg.schedule.epoch_fraction).ceil() as usize).clamp(1, samples.len());
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            sgd: Sgd::new(cfg.schedule.clone())?,
            samples,
            per_epoch,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        self.epoch += 1;
        let epoch = self.epoch;
        let cfg = &self.cfg;
        let classes = self.model.params.classes();
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order.truncate(self.per_epoch);

        let mut stats = EpochStats {
            epoch,
            learning_rate: cfg.schedule.learning_rate(epoch),
            lines: 0,
            skipped: 0,
            mean_loss: 0.0,
        };
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_lines) {
            let seqs = chunk
                .par_iter()
                .map(|&i| extract_windows(&self.samples[i].line, &cfg.windows))
                .collect::<Result<Vec<_>>>()?;
            let frames: usize = seqs.iter().map(|s| s.positions()).sum();
            let mut patches = Vec::with_capacity(frames * self.model.params.input_len());
            for s in &seqs {
                patches.extend_from_slice(s.patches());
            }
            let pass = self.model.params.forward_train(&patches, frames)?;
            let mut dlogits = vec![0.0; frames * classes];
            let mut used = 0;
            let mut start = 0;
            for (s, &i) in seqs.iter().zip(chunk) {
                let t = s.positions();
                let span = start * classes..(start + t) * classes;
                start += t;
                match ctc_logit_gradient(&pass.logits()[span.clone()], t, classes, &self.samples[i].target) {
                    Ok(g) => {
                        dlogits[span].copy_from_slice(&g.grad);
                        loss_sum += g.loss;
                        used += 1;
                    }
                    Err(Error::InfeasibleTarget { .. }) => stats.skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            let scale = 1.0 / used as f64;
            dlogits.iter_mut().for_each(|g| *g *= scale);
            self.sgd.apply(&mut self.model.params, &pass, &dlogits, epoch)?;
            stats.lines += used;
        }
        stats.mean_loss = if stats.lines > 0 {
            loss_sum / stats.lines as f64
        } else {
            f64::NAN
        };
        Ok(stats)
    }
}

/// Runs all `cfg.epochs` epochs; `progress` sees every finished epoch.
pub fn train_model(
    records: &[ManifestRecord],
    alphabet: &Alphabet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(records, alphabet, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = trainer.train_epoch()?;
        progress(&stats);
        history.push(stats);
    }
    Ok((trainer.into_model(), history))
}
