//! Training loop: random crops, one loss per crop, gradients summed over the
//! batch, one Adam step per batch.
//!
//! All randomness of step `s` comes from stream `s + 1` of a ChaCha8 generator
//! seeded with the run seed, so a run resumed from a checkpoint continues
//! exactly as the uninterrupted run would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_on_tape, sample_pairs, LossConfig};
use crate::net::{forward_on_tape, AdamConfig, AdamState, Checkpoint, LrSchedule, ModelConfig, ModelParams, TILE};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub crop: usize,
    /// Steps per epoch; `None` means one pass worth of crops, `ceil(images / batch)`.
    pub steps_per_epoch: Option<usize>,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 8,
            crop: TILE,
            steps_per_epoch: None,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Loss per sampled pair, averaged over the epoch's steps.
    pub mean_loss: f64,
    pub step_losses: Vec<f64>,
}

/// `(image index, top, left)` for `batch` crops drawn uniformly over images
/// that fit the crop and over all valid positions within them.
pub fn crop_positions(shapes: &[(usize, usize)], batch: usize, crop: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize, usize)>> {
    let fitting: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].0 >= crop && shapes[i].1 >= crop).collect();
    if fitting.is_empty() {
        return Err(Error::precondition("train", format!("crop {crop} is larger than every image")));
    }
    Ok((0..batch)
        .map(|_| {
            let i = fitting[rng.random_range(0..fitting.len())];
            let (h, w) = shapes[i];
            (i, rng.random_range(0..=h - crop), rng.random_range(0..=w - crop))
        })
        .collect())
}

pub struct Trainer {
    params: ModelParams,
    adam: AdamState,
    config: TrainConfig,
    loss: LossConfig,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        let params = ModelParams::init(model, config.seed)?;
        let adam = AdamState::new(params.tensors(), config.adam, config.schedule.at(0));
        Self::from_state(params, adam, config, loss)
    }

    pub fn resume(checkpoint: Checkpoint, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        Self::from_state(checkpoint.params, checkpoint.adam, config, loss)
    }

    fn from_state(params: ModelParams, adam: AdamState, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        loss.validate()?;
        if config.batch == 0 || config.steps_per_epoch == Some(0) {
            return Err(Error::Config("batch and steps_per_epoch must be positive".into()));
        }
        let out = params
            .config()
            .output_size(config.crop)
            .ok_or_else(|| Error::Config(format!("crop {} does not fit the network", config.crop)))?;
        if out as f64 <= 2.0 * loss.kappa {
            return Err(Error::Config(format!("crop {} leaves a {out}-pixel field, too small for kappa {}", config.crop, loss.kappa)));
        }
        Ok(Self { params, adam, config, loss })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn steps_per_epoch(&self, images: usize) -> usize {
        self.config.steps_per_epoch.unwrap_or_else(|| images.div_ceil(self.config.batch).max(1))
    }

    /// One optimizer step; returns the loss per sampled pair.
    pub fn step(&mut self, images: &[Tensor<f32>], epoch: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.adam.step + 1);
        let shapes = images
            .iter()
            .map(|img| img.dims3("train").map(|(_, h, w)| (h, w)))
            .collect::<Result<Vec<_>>>()?;
        let crops = crop_positions(&shapes, self.config.batch, self.config.crop, &mut rng)?;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.params.tensors().len()];
        let (mut total, mut pairs_seen) = (0.0, 0usize);
        for (i, y0, x0) in crops {
            let crop = images[i].crop3(y0, x0, self.config.crop, self.config.crop)?;
            let mut tape = Tape::<f32>::new();
            let vars = self.params.attach(&mut tape, true);
            let x = tape.constant(crop);
            let field = forward_on_tape(self.params.config(), &mut tape, &vars, x)?;
            let (_, h, w) = tape.value(field).dims3("train")?;
            let pairs = sample_pairs(h, w, &self.loss, &mut rng)?;
            let loss = loss_on_tape(&mut tape, field, &pairs, &self.loss)?;
            tape.backward(loss)?;
            total += tape.value(loss).data()[0] as f64;
            pairs_seen += pairs.len();
            for (acc, &v) in grads.iter_mut().zip(&vars) {
                let Some(g) = tape.take_grad(v) else { continue };
                match acc {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *acc = Some(g),
                }
            }
        }
        // Parameters that received no gradient (dead units) still take a zero step.
        for (g, t) in grads.iter_mut().zip(self.params.tensors()) {
            g.get_or_insert_with(|| vec![0.0; t.numel()]);
        }
        self.adam.lr = self.config.schedule.at(epoch);
        self.adam.step(self.params.tensors_mut(), &grads)?;
        Ok(total / pairs_seen as f64)
    }

    /// Runs the epoch that contains the current step to its end.
    pub fn run_epoch(&mut self, images: &[Tensor<f32>]) -> Result<EpochStats> {
        let per = self.steps_per_epoch(images.len()) as u64;
        let epoch = (self.adam.step / per) as usize;
        let mut step_losses = Vec::new();
        while self.adam.step < (epoch as u64 + 1) * per {
            step_losses.push(self.step(images, epoch)?);
        }
        Ok(EpochStats {
            epoch,
            lr: self.config.schedule.at(epoch),
            mean_loss: step_losses.iter().sum::<f64>() / step_losses.len() as f64,
            step_losses,
        })
    }

    /// Epoch index of the next step.
    pub fn epoch(&self, images: usize) -> usize {
        (self.adam.step / self.steps_per_epoch(images) as u64) as usize
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(
    model: &ModelConfig,
    images: &[Tensor<f32>],
    config: &TrainConfig,
    loss: &LossConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if images.is_empty() {
        return Err(Error::precondition("train", "empty dataset"));
    }
    let mut trainer = Trainer::new(model, config.clone(), loss.clone())?;
    let mut trace = Vec::with_capacity(config.epochs);
    while trainer.epoch(images.len()) < config.epochs {
        trace.push(trainer.run_epoch(images)?);
    }
    Ok((trainer.into_params(), trace))
}
