use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::FlowModel;
use super::net::{Adam, VelocityNet};
use super::scene::{from_normalized, oracle_generate, to_normalized, Condition, Health, LatentCode, SceneSpec};
use crate::colorlab::RgbImage;
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Learning rate at the last step, reached by cosine decay.
    pub lr_final: f64,
    /// Per-sample probability of training on the unconditional embedding.
    pub cond_dropout: f64,
    /// Samples in the fixed batch used for the before/after loss.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            width: 256,
            batch_size: 32,
            steps: 1500,
            lr: 1e-3,
            lr_final: 5e-5,
            cond_dropout: 0.1,
            eval_batch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::param("train", "width and batch sizes must be positive"));
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0) {
            return Err(Error::param("lr", "learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::param("cond_dropout", "must be a probability"));
        }
        Ok(())
    }
}

/// One flow-matching minibatch: `x_t`, `t`, embeddings, and targets `x1 - x0`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub states: Array2<f64>,
    pub times: Vec<f64>,
    pub embeds: Array2<f64>,
    pub targets: Array2<f64>,
}

/// Draws a batch from the oracle. The noise endpoint `x0` is the latent
/// vector itself, so the learned transport maps a latent anchor to the
/// oracle render that shares its texture.
pub fn training_batch(spec: &SceneSpec, size: usize, cond_dropout: f64, rng: &mut Rng) -> Result<TrainingBatch> {
    let d = spec.state_dim();
    let e = spec.embed_dim();
    let mut states = Array2::zeros((size, d));
    let mut targets = Array2::zeros((size, d));
    let mut embeds = Array2::zeros((size, e));
    let mut times = Vec::with_capacity(size);
    for i in 0..size {
        let z = LatentCode::from_seed(rng.random(), d);
        let identity = rng.random_range(0..spec.identity_count);
        let health = if rng.random_bool(0.5) {
            Health::Pathological
        } else {
            Health::Healthy
        };
        let c = Condition::new(spec.identity_count, identity, health)?;
        let x1 = to_normalized(&oracle_generate(spec, &z, &c)?);
        let t: f64 = rng.random();
        let drop = rng.random::<f64>() < cond_dropout;
        for k in 0..d {
            let x0 = z.vector[k];
            states[[i, k]] = (1.0 - t) * x0 + t * x1[k];
            targets[[i, k]] = x1[k] - x0;
        }
        if !drop {
            for (k, v) in c.embedding.iter().enumerate() {
                embeds[[i, k]] = *v;
            }
        }
        times.push(t);
    }
    Ok(TrainingBatch {
        states,
        times,
        embeds,
        targets,
    })
}

impl TrainingBatch {
    pub fn loss(&self, net: &VelocityNet) -> f64 {
        let v = net.forward(self.states.view(), &self.times, self.embeds.view());
        let n = v.len() as f64;
        v.iter().zip(&self.targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
    }
}

/// Flow-matching training with Adam. Deterministic given `seed`.
pub fn train_flow(spec: &SceneSpec, hp: &TrainConfig, seed: u64) -> Result<FlowModel> {
    spec.validate()?;
    hp.validate()?;
    let streams = SeedStream::new(seed);
    let mut net = VelocityNet::init(spec.state_dim(), spec.embed_dim(), hp.width, &mut streams.rng("init", 0));
    let eval = training_batch(spec, hp.eval_batch, hp.cond_dropout, &mut streams.rng("eval", 0))?;
    let initial_loss = eval.loss(&net);

    let mut data_rng = streams.rng("data", 0);
    let mut adam = Adam::new(net.param_count(), hp.lr);
    let mut loss_curve = Vec::with_capacity(hp.steps);
    for step in 0..hp.steps {
        let batch = training_batch(spec, hp.batch_size, hp.cond_dropout, &mut data_rng)?;
        let (loss, grads) = net.loss_and_grad(batch.states.view(), &batch.times, batch.embeds.view(), batch.targets.view());
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        loss_curve.push(loss);
        let progress = step as f64 / hp.steps.max(2).saturating_sub(1) as f64;
        let lr = hp.lr_final + 0.5 * (hp.lr - hp.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.step(&mut net, &grads, lr);
    }
    let final_loss = eval.loss(&net);
    if !final_loss.is_finite() || !net.is_finite() {
        return Err(Error::TrainingDiverged {
            step: hp.steps,
            loss: final_loss,
        });
    }
    Ok(FlowModel {
        scene: spec.clone(),
        train: hp.clone(),
        seed,
        net,
        loss_curve,
        initial_loss,
        final_loss,
    })
}

/// Euler integration from `x0 = z` at `t = 0` to `t = 1`, in normalized space.
pub fn sample_normalized(model: &FlowModel, z: &LatentCode, c: &Condition, steps: usize) -> Result<Vec<f64>> {
    Ok(sample_normalized_many(model, z, &[c], steps)?.remove(0))
}

/// [`sample_normalized`] for several conditions from one latent, integrated
/// as a batch.
pub fn sample_normalized_many(model: &FlowModel, z: &LatentCode, conds: &[&Condition], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    for c in conds {
        model.check_condition(c)?;
    }
    if z.vector.len() != model.scene.state_dim() {
        return Err(Error::dims(
            "sample (latent vs model)",
            (z.vector.len(), 1),
            (model.scene.state_dim(), 1),
        ));
    }
    let dt = 1.0 / steps as f64;
    let mut xs = vec![z.vector.clone(); conds.len()];
    for k in 0..steps {
        let rows: Vec<(&[f64], &Condition)> = xs.iter().map(Vec::as_slice).zip(conds.iter().copied()).collect();
        let vs = model
            .velocities(&rows, k as f64 * dt)
            .map_err(|_| Error::SamplerDiverged { step: k })?;
        for (x, v) in xs.iter_mut().zip(vs) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += dt * vi;
            }
        }
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDiverged { step: k });
        }
    }
    Ok(xs)
}

pub fn sample(model: &FlowModel, z: &LatentCode, c: &Condition, steps: usize) -> Result<RgbImage> {
    let x = sample_normalized(model, z, c, steps)?;
    Ok(from_normalized(model.scene.width, model.scene.height, &x))
}

pub fn sample_many(model: &FlowModel, z: &LatentCode, conds: &[&Condition], steps: usize) -> Result<Vec<RgbImage>> {
    let (w, h) = (model.scene.width, model.scene.height);
    Ok(sample_normalized_many(model, z, conds, steps)?
        .iter()
        .map(|x| from_normalized(w, h, x))
        .collect())
}
