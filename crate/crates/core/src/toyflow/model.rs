use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::net::VelocityNet;
use super::scene::{Condition, SceneSpec};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "twinmask-flow";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained velocity field together with the scene it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub seed: u64,
    pub net: VelocityNet,
    /// Minibatch loss per optimizer step.
    pub loss_curve: Vec<f64>,
    /// Loss on the fixed evaluation batch before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl FlowModel {
    /// A model whose velocity is identically zero.
    pub fn zeroed(scene: SceneSpec, width: usize) -> Self {
        let net = VelocityNet::zeroed(scene.state_dim(), scene.embed_dim(), width);
        Self {
            scene,
            train: TrainConfig {
                width,
                ..TrainConfig::default()
            },
            seed: 0,
            net,
            loss_curve: Vec::new(),
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
        }
    }

    pub fn check_condition(&self, c: &Condition) -> Result<()> {
        if c.embedding.len() != self.scene.embed_dim() {
            return Err(Error::param(
                "condition",
                format!("embedding has {} entries, model expects {}", c.embedding.len(), self.scene.embed_dim()),
            ));
        }
        if !c.unconditional && c.identity >= self.scene.identity_count {
            return Err(Error::IdentityOutOfRange {
                index: c.identity,
                count: self.scene.identity_count,
            });
        }
        Ok(())
    }

    /// `v(x, t, c)`; errors if the network output is not finite.
    pub fn velocity(&self, x: &[f64], t: f64, c: &Condition) -> Result<Vec<f64>> {
        let v = self.net.velocity(x, t, &c.embedding);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVelocity);
        }
        Ok(v)
    }

    /// `v(x_i, t, c_i)` for every row in one batched evaluation.
    pub fn velocities(&self, rows: &[(&[f64], &Condition)], t: f64) -> Result<Vec<Vec<f64>>> {
        let d = self.scene.state_dim();
        let e = self.scene.embed_dim();
        let mut states = Array2::zeros((rows.len(), d));
        let mut embeds = Array2::zeros((rows.len(), e));
        for (r, (x, c)) in rows.iter().enumerate() {
            states.row_mut(r).assign(&ArrayView1::from(*x));
            embeds.row_mut(r).assign(&ArrayView1::from(&c.embedding[..]));
        }
        let out = self.net.forward(states.view(), &vec![t; rows.len()], embeds.view());
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVelocity);
        }
        Ok(out.outer_iter().map(|r| r.to_vec()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scene_hash: self.scene.hash(),
            scene: self.scene.clone(),
            train: self.train.clone(),
            seed: self.seed,
            initial_loss: Some(self.initial_loss).filter(|v| v.is_finite()),
            final_loss: Some(self.final_loss).filter(|v| v.is_finite()),
            loss_curve: self.loss_curve.clone(),
            weights: Weights::from_net(&self.net),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        if file.scene.hash() != file.scene_hash {
            return Err(Error::Format("checkpoint scene hash does not match its scene".into()));
        }
        let net = file.weights.into_net(&file.scene)?;
        Ok(Self {
            scene: file.scene,
            train: file.train,
            seed: file.seed,
            net,
            loss_curve: file.loss_curve,
            initial_loss: file.initial_loss.unwrap_or(f64::NAN),
            final_loss: file.final_loss.unwrap_or(f64::NAN),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Loss curve as `step,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    scene_hash: String,
    scene: SceneSpec,
    train: TrainConfig,
    seed: u64,
    // absent for untrained models
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    loss_curve: Vec<f64>,
    weights: Weights,
}

#[derive(Serialize, Deserialize)]
struct Weights {
    width: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl Weights {
    fn from_net(net: &VelocityNet) -> Self {
        let flat2 = |a: &Array2<f64>| a.iter().copied().collect();
        let flat1 = |a: &Array1<f64>| a.to_vec();
        Self {
            width: net.width,
            w1: flat2(&net.w1),
            b1: flat1(&net.b1),
            w2: flat2(&net.w2),
            b2: flat1(&net.b2),
            w3: flat2(&net.w3),
            b3: flat1(&net.b3),
        }
    }

    fn into_net(self, scene: &SceneSpec) -> Result<VelocityNet> {
        let mut net = VelocityNet::zeroed(scene.state_dim(), scene.embed_dim(), self.width);
        let shape_err = |what: &str| Error::Format(format!("checkpoint weight `{what}` has the wrong size"));
        let fill2 = |dst: &mut Array2<f64>, src: Vec<f64>, what: &str| {
            if src.len() != dst.len() {
                return Err(shape_err(what));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s);
            Ok(())
        };
        fill2(&mut net.w1, self.w1, "w1")?;
        fill2(&mut net.w2, self.w2, "w2")?;
        fill2(&mut net.w3, self.w3, "w3")?;
        for (dst, src, what) in [(&mut net.b1, self.b1, "b1"), (&mut net.b2, self.b2, "b2"), (&mut net.b3, self.b3, "b3")] {
            if src.len() != dst.len() {
                return Err(shape_err(what));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s);
        }
        if !net.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite weights".into()));
        }
        Ok(net)
    }
}
