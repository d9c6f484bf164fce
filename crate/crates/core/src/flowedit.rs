//! Inversion-free editing with mixed classifier-free guidance.
//!
//! The mixed field is
//!
//! ```text
//! v̂ = v_uncond + γ_src (v_src − v_uncond) + γ_tgt (v_tgt − v_uncond)
//! ```
//!
//! and [`flow_edit`] integrates a displacement `D` between a target branch and
//! a source branch that share freshly noised copies of the source image:
//!
//! ```text
//! Y_s    = (1 − s) X_src + s ε_s
//! Z_src  = Y_s,  Z_tgt = Y_s + D
//! D     += Δs (v̂_tgt(Z_tgt) − v̂_src(Z_src))
//! ```
//!
//! for `s = s_max, s_max − Δs, …, Δs`. Each branch uses its own guidance
//! scale against the unconditional field. Noise level `s` is time `t = 1 − s`.

use serde::{Deserialize, Serialize};

use crate::colorlab::RgbImage;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::toyflow::{from_normalized, to_normalized, Condition, FlowModel, LatentCode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceParams {
    pub gamma_src: f64,
    pub gamma_tgt: f64,
    pub steps: usize,
    pub s_max: f64,
    pub noise_seed: u64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            gamma_src: 1.5,
            gamma_tgt: 2.0,
            steps: 50,
            s_max: 0.9,
            noise_seed: 0,
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if !(self.gamma_src >= 0.0 && self.gamma_src.is_finite()) {
            return Err(Error::param("gamma_src", "must be finite and non-negative"));
        }
        if !(self.gamma_tgt >= 0.0 && self.gamma_tgt.is_finite()) {
            return Err(Error::param("gamma_tgt", "must be finite and non-negative"));
        }
        if !(self.s_max > 0.0 && self.s_max <= 1.0) {
            return Err(Error::param("s_max", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Seed of the de-identified latent anchor handed to twin synthesis.
    pub fn anchor_seed(&self) -> u64 {
        SeedStream::new(self.noise_seed).seed("anchor", 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub s: f64,
    /// Euclidean norm of `D` after the update.
    pub displacement_norm: f64,
    /// Max-abs of `D` after the update.
    pub displacement_max: f64,
    /// Euclidean norm of `v̂_tgt − v̂_src`.
    pub velocity_diff_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditTrace {
    pub steps: Vec<TraceStep>,
}

impl EditTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_displacement(&self) -> f64 {
        self.steps.iter().map(|s| s.displacement_max).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,s,displacement_norm,displacement_max,velocity_diff_norm\n");
        for (i, st) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                st.s, st.displacement_norm, st.displacement_max, st.velocity_diff_norm
            ));
        }
        out
    }
}

/// Mixed guidance over precomputed velocities.
pub fn mix_velocities(v_uncond: &[f64], v_src: &[f64], v_tgt: &[f64], gamma_src: f64, gamma_tgt: f64) -> Vec<f64> {
    assert!(v_uncond.len() == v_src.len() && v_src.len() == v_tgt.len(), "velocity dimensions");
    v_uncond
        .iter()
        .zip(v_src)
        .zip(v_tgt)
        .map(|((u, s), t)| u + gamma_src * (s - u) + gamma_tgt * (t - u))
        .collect()
}

/// Evaluates the unconditional, source and target fields at the same `(x, t)`
/// and mixes them.
pub fn guided_velocity(
    model: &FlowModel,
    x: &[f64],
    t: f64,
    c_src: &Condition,
    c_tgt: &Condition,
    g: &GuidanceParams,
) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("x", "state must be finite"));
    }
    let uncond = Condition::unconditional(model.scene.identity_count);
    let v = model.velocities(&[(x, &uncond), (x, c_src), (x, c_tgt)], t)?;
    Ok(mix_velocities(&v[0], &v[1], &v[2], g.gamma_src, g.gamma_tgt))
}

/// `v_uncond + γ (v_c − v_uncond)`: one branch of the edit.
fn branch(v_u: &[f64], v_c: &[f64], gamma: f64) -> Vec<f64> {
    v_u.iter().zip(v_c).map(|(u, v)| u + gamma * (v - u)).collect()
}

/// Edit result before denormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EditOutput {
    /// `X_src + D` in `[-1, 1]` units, unclamped.
    pub normalized: Vec<f64>,
    pub image: RgbImage,
    pub trace: EditTrace,
}

pub fn flow_edit(
    model: &FlowModel,
    source: &RgbImage,
    c_src: &Condition,
    c_tgt: &Condition,
    g: &GuidanceParams,
) -> Result<EditOutput> {
    g.validate()?;
    let scene = &model.scene;
    if source.dims() != (scene.width, scene.height) {
        return Err(Error::dims("flow_edit (source vs model)", source.dims(), (scene.width, scene.height)));
    }
    model.check_condition(c_src)?;
    model.check_condition(c_tgt)?;
    let x_src = to_normalized(source);
    let dim = x_src.len();
    let uncond = Condition::unconditional(scene.identity_count);
    let noise = SeedStream::new(g.noise_seed);
    let ds = g.s_max / g.steps as f64;

    let mut d = vec![0.0; dim];
    let mut trace = EditTrace::default();
    let mut z_tgt = vec![0.0; dim];
    for k in 0..g.steps {
        let s = g.s_max - k as f64 * ds;
        let t = 1.0 - s;
        let eps = LatentCode::from_seed(noise.seed("edit-noise", k as u64), dim).vector;
        let z_src: Vec<f64> = x_src.iter().zip(&eps).map(|(x, e)| (1.0 - s) * x + s * e).collect();
        for ((zt, zs), di) in z_tgt.iter_mut().zip(&z_src).zip(&d) {
            *zt = zs + di;
        }
        let v = model.velocities(&[(&z_src, &uncond), (&z_src, c_src), (&z_tgt, &uncond), (&z_tgt, c_tgt)], t)?;
        let v_src = branch(&v[0], &v[1], g.gamma_src);
        let v_tgt = branch(&v[2], &v[3], g.gamma_tgt);
        let mut diff_sq = 0.0;
        for ((di, vt), vs) in d.iter_mut().zip(&v_tgt).zip(&v_src) {
            let dv = vt - vs;
            diff_sq += dv * dv;
            *di += ds * dv;
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::EditDiverged { step: k });
        }
        trace.steps.push(TraceStep {
            s,
            displacement_norm: d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            displacement_max: d.iter().map(|v| v.abs()).fold(0.0, f64::max),
            velocity_diff_norm: diff_sq.sqrt(),
        });
    }
    let normalized: Vec<f64> = x_src.iter().zip(&d).map(|(x, di)| x + di).collect();
    let image = from_normalized(scene.width, scene.height, &normalized);
    Ok(EditOutput {
        normalized,
        image,
        trace,
    })
}

/// A de-identified surrogate and the latent anchor that names it.
#[derive(Debug, Clone, PartialEq)]
pub struct DeIdentified {
    pub image: RgbImage,
    pub anchor: LatentCode,
    pub trace: EditTrace,
}

/// Edits `original` from its identity to the surrogate identity and derives
/// the surrogate's latent anchor from `g.noise_seed`.
pub fn de_identify(
    model: &FlowModel,
    original: &RgbImage,
    src_c: &Condition,
    surrogate_c: &Condition,
    g: &GuidanceParams,
) -> Result<DeIdentified> {
    check_surrogate(src_c, surrogate_c)?;
    let out = flow_edit(model, original, src_c, surrogate_c, g)?;
    Ok(DeIdentified {
        image: out.image,
        anchor: LatentCode::from_seed(g.anchor_seed(), model.scene.state_dim()),
        trace: out.trace,
    })
}

pub(crate) fn check_surrogate(src_c: &Condition, surrogate_c: &Condition) -> Result<()> {
    if src_c.unconditional || surrogate_c.unconditional {
        return Err(Error::param("condition", "de-identification needs labelled conditions"));
    }
    if src_c.identity == surrogate_c.identity {
        return Err(Error::param(
            "surrogate identity",
            format!("identity {} mapped to itself is a no-op edit", src_c.identity),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyflow::{Health, SceneSpec};

    #[test]
    fn eq1_corner_cases() {
        let u = [0.0, 0.0];
        let s = [2.0, 0.0];
        let t = [0.0, 4.0];
        assert_eq!(mix_velocities(&u, &s, &t, 0.5, 0.5), vec![1.0, 2.0]);
        assert_eq!(mix_velocities(&[1.0, -1.0], &s, &t, 0.0, 0.0), vec![1.0, -1.0]);
        assert_eq!(mix_velocities(&[1.0, -1.0], &s, &t, 1.0, 0.0), s.to_vec());
    }

    #[test]
    fn validation() {
        let bad = [
            GuidanceParams { steps: 0, ..Default::default() },
            GuidanceParams { gamma_src: -1.0, ..Default::default() },
            GuidanceParams { s_max: 0.0, ..Default::default() },
            GuidanceParams { s_max: 1.5, ..Default::default() },
        ];
        for g in bad {
            assert!(g.validate().is_err(), "{g:?}");
        }
    }

    #[test]
    fn zero_model_edit_is_identity() {
        let scene = SceneSpec::with_size(4, 4);
        let model = FlowModel::zeroed(scene.clone(), 3);
        let src = RgbImage::new(4, 4, (0..48).map(|i| (i * 5) as u8).collect()).unwrap();
        let a = scene.condition(0, Health::Pathological).unwrap();
        let b = scene.condition(1, Health::Pathological).unwrap();
        let out = flow_edit(&model, &src, &a, &b, &GuidanceParams { steps: 7, ..Default::default() }).unwrap();
        assert_eq!(out.image, src);
        assert_eq!(out.trace.len(), 7);
        assert_eq!(out.trace.max_displacement(), 0.0);
    }

    #[test]
    fn same_identity_rejected() {
        let scene = SceneSpec::with_size(4, 4);
        let model = FlowModel::zeroed(scene.clone(), 3);
        let src = RgbImage::filled(4, 4, [1, 2, 3]);
        let a = scene.condition(2, Health::Pathological).unwrap();
        let err = de_identify(&model, &src, &a, &a, &GuidanceParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn dimension_mismatch() {
        let scene = SceneSpec::with_size(4, 4);
        let model = FlowModel::zeroed(scene.clone(), 3);
        let a = scene.condition(0, Health::Pathological).unwrap();
        let err = flow_edit(&model, &RgbImage::filled(3, 4, [0; 3]), &a, &a, &GuidanceParams::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
