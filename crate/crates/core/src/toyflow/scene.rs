//! Procedural scenes with a known pathology region: the oracle generator.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorlab::RgbImage;
use crate::error::{Error, Result};
use crate::maskdiff::BinaryMask;
use crate::rng::rng_from_seed;

/// Sub-samples per axis when computing shape coverage of a pixel.
const SUPERSAMPLE: usize = 4;
const GRADIENT_AMPLITUDE: f64 = 30.0;
const SKIN_TONES: [[f64; 3]; 4] = [
    [214.0, 170.0, 150.0],
    [198.0, 150.0, 125.0],
    [225.0, 185.0, 165.0],
    [182.0, 134.0, 110.0],
];
const FEATURE_COLOR: [f64; 3] = [70.0, 45.0, 35.0];
const FEATURE_RADIUS: f64 = 0.06;
const FEATURE_ROW: f64 = 0.2;
/// L* below which a pixel counts as part of a feature dot.
const FEATURE_DARK_L: f64 = 45.0;
/// Erythema tint at full coverage: red lift, green and blue attenuation.
const TINT_RED_ADD: f64 = 8.0;
const TINT_GREEN_SCALE: f64 = 0.35;
const TINT_BLUE_SCALE: f64 = 0.25;
/// Scale of the one-hot condition embedding.
pub const EMBED_SCALE: f64 = 1.0;

/// Axis-aligned ellipse in normalized `[0, 1]` frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        if self.rx <= 0.0 || self.ry <= 0.0 {
            return false;
        }
        let dx = (u - self.cx) / self.rx;
        let dy = (v - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Pixels whose centers fall inside the ellipse.
    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + 0.5) / width as f64;
                let v = (y as f64 + 0.5) / height as f64;
                m.set(x, y, self.contains(u, v));
            }
        }
        m
    }

    /// Fraction of the pixel's sub-samples inside the ellipse.
    pub fn coverage(&self, x: usize, y: usize, width: usize, height: usize) -> f64 {
        coverage(|u, v| self.contains(u, v), x, y, width, height)
    }

    fn inside_frame(&self) -> bool {
        self.cx - self.rx >= 0.0
            && self.cx + self.rx <= 1.0
            && self.cy - self.ry >= 0.0
            && self.cy + self.ry <= 1.0
    }
}

/// Filled disc in normalized coordinates; the radius is relative to the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub color: [u8; 3],
}

impl Dot {
    fn contains(&self, u: f64, v: f64, aspect: f64) -> bool {
        let dx = u - self.cx;
        let dy = (v - self.cy) * aspect;
        dx * dx + dy * dy <= self.r * self.r
    }

    pub fn coverage(&self, x: usize, y: usize, width: usize, height: usize) -> f64 {
        let aspect = height as f64 / width as f64;
        coverage(|u, v| self.contains(u, v, aspect), x, y, width, height)
    }

    /// Pixels with any coverage.
    pub fn footprint(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, self.coverage(x, y, width, height) > 0.0);
            }
        }
        m
    }
}

fn coverage(inside: impl Fn(f64, f64) -> bool, x: usize, y: usize, width: usize, height: usize) -> f64 {
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let u = (x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / width as f64;
            let v = (y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / height as f64;
            hits += usize::from(inside(u, v));
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub identity_count: usize,
    pub pathology: Ellipse,
    pub distractor: Dot,
    /// Texture jitter standard deviation, in normalized `[-1, 1]` units.
    pub noise_amplitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            identity_count: 4,
            pathology: Ellipse {
                cx: 0.5,
                cy: 0.62,
                rx: 0.28,
                ry: 0.18,
            },
            distractor: Dot {
                cx: 0.9,
                cy: 0.42,
                r: 0.04,
                color: [225, 35, 70],
            },
            noise_amplitude: 0.03,
        }
    }
}

/// Per-identity appearance: skin tone, background gradient, biometric feature dot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityParams {
    pub skin: [f64; 3],
    pub gradient_angle: f64,
    pub feature: Dot,
}

impl SceneSpec {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    /// Flattened RGB dimension of a scene image.
    pub fn state_dim(&self) -> usize {
        self.width * self.height * 3
    }

    pub fn embed_dim(&self) -> usize {
        self.identity_count + 2
    }

    pub fn identity(&self, index: usize) -> Result<IdentityParams> {
        if index >= self.identity_count {
            return Err(Error::IdentityOutOfRange {
                index,
                count: self.identity_count,
            });
        }
        let n = self.identity_count;
        let fx = if n == 1 {
            0.5
        } else {
            0.2 + 0.6 * index as f64 / (n - 1) as f64
        };
        Ok(IdentityParams {
            skin: SKIN_TONES[index % SKIN_TONES.len()],
            gradient_angle: std::f64::consts::TAU * index as f64 / n as f64 + 0.3,
            feature: Dot {
                cx: fx,
                cy: FEATURE_ROW,
                r: FEATURE_RADIUS,
                color: FEATURE_COLOR.map(|c| c as u8),
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("scene", "image size must be positive"));
        }
        if self.identity_count == 0 {
            return Err(Error::param("scene", "identity_count must be at least 1"));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::param("scene", "noise_amplitude must be finite and non-negative"));
        }
        let e = &self.pathology;
        if !(e.rx > 0.0 && e.ry > 0.0) || !e.inside_frame() {
            return Err(Error::param("scene", "pathology ellipse must be non-degenerate and inside the frame"));
        }
        let d = &self.distractor;
        if d.r <= 0.0 || d.cx - d.r < 0.0 || d.cx + d.r > 1.0 || d.cy - d.r < 0.0 || d.cy + d.r > 1.0 {
            return Err(Error::param("scene", "distractor must lie inside the frame"));
        }
        let halo = self.pathology_support().dilate(1);
        if self.distractor.footprint(self.width, self.height).intersection_count(&halo) > 0 {
            return Err(Error::param("scene", "distractor overlaps the pathology region"));
        }
        for i in 0..self.identity_count {
            let f = self.identity(i)?.feature;
            if f.footprint(self.width, self.height).intersection_count(&halo) > 0 {
                return Err(Error::param("scene", format!("identity {i} feature overlaps the pathology region")));
            }
        }
        Ok(())
    }

    /// Pixels with any pathology coverage.
    pub fn pathology_support(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut m = BinaryMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, self.pathology.coverage(x, y, w, h) > 0.0);
            }
        }
        m
    }

    /// Centroid (normalized coordinates) of dark feature-like pixels, ignoring
    /// the distractor and the pathology halo. `None` if no pixel qualifies.
    pub fn locate_feature_dot(&self, img: &RgbImage) -> Option<(f64, f64)> {
        let skip = self.pathology_support().dilate(1);
        let distractor = self.distractor.footprint(self.width, self.height);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if skip.get(x, y) || distractor.get(x, y) {
                    continue;
                }
                if crate::colorlab::pixel_to_lab(img.pixel(x, y))[0] < FEATURE_DARK_L {
                    sx += (x as f64 + 0.5) / self.width as f64;
                    sy += (y as f64 + 0.5) / self.height as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Identity whose canonical feature position is closest to `pos`.
    pub fn nearest_identity(&self, pos: (f64, f64)) -> usize {
        (0..self.identity_count)
            .min_by(|&a, &b| {
                let da = self.identity(a).map(|p| (p.feature.cx - pos.0).hypot(p.feature.cy - pos.1)).unwrap_or(f64::MAX);
                let db = self.identity(b).map(|p| (p.feature.cx - pos.0).hypot(p.feature.cy - pos.1)).unwrap_or(f64::MAX);
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene spec serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn condition(&self, identity: usize, health: Health) -> Result<Condition> {
        Condition::new(self.identity_count, identity, health)
    }

    pub fn latent(&self, seed: u64) -> LatentCode {
        LatentCode::from_seed(seed, self.state_dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Pathological,
    Healthy,
}

impl Health {
    pub fn flipped(self) -> Self {
        match self {
            Health::Pathological => Health::Healthy,
            Health::Healthy => Health::Pathological,
        }
    }
}

/// Structured prompt surrogate: `(identity, health)` as a one-hot embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub identity: usize,
    pub health: Health,
    pub unconditional: bool,
    pub embedding: Vec<f64>,
}

impl Condition {
    pub fn new(identity_count: usize, identity: usize, health: Health) -> Result<Self> {
        if identity >= identity_count {
            return Err(Error::IdentityOutOfRange {
                index: identity,
                count: identity_count,
            });
        }
        let mut embedding = vec![0.0; identity_count + 2];
        embedding[identity] = EMBED_SCALE;
        embedding[identity_count + usize::from(health == Health::Healthy)] = EMBED_SCALE;
        Ok(Self {
            identity,
            health,
            unconditional: false,
            embedding,
        })
    }

    /// The empty prompt: all-zero embedding.
    pub fn unconditional(identity_count: usize) -> Self {
        Self {
            identity: 0,
            health: Health::Pathological,
            unconditional: true,
            embedding: vec![0.0; identity_count + 2],
        }
    }

    pub fn with_health(&self, health: Health) -> Self {
        let count = self.embedding.len() - 2;
        Condition::new(count, self.identity, health).expect("identity already validated")
    }

    pub fn with_identity(&self, identity: usize) -> Result<Self> {
        Condition::new(self.embedding.len() - 2, identity, self.health)
    }
}

/// Seed-derived latent anchor. The vector holds `dim` standard normal draws
/// from a ChaCha8 generator seeded with `seed`, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub seed: u64,
    pub vector: Vec<f64>,
}

impl LatentCode {
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let vector = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { seed, vector }
    }
}

/// Pixel bytes to `[-1, 1]` floats.
pub fn to_normalized(img: &RgbImage) -> Vec<f64> {
    img.as_bytes().iter().map(|&b| f64::from(b) / 127.5 - 1.0).collect()
}

/// `[-1, 1]` floats back to clamped 8-bit pixels.
pub fn from_normalized(width: usize, height: usize, x: &[f64]) -> RgbImage {
    let data = x
        .iter()
        .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::new(width, height, data).expect("normalized buffer matches frame")
}

fn blend(px: &mut [f64; 3], color: [u8; 3], alpha: f64) {
    if alpha > 0.0 {
        for (p, c) in px.iter_mut().zip(color) {
            *p = *p * (1.0 - alpha) + f64::from(c) * alpha;
        }
    }
}

/// Renders `(z, c)` deterministically: identity background and feature dot,
/// the distractor, and the erythema tint iff `c` is pathological. Texture
/// jitter depends only on `z`.
pub fn oracle_generate(spec: &SceneSpec, z: &LatentCode, c: &Condition) -> Result<RgbImage> {
    if c.unconditional {
        return Err(Error::param("condition", "the oracle renders only labelled conditions"));
    }
    let id = spec.identity(c.identity)?;
    if z.vector.len() != spec.state_dim() {
        return Err(Error::Format(format!(
            "latent has {} entries, scene needs {}",
            z.vector.len(),
            spec.state_dim()
        )));
    }
    let (w, h) = (spec.width, spec.height);
    let jitter = spec.noise_amplitude * 127.5;
    let (ca, sa) = (id.gradient_angle.cos(), id.gradient_angle.sin());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / h as f64;
            let shade = GRADIENT_AMPLITUDE * (ca * (u - 0.5) + sa * (v - 0.5));
            let base = (y * w + x) * 3;
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = id.skin[ch] + shade + jitter * z.vector[base + ch];
            }
            if c.health == Health::Pathological {
                let cov = spec.pathology.coverage(x, y, w, h);
                if cov > 0.0 {
                    px[0] += TINT_RED_ADD * cov;
                    px[1] *= 1.0 - TINT_GREEN_SCALE * cov;
                    px[2] *= 1.0 - TINT_BLUE_SCALE * cov;
                }
            }
            blend(&mut px, id.feature.color, id.feature.coverage(x, y, w, h));
            blend(&mut px, spec.distractor.color, spec.distractor.coverage(x, y, w, h));
            data.extend(px.map(|p| p.round().clamp(0.0, 255.0) as u8));
        }
    }
    RgbImage::new(w, h, data)
}

/// Exact rasterization of the pathology ellipse (pixel centers inside).
pub fn oracle_ground_truth_mask(spec: &SceneSpec) -> BinaryMask {
    spec.pathology.rasterize(spec.width, spec.height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        SceneSpec::default().validate().unwrap();
        SceneSpec::with_size(16, 16).validate().unwrap();
    }

    #[test]
    fn ground_truth_edge_cases() {
        let full = Ellipse { cx: 0.5, cy: 0.5, rx: 1.0, ry: 1.0 };
        assert_eq!(full.rasterize(8, 6).count(), 48);
        let zero = Ellipse { cx: 0.5, cy: 0.5, rx: 0.0, ry: 0.0 };
        assert!(zero.rasterize(8, 6).is_empty());
    }

    #[test]
    fn ground_truth_matches_brute_force_scan() {
        let spec = SceneSpec {
            pathology: Ellipse { cx: 0.5, cy: 0.5, rx: 0.25, ry: 0.15 },
            ..SceneSpec::default()
        };
        // independent scan in pixel units: ((px - 16) / 8)^2 + ((py - 16) / 4.8)^2 <= 1
        let mut count = 0;
        for y in 0..32 {
            for x in 0..32 {
                let dx = (x as f64 + 0.5 - 16.0) / 8.0;
                let dy = (y as f64 + 0.5 - 16.0) / 4.8;
                count += usize::from(dx * dx + dy * dy <= 1.0);
            }
        }
        assert_eq!(oracle_ground_truth_mask(&spec).count(), count);
    }

    #[test]
    fn condition_embedding() {
        let c = Condition::new(4, 2, Health::Healthy).unwrap();
        assert_eq!(c.embedding, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(Condition::unconditional(4).embedding.iter().all(|v| *v == 0.0));
        assert!(matches!(
            Condition::new(4, 4, Health::Healthy),
            Err(Error::IdentityOutOfRange { index: 4, count: 4 })
        ));
    }

    #[test]
    fn identities_move_only_the_feature() {
        let spec = SceneSpec::default();
        let a = spec.identity(0).unwrap().feature;
        let b = spec.identity(3).unwrap().feature;
        assert_ne!((a.cx, a.cy), (b.cx, b.cy));
        assert!((a.cx - 0.2).abs() < 1e-12 && (b.cx - 0.8).abs() < 1e-12);
    }

    #[test]
    fn feature_dot_is_located() {
        let spec = SceneSpec::default();
        for id in 0..spec.identity_count {
            let img = oracle_generate(&spec, &spec.latent(9), &spec.condition(id, Health::Pathological).unwrap()).unwrap();
            let pos = spec.locate_feature_dot(&img).unwrap();
            assert_eq!(spec.nearest_identity(pos), id);
        }
        assert_eq!(spec.locate_feature_dot(&RgbImage::filled(32, 32, [200, 200, 200])), None);
    }

    #[test]
    fn latent_is_replayable() {
        let a = LatentCode::from_seed(5, 100);
        assert_eq!(a, LatentCode::from_seed(5, 100));
        assert_ne!(a.vector, LatentCode::from_seed(6, 100).vector);
        let mean = a.vector.iter().sum::<f64>() / 100.0;
        assert!(mean.abs() < 0.5);
    }

    #[test]
    fn normalization_round_trip() {
        let img = RgbImage::new(2, 1, vec![0, 1, 127, 128, 254, 255]).unwrap();
        assert_eq!(from_normalized(2, 1, &to_normalized(&img)), img);
    }
}
