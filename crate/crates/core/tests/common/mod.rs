//! Shared fixtures: the reference flow model, frozen bounds and the
//! independent oracles used by several test targets.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use twinmask::colorlab::a_diff_map;
use twinmask::flowedit::{de_identify, GuidanceParams};
use twinmask::maskdiff::{calibrate_threshold, default_grid, threshold_mask};
use twinmask::toyflow::{oracle_generate, oracle_ground_truth_mask, train_flow, FlowModel, Health, SceneSpec, TrainConfig};
use twinmask::{BinaryMask, DiffMap};

pub const REFERENCE_SEED: u64 = 7;

/// Frozen from fixture runs of the reference model (32×32, 1500 steps, seed 7).
pub mod bounds {
    /// Median trained-pipeline IoU against ground truth. Measured 0.997.
    pub const TRAINED_PIPELINE_MEDIAN_IOU: f64 = 0.90;
    /// Minimum edited-vs-source pathology mask IoU. Measured 0.953.
    pub const EDIT_MASK_IOU: f64 = 0.90;
    /// Largest |D| over the edit trace. Measured 1.16.
    pub const EDIT_DISPLACEMENT: f64 = 2.0;
    /// Minimum IoU of sampled twins against ground truth. Measured 0.988.
    pub const SAMPLED_TWIN_IOU: f64 = 0.90;
    /// Oracle-scene probe: |corr(reconstruction, original identity dot)|. Measured 0.077.
    pub const PROBE_IDENTITY_CORR: f64 = 0.2;
}

pub fn reference_scene() -> SceneSpec {
    SceneSpec::default()
}

pub fn reference_train_config() -> TrainConfig {
    TrainConfig::default()
}

pub fn reference_checkpoint_path() -> PathBuf {
    let key = format!(
        "{}-{}-{}",
        reference_scene().hash(),
        serde_json::to_string(&reference_train_config()).unwrap(),
        REFERENCE_SEED
    );
    let tag = &hex_sha(key.as_bytes())[..16];
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("reference_flow_{}_{tag}.json", env!("CARGO_PKG_VERSION")))
}

fn hex_sha(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn train_reference() -> FlowModel {
    train_flow(&reference_scene(), &reference_train_config(), REFERENCE_SEED).expect("reference training")
}

pub fn store_reference(model: &FlowModel) {
    let path = reference_checkpoint_path();
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    model.save(&tmp).expect("write checkpoint");
    std::fs::rename(&tmp, &path).expect("publish checkpoint");
}

/// The reference model, trained once and cached under the cargo tmp dir.
pub fn reference_model() -> &'static FlowModel {
    static MODEL: OnceLock<FlowModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        if let Ok(model) = FlowModel::load(&reference_checkpoint_path()) {
            return model;
        }
        let model = train_reference();
        store_reference(&model);
        model
    })
}

/// Source/target pairs and latent seeds of the fixed edit evaluation batch.
pub const EDIT_PAIRS: [(usize, usize); 3] = [(0, 2), (1, 3), (3, 0)];
pub const EDIT_SEEDS: [u64; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, Copy)]
pub struct EditMeasure {
    pub located: Option<usize>,
    pub source_iou: f64,
    pub edit_iou: f64,
    pub max_displacement: f64,
}

/// De-identifies an oracle-rendered source and compares the pathology mask
/// of the edit (against the target identity's healthy render) with the
/// source's, at the source's calibrated threshold.
pub fn measure_edit(model: &FlowModel, seed: u64, src: usize, tgt: usize, g: GuidanceParams) -> EditMeasure {
    let scene = &model.scene;
    let gt = oracle_ground_truth_mask(scene);
    let z = scene.latent(100 + seed);
    let c_src = scene.condition(src, Health::Pathological).unwrap();
    let c_tgt = scene.condition(tgt, Health::Pathological).unwrap();
    let original = oracle_generate(scene, &z, &c_src).unwrap();
    let g = GuidanceParams { noise_seed: seed, ..g };
    let deid = de_identify(model, &original, &c_src, &c_tgt, &g).unwrap();

    let src_healthy = oracle_generate(scene, &z, &c_src.with_health(Health::Healthy)).unwrap();
    let src_diff = a_diff_map(&original, &src_healthy).unwrap();
    let cal = calibrate_threshold(&src_diff, &gt, &default_grid()).unwrap();
    let src_mask = threshold_mask(&src_diff, cal.theta_star);
    let tgt_healthy = oracle_generate(scene, &z, &c_tgt.with_health(Health::Healthy)).unwrap();
    let edit_mask = threshold_mask(&a_diff_map(&deid.image, &tgt_healthy).unwrap(), cal.theta_star);

    EditMeasure {
        located: scene.locate_feature_dot(&deid.image).map(|p| scene.nearest_identity(p)),
        source_iou: cal.best_iou,
        edit_iou: naive_iou(&src_mask, &edit_mask),
        max_displacement: deid.trace.max_displacement(),
    }
}

/// IoU by direct counting.
pub fn naive_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exhaustive threshold sweep: evaluates every grid point independently and
/// keeps the first strict improvement.
pub fn brute_force_calibration(diff: &DiffMap, reference: &BinaryMask, grid: &[f64]) -> (f64, f64) {
    let mut best = (grid[0], -1.0);
    for &theta in grid {
        let mask = BinaryMask {
            width: diff.width,
            height: diff.height,
            bits: diff.values.iter().map(|&v| v > theta).collect(),
        };
        let score = naive_iou(&mask, reference);
        if score > best.1 {
            best = (theta, score);
        }
    }
    best
}

/// Direct CIELAB conversion (D65), written from the standard formulas.
pub fn reference_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) * 100.0 / 95.047;
    let y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) * 100.0 / 100.0;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) * 100.0 / 108.883;
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    let f = |t: f64| if t > eps { t.cbrt() } else { (kappa * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Bhattacharyya coefficient and binned KS, computed directly.
pub fn reference_bc(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

pub fn reference_ks(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut d) = (0.0, 0.0, 0.0f64);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        d = d.max((cp - cq).abs());
    }
    d
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
