//! Counterfactual segment-by-synthesis.
//!
//! A de-identified surrogate is regenerated twice from the same latent
//! anchor, once pathological and once healthy. Everything the two renders
//! share (anatomy, identity, lighting, distractors) cancels in the a*
//! difference, which is then thresholded at the IoU-calibrated level.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorlab::{a_diff_map, a_star_plane, pixel_to_lab, DiffMap, RgbImage};
use crate::error::{Error, Result, StageExt};
use crate::flowedit::{self, check_surrogate, EditTrace, GuidanceParams};
use crate::histstats::{compare, histogram, pair_csv, DistComparison, Histogram};
use crate::io;
use crate::maskdiff::{
    default_grid, iou, mask_stability, overlay_composite, threshold_mask, BinaryMask, CalibrationResult,
    StabilitySummary,
};
use crate::rng::SeedStream;
use crate::toyflow::{
    oracle_generate, oracle_ground_truth_mask, sample, sample_many, Condition, FlowModel, Health, LatentCode, SceneSpec,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinMode {
    /// Both twins sampled from the anchor under the two health labels.
    #[default]
    SeedResample,
    /// Healthy twin obtained by editing the pathological twin's health label.
    EditHeal,
}

impl std::str::FromStr for TwinMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "seed_resample" | "seed-resample" => Ok(Self::SeedResample),
            "edit_heal" | "edit-heal" => Ok(Self::EditHeal),
            other => Err(format!("unknown twin mode `{other}` (expected seed_resample or edit_heal)")),
        }
    }
}

/// The generator behind the pipeline.
#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    /// Procedural renderer; edits re-render the anchor under the target label.
    Oracle(&'a SceneSpec),
    /// Trained flow model, sampled with `sample_steps` Euler steps.
    Trained { model: &'a FlowModel, sample_steps: usize },
}

impl<'a> Backend<'a> {
    pub fn scene(&self) -> &'a SceneSpec {
        match self {
            Backend::Oracle(s) => s,
            Backend::Trained { model, .. } => &model.scene,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Backend::Oracle(_) => "oracle",
            Backend::Trained { .. } => "trained",
        }
    }

    /// `𝒢(z, c)`.
    pub fn render(&self, z: &LatentCode, c: &Condition) -> Result<RgbImage> {
        match self {
            Backend::Oracle(spec) => oracle_generate(spec, z, c),
            Backend::Trained { model, sample_steps } => sample(model, z, c, *sample_steps),
        }
    }

    fn edit(&self, source: &RgbImage, c_src: &Condition, c_tgt: &Condition, g: &GuidanceParams) -> Result<(RgbImage, EditTrace)> {
        match self {
            Backend::Oracle(spec) => {
                let anchor = spec.latent(g.anchor_seed());
                Ok((oracle_generate(spec, &anchor, c_tgt)?, EditTrace::default()))
            }
            Backend::Trained { model, .. } => {
                let out = flowedit::flow_edit(model, source, c_src, c_tgt, g)?;
                Ok((out.image, out.trace))
            }
        }
    }

    /// De-identification through this backend. The oracle bypasses the flow
    /// model and renders the surrogate directly from the anchor.
    pub fn de_identify(
        &self,
        original: &RgbImage,
        src_c: &Condition,
        surrogate_c: &Condition,
        g: &GuidanceParams,
    ) -> Result<flowedit::DeIdentified> {
        match self {
            Backend::Oracle(spec) => {
                check_surrogate(src_c, surrogate_c)?;
                g.validate()?;
                let (image, trace) = self.edit(original, src_c, surrogate_c, g)?;
                Ok(flowedit::DeIdentified {
                    image,
                    anchor: spec.latent(g.anchor_seed()),
                    trace,
                })
            }
            Backend::Trained { model, .. } => flowedit::de_identify(model, original, src_c, surrogate_c, g),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinPair {
    pub path_image: RgbImage,
    pub healthy_image: RgbImage,
    pub anchor: LatentCode,
    pub mode: TwinMode,
}

/// `I_path = 𝒢(z, τ_path)` and `I_healthy = 𝒢(z, τ_healthy)` from one anchor.
/// In [`TwinMode::EditHeal`] the healthy twin is an edit of the pathological
/// one with the health label flipped, using `g`.
pub fn generate_twins(
    backend: &Backend<'_>,
    anchor: &LatentCode,
    c_path: &Condition,
    c_healthy: &Condition,
    mode: TwinMode,
    g: &GuidanceParams,
) -> Result<TwinPair> {
    if c_path.unconditional || c_healthy.unconditional || c_path.embedding == c_healthy.embedding {
        return Err(Error::param("twin conditions", "pathological and healthy prompts must differ"));
    }
    if c_path.health != Health::Pathological || c_healthy.health != Health::Healthy {
        return Err(Error::param("twin conditions", "expected a pathological and a healthy label"));
    }
    if c_path.identity != c_healthy.identity {
        return Err(Error::param("twin conditions", "twins must share one identity"));
    }
    let scene = backend.scene();
    if anchor.vector.len() != scene.state_dim() {
        return Err(Error::dims(
            "generate_twins (anchor vs model)",
            (anchor.vector.len(), 1),
            (scene.state_dim(), 1),
        ));
    }
    let (path_image, healthy_image) = match (mode, backend) {
        (TwinMode::SeedResample, Backend::Trained { model, sample_steps }) => {
            let mut pair = sample_many(model, anchor, &[c_path, c_healthy], *sample_steps)?;
            let healthy = pair.pop().expect("two samples");
            (pair.pop().expect("two samples"), healthy)
        }
        (TwinMode::EditHeal, Backend::Trained { .. }) => {
            let path_image = backend.render(anchor, c_path)?;
            let heal = GuidanceParams {
                noise_seed: SeedStream::new(g.noise_seed).seed("heal", anchor.seed),
                ..*g
            };
            let healthy = backend.edit(&path_image, c_path, c_healthy, &heal)?.0;
            (path_image, healthy)
        }
        (_, Backend::Oracle(_)) => (backend.render(anchor, c_path)?, backend.render(anchor, c_healthy)?),
    };
    Ok(TwinPair {
        path_image,
        healthy_image,
        anchor: anchor.clone(),
        mode,
    })
}

/// `|a*(I_path) − a*(I_healthy)|`.
pub fn differential(pair: &TwinPair) -> Result<DiffMap> {
    a_diff_map(&pair.path_image, &pair.healthy_image)
}

/// Where the calibration reference mask comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ReferenceMask {
    /// Rasterized pathology ellipse of the scene.
    #[default]
    GroundTruth,
    /// An externally supplied `M_orig`.
    Supplied(BinaryMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source_identity: usize,
    pub surrogate_identity: usize,
    pub guidance: GuidanceParams,
    pub grid: Vec<f64>,
    pub twin_mode: TwinMode,
    pub reference: ReferenceMask,
    /// Histograms count only pixels under this mask; `None` is the full frame.
    pub histogram_mask: Option<BinaryMask>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source_identity: 0,
            surrogate_identity: 1,
            guidance: GuidanceParams::default(),
            grid: default_grid(),
            twin_mode: TwinMode::default(),
            reference: ReferenceMask::default(),
            histogram_mask: None,
        }
    }
}

/// Seeds derived from a case seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSeeds {
    pub case_seed: u64,
    pub original_latent: u64,
    pub edit_noise: u64,
    pub anchor: u64,
}

impl PipelineConfig {
    pub fn case_seeds(&self, case_seed: u64) -> CaseSeeds {
        let s = SeedStream::new(case_seed);
        let edit_noise = s.seed("edit", self.guidance.noise_seed);
        CaseSeeds {
            case_seed,
            original_latent: s.seed("original", 0),
            edit_noise,
            anchor: GuidanceParams {
                noise_seed: edit_noise,
                ..self.guidance
            }
            .anchor_seed(),
        }
    }

    fn case_guidance(&self, seeds: &CaseSeeds) -> GuidanceParams {
        GuidanceParams {
            noise_seed: seeds.edit_noise,
            ..self.guidance
        }
    }
}

/// Fig. 5-style histogram panels.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPanels {
    pub original: Histogram,
    pub path: Histogram,
    pub healthy: Histogram,
    /// Original patient vs synthetic healthy twin.
    pub original_vs_healthy: DistComparison,
    /// Synthetic pathological vs synthetic healthy twin.
    pub path_vs_healthy: DistComparison,
}

impl HistogramPanels {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,original,path,healthy\n");
        for i in 0..256 {
            s.push_str(&format!(
                "{i},{},{},{}\n",
                self.original.bins[i], self.path.bins[i], self.healthy.bins[i]
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub de_identified: RgbImage,
    pub twins: TwinPair,
    pub diff: DiffMap,
    pub reference: BinaryMask,
    pub mask: BinaryMask,
    pub calibration: CalibrationResult,
    pub stats: HistogramPanels,
    pub trace: EditTrace,
    pub manifest: serde_json::Value,
}

impl PipelineResult {
    /// SHA-256 of the canonical manifest bytes.
    pub fn manifest_hash(&self) -> String {
        manifest_hash(&self.manifest)
    }

    pub fn overlay(&self) -> Result<RgbImage> {
        overlay_composite(&self.reference, &self.mask, &self.de_identified)
    }

    /// Writes the per-case artifact directory.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::save_rgb_png(&self.de_identified, &dir.join("deid.png"))?;
        io::save_rgb_png(&self.twins.path_image, &dir.join("twin_path.png"))?;
        io::save_rgb_png(&self.twins.healthy_image, &dir.join("twin_healthy.png"))?;
        io::save_diff_png(&self.diff, &dir.join("diff.png"))?;
        io::save_mask_png(&self.mask, &dir.join("mask.png"))?;
        io::save_rgb_png(&self.overlay()?, &dir.join("overlay.png"))?;
        io::write_text(&dir.join("calibration.csv"), &self.calibration.to_csv())?;
        io::write_text(&dir.join("histograms.csv"), &self.stats.to_csv())?;
        io::write_text(&dir.join("manifest.json"), &manifest_string(&self.manifest))?;
        Ok(())
    }
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn manifest_string(manifest: &serde_json::Value) -> String {
    // serde_json's default map is ordered by key
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn manifest_hash(manifest: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(manifest).expect("manifest serializes");
    hex::encode(Sha256::digest(bytes))
}

/// The source patient image of a case. It never leaves this function's
/// caller as part of a [`PipelineResult`].
pub fn render_original(config: &PipelineConfig, backend: &Backend<'_>, case_seed: u64) -> Result<RgbImage> {
    let scene = backend.scene();
    let seeds = config.case_seeds(case_seed);
    let c = scene.condition(config.source_identity, Health::Pathological)?;
    backend.render(&scene.latent(seeds.original_latent), &c)
}

/// Fraction of the source identity's feature-dot darkness that survives
/// de-identification, measured in L* over the source dot footprint.
/// About 0 when the dot is gone, 1 when it is fully retained.
pub fn feature_persistence(scene: &SceneSpec, source_identity: usize, original: &RgbImage, deid: &RgbImage, reference: &RgbImage) -> Result<f64> {
    let src_dot = scene.identity(source_identity)?.feature.footprint(scene.width, scene.height);
    let lum = |img: &RgbImage| -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..scene.height {
            for x in 0..scene.width {
                if src_dot.get(x, y) {
                    sum += pixel_to_lab(img.pixel(x, y))[0];
                    n += 1;
                }
            }
        }
        sum / n.max(1) as f64
    };
    let (l_ref, l_orig, l_deid) = (lum(reference), lum(original), lum(deid));
    let denom = l_ref - l_orig;
    Ok(if denom.abs() < 1e-9 { 0.0 } else { (l_ref - l_deid) / denom })
}

pub fn run_pipeline(config: &PipelineConfig, backend: &Backend<'_>, case_seed: u64) -> Result<PipelineResult> {
    let scene = backend.scene();
    let seeds = config.case_seeds(case_seed);
    let g = config.case_guidance(&seeds);
    g.validate().stage("config")?;

    let src_c = scene.condition(config.source_identity, Health::Pathological).stage("config")?;
    let sur_c = scene.condition(config.surrogate_identity, Health::Pathological).stage("config")?;
    let original = render_original(config, backend, case_seed).stage("original")?;

    let deid = backend.de_identify(&original, &src_c, &sur_c, &g).stage("deid")?;
    let twins = generate_twins(backend, &deid.anchor, &sur_c, &sur_c.with_health(Health::Healthy), config.twin_mode, &g)
        .stage("twins")?;
    let diff = differential(&twins).stage("differential")?;

    let reference = match &config.reference {
        ReferenceMask::GroundTruth => oracle_ground_truth_mask(scene),
        ReferenceMask::Supplied(m) => m.clone(),
    };
    let calibration = crate::maskdiff::calibrate_threshold(&diff, &reference, &config.grid).stage("calibrate")?;
    let mask = threshold_mask(&diff, calibration.theta_star);

    let restrict = config.histogram_mask.as_ref();
    let hist = |img: &RgbImage| histogram(&a_star_plane(img), restrict);
    let (h_orig, h_path, h_healthy) = (|| Ok((hist(&original)?, hist(&twins.path_image)?, hist(&twins.healthy_image)?)))()
        .stage("stats")?;
    let stats = HistogramPanels {
        original_vs_healthy: compare(&h_orig, &h_healthy),
        path_vs_healthy: compare(&h_path, &h_healthy),
        original: h_orig,
        path: h_path,
        healthy: h_healthy,
    };

    let gt = oracle_ground_truth_mask(scene);
    let iou_gt = iou(&mask, &gt).stage("metrics")?;
    let distractor = scene.distractor.footprint(scene.width, scene.height);
    let surrogate_ref = oracle_generate(scene, &deid.anchor, &sur_c).stage("metrics")?;
    let persistence =
        feature_persistence(scene, config.source_identity, &original, &deid.image, &surrogate_ref).stage("metrics")?;

    let manifest = serde_json::json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "backend": backend_json(backend),
        "seeds": seeds,
        "config": {
            "source_identity": config.source_identity,
            "surrogate_identity": config.surrogate_identity,
            "guidance": config.guidance,
            "case_guidance": g,
            "twin_mode": config.twin_mode,
            "grid": { "len": config.grid.len(), "first": config.grid[0], "last": config.grid[config.grid.len() - 1],
                      "hash": hex::encode(Sha256::digest(serde_json::to_vec(&config.grid).expect("grid serializes"))) },
            "reference": match config.reference { ReferenceMask::GroundTruth => "ground_truth", ReferenceMask::Supplied(_) => "supplied" },
            "reference_hash": mask_hash(&reference),
            "histogram_region": if restrict.is_some() { "masked" } else { "full_frame" },
        },
        "metrics": {
            "theta_star": calibration.theta_star,
            "best_iou": calibration.best_iou,
            "iou_ground_truth": iou_gt,
            "mask_pixels": mask.count(),
            "distractor_overlap": mask.intersection_count(&distractor),
            "diff_max": diff.max(),
            "feature_persistence": persistence,
            "edit_max_displacement": deid.trace.max_displacement(),
            "edit_steps": deid.trace.len(),
            "panel_original_vs_healthy": stats.original_vs_healthy,
            "panel_path_vs_healthy": stats.path_vs_healthy,
        },
        "artifacts": {
            "deid": image_hash(&deid.image),
            "twin_path": image_hash(&twins.path_image),
            "twin_healthy": image_hash(&twins.healthy_image),
            "mask": mask_hash(&mask),
        },
    });

    Ok(PipelineResult {
        de_identified: deid.image,
        twins,
        diff,
        reference,
        mask,
        calibration,
        stats,
        trace: deid.trace,
        manifest,
    })
}

fn backend_json(backend: &Backend<'_>) -> serde_json::Value {
    match backend {
        Backend::Oracle(spec) => serde_json::json!({ "kind": "oracle", "scene": spec, "scene_hash": spec.hash() }),
        Backend::Trained { model, sample_steps } => serde_json::json!({
            "kind": "trained",
            "scene": model.scene,
            "scene_hash": model.scene.hash(),
            "train": model.train,
            "train_seed": model.seed,
            "sample_steps": sample_steps,
            "final_loss": if model.final_loss.is_finite() { Some(model.final_loss) } else { None },
        }),
    }
}

pub(crate) fn image_hash(img: &RgbImage) -> String {
    hex::encode(Sha256::digest(img.as_bytes()))
}

fn mask_hash(mask: &BinaryMask) -> String {
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| u8::from(b)).collect();
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub surrogate_identity: usize,
    pub iou_to_reference: f64,
    pub result: PipelineResult,
    /// Reference mask in green, this identity's mask in magenta.
    pub overlay: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub stability: StabilitySummary,
}

impl SweepReport {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "stability": self.stability,
            "identities": self.entries.iter().map(|e| serde_json::json!({
                "surrogate_identity": e.surrogate_identity,
                "iou_to_reference": e.iou_to_reference,
                "theta_star": e.result.calibration.theta_star,
                "manifest_hash": e.result.manifest_hash(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let sub = dir.join(format!("identity_{:02}_{}", i, e.surrogate_identity));
            e.result.write_dir(&sub)?;
        }
        io::write_text(&dir.join("sweep.json"), &manifest_string(&self.summary_json()))
    }
}

/// Runs the pipeline once per surrogate identity (in parallel) and reports
/// mask stability across them.
pub fn identity_sweep(
    config: &PipelineConfig,
    backend: &Backend<'_>,
    surrogates: &[usize],
    case_seed: u64,
) -> Result<SweepReport> {
    if surrogates.len() < 2 {
        return Err(Error::param("surrogates", "an identity sweep needs at least two surrogate identities"));
    }
    let entries = surrogates
        .par_iter()
        .map(|&sur| {
            let cfg = PipelineConfig {
                surrogate_identity: sur,
                ..config.clone()
            };
            let result = run_pipeline(&cfg, backend, case_seed)?;
            let iou_to_reference = iou(&result.mask, &result.reference)?;
            let overlay = result.overlay()?;
            Ok(SweepEntry {
                surrogate_identity: sur,
                iou_to_reference,
                result,
                overlay,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<BinaryMask> = entries.iter().map(|e| e.result.mask.clone()).collect();
    let stability = mask_stability(&masks)?;
    Ok(SweepReport { entries, stability })
}

/// Histogram pair CSV for two arbitrary images (full frame).
pub fn image_histogram_csv(a: &RgbImage, b: &RgbImage) -> Result<String> {
    Ok(pair_csv(&histogram(&a_star_plane(a), None)?, &histogram(&a_star_plane(b), None)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_twin_request_rejected() {
        let spec = SceneSpec::default();
        let b = Backend::Oracle(&spec);
        let c = spec.condition(1, Health::Pathological).unwrap();
        let z = spec.latent(3);
        let err = generate_twins(&b, &z, &c, &c, TwinMode::SeedResample, &GuidanceParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn stage_errors_are_tagged() {
        let spec = SceneSpec::default();
        let cfg = PipelineConfig {
            source_identity: 2,
            surrogate_identity: 2,
            ..Default::default()
        };
        let err = run_pipeline(&cfg, &Backend::Oracle(&spec), 0).unwrap_err();
        assert_eq!(err.stage(), Some("deid"));

        let cfg = PipelineConfig {
            grid: vec![],
            ..Default::default()
        };
        let err = run_pipeline(&cfg, &Backend::Oracle(&spec), 0).unwrap_err();
        assert_eq!(err.stage(), Some("calibrate"));
    }

    #[test]
    fn twin_mode_parses() {
        assert_eq!("edit_heal".parse::<TwinMode>().unwrap(), TwinMode::EditHeal);
        assert!("bogus".parse::<TwinMode>().is_err());
    }
}
