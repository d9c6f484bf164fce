//! Inversion-free de-identification with a trained flow model: moves the
//! biometric feature dot to the surrogate identity while keeping the
//! erythema region in place.
//!
//! Run with `cargo run --release --example flow_edit_deid -- checkpoint.json`
//! (train one first with the `train_toy_flow` example).

use twinmask::colorlab::a_diff_map;
use twinmask::flowedit::{de_identify, GuidanceParams};
use twinmask::maskdiff::{calibrate_threshold, default_grid, iou, threshold_mask};
use twinmask::toyflow::{oracle_generate, oracle_ground_truth_mask, FlowModel, Health};

fn main() -> twinmask::Result<()> {
    let path = std::env::args().nth(1).expect("usage: flow_edit_deid <checkpoint.json> [gamma_src] [gamma_tgt]");
    let gamma_src: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let gamma_tgt: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let model = FlowModel::load(std::path::Path::new(&path))?;
    let scene = &model.scene;
    let gt = oracle_ground_truth_mask(scene);

    println!("seed src tgt  located  src_iou  edit_iou  persist  max|D|");
    for seed in 0..4u64 {
        for (src, tgt) in [(0usize, 2usize), (1, 3), (3, 0)] {
            let z = scene.latent(100 + seed);
            let c_src = scene.condition(src, Health::Pathological)?;
            let c_tgt = scene.condition(tgt, Health::Pathological)?;
            let original = oracle_generate(scene, &z, &c_src)?;
            let g = GuidanceParams { gamma_src, gamma_tgt, noise_seed: seed, ..GuidanceParams::default() };
            let deid = de_identify(&model, &original, &c_src, &c_tgt, &g)?;

            // masks of source and edit against healthy oracle references
            let src_healthy = oracle_generate(scene, &z, &c_src.with_health(Health::Healthy))?;
            let src_diff = a_diff_map(&original, &src_healthy)?;
            let cal = calibrate_threshold(&src_diff, &gt, &default_grid())?;
            let src_mask = threshold_mask(&src_diff, cal.theta_star);
            let tgt_healthy = oracle_generate(scene, &z, &c_tgt.with_health(Health::Healthy))?;
            let edit_mask = threshold_mask(&a_diff_map(&deid.image, &tgt_healthy)?, cal.theta_star);

            let located = scene.locate_feature_dot(&deid.image).map(|p| scene.nearest_identity(p));
            let persist = twinmask::twinsynth::feature_persistence(scene, src, &original, &deid.image, &oracle_generate(scene, &z, &c_tgt)?)?;
            println!(
                "{seed:>4} {src:>3} {tgt:>3}  {:>7}  {:>7.3}  {:>8.3}  {:>7.3}  {:>6.3}",
                located.map_or("-".to_string(), |i| i.to_string()),
                cal.best_iou,
                iou(&src_mask, &edit_mask)?,
                persist,
                deid.trace.max_displacement()
            );
        }
    }
    Ok(())
}
