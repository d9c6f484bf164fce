//! One latent anchor rendered under both health labels, then subtracted.
//!
//! Usage: counterfactual_twins [out_dir]

use twinmask::flowedit::GuidanceParams;
use twinmask::io;
use twinmask::maskdiff::{calibrate_threshold, default_grid, iou, threshold_mask};
use twinmask::toyflow::{oracle_ground_truth_mask, Health, SceneSpec};
use twinmask::twinsynth::{differential, generate_twins, Backend, TwinMode};

fn main() -> twinmask::Result<()> {
    let scene = SceneSpec::default();
    let backend = Backend::Oracle(&scene);
    let anchor = scene.latent(5);
    let c_path = scene.condition(1, Health::Pathological)?;
    let pair = generate_twins(
        &backend,
        &anchor,
        &c_path,
        &c_path.with_health(Health::Healthy),
        TwinMode::SeedResample,
        &GuidanceParams::default(),
    )?;
    let diff = differential(&pair)?;
    let gt = oracle_ground_truth_mask(&scene);
    let cal = calibrate_threshold(&diff, &gt, &default_grid())?;
    let mask = threshold_mask(&diff, cal.theta_star);
    println!("max |Δa*| = {:.2}", diff.max());
    println!("theta* = {}  IoU vs ground truth = {:.4}", cal.theta_star, iou(&mask, &gt)?);
    let distractor = scene.distractor.footprint(scene.width, scene.height);
    println!("mask pixels on the red distractor: {}", mask.intersection_count(&distractor));

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&dir);
        std::fs::create_dir_all(dir).map_err(|e| twinmask::Error::io(dir, e))?;
        io::save_rgb_png(&pair.path_image, &dir.join("twin_path.png"))?;
        io::save_rgb_png(&pair.healthy_image, &dir.join("twin_healthy.png"))?;
        io::save_diff_png(&diff, &dir.join("diff.png"))?;
        io::save_mask_png(&mask, &dir.join("mask.png"))?;
    }
    Ok(())
}
