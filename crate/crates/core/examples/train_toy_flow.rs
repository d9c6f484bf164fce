//! Trains the conditional rectified-flow model on oracle scenes and samples
//! a twin pair from it.
//!
//! Run with `cargo run --release --example train_toy_flow -- [steps] [size] [checkpoint.json]`.

use std::time::Instant;

use twinmask::colorlab::a_diff_map;
use twinmask::maskdiff::{calibrate_threshold, default_grid};
use twinmask::toyflow::{oracle_ground_truth_mask, sample, train_flow, Health, SceneSpec, TrainConfig};

fn main() -> twinmask::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(32);
    let checkpoint = args.next();

    let scene = SceneSpec::with_size(size, size);
    let hp = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let model = train_flow(&scene, &hp, 7)?;
    println!(
        "trained {} params for {steps} steps in {:.1?}: eval loss {:.4} -> {:.4}",
        model.net.param_count(),
        started.elapsed(),
        model.initial_loss,
        model.final_loss
    );

    let anchor = scene.latent(1234);
    let path = sample(&model, &anchor, &scene.condition(2, Health::Pathological)?, 50)?;
    let healthy = sample(&model, &anchor, &scene.condition(2, Health::Healthy)?, 50)?;
    let diff = a_diff_map(&path, &healthy)?;
    let cal = calibrate_threshold(&diff, &oracle_ground_truth_mask(&scene), &default_grid())?;
    println!("sampled twins: theta* = {:.1}, IoU vs ground truth = {:.3}", cal.theta_star, cal.best_iou);

    if let Some(path) = checkpoint {
        model.save(std::path::Path::new(&path))?;
        println!("checkpoint written to {path}");
    }
    Ok(())
}
