//! a* histograms of a pathological twin, its healthy twin and the source.
//!
//! Usage: histogram_compare [plot.png]

use twinmask::colorlab::a_star_plane;
use twinmask::histstats::{compare, histogram, summary_stats};
use twinmask::toyflow::{oracle_generate, Health, SceneSpec};

fn main() -> twinmask::Result<()> {
    let scene = SceneSpec::default();
    let z = scene.latent(21);
    let path = oracle_generate(&scene, &z, &scene.condition(2, Health::Pathological)?)?;
    let healthy = oracle_generate(&scene, &z, &scene.condition(2, Health::Healthy)?)?;
    let other = oracle_generate(&scene, &scene.latent(22), &scene.condition(0, Health::Pathological)?)?;

    let hp = histogram(&a_star_plane(&path), None)?;
    let hh = histogram(&a_star_plane(&healthy), None)?;
    let ho = histogram(&a_star_plane(&other), None)?;
    for (name, h) in [("pathological", &hp), ("healthy", &hh), ("other patient", &ho)] {
        let s = summary_stats(h);
        println!("{name:<14} mean {:.2}  std {:.2}  peak {:.3}", s.mean, s.std, s.peak_density);
    }
    for (name, c) in [("path vs healthy", compare(&hp, &hh)), ("other vs healthy", compare(&ho, &hh))] {
        println!("{name:<17} Bhattacharyya {:.4}  KS {:.4}", c.bhattacharyya, c.ks);
    }
    if let Some(out) = std::env::args().nth(1) {
        twinmask::io::save_histogram_plot(&hp.bins, &hh.bins, std::path::Path::new(&out))?;
    }
    Ok(())
}
