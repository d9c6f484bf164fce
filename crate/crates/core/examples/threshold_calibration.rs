//! IoU-calibrated thresholding of a synthetic a* difference map.

use twinmask::maskdiff::{calibrate_threshold, default_grid, threshold_mask};
use twinmask::{BinaryMask, DiffMap};

fn main() -> twinmask::Result<()> {
    let (w, h) = (24, 16);
    // a soft blob of difference over a low background ripple
    let values: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let r2 = ((x - 12.0) / 6.0).powi(2) + ((y - 8.0) / 4.0).powi(2);
            18.0 * (-r2).exp() + 1.5 * (x * 0.9).sin().abs()
        })
        .collect();
    let diff = DiffMap::new(w, h, values)?;
    let reference = BinaryMask::from_bits(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                ((x - 12.0) / 6.0).powi(2) + ((y - 8.0) / 4.0).powi(2) <= 1.0
            })
            .collect(),
    )?;

    let cal = calibrate_threshold(&diff, &reference, &default_grid())?;
    println!("theta* = {}, IoU = {:.4}", cal.theta_star, cal.best_iou);
    for (theta, iou) in cal.curve.iter().take(12) {
        println!("  theta {theta:>5.1}  IoU {iou:.4}");
    }

    let mask = threshold_mask(&diff, cal.theta_star);
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| match (mask.get(x, y), reference.get(x, y)) {
                (true, true) => '#',
                (true, false) => '+',
                (false, true) => '-',
                (false, false) => '.',
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
