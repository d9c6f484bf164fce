//! sRGB ↔ CIELAB conversion and the offset a* encoding.

use twinmask::colorlab::{encode_a_star, lab_to_pixel, pixel_to_lab};

fn main() {
    let swatches: [(&str, [u8; 3]); 6] = [
        ("white", [255, 255, 255]),
        ("black", [0, 0, 0]),
        ("red", [255, 0, 0]),
        ("skin", [224, 172, 150]),
        ("erythema", [232, 120, 112]),
        ("mole", [70, 45, 35]),
    ];
    println!("{:<9} {:>15} {:>8} {:>8} {:>8} {:>7} {:>15}", "name", "rgb", "L*", "a*", "b*", "a*+128", "round trip");
    for (name, rgb) in swatches {
        let lab = pixel_to_lab(rgb);
        let back = lab_to_pixel(lab);
        println!(
            "{name:<9} {:>15} {:>8.3} {:>8.3} {:>8.3} {:>7} {:>15}",
            format!("{rgb:?}"),
            lab[0],
            lab[1],
            lab[2],
            encode_a_star(lab[1]),
            format!("{back:?}")
        );
    }
}
