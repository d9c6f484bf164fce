//! PNG and text-file I/O.
//!
//! RGB images are 8-bit RGB PNG; masks are 8-bit grayscale with values
//! {0, 255}; difference maps are 16-bit grayscale at [`DIFF_PNG_SCALE`]
//! counts per a* unit, saturating at 65535.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::colorlab::{DiffMap, RgbImage};
use crate::error::{Error, Result};
use crate::maskdiff::BinaryMask;

pub const DIFF_PNG_SCALE: f64 = 256.0;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.as_bytes().to_vec())
        .expect("buffer size matches frame");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

pub fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    let raw = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, raw).expect("mask size matches frame")
}

pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    mask_to_gray(mask).save(path).map_err(|e| image_err(path, e))
}

/// Loads a grayscale mask; any nonzero value counts as set.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_bits(w, h, img.into_raw().into_iter().map(|v| v > 0).collect())
}

pub fn diff_to_u16(diff: &DiffMap) -> Vec<u16> {
    diff.values
        .iter()
        .map(|v| (v * DIFF_PNG_SCALE).round().clamp(0.0, 65535.0) as u16)
        .collect()
}

pub fn save_diff_png(diff: &DiffMap, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(diff.width as u32, diff.height as u32, diff_to_u16(diff)).expect("diff size matches frame");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn load_diff_png(path: &Path) -> Result<DiffMap> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    DiffMap::new(w, h, img.into_raw().into_iter().map(|v| f64::from(v) / DIFF_PNG_SCALE).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Two outlined histograms on a white canvas: `p` in blue, `q` in red.
pub fn render_histogram_plot(p: &[f64; 256], q: &[f64; 256], height: u32) -> image::RgbImage {
    let width = 256 * 2;
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    let peak = p.iter().chain(q.iter()).copied().fold(f64::MIN_POSITIVE, f64::max);
    let row = |d: f64| -> u32 {
        let top = (height - 1) as f64;
        (top - (d / peak) * (top - 4.0)).round().clamp(0.0, top) as u32
    };
    for (hist, color) in [(p, [40, 70, 200]), (q, [210, 40, 40])] {
        let mut prev: Option<u32> = None;
        for (i, &d) in hist.iter().enumerate() {
            let y = row(d);
            for x in (i as u32 * 2)..(i as u32 * 2 + 2) {
                img.put_pixel(x, y, image::Rgb(color));
            }
            if let Some(py) = prev {
                let (lo, hi) = (py.min(y), py.max(y));
                for yy in lo..=hi {
                    img.put_pixel(i as u32 * 2, yy, image::Rgb(color));
                }
            }
            prev = Some(y);
        }
    }
    img
}

pub fn save_histogram_plot(p: &[f64; 256], q: &[f64; 256], path: &Path) -> Result<()> {
    render_histogram_plot(p, q, 200).save(path).map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(2, 2, (0..12).map(|i| i as u8 * 20).collect()).unwrap();
        let p = dir.path().join("a.png");
        save_rgb_png(&img, &p).unwrap();
        assert_eq!(load_rgb_png(&p).unwrap(), img);

        let m = BinaryMask::from_points(3, 2, &[(0, 0), (2, 1)]);
        let p = dir.path().join("m.png");
        save_mask_png(&m, &p).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);

        let d = DiffMap::new(2, 1, vec![1.5, 0.25]).unwrap();
        let p = dir.path().join("d.png");
        save_diff_png(&d, &p).unwrap();
        assert_eq!(load_diff_png(&p).unwrap(), d);
    }

    #[test]
    fn diff_fixed_point_saturates() {
        let d = DiffMap::new(2, 1, vec![1000.0, 1.0 / 512.0]).unwrap();
        assert_eq!(diff_to_u16(&d), vec![65535, 1]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_rgb_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
