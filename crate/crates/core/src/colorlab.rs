//! sRGB ↔ CIE 1976 L*a*b* (D65) and the a* channel.

use crate::error::{Error, Result};

/// D65 reference white, Y normalized to 100.
pub const WHITE_D65: [f64; 3] = [95.047, 100.000, 108.883];
/// f-function threshold, (6/29)^3.
pub const EPSILON: f64 = 216.0 / 24389.0;
/// f-function slope, (29/3)^3.
pub const KAPPA: f64 = 24389.0 / 27.0;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

/// Offset added to a* for the 8-bit encoding.
pub const A_STAR_OFFSET: f64 = 128.0;

/// Row-major 8-bit sRGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image", "width and height must be at least 1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "rgb buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn from_pixels(width: usize, height: usize, lab: &[[f64; 3]]) -> Result<Self> {
        if width == 0 || height == 0 || lab.len() != width * height {
            return Err(Error::Format(format!(
                "{} Lab pixels do not fill a {width}x{height} frame",
                lab.len()
            )));
        }
        Ok(Self {
            width,
            height,
            l: lab.iter().map(|p| p[0]).collect(),
            a: lab.iter().map(|p| p[1]).collect(),
            b: lab.iter().map(|p| p[2]).collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// a* in the 8-bit offset encoding `round(a* + 128)`, clamped to [0, 255].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AStarPlane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl AStarPlane {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Per-pixel |Δa*| between two aligned images.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DiffMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Format(format!(
                "{} diff values do not fill a {width}x{height} frame",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Format(format!("diff map value {v} is negative or NaN")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> u8 {
    let v = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

pub fn pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = 100.0 * (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_pixel(lab: [f64; 3]) -> [u8; 3] {
    let [l, a, b] = lab;
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let yr = if l > KAPPA * EPSILON {
        fy * fy * fy
    } else {
        l / KAPPA
    };
    let xyz = [
        lab_f_inv(fx) * WHITE_D65[0] / 100.0,
        yr * WHITE_D65[1] / 100.0,
        lab_f_inv(fz) * WHITE_D65[2] / 100.0,
    ];
    XYZ_TO_RGB.map(|row| linear_to_srgb(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]))
}

/// a* of a single sRGB pixel.
pub fn pixel_a_star(rgb: [u8; 3]) -> f64 {
    pixel_to_lab(rgb)[1]
}

pub fn srgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.len();
    let mut out = LabImage {
        width: img.width,
        height: img.height,
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for p in img.pixels() {
        let [l, a, b] = pixel_to_lab(p);
        out.l.push(l);
        out.a.push(a);
        out.b.push(b);
    }
    out
}

/// Inverse of [`srgb_to_lab`]; out-of-gamut channels are clamped.
pub fn lab_to_srgb(img: &LabImage) -> RgbImage {
    let data = (0..img.l.len())
        .flat_map(|i| lab_to_pixel([img.l[i], img.a[i], img.b[i]]))
        .collect();
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// `round(a* + 128)` with ties away from zero, clamped to [0, 255].
pub fn encode_a_star(a: f64) -> u8 {
    (a + A_STAR_OFFSET).round().clamp(0.0, 255.0) as u8
}

pub fn a_star_offset(img: &LabImage) -> AStarPlane {
    AStarPlane {
        width: img.width,
        height: img.height,
        values: img.a.iter().map(|&a| encode_a_star(a)).collect(),
    }
}

/// Shorthand for `a_star_offset(&srgb_to_lab(img))`.
pub fn a_star_plane(img: &RgbImage) -> AStarPlane {
    AStarPlane {
        width: img.width,
        height: img.height,
        values: img.pixels().map(|p| encode_a_star(pixel_a_star(p))).collect(),
    }
}

/// |a*(path) − a*(healthy)| on unquantized a*.
pub fn a_diff_map(path: &RgbImage, healthy: &RgbImage) -> Result<DiffMap> {
    if path.dims() != healthy.dims() {
        return Err(Error::dims("a_diff_map (misaligned twins)", path.dims(), healthy.dims()));
    }
    Ok(a_diff_from_lab(&srgb_to_lab(path), &srgb_to_lab(healthy)))
}

/// [`a_diff_map`] on already-converted Lab images. Dimensions must agree.
pub fn a_diff_from_lab(p: &LabImage, q: &LabImage) -> DiffMap {
    assert_eq!(p.dims(), q.dims(), "a_diff_from_lab on misaligned planes");
    DiffMap {
        width: p.width,
        height: p.height,
        values: p.a.iter().zip(&q.a).map(|(x, y)| (x - y).abs()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: [u8; 3]) -> RgbImage {
        RgbImage::new(1, 1, p.to_vec()).unwrap()
    }

    #[test]
    fn anchors() {
        let w = pixel_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-2 && w[1].abs() < 1e-2 && w[2].abs() < 1e-2);
        let k = pixel_to_lab([0, 0, 0]);
        assert!(k.iter().all(|v| v.abs() < 1e-6));
        // Reference values from an independent implementation (scikit-image rgb2lab, D65).
        let r = pixel_to_lab([255, 0, 0]);
        let expected = [53.240_587_9, 80.092_308_2, 67.202_751_0];
        for (got, want) in r.iter().zip(expected) {
            assert!((got - want).abs() < 1e-2, "{r:?}");
        }
        let g = pixel_to_lab([12, 200, 77]);
        let expected = [70.815_744_6, -66.543_544_2, 48.873_178_4];
        for (got, want) in g.iter().zip(expected) {
            assert!((got - want).abs() < 1e-2, "{g:?}");
        }
    }

    #[test]
    fn inverse_anchors() {
        assert_eq!(lab_to_pixel([100.0, 0.0, 0.0]), [255, 255, 255]);
        assert_eq!(lab_to_pixel([0.0, 0.0, 0.0]), [0, 0, 0]);
        // far out of gamut clamps rather than wrapping
        assert_eq!(lab_to_pixel([50.0, 300.0, 0.0])[1], 0);
    }

    #[test]
    fn offset_encoding() {
        assert_eq!(encode_a_star(0.0), 128);
        assert_eq!(encode_a_star(11.0), 139);
        assert_eq!(encode_a_star(-200.0), 0);
        assert_eq!(encode_a_star(500.0), 255);
        assert_eq!(encode_a_star(0.5), 129);
        assert_eq!(encode_a_star(-0.5), 128);
    }

    #[test]
    fn diff_map_cases() {
        let img = RgbImage::filled(3, 2, [120, 80, 60]);
        let d = a_diff_map(&img, &img).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));

        let mut other = img.clone();
        other.set_pixel(2, 1, [200, 80, 60]);
        let d = a_diff_map(&img, &other).unwrap();
        for (i, v) in d.values.iter().enumerate() {
            assert_eq!(*v > 0.0, i == 5);
        }

        let err = a_diff_map(&img, &one([0, 0, 0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn diff_from_hand_a_planes() {
        let p = LabImage::from_pixels(2, 1, &[[50.0, 10.0, 0.0], [50.0, 10.0, 0.0]]).unwrap();
        let q = LabImage::from_pixels(2, 1, &[[50.0, 4.0, 0.0], [50.0, 10.0, 0.0]]).unwrap();
        assert_eq!(a_diff_from_lab(&p, &q).values, vec![6.0, 0.0]);
    }

    #[test]
    fn constructor_validation() {
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(2, 1, vec![0; 5]).is_err());
        assert!(DiffMap::new(1, 1, vec![-1.0]).is_err());
    }
}
