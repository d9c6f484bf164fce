//! Differential masks: thresholding, IoU, threshold calibration and overlays.

use serde::{Deserialize, Serialize};

use crate::colorlab::{DiffMap, RgbImage};
use crate::error::{Error, Result};

/// Background pixels in [`overlay_composite`] are scaled by this factor.
pub const OVERLAY_DIM: f64 = 0.5;

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const MAGENTA: [u8; 3] = [255, 0, 255];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::Format(format!(
                "{} mask bits do not fill a {width}x{height} frame",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Mask with the given `(x, y)` pixels set.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(width, height);
        for &(x, y) in points {
            m.set(x, y, true);
        }
        m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    /// 8-connected dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height);
        let r = radius as isize;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                            out.set(nx as usize, ny as usize, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Bit set iff `diff(p) > theta` (strict).
pub fn threshold_mask(diff: &DiffMap, theta: f64) -> BinaryMask {
    BinaryMask {
        width: diff.width,
        height: diff.height,
        bits: diff.values.iter().map(|&v| v > theta).collect(),
    }
}

/// |A ∩ B| / |A ∪ B|; two empty masks agree perfectly and score 1.0.
pub fn iou(m1: &BinaryMask, m2: &BinaryMask) -> Result<f64> {
    if m1.dims() != m2.dims() {
        return Err(Error::dims("iou", m1.dims(), m2.dims()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in m1.bits.iter().zip(&m2.bits) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_star: f64,
    pub best_iou: f64,
    /// `(theta, iou)` in grid order.
    pub curve: Vec<(f64, f64)>,
}

impl CalibrationResult {
    fn from_curve(curve: Vec<(f64, f64)>) -> Self {
        // first strict improvement wins, so ties resolve to the smallest theta
        let (theta_star, best_iou) = curve
            .iter()
            .copied()
            .fold((curve[0].0, f64::NEG_INFINITY), |best, (t, v)| {
                if v > best.1 {
                    (t, v)
                } else {
                    best
                }
            });
        Self {
            theta_star,
            best_iou,
            curve,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,iou\n");
        for (t, v) in &self.curve {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "theta_star": self.theta_star, "best_iou": self.best_iou })
    }
}

/// The half-integer grid 0.5, 1.5, …, 254.5.
pub fn default_grid() -> Vec<f64> {
    (0..255).map(|i| i as f64 + 0.5).collect()
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("grid", "threshold grid is empty"));
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::param("grid", "thresholds must be finite and non-negative"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "thresholds must be strictly increasing"));
    }
    Ok(())
}

/// Sweeps every threshold in `grid` and picks the smallest IoU maximizer.
pub fn calibrate_threshold(
    diff: &DiffMap,
    reference: &BinaryMask,
    grid: &[f64],
) -> Result<CalibrationResult> {
    check_grid(grid)?;
    if diff.dims() != reference.dims() {
        return Err(Error::dims("calibrate_threshold", diff.dims(), reference.dims()));
    }
    let curve = grid
        .iter()
        .map(|&t| Ok((t, iou(reference, &threshold_mask(diff, t))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationResult::from_curve(curve))
}

/// One threshold shared by a cohort: maximizes the mean IoU over all cases.
pub fn calibrate_cohort(
    cases: &[(&DiffMap, &BinaryMask)],
    grid: &[f64],
) -> Result<CalibrationResult> {
    check_grid(grid)?;
    if cases.is_empty() {
        return Err(Error::param("cases", "cohort calibration needs at least one case"));
    }
    let mut sums = vec![0.0; grid.len()];
    for (diff, reference) in cases {
        let per_case = calibrate_threshold(diff, reference, grid)?;
        for (acc, (_, v)) in sums.iter_mut().zip(per_case.curve) {
            *acc += v;
        }
    }
    let n = cases.len() as f64;
    let curve = grid.iter().zip(sums).map(|(&t, s)| (t, s / n)).collect();
    Ok(CalibrationResult::from_curve(curve))
}

/// Comparative overlay: intersection white, `m_orig` only green, `m_syn`
/// only magenta, everything else the dimmed base image.
pub fn overlay_composite(
    m_orig: &BinaryMask,
    m_syn: &BinaryMask,
    base: &RgbImage,
) -> Result<RgbImage> {
    if m_orig.dims() != m_syn.dims() {
        return Err(Error::dims("overlay_composite", m_orig.dims(), m_syn.dims()));
    }
    if m_orig.dims() != base.dims() {
        return Err(Error::dims("overlay_composite", m_orig.dims(), base.dims()));
    }
    let mut data = Vec::with_capacity(base.len() * 3);
    for (i, px) in base.pixels().enumerate() {
        let rgb = match (m_orig.bits[i], m_syn.bits[i]) {
            (true, true) => WHITE,
            (true, false) => GREEN,
            (false, true) => MAGENTA,
            (false, false) => px.map(|c| (f64::from(c) * OVERLAY_DIM).round() as u8),
        };
        data.extend_from_slice(&rgb);
    }
    RgbImage::new(base.width(), base.height(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub mean_iou: f64,
    /// Population standard deviation over pairs.
    pub std_iou: f64,
    pub pairs: usize,
}

/// Mean and standard deviation of IoU over all unordered mask pairs.
pub fn mask_stability(masks: &[BinaryMask]) -> Result<StabilitySummary> {
    if masks.len() < 2 {
        return Err(Error::param("masks", "stability needs at least two masks"));
    }
    let mut ious = Vec::with_capacity(masks.len() * (masks.len() - 1) / 2);
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            ious.push(iou(&masks[i], &masks[j])?);
        }
    }
    Ok(pair_summary(&ious))
}

pub(crate) fn pair_summary(ious: &[f64]) -> StabilitySummary {
    let n = ious.len() as f64;
    let mean = ious.iter().sum::<f64>() / n;
    let var = ious.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    StabilitySummary {
        mean_iou: mean,
        std_iou: var.sqrt(),
        pairs: ious.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: &[f64]) -> DiffMap {
        DiffMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn strict_threshold() {
        assert!(threshold_mask(&map(2, 2, &[0.0; 4]), 0.0).is_empty());
        assert_eq!(threshold_mask(&map(2, 1, &[6.0, 0.0]), 5.0).bits, vec![true, false]);
        let m = map(3, 1, &[1.0, 7.5, 3.0]);
        assert!(threshold_mask(&m, m.max()).is_empty());
    }

    #[test]
    fn iou_cases() {
        let a = BinaryMask::from_points(2, 2, &[(0, 0), (0, 1)]);
        let b = BinaryMask::from_points(2, 2, &[(0, 1), (1, 1)]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_points(2, 2, &[(1, 0)]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert_eq!(iou(&BinaryMask::empty(2, 2), &BinaryMask::empty(2, 2)).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::empty(3, 2)).is_err());
    }

    #[test]
    fn calibration_self_consistency() {
        let d = map(4, 1, &[2.0, 9.0, 7.0, 12.0]);
        let reference = threshold_mask(&d, 7.0);
        let grid: Vec<f64> = (0..=20).map(f64::from).collect();
        let c = calibrate_threshold(&d, &reference, &grid).unwrap();
        assert_eq!(c.theta_star, 7.0);
        assert_eq!(c.best_iou, 1.0);
        assert_eq!(c.curve.len(), grid.len());
    }

    #[test]
    fn calibration_on_zero_map() {
        let d = map(2, 2, &[0.0; 4]);
        let reference = BinaryMask::from_points(2, 2, &[(1, 1)]);
        let c = calibrate_threshold(&d, &reference, &[0.5, 1.5, 2.5]).unwrap();
        assert_eq!(c.best_iou, 0.0);
        assert_eq!(c.theta_star, 0.5);
    }

    #[test]
    fn calibration_errors() {
        let d = map(2, 1, &[1.0, 2.0]);
        let r = BinaryMask::empty(2, 1);
        assert!(calibrate_threshold(&d, &r, &[]).is_err());
        assert!(calibrate_threshold(&d, &r, &[1.0, 1.0]).is_err());
        assert!(calibrate_threshold(&d, &BinaryMask::empty(1, 2), &[1.0]).is_err());
    }

    #[test]
    fn cohort_picks_shared_threshold() {
        let d1 = map(3, 1, &[1.0, 5.0, 9.0]);
        let d2 = map(3, 1, &[2.0, 6.0, 10.0]);
        let r = BinaryMask::from_bits(3, 1, vec![false, true, true]).unwrap();
        let c = calibrate_cohort(&[(&d1, &r), (&d2, &r)], &default_grid()).unwrap();
        assert_eq!(c.best_iou, 1.0);
        assert_eq!(c.theta_star, 2.5);
    }

    #[test]
    fn overlay_classes() {
        let base = RgbImage::filled(2, 2, [100, 50, 10]);
        let orig = BinaryMask::from_points(2, 2, &[(0, 0), (1, 0)]);
        let syn = BinaryMask::from_points(2, 2, &[(0, 0)]);
        let o = overlay_composite(&orig, &syn, &base).unwrap();
        assert_eq!(o.pixel(0, 0), WHITE);
        assert_eq!(o.pixel(1, 0), GREEN);
        assert_eq!(o.pixel(0, 1), [50, 25, 5]);

        let o = overlay_composite(&orig, &orig, &base).unwrap();
        assert_eq!(o.pixel(0, 0), WHITE);
        assert_eq!(o.pixel(1, 0), WHITE);

        let o = overlay_composite(&orig, &BinaryMask::empty(2, 2), &base).unwrap();
        assert!(o.pixels().all(|p| p != WHITE && p != MAGENTA));
    }

    #[test]
    fn stability_cases() {
        let a = BinaryMask::from_points(2, 2, &[(0, 0), (0, 1)]);
        let s = mask_stability(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!((s.mean_iou, s.std_iou, s.pairs), (1.0, 0.0, 3));

        let b = BinaryMask::from_points(2, 2, &[(1, 0)]);
        assert_eq!(mask_stability(&[a.clone(), b]).unwrap().mean_iou, 0.0);

        // pairwise IoUs {1/3, 1/3, 1}
        let c = BinaryMask::from_points(2, 2, &[(0, 1), (1, 1)]);
        let s = mask_stability(&[a.clone(), c.clone(), c]).unwrap();
        assert!((s.mean_iou - 5.0 / 9.0).abs() < 1e-15);

        assert!(mask_stability(&[a]).is_err());
    }

    #[test]
    fn dilation() {
        let m = BinaryMask::from_points(5, 5, &[(2, 2)]);
        assert_eq!(m.dilate(1).count(), 9);
        assert_eq!(BinaryMask::from_points(3, 3, &[(0, 0)]).dilate(1).count(), 4);
    }
}
