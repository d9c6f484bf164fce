//! Normalized 256-bin a* histograms and distribution comparisons.

use serde::{Deserialize, Serialize};

use crate::colorlab::AStarPlane;
use crate::error::{Error, Result};
use crate::maskdiff::BinaryMask;

pub const BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: [f64; BINS],
}

impl Histogram {
    /// Histogram from raw densities; used for hand-built fixtures.
    pub fn from_densities(densities: &[f64]) -> Result<Self> {
        if densities.len() > BINS {
            return Err(Error::Format(format!("{} densities exceed {BINS} bins", densities.len())));
        }
        if densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Format("densities must be non-negative".into()));
        }
        let mut bins = [0.0; BINS];
        bins[..densities.len()].copy_from_slice(densities);
        Ok(Self { bins })
    }

    pub fn point_mass(bin: u8) -> Self {
        let mut bins = [0.0; BINS];
        bins[usize::from(bin)] = 1.0;
        Self { bins }
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,density\n");
        for (i, d) in self.bins.iter().enumerate() {
            s.push_str(&format!("{i},{d}\n"));
        }
        s
    }
}

/// Counts per offset-a* value over the frame, or over `restrict` when given.
pub fn histogram(plane: &AStarPlane, restrict: Option<&BinaryMask>) -> Result<Histogram> {
    let mut counts = [0u64; BINS];
    let mut total = 0u64;
    match restrict {
        Some(mask) => {
            if mask.dims() != plane.dims() {
                return Err(Error::dims("histogram restriction", plane.dims(), mask.dims()));
            }
            for (&v, _) in plane.values.iter().zip(&mask.bits).filter(|(_, b)| **b) {
                counts[usize::from(v)] += 1;
                total += 1;
            }
            if total == 0 {
                return Err(Error::param("restrict", "restriction mask is empty"));
            }
        }
        None => {
            for &v in &plane.values {
                counts[usize::from(v)] += 1;
            }
            total = plane.values.len() as u64;
        }
    }
    let mut bins = [0.0; BINS];
    for (b, c) in bins.iter_mut().zip(counts) {
        *b = c as f64 / total as f64;
    }
    Ok(Histogram { bins })
}

/// Σ √(pᵢ qᵢ), clamped into [0, 1] against rounding.
pub fn bhattacharyya(p: &Histogram, q: &Histogram) -> f64 {
    p.bins
        .iter()
        .zip(&q.bins)
        .map(|(a, b)| (a * b).sqrt())
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Maximum absolute difference of the binned CDFs.
pub fn ks_statistic(p: &Histogram, q: &Histogram) -> f64 {
    let (mut cp, mut cq, mut worst) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in p.bins.iter().zip(&q.bins) {
        cp += a;
        cq += b;
        worst = worst.max((cp - cq).abs());
    }
    worst.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub peak_density: f64,
}

pub fn summary_stats(p: &Histogram) -> SummaryStats {
    let total = p.total();
    let mean = p.bins.iter().enumerate().map(|(i, d)| i as f64 * d).sum::<f64>() / total;
    let var = p
        .bins
        .iter()
        .enumerate()
        .map(|(i, d)| (i as f64 - mean).powi(2) * d)
        .sum::<f64>()
        / total;
    SummaryStats {
        mean,
        std: var.max(0.0).sqrt(),
        peak_density: p.bins.iter().copied().fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistComparison {
    pub bhattacharyya: f64,
    pub ks: f64,
    pub mean_p: f64,
    pub mean_q: f64,
    pub std_p: f64,
    pub std_q: f64,
    pub peak_p: f64,
    pub peak_q: f64,
}

pub fn compare(p: &Histogram, q: &Histogram) -> DistComparison {
    let sp = summary_stats(p);
    let sq = summary_stats(q);
    DistComparison {
        bhattacharyya: bhattacharyya(p, q),
        ks: ks_statistic(p, q),
        mean_p: sp.mean,
        mean_q: sq.mean,
        std_p: sp.std,
        std_q: sq.std,
        peak_p: sp.peak_density,
        peak_q: sq.peak_density,
    }
}

/// Two histograms as one CSV: `bin,p,q`.
pub fn pair_csv(p: &Histogram, q: &Histogram) -> String {
    let mut s = String::from("bin,p,q\n");
    for i in 0..BINS {
        s.push_str(&format!("{i},{},{}\n", p.bins[i], q.bins[i]));
    }
    s
}
