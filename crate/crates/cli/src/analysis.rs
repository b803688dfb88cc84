//! Heading scans and peak analysis.

use std::f64::consts::TAU;

use ebm3d::{Box3D, Grid, Net, Result};

/// `f(x, y(Δphi))` for `points` values of `Δphi` evenly spanning `[0, 2π]`
/// (both ends included).
pub fn angle_scan(net: &Net, grid: &Grid, b: &Box3D, points: usize) -> Result<Vec<(f64, f64)>> {
    let steps = points.max(2) - 1;
    let boxes: Vec<Box3D> = (0..=steps)
        .map(|k| Box3D { phi: b.phi + TAU * k as f64 / steps as f64, ..*b })
        .collect();
    let f = net.energies(grid, &boxes)?;
    Ok((0..=steps).map(|k| (TAU * k as f64 / steps as f64, f[k])).collect())
}

/// A local maximum of a periodic sampled curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub value: f64,
    /// Height above the higher of the two saddles separating it from higher ground.
    pub prominence: f64,
}

/// Local maxima of a periodic sequence with their prominence. A plateau
/// counts once, at its first sample. The global maximum's prominence is its
/// height above the global minimum.
pub fn circular_peaks(values: &[f64]) -> Vec<Peak> {
    let n = values.len();
    if n < 3 {
        return Vec::new();
    }
    let at = |i: isize| values[i.rem_euclid(n as isize) as usize];
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut peaks = Vec::new();
    for i in 0..n as isize {
        let v = at(i);
        // first sample of a plateau that drops on both sides
        if at(i - 1) >= v {
            continue;
        }
        let mut j = i + 1;
        while j < i + n as isize && at(j) == v {
            j += 1;
        }
        if at(j) > v {
            continue;
        }
        let walk = |dir: isize| -> Option<f64> {
            let mut lo = v;
            let mut k = i;
            for _ in 0..n {
                k += dir;
                let w = at(k);
                if w > v {
                    return Some(lo);
                }
                lo = lo.min(w);
            }
            None
        };
        let prominence = match (walk(-1), walk(1)) {
            (Some(l), Some(r)) => v - l.max(r),
            (Some(s), None) | (None, Some(s)) => v - s,
            (None, None) => v - min,
        };
        peaks.push(Peak { index: i as usize, value: v, prominence });
    }
    peaks
}

/// Peaks whose prominence reaches `frac` of the curve's range.
pub fn dominant_peaks(values: &[f64], frac: f64) -> Vec<Peak> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Vec::new();
    }
    circular_peaks(values).into_iter().filter(|p| p.prominence >= frac * range).collect()
}

/// Circular distance between angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}
