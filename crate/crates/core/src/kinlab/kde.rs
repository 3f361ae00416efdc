//! Threshold selection from pooled kinematics via Gaussian kernel density
//! estimates: the threshold sits in the deepest valley between the two
//! tallest density modes.

use super::{KinematicTrack, Thresholds};
use crate::error::{Error, Result};

const GRID_POINTS: usize = 512;
const UPPER_PERCENTILE: f64 = 99.5;
const MIN_SAMPLES: usize = 1000;
/// Kernel support in bandwidths; contributions beyond this are below 1e-13.
const KERNEL_RADIUS: f64 = 8.0;
const MIN_MODE_MASS: f64 = 0.01;

/// Linear-interpolated percentile (`p` in [0, 100]) of sorted data.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean_sd(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, sd)
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// When the IQR collapses (more than half the data in one spike) the standard
/// deviation alone is used. Returns `None` for constant data.
pub fn silverman_bandwidth(data: &[f64]) -> Option<f64> {
    let n = data.len();
    if n < 2 {
        return None;
    }
    let (_, sd) = mean_sd(data);
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}

/// `0.9 * sd * n^(-1/5)`, without the IQR term.
fn sd_bandwidth(data: &[f64]) -> Option<f64> {
    if data.len() < 2 {
        return None;
    }
    let h = 0.9 * mean_sd(data).1 * (data.len() as f64).powf(-0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}

/// Gaussian KDE of `data` on `points` equally spaced grid points over `[lo, hi]`.
pub fn gaussian_kde_grid(data: &[f64], bandwidth: f64, lo: f64, hi: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let dx = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + i as f64 * dx).collect();
    let mut density = vec![0.0; points];
    let norm = 1.0 / (data.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let reach = KERNEL_RADIUS * bandwidth;
    for &x in data {
        let first = ((x - reach - lo) / dx).ceil().max(0.0) as usize;
        let last = ((x + reach - lo) / dx).floor();
        if last < 0.0 || first >= points {
            continue;
        }
        let last = (last as usize).min(points - 1);
        for i in first..=last {
            let z = (grid[i] - x) / bandwidth;
            density[i] += (-0.5 * z * z).exp();
        }
    }
    density.iter_mut().for_each(|d| *d *= norm);
    (grid, density)
}

/// Location of the global density minimum between the two tallest modes, or
/// `None` if the density has fewer than two modes.
///
/// A mode is a local maximum whose basin (bounded by the lowest points
/// towards its neighbouring maxima) holds at least 1% of the total mass, so
/// sampling ripples in sparse tails do not count. A run of equal minimal
/// values resolves to its centre.
pub fn valley_between_top_modes(grid: &[f64], density: &[f64]) -> Option<f64> {
    let n = density.len();
    if n < 3 || grid.len() != n {
        return None;
    }
    let peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let above_left = i == 0 || density[i] > density[i - 1];
            let above_right = if i == n - 1 {
                density[i] > density[i - 1]
            } else if i == 0 {
                density[0] > density[1]
            } else {
                density[i] >= density[i + 1]
            };
            above_left && above_right
        })
        .collect();
    if peaks.len() < 2 {
        return None;
    }
    let total: f64 = density.iter().sum();
    let mut bounds = vec![0];
    for w in peaks.windows(2) {
        bounds.push(argmin_centre(density, w[0] + 1, w[1]));
    }
    bounds.push(n - 1);
    let mut modes: Vec<usize> = peaks
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            let mass: f64 = density[bounds[k]..=bounds[k + 1]].iter().sum();
            mass >= MIN_MODE_MASS * total
        })
        .map(|(_, &p)| p)
        .collect();
    if modes.len() < 2 {
        return None;
    }
    // tallest first, earlier index on ties
    modes.sort_by(|&a, &b| density[b].total_cmp(&density[a]).then(a.cmp(&b)));
    let (a, b) = (modes[0].min(modes[1]), modes[0].max(modes[1]));
    if b - a < 2 {
        return None;
    }
    Some(grid[argmin_centre(density, a + 1, b)])
}

/// Index of the minimum over `lo..hi`, centred within a run of equal minima.
fn argmin_centre(density: &[f64], lo: usize, hi: usize) -> usize {
    let inner = &density[lo..hi];
    let min = inner.iter().copied().fold(f64::INFINITY, f64::min);
    let first = inner.iter().position(|&d| d == min).unwrap_or(0);
    let mut last = first;
    while last + 1 < inner.len() && inner[last + 1] == min {
        last += 1;
    }
    lo + (first + last) / 2
}

/// Threshold for one pooled quantity, or `None` when its density is unimodal.
///
/// A heavy spike (e.g. yaw rate while driving straight) shrinks the IQR and
/// with it the robust bandwidth until the other mode shatters into ripples;
/// the standard-deviation bandwidth is tried before giving up.
fn valley_threshold(mut data: Vec<f64>) -> Option<f64> {
    data.sort_by(f64::total_cmp);
    let upper = percentile_sorted(&data, UPPER_PERCENTILE);
    if !(upper > 0.0) {
        return None;
    }
    [silverman_bandwidth(&data), sd_bandwidth(&data)]
        .into_iter()
        .flatten()
        .find_map(|h| {
            let (grid, density) = gaussian_kde_grid(&data, h, 0.0, upper, GRID_POINTS);
            valley_between_top_modes(&grid, &density)
        })
}

/// Estimates speed and yaw-rate thresholds from pooled tracks.
///
/// Each quantity independently falls back to its default when its pooled
/// density is unimodal.
pub fn estimate_thresholds(tracks: &[KinematicTrack]) -> Result<Thresholds> {
    let total: usize = tracks.iter().map(|t| t.len()).sum();
    if tracks.is_empty() || total < MIN_SAMPLES {
        return Err(Error::Estimation(format!(
            "need at least {MIN_SAMPLES} pooled samples, got {total}"
        )));
    }
    for t in tracks {
        t.validate()?;
    }
    let speeds: Vec<f64> = tracks.iter().flat_map(|t| t.speeds()).collect();
    let yaw: Vec<f64> = tracks
        .iter()
        .flat_map(|t| t.psi_dot.iter().map(|w| w.abs()))
        .collect();
    let v_th = valley_threshold(speeds).unwrap_or_else(|| {
        log::warn!("speed density is unimodal; using default v_th");
        Thresholds::DEFAULT_V_TH
    });
    let omega_th = valley_threshold(yaw).unwrap_or_else(|| {
        log::warn!("yaw-rate density is unimodal; using default omega_th");
        Thresholds::DEFAULT_OMEGA_TH
    });
    Thresholds::new(v_th, omega_th)
}
