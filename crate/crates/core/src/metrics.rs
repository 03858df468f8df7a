//! Distortion-corrected depth evaluation: spherically weighted error metrics
//! and percentile accuracies sampled on a generalized spiral over the sphere.
//!
//! Dense ERP metrics weight every pixel by `sin(lat)` so pole rows do not
//! dominate the averages, and the delta accuracies are evaluated only at a
//! near-uniform spherical point set instead of the distorted raster.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::raster::{ensure_same_grid, BoolRaster, DepthMap, GridMismatch};
use crate::sphere::{CartesianCoord, ErpGrid, SphericalCoord};

/// The seven-metric evaluation record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    /// Meters.
    pub rmse: f64,
    pub rmsle: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub n_valid: usize,
    pub n_spiral: usize,
}

impl MetricsReport {
    /// Fixed CSV field order.
    pub const CSV_FIELDS: &'static str =
        "abs_rel,sq_rel,rmse,rmsle,d1,d2,d3,n_valid,n_spiral";

    /// The record as a single CSV line (no header).
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmsle,
            self.d1,
            self.d2,
            self.d3,
            self.n_valid,
            self.n_spiral
        )
    }

    /// Human-readable table, one metric per line.
    pub fn table_lines(&self) -> Vec<String> {
        alloc::vec![
            format!("abs_rel   {:>12.6}", self.abs_rel),
            format!("sq_rel    {:>12.6}", self.sq_rel),
            format!("rmse      {:>12.6} m", self.rmse),
            format!("rmsle     {:>12.6}", self.rmsle),
            format!("delta_1   {:>12.6}", self.d1),
            format!("delta_2   {:>12.6}", self.d2),
            format!("delta_3   {:>12.6}", self.d3),
            format!("n_valid   {:>12}", self.n_valid),
            format!("n_spiral  {:>12}", self.n_spiral),
        ]
    }
}

/// Near-uniform deterministic point set on the unit sphere (a generalized
/// spiral: an arccos-latitude ladder with a longitude recurrence).
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralSet {
    points: Vec<CartesianCoord>,
}

impl SpiralSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CartesianCoord] {
        &self.points
    }
}

/// Spiral point count for a grid: a quarter of the pixel count.
pub fn spiral_count(grid: ErpGrid) -> usize {
    (0.25 * grid.len() as f64).round() as usize
}

/// Builds the N-point generalized spiral. The first and last points sit on
/// the poles; interior longitudes advance by `3.6 / (sqrt(N) * sqrt(1 - h^2))`
/// per step, modulo 2 pi.
pub fn spiral_points(n: usize) -> Result<SpiralSet, MetricsError> {
    if n < 2 {
        return Err(MetricsError::SpiralTooSmall { n });
    }
    let mut points = Vec::with_capacity(n);
    let mut lon = 0.0f64;
    for k in 1..=n {
        let h = -1.0 + 2.0 * (k - 1) as f64 / (n - 1) as f64;
        let lat = h.clamp(-1.0, 1.0).acos();
        if k == 1 || k == n {
            lon = 0.0;
        } else {
            lon = (lon + 3.6 / (n as f64).sqrt() / (1.0 - h * h).sqrt())
                % core::f64::consts::TAU;
        }
        points.push(
            SphericalCoord::new(1.0, lon, lat)
                .to_cartesian()
                .expect("unit radius is valid"),
        );
    }
    Ok(SpiralSet { points })
}

fn check_positive_on_valid(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &BoolRaster,
) -> Result<(), MetricsError> {
    for q in 0..pred.grid().len() {
        if valid.data()[q] {
            let (p, g) = (pred.data()[q], gt.data()[q]);
            if !(p > 0.0 && p.is_finite() && g > 0.0 && g.is_finite()) {
                return Err(MetricsError::NonPositiveDepth { index: q });
            }
        }
    }
    Ok(())
}

/// Spherically weighted error metrics over valid pixels. Each per-pixel term
/// is averaged with weight `sin(lat)` (weighted mean, normalized by the
/// weight sum); RMSE and RMSLE take the square root after averaging.
pub fn weighted_errors(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &BoolRaster,
) -> Result<(f64, f64, f64, f64), MetricsError> {
    ensure_same_grid(pred.grid(), gt.grid())?;
    ensure_same_grid(pred.grid(), valid.grid())?;
    check_positive_on_valid(pred, gt, valid)?;

    let grid = pred.grid();
    let w = grid.width();
    let mut weight_sum = 0.0;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut mse = 0.0;
    let mut msle = 0.0;
    for v in 0..grid.height() {
        let weight = grid.row_lat(v).sin();
        for u in 0..w {
            let q = v * w + u;
            if !valid.data()[q] {
                continue;
            }
            let (p, g) = (pred.data()[q], gt.data()[q]);
            let e = p - g;
            weight_sum += weight;
            abs_rel += weight * e.abs() / g;
            sq_rel += weight * e * e / g;
            mse += weight * e * e;
            let le = g.ln() - p.ln();
            msle += weight * le * le;
        }
    }
    if weight_sum == 0.0 {
        return Err(MetricsError::EmptyValidSet);
    }
    Ok((
        abs_rel / weight_sum,
        sq_rel / weight_sum,
        (mse / weight_sum).sqrt(),
        (msle / weight_sum).sqrt(),
    ))
}

/// Percentile accuracies evaluated at the spiral points by nearest-pixel
/// lookup: the fraction of points whose ratio `max(pred/gt, gt/pred)` stays
/// strictly below `1.25^i`. Points landing on invalid ground truth are
/// skipped from both numerator and denominator.
pub fn delta_accuracies(
    pred: &DepthMap,
    gt: &DepthMap,
    spiral: &SpiralSet,
    valid: &BoolRaster,
) -> Result<(f64, f64, f64), MetricsError> {
    ensure_same_grid(pred.grid(), gt.grid())?;
    ensure_same_grid(pred.grid(), valid.grid())?;
    let grid = pred.grid();
    let (w, h) = (grid.width(), grid.height());

    let mut counts = [0usize; 3];
    let mut total = 0usize;
    let thresholds = [1.25, 1.5625, 1.953125];
    for point in spiral.points() {
        let coord = point.to_spherical().expect("spiral points are unit vectors");
        let (ut, vt) = grid.sph_to_pix(&coord);
        let u = (ut.round() as isize).rem_euclid(w as isize) as usize;
        let v = (vt.round() as isize).clamp(0, h as isize - 1) as usize;
        let q = v * w + u;
        if !valid.data()[q] {
            continue;
        }
        let (p, g) = (pred.data()[q], gt.data()[q]);
        if !(p > 0.0 && g > 0.0) {
            return Err(MetricsError::NonPositiveDepth { index: q });
        }
        let ratio = (p / g).max(g / p);
        total += 1;
        for (i, t) in thresholds.iter().enumerate() {
            if ratio < *t {
                counts[i] += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyValidSet);
    }
    Ok((
        counts[0] as f64 / total as f64,
        counts[1] as f64 / total as f64,
        counts[2] as f64 / total as f64,
    ))
}

/// Full report: weighted dense metrics plus spiral delta accuracies with the
/// standard point count for the grid.
pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &BoolRaster,
) -> Result<MetricsReport, MetricsError> {
    let (abs_rel, sq_rel, rmse, rmsle) = weighted_errors(pred, gt, valid)?;
    let spiral = spiral_points(spiral_count(pred.grid()))?;
    let (d1, d2, d3) = delta_accuracies(pred, gt, &spiral, valid)?;
    Ok(MetricsReport {
        abs_rel,
        sq_rel,
        rmse,
        rmsle,
        d1,
        d2,
        d3,
        n_valid: valid.count(),
        n_spiral: spiral.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    GridMismatch(GridMismatch),
    EmptyValidSet,
    SpiralTooSmall { n: usize },
    NonPositiveDepth { index: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::GridMismatch(e) => write!(f, "{e}"),
            MetricsError::EmptyValidSet => write!(f, "no valid samples"),
            MetricsError::SpiralTooSmall { n } => {
                write!(f, "spiral needs at least 2 points, got {n}")
            }
            MetricsError::NonPositiveDepth { index } => {
                write!(f, "non-positive depth at index {index}")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

impl From<GridMismatch> for MetricsError {
    fn from(e: GridMismatch) -> Self {
        MetricsError::GridMismatch(e)
    }
}
