//! View synthesis by weighted bilinear splatting with soft z-buffering, plus
//! the classical inverse-warping baseline and the analytic depth gradient of
//! the splatted rendering.
//!
//! Each source pixel is displaced by the disparity model and deposits its
//! color into the four integer neighbors of the fractional target position,
//! weighted by the bilinear factors and a depth attenuation
//! `alpha = exp(-depth / d_max)`. Accumulated colors are normalized by the
//! accumulated weights; canvas areas that received no contribution are
//! masked. Longitude neighborhoods wrap around the seam, the border latitude
//! rows clamp.
//!
//! Scatter accumulation runs serially in row-major source order; only the
//! per-pixel record computation and the normalization map are parallel, so
//! canvases are bitwise independent of the worker count.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use crate::disparity::{BaselineAxis, BaselineSpec};
use crate::raster::{
    ensure_same_grid, BoolRaster, DepthMap, ErpImage, GridMismatch, NonPositiveDepth, Raster,
};
use crate::sphere::ErpGrid;
use crate::util;

/// Splat renderer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatConfig {
    /// Depth attenuation scale in meters; nearer sources outweigh farther
    /// ones by `exp(dd / d_max)` per meter of separation.
    pub d_max: f64,
    /// Stabilizer added to the weight canvas before normalization.
    pub eps_norm: f64,
    /// Weight threshold below which a canvas pixel counts as empty.
    pub eps_mask: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self { d_max: 10.0, eps_norm: 1e-8, eps_mask: 1e-3 }
    }
}

impl SplatConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(RenderError::BadConfig("d_max must be positive"));
        }
        if !(self.eps_norm > 0.0 && self.eps_norm <= self.eps_mask) {
            return Err(RenderError::BadConfig("need 0 < eps_norm <= eps_mask"));
        }
        Ok(())
    }
}

/// Output of the splat renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatResult {
    /// Normalized color canvas; zero on masked pixels.
    pub color: ErpImage,
    /// Accumulated weight canvas.
    pub weights: Raster,
    /// True where the canvas stayed empty (accumulated weight below the
    /// mask threshold).
    pub mask: BoolRaster,
}

impl SplatResult {
    /// Validity raster: the complement of the empty mask.
    pub fn valid(&self) -> BoolRaster {
        self.mask.not()
    }
}

/// One source pixel's splat footprint; kept for the gradient pass.
#[derive(Debug, Clone, Copy, Default)]
struct SplatRecord {
    /// Target indices: top-left, top-right, bottom-left, bottom-right.
    q: [u32; 4],
    beta: [f64; 4],
    alpha: f64,
    fu: f64,
    fv: f64,
    /// d(fractional target)/d(source depth), zero on the clamped border.
    dfu_dd: f64,
    dfv_dd: f64,
}

#[inline]
fn gamma_at(
    baseline: &BaselineSpec,
    sin_lon: f64,
    cos_lon: f64,
    sin_lat: f64,
    cos_lat: f64,
    depth: f64,
) -> (f64, f64) {
    match baseline.axis {
        BaselineAxis::X => (
            baseline.length * cos_lon / (depth * sin_lat),
            baseline.length * sin_lon * cos_lat / depth,
        ),
        BaselineAxis::Y => (0.0, baseline.length * (-sin_lat) / depth),
    }
}

fn col_trig(grid: ErpGrid) -> (Vec<f64>, Vec<f64>) {
    let mut sin_lon = Vec::with_capacity(grid.width());
    let mut cos_lon = Vec::with_capacity(grid.width());
    for u in 0..grid.width() {
        let lon = grid.col_lon(u);
        sin_lon.push(lon.sin());
        cos_lon.push(lon.cos());
    }
    (sin_lon, cos_lon)
}

/// Bilinear footprint of a fractional target pixel, wrap/clamp applied.
#[inline]
fn target_footprint(
    ut_raw: f64,
    vt_raw: f64,
    w: usize,
    h: usize,
) -> ([usize; 4], [f64; 4], f64, f64) {
    let vt = vt_raw.clamp(-0.25, h as f64 - 0.75);
    let mut ut = ut_raw % w as f64;
    if ut < 0.0 {
        ut += w as f64;
    }

    let uf = ut.floor();
    let fu = ut - uf;
    let u0 = uf as usize % w;
    let u1 = (u0 + 1) % w;

    let vf = vt.floor();
    let fv = vt - vf;
    let v0 = vf.max(0.0) as usize;
    let v1 = (vf + 1.0).min(h as f64 - 1.0) as usize;

    (
        [v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1],
        [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
        fu,
        fv,
    )
}

fn compute_records(
    depth: &DepthMap,
    baseline: &BaselineSpec,
    cfg: &SplatConfig,
) -> Vec<SplatRecord> {
    let grid = depth.grid();
    let w = grid.width();
    let h = grid.height();
    let (sin_lon, cos_lon) = col_trig(grid);
    let depth_data = depth.data();
    let b = *baseline;
    let d_max = cfg.d_max;
    let lon_res = grid.lon_res();
    let lat_res = grid.lat_res();

    let mut records = vec![SplatRecord::default(); grid.len()];
    util::rows_mut(&mut records, w, |v, row| {
        let lat = grid.row_lat(v);
        let (sin_lat, cos_lat) = (lat.sin(), lat.cos());
        for (u, rec) in row.iter_mut().enumerate() {
            let d = depth_data[v * w + u];
            let (g_lon, g_lat) = gamma_at(&b, sin_lon[u], cos_lon[u], sin_lat, cos_lat, d);

            // Target position in fractional pixel units; zero disparity maps
            // a pixel exactly onto itself.
            let ut_raw = u as f64 - g_lon / lon_res;
            let vt_raw = v as f64 - g_lat / lat_res;
            let lat_clamped = vt_raw < -0.25 || vt_raw > h as f64 - 0.75;
            let (q, beta, fu, fv) = target_footprint(ut_raw, vt_raw, w, h);

            // gamma scales as 1/depth, so d(gamma)/d(depth) = -gamma/depth.
            let dfu_dd = g_lon / (d * lon_res);
            let dfv_dd = if lat_clamped { 0.0 } else { g_lat / (d * lat_res) };

            *rec = SplatRecord {
                q: [q[0] as u32, q[1] as u32, q[2] as u32, q[3] as u32],
                beta,
                alpha: (-d / d_max).exp(),
                fu,
                fv,
                dfu_dd,
                dfv_dd,
            };
        }
    });
    records
}

fn splat_from_records(
    src_color: &ErpImage,
    records: &[SplatRecord],
    cfg: &SplatConfig,
) -> SplatResult {
    let grid = src_color.grid();
    let src = src_color.data();
    let mut weights = vec![0.0f64; grid.len()];
    let mut color = vec![0.0f64; grid.len() * 3];

    // Deterministic accumulation: a single serial pass in source order.
    for (p, rec) in records.iter().enumerate() {
        let sp = &src[p * 3..p * 3 + 3];
        for k in 0..4 {
            let wgt = rec.alpha * rec.beta[k];
            let q = rec.q[k] as usize;
            weights[q] += wgt;
            let cq = &mut color[q * 3..q * 3 + 3];
            cq[0] += wgt * sp[0];
            cq[1] += wgt * sp[1];
            cq[2] += wgt * sp[2];
        }
    }

    let mut mask = BoolRaster::filled(grid, false);
    let mask_data = mask.data_mut();
    for (q, wgt) in weights.iter().enumerate() {
        if *wgt < cfg.eps_mask {
            mask_data[q] = true;
            color[q * 3..q * 3 + 3].fill(0.0);
        } else {
            let denom = wgt + cfg.eps_norm;
            color[q * 3] /= denom;
            color[q * 3 + 1] /= denom;
            color[q * 3 + 2] /= denom;
        }
    }

    SplatResult {
        color: ErpImage::from_vec(grid, color).expect("sized to grid"),
        weights: Raster::from_vec(grid, weights).expect("sized to grid"),
        mask,
    }
}

fn check_inputs(
    color_grid: ErpGrid,
    depth: &DepthMap,
    cfg: Option<&SplatConfig>,
) -> Result<(), RenderError> {
    ensure_same_grid(color_grid, depth.grid())?;
    depth.validate_positive()?;
    if let Some(cfg) = cfg {
        cfg.validate()?;
    }
    Ok(())
}

/// Synthesizes the displaced view from a source color image and its depth
/// map by forward splatting.
pub fn splat_render(
    src_color: &ErpImage,
    src_depth: &DepthMap,
    baseline: &BaselineSpec,
    cfg: &SplatConfig,
) -> Result<SplatResult, RenderError> {
    check_inputs(src_color.grid(), src_depth, Some(cfg))?;
    let records = compute_records(src_depth, baseline, cfg);
    Ok(splat_from_records(src_color, &records, cfg))
}

/// Splat rendering together with the gradient of `<upstream, color>` with
/// respect to the source depth map.
///
/// The returned raster holds, per source pixel, the derivative of the sum
/// over target pixels and channels of `upstream * color` through the full
/// chain: the bilinear weights, the depth attenuation, and the weight-canvas
/// normalization. The empty-canvas mask is treated as fixed, and the
/// floor/ceil neighborhood boundaries (a measure-zero set) contribute zero.
pub fn splat_render_with_grad(
    src_color: &ErpImage,
    src_depth: &DepthMap,
    baseline: &BaselineSpec,
    cfg: &SplatConfig,
    upstream: &ErpImage,
) -> Result<(SplatResult, Raster), RenderError> {
    check_inputs(src_color.grid(), src_depth, Some(cfg))?;
    ensure_same_grid(src_color.grid(), upstream.grid())?;

    let grid = src_color.grid();
    let w = grid.width();
    let records = compute_records(src_depth, baseline, cfg);
    let result = splat_from_records(src_color, &records, cfg);

    let src = src_color.data();
    let out_color = result.color.data();
    let out_weights = result.weights.data();
    let mask = result.mask.data();
    let up = upstream.data();
    let d_max = cfg.d_max;
    let eps_norm = cfg.eps_norm;
    let records_ref: &[SplatRecord] = &records;

    let mut grad = vec![0.0f64; grid.len()];
    util::rows_mut(&mut grad, w, |v, row| {
        for (u, out) in row.iter_mut().enumerate() {
            let p = v * w + u;
            let rec = &records_ref[p];
            let dalpha = -rec.alpha / d_max;
            let dbeta_dfu = [-(1.0 - rec.fv), 1.0 - rec.fv, -rec.fv, rec.fv];
            let dbeta_dfv = [-(1.0 - rec.fu), -rec.fu, 1.0 - rec.fu, rec.fu];
            let mut g = 0.0;
            for k in 0..4 {
                let q = rec.q[k] as usize;
                if mask[q] {
                    continue;
                }
                let dw = dalpha * rec.beta[k]
                    + rec.alpha * (dbeta_dfu[k] * rec.dfu_dd + dbeta_dfv[k] * rec.dfv_dd);
                let inv = 1.0 / (out_weights[q] + eps_norm);
                let mut s = 0.0;
                for c in 0..3 {
                    s += up[q * 3 + c] * (src[p * 3 + c] - out_color[q * 3 + c]);
                }
                g += dw * inv * s;
            }
            *out = g;
        }
    });

    Ok((result, Raster::from_vec(grid, grad).expect("sized to grid")))
}

/// Reconstructs the source view by bilinearly sampling the target image at
/// the displaced coordinates. Longitude sampling wraps, latitude clamps.
/// Cannot represent occlusions; kept as the baseline the splat renderer is
/// compared against.
pub fn inverse_warp(
    tgt_color: &ErpImage,
    src_depth: &DepthMap,
    baseline: &BaselineSpec,
) -> Result<ErpImage, RenderError> {
    check_inputs(tgt_color.grid(), src_depth, None)?;
    let grid = tgt_color.grid();
    let w = grid.width();
    let h = grid.height();
    let (sin_lon, cos_lon) = col_trig(grid);
    let depth_data = src_depth.data();
    let tgt = tgt_color.data();
    let b = *baseline;
    let lon_res = grid.lon_res();
    let lat_res = grid.lat_res();

    let mut out = vec![0.0f64; grid.len() * 3];
    util::rows_mut(&mut out, w * 3, |v, row| {
        let lat = grid.row_lat(v);
        let (sin_lat, cos_lat) = (lat.sin(), lat.cos());
        for u in 0..w {
            let d = depth_data[v * w + u];
            let (g_lon, g_lat) = gamma_at(&b, sin_lon[u], cos_lon[u], sin_lat, cos_lat, d);
            let ut_raw = u as f64 - g_lon / lon_res;
            let vt_raw = v as f64 - g_lat / lat_res;
            let (q, beta, _, _) = target_footprint(ut_raw, vt_raw, w, h);
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += beta[k] * tgt[q[k] * 3 + c];
                }
                row[u * 3 + c] = acc;
            }
        }
    });

    Ok(ErpImage::from_vec(grid, out).expect("sized to grid"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderError {
    GridMismatch(GridMismatch),
    BadDepth(NonPositiveDepth),
    BadConfig(&'static str),
}

impl fmt::Display for RenderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RenderError::GridMismatch(e) => write!(f, "{e}"),
            RenderError::BadDepth(e) => write!(f, "{e}"),
            RenderError::BadConfig(msg) => write!(f, "bad splat config: {msg}"),
        }
    }
}

impl core::error::Error for RenderError {}

impl From<GridMismatch> for RenderError {
    fn from(e: GridMismatch) -> Self {
        RenderError::GridMismatch(e)
    }
}

impl From<NonPositiveDepth> for RenderError {
    fn from(e: NonPositiveDepth) -> Self {
        RenderError::BadDepth(e)
    }
}
