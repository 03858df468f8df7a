//! Training objectives: photometric reconstruction with spherical attention,
//! Cartesian-deprojected smoothness, total loss, trinocular blending, and the
//! supervised reverse-Huber baseline.
//!
//! The photometric term blends structural dissimilarity against L1 under a
//! factor `eta`, computed on mask-zeroed images; the reconstruction loss is
//! the attention-weighted mean over valid pixels. The smoothness prior
//! penalizes the total variation of the deprojected Cartesian surface points,
//! weighted by the complement of the attention mask and a color-guidance
//! factor.
//!
//! Every reduction runs serially in raster order, so losses and gradients are
//! bitwise reproducible across runs and worker counts.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{
    ensure_same_grid, BoolRaster, DepthMap, ErpImage, GridMismatch, NonPositiveDepth, Raster,
};
use crate::sphere::{AttentionMask, ErpGrid};

/// SSIM luminance stabilizer for a dynamic range of 1.
pub const SSIM_C1: f64 = 1e-4; // 0.01^2
/// SSIM contrast stabilizer for a dynamic range of 1.
pub const SSIM_C2: f64 = 9e-4; // 0.03^2

/// Sign of the exponent in the smoothness color-guidance factor
/// `exp(sign * ||grad I||)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeGuidanceSign {
    /// `exp(+||grad I||)`: strengthens smoothing across color edges.
    Positive,
    /// `exp(-||grad I||)`: relaxes smoothing across color edges (edge-aware;
    /// the default).
    Negative,
}

/// Loss weights and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_recon: f64,
    pub lambda_smooth: f64,
    /// Photometric blend between structural dissimilarity and L1.
    pub eta: f64,
    /// Box-filter kernel size for the SSIM statistics; odd.
    pub ssim_kernel: usize,
    /// Trinocular blend between the vertical and horizontal reconstructions.
    pub lambda_ratio: f64,
    pub edge_sign: EdgeGuidanceSign,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 0.95,
            lambda_smooth: 0.05,
            eta: 0.85,
            ssim_kernel: 5,
            lambda_ratio: 0.6,
            edge_sign: EdgeGuidanceSign::Negative,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if (self.lambda_recon + self.lambda_smooth - 1.0).abs() > 1e-12 {
            return Err(LossError::BadConfig("lambda_recon + lambda_smooth must equal 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(LossError::BadConfig("eta must lie in [0, 1]"));
        }
        if self.ssim_kernel == 0 || self.ssim_kernel % 2 == 0 {
            return Err(LossError::BadConfig("ssim_kernel must be odd"));
        }
        if !(0.0..=1.0).contains(&self.lambda_ratio) {
            return Err(LossError::BadConfig("lambda_ratio must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A scalar loss plus a degeneracy flag for empty reductions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Set when no valid pixels existed and the value defaulted to zero.
    pub degenerate: bool,
}

// ---------------------------------------------------------------------------
// Box filtering (separable mean filter; longitude wraps, latitude clamps)
// ---------------------------------------------------------------------------

fn box_mean_h(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for o in -r..=r {
                let uu = (u as isize + o).rem_euclid(w as isize) as usize;
                acc += src[v * w + uu];
            }
            out[v * w + u] = acc / k as f64;
        }
    }
    out
}

fn box_mean_v(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for o in -r..=r {
                let vv = (v as isize + o).clamp(0, h as isize - 1) as usize;
                acc += src[vv * w + u];
            }
            out[v * w + u] = acc / k as f64;
        }
    }
    out
}

/// `k x k` mean filter with wrap/clamp borders.
fn box_mean(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    box_mean_v(&box_mean_h(src, w, h, k), w, h, k)
}

/// Adjoint of the vertical clamp-padded mean: scatter each row's value back
/// into the rows it was gathered from.
fn box_mean_v_adjoint(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for v in 0..h {
        for o in -r..=r {
            let vv = (v as isize + o).clamp(0, h as isize - 1) as usize;
            for u in 0..w {
                out[vv * w + u] += src[v * w + u] / k as f64;
            }
        }
    }
    out
}

/// Adjoint of [`box_mean`]. The wrapped horizontal pass is self-adjoint; the
/// clamped vertical pass needs the explicit scatter.
fn box_mean_adjoint(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    box_mean_h(&box_mean_v_adjoint(src, w, h, k), w, h, k)
}

// ---------------------------------------------------------------------------
// Photometric terms
// ---------------------------------------------------------------------------

fn channel_slice(img: &ErpImage, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Per-pixel structural dissimilarity `(1 - SSIM) / 2`, averaged over
/// channels. SSIM uses box-filter local statistics of the given odd kernel
/// size and the standard stabilizers for unit dynamic range.
pub fn dssim(a: &ErpImage, b: &ErpImage, kernel: usize) -> Result<Raster, LossError> {
    ensure_same_grid(a.grid(), b.grid())?;
    if kernel == 0 || kernel % 2 == 0 {
        return Err(LossError::BadConfig("ssim kernel must be odd"));
    }
    let grid = a.grid();
    let (w, h) = (grid.width(), grid.height());
    let mut out = vec![0.0; grid.len()];
    for c in 0..3 {
        let x = channel_slice(a, c);
        let y = channel_slice(b, c);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = box_mean(&x, w, h, kernel);
        let mu_y = box_mean(&y, w, h, kernel);
        let m_x2 = box_mean(&x2, w, h, kernel);
        let m_y2 = box_mean(&y2, w, h, kernel);
        let m_xy = box_mean(&xy, w, h, kernel);
        for q in 0..grid.len() {
            let (mx, my) = (mu_x[q], mu_y[q]);
            let var_x = m_x2[q] - mx * mx;
            let var_y = m_y2[q] - my * my;
            let cov = m_xy[q] - mx * my;
            let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
            out[q] += (1.0 - s) / 2.0 / 3.0;
        }
    }
    Ok(Raster::from_vec(grid, out).expect("sized to grid"))
}

fn zeroed_images(tgt: &ErpImage, synth: &ErpImage, valid: &BoolRaster) -> (ErpImage, ErpImage) {
    let grid = tgt.grid();
    let mut x = tgt.clone();
    let mut y = synth.clone();
    for q in 0..grid.len() {
        if !valid.data()[q] {
            x.data_mut()[q * 3..q * 3 + 3].fill(0.0);
            y.data_mut()[q * 3..q * 3 + 3].fill(0.0);
        }
    }
    (x, y)
}

/// Per-pixel photometric error `eta * dssim + (1 - eta) * L1`, with both
/// images zeroed wherever `valid` is false before any statistic is taken.
/// The L1 part is the channel mean of the absolute difference.
pub fn photometric(
    tgt: &ErpImage,
    synth: &ErpImage,
    valid: &BoolRaster,
    eta: f64,
    ssim_kernel: usize,
) -> Result<Raster, LossError> {
    ensure_same_grid(tgt.grid(), synth.grid())?;
    ensure_same_grid(tgt.grid(), valid.grid())?;
    let grid = tgt.grid();
    let (x, y) = zeroed_images(tgt, synth, valid);
    let d = dssim(&x, &y, ssim_kernel)?;
    let mut out = vec![0.0; grid.len()];
    for q in 0..grid.len() {
        let mut l1 = 0.0;
        for c in 0..3 {
            l1 += (x.data()[q * 3 + c] - y.data()[q * 3 + c]).abs();
        }
        l1 /= 3.0;
        out[q] = eta * d.data()[q] + (1.0 - eta) * l1;
    }
    Ok(Raster::from_vec(grid, out).expect("sized to grid"))
}

/// Attention-weighted mean photometric error over valid pixels:
/// `sum(A * M * photo) / sum(M)`. Returns zero with the degenerate flag set
/// when nothing is valid.
pub fn reconstruction_loss(
    photo: &Raster,
    valid: &BoolRaster,
    attn: &AttentionMask,
) -> Result<LossValue, LossError> {
    ensure_same_grid(photo.grid(), valid.grid())?;
    ensure_same_grid(photo.grid(), attn.grid())?;
    let n_valid = valid.count();
    if n_valid == 0 {
        return Ok(LossValue { value: 0.0, degenerate: true });
    }
    let mut acc = 0.0;
    for q in 0..photo.grid().len() {
        if valid.data()[q] {
            acc += attn.values().data()[q] * photo.data()[q];
        }
    }
    Ok(LossValue { value: acc / n_valid as f64, degenerate: false })
}

/// Reconstruction loss together with its gradient with respect to the
/// synthesized image, differentiated through the SSIM statistics, the L1
/// term, and the mask zeroing.
pub fn reconstruction_loss_grad(
    tgt: &ErpImage,
    synth: &ErpImage,
    valid: &BoolRaster,
    attn: &AttentionMask,
    eta: f64,
    ssim_kernel: usize,
) -> Result<(LossValue, ErpImage), LossError> {
    ensure_same_grid(tgt.grid(), synth.grid())?;
    ensure_same_grid(tgt.grid(), valid.grid())?;
    ensure_same_grid(tgt.grid(), attn.grid())?;
    let grid = tgt.grid();
    let (w, h) = (grid.width(), grid.height());
    let n = grid.len();

    let n_valid = valid.count();
    if n_valid == 0 {
        return Ok((LossValue { value: 0.0, degenerate: true }, ErpImage::zeros(grid)));
    }

    let photo = photometric(tgt, synth, valid, eta, ssim_kernel)?;
    let value = reconstruction_loss(&photo, valid, attn)?;

    // Per-pixel outer weight d(loss)/d(photo(q)).
    let mut outer = vec![0.0; n];
    for q in 0..n {
        if valid.data()[q] {
            outer[q] = attn.values().data()[q] / n_valid as f64;
        }
    }

    let (x_img, y_img) = zeroed_images(tgt, synth, valid);
    let mut grad = ErpImage::zeros(grid);
    for c in 0..3 {
        let x = channel_slice(&x_img, c);
        let y = channel_slice(&y_img, c);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = box_mean(&x, w, h, ssim_kernel);
        let mu_y = box_mean(&y, w, h, ssim_kernel);
        let m_x2 = box_mean(&x2, w, h, ssim_kernel);
        let m_y2 = box_mean(&y2, w, h, ssim_kernel);
        let m_xy = box_mean(&xy, w, h, ssim_kernel);

        // Upstream into SSIM: loss <- photo <- eta * dssim, and
        // dssim = mean_c (1 - S_c)/2, so d(dssim)/d(S_c) = -1/6.
        let mut u_mu = vec![0.0; n];
        let mut u_by2 = vec![0.0; n];
        let mut u_bxy = vec![0.0; n];
        for q in 0..n {
            let up = outer[q] * eta * (-1.0 / 6.0);
            if up == 0.0 {
                continue;
            }
            let (mx, my) = (mu_x[q], mu_y[q]);
            let var_x = m_x2[q] - mx * mx;
            let var_y = m_y2[q] - my * my;
            let cov = m_xy[q] - mx * my;
            let n1 = 2.0 * mx * my + SSIM_C1;
            let d1 = mx * mx + my * my + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d2 = var_x + var_y + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            let ds_dn1 = n2 / (d1 * d2);
            let ds_dd1 = -s / d1;
            let ds_dn2 = n1 / (d1 * d2);
            let ds_dd2 = -s / d2;
            // Through sigma_y^2 = B(y^2) - mu_y^2 and sigma_xy = B(xy) - mu_x*mu_y.
            let ds_dmu_y =
                ds_dn1 * 2.0 * mx + ds_dd1 * 2.0 * my - ds_dn2 * 2.0 * mx - ds_dd2 * 2.0 * my;
            u_mu[q] = up * ds_dmu_y;
            u_by2[q] = up * ds_dd2;
            u_bxy[q] = up * ds_dn2 * 2.0;
        }
        let a_mu = box_mean_adjoint(&u_mu, w, h, ssim_kernel);
        let a_by2 = box_mean_adjoint(&u_by2, w, h, ssim_kernel);
        let a_bxy = box_mean_adjoint(&u_bxy, w, h, ssim_kernel);

        for q in 0..n {
            // L1 part: d|x - y|/dy = -sign(x - y).
            let diff = x[q] - y[q];
            let sgn = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g_l1 = outer[q] * (1.0 - eta) * (-sgn) / 3.0;
            let g_ssim = a_mu[q] + 2.0 * y[q] * a_by2[q] + x[q] * a_bxy[q];
            // The mask zeroing gates the chain back to the synthesized image.
            if valid.data()[q] {
                grad.data_mut()[q * 3 + c] = g_l1 + g_ssim;
            }
        }
    }

    Ok((value, grad))
}

// ---------------------------------------------------------------------------
// Smoothness prior
// ---------------------------------------------------------------------------

/// Total-variation smoothness of the deprojected Cartesian surface points,
/// with central differences (longitude wraps, border rows clamp), weighted by
/// the attention complement and the color-guidance factor.
pub fn smoothness_loss(
    depth: &DepthMap,
    color: &ErpImage,
    attn: &AttentionMask,
    edge_sign: EdgeGuidanceSign,
) -> Result<f64, LossError> {
    smoothness_loss_grad(depth, color, attn, edge_sign).map(|(v, _)| v)
}

/// Smoothness loss plus its gradient with respect to the depth map.
pub fn smoothness_loss_grad(
    depth: &DepthMap,
    color: &ErpImage,
    attn: &AttentionMask,
    edge_sign: EdgeGuidanceSign,
) -> Result<(f64, Raster), LossError> {
    ensure_same_grid(depth.grid(), color.grid())?;
    ensure_same_grid(depth.grid(), attn.grid())?;
    depth.validate_positive()?;

    let grid = depth.grid();
    let (w, h) = (grid.width(), grid.height());
    let n = grid.len();
    let d = depth.data();
    let img = color.data();
    let a = attn.values().data();

    // Unit directions per pixel.
    let mut dirs = vec![[0.0f64; 3]; n];
    for v in 0..h {
        let lat = grid.row_lat(v);
        let (sin_lat, cos_lat) = (lat.sin(), lat.cos());
        for u in 0..w {
            let lon = grid.col_lon(u);
            dirs[v * w + u] = [lon.sin() * sin_lat, cos_lat, lon.cos() * sin_lat];
        }
    }

    let east = |u: usize, v: usize| v * w + (u + 1) % w;
    let west = |u: usize, v: usize| v * w + (u + w - 1) % w;
    let south = |u: usize, v: usize| (v + 1).min(h - 1) * w + u;
    let north = |u: usize, v: usize| v.saturating_sub(1) * w + u;

    let point = |q: usize| -> [f64; 3] {
        let dir = dirs[q];
        [d[q] * dir[0], d[q] * dir[1], d[q] * dir[2]]
    };

    let sign = match edge_sign {
        EdgeGuidanceSign::Positive => 1.0,
        EdgeGuidanceSign::Negative => -1.0,
    };

    let mut total = 0.0;
    let mut grad = vec![0.0f64; n];
    for v in 0..h {
        for u in 0..w {
            let (qe, qw, qs, qn) = (east(u, v), west(u, v), south(u, v), north(u, v));
            let (pe, pw, ps, pn) = (point(qe), point(qw), point(qs), point(qn));
            let du = [(pe[0] - pw[0]) / 2.0, (pe[1] - pw[1]) / 2.0, (pe[2] - pw[2]) / 2.0];
            let dv = [(ps[0] - pn[0]) / 2.0, (ps[1] - pn[1]) / 2.0, (ps[2] - pn[2]) / 2.0];
            let s2 = du[0] * du[0] + du[1] * du[1] + du[2] * du[2]
                + dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2];
            let s = s2.sqrt();

            // Color guidance from the image gradient norm over channels.
            let mut gnorm2 = 0.0;
            for c in 0..3 {
                let gu = (img[qe * 3 + c] - img[qw * 3 + c]) / 2.0;
                let gv = (img[qs * 3 + c] - img[qn * 3 + c]) / 2.0;
                gnorm2 += gu * gu + gv * gv;
            }
            let guidance = (sign * gnorm2.sqrt()).exp();

            let q = v * w + u;
            let weight = (1.0 - a[q]) * guidance / n as f64;
            total += weight * s;

            if s > 1e-300 {
                let coef = weight / s;
                let dot = |vec: &[f64; 3], q: usize| {
                    vec[0] * dirs[q][0] + vec[1] * dirs[q][1] + vec[2] * dirs[q][2]
                };
                grad[qe] += coef * dot(&du, qe) / 2.0;
                grad[qw] -= coef * dot(&du, qw) / 2.0;
                grad[qs] += coef * dot(&dv, qs) / 2.0;
                grad[qn] -= coef * dot(&dv, qn) / 2.0;
            }
        }
    }

    Ok((total, Raster::from_vec(grid, grad).expect("sized to grid")))
}

// ---------------------------------------------------------------------------
// Scalar combinators
// ---------------------------------------------------------------------------

/// `lambda_recon * recon + lambda_smooth * smooth`.
pub fn total_loss(recon: f64, smooth: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_recon * recon + cfg.lambda_smooth * smooth
}

/// `ratio * l_ud + (1 - ratio) * l_lr`.
pub fn trinocular_blend(l_ud: f64, l_lr: f64, ratio: f64) -> f64 {
    ratio * l_ud + (1.0 - ratio) * l_lr
}

/// Reverse Huber: `|e|` up to the threshold `c = 0.2 * max|e|`, then the
/// scaled quadratic `(e^2 + c^2) / (2c)`; mean over valid pixels.
pub fn berhu(pred: &DepthMap, gt: &DepthMap, valid: &BoolRaster) -> Result<LossValue, LossError> {
    ensure_same_grid(pred.grid(), gt.grid())?;
    ensure_same_grid(pred.grid(), valid.grid())?;
    let n_valid = valid.count();
    if n_valid == 0 {
        return Ok(LossValue { value: 0.0, degenerate: true });
    }
    let mut max_err = 0.0f64;
    for q in 0..pred.grid().len() {
        if valid.data()[q] {
            max_err = max_err.max((pred.data()[q] - gt.data()[q]).abs());
        }
    }
    if max_err == 0.0 {
        return Ok(LossValue { value: 0.0, degenerate: false });
    }
    let c = 0.2 * max_err;
    let mut acc = 0.0;
    for q in 0..pred.grid().len() {
        if valid.data()[q] {
            let e = (pred.data()[q] - gt.data()[q]).abs();
            acc += if e <= c { e } else { (e * e + c * c) / (2.0 * c) };
        }
    }
    Ok(LossValue { value: acc / n_valid as f64, degenerate: false })
}

/// Peak signal-to-noise ratio in dB over valid pixels, peak value 1.
pub fn masked_psnr(a: &ErpImage, b: &ErpImage, valid: &BoolRaster) -> Result<f64, LossError> {
    ensure_same_grid(a.grid(), b.grid())?;
    ensure_same_grid(a.grid(), valid.grid())?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for q in 0..a.grid().len() {
        if valid.data()[q] {
            for c in 0..3 {
                let d = a.data()[q * 3 + c] - b.data()[q * 3 + c];
                acc += d * d;
            }
            count += 3;
        }
    }
    if count == 0 {
        return Err(LossError::EmptyValidSet);
    }
    let mse = acc / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    GridMismatch(GridMismatch),
    BadDepth(NonPositiveDepth),
    BadConfig(&'static str),
    EmptyValidSet,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::GridMismatch(e) => write!(f, "{e}"),
            LossError::BadDepth(e) => write!(f, "{e}"),
            LossError::BadConfig(msg) => write!(f, "bad loss config: {msg}"),
            LossError::EmptyValidSet => write!(f, "no valid pixels"),
        }
    }
}

impl core::error::Error for LossError {}

impl From<GridMismatch> for LossError {
    fn from(e: GridMismatch) -> Self {
        LossError::GridMismatch(e)
    }
}

impl From<NonPositiveDepth> for LossError {
    fn from(e: NonPositiveDepth) -> Self {
        LossError::BadDepth(e)
    }
}
