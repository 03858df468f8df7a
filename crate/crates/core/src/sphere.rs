//! ERP grid geometry, spherical/Cartesian conversions, attention masks, and
//! coordinate feature maps.
//!
//! A full spherical panorama is stored on a 2:1 equirectangular grid: columns
//! hold constant longitude, rows constant latitude. Longitude `lon` runs in
//! `[0, 2π)` and latitude `lat` is the polar angle measured from the +y axis,
//! in `(0, π)` (y is up, `lat = 0` at the up pole). Pixel `(u, v)` maps to the
//! angles of its center, `((u + 0.5)·lon_res, (v + 0.5)·lat_res)`; the
//! half-pixel offset keeps every sample strictly off the poles so `1/sin(lat)`
//! terms stay bounded.

use core::f64::consts::{PI, TAU};
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::raster::Raster;

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_lon(lon: f64) -> f64 {
    let r = lon % TAU;
    if r < 0.0 {
        r + TAU
    } else {
        r
    }
}

/// Equirectangular raster geometry: pixel counts and angular resolutions.
///
/// Width must be exactly twice the height (2π×π span). Angular resolutions
/// are always derived from the pixel counts, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErpGrid {
    width: usize,
    height: usize,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self, GridError> {
        if height < 2 || width != 2 * height {
            return Err(GridError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Longitudinal angular resolution, 2π/w radians per pixel.
    #[inline]
    pub fn lon_res(&self) -> f64 {
        TAU / self.width as f64
    }

    /// Latitudinal angular resolution, π/h radians per pixel.
    #[inline]
    pub fn lat_res(&self) -> f64 {
        PI / self.height as f64
    }

    /// Latitude clamp bound for computations that leave the grid: a quarter
    /// pixel off the pole, so `sin(lat)` stays bounded away from zero.
    #[inline]
    pub fn lat_min(&self) -> f64 {
        self.lat_res() / 4.0
    }

    /// Clamps a latitude into `[lat_min, π − lat_min]`.
    #[inline]
    pub fn clamp_lat(&self, lat: f64) -> f64 {
        lat.max(self.lat_min()).min(PI - self.lat_min())
    }

    /// Row-major index of pixel `(u, v)`.
    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    /// Longitude of the center of column `u`.
    #[inline]
    pub fn col_lon(&self, u: usize) -> f64 {
        (u as f64 + 0.5) * self.lon_res()
    }

    /// Latitude of the center of row `v`.
    #[inline]
    pub fn row_lat(&self, v: usize) -> f64 {
        (v as f64 + 0.5) * self.lat_res()
    }

    /// Maps fractional pixel coordinates to the spherical angles of the
    /// sample point (unit radius). `u` wraps around the seam; `v` outside
    /// `[0, h)` is a range error.
    pub fn pix_to_sph(&self, u: f64, v: f64) -> Result<SphericalCoord, GridError> {
        if !v.is_finite() || !u.is_finite() || v < 0.0 || v >= self.height as f64 {
            return Err(GridError::LatOutOfRange { v, height: self.height });
        }
        let w = self.width as f64;
        let u = {
            let r = u % w;
            if r < 0.0 {
                r + w
            } else {
                r
            }
        };
        let lon = wrap_lon((u + 0.5) * self.lon_res());
        let lat = self.clamp_lat((v + 0.5) * self.lat_res());
        Ok(SphericalCoord { radius: 1.0, lon, lat })
    }

    /// Inverse of [`pix_to_sph`](Self::pix_to_sph): fractional pixel
    /// coordinates of a direction. `u` lands in `[-0.5, w - 0.5)`, `v` in
    /// `[-0.5, h - 0.5]`; callers wrap or clamp as their resampling requires.
    pub fn sph_to_pix(&self, coord: &SphericalCoord) -> (f64, f64) {
        let u = wrap_lon(coord.lon) / self.lon_res() - 0.5;
        let v = coord.lat / self.lat_res() - 0.5;
        (u, v)
    }
}

impl fmt::Display for ErpGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Spherical position: radius in meters, longitude in `[0, 2π)`, latitude
/// (polar angle from +y) in `[0, π]`. Directions use radius 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub radius: f64,
    pub lon: f64,
    pub lat: f64,
}

impl SphericalCoord {
    /// Builds a coordinate with the longitude wrapped into `[0, 2π)`.
    #[inline]
    pub fn new(radius: f64, lon: f64, lat: f64) -> Self {
        Self { radius, lon: wrap_lon(lon), lat }
    }

    /// Unit-radius direction.
    #[inline]
    pub fn unit(lon: f64, lat: f64) -> Self {
        Self::new(1.0, lon, lat)
    }

    /// Converts to Cartesian coordinates (y up, `lat = 0` at +y, `lon = 0`
    /// towards +z).
    pub fn to_cartesian(&self) -> Result<CartesianCoord, CoordError> {
        if !(self.radius.is_finite() && self.lon.is_finite() && self.lat.is_finite()) {
            return Err(CoordError::NonFinite);
        }
        if self.radius <= 0.0 {
            return Err(CoordError::NonPositiveRadius);
        }
        let (sin_lon, cos_lon) = (self.lon.sin(), self.lon.cos());
        let (sin_lat, cos_lat) = (self.lat.sin(), self.lat.cos());
        Ok(CartesianCoord {
            x: self.radius * sin_lon * sin_lat,
            y: self.radius * cos_lat,
            z: self.radius * cos_lon * sin_lat,
        })
    }
}

/// Cartesian position in meters. y is the up axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianCoord {
    #[inline]
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(&self, other: &Self) -> Self {
        Self {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    #[inline]
    pub fn scaled(&self, s: f64) -> Self {
        Self { x: self.x * s, y: self.y * s, z: self.z * s }
    }

    /// Converts to spherical coordinates. The longitude is the full-quadrant
    /// arctangent of `(x, z)` wrapped into `[0, 2π)`; on the poles (x = z = 0)
    /// it is 0 by convention.
    pub fn to_spherical(&self) -> Result<SphericalCoord, CoordError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(CoordError::NonFinite);
        }
        let r = self.norm();
        if r <= 0.0 {
            return Err(CoordError::ZeroVector);
        }
        let lon = wrap_lon(self.x.atan2(self.z));
        let lat = (self.y / r).clamp(-1.0, 1.0).acos();
        Ok(SphericalCoord { radius: r, lon, lat })
    }
}

impl core::ops::Add for CartesianCoord {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self { x: self.x + rhs.x, y: self.y + rhs.y, z: self.z + rhs.z }
    }
}

impl core::ops::Sub for CartesianCoord {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self { x: self.x - rhs.x, y: self.y - rhs.y, z: self.z - rhs.z }
    }
}

/// Stereo placement of the displaced viewpoint relative to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    /// Baseline along y (up/down pair).
    Vertical,
    /// Baseline along x (left/right pair).
    Horizontal,
}

/// Per-pixel supervision weights that suppress the regions where the
/// first-order disparity model degenerates: `|sin lat|` for vertical
/// placements, `|sin lon|·|sin lat|` for horizontal ones.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    placement: Placement,
    values: Raster,
}

impl AttentionMask {
    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn grid(&self) -> ErpGrid {
        self.values.grid()
    }

    pub fn values(&self) -> &Raster {
        &self.values
    }

    /// The complementary weights `1 − A`, used by the smoothness prior.
    pub fn complement(&self) -> Raster {
        let mut out = self.values.clone();
        for w in out.data_mut() {
            *w = 1.0 - *w;
        }
        out
    }

    /// A mask of the same shape with every weight forced to one. Used for
    /// attention ablations.
    pub fn all_ones(grid: ErpGrid, placement: Placement) -> Self {
        Self { placement, values: Raster::constant(grid, 1.0) }
    }

    /// Wraps arbitrary per-pixel weights as an attention mask. Intended for
    /// ablation experiments; [`attention_mask`] builds the standard weights.
    pub fn with_values(placement: Placement, values: Raster) -> Self {
        Self { placement, values }
    }
}

/// Builds the attention mask for a grid and placement at pixel centers.
pub fn attention_mask(grid: ErpGrid, placement: Placement) -> AttentionMask {
    let values = Raster::from_fn(grid, |u, v| {
        let sin_lat = grid.row_lat(v).sin().abs();
        match placement {
            Placement::Vertical => sin_lat,
            Placement::Horizontal => grid.col_lon(u).sin().abs() * sin_lat,
        }
    });
    AttentionMask { placement, values }
}

/// Normalized grid-coordinate feature maps in `[-1, 1]`: the first raster is
/// linear along width and constant down each column, the second linear along
/// height and constant across each row.
pub fn coord_feature_maps(grid: ErpGrid) -> (Raster, Raster) {
    let w = grid.width() as f64;
    let h = grid.height() as f64;
    let u_map = Raster::from_fn(grid, |u, _| 2.0 * u as f64 / (w - 1.0) - 1.0);
    let v_map = Raster::from_fn(grid, |_, v| 2.0 * v as f64 / (h - 1.0) - 1.0);
    (u_map, v_map)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    /// Width/height pair does not describe a 2:1 full-sphere raster.
    InvalidDims { width: usize, height: usize },
    /// Fractional row coordinate outside `[0, h)`.
    LatOutOfRange { v: f64, height: usize },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::InvalidDims { width, height } => write!(
                f,
                "invalid ERP dims {width}x{height}: need width = 2*height and height >= 2"
            ),
            GridError::LatOutOfRange { v, height } => {
                write!(f, "row coordinate {v} outside [0, {height})")
            }
        }
    }
}

impl core::error::Error for GridError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordError {
    NonFinite,
    ZeroVector,
    NonPositiveRadius,
}

impl fmt::Display for CoordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordError::NonFinite => write!(f, "non-finite coordinate"),
            CoordError::ZeroVector => write!(f, "zero-length vector has no direction"),
            CoordError::NonPositiveRadius => write!(f, "radius must be positive"),
        }
    }
}

impl core::error::Error for CoordError {}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_rejects_bad_dims() {
        assert!(ErpGrid::new(512, 256).is_ok());
        assert!(ErpGrid::new(512, 255).is_err());
        assert!(ErpGrid::new(2, 1).is_err());
        assert!(ErpGrid::new(256, 512).is_err());
    }

    #[test]
    fn angular_resolutions_derive_from_dims() {
        let g = ErpGrid::new(512, 256).unwrap();
        assert_eq!(g.lon_res(), TAU / 512.0);
        assert_eq!(g.lat_res(), PI / 256.0);
        assert_eq!(g.lat_min(), PI / 1024.0);
    }

    #[test]
    fn pix_to_sph_mid_grid() {
        let g = ErpGrid::new(512, 256).unwrap();
        let c = g.pix_to_sph(255.5, 127.5).unwrap();
        assert_relative_eq!(c.lon, PI, max_relative = 1e-15);
        assert_relative_eq!(c.lat, PI / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn pix_to_sph_origin_pixel() {
        let g = ErpGrid::new(512, 256).unwrap();
        let c = g.pix_to_sph(0.0, 0.0).unwrap();
        assert_relative_eq!(c.lon, PI / 512.0, max_relative = 1e-15);
        assert_relative_eq!(c.lat, PI / 512.0, max_relative = 1e-15);
    }

    #[test]
    fn pix_to_sph_matches_direct_recomputation() {
        let g = ErpGrid::new(512, 256).unwrap();
        let c = g.pix_to_sph(511.9, 10.2).unwrap();
        assert_relative_eq!(c.lon, (511.9 + 0.5) % 512.0 * TAU / 512.0, epsilon = 1e-12);
        assert_relative_eq!(c.lat, (10.2 + 0.5) * PI / 256.0, epsilon = 1e-12);
    }

    #[test]
    fn pix_to_sph_wraps_u_and_rejects_bad_v() {
        let g = ErpGrid::new(64, 32).unwrap();
        let a = g.pix_to_sph(-1.0, 3.0).unwrap();
        let b = g.pix_to_sph(63.0, 3.0).unwrap();
        assert_relative_eq!(a.lon, b.lon, epsilon = 1e-12);
        assert!(g.pix_to_sph(0.0, -0.1).is_err());
        assert!(g.pix_to_sph(0.0, 32.0).is_err());
        assert!(g.pix_to_sph(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn sph_to_cart_axis_cases() {
        let c = SphericalCoord::new(1.0, 0.0, PI / 2.0).to_cartesian().unwrap();
        assert_relative_eq!(c.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-15);
        assert_relative_eq!(c.z, 1.0, epsilon = 1e-15);

        let c = SphericalCoord::new(2.0, PI / 2.0, PI / 2.0).to_cartesian().unwrap();
        assert_relative_eq!(c.x, 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-15);
        assert!(c.z.abs() < 1e-15);
    }

    #[test]
    fn cart_to_sph_axis_cases() {
        let s = CartesianCoord::new(0.0, 1.0, 0.0).to_spherical().unwrap();
        assert_eq!(s.lon, 0.0);
        assert_eq!(s.lat, 0.0);
        assert_relative_eq!(s.radius, 1.0);

        let s = CartesianCoord::new(0.0, 0.0, -1.0).to_spherical().unwrap();
        assert_relative_eq!(s.lon, PI, epsilon = 1e-15);
        assert_relative_eq!(s.lat, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn cart_to_sph_rejects_degenerate_input() {
        assert_eq!(
            CartesianCoord::new(0.0, 0.0, 0.0).to_spherical(),
            Err(CoordError::ZeroVector)
        );
        assert_eq!(
            CartesianCoord::new(f64::NAN, 0.0, 0.0).to_spherical(),
            Err(CoordError::NonFinite)
        );
        assert_eq!(
            SphericalCoord::new(-1.0, 0.0, 1.0).to_cartesian(),
            Err(CoordError::NonPositiveRadius)
        );
    }

    #[test]
    fn coordinate_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = ErpGrid::new(512, 256).unwrap();
        for _ in 0..100_000 {
            let lon = rng.gen_range(0.0..TAU);
            let lat = rng.gen_range(1e-6..PI - 1e-6);
            let r = rng.gen_range(0.1..50.0);

            let cart = SphericalCoord::new(r, lon, lat).to_cartesian().unwrap();
            let back = cart.to_spherical().unwrap();
            assert_relative_eq!(back.radius, r, epsilon = 1e-9, max_relative = 1e-12);
            assert_relative_eq!(back.lat, lat, epsilon = 1e-9);
            let dlon = (back.lon - lon + PI).rem_euclid(TAU) - PI;
            assert!(dlon.abs() < 1e-9, "lon {lon} -> {}", back.lon);

            // v stays inside the pole clamp band: lat((v + 0.5)) < pi - lat_min
            // requires v < h - 0.75.
            let u = rng.gen_range(0.0..512.0);
            let v = rng.gen_range(0.0..255.2);
            let c = g.pix_to_sph(u, v).unwrap();
            let (u2, v2) = g.sph_to_pix(&c);
            assert_relative_eq!(u2.rem_euclid(512.0), u, epsilon = 1e-9);
            assert_relative_eq!(v2, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn identity_composition_sph_cart_sph() {
        let c = SphericalCoord::new(1.7, 2.1, 0.8);
        let back = c.to_cartesian().unwrap().to_spherical().unwrap();
        assert_relative_eq!(back.radius, 1.7, epsilon = 1e-9);
        assert_relative_eq!(back.lon, 2.1, epsilon = 1e-9);
        assert_relative_eq!(back.lat, 0.8, epsilon = 1e-9);
    }

    #[test]
    fn coord_maps_are_linear_and_separable() {
        let g = ErpGrid::new(4, 2).unwrap();
        let (u_map, v_map) = coord_feature_maps(g);
        let row: Vec<f64> = (0..4).map(|u| u_map.at(u, 0)).collect();
        for (a, b) in row.iter().zip([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(v_map.at(0, 0), -1.0);
        assert_eq!(v_map.at(3, 1), 1.0);

        let g = ErpGrid::new(64, 32).unwrap();
        let (u_map, v_map) = coord_feature_maps(g);
        for v in 1..32 {
            for u in 0..64 {
                assert_eq!(u_map.at(u, v), u_map.at(u, 0));
                assert_eq!(v_map.at(u, v), v_map.at(0, v));
            }
        }
    }

    #[test]
    fn attention_values_match_formula() {
        let g = ErpGrid::new(512, 256).unwrap();
        let vert = attention_mask(g, Placement::Vertical);
        let horiz = attention_mask(g, Placement::Horizontal);
        for v in 0..256 {
            for u in 0..512 {
                let lon = g.col_lon(u);
                let lat = g.row_lat(v);
                assert!((vert.values().at(u, v) - lat.sin().abs()).abs() < 1e-12);
                assert!(
                    (horiz.values().at(u, v) - lon.sin().abs() * lat.sin().abs()).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn attention_extremes() {
        let g = ErpGrid::new(512, 256).unwrap();
        let vert = attention_mask(g, Placement::Vertical);
        // Equator row is within half a pixel of lat = pi/2.
        assert!(vert.values().at(0, 127) > 0.9999);
        // Pole row tends to zero.
        assert!(vert.values().at(0, 0) < 0.01);

        let horiz = attention_mask(g, Placement::Horizontal);
        // (lon = pi/2, lat = pi/2) has full weight; lon = pi column vanishes.
        assert!(horiz.values().at(127, 127) > 0.9999);
        assert!(horiz.values().at(255, 127) < 0.01);
    }

    #[test]
    fn attention_symmetry_and_range() {
        let g = ErpGrid::new(64, 32).unwrap();
        for placement in [Placement::Vertical, Placement::Horizontal] {
            let mask = attention_mask(g, placement);
            let a = mask.values();
            let comp = mask.complement();
            for v in 0..32 {
                for u in 0..64 {
                    let val = a.at(u, v);
                    assert!((0.0..=1.0).contains(&val));
                    // A + (1 - A) must reconstruct exactly.
                    assert_eq!(val + comp.at(u, v), 1.0);
                    // lat mirror: A(lat) = A(pi - lat).
                    assert_relative_eq!(val, a.at(u, 31 - v), epsilon = 1e-12);
                }
            }
            if placement == Placement::Horizontal {
                for v in 0..32 {
                    for u in 0..64 {
                        // lon mirror: A(lon) = A(2*pi - lon).
                        assert_relative_eq!(a.at(u, v), a.at(63 - u, v), epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn horizontal_mask_dark_bands_at_seam_and_back_columns() {
        let g = ErpGrid::new(512, 256).unwrap();
        let mask = attention_mask(g, Placement::Horizontal);
        // Recompute per pixel independently and locate the minima columns.
        let mut col_mean = vec![0.0f64; 512];
        for u in 0..512 {
            let mut s = 0.0;
            for v in 0..256 {
                let expect = (g.col_lon(u).sin() * g.row_lat(v).sin()).abs();
                assert!((mask.values().at(u, v) - expect).abs() < 1e-12);
                s += mask.values().at(u, v);
            }
            col_mean[u] = s / 256.0;
        }
        // Darkest columns sit next to lon = 0 and lon = pi.
        let min_u = (0..512).min_by(|a, b| col_mean[*a].total_cmp(&col_mean[*b])).unwrap();
        assert!(min_u == 0 || min_u == 511 || min_u == 255 || min_u == 256);
    }
}
