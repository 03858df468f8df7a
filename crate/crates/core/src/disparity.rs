//! The spherical disparity model: the Jacobian of spherical coordinates with
//! respect to Cartesian ones, baseline-specific angular disparities, and the
//! angular pixel displacement function.
//!
//! Disparity here is first order by design: the supervision losses are
//! differentiated through exactly this model, so it is implemented as given
//! rather than as the exact reprojection (which the tests keep as an
//! independent oracle). Angular disparity `(g_lon, g_lat)` relates to the
//! displaced view by `target_angles = source_angles - gamma`, with the
//! baseline length signed as the offset of the target viewpoint relative to
//! the source along the placement axis.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::raster::{DepthMap, NonPositiveDepth, Raster};
use crate::sphere::{wrap_lon, ErpGrid, Placement, SphericalCoord};
use crate::util;

/// Axis of a stereo baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineAxis {
    /// Horizontal placement, displacement along x.
    X,
    /// Vertical placement, displacement along y.
    Y,
}

/// Stereo placement of a source/target view pair.
///
/// `length` is signed: it is the position of the target viewpoint minus the
/// position of the source viewpoint along `axis`, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSpec {
    pub axis: BaselineAxis,
    pub length: f64,
}

impl BaselineSpec {
    pub fn horizontal(length: f64) -> Self {
        Self { axis: BaselineAxis::X, length }
    }

    pub fn vertical(length: f64) -> Self {
        Self { axis: BaselineAxis::Y, length }
    }

    pub fn placement(&self) -> Placement {
        match self.axis {
            BaselineAxis::X => Placement::Horizontal,
            BaselineAxis::Y => Placement::Vertical,
        }
    }

    /// Same placement, opposite direction.
    pub fn reversed(&self) -> Self {
        Self { axis: self.axis, length: -self.length }
    }
}

/// Angular disparity pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngularDisparity {
    pub lon: f64,
    pub lat: f64,
}

/// Partial derivatives of `(r, lon, lat)` with respect to `(x, y, z)`,
/// row-major: rows are the spherical coordinates, columns the Cartesian ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalJacobian {
    pub m: [[f64; 3]; 3],
}

impl SphericalJacobian {
    #[inline]
    pub fn row_radius(&self) -> [f64; 3] {
        self.m[0]
    }

    #[inline]
    pub fn row_lon(&self) -> [f64; 3] {
        self.m[1]
    }

    #[inline]
    pub fn row_lat(&self) -> [f64; 3] {
        self.m[2]
    }

    /// First-order change of `(r, lon, lat)` under a Cartesian displacement.
    pub fn apply(&self, dx: f64, dy: f64, dz: f64) -> (f64, f64, f64) {
        let dot = |row: [f64; 3]| row[0] * dx + row[1] * dy + row[2] * dz;
        (dot(self.m[0]), dot(self.m[1]), dot(self.m[2]))
    }
}

/// Jacobian of the spherical coordinates at a point, using the point's own
/// radius. Callers must keep the latitude clamped away from the poles first;
/// latitudes with `sin(lat) <= 0` are rejected.
pub fn spherical_jacobian(coord: &SphericalCoord) -> Result<SphericalJacobian, DisparityError> {
    let r = coord.radius;
    if !(r.is_finite() && coord.lon.is_finite() && coord.lat.is_finite()) || r <= 0.0 {
        return Err(DisparityError::InvalidPoint { radius: r, lat: coord.lat });
    }
    if coord.lat <= 0.0 || coord.lat >= core::f64::consts::PI {
        return Err(DisparityError::LatOutsideClampRange { lat: coord.lat });
    }
    let (sin_lon, cos_lon) = (coord.lon.sin(), coord.lon.cos());
    let (sin_lat, cos_lat) = (coord.lat.sin(), coord.lat.cos());
    let rs = r * sin_lat;
    Ok(SphericalJacobian {
        m: [
            [sin_lon * sin_lat, cos_lat, cos_lon * sin_lat],
            [cos_lon / rs, 0.0, -sin_lon / rs],
            [sin_lon * cos_lat / r, -sin_lat / r, cos_lon * cos_lat / r],
        ],
    })
}

/// First-order angular disparity of a point at depth `radius` along the
/// pixel direction `coord`, for the given baseline.
pub fn disparity(
    radius: f64,
    coord: &SphericalCoord,
    baseline: &BaselineSpec,
) -> Result<AngularDisparity, DisparityError> {
    let at = SphericalCoord { radius, ..*coord };
    let jac = spherical_jacobian(&at)?;
    let (col, _) = match baseline.axis {
        BaselineAxis::X => (0usize, ()),
        BaselineAxis::Y => (1usize, ()),
    };
    let mut lon = baseline.length * jac.m[1][col];
    let lat = baseline.length * jac.m[2][col];
    if baseline.axis == BaselineAxis::Y {
        // No longitudinal disparity for vertical placements, identically.
        lon = 0.0;
    }
    Ok(AngularDisparity { lon, lat })
}

/// Angular pixel displacement: `target = source - gamma`, with the longitude
/// wrapped around the sphere and the latitude clamped to the grid's pole
/// bound. Total after wrap/clamp; the radius is passed through untouched.
pub fn displace(coord: &SphericalCoord, gamma: AngularDisparity, grid: &ErpGrid) -> SphericalCoord {
    SphericalCoord {
        radius: coord.radius,
        lon: wrap_lon(coord.lon - gamma.lon),
        lat: grid.clamp_lat(coord.lat - gamma.lat),
    }
}

/// Per-pixel disparity rasters for a whole depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    baseline: BaselineSpec,
    gamma_lon: Raster,
    gamma_lat: Raster,
}

impl DisparityField {
    pub fn grid(&self) -> ErpGrid {
        self.gamma_lon.grid()
    }

    pub fn baseline(&self) -> BaselineSpec {
        self.baseline
    }

    pub fn gamma_lon(&self) -> &Raster {
        &self.gamma_lon
    }

    pub fn gamma_lat(&self) -> &Raster {
        &self.gamma_lat
    }

    pub fn at(&self, u: usize, v: usize) -> AngularDisparity {
        AngularDisparity { lon: self.gamma_lon.at(u, v), lat: self.gamma_lat.at(u, v) }
    }
}

/// Evaluates the disparity model at every pixel center of a depth map.
pub fn disparity_field(
    depth: &DepthMap,
    baseline: &BaselineSpec,
) -> Result<DisparityField, DisparityError> {
    depth.validate_positive()?;
    let grid = depth.grid();
    let w = grid.width();
    let b = *baseline;

    let mut lon_data = alloc::vec![0.0f64; grid.len()];
    let mut lat_data = alloc::vec![0.0f64; grid.len()];
    {
        let depth_data = depth.data();
        let lat_rows: &mut [f64] = &mut lat_data;
        let lon_rows: &mut [f64] = &mut lon_data;
        util::zip_rows_mut(lon_rows, w, lat_rows, w, |v, lon_row, lat_row| {
            let row_lat = grid.row_lat(v);
            let (sin_lat, cos_lat) = (row_lat.sin(), row_lat.cos());
            for u in 0..w {
                let r = depth_data[v * w + u];
                match b.axis {
                    BaselineAxis::X => {
                        let lon = grid.col_lon(u);
                        lon_row[u] = b.length * lon.cos() / (r * sin_lat);
                        lat_row[u] = b.length * lon.sin() * cos_lat / r;
                    }
                    BaselineAxis::Y => {
                        lon_row[u] = 0.0;
                        lat_row[u] = b.length * (-sin_lat) / r;
                    }
                }
            }
        });
    }

    Ok(DisparityField {
        baseline: b,
        gamma_lon: Raster::from_vec(grid, lon_data).expect("sized to grid"),
        gamma_lat: Raster::from_vec(grid, lat_data).expect("sized to grid"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisparityError {
    /// Non-finite or non-positive radius.
    InvalidPoint { radius: f64, lat: f64 },
    /// Latitude at or beyond a pole; callers clamp before calling.
    LatOutsideClampRange { lat: f64 },
    /// Depth raster contains non-positive pixels.
    BadDepth(NonPositiveDepth),
}

impl fmt::Display for DisparityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisparityError::InvalidPoint { radius, lat } => {
                write!(f, "invalid point: radius {radius}, lat {lat}")
            }
            DisparityError::LatOutsideClampRange { lat } => {
                write!(f, "latitude {lat} outside (0, pi); clamp before calling")
            }
            DisparityError::BadDepth(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for DisparityError {}

impl From<NonPositiveDepth> for DisparityError {
    fn from(e: NonPositiveDepth) -> Self {
        DisparityError::BadDepth(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::CartesianCoord;
    use approx::assert_relative_eq;
    use core::f64::consts::{PI, TAU};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact reprojection: move the camera to the target position, recompute
    /// the angles, subtract. Returns gamma such that target = source - gamma.
    fn exact_disparity(radius: f64, coord: &SphericalCoord, baseline: &BaselineSpec) -> (f64, f64) {
        let p = SphericalCoord { radius, ..*coord }.to_cartesian().unwrap();
        let shifted = match baseline.axis {
            BaselineAxis::X => CartesianCoord::new(p.x - baseline.length, p.y, p.z),
            BaselineAxis::Y => CartesianCoord::new(p.x, p.y - baseline.length, p.z),
        };
        let t = shifted.to_spherical().unwrap();
        let dlon = (coord.lon - t.lon + PI).rem_euclid(TAU) - PI;
        (dlon, coord.lat - t.lat)
    }

    #[test]
    fn jacobian_axis_values() {
        let j = spherical_jacobian(&SphericalCoord::new(2.0, 0.0, PI / 2.0)).unwrap();
        assert_relative_eq!(j.row_lon()[0], 0.5, epsilon = 1e-15); // d lon / d x
        assert_relative_eq!(j.row_lat()[1], -0.5, epsilon = 1e-15); // d lat / d y
        assert!(j.row_lat()[0].abs() < 1e-15); // d lat / d x
        assert_eq!(j.row_lon()[1], 0.0); // d lon / d y is identically zero

        let j = spherical_jacobian(&SphericalCoord::new(1.0, PI / 2.0, PI / 2.0)).unwrap();
        assert!(j.row_lon()[0].abs() < 1e-15);
        assert_relative_eq!(j.row_lon()[2], -1.0, epsilon = 1e-15); // d lon / d z
    }

    #[test]
    fn jacobian_rejects_degenerate_points() {
        assert!(spherical_jacobian(&SphericalCoord::new(0.0, 0.0, 1.0)).is_err());
        assert!(spherical_jacobian(&SphericalCoord::new(1.0, 0.0, 0.0)).is_err());
        assert!(spherical_jacobian(&SphericalCoord::new(1.0, 0.0, PI)).is_err());
        assert!(spherical_jacobian(&SphericalCoord::new(f64::NAN, 0.0, 1.0)).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let lon = rng.gen_range(0.0..TAU);
            let lat = rng.gen_range(0.2..PI - 0.2);
            let r = rng.gen_range(0.5..10.0);
            let c = SphericalCoord::new(r, lon, lat);
            let jac = spherical_jacobian(&c).unwrap();
            let p = c.to_cartesian().unwrap();

            let h = 1e-6 * r;
            for col in 0..3 {
                let mut plus = p;
                let mut minus = p;
                match col {
                    0 => {
                        plus.x += h;
                        minus.x -= h;
                    }
                    1 => {
                        plus.y += h;
                        minus.y -= h;
                    }
                    _ => {
                        plus.z += h;
                        minus.z -= h;
                    }
                }
                let sp = plus.to_spherical().unwrap();
                let sm = minus.to_spherical().unwrap();
                let fd_r = (sp.radius - sm.radius) / (2.0 * h);
                let fd_lon = ((sp.lon - sm.lon + PI).rem_euclid(TAU) - PI) / (2.0 * h);
                let fd_lat = (sp.lat - sm.lat) / (2.0 * h);
                for (analytic, fd) in [
                    (jac.m[0][col], fd_r),
                    (jac.m[1][col], fd_lon),
                    (jac.m[2][col], fd_lat),
                ] {
                    let scale = analytic.abs().max(1e-3);
                    assert!(
                        (analytic - fd).abs() / scale < 1e-5,
                        "col {col}: analytic {analytic}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn vertical_disparity_at_equator() {
        let g = disparity(
            2.0,
            &SphericalCoord::unit(1.3, PI / 2.0),
            &BaselineSpec::vertical(0.26),
        )
        .unwrap();
        assert_eq!(g.lon, 0.0);
        assert_relative_eq!(g.lat, -0.13, epsilon = 1e-15);
    }

    #[test]
    fn horizontal_disparity_vanishes_at_epipole() {
        let g = disparity(
            2.0,
            &SphericalCoord::unit(PI / 2.0, PI / 2.0),
            &BaselineSpec::horizontal(0.26),
        )
        .unwrap();
        assert!(g.lon.abs() < 1e-16);
        assert!(g.lat.abs() < 1e-16);
    }

    #[test]
    fn disparity_matches_exact_reprojection_to_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let lon = rng.gen_range(0.0..TAU);
            // cos(lat) uniform in [-0.75, 0.75] keeps sin(lat) >= 0.66, the
            // band where a first-order model is meaningful.
            let lat = rng.gen_range(-0.75f64..0.75).acos();
            let r = rng.gen_range(1.0..10.0);
            let b = if rng.gen_bool(0.5) {
                BaselineSpec::horizontal(0.26)
            } else {
                BaselineSpec::vertical(0.26)
            };
            let c = SphericalCoord::unit(lon, lat);
            let model = disparity(r, &c, &b).unwrap();
            let (elon, elat) = exact_disparity(r, &c, &b);
            let err = ((model.lon - elon).powi(2) + (model.lat - elat).powi(2)).sqrt();
            let bound = 2.0 * (0.26f64 / r).powi(2);
            assert!(err <= bound, "err {err} > bound {bound} at lon {lon} lat {lat} r {r}");
        }
    }

    #[test]
    fn displace_wraps_longitude_and_clamps_latitude() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let c = SphericalCoord::unit(0.05, 1.0);
        let out = displace(&c, AngularDisparity { lon: 0.13, lat: 0.0 }, &grid);
        assert_relative_eq!(out.lon, TAU - 0.08, epsilon = 1e-12);

        let c = SphericalCoord::unit(1.0, 0.05);
        let out = displace(&c, AngularDisparity { lon: 0.0, lat: 0.1 }, &grid);
        assert_eq!(out.lat, grid.lat_min());

        let c = SphericalCoord::unit(1.0, 1.2);
        let out = displace(&c, AngularDisparity::default(), &grid);
        assert_eq!(out.lon, c.lon);
        assert_eq!(out.lat, c.lat);
    }

    #[test]
    fn field_vertical_is_row_separable() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let depth = DepthMap::constant(grid, 2.0);
        let field = disparity_field(&depth, &BaselineSpec::vertical(0.26)).unwrap();
        for v in 0..32 {
            let expect = -(0.26 / 2.0) * grid.row_lat(v).sin();
            for u in 0..64 {
                assert_eq!(field.at(u, v).lon, 0.0);
                assert_relative_eq!(field.at(u, v).lat, expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn field_horizontal_sign_pattern() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let depth = DepthMap::constant(grid, 3.0);
        let field = disparity_field(&depth, &BaselineSpec::horizontal(0.26)).unwrap();
        for v in 0..32 {
            let lat = grid.row_lat(v);
            for u in 0..64 {
                let lon = grid.col_lon(u);
                let g = field.at(u, v);
                // gamma_lon sign follows cos(lon): flips across the lon = pi/2
                // and lon = 3pi/2 columns.
                assert_eq!(g.lon.signum(), lon.cos().signum());
                // gamma_lat sign follows the sin(lon) * cos(lat) quadrants.
                let q = lon.sin() * lat.cos();
                if q.abs() > 1e-12 {
                    assert_eq!(g.lat.signum(), q.signum());
                }
            }
        }
    }

    #[test]
    fn field_matches_exact_reprojection_and_reports_fit() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth = DepthMap::from_fn(grid, |_, _| rng.gen_range(1.5..6.0));
        for baseline in [BaselineSpec::horizontal(0.26), BaselineSpec::vertical(0.26)] {
            let field = disparity_field(&depth, &baseline).unwrap();
            let mut worst_c = 0.0f64;
            for v in 0..32 {
                for u in 0..64 {
                    let c = grid.pix_to_sph(u as f64, v as f64).unwrap();
                    let r = depth.at(u, v);
                    let (elon, elat) = exact_disparity(r, &c, &baseline);
                    let g = field.at(u, v);
                    let err = ((g.lon - elon).powi(2) + (g.lat - elat).powi(2)).sqrt();
                    worst_c = worst_c.max(err / (0.26 / r).powi(2));
                }
            }
            // Fitted second-order constant; the pole rows dominate for the
            // horizontal placement (the 1/sin(lat) factor), while the
            // vertical model stays tight everywhere.
            std::println!("fitted C for {:?}: {worst_c:.3}", baseline.axis);
            let cap = match baseline.axis {
                BaselineAxis::X => 2000.0,
                BaselineAxis::Y => 2.0,
            };
            assert!(worst_c < cap, "fitted C {worst_c} exceeded {cap}");
        }
    }

    #[test]
    fn field_rejects_bad_depth_with_indices() {
        let grid = ErpGrid::new(8, 4).unwrap();
        let mut depth = DepthMap::constant(grid, 2.0);
        depth.raster_mut().set(3, 1, -1.0);
        match disparity_field(&depth, &BaselineSpec::vertical(0.26)) {
            Err(DisparityError::BadDepth(e)) => assert_eq!(e.indices, alloc::vec![11]),
            other => panic!("expected BadDepth, got {other:?}"),
        }
    }

    #[test]
    fn antisymmetry_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let c = SphericalCoord::unit(rng.gen_range(0.0..TAU), rng.gen_range(0.3..PI - 0.3));
            let r = rng.gen_range(0.5..8.0);
            for mk in [BaselineSpec::horizontal, BaselineSpec::vertical] {
                let plus = disparity(r, &c, &mk(0.26)).unwrap();
                let minus = disparity(r, &c, &mk(-0.26)).unwrap();
                assert_eq!(plus.lon, -minus.lon);
                assert_eq!(plus.lat, -minus.lat);

                // Linear in b, inverse in r; powers of two keep float scaling exact.
                let double_b = disparity(r, &c, &mk(0.52)).unwrap();
                assert_eq!(double_b.lon, 2.0 * plus.lon);
                assert_eq!(double_b.lat, 2.0 * plus.lat);
                let double_r = disparity(2.0 * r, &c, &mk(0.26)).unwrap();
                assert_relative_eq!(double_r.lon, plus.lon / 2.0, max_relative = 1e-12);
                assert_relative_eq!(double_r.lat, plus.lat / 2.0, max_relative = 1e-12);
            }
        }
    }
}
