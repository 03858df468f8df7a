//! Analytic ERP raycaster for synthetic stereo rigs: a room shell, spheres,
//! and finite textured rectangles with procedural (hash-based) textures.
//!
//! Depth is the Euclidean distance from the camera to the hit point, color
//! is the flat albedo modulated by the surface texture; there is no lighting
//! model, so photometric consistency across viewpoints holds exactly by
//! construction. Rendering is deterministic given the scene description.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{DepthMap, ErpImage, Raster};
use crate::sphere::{CartesianCoord, ErpGrid};
use crate::util;

/// Procedural surface texture, evaluated at the world-space hit point.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Solid { albedo: [f64; 3] },
    /// World-space 3D checkerboard with the given period in meters.
    Checker { period: f64, albedo_a: [f64; 3], albedo_b: [f64; 3] },
    /// Seeded multi-octave value noise; `scale` is the feature size in
    /// meters, larger values give smoother variation.
    Noise { scale: f64, octaves: u32, seed: u64, albedo: [f64; 3] },
}

impl Texture {
    pub fn eval(&self, p: CartesianCoord) -> [f64; 3] {
        match self {
            Texture::Solid { albedo } => *albedo,
            Texture::Checker { period, albedo_a, albedo_b } => {
                let cell = |x: f64| (x / period).floor() as i64;
                if (cell(p.x) + cell(p.y) + cell(p.z)).rem_euclid(2) == 0 {
                    *albedo_a
                } else {
                    *albedo_b
                }
            }
            Texture::Noise { scale, octaves, seed, albedo } => {
                let n = fbm([p.x / scale, p.y / scale, p.z / scale], *octaves, *seed);
                let shade = 0.2 + 0.8 * n;
                [albedo[0] * shade, albedo[1] * shade, albedo[2] * shade]
            }
        }
    }
}

fn splitmix(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    h = splitmix(h ^ ix as u64);
    h = splitmix(h ^ iy as u64);
    h = splitmix(h ^ iz as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let base = [p[0].floor(), p[1].floor(), p[2].floor()];
    let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let (ix, iy, iz) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let (fx, fy, fz) = (smoothstep(frac[0]), smoothstep(frac[1]), smoothstep(frac[2]));

    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                acc += wx * wy * wz * lattice_value(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

fn fbm(p: [f64; 3], octaves: u32, seed: u64) -> f64 {
    let octaves = octaves.max(1);
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        total += amp * value_noise([p[0] * freq, p[1] * freq, p[2] * freq], seed ^ (o as u64) << 32);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    total / norm
}

/// Scene primitive. The room shell is hit from the inside; spheres and
/// rectangles are free-standing obstacles.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    RoomShell { min: CartesianCoord, max: CartesianCoord, texture: Texture },
    Sphere { center: CartesianCoord, radius: f64, texture: Texture },
    /// Finite two-sided rectangle spanned by two orthonormal in-plane axes.
    Rect {
        center: CartesianCoord,
        u_axis: CartesianCoord,
        v_axis: CartesianCoord,
        half_u: f64,
        half_v: f64,
        texture: Texture,
    },
}

const T_MIN: f64 = 1e-9;

impl Primitive {
    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::RoomShell { texture, .. } => texture,
            Primitive::Sphere { texture, .. } => texture,
            Primitive::Rect { texture, .. } => texture,
        }
    }

    /// Nearest intersection distance along a unit ray, if any.
    pub fn intersect(&self, origin: CartesianCoord, dir: CartesianCoord) -> Option<f64> {
        match self {
            Primitive::RoomShell { min, max, .. } => {
                // Exit distance of a ray starting inside the box.
                let mut t_exit = f64::INFINITY;
                for (o, d, lo, hi) in [
                    (origin.x, dir.x, min.x, max.x),
                    (origin.y, dir.y, min.y, max.y),
                    (origin.z, dir.z, min.z, max.z),
                ] {
                    if d > 0.0 {
                        t_exit = t_exit.min((hi - o) / d);
                    } else if d < 0.0 {
                        t_exit = t_exit.min((lo - o) / d);
                    }
                }
                (t_exit.is_finite() && t_exit > T_MIN).then_some(t_exit)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - *center;
                let b = oc.dot(&dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t_near = -b - sq;
                let t_far = -b + sq;
                if t_near > T_MIN {
                    Some(t_near)
                } else if t_far > T_MIN {
                    Some(t_far)
                } else {
                    None
                }
            }
            Primitive::Rect { center, u_axis, v_axis, half_u, half_v, .. } => {
                let normal = u_axis.cross(v_axis);
                let denom = dir.dot(&normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (*center - origin).dot(&normal) / denom;
                if t <= T_MIN {
                    return None;
                }
                let local = origin + dir.scaled(t) - *center;
                (local.dot(u_axis).abs() <= *half_u && local.dot(v_axis).abs() <= *half_v)
                    .then_some(t)
            }
        }
    }

    /// Absolute value of the implicit surface function at a point; zero on
    /// the surface. Rectangles outside their extents report infinity.
    pub fn surface_residual(&self, p: CartesianCoord) -> f64 {
        match self {
            Primitive::RoomShell { min, max, .. } => {
                let cx = (min.x + max.x) / 2.0;
                let cy = (min.y + max.y) / 2.0;
                let cz = (min.z + max.z) / 2.0;
                let sx = (p.x - cx).abs() - (max.x - min.x) / 2.0;
                let sy = (p.y - cy).abs() - (max.y - min.y) / 2.0;
                let sz = (p.z - cz).abs() - (max.z - min.z) / 2.0;
                sx.max(sy).max(sz).abs()
            }
            Primitive::Sphere { center, radius, .. } => ((p - *center).norm() - radius).abs(),
            Primitive::Rect { center, u_axis, v_axis, half_u, half_v, .. } => {
                let local = p - *center;
                if local.dot(u_axis).abs() <= *half_u && local.dot(v_axis).abs() <= *half_v {
                    local.dot(&u_axis.cross(v_axis)).abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// A renderable collection of primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self { primitives }
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// True when the point lies strictly inside every room shell (vacuously
    /// true for scenes without one, e.g. enclosing sphere shells).
    pub fn contains_camera(&self, p: CartesianCoord) -> bool {
        self.primitives.iter().all(|prim| match prim {
            Primitive::RoomShell { min, max, .. } => {
                p.x > min.x && p.x < max.x && p.y > min.y && p.y < max.y && p.z > min.z && p.z < max.z
            }
            _ => true,
        })
    }

    /// Distance to the closest primitive surface.
    pub fn surface_residual(&self, p: CartesianCoord) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.surface_residual(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn trace(&self, origin: CartesianCoord, dir: CartesianCoord) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, &Primitive)> = None;
        for prim in &self.primitives {
            if let Some(t) = prim.intersect(origin, dir) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, prim));
                }
            }
        }
        best.map(|(t, prim)| (t, prim.texture().eval(origin + dir.scaled(t))))
    }

    /// The built-in textured room used by the command-line tools and the
    /// optimizer tests: a noise-shaded shell with a checkered sphere, a noisy
    /// sphere, and a floating rectangle for occlusion structure.
    pub fn default_textured(seed: u64) -> Self {
        Scene::new(vec![
            Primitive::RoomShell {
                min: CartesianCoord::new(-3.0, -1.6, -4.0),
                max: CartesianCoord::new(3.0, 2.4, 4.0),
                texture: Texture::Noise {
                    scale: 1.3,
                    octaves: 3,
                    seed,
                    albedo: [0.85, 0.8, 0.75],
                },
            },
            Primitive::Sphere {
                center: CartesianCoord::new(1.2, 0.3, 1.5),
                radius: 0.55,
                texture: Texture::Checker {
                    period: 0.35,
                    albedo_a: [0.9, 0.3, 0.25],
                    albedo_b: [0.95, 0.9, 0.85],
                },
            },
            Primitive::Sphere {
                center: CartesianCoord::new(-1.4, -0.4, -1.2),
                radius: 0.5,
                texture: Texture::Noise {
                    scale: 0.5,
                    octaves: 3,
                    seed: seed.wrapping_add(1),
                    albedo: [0.3, 0.55, 0.9],
                },
            },
            Primitive::Rect {
                center: CartesianCoord::new(0.0, -0.2, 2.2),
                u_axis: CartesianCoord::new(1.0, 0.0, 0.0),
                v_axis: CartesianCoord::new(0.0, 1.0, 0.0),
                half_u: 0.9,
                half_v: 0.6,
                texture: Texture::Noise {
                    scale: 0.45,
                    octaves: 2,
                    seed: seed.wrapping_add(2),
                    albedo: [0.95, 0.8, 0.3],
                },
            },
        ])
    }

    /// A room with no texture anywhere: photometric self-supervision has no
    /// signal on it, which the optimizer tests document.
    pub fn untextured() -> Self {
        Scene::new(vec![Primitive::RoomShell {
            min: CartesianCoord::new(-3.0, -1.6, -4.0),
            max: CartesianCoord::new(3.0, 2.4, 4.0),
            texture: Texture::Solid { albedo: [0.7, 0.7, 0.7] },
        }])
    }

    /// Close-range textured obstacles straight ahead and straight behind the
    /// camera, where the horizontal disparity is largest and the horizontal
    /// attention weights vanish. Used by the attention ablation runs.
    pub fn front_back_clutter(seed: u64) -> Self {
        Scene::new(vec![
            Primitive::RoomShell {
                min: CartesianCoord::new(-3.0, -1.6, -4.0),
                max: CartesianCoord::new(3.0, 2.4, 4.0),
                texture: Texture::Noise {
                    scale: 1.1,
                    octaves: 3,
                    seed,
                    albedo: [0.8, 0.82, 0.78],
                },
            },
            Primitive::Rect {
                center: CartesianCoord::new(0.0, 0.0, 1.1),
                u_axis: CartesianCoord::new(1.0, 0.0, 0.0),
                v_axis: CartesianCoord::new(0.0, 1.0, 0.0),
                half_u: 0.8,
                half_v: 0.55,
                texture: Texture::Noise {
                    scale: 0.35,
                    octaves: 3,
                    seed: seed.wrapping_add(3),
                    albedo: [0.9, 0.5, 0.35],
                },
            },
            Primitive::Rect {
                center: CartesianCoord::new(0.15, 0.1, -0.95),
                u_axis: CartesianCoord::new(1.0, 0.0, 0.0),
                v_axis: CartesianCoord::new(0.0, 1.0, 0.0),
                half_u: 0.7,
                half_v: 0.5,
                texture: Texture::Noise {
                    scale: 0.3,
                    octaves: 3,
                    seed: seed.wrapping_add(4),
                    albedo: [0.4, 0.7, 0.9],
                },
            },
        ])
    }
}

/// Color and ground-truth depth of one viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub color: ErpImage,
    pub depth: DepthMap,
}

/// Trinocular capture: a center view plus views displaced along +y (up) and
/// +x (right) by the same baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoRig {
    pub center: View,
    pub up: View,
    pub right: View,
    pub baseline: f64,
}

impl StereoRig {
    pub fn grid(&self) -> ErpGrid {
        self.center.color.grid()
    }

    /// Baseline spec for synthesizing the up view from the center view.
    pub fn baseline_to_up(&self) -> crate::disparity::BaselineSpec {
        crate::disparity::BaselineSpec::vertical(self.baseline)
    }

    /// Baseline spec for synthesizing the right view from the center view.
    pub fn baseline_to_right(&self) -> crate::disparity::BaselineSpec {
        crate::disparity::BaselineSpec::horizontal(self.baseline)
    }
}

/// Raycasts the scene from `origin` on the given grid, returning flat-shaded
/// color and Euclidean hit distances.
pub fn render_scene(
    scene: &Scene,
    origin: CartesianCoord,
    grid: ErpGrid,
) -> Result<(ErpImage, DepthMap), SceneError> {
    let w = grid.width();
    let mut color = vec![0.0f64; grid.len() * 3];
    let mut depth = vec![f64::NAN; grid.len()];

    util::zip_rows_mut(&mut color, w * 3, &mut depth, w, |v, color_row, depth_row| {
        for u in 0..w {
            let dir = grid
                .pix_to_sph(u as f64, v as f64)
                .expect("pixel centers are in range")
                .to_cartesian()
                .expect("unit direction");
            if let Some((t, rgb)) = scene.trace(origin, dir) {
                depth_row[u] = t;
                color_row[u * 3..u * 3 + 3].copy_from_slice(&rgb);
            }
        }
    });

    if let Some(i) = depth.iter().position(|d| d.is_nan()) {
        return Err(SceneError::RayEscaped { u: i % w, v: i / w });
    }

    Ok((
        ErpImage::from_vec(grid, color).expect("sized to grid"),
        DepthMap::from_raster(Raster::from_vec(grid, depth).expect("sized to grid")),
    ))
}

/// Renders the trinocular rig: center, up (+y), and right (+x) views.
pub fn make_rig(
    scene: &Scene,
    center: CartesianCoord,
    baseline: f64,
    grid: ErpGrid,
) -> Result<StereoRig, SceneError> {
    let up_origin = CartesianCoord::new(center.x, center.y + baseline, center.z);
    let right_origin = CartesianCoord::new(center.x + baseline, center.y, center.z);
    for origin in [center, up_origin, right_origin] {
        if !scene.contains_camera(origin) {
            return Err(SceneError::OriginOutsideRoom { x: origin.x, y: origin.y, z: origin.z });
        }
    }
    let render = |origin| {
        render_scene(scene, origin, grid).map(|(color, depth)| View { color, depth })
    };
    Ok(StereoRig {
        center: render(center)?,
        up: render(up_origin)?,
        right: render(right_origin)?,
        baseline,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    /// A ray hit nothing: the room-shell invariant is violated.
    RayEscaped { u: usize, v: usize },
    OriginOutsideRoom { x: f64, y: f64, z: f64 },
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::RayEscaped { u, v } => {
                write!(f, "ray through pixel ({u}, {v}) escaped the scene")
            }
            SceneError::OriginOutsideRoom { x, y, z } => {
                write!(f, "camera origin ({x}, {y}, {z}) is outside the room shell")
            }
        }
    }
}

impl core::error::Error for SceneError {}
