//! Equirectangular view synthesis and self-supervised depth at desk scale.
//!
//! The crate covers the full pipeline for spherical stereo: ERP grid geometry
//! and coordinate conversions ([`sphere`]), the angular disparity model for
//! horizontal and vertical baselines ([`disparity`]), differentiable view
//! synthesis by bilinear splatting with soft z-buffering ([`render`]),
//! photometric/smoothness training objectives ([`loss`]), distortion-corrected
//! depth evaluation ([`metrics`]), an analytic ERP raycaster for synthetic
//! stereo rigs ([`scene`]), and per-pixel depth recovery by gradient descent
//! on the synthesis loss ([`optim`]).
//!
//! The crate is `no_std` compatible (`alloc` required); disable default
//! features to drop `std`. The `parallel` feature enables rayon-backed row
//! parallelism in the pixel kernels; results are bitwise independent of the
//! worker count because every scatter and scalar reduction runs in a fixed
//! serial order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod disparity;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod render;
pub mod scene;
pub mod sphere;
mod util;

pub use disparity::{AngularDisparity, BaselineAxis, BaselineSpec, DisparityField};
pub use raster::{BoolRaster, DepthMap, ErpImage, Raster};
pub use sphere::{AttentionMask, CartesianCoord, ErpGrid, Placement, SphericalCoord};
