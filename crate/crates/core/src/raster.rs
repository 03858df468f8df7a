//! Row-major float rasters on an ERP grid: scalar fields, RGB images, depth
//! maps, and boolean masks. Rasters are plain `Vec` buffers; all pixel math
//! stays in f64 and color values live in `[0, 1]` linear space.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::sphere::ErpGrid;

/// Single-channel f64 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: ErpGrid,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(grid: ErpGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: ErpGrid, value: f64) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    /// Builds a raster by evaluating `f(u, v)` at every pixel, row-major.
    pub fn from_fn(grid: ErpGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for v in 0..grid.height() {
            for u in 0..grid.width() {
                data.push(f(u, v));
            }
        }
        Self { grid, data }
    }

    pub fn from_vec(grid: ErpGrid, data: Vec<f64>) -> Result<Self, GridMismatch> {
        if data.len() != grid.len() {
            return Err(GridMismatch { expected: grid, got: None, got_len: data.len() });
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[self.grid.idx(u, v)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        let i = self.grid.idx(u, v);
        self.data[i] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

/// RGB image on an ERP grid, interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    grid: ErpGrid,
    data: Vec<f64>,
}

impl ErpImage {
    pub const CHANNELS: usize = 3;

    pub fn zeros(grid: ErpGrid) -> Self {
        Self { grid, data: vec![0.0; grid.len() * Self::CHANNELS] }
    }

    pub fn constant(grid: ErpGrid, rgb: [f64; 3]) -> Self {
        let mut img = Self::zeros(grid);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(grid: ErpGrid, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(grid.len() * Self::CHANNELS);
        for v in 0..grid.height() {
            for u in 0..grid.width() {
                data.extend_from_slice(&f(u, v));
            }
        }
        Self { grid, data }
    }

    pub fn from_vec(grid: ErpGrid, data: Vec<f64>) -> Result<Self, GridMismatch> {
        if data.len() != grid.len() * Self::CHANNELS {
            return Err(GridMismatch { expected: grid, got: None, got_len: data.len() });
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    /// Interleaved RGB buffer, `3 * w * h` values.
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = self.grid.idx(u, v) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = self.grid.idx(u, v) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Extracts one channel as a scalar raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < Self::CHANNELS);
        Raster::from_fn(self.grid, |u, v| self.data[self.grid.idx(u, v) * 3 + c])
    }
}

/// Depth raster: per-pixel Euclidean ray distance in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    raster: Raster,
}

impl DepthMap {
    pub fn constant(grid: ErpGrid, depth: f64) -> Self {
        Self { raster: Raster::constant(grid, depth) }
    }

    pub fn from_fn(grid: ErpGrid, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self { raster: Raster::from_fn(grid, f) }
    }

    pub fn from_raster(raster: Raster) -> Self {
        Self { raster }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.raster.grid()
    }

    #[inline]
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    #[inline]
    pub fn raster_mut(&mut self) -> &mut Raster {
        &mut self.raster
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        self.raster.data()
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.raster.at(u, v)
    }

    /// Errors with the offending indices if any pixel is not strictly
    /// positive and finite.
    pub fn validate_positive(&self) -> Result<(), NonPositiveDepth> {
        let bad: Vec<usize> = self
            .raster
            .data()
            .iter()
            .enumerate()
            .filter(|(_, d)| !(d.is_finite() && **d > 0.0))
            .map(|(i, _)| i)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(NonPositiveDepth { indices: bad })
        }
    }
}

/// Per-pixel boolean raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BoolRaster {
    grid: ErpGrid,
    data: Vec<bool>,
}

impl BoolRaster {
    pub fn filled(grid: ErpGrid, value: bool) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: ErpGrid, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for v in 0..grid.height() {
            for u in 0..grid.width() {
                data.push(f(u, v));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> bool {
        self.data[self.grid.idx(u, v)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Logical complement.
    pub fn not(&self) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|b| !b).collect() }
    }
}

/// Checks that two rasters live on the same grid.
pub fn ensure_same_grid(expected: ErpGrid, got: ErpGrid) -> Result<(), GridMismatch> {
    if expected == got {
        Ok(())
    } else {
        Err(GridMismatch { expected, got: Some(got), got_len: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMismatch {
    pub expected: ErpGrid,
    pub got: Option<ErpGrid>,
    got_len: usize,
}

impl fmt::Display for GridMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.got {
            Some(got) => write!(f, "grid mismatch: expected {}, got {}", self.expected, got),
            None => write!(
                f,
                "buffer length {} does not match grid {} ({} px)",
                self.got_len,
                self.expected,
                self.expected.len()
            ),
        }
    }
}

impl core::error::Error for GridMismatch {}

#[derive(Debug, Clone, PartialEq)]
pub struct NonPositiveDepth {
    pub indices: Vec<usize>,
}

impl fmt::Display for NonPositiveDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} non-positive depth pixels at indices ", self.indices.len())?;
        for (n, i) in self.indices.iter().take(8).enumerate() {
            if n > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}")?;
        }
        if self.indices.len() > 8 {
            write!(f, ", +{} more", self.indices.len() - 8)?;
        }
        Ok(())
    }
}

impl core::error::Error for NonPositiveDepth {}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ErpGrid {
        ErpGrid::new(8, 4).unwrap()
    }

    #[test]
    fn raster_row_major_indexing() {
        let r = Raster::from_fn(grid(), |u, v| (v * 8 + u) as f64);
        assert_eq!(r.at(3, 2), 19.0);
        assert_eq!(r.data()[19], 19.0);
    }

    #[test]
    fn image_channel_extraction() {
        let img = ErpImage::from_fn(grid(), |u, v| [u as f64, v as f64, 0.5]);
        assert_eq!(img.pixel(5, 1), [5.0, 1.0, 0.5]);
        assert_eq!(img.channel(1).at(5, 1), 1.0);
    }

    #[test]
    fn depth_positivity_reports_indices() {
        let mut d = DepthMap::constant(grid(), 2.0);
        d.raster_mut().set(1, 0, 0.0);
        d.raster_mut().set(2, 0, -3.0);
        let err = d.validate_positive().unwrap_err();
        assert_eq!(err.indices, vec![1, 2]);
        assert!(DepthMap::constant(grid(), 1.0).validate_positive().is_ok());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Raster::from_vec(grid(), vec![0.0; 32]).is_ok());
        assert!(Raster::from_vec(grid(), vec![0.0; 31]).is_err());
        assert!(ErpImage::from_vec(grid(), vec![0.0; 96]).is_ok());
        assert!(ErpImage::from_vec(grid(), vec![0.0; 32]).is_err());
    }
}
