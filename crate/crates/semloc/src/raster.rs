//! Axis-aligned bird's-eye-view grids of scalar values. A raster knows the
//! world position of cell (0,0)'s center and its resolution; rows grow along
//! +y and columns along +x of whatever frame the raster lives in.

use crate::pose::{transform_point, Point2, Pose2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions {width}x{height} do not match value count {len}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("crop window [{x0},{x1}]x[{y0},{y1}] does not overlap the raster extent")]
    EmptyCrop { x0: f64, x1: f64, y0: f64, y1: f64 },
}

/// An axis-aligned rectangle in frame coordinates, used to select raster
/// windows. Bounds are inclusive of cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    /// Rectangle centered on a point with the given full extents.
    pub fn centered(center: Point2, width: f64, height: f64) -> Self {
        Rect {
            x0: center.x - width / 2.0,
            y0: center.y - height / 2.0,
            x1: center.x + width / 2.0,
            y1: center.y + height / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn inflate(&self, margin: f64) -> Rect {
        Rect {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Row-major grid of scalars with world-anchored cell (0,0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    /// Frame position of the center of cell (row 0, col 0).
    pub origin: Point2,
    /// Meters per pixel, identical along both axes.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn filled(origin: Point2, resolution: f64, width: usize, height: usize, v: f64) -> Self {
        Raster {
            origin,
            resolution,
            width,
            height,
            values: vec![v; width * height],
        }
    }

    pub fn zeros(origin: Point2, resolution: f64, width: usize, height: usize) -> Self {
        Self::filled(origin, resolution, width, height, 0.0)
    }

    /// A width×height raster whose cell lattice is centered on the frame
    /// origin (used for vehicle-frame observation rasters).
    pub fn centered_zeros(resolution: f64, width: usize, height: usize) -> Self {
        let origin = Point2::new(
            -(width as f64 - 1.0) / 2.0 * resolution,
            -(height as f64 - 1.0) / 2.0 * resolution,
        );
        Self::zeros(origin, resolution, width, height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    /// Frame position of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.resolution,
            self.origin.y + row as f64 * self.resolution,
        )
    }

    /// Cell containing a frame point (nearest cell center), or None if the
    /// point falls outside the raster.
    pub fn cell_at(&self, p: &Point2) -> Option<(usize, usize)> {
        let col = ((p.x - self.origin.x) / self.resolution).round();
        let row = ((p.y - self.origin.y) / self.resolution).round();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Extent rectangle spanned by the outermost cell centers.
    pub fn extent(&self) -> Rect {
        Rect {
            x0: self.origin.x,
            y0: self.origin.y,
            x1: self.origin.x + (self.width - 1) as f64 * self.resolution,
            y1: self.origin.y + (self.height - 1) as f64 * self.resolution,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Max-combine `value` into every cell whose center lies within
    /// `radius` of `center` (used to stamp disc-shaped detections).
    pub fn stamp_disc(&mut self, center: &Point2, radius: f64, value: f64) {
        let res = self.resolution;
        let c0 = (((center.x - radius - self.origin.x) / res).ceil().max(0.0)) as usize;
        let r0 = (((center.y - radius - self.origin.y) / res).ceil().max(0.0)) as usize;
        let c1 = ((center.x + radius - self.origin.x) / res).floor() as i64;
        let r1 = ((center.y + radius - self.origin.y) / res).floor() as i64;
        if c1 < 0 || r1 < 0 || c0 >= self.width || r0 >= self.height {
            return;
        }
        let c1 = (c1 as usize).min(self.width - 1);
        let r1 = (r1 as usize).min(self.height - 1);
        let rr = radius * radius;
        for row in r0..=r1 {
            let dy = self.origin.y + row as f64 * res - center.y;
            for col in c0..=c1 {
                let dx = self.origin.x + col as f64 * res - center.x;
                if dx * dx + dy * dy <= rr {
                    let cell = &mut self.values[row * self.width + col];
                    if value > *cell {
                        *cell = value;
                    }
                }
            }
        }
    }

    /// Bilinear sample at a frame point; taps outside the support read as 0.
    pub fn sample_bilinear(&self, p: &Point2) -> f64 {
        let fx = (p.x - self.origin.x) / self.resolution;
        let fy = (p.y - self.origin.y) / self.resolution;
        if fx <= -1.0 || fy <= -1.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return 0.0;
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        let tap = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                0.0
            } else {
                self.values[r as usize * self.width + c as usize]
            }
        };
        let v00 = tap(y0, x0);
        let v01 = tap(y0, x0 + 1);
        let v10 = tap(y0 + 1, x0);
        let v11 = tap(y0 + 1, x0 + 1);
        v00 * (1.0 - tx) * (1.0 - ty)
            + v01 * tx * (1.0 - ty)
            + v10 * (1.0 - tx) * ty
            + v11 * tx * ty
    }

    /// Resample this raster into a destination grid related by a rigid
    /// transform: `dst_from_src` maps source-frame points into the
    /// destination frame. Destination cells map back into the source and
    /// read bilinearly; out-of-support cells are 0.
    pub fn resample_rigid(
        &self,
        dst_origin: Point2,
        dst_resolution: f64,
        dst_width: usize,
        dst_height: usize,
        dst_from_src: &Pose2,
    ) -> Raster {
        let src_from_dst = dst_from_src.inverse();
        let mut out = Raster::zeros(dst_origin, dst_resolution, dst_width, dst_height);
        for r in 0..dst_height {
            for c in 0..dst_width {
                let p_dst = out.cell_center(r, c);
                let p_src = transform_point(&src_from_dst, &p_dst);
                let v = self.sample_bilinear(&p_src);
                if v != 0.0 {
                    out.values[r * dst_width + c] = v;
                }
            }
        }
        out
    }
}

/// Sub-raster of `r` aligned to its grid, covering all cells whose centers
/// fall inside `window`; cells of the window outside `r`'s extent are 0.
pub fn crop(r: &Raster, window: &Rect) -> Result<Raster, RasterError> {
    let res = r.resolution;
    // Snap window bounds to source lattice indices (possibly out of range).
    let col0 = ((window.x0 - r.origin.x) / res).ceil() as i64;
    let col1 = ((window.x1 - r.origin.x) / res).floor() as i64;
    let row0 = ((window.y0 - r.origin.y) / res).ceil() as i64;
    let row1 = ((window.y1 - r.origin.y) / res).floor() as i64;
    if col1 < col0 || row1 < row0 {
        return Err(RasterError::EmptyCrop {
            x0: window.x0,
            x1: window.x1,
            y0: window.y0,
            y1: window.y1,
        });
    }
    // The window must overlap the raster extent somewhere.
    if col1 < 0 || row1 < 0 || col0 >= r.width as i64 || row0 >= r.height as i64 {
        return Err(RasterError::EmptyCrop {
            x0: window.x0,
            x1: window.x1,
            y0: window.y0,
            y1: window.y1,
        });
    }
    let width = (col1 - col0 + 1) as usize;
    let height = (row1 - row0 + 1) as usize;
    let origin = Point2::new(
        r.origin.x + col0 as f64 * res,
        r.origin.y + row0 as f64 * res,
    );
    let mut out = Raster::zeros(origin, res, width, height);
    for row in 0..height {
        let src_row = row0 + row as i64;
        if src_row < 0 || src_row >= r.height as i64 {
            continue;
        }
        for col in 0..width {
            let src_col = col0 + col as i64;
            if src_col < 0 || src_col >= r.width as i64 {
                continue;
            }
            out.values[row * width + col] = r.get(src_row as usize, src_col as usize);
        }
    }
    Ok(out)
}
