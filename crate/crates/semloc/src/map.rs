//! The sparse HD map: lane-boundary polylines plus a sparse traffic-sign
//! occupancy raster, with rasterization into inverse-truncated-distance and
//! occupancy grids, persistence, and storage accounting.

pub mod io;

use crate::pose::{Point2, Pose2};
use crate::raster::{Raster, Rect};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default meters/pixel for all BEV rasters.
pub const DEFAULT_RESOLUTION: f64 = 0.05;
/// Default truncation distance of the inverse distance transform, meters.
pub const DEFAULT_TRUNCATION: f64 = 1.0;
/// Sign points below this confidence are discarded at map build time.
pub const DEFAULT_SIGN_KEEP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("polyline {index} has {len} vertices; need at least 2")]
    ShortPolyline { index: usize, len: usize },
    #[error("polyline {index} repeats vertex at position {vertex}")]
    RepeatedVertex { index: usize, vertex: usize },
    #[error("rasterization window is empty")]
    EmptyWindow,
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("truncation must be positive, got {0}")]
    BadTruncation(f64),
}

/// Lane boundaries as ordered polylines in the map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub boundaries: Vec<Vec<Point2>>,
}

impl LaneGraph {
    pub fn empty() -> Self {
        LaneGraph { boundaries: vec![] }
    }

    /// Validates that each polyline has ≥ 2 vertices with no immediate repeats.
    pub fn new(boundaries: Vec<Vec<Point2>>) -> Result<Self, MapError> {
        for (index, poly) in boundaries.iter().enumerate() {
            if poly.len() < 2 {
                return Err(MapError::ShortPolyline {
                    index,
                    len: poly.len(),
                });
            }
            for (vertex, pair) in poly.windows(2).enumerate() {
                if pair[0] == pair[1] {
                    return Err(MapError::RepeatedVertex { index, vertex });
                }
            }
        }
        Ok(LaneGraph { boundaries })
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.iter().map(|p| p.len() - 1).sum()
    }

    /// The same geometry re-expressed in the coordinates of `frame` (a pose
    /// in the current frame): each vertex v becomes frame⁻¹ · v.
    pub fn in_frame(&self, frame: &Pose2) -> LaneGraph {
        let inv = frame.inverse();
        LaneGraph {
            boundaries: self
                .boundaries
                .iter()
                .map(|poly| {
                    poly.iter()
                        .map(|v| crate::pose::transform_point(&inv, v))
                        .collect()
                })
                .collect(),
        }
    }

    /// Axis-aligned bounds of all vertices, None when empty.
    pub fn bbox(&self) -> Option<Rect> {
        let mut it = self.boundaries.iter().flatten();
        let first = it.next()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in self.boundaries.iter().flatten() {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        Some(r)
    }
}

/// One nonzero cell of a sparse raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseCell {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// Sparse scalar grid: same geometry metadata as `Raster`, but only nonzero
/// cells are stored (sorted by row, then col). Dense windows materialize on
/// demand, which keeps kilometer-scale sign maps in a few kilobytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRaster {
    pub origin: Point2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<SparseCell>,
}

impl SparseRaster {
    pub fn empty(origin: Point2, resolution: f64, width: usize, height: usize) -> Self {
        SparseRaster {
            origin,
            resolution,
            width,
            height,
            cells: vec![],
        }
    }

    pub fn cell_center(&self, row: u32, col: u32) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.resolution,
            self.origin.y + row as f64 * self.resolution,
        )
    }

    /// Dense raster over the sub-window of this grid covering `window`
    /// (clamped to nothing if disjoint — callers get an all-zero raster of
    /// the requested lattice window either way).
    pub fn dense_window(&self, window: &Rect) -> Raster {
        let res = self.resolution;
        let col0 = ((window.x0 - self.origin.x) / res).ceil() as i64;
        let col1 = ((window.x1 - self.origin.x) / res).floor() as i64;
        let row0 = ((window.y0 - self.origin.y) / res).ceil() as i64;
        let row1 = ((window.y1 - self.origin.y) / res).floor() as i64;
        let width = (col1 - col0 + 1).max(0) as usize;
        let height = (row1 - row0 + 1).max(0) as usize;
        let origin = Point2::new(
            self.origin.x + col0 as f64 * res,
            self.origin.y + row0 as f64 * res,
        );
        let mut out = Raster::zeros(origin, res, width, height);
        if width == 0 || height == 0 {
            return out;
        }
        for cell in &self.cells {
            let r = cell.row as i64 - row0;
            let c = cell.col as i64 - col0;
            if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
                out.values[r as usize * width + c as usize] = cell.value;
            }
        }
        out
    }

    /// Dense raster over the full extent. Intended for tests and small maps.
    pub fn to_dense(&self) -> Raster {
        let mut out = Raster::zeros(self.origin, self.resolution, self.width, self.height);
        for cell in &self.cells {
            out.set(cell.row as usize, cell.col as usize, cell.value);
        }
        out
    }

    pub fn bbox_of_cells(&self) -> Option<Rect> {
        let first = self.cells.first()?;
        let mut r = {
            let p = self.cell_center(first.row, first.col);
            Rect::new(p.x, p.y, p.x, p.y)
        };
        for cell in &self.cells {
            let p = self.cell_center(cell.row, cell.col);
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        Some(r)
    }
}

/// Geo-registered traffic-sign occupancy map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignMap {
    pub raster: SparseRaster,
    /// Meters/pixel; always equals `raster.resolution`.
    pub resolution: f64,
}

/// Frame metadata: the rigid transform mapping UTM coordinates into the map
/// frame, plus a free-form description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub utm_to_map: Pose2,
    pub description: String,
}

/// The persistent map artifact: lane graph + sign raster + frame metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub lanes: LaneGraph,
    pub signs: SignMap,
    pub frame: MapFrame,
}

impl SemanticMap {
    pub fn empty() -> Self {
        SemanticMap {
            lanes: LaneGraph::empty(),
            signs: SignMap {
                raster: SparseRaster::empty(Point2::new(0.0, 0.0), DEFAULT_RESOLUTION, 0, 0),
                resolution: DEFAULT_RESOLUTION,
            },
            frame: MapFrame {
                utm_to_map: Pose2::identity(),
                description: String::new(),
            },
        }
    }

    /// Bounding box of all map geometry (lane vertices and sign cells),
    /// None for a completely empty map.
    pub fn geometry_bbox(&self) -> Option<Rect> {
        let lane_box = self.lanes.bbox();
        let sign_box = self.signs.raster.bbox_of_cells();
        match (lane_box, sign_box) {
            (Some(a), Some(b)) => Some(Rect::new(
                a.x0.min(b.x0),
                a.y0.min(b.y0),
                a.x1.max(b.x1),
                a.y1.max(b.y1),
            )),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }
}

/// Exact Euclidean distance from a point to a segment.
pub fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let apx = p.x - a.x;
    let apy = p.y - a.y;
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return apx.hypot(apy);
    }
    let t = ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0);
    let cx = a.x + t * abx;
    let cy = a.y + t * aby;
    (p.x - cx).hypot(p.y - cy)
}

/// Internal work-horse shared by map rasterization and the simulated lane
/// detector: renders the inverse truncated distance transform of a subset of
/// segments into an exact cell lattice. `keep(polyline, segment)` selects
/// segments, which is how the simulator models per-segment detection dropout
/// while the map path keeps everything (and therefore stays bit-identical to
/// it).
pub(crate) fn render_lane_tdt_grid(
    lanes: &LaneGraph,
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
    truncation: f64,
    mut keep: impl FnMut(usize, usize) -> bool,
) -> Result<Raster, MapError> {
    if resolution <= 0.0 {
        return Err(MapError::BadResolution(resolution));
    }
    if truncation <= 0.0 {
        return Err(MapError::BadTruncation(truncation));
    }
    let mut dist = vec![f64::INFINITY; width * height];

    // Stamp each segment's truncation band; min-reduction over segments is
    // order-independent, so this matches a per-cell scan exactly.
    let margin = truncation + resolution;
    for (pi, poly) in lanes.boundaries.iter().enumerate() {
        for (si, seg) in poly.windows(2).enumerate() {
            if !keep(pi, si) {
                continue;
            }
            let (a, b) = (&seg[0], &seg[1]);
            let x_lo = a.x.min(b.x) - margin;
            let x_hi = a.x.max(b.x) + margin;
            let y_lo = a.y.min(b.y) - margin;
            let y_hi = a.y.max(b.y) + margin;
            let c0 = (((x_lo - origin.x) / resolution).ceil().max(0.0)) as usize;
            let r0 = (((y_lo - origin.y) / resolution).ceil().max(0.0)) as usize;
            if c0 >= width || r0 >= height {
                continue;
            }
            let c1 = ((((x_hi - origin.x) / resolution).floor()) as i64).min(width as i64 - 1);
            let r1 = ((((y_hi - origin.y) / resolution).floor()) as i64).min(height as i64 - 1);
            if c1 < c0 as i64 || r1 < r0 as i64 {
                continue;
            }
            for row in r0..=(r1 as usize) {
                let cy = origin.y + row as f64 * resolution;
                let base = row * width;
                for col in c0..=(c1 as usize) {
                    let cx = origin.x + col as f64 * resolution;
                    let d = point_segment_distance(&Point2::new(cx, cy), a, b);
                    if d < dist[base + col] {
                        dist[base + col] = d;
                    }
                }
            }
        }
    }

    let mut out = Raster::zeros(origin, resolution, width, height);
    for (v, d) in out.values.iter_mut().zip(dist.iter()) {
        if d.is_finite() {
            *v = ((truncation - d) / truncation).max(0.0);
        }
    }
    Ok(out)
}

/// Inverse truncated distance transform of the lane graph over a window:
/// each cell is max(0, (truncation − d)/truncation) with d the distance from
/// the cell center to the nearest lane-boundary segment — 1 on a boundary,
/// 0 at or beyond the truncation distance. An empty lane graph yields an
/// all-zero raster.
pub fn rasterize_lanes(
    lanes: &LaneGraph,
    window: &Rect,
    resolution: f64,
    truncation: f64,
) -> Result<Raster, MapError> {
    if resolution <= 0.0 {
        return Err(MapError::BadResolution(resolution));
    }
    if window.width() < 0.0 || window.height() < 0.0 {
        return Err(MapError::EmptyWindow);
    }
    let width = (window.width() / resolution).floor() as usize + 1;
    let height = (window.height() / resolution).floor() as usize + 1;
    let origin = Point2::new(window.x0, window.y0);
    render_lane_tdt_grid(lanes, origin, resolution, width, height, truncation, |_, _| true)
}

/// `rasterize_lanes` on an explicit cell lattice (origin + integer
/// dimensions) instead of a metric window, for callers that must hit exact
/// raster shapes (correlation crops, observation renders).
pub fn rasterize_lanes_grid(
    lanes: &LaneGraph,
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
    truncation: f64,
) -> Result<Raster, MapError> {
    render_lane_tdt_grid(lanes, origin, resolution, width, height, truncation, |_, _| true)
}

/// Cell centers of the lattice anchored at `lattice_origin` that lie within
/// `radius` of `center` — the occupancy footprint of a disc-shaped object
/// such as a traffic sign, ready to feed `rasterize_signs`.
pub fn disc_cell_points(
    center: &Point2,
    radius: f64,
    lattice_origin: &Point2,
    resolution: f64,
) -> Vec<Point2> {
    let mut out = Vec::new();
    let c0 = ((center.x - radius - lattice_origin.x) / resolution).ceil() as i64;
    let c1 = ((center.x + radius - lattice_origin.x) / resolution).floor() as i64;
    let r0 = ((center.y - radius - lattice_origin.y) / resolution).ceil() as i64;
    let r1 = ((center.y + radius - lattice_origin.y) / resolution).floor() as i64;
    let rr = radius * radius;
    for r in r0..=r1 {
        let y = lattice_origin.y + r as f64 * resolution;
        for c in c0..=c1 {
            let x = lattice_origin.x + c as f64 * resolution;
            let dx = x - center.x;
            let dy = y - center.y;
            if dx * dx + dy * dy <= rr {
                out.push(Point2::new(x, y));
            }
        }
    }
    out
}

/// Rasterize sparse sign detections into an occupancy map: cells take the
/// maximum confidence of the points they contain; points below
/// `keep_threshold` are discarded.
pub fn rasterize_signs(
    sign_points: &[(Point2, f64)],
    window: &Rect,
    resolution: f64,
    keep_threshold: f64,
) -> Result<SignMap, MapError> {
    if resolution <= 0.0 {
        return Err(MapError::BadResolution(resolution));
    }
    if window.width() < 0.0 || window.height() < 0.0 {
        return Err(MapError::EmptyWindow);
    }
    let width = (window.width() / resolution).floor() as usize + 1;
    let height = (window.height() / resolution).floor() as usize + 1;
    let origin = Point2::new(window.x0, window.y0);

    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (p, conf) in sign_points {
        if *conf < keep_threshold {
            continue;
        }
        let col = ((p.x - origin.x) / resolution).round();
        let row = ((p.y - origin.y) / resolution).round();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        let key = (row as u32, col as u32);
        let entry = cells.entry(key).or_insert(0.0);
        if *conf > *entry {
            *entry = *conf;
        }
    }
    let cells = cells
        .into_iter()
        .map(|((row, col), value)| SparseCell { row, col, value })
        .collect();
    Ok(SignMap {
        raster: SparseRaster {
            origin,
            resolution,
            width,
            height,
            cells,
        },
        resolution,
    })
}

/// Byte count and areal density of the serialized map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub bytes: u64,
    pub mib_per_km2: f64,
}

/// Exact serialized size of the map divided by the covered area.
pub fn storage_report(m: &SemanticMap, area_km2: f64) -> StorageReport {
    assert!(area_km2 > 0.0, "area must be positive");
    let bytes = io::serialized_size(m);
    StorageReport {
        bytes,
        mib_per_km2: bytes as f64 / (1024.0 * 1024.0) / area_km2,
    }
}

/// Size a dense 5cm intensity-style raster (one f32 per cell) covering the
/// map's geometry bounding box inflated by 2m would occupy — the comparison
/// point for the sparse format.
pub fn dense_raster_equivalent_bytes(m: &SemanticMap, resolution: f64) -> u64 {
    let Some(bbox) = m.geometry_bbox() else {
        return 0;
    };
    let bbox = bbox.inflate(2.0);
    let w = (bbox.width() / resolution).ceil() as u64 + 1;
    let h = (bbox.height() / resolution).ceil() as u64 + 1;
    w * h * 4
}

/// Area of the map's inflated geometry bounding box in km², the denominator
/// used by `map-info` for areal storage density.
pub fn geometry_area_km2(m: &SemanticMap) -> f64 {
    let Some(bbox) = m.geometry_bbox() else {
        return 0.0;
    };
    let bbox = bbox.inflate(2.0);
    bbox.width() * bbox.height() / 1.0e6
}
