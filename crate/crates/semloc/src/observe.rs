//! Per-hypothesis likelihood grids for the lane, sign, and GPS measurement
//! models: a discretized SE(2) search grid around a dead-reckoning anchor,
//! rotation enumeration plus translational cross-correlation (spatial and
//! FFT paths), and exponential score-to-probability weighting.

pub mod fft;

use crate::map::{self, SemanticMap};
use crate::pose::{compose, transform_point, Point2, Pose2};
use crate::raster::Raster;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObserveError {
    #[error("raster resolutions differ: obs {obs} vs map {map}")]
    ResolutionMismatch { obs: f64, map: f64 },
    #[error("map crop is {got_h}x{got_w} but {want_h}x{want_w} is required for {lat}x{lon} search lags over a {obs_h}x{obs_w} observation")]
    DimensionMismatch {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
        lat: usize,
        lon: usize,
        obs_h: usize,
        obs_w: usize,
    },
    #[error("search lag counts must be ≥ 1, got {lat}x{lon}")]
    EmptySearch { lat: usize, lon: usize },
    #[error("invalid search grid: {0}")]
    BadGrid(String),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("grid translation steps ({lat_step}, {lon_step}) must equal the raster resolution {resolution} for correlation likelihoods")]
    StepMismatch {
        lat_step: f64,
        lon_step: f64,
        resolution: f64,
    },
    #[error("GPS fix is not finite")]
    BadFix,
    #[error(transparent)]
    Map(#[from] map::MapError),
}

/// Geometry of the local search region: half-ranges and step sizes for the
/// lateral, longitudinal, and heading axes. Cell counts are forced odd so
/// the anchor sits on a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub lat_range: f64,
    pub lon_range: f64,
    pub theta_range: f64,
    pub lat_step: f64,
    pub lon_step: f64,
    pub theta_step: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry {
            lat_range: 0.75,
            lon_range: 7.5,
            theta_range: 2.0_f64.to_radians(),
            lat_step: 0.05,
            lon_step: 0.05,
            theta_step: 1.0_f64.to_radians(),
        }
    }
}

impl GridGeometry {
    pub fn validate(&self) -> Result<(), ObserveError> {
        for (name, step) in [
            ("lat_step", self.lat_step),
            ("lon_step", self.lon_step),
            ("theta_step", self.theta_step),
        ] {
            if !(step.is_finite() && step > 0.0) {
                return Err(ObserveError::BadGrid(format!("{name} must be > 0, got {step}")));
            }
        }
        for (name, range) in [
            ("lat_range", self.lat_range),
            ("lon_range", self.lon_range),
            ("theta_range", self.theta_range),
        ] {
            if !(range.is_finite() && range >= 0.0) {
                return Err(ObserveError::BadGrid(format!(
                    "{name} must be ≥ 0, got {range}"
                )));
            }
        }
        Ok(())
    }
}

/// The discretized pose hypothesis set: an odd lattice of (lateral,
/// longitudinal, heading) offsets applied in the anchor's vehicle frame.
/// Cell (i, j, k) has pose anchor ⊕ (lon_offset(j), lat_offset(i),
/// theta_offset(k)); values are laid out with theta outermost, then
/// lateral rows, then longitudinal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub anchor: Pose2,
    pub lat_range: f64,
    pub lon_range: f64,
    pub theta_range: f64,
    pub lat_step: f64,
    pub lon_step: f64,
    pub theta_step: f64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_theta: usize,
}

impl SearchGrid {
    pub fn new(anchor: Pose2, geom: &GridGeometry) -> Result<Self, ObserveError> {
        geom.validate()?;
        let count = |range: f64, step: f64| 2 * (range / step).round() as usize + 1;
        Ok(SearchGrid {
            anchor,
            lat_range: geom.lat_range,
            lon_range: geom.lon_range,
            theta_range: geom.theta_range,
            lat_step: geom.lat_step,
            lon_step: geom.lon_step,
            theta_step: geom.theta_step,
            n_lat: count(geom.lat_range, geom.lat_step),
            n_lon: count(geom.lon_range, geom.lon_step),
            n_theta: count(geom.theta_range, geom.theta_step),
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            lat_range: self.lat_range,
            lon_range: self.lon_range,
            theta_range: self.theta_range,
            lat_step: self.lat_step,
            lon_step: self.lon_step,
            theta_step: self.theta_step,
        }
    }

    /// The same lattice re-anchored at a new dead-reckoning pose.
    pub fn with_anchor(&self, anchor: Pose2) -> SearchGrid {
        SearchGrid {
            anchor,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn lat_offset(&self, i: usize) -> f64 {
        (i as f64 - ((self.n_lat - 1) / 2) as f64) * self.lat_step
    }

    #[inline]
    pub fn lon_offset(&self, j: usize) -> f64 {
        (j as f64 - ((self.n_lon - 1) / 2) as f64) * self.lon_step
    }

    #[inline]
    pub fn theta_offset(&self, k: usize) -> f64 {
        (k as f64 - ((self.n_theta - 1) / 2) as f64) * self.theta_step
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n_lat + i) * self.n_lon + j
    }

    /// Inverse of `index`: (lat, lon, theta) cell coordinates.
    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let j = idx % self.n_lon;
        let t = idx / self.n_lon;
        (t % self.n_lat, j, t / self.n_lat)
    }

    /// Map-frame pose hypothesized by cell (i, j, k): the anchor composed
    /// with the cell's vehicle-frame offset (x forward = longitudinal,
    /// y left = lateral).
    pub fn cell_pose(&self, i: usize, j: usize, k: usize) -> Pose2 {
        compose(
            &self.anchor,
            &Pose2::new(self.lon_offset(j), self.lat_offset(i), self.theta_offset(k)),
        )
    }

    /// Vehicle-frame offset pose of cell (i, j, k) relative to the anchor.
    pub fn cell_offset(&self, i: usize, j: usize, k: usize) -> Pose2 {
        Pose2::new(self.lon_offset(j), self.lat_offset(i), self.theta_offset(k))
    }
}

/// A GPS position fix in UTM coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub position: Point2,
    pub timestamp: f64,
}

/// Raw translational correlation scores: `lat_cells × lon_cells` lags,
/// row-major, where lag (i, j) shifts the observation i cells up the
/// lateral axis and j cells along the longitudinal axis of the crop.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreArray {
    pub lat_cells: usize,
    pub lon_cells: usize,
    pub values: Vec<f64>,
}

impl ScoreArray {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.lon_cells + j]
    }

    /// First-occurrence argmax as (lat lag, lon lag).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (idx, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = idx;
            }
        }
        (best / self.lon_cells, best % self.lon_cells)
    }
}

fn check_correlate(
    obs: &Raster,
    map_crop: &Raster,
    lat_cells: usize,
    lon_cells: usize,
) -> Result<(), ObserveError> {
    if obs.resolution != map_crop.resolution {
        return Err(ObserveError::ResolutionMismatch {
            obs: obs.resolution,
            map: map_crop.resolution,
        });
    }
    if lat_cells == 0 || lon_cells == 0 {
        return Err(ObserveError::EmptySearch {
            lat: lat_cells,
            lon: lon_cells,
        });
    }
    let want_h = obs.height + lat_cells - 1;
    let want_w = obs.width + lon_cells - 1;
    if map_crop.height != want_h || map_crop.width != want_w {
        return Err(ObserveError::DimensionMismatch {
            got_h: map_crop.height,
            got_w: map_crop.width,
            want_h,
            want_w,
            lat: lat_cells,
            lon: lon_cells,
            obs_h: obs.height,
            obs_w: obs.width,
        });
    }
    Ok(())
}

/// Exact spatial-domain cross-correlation: score(i, j) is the inner product
/// of the observation with the map crop shifted by (i, j) cells. The map
/// crop must be exactly the observation size plus the lag counts minus one
/// per axis. Zero observation cells are skipped, which changes nothing in
/// the sums (adding 0·x is exact) but makes sparse observations cheap.
pub fn correlate_spatial(
    obs: &Raster,
    map_crop: &Raster,
    lat_cells: usize,
    lon_cells: usize,
) -> Result<ScoreArray, ObserveError> {
    check_correlate(obs, map_crop, lat_cells, lon_cells)?;
    let mut nonzero: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..obs.height {
        for c in 0..obs.width {
            let v = obs.values[r * obs.width + c];
            if v != 0.0 {
                nonzero.push((r, c, v));
            }
        }
    }
    let cw = map_crop.width;
    let mut values = vec![0.0; lat_cells * lon_cells];
    for i in 0..lat_cells {
        for j in 0..lon_cells {
            let mut acc = 0.0;
            for &(r, c, v) in &nonzero {
                acc += v * map_crop.values[(r + i) * cw + (c + j)];
            }
            values[i * lon_cells + j] = acc;
        }
    }
    Ok(ScoreArray {
        lat_cells,
        lon_cells,
        values,
    })
}

/// Frequency-domain cross-correlation with the same contract as
/// `correlate_spatial` within 1e-6 relative tolerance: both operands are
/// zero-padded to fast transform sizes at least the map-crop size, so every
/// returned lag is a linear (non-circular) correlation value.
pub fn correlate_fft(
    obs: &Raster,
    map_crop: &Raster,
    lat_cells: usize,
    lon_cells: usize,
) -> Result<ScoreArray, ObserveError> {
    check_correlate(obs, map_crop, lat_cells, lon_cells)?;
    let values = fft::correlate_batch_fft(
        &[obs.values.as_slice()],
        obs.height,
        obs.width,
        &map_crop.values,
        lat_cells,
        lon_cells,
    )
    .pop()
    .expect("batch of one");
    Ok(ScoreArray {
        lat_cells,
        lon_cells,
        values,
    })
}

/// Resample an ego-centric raster under a rotation of the vehicle frame by
/// `theta` about the raster frame origin: out(p) = obs(R(−θ)·p), bilinear,
/// with out-of-support samples 0. The output shares the input's lattice.
/// A zero rotation returns a bit-identical copy.
pub fn rotate_raster(obs: &Raster, theta: f64) -> Raster {
    if theta == 0.0 {
        return obs.clone();
    }
    let (s, c) = theta.sin_cos();
    let mut out = Raster::zeros(obs.origin, obs.resolution, obs.width, obs.height);
    // The fractional source index of an output pixel is affine in its
    // (row, col), so walk it with per-column increments; pixels whose 2×2
    // neighborhood is fully interior skip the per-tap bounds checks.
    let res = obs.resolution;
    let (ox, oy) = (obs.origin.x, obs.origin.y);
    let base_x = (c * ox + s * oy - ox) / res;
    let base_y = (-s * ox + c * oy - oy) / res;
    let (w, h) = (obs.width as isize, obs.height as isize);
    let (wf, hf) = (obs.width as f64, obs.height as f64);
    for row in 0..obs.height {
        let mut fx = base_x + s * row as f64;
        let mut fy = base_y + c * row as f64;
        let dst = row * obs.width;
        for col in 0..obs.width {
            if fx > -1.0 && fy > -1.0 && fx < wf && fy < hf {
                let x0f = fx.floor();
                let y0f = fy.floor();
                let tx = fx - x0f;
                let ty = fy - y0f;
                let x0 = x0f as isize;
                let y0 = y0f as isize;
                let v = if x0 >= 0 && y0 >= 0 && x0 + 1 < w && y0 + 1 < h {
                    let idx = y0 as usize * obs.width + x0 as usize;
                    let v00 = obs.values[idx];
                    let v01 = obs.values[idx + 1];
                    let v10 = obs.values[idx + obs.width];
                    let v11 = obs.values[idx + obs.width + 1];
                    v00 * (1.0 - tx) * (1.0 - ty)
                        + v01 * tx * (1.0 - ty)
                        + v10 * (1.0 - tx) * ty
                        + v11 * tx * ty
                } else {
                    let tap = |r: isize, cc: isize| -> f64 {
                        if r < 0 || cc < 0 || r >= h || cc >= w {
                            0.0
                        } else {
                            obs.values[r as usize * obs.width + cc as usize]
                        }
                    };
                    tap(y0, x0) * (1.0 - tx) * (1.0 - ty)
                        + tap(y0, x0 + 1) * tx * (1.0 - ty)
                        + tap(y0 + 1, x0) * (1.0 - tx) * ty
                        + tap(y0 + 1, x0 + 1) * tx * ty
                };
                if v != 0.0 {
                    out.values[dst + col] = v;
                }
            }
            fx += c;
            fy -= s;
        }
    }
    out
}

/// A normalized probability table over a `SearchGrid`, kept alongside its
/// (max-shifted) log-weights so downstream products can run in log space
/// without re-taking logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    pub grid: SearchGrid,
    pub values: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl LikelihoodGrid {
    /// The uninformative factor: every cell 1/N, log-weights 0.
    pub fn uniform(grid: SearchGrid) -> LikelihoodGrid {
        let n = grid.len();
        LikelihoodGrid {
            grid,
            values: vec![1.0 / n as f64; n],
            log_weights: vec![0.0; n],
        }
    }

    /// Normalize finite log-weights into probabilities via a max shift
    /// (log-sum-exp); equal weights — including all-zero raw scores —
    /// reduce to the exact uniform grid.
    pub fn from_log_weights(grid: SearchGrid, log_weights: Vec<f64>) -> LikelihoodGrid {
        assert_eq!(log_weights.len(), grid.len());
        let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = log_weights.iter().map(|l| l - m).collect();
        let mut values: Vec<f64> = shifted.iter().map(|l| l.exp()).collect();
        let z: f64 = values.iter().sum();
        for v in &mut values {
            *v /= z;
        }
        LikelihoodGrid {
            grid,
            values,
            log_weights: shifted,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid coordinates (lat, lon, theta) of the most likely cell.
    pub fn argmax_cell(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (idx, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = idx;
            }
        }
        self.grid.unravel(best)
    }

    /// Shannon entropy in nats, computed from the stored log-weights so the
    /// only transcendental cost is one logarithm for the partition sum.
    pub fn entropy(&self) -> f64 {
        let z: f64 = self.log_weights.iter().map(|l| l.exp()).sum();
        let mut dot = 0.0;
        for (v, l) in self.values.iter().zip(self.log_weights.iter()) {
            if *v > 0.0 {
                dot += v * l;
            }
        }
        z.ln() - dot
    }
}

/// Geometry of the map crop needed to correlate `obs` over every
/// translational lag of `grid`: the observation extent padded by the
/// half-ranges, sharing the observation lattice.
fn crop_geometry(grid: &SearchGrid, obs: &Raster) -> (Point2, usize, usize) {
    let latc = (grid.n_lat - 1) / 2;
    let lonc = (grid.n_lon - 1) / 2;
    let origin = Point2::new(
        obs.origin.x - lonc as f64 * obs.resolution,
        obs.origin.y - latc as f64 * obs.resolution,
    );
    let width = obs.width + grid.n_lon - 1;
    let height = obs.height + grid.n_lat - 1;
    (origin, width, height)
}

fn check_likelihood_inputs(
    grid: &SearchGrid,
    obs: &Raster,
    temperature: f64,
) -> Result<(), ObserveError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ObserveError::BadTemperature(temperature));
    }
    if grid.lat_step != obs.resolution || grid.lon_step != obs.resolution {
        return Err(ObserveError::StepMismatch {
            lat_step: grid.lat_step,
            lon_step: grid.lon_step,
            resolution: obs.resolution,
        });
    }
    Ok(())
}

/// Assemble per-theta score arrays into grid layout and convert to
/// probabilities with exponential weighting exp(score/temperature),
/// normalized over the whole grid.
fn likelihood_from_scores(
    grid: SearchGrid,
    scores: &[Vec<f64>],
    temperature: f64,
) -> LikelihoodGrid {
    debug_assert_eq!(scores.len(), grid.n_theta);
    let mut raw = vec![0.0; grid.len()];
    for (k, slice) in scores.iter().enumerate() {
        debug_assert_eq!(slice.len(), grid.n_lat * grid.n_lon);
        for i in 0..grid.n_lat {
            for j in 0..grid.n_lon {
                raw[grid.index(i, j, k)] = slice[i * grid.n_lon + j];
            }
        }
    }
    let smax = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logw: Vec<f64> = raw.iter().map(|s| (s - smax) / temperature).collect();
    LikelihoodGrid::from_log_weights(grid, logw)
}

/// Lane matching likelihood: the map's lane graph is rasterized as an
/// inverse truncated distance field around the anchor, the observation is
/// rotated per heading hypothesis and cross-correlated (FFT path, one
/// shared map spectrum), and scores become probabilities via exponential
/// weighting. An empty observation yields the uniform factor.
pub fn lane_likelihood(
    obs_lane: &Raster,
    map: &SemanticMap,
    grid: &SearchGrid,
    temperature: f64,
) -> Result<LikelihoodGrid, ObserveError> {
    check_likelihood_inputs(grid, obs_lane, temperature)?;
    if obs_lane.count_nonzero() == 0 {
        return Ok(LikelihoodGrid::uniform(grid.clone()));
    }
    let (crop_origin, crop_w, crop_h) = crop_geometry(grid, obs_lane);
    let lanes_local = map.lanes.in_frame(&grid.anchor);
    let crop = map::rasterize_lanes_grid(
        &lanes_local,
        crop_origin,
        obs_lane.resolution,
        crop_w,
        crop_h,
        map::DEFAULT_TRUNCATION,
    )?;

    let rotated: Vec<Raster> = (0..grid.n_theta)
        .map(|k| rotate_raster(obs_lane, grid.theta_offset(k)))
        .collect();
    let obs_refs: Vec<&[f64]> = rotated.iter().map(|r| r.values.as_slice()).collect();
    let scores = fft::correlate_batch_fft(
        &obs_refs,
        obs_lane.height,
        obs_lane.width,
        &crop.values,
        grid.n_lat,
        grid.n_lon,
    );
    Ok(likelihood_from_scores(grid.clone(), &scores, temperature))
}

/// Sign matching likelihood: same contract as `lane_likelihood` with the
/// sparse sign raster as the reference. The map side is materialized
/// densely around the search window and rigidly resampled into the anchor
/// frame; correlation runs on the spatial path, which is faster than FFT
/// for the few nonzero cells a sign observation carries. No signs in range
/// (or an empty observation) yields the uniform factor.
pub fn sign_likelihood(
    obs_sign: &Raster,
    map: &SemanticMap,
    grid: &SearchGrid,
    temperature: f64,
) -> Result<LikelihoodGrid, ObserveError> {
    check_likelihood_inputs(grid, obs_sign, temperature)?;
    if obs_sign.count_nonzero() == 0 {
        return Ok(LikelihoodGrid::uniform(grid.clone()));
    }
    let (crop_origin, crop_w, crop_h) = crop_geometry(grid, obs_sign);
    let res = obs_sign.resolution;

    // Map-frame bounding box of the anchor-frame crop extent.
    let x1 = crop_origin.x + (crop_w - 1) as f64 * res;
    let y1 = crop_origin.y + (crop_h - 1) as f64 * res;
    let corners = [
        Point2::new(crop_origin.x, crop_origin.y),
        Point2::new(x1, crop_origin.y),
        Point2::new(crop_origin.x, y1),
        Point2::new(x1, y1),
    ];
    let mut bbox = crate::raster::Rect::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for c in &corners {
        let p = transform_point(&grid.anchor, c);
        bbox.x0 = bbox.x0.min(p.x);
        bbox.y0 = bbox.y0.min(p.y);
        bbox.x1 = bbox.x1.max(p.x);
        bbox.y1 = bbox.y1.max(p.y);
    }
    let dense_src = map.signs.raster.dense_window(&bbox.inflate(2.0 * res));
    let crop = if dense_src.count_nonzero() == 0 {
        Raster::zeros(crop_origin, res, crop_w, crop_h)
    } else {
        dense_src.resample_rigid(crop_origin, res, crop_w, crop_h, &grid.anchor.inverse())
    };
    if crop.count_nonzero() == 0 {
        return Ok(LikelihoodGrid::uniform(grid.clone()));
    }

    let mut scores = Vec::with_capacity(grid.n_theta);
    for k in 0..grid.n_theta {
        let rot = rotate_raster(obs_sign, grid.theta_offset(k));
        scores.push(correlate_spatial(&rot, &crop, grid.n_lat, grid.n_lon)?.values);
    }
    Ok(likelihood_from_scores(grid.clone(), &scores, temperature))
}

/// GPS position likelihood: cell value ∝ exp(−d²/σ²) with d the distance
/// from the cell's map-frame position to the fix transformed into the map
/// frame. Constant over the heading axis; normalized over the whole grid.
pub fn gps_likelihood(
    fix: &GpsFix,
    utm_to_map: &Pose2,
    grid: &SearchGrid,
    sigma: f64,
) -> Result<LikelihoodGrid, ObserveError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(ObserveError::BadSigma(sigma));
    }
    if !(fix.position.x.is_finite() && fix.position.y.is_finite()) {
        return Err(ObserveError::BadFix);
    }
    let g = transform_point(utm_to_map, &fix.position);
    let inv_s2 = 1.0 / (sigma * sigma);
    let slice_len = grid.n_lat * grid.n_lon;
    let mut slice = vec![0.0; slice_len];
    for i in 0..grid.n_lat {
        for j in 0..grid.n_lon {
            let p = transform_point(
                &grid.anchor,
                &Point2::new(grid.lon_offset(j), grid.lat_offset(i)),
            );
            let dx = g.x - p.x;
            let dy = g.y - p.y;
            slice[i * grid.n_lon + j] = -(dx * dx + dy * dy) * inv_s2;
        }
    }
    // Heading hypotheses share the position column exactly.
    let mut logw = vec![0.0; grid.len()];
    for k in 0..grid.n_theta {
        logw[k * slice_len..(k + 1) * slice_len].copy_from_slice(&slice);
    }
    Ok(LikelihoodGrid::from_log_weights(grid.clone(), logw))
}
