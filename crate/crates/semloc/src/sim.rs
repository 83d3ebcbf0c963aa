//! Synthetic highway scenario generation and sensor simulation: a smooth
//! low-curvature centerline with parallel lane boundaries and roadside
//! signs, a ground-truth trajectory driving one lane, and per-frame noisy
//! odometry, GPS, lane rasters, and sign detections.

pub mod log;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterError, MotionIncrement};
use crate::map::{
    self, disc_cell_points, rasterize_signs, LaneGraph, MapError, MapFrame, SemanticMap,
    SignMap, SparseRaster, DEFAULT_RESOLUTION, DEFAULT_TRUNCATION,
};
use crate::observe::GpsFix;
use crate::pose::{inverse_compose, transform_point, wrap_angle, Point2, Pose2};
use crate::raster::{Raster, Rect};
use nalgebra::{Matrix3, Vector3};

/// Sensor frame rate; truth poses are spaced 1/rate seconds apart.
pub const FRAME_RATE_HZ: f64 = 10.0;
/// Standard highway lane width.
pub const LANE_WIDTH_M: f64 = 3.7;
/// Physical radius of a traffic-sign footprint.
pub const SIGN_RADIUS_M: f64 = 0.3;

/// Reported odometry covariance floors. The transition kernel is evaluated
/// on the search lattice, so the reported sigmas are inflated to at least
/// roughly half a grid step; a much narrower kernel could fall entirely
/// between lattice nodes.
const ODOM_LON_SIGMA_FLOOR: f64 = 0.02;
const ODOM_LAT_SIGMA_FLOOR: f64 = 0.02;
const ODOM_YAW_SIGMA_FLOOR: f64 = 0.006;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario config invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Geometry of the scenario: length, lanes, signs, and driving behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Snippet length in meters.
    pub length_m: f64,
    /// Number of lanes; boundaries = lanes + 1.
    pub lane_count: u32,
    /// Mean spacing between roadside signs (exponential gaps, clipped).
    pub sign_spacing_m: f64,
    /// Index of the lane the vehicle drives, 0 = rightmost.
    pub drive_lane: u32,
    /// Speed range in m/s; the profile stays inside it.
    pub speed_range: (f64, f64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            length_m: 2000.0,
            lane_count: 3,
            sign_spacing_m: 500.0,
            drive_lane: 1,
            speed_range: (25.0, 30.0),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(SimError::BadConfig(format!(
                "length_m must be > 0, got {}",
                self.length_m
            )));
        }
        if self.lane_count == 0 {
            return Err(SimError::BadConfig("lane_count must be >= 1".into()));
        }
        if self.drive_lane >= self.lane_count {
            return Err(SimError::BadConfig(format!(
                "drive_lane {} out of range for {} lanes",
                self.drive_lane, self.lane_count
            )));
        }
        if !(self.sign_spacing_m.is_finite() && self.sign_spacing_m > 0.0) {
            return Err(SimError::BadConfig(format!(
                "sign_spacing_m must be > 0, got {}",
                self.sign_spacing_m
            )));
        }
        let (lo, hi) = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(SimError::BadConfig(format!(
                "speed_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Scenario provenance propagated into reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub seed: u64,
    pub length_m: f64,
    pub lane_count: u32,
    pub sign_spacing_m: f64,
}

/// A generated world: the map, the 10 Hz ground-truth trajectory, and the
/// true sign centers (kept alongside the quantized map raster so sensors
/// can be rendered from exact geometry).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: SemanticMap,
    pub truth: Vec<Pose2>,
    pub meta: ScenarioMeta,
    pub sign_centers: Vec<Point2>,
}

/// Sensor noise model. Probabilities live in [0, 1]; sigmas and rates are
/// nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Isotropic GPS position sigma in meters.
    pub gps_sigma_m: f64,
    /// Probability a frame carries no GPS fix.
    pub gps_dropout_prob: f64,
    /// Per-frame sigma on the longitudinal increment in meters; the lateral
    /// increment uses half this value.
    pub odom_vel_noise: f64,
    /// Per-frame sigma on the yaw increment in radians.
    pub odom_yaw_noise: f64,
    /// Scale of the constant per-run longitudinal bias: each run draws a
    /// relative scale error of magnitude uniform in [0.5, 1.5] times this.
    pub odom_bias: f64,
    /// Additive Gaussian sigma on lane raster values (clamped to [0, 1]).
    pub lane_detect_noise_sigma: f64,
    /// Probability an individual lane-boundary segment is dropped.
    pub lane_dropout_prob: f64,
    /// Probability a visible sign is detected in a frame.
    pub sign_detect_prob: f64,
    /// Mean count of spurious sign detections per frame.
    pub sign_false_positive_rate: f64,
    /// Isotropic jitter sigma on detected sign positions in meters.
    pub sign_position_jitter_m: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            gps_sigma_m: 2.0,
            gps_dropout_prob: 0.1,
            odom_vel_noise: 0.02,
            odom_yaw_noise: 0.0002,
            odom_bias: 0.004,
            lane_detect_noise_sigma: 0.02,
            lane_dropout_prob: 0.02,
            sign_detect_prob: 0.9,
            sign_false_positive_rate: 0.02,
            sign_position_jitter_m: 0.1,
        }
    }
}

impl NoiseConfig {
    /// Zero noise everywhere: exact odometry, exact GPS every frame, clean
    /// rasters, every sign detected without jitter.
    pub fn noiseless() -> Self {
        NoiseConfig {
            gps_sigma_m: 0.0,
            gps_dropout_prob: 0.0,
            odom_vel_noise: 0.0,
            odom_yaw_noise: 0.0,
            odom_bias: 0.0,
            lane_detect_noise_sigma: 0.0,
            lane_dropout_prob: 0.0,
            sign_detect_prob: 1.0,
            sign_false_positive_rate: 0.0,
            sign_position_jitter_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [
            ("gps_dropout_prob", self.gps_dropout_prob),
            ("lane_dropout_prob", self.lane_dropout_prob),
            ("sign_detect_prob", self.sign_detect_prob),
        ] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(SimError::BadConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        for (name, s) in [
            ("gps_sigma_m", self.gps_sigma_m),
            ("odom_vel_noise", self.odom_vel_noise),
            ("odom_yaw_noise", self.odom_yaw_noise),
            ("odom_bias", self.odom_bias),
            ("lane_detect_noise_sigma", self.lane_detect_noise_sigma),
            ("sign_false_positive_rate", self.sign_false_positive_rate),
            ("sign_position_jitter_m", self.sign_position_jitter_m),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(SimError::BadConfig(format!(
                    "{name} must be >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Geometry of the rendered observation rasters (shared by the lane and
/// sign channels) and the forward sign visibility cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsConfig {
    /// Total longitudinal extent of the raster in meters.
    pub lon_extent_m: f64,
    /// Total lateral extent of the raster in meters.
    pub lat_extent_m: f64,
    /// Meters per cell.
    pub resolution: f64,
    /// Signs farther ahead than this are not rendered.
    pub sign_visible_m: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig {
            lon_extent_m: 60.0,
            lat_extent_m: 30.0,
            resolution: DEFAULT_RESOLUTION,
            sign_visible_m: 40.0,
        }
    }
}

impl ObsConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("lon_extent_m", self.lon_extent_m),
            ("lat_extent_m", self.lat_extent_m),
            ("resolution", self.resolution),
            ("sign_visible_m", self.sign_visible_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::BadConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Cell counts of the rendered rasters (vehicle at the center cell).
    pub fn raster_dims(&self) -> (usize, usize) {
        let w = (self.lon_extent_m / self.resolution).round() as usize + 1;
        let h = (self.lat_extent_m / self.resolution).round() as usize + 1;
        (w, h)
    }
}

/// One timestep of sensor data: the odometry increment since the previous
/// frame, an optional GPS fix, and the two vehicle-frame rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub timestamp: f64,
    pub motion: MotionIncrement,
    pub gps: Option<GpsFix>,
    pub lane_obs: Raster,
    pub sign_obs: Raster,
}

/// Arc-length sampled centerline: positions and headings every `ds` meters
/// starting at `s0`.
struct Centerline {
    s0: f64,
    ds: f64,
    positions: Vec<Point2>,
    headings: Vec<f64>,
}

impl Centerline {
    fn sample(&self, s: f64) -> (Point2, f64) {
        let t = (s - self.s0) / self.ds;
        let i = (t.floor().max(0.0) as usize).min(self.positions.len() - 2);
        let frac = (t - i as f64).clamp(0.0, 1.0);
        let a = &self.positions[i];
        let b = &self.positions[i + 1];
        let heading =
            self.headings[i] + frac * (self.headings[i + 1] - self.headings[i]);
        (
            Point2::new(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y)),
            heading,
        )
    }

    /// Left normal of the road at arc position s.
    fn normal(&self, s: f64) -> Point2 {
        let (_, h) = self.sample(s);
        Point2::new(-h.sin(), h.cos())
    }
}

/// Builds a smooth heading profile from a sum of long-wavelength curvature
/// sinusoids normalized to the highway curvature bound.
fn build_centerline(rng: &mut ChaCha8Rng, length_m: f64) -> Centerline {
    const DS: f64 = 0.5;
    const MARGIN: f64 = 120.0;
    let kappa_max = rng.gen_range(0.3..0.8) / 500.0;
    let waves: Vec<(f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(500.0..2000.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let raw_kappa = |s: f64| -> f64 {
        waves
            .iter()
            .map(|(lambda, phase)| (std::f64::consts::TAU * s / lambda + phase).sin())
            .sum()
    };
    let s0 = -MARGIN;
    let s1 = length_m + MARGIN;
    let n = ((s1 - s0) / DS).ceil() as usize + 1;
    // Normalize so the curvature magnitude peaks exactly at kappa_max.
    let mut peak = 0.0f64;
    for i in 0..n {
        peak = peak.max(raw_kappa(s0 + i as f64 * DS).abs());
    }
    let scale = if peak > 0.0 { kappa_max / peak } else { 0.0 };

    let mut positions = Vec::with_capacity(n);
    let mut headings = Vec::with_capacity(n);
    let mut p = Point2::new(0.0, 0.0);
    let mut h = 0.0f64;
    // Integrate backward to the lead-in margin so s = 0 sits at the origin
    // with zero heading, then forward.
    let back_steps = (MARGIN / DS).round() as usize;
    let mut back = Vec::with_capacity(back_steps);
    {
        let mut bp = p;
        let mut bh = h;
        for i in 0..back_steps {
            let s = -(i as f64) * DS;
            let k = scale * raw_kappa(s - 0.5 * DS);
            let mid = bh - 0.5 * k * DS;
            bp = Point2::new(bp.x - DS * mid.cos(), bp.y - DS * mid.sin());
            bh -= k * DS;
            back.push((bp, bh));
        }
    }
    for (bp, bh) in back.into_iter().rev() {
        positions.push(bp);
        headings.push(bh);
    }
    positions.push(p);
    headings.push(h);
    while positions.len() < n {
        let s = s0 + (positions.len() - 1) as f64 * DS;
        let k = scale * raw_kappa(s + 0.5 * DS);
        let mid = h + 0.5 * k * DS;
        p = Point2::new(p.x + DS * mid.cos(), p.y + DS * mid.sin());
        h += k * DS;
        positions.push(p);
        headings.push(h);
    }
    Centerline {
        s0,
        ds: DS,
        positions,
        headings,
    }
}

/// Generates a deterministic synthetic highway scenario from (cfg, seed):
/// lane boundaries at standard spacing around a low-curvature centerline,
/// roadside signs with clipped-exponential gaps, and a 10 Hz ground-truth
/// trajectory driving the configured lane with gentle in-lane drift.
pub fn gen_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut geometry_rng = ChaCha8Rng::seed_from_u64(seed);
    geometry_rng.set_stream(10);
    let mut route_rng = ChaCha8Rng::seed_from_u64(seed);
    route_rng.set_stream(11);
    let mut sign_rng = ChaCha8Rng::seed_from_u64(seed);
    sign_rng.set_stream(12);

    let center = build_centerline(&mut geometry_rng, cfg.length_m);

    // Lane boundaries: lane_count + 1 polylines offset around the
    // centerline, vertices every 2 m of arc length.
    let half_road = cfg.lane_count as f64 / 2.0 * LANE_WIDTH_M;
    let mut boundaries = Vec::with_capacity(cfg.lane_count as usize + 1);
    let vertex_ds = 2.0;
    let n_verts = ((center.s0 + cfg.length_m + 120.0 - center.s0) / vertex_ds) as usize + 1;
    for b in 0..=cfg.lane_count {
        let offset = b as f64 * LANE_WIDTH_M - half_road;
        let mut poly = Vec::with_capacity(n_verts);
        for v in 0..n_verts {
            let s = center.s0 + v as f64 * vertex_ds;
            let (p, _) = center.sample(s);
            let n = center.normal(s);
            poly.push(Point2::new(p.x + offset * n.x, p.y + offset * n.y));
        }
        boundaries.push(poly);
    }
    let lanes = LaneGraph::new(boundaries)?;

    // Signs: exponential gaps clipped to [0.3, 3] x mean, alternating
    // sides at random, offset 0.5-1.5 m beyond the road edge.
    let mut sign_centers = Vec::new();
    let mut s = 0.0f64;
    loop {
        let u: f64 = sign_rng.gen_range(f64::EPSILON..1.0);
        let gap = (-u.ln() * cfg.sign_spacing_m)
            .clamp(0.3 * cfg.sign_spacing_m, 3.0 * cfg.sign_spacing_m);
        s += gap;
        if s >= cfg.length_m {
            break;
        }
        let side = if sign_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let offset = side * (half_road + sign_rng.gen_range(0.5..1.5));
        let (p, _) = center.sample(s);
        let n = center.normal(s);
        sign_centers.push(Point2::new(p.x + offset * n.x, p.y + offset * n.y));
    }

    let resolution = DEFAULT_RESOLUTION;
    let signs = if sign_centers.is_empty() {
        SignMap {
            raster: SparseRaster::empty(Point2::new(0.0, 0.0), resolution, 0, 0),
            resolution,
        }
    } else {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for c in &sign_centers {
            x0 = x0.min(c.x);
            y0 = y0.min(c.y);
            x1 = x1.max(c.x);
            y1 = y1.max(c.y);
        }
        let pad = SIGN_RADIUS_M + 2.0 * resolution;
        let window = Rect::new(x0 - pad, y0 - pad, x1 + pad, y1 + pad);
        let lattice_origin = Point2::new(window.x0, window.y0);
        let mut points = Vec::new();
        for c in &sign_centers {
            for p in disc_cell_points(c, SIGN_RADIUS_M, &lattice_origin, resolution) {
                points.push((p, 1.0));
            }
        }
        rasterize_signs(&points, &window, resolution, map::DEFAULT_SIGN_KEEP_THRESHOLD)?
    };

    // Ground truth: arc position integrates a smooth speed profile, the
    // lateral offset adds slow in-lane drift to the driven lane's center.
    let (v_lo, v_hi) = cfg.speed_range;
    let v_mid = 0.5 * (v_lo + v_hi);
    let v_amp_max = 0.5 * (v_hi - v_lo);
    let v_base = if v_amp_max > 0.0 {
        route_rng.gen_range(v_mid - 0.4 * v_amp_max..v_mid + 0.4 * v_amp_max)
    } else {
        v_mid
    };
    let v_amp = if v_amp_max > 0.0 {
        route_rng.gen_range(0.2 * v_amp_max..0.6 * v_amp_max)
    } else {
        0.0
    };
    let v_period = route_rng.gen_range(40.0..80.0);
    let v_phase = route_rng.gen_range(0.0..std::f64::consts::TAU);
    let drift_amp = route_rng.gen_range(0.2..0.85);
    let drift_lambda = route_rng.gen_range(500.0..1200.0);
    let drift_phase = route_rng.gen_range(0.0..std::f64::consts::TAU);

    let lane_offset =
        (cfg.drive_lane as f64 - (cfg.lane_count as f64 - 1.0) / 2.0) * LANE_WIDTH_M;
    let dt = 1.0 / FRAME_RATE_HZ;
    let mut truth = Vec::new();
    let mut arc = 0.0f64;
    let mut t = 0.0f64;
    while arc < cfg.length_m {
        let drift_arg = std::f64::consts::TAU * arc / drift_lambda + drift_phase;
        let d = drift_amp * drift_arg.sin();
        let dd_ds = drift_amp * std::f64::consts::TAU / drift_lambda * drift_arg.cos();
        let (p, heading) = center.sample(arc);
        let n = center.normal(arc);
        let off = lane_offset + d;
        truth.push(Pose2::new(
            p.x + off * n.x,
            p.y + off * n.y,
            wrap_angle(heading + dd_ds.atan()),
        ));
        let v = (v_base + v_amp * (std::f64::consts::TAU * t / v_period + v_phase).sin())
            .clamp(v_lo, v_hi);
        arc += v * dt;
        t += dt;
    }

    Ok(Scenario {
        map: SemanticMap {
            lanes,
            signs,
            frame: MapFrame {
                utm_to_map: Pose2::new(-487_250.0, -4_142_300.0, 0.0),
                description: format!("synthetic highway, seed {seed}"),
            },
        },
        truth,
        meta: ScenarioMeta {
            seed,
            length_m: cfg.length_m,
            lane_count: cfg.lane_count,
            sign_spacing_m: cfg.sign_spacing_m,
        },
        sign_centers,
    })
}

/// Streaming sensor simulator: yields one `ObservationFrame` per truth pose
/// without materializing the whole (potentially multi-gigabyte) stream.
pub struct SensorStream<'a> {
    scenario: &'a Scenario,
    noise: NoiseConfig,
    obs: ObsConfig,
    odom_rng: ChaCha8Rng,
    gps_rng: ChaCha8Rng,
    lane_rng: ChaCha8Rng,
    sign_rng: ChaCha8Rng,
    /// Per-run longitudinal scale bias, drawn once.
    bias_scale: f64,
    map_to_utm: Pose2,
    idx: usize,
}

/// Opens a deterministic sensor stream over a scenario. Each sensor channel
/// draws from its own random stream, so changing one channel's noise never
/// perturbs the others.
pub fn sensor_stream<'a>(
    scenario: &'a Scenario,
    noise: &NoiseConfig,
    obs: &ObsConfig,
    seed: u64,
) -> Result<SensorStream<'a>, SimError> {
    noise.validate()?;
    obs.validate()?;
    let channel = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    };
    let mut odom_rng = channel(1);
    let sign_mag: f64 = odom_rng.gen_range(0.5..1.5);
    let sign_dir = if odom_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let bias_scale = sign_dir * sign_mag * noise.odom_bias;
    Ok(SensorStream {
        scenario,
        noise: *noise,
        obs: *obs,
        odom_rng,
        gps_rng: channel(2),
        lane_rng: channel(3),
        sign_rng: channel(4),
        bias_scale,
        map_to_utm: scenario.map.frame.utm_to_map.inverse(),
        idx: 0,
    })
}

/// Materializes the full frame list. Convenient for tests and short
/// snippets; prefer `sensor_stream` for long runs with large rasters.
pub fn simulate_sensors(
    scenario: &Scenario,
    noise: &NoiseConfig,
    obs: &ObsConfig,
    seed: u64,
) -> Result<Vec<ObservationFrame>, SimError> {
    Ok(sensor_stream(scenario, noise, obs, seed)?.collect())
}

impl SensorStream<'_> {
    fn odometry(&mut self, idx: usize) -> MotionIncrement {
        let truth = &self.scenario.truth;
        let delta = if idx == 0 {
            Pose2::identity()
        } else {
            inverse_compose(&truth[idx], &truth[idx - 1])
        };
        let n = &self.noise;
        let lon_noise = draw_normal(&mut self.odom_rng, n.odom_vel_noise);
        let lat_noise = draw_normal(&mut self.odom_rng, 0.5 * n.odom_vel_noise);
        let yaw_noise = draw_normal(&mut self.odom_rng, n.odom_yaw_noise);
        let noisy = Pose2::new(
            delta.x * (1.0 + self.bias_scale) + lon_noise,
            delta.y + lat_noise,
            wrap_angle(delta.theta + yaw_noise),
        );
        let sx = n.odom_vel_noise + ODOM_LON_SIGMA_FLOOR;
        let sy = 0.5 * n.odom_vel_noise + ODOM_LAT_SIGMA_FLOOR;
        let st = n.odom_yaw_noise + ODOM_YAW_SIGMA_FLOOR;
        let covariance = Matrix3::from_diagonal(&Vector3::new(sx * sx, sy * sy, st * st));
        MotionIncrement {
            delta: noisy,
            covariance,
        }
    }

    fn gps(&mut self, pose: &Pose2, timestamp: f64) -> Option<GpsFix> {
        let n = &self.noise;
        let ex = draw_normal(&mut self.gps_rng, n.gps_sigma_m);
        let ey = draw_normal(&mut self.gps_rng, n.gps_sigma_m);
        let dropped = self.gps_rng.gen::<f64>() < n.gps_dropout_prob;
        if dropped {
            return None;
        }
        let map_point = Point2::new(pose.x + ex, pose.y + ey);
        Some(GpsFix {
            position: transform_point(&self.map_to_utm, &map_point),
            timestamp,
        })
    }

    fn lane_raster(&mut self, pose: &Pose2) -> Raster {
        let (w, h) = self.obs.raster_dims();
        let template = Raster::centered_zeros(self.obs.resolution, w, h);
        let local = self.scenario.map.lanes.in_frame(pose);
        let n = &self.noise;
        let mut raster = if n.lane_dropout_prob > 0.0 {
            let rng = &mut self.lane_rng;
            let p = n.lane_dropout_prob;
            map::render_lane_tdt_grid(
                &local,
                template.origin,
                template.resolution,
                template.width,
                template.height,
                DEFAULT_TRUNCATION,
                |_, _| rng.gen::<f64>() >= p,
            )
            .expect("validated raster geometry")
        } else {
            map::render_lane_tdt_grid(
                &local,
                template.origin,
                template.resolution,
                template.width,
                template.height,
                DEFAULT_TRUNCATION,
                |_, _| true,
            )
            .expect("validated raster geometry")
        };
        if n.lane_detect_noise_sigma > 0.0 {
            let dist = Normal::new(0.0, n.lane_detect_noise_sigma).expect("validated sigma");
            for v in &mut raster.values {
                *v = (*v + dist.sample(&mut self.lane_rng)).clamp(0.0, 1.0);
            }
        }
        raster
    }

    fn sign_raster(&mut self, pose: &Pose2) -> Raster {
        let (w, h) = self.obs.raster_dims();
        let mut raster = Raster::centered_zeros(self.obs.resolution, w, h);
        let n = self.noise;
        let inv = pose.inverse();
        let x_hi = raster.origin.x + (raster.width - 1) as f64 * raster.resolution;
        let x_max = x_hi.min(self.obs.sign_visible_m);
        let y_max = raster.origin.y + (raster.height - 1) as f64 * raster.resolution;
        for center in &self.scenario.sign_centers {
            let q = transform_point(&inv, center);
            let visible = q.x >= raster.origin.x - SIGN_RADIUS_M
                && q.x <= x_max + SIGN_RADIUS_M
                && q.y >= raster.origin.y - SIGN_RADIUS_M
                && q.y <= y_max + SIGN_RADIUS_M;
            if !visible {
                continue;
            }
            let detected = self.sign_rng.gen::<f64>() < n.sign_detect_prob;
            if !detected {
                continue;
            }
            let jx = draw_normal(&mut self.sign_rng, n.sign_position_jitter_m);
            let jy = draw_normal(&mut self.sign_rng, n.sign_position_jitter_m);
            raster.stamp_disc(
                &Point2::new(q.x + jx, q.y + jy),
                SIGN_RADIUS_M,
                1.0,
            );
        }
        if n.sign_false_positive_rate > 0.0 {
            let poisson = Poisson::new(n.sign_false_positive_rate).expect("validated rate");
            let count = poisson.sample(&mut self.sign_rng) as usize;
            let x1 = raster.origin.x + (raster.width - 1) as f64 * raster.resolution;
            let y1 = raster.origin.y + (raster.height - 1) as f64 * raster.resolution;
            for _ in 0..count {
                let fx = self.sign_rng.gen_range(raster.origin.x..=x1);
                let fy = self.sign_rng.gen_range(raster.origin.y..=y1);
                raster.stamp_disc(&Point2::new(fx, fy), SIGN_RADIUS_M, 1.0);
            }
        }
        raster
    }
}

impl Iterator for SensorStream<'_> {
    type Item = ObservationFrame;

    fn next(&mut self) -> Option<ObservationFrame> {
        if self.idx >= self.scenario.truth.len() {
            return None;
        }
        let idx = self.idx;
        self.idx += 1;
        let pose = self.scenario.truth[idx];
        let timestamp = idx as f64 / FRAME_RATE_HZ;
        let motion = self.odometry(idx);
        let gps = self.gps(&pose, timestamp);
        let lane_obs = self.lane_raster(&pose);
        let sign_obs = self.sign_raster(&pose);
        Some(ObservationFrame {
            timestamp,
            motion,
            gps,
            lane_obs,
            sign_obs,
        })
    }
}

/// Samples N(0, sigma), returning exactly 0.0 when sigma is 0.
fn draw_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma)
            .expect("validated sigma")
            .sample(rng)
    }
}
