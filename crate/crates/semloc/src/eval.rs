//! Evaluation toolkit: pose error metrics, smoothness, failure rates,
//! baseline methods, the multi-method experiment harness, and report
//! emission (machine-readable JSON plus a human-readable text summary).

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{
    init, step_masked, FilterConfig, FilterError, FilterState, ModalityMask,
};
use crate::map::{self, SemanticMap};
use crate::observe::{gps_likelihood, lane_likelihood, sign_likelihood, LikelihoodGrid, SearchGrid};
use crate::pose::{compose, wrap_angle, Pose2};
use crate::sim::{
    gen_scenario, sensor_stream, NoiseConfig, ObsConfig, ObservationFrame, ScenarioConfig,
    SimError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("experiment config invalid: {0}")]
    BadConfig(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("trajectory length mismatch: estimate {est} vs ground truth {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("trajectories must contain at least 2 poses, got {0}")]
    TooShort(usize),
    #[error("no samples to aggregate: {0}")]
    Empty(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One timestamped pose error, decomposed in the ground-truth vehicle
/// frame. The `lateral_m`/`longitudinal_m` fields are absolute values for
/// aggregation; the signed components are kept alongside for plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub lateral_m: f64,
    pub longitudinal_m: f64,
    pub heading_err_rad: f64,
    pub signed_lateral_m: f64,
    pub signed_longitudinal_m: f64,
}

/// Expresses the translation error `est - gt` in the ground-truth vehicle
/// frame: longitudinal along the ground-truth heading, lateral
/// perpendicular to it (positive left). The caller stamps `t`.
pub fn decompose_error(est: &Pose2, gt: &Pose2) -> ErrorSample {
    let dx = est.x - gt.x;
    let dy = est.y - gt.y;
    let (s, c) = gt.theta.sin_cos();
    let lon = c * dx + s * dy;
    let lat = -s * dx + c * dy;
    ErrorSample {
        t: 0.0,
        lateral_m: lat.abs(),
        longitudinal_m: lon.abs(),
        heading_err_rad: wrap_angle(est.theta - gt.theta),
        signed_lateral_m: lat,
        signed_longitudinal_m: lon,
    }
}

/// Per-step squared differences between the temporal gradients of the
/// estimated and ground-truth trajectories:
/// `‖(est_t − est_{t−1}) − (gt_t − gt_{t−1})‖²` with angular wrap on the
/// heading component. Returns `len − 1` terms.
pub fn gradient_difference_terms(est: &[Pose2], gt: &[Pose2]) -> Result<Vec<f64>, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(EvalError::TooShort(est.len()));
    }
    let mut terms = Vec::with_capacity(est.len() - 1);
    for t in 1..est.len() {
        let ex = (est[t].x - est[t - 1].x) - (gt[t].x - gt[t - 1].x);
        let ey = (est[t].y - est[t - 1].y) - (gt[t].y - gt[t - 1].y);
        let eth = wrap_angle(
            wrap_angle(est[t].theta - est[t - 1].theta)
                - wrap_angle(gt[t].theta - gt[t - 1].theta),
        );
        terms.push(ex * ex + ey * ey + eth * eth);
    }
    Ok(terms)
}

/// Trajectory smoothness: the mean of `gradient_difference_terms`. Zero
/// when the estimate tracks the ground truth up to a constant offset.
pub fn smoothness(est: &[Pose2], gt: &[Pose2]) -> Result<f64, EvalError> {
    let terms = gradient_difference_terms(est, gt)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// A snippet fails when its maximum total translational error strictly
/// exceeds this many meters.
pub const FAILURE_THRESHOLD_M: f64 = 1.0;

/// Fraction of snippets whose maximum total translational error strictly
/// exceeds the 1 m failure threshold. Returns 0 for an empty input.
pub fn failure_rate<I>(max_translation_errors: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut failed = 0usize;
    let mut total = 0usize;
    for e in max_translation_errors {
        total += 1;
        if e > FAILURE_THRESHOLD_M {
            failed += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        failed as f64 / total as f64
    }
}

/// Nearest-rank percentile: sorts a copy ascending and returns the value
/// at rank `ceil(p/100 · n)` (1-based). `p` must be in (0, 100].
pub fn percentile_nearest_rank(samples: &[f64], p: f64) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty("percentile of zero samples".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(EvalError::BadConfig(format!(
            "percentile must be in (0, 100], got {p}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite error sample"));
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Median / 95th / 99th nearest-rank percentiles of one error population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
}

impl PercentileRow {
    pub fn from_samples(samples: &[f64]) -> Result<Self, EvalError> {
        Ok(PercentileRow {
            median: percentile_nearest_rank(samples, 50.0)?,
            p95: percentile_nearest_rank(samples, 95.0)?,
            p99: percentile_nearest_rank(samples, 99.0)?,
        })
    }
}

/// Mean / 95th / 99th / max over the pooled per-step smoothness terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessStats {
    pub mean: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl SmoothnessStats {
    pub fn from_terms(terms: &[f64]) -> Result<Self, EvalError> {
        if terms.is_empty() {
            return Err(EvalError::Empty("smoothness of zero terms".into()));
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(SmoothnessStats {
            mean: terms.iter().sum::<f64>() / terms.len() as f64,
            p95: percentile_nearest_rank(terms, 95.0)?,
            p99: percentile_nearest_rank(terms, 99.0)?,
            max,
        })
    }
}

/// A localization method under evaluation. All probabilistic variants run
/// the same histogram filter with a modality mask; `Deterministic` is the
/// per-frame weighted-argmax baseline that carries no belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Dynamics,
    Gps,
    Lane,
    LaneSign,
    LaneGps,
    Full,
    Deterministic,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method, EvalError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dynamics" => Ok(Method::Dynamics),
            "gps" => Ok(Method::Gps),
            "lane" => Ok(Method::Lane),
            "lane+sign" | "lane-sign" => Ok(Method::LaneSign),
            "lane+gps" | "lane-gps" => Ok(Method::LaneGps),
            "full" | "all" | "probabilistic" => Ok(Method::Full),
            "deterministic" => Ok(Method::Deterministic),
            other => Err(EvalError::UnknownMethod(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dynamics => "dynamics",
            Method::Gps => "gps",
            Method::Lane => "lane",
            Method::LaneSign => "lane+sign",
            Method::LaneGps => "lane+gps",
            Method::Full => "full",
            Method::Deterministic => "deterministic",
        }
    }

    /// Which observation channels the method consumes.
    pub fn mask(&self) -> ModalityMask {
        match self {
            Method::Dynamics => ModalityMask::none(),
            Method::Gps => ModalityMask {
                lane: false,
                sign: false,
                gps: true,
            },
            Method::Lane => ModalityMask {
                lane: true,
                sign: false,
                gps: false,
            },
            Method::LaneSign => ModalityMask {
                lane: true,
                sign: true,
                gps: false,
            },
            Method::LaneGps => ModalityMask {
                lane: true,
                sign: false,
                gps: true,
            },
            Method::Full | Method::Deterministic => ModalityMask::all(),
        }
    }
}

/// Per-modality weights for the deterministic baseline's weighted average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeterministicWeights {
    pub dynamics: f64,
    pub lane: f64,
    pub sign: f64,
    pub gps: f64,
}

impl Default for DeterministicWeights {
    fn default() -> Self {
        DeterministicWeights {
            dynamics: 1.0,
            lane: 2.0,
            sign: 2.0,
            gps: 1.0,
        }
    }
}

/// One step of the deterministic baseline: dead-reckons from the previous
/// estimate, takes each available modality's likelihood argmax as a pose
/// vote, and blends the votes with the dead-reckoned pose by a weighted
/// average of lattice offsets. No uncertainty is carried between steps.
pub fn baseline_deterministic_step(
    prev_estimate: &Pose2,
    frame: &ObservationFrame,
    map: &SemanticMap,
    cfg: &FilterConfig,
    weights: &DeterministicWeights,
) -> Result<Pose2, EvalError> {
    let anchor = compose(prev_estimate, &frame.motion.delta);
    let grid = SearchGrid::new(anchor, &cfg.grid).map_err(FilterError::Observe)?;
    // A flat factor (all cells tied) carries no information and its argmax
    // is an arbitrary corner; voting it would inject a constant offset.
    let informative = |f: &LikelihoodGrid| {
        let max = f.max_value();
        f.values.iter().any(|v| *v < max)
    };
    // The dead-reckoned pose is the zero-offset vote.
    let mut w_sum = weights.dynamics;
    let mut x = 0.0;
    let mut y = 0.0;
    let mut th = 0.0;
    let mut add_vote = |w: f64, off: Pose2| {
        w_sum += w;
        x += w * off.x;
        y += w * off.y;
        th += w * off.theta;
    };
    if weights.lane > 0.0 && frame.lane_obs.count_nonzero() > 0 {
        let f = lane_likelihood(&frame.lane_obs, map, &grid, cfg.lane_temperature)
            .map_err(FilterError::Observe)?;
        if informative(&f) {
            let (i, j, k) = f.argmax_cell();
            add_vote(weights.lane, grid.cell_offset(i, j, k));
        }
    }
    if weights.sign > 0.0 && frame.sign_obs.count_nonzero() > 0 {
        let f = sign_likelihood(&frame.sign_obs, map, &grid, cfg.sign_temperature)
            .map_err(FilterError::Observe)?;
        if informative(&f) {
            let (i, j, k) = f.argmax_cell();
            add_vote(weights.sign, grid.cell_offset(i, j, k));
        }
    }
    if weights.gps > 0.0 {
        if let Some(fix) = &frame.gps {
            let f = gps_likelihood(fix, &map.frame.utm_to_map, &grid, cfg.sigma_gps)
                .map_err(FilterError::Observe)?;
            let (i, j, k) = f.argmax_cell();
            // GPS constrains position only; its heading column is a tie.
            let mut off = grid.cell_offset(i, j, k);
            off.theta = 0.0;
            add_vote(weights.gps, off);
        }
    }
    if w_sum <= 0.0 {
        return Ok(anchor);
    }
    Ok(compose(
        &anchor,
        &Pose2::new(x / w_sum, y / w_sum, th / w_sum),
    ))
}

/// Full experiment description: world, noise, observations, filter, the
/// seeds (one snippet per seed), and the methods to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub noise: NoiseConfig,
    pub obs: ObsConfig,
    pub filter: FilterConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    /// Frames excluded from error aggregation at the start of each snippet.
    pub burn_in: usize,
    pub deterministic_weights: DeterministicWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            noise: NoiseConfig::default(),
            obs: ObsConfig::default(),
            filter: FilterConfig::default(),
            seeds: (1..=20).collect(),
            methods: vec!["full".into(), "gps".into(), "dynamics".into()],
            burn_in: 10,
            deterministic_weights: DeterministicWeights::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parsed_methods(&self) -> Result<Vec<Method>, EvalError> {
        let methods: Vec<Method> = self
            .methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<Result<_, _>>()?;
        if methods.is_empty() {
            return Err(EvalError::BadConfig("no methods listed".into()));
        }
        for (a, m) in methods.iter().enumerate() {
            if methods[..a].contains(m) {
                return Err(EvalError::BadConfig(format!(
                    "method '{}' listed twice",
                    m.name()
                )));
            }
        }
        Ok(methods)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.scenario.validate()?;
        self.noise.validate()?;
        self.obs.validate()?;
        self.filter.validate()?;
        self.parsed_methods()?;
        if self.seeds.is_empty() {
            return Err(EvalError::BadConfig("no seeds listed".into()));
        }
        Ok(())
    }
}

/// Per-snippet results for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetReport {
    pub seed: u64,
    pub frames: usize,
    pub lateral: PercentileRow,
    pub longitudinal: PercentileRow,
    pub smoothness: f64,
    pub max_translation_m: f64,
    pub failed: bool,
    /// Worst |Σ belief − 1| across steps; absent for belief-free methods.
    pub belief_sum_err_max: Option<f64>,
    /// Smallest belief value across steps; absent for belief-free methods.
    pub min_belief: Option<f64>,
    pub degraded_steps: usize,
}

/// Suite-level results for one method: pooled percentiles plus the
/// per-snippet breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub pooled_lateral: PercentileRow,
    pub pooled_longitudinal: PercentileRow,
    pub pooled_smoothness: SmoothnessStats,
    pub failure_rate: f64,
    pub snippets: Vec<SnippetReport>,
}

/// Serialized-map footprint versus a dense raster of the same area,
/// aggregated over every snippet's map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageSummary {
    /// Serialized bytes of the first seed's map.
    pub map_bytes: u64,
    /// Inflated geometry bounding-box area of that map in km².
    pub area_km2: f64,
    pub mib_per_km2: f64,
    /// Worst (largest) MiB/km² across all seeds.
    pub worst_mib_per_km2: f64,
    /// Bytes a dense intensity raster at map resolution covering the first
    /// seed's bounding box would occupy.
    pub dense_bytes: u64,
    /// dense_bytes / map_bytes for the first seed.
    pub dense_ratio: f64,
    /// Smallest dense/map ratio across all seeds.
    pub min_dense_ratio: f64,
}

/// Wall-clock accounting, reported in the human-readable summary only so
/// the machine-readable report stays byte-identical across reruns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingBreakdown {
    pub total_s: f64,
    pub generation_s: f64,
    /// (method name, seconds spent stepping that method).
    pub per_method_s: Vec<(String, f64)>,
    pub frames_total: usize,
}

/// Complete output of `run_experiment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodReport>,
    pub storage: StorageSummary,
    #[serde(skip)]
    pub timing: TimingBreakdown,
}

struct MethodRun {
    method: Method,
    filter: Option<FilterState>,
    det_estimate: Pose2,
    estimates: Vec<Pose2>,
    lat: Vec<f64>,
    lon: Vec<f64>,
    max_translation: f64,
    belief_sum_err_max: f64,
    min_belief: f64,
    degraded_steps: usize,
    seconds: f64,
}

/// Runs every configured method over every seed's snippet in lockstep:
/// each sensor frame is generated once and fed to all methods, so the
/// expensive raster rendering is shared. Filters are initialized at the
/// ground-truth start pose.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, EvalError> {
    cfg.validate()?;
    let methods = cfg.parsed_methods()?;
    let t_start = Instant::now();
    let mut generation_s = 0.0;
    let mut frames_total = 0usize;

    // Pooled across snippets, one slot per method.
    let mut pooled_lat: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let mut pooled_lon: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let mut pooled_terms: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let mut snippet_reports: Vec<Vec<SnippetReport>> = vec![Vec::new(); methods.len()];
    let mut method_seconds = vec![0.0f64; methods.len()];

    let mut storage_first: Option<(u64, f64, u64)> = None;
    let mut worst_mib_per_km2 = 0.0f64;
    let mut min_dense_ratio = f64::INFINITY;

    for &seed in &cfg.seeds {
        let t_gen = Instant::now();
        let scenario = gen_scenario(&cfg.scenario, seed)?;
        generation_s += t_gen.elapsed().as_secs_f64();

        let bytes = map::io::serialized_size(&scenario.map);
        let area = map::geometry_area_km2(&scenario.map);
        let dense_bytes =
            map::dense_raster_equivalent_bytes(&scenario.map, scenario.map.signs.resolution);
        if area > 0.0 {
            worst_mib_per_km2 =
                worst_mib_per_km2.max(bytes as f64 / (1024.0 * 1024.0) / area);
        }
        if bytes > 0 {
            min_dense_ratio = min_dense_ratio.min(dense_bytes as f64 / bytes as f64);
        }
        if storage_first.is_none() {
            storage_first = Some((bytes, area, dense_bytes));
        }

        let start = scenario.truth[0];
        let mut runs: Vec<MethodRun> = methods
            .iter()
            .map(|&method| {
                let filter = if method == Method::Deterministic {
                    None
                } else {
                    Some(init(start, &cfg.filter)?)
                };
                Ok(MethodRun {
                    method,
                    filter,
                    det_estimate: start,
                    estimates: Vec::with_capacity(scenario.truth.len()),
                    lat: Vec::new(),
                    lon: Vec::new(),
                    max_translation: 0.0,
                    belief_sum_err_max: 0.0,
                    min_belief: f64::INFINITY,
                    degraded_steps: 0,
                    seconds: 0.0,
                })
            })
            .collect::<Result<_, EvalError>>()?;

        let mut stream = sensor_stream(&scenario, &cfg.noise, &cfg.obs, seed)?;
        let mut frame_idx = 0usize;
        loop {
            let t_gen = Instant::now();
            let frame = match stream.next() {
                Some(f) => f,
                None => break,
            };
            generation_s += t_gen.elapsed().as_secs_f64();
            let gt = scenario.truth[frame_idx];

            for run in &mut runs {
                let t_m = Instant::now();
                let estimate = match &mut run.filter {
                    Some(state) => {
                        let res =
                            step_masked(state, &frame, &scenario.map, &cfg.filter, run.method.mask())?;
                        run.belief_sum_err_max =
                            run.belief_sum_err_max.max(res.diagnostics.belief_sum_error);
                        run.min_belief = run.min_belief.min(res.diagnostics.min_belief);
                        if res.diagnostics.degraded {
                            run.degraded_steps += 1;
                        }
                        res.estimate
                    }
                    None => {
                        let est = baseline_deterministic_step(
                            &run.det_estimate,
                            &frame,
                            &scenario.map,
                            &cfg.filter,
                            &cfg.deterministic_weights,
                        )?;
                        run.det_estimate = est;
                        est
                    }
                };
                run.seconds += t_m.elapsed().as_secs_f64();
                run.estimates.push(estimate);
                if frame_idx >= cfg.burn_in {
                    let s = decompose_error(&estimate, &gt);
                    run.lat.push(s.lateral_m);
                    run.lon.push(s.longitudinal_m);
                    let trans = estimate.translation_distance(&gt);
                    run.max_translation = run.max_translation.max(trans);
                }
            }
            frame_idx += 1;
        }
        frames_total += frame_idx;

        for (slot, run) in runs.into_iter().enumerate() {
            if run.lat.is_empty() {
                return Err(EvalError::Empty(format!(
                    "seed {seed}: burn-in {} consumed all {frame_idx} frames",
                    cfg.burn_in
                )));
            }
            if run.estimates.len() < 2 {
                return Err(EvalError::TooShort(run.estimates.len()));
            }
            let est_tail = &run.estimates[cfg.burn_in.min(run.estimates.len() - 2)..];
            let gt_tail = &scenario.truth[cfg.burn_in.min(run.estimates.len() - 2)..];
            let terms = gradient_difference_terms(est_tail, gt_tail)?;
            let snippet_smoothness = terms.iter().sum::<f64>() / terms.len() as f64;
            let has_belief = run.method != Method::Deterministic;
            snippet_reports[slot].push(SnippetReport {
                seed,
                frames: frame_idx,
                lateral: PercentileRow::from_samples(&run.lat)?,
                longitudinal: PercentileRow::from_samples(&run.lon)?,
                smoothness: snippet_smoothness,
                max_translation_m: run.max_translation,
                failed: run.max_translation > FAILURE_THRESHOLD_M,
                belief_sum_err_max: has_belief.then_some(run.belief_sum_err_max),
                min_belief: has_belief.then_some(run.min_belief),
                degraded_steps: run.degraded_steps,
            });
            pooled_lat[slot].extend_from_slice(&run.lat);
            pooled_lon[slot].extend_from_slice(&run.lon);
            pooled_terms[slot].extend_from_slice(&terms);
            method_seconds[slot] += run.seconds;
        }
    }

    let mut method_reports = Vec::with_capacity(methods.len());
    for (slot, &method) in methods.iter().enumerate() {
        method_reports.push(MethodReport {
            method: method.name().to_string(),
            pooled_lateral: PercentileRow::from_samples(&pooled_lat[slot])?,
            pooled_longitudinal: PercentileRow::from_samples(&pooled_lon[slot])?,
            pooled_smoothness: SmoothnessStats::from_terms(&pooled_terms[slot])?,
            failure_rate: failure_rate(
                snippet_reports[slot].iter().map(|s| s.max_translation_m),
            ),
            snippets: std::mem::take(&mut snippet_reports[slot]),
        });
    }

    let (map_bytes, area_km2, dense_bytes) =
        storage_first.ok_or_else(|| EvalError::Empty("no snippets ran".into()))?;
    let storage = StorageSummary {
        map_bytes,
        area_km2,
        mib_per_km2: if area_km2 > 0.0 {
            map_bytes as f64 / (1024.0 * 1024.0) / area_km2
        } else {
            f64::INFINITY
        },
        worst_mib_per_km2,
        dense_bytes,
        dense_ratio: dense_bytes as f64 / map_bytes.max(1) as f64,
        min_dense_ratio,
    };

    Ok(RunReport {
        config: cfg.clone(),
        methods: method_reports,
        storage,
        timing: TimingBreakdown {
            total_s: t_start.elapsed().as_secs_f64(),
            generation_s,
            per_method_s: methods
                .iter()
                .zip(method_seconds)
                .map(|(m, s)| (m.name().to_string(), s))
                .collect(),
            frames_total,
        },
    })
}

/// Outcome of one acceptance gate check over a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn find_method<'a>(report: &'a RunReport, name: &str) -> Option<&'a MethodReport> {
    report.methods.iter().find(|m| m.method == name)
}

/// Evaluates every gate whose required methods are present in the report.
/// Gates with missing inputs are skipped (not failed).
pub fn check_gates(report: &RunReport) -> Vec<GateOutcome> {
    let mut out = Vec::new();

    // Belief hygiene over every probabilistic method and snippet.
    let mut worst_sum = 0.0f64;
    let mut worst_min = f64::INFINITY;
    let mut checked = 0usize;
    for m in &report.methods {
        for s in &m.snippets {
            if let (Some(se), Some(mb)) = (s.belief_sum_err_max, s.min_belief) {
                worst_sum = worst_sum.max(se);
                worst_min = worst_min.min(mb);
                checked += 1;
            }
        }
    }
    if checked > 0 {
        out.push(GateOutcome {
            name: "belief-hygiene".into(),
            passed: worst_sum <= 1e-9 && worst_min >= 0.0,
            detail: format!(
                "worst |sum-1| = {worst_sum:.3e}, min belief = {worst_min:.3e} over {checked} runs"
            ),
        });
    }

    // Fusion vs baselines.
    if let (Some(full), Some(gps), Some(dyn_)) = (
        find_method(report, "full"),
        find_method(report, "gps"),
        find_method(report, "dynamics"),
    ) {
        let lat_ok = full.pooled_lateral.median <= 0.1;
        let ratio = gps.pooled_lateral.median / full.pooled_lateral.median;
        let ratio_ok = ratio >= 5.0;
        // Dead reckoning must be the worst of this gate's comparison trio
        // (full, gps, dynamics). Ablations and the deterministic baseline
        // are judged by their own gates.
        let dyn_worst = [full, gps].iter().all(|m| {
            m.pooled_lateral.median <= dyn_.pooled_lateral.median
                && m.pooled_longitudinal.median <= dyn_.pooled_longitudinal.median
        });
        out.push(GateOutcome {
            name: "fusion-beats-baselines".into(),
            passed: lat_ok && ratio_ok && dyn_worst,
            detail: format!(
                "full lat median {:.4} m (<= 0.1: {lat_ok}), gps/full ratio {:.1} (>= 5: {ratio_ok}), dynamics worst: {dyn_worst}",
                full.pooled_lateral.median, ratio
            ),
        });
    }

    // Ablation ordering per seed.
    if let (Some(lane), Some(lane_sign), Some(lane_gps), Some(full)) = (
        find_method(report, "lane"),
        find_method(report, "lane+sign"),
        find_method(report, "lane+gps"),
        find_method(report, "full"),
    ) {
        let n = lane.snippets.len();
        let mut holds = 0usize;
        for i in 0..n {
            let l = &lane.snippets[i];
            let ls = &lane_sign.snippets[i];
            let lg = &lane_gps.snippets[i];
            let f = &full.snippets[i];
            let lon_ok = l.longitudinal.median > ls.longitudinal.median
                && ls.longitudinal.median > f.longitudinal.median
                && lg.longitudinal.median > f.longitudinal.median;
            let lat_ok = f.lateral.median <= l.lateral.median;
            if lon_ok && lat_ok {
                holds += 1;
            }
        }
        let need = (n * 18).div_ceil(20);
        out.push(GateOutcome {
            name: "ablation-ordering".into(),
            passed: holds >= need,
            detail: format!("orderings hold on {holds}/{n} seeds (need {need})"),
        });
    }

    // Probabilistic vs deterministic smoothness.
    if let (Some(full), Some(det)) = (
        find_method(report, "full"),
        find_method(report, "deterministic"),
    ) {
        let ratio = full.pooled_smoothness.max / det.pooled_smoothness.max;
        out.push(GateOutcome {
            name: "probabilistic-smoothness".into(),
            passed: ratio <= 0.5,
            detail: format!(
                "max smoothness: probabilistic {:.3e} vs deterministic {:.3e} (ratio {ratio:.3})",
                full.pooled_smoothness.max, det.pooled_smoothness.max
            ),
        });
    }

    // Noiseless closed loop.
    if report.config.noise == NoiseConfig::noiseless() {
        if let Some(full) = find_method(report, "full") {
            let lat_ok = full.pooled_lateral.median <= 0.05;
            let lon_ok = full.pooled_longitudinal.median <= 0.10;
            out.push(GateOutcome {
                name: "noiseless-closed-loop".into(),
                passed: lat_ok && lon_ok,
                detail: format!(
                    "median lateral {:.4} m (<= 0.05: {lat_ok}), median longitudinal {:.4} m (<= 0.10: {lon_ok})",
                    full.pooled_lateral.median, full.pooled_longitudinal.median
                ),
            });
        }
    }

    // Storage footprint.
    out.push(GateOutcome {
        name: "map-storage".into(),
        passed: report.storage.worst_mib_per_km2 <= 5.0 && report.storage.min_dense_ratio >= 100.0,
        detail: format!(
            "worst {:.3} MiB/km² (<= 5), min dense ratio {:.0}x (>= 100)",
            report.storage.worst_mib_per_km2, report.storage.min_dense_ratio
        ),
    });

    out
}

/// Renders the human-readable text summary, including wall-clock timing.
pub fn render_report_text(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "evaluation report");
    let _ = writeln!(
        s,
        "  snippets: {} x {:.0} m, burn-in {} frames",
        report.config.seeds.len(),
        report.config.scenario.length_m,
        report.config.burn_in
    );
    let _ = writeln!(s);
    for m in &report.methods {
        let _ = writeln!(s, "method {}", m.method);
        let _ = writeln!(
            s,
            "  lateral      median {:>9.4} m   p95 {:>9.4} m   p99 {:>9.4} m",
            m.pooled_lateral.median, m.pooled_lateral.p95, m.pooled_lateral.p99
        );
        let _ = writeln!(
            s,
            "  longitudinal median {:>9.4} m   p95 {:>9.4} m   p99 {:>9.4} m",
            m.pooled_longitudinal.median, m.pooled_longitudinal.p95, m.pooled_longitudinal.p99
        );
        let _ = writeln!(
            s,
            "  smoothness   mean {:>10.3e}   p95 {:>10.3e}   p99 {:>10.3e}   max {:>10.3e}",
            m.pooled_smoothness.mean,
            m.pooled_smoothness.p95,
            m.pooled_smoothness.p99,
            m.pooled_smoothness.max
        );
        let _ = writeln!(s, "  failure rate {:.2}", m.failure_rate);
        let _ = writeln!(s);
    }
    let st = &report.storage;
    let _ = writeln!(
        s,
        "storage: map {} B over {:.4} km² = {:.3} MiB/km² (worst {:.3}); dense raster {} B ({:.0}x, min {:.0}x)",
        st.map_bytes, st.area_km2, st.mib_per_km2, st.worst_mib_per_km2, st.dense_bytes,
        st.dense_ratio, st.min_dense_ratio
    );
    let t = &report.timing;
    let _ = writeln!(
        s,
        "timing: total {:.1} s (generation {:.1} s) over {} frames",
        t.total_s, t.generation_s, t.frames_total
    );
    for (name, secs) in &t.per_method_s {
        let _ = writeln!(s, "  {name}: {secs:.1} s");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn decompose_error_of_identical_poses_is_zero() {
        let p = Pose2::new(3.0, -2.0, 0.7);
        let s = decompose_error(&p, &p);
        assert_eq!(s.lateral_m, 0.0);
        assert_eq!(s.longitudinal_m, 0.0);
        assert_eq!(s.heading_err_rad, 0.0);
    }

    #[test]
    fn decompose_error_heading_zero_reads_offsets_directly() {
        let gt = Pose2::new(100.0, 50.0, 0.0);
        let est = Pose2::new(100.0 + 1.12, 50.0 + 0.05, 0.0);
        let s = decompose_error(&est, &gt);
        assert!((s.longitudinal_m - 1.12).abs() < 1e-9);
        assert!((s.lateral_m - 0.05).abs() < 1e-9);
    }

    #[test]
    fn decompose_error_rotated_frame_swaps_axes() {
        let gt = Pose2::new(0.0, 0.0, FRAC_PI_2);
        let est = Pose2::new(0.05, 1.12, FRAC_PI_2);
        let s = decompose_error(&est, &gt);
        assert!((s.longitudinal_m - 1.12).abs() < 1e-9);
        assert!((s.lateral_m - 0.05).abs() < 1e-9);
    }

    #[test]
    fn decompose_error_is_rotation_consistent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let gt = Pose2::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-PI..PI),
            );
            let est = Pose2::new(
                gt.x + rng.gen_range(-2.0..2.0),
                gt.y + rng.gen_range(-2.0..2.0),
                wrap_angle(gt.theta + rng.gen_range(-0.3..0.3)),
            );
            let t = Pose2::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-PI..PI),
            );
            let a = decompose_error(&est, &gt);
            let b = decompose_error(&compose(&t, &est), &compose(&t, &gt));
            assert!((a.lateral_m - b.lateral_m).abs() < 1e-9);
            assert!((a.longitudinal_m - b.longitudinal_m).abs() < 1e-9);
            assert!((a.heading_err_rad - b.heading_err_rad).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothness_of_exact_estimate_is_zero() {
        let gt: Vec<Pose2> = (0..10)
            .map(|i| Pose2::new(i as f64, 0.1 * i as f64, 0.01 * i as f64))
            .collect();
        assert_eq!(smoothness(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_ignores_constant_offset() {
        let gt: Vec<Pose2> = (0..10)
            .map(|i| Pose2::new(i as f64, 0.1 * i as f64, 0.01 * i as f64))
            .collect();
        let est: Vec<Pose2> = gt
            .iter()
            .map(|p| Pose2::new(p.x + 3.0, p.y - 1.5, wrap_angle(p.theta + 0.2)))
            .collect();
        assert!(smoothness(&est, &gt).unwrap() < 1e-24);
    }

    #[test]
    fn smoothness_unit_jump_three_poses_is_one() {
        let gt = vec![
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(1.0, 0.0, 0.0),
            Pose2::new(2.0, 0.0, 0.0),
        ];
        let mut est = gt.clone();
        est[1] = Pose2::new(est[1].x, est[1].y + 1.0, est[1].theta);
        let s = smoothness(&est, &gt).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "smoothness {s}");
    }

    #[test]
    fn smoothness_rejects_mismatched_lengths() {
        let a = vec![Pose2::identity(); 4];
        let b = vec![Pose2::identity(); 5];
        assert!(matches!(
            smoothness(&a, &b),
            Err(EvalError::LengthMismatch { est: 4, gt: 5 })
        ));
    }

    #[test]
    fn failure_rate_below_threshold_is_zero() {
        assert_eq!(failure_rate([0.9, 0.9, 0.9]), 0.0);
    }

    #[test]
    fn failure_rate_one_of_two_is_half() {
        assert_eq!(failure_rate([0.4, 1.7]), 0.5);
    }

    #[test]
    fn failure_rate_boundary_is_not_a_failure() {
        assert_eq!(failure_rate([1.0]), 0.0);
        assert_eq!(failure_rate([1.0 + 1e-12]), 1.0);
    }

    #[test]
    fn percentiles_match_sort_oracle_and_are_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 3, 7, 20, 101] {
            let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut sorted = samples.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for p in [1.0, 50.0, 95.0, 99.0, 100.0] {
                let got = percentile_nearest_rank(&samples, p).unwrap();
                let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
                assert_eq!(got, sorted[rank - 1], "n={n} p={p}");
            }
            let row = PercentileRow::from_samples(&samples).unwrap();
            assert!(row.median <= row.p95 && row.p95 <= row.p99);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Dynamics,
            Method::Gps,
            Method::Lane,
            Method::LaneSign,
            Method::LaneGps,
            Method::Full,
            Method::Deterministic,
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert_eq!(Method::parse("probabilistic").unwrap(), Method::Full);
        assert!(matches!(
            Method::parse("telepathy"),
            Err(EvalError::UnknownMethod(_))
        ));
    }

    #[test]
    fn deterministic_baseline_dead_reckons_without_observations() {
        let cfg = FilterConfig::default();
        let map = SemanticMap::empty();
        let prev = Pose2::new(5.0, 1.0, 0.1);
        let delta = Pose2::new(2.0, 0.0, 0.01);
        let frame = ObservationFrame {
            timestamp: 0.0,
            motion: crate::filter::MotionIncrement {
                delta,
                covariance: nalgebra::Matrix3::identity(),
            },
            gps: None,
            lane_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
            sign_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
        };
        let est = baseline_deterministic_step(
            &prev,
            &frame,
            &map,
            &cfg,
            &DeterministicWeights::default(),
        )
        .unwrap();
        let expected = compose(&prev, &delta);
        assert!(crate::pose::pose_approx_eq(&est, &expected, 1e-12));
    }

    #[test]
    fn deterministic_baseline_consensus_returns_the_agreed_pose() {
        // A GPS fix exactly at the dead-reckoned pose: the GPS argmax vote
        // is the zero offset, so the blend stays at the dead-reckoned pose.
        let cfg = FilterConfig::default();
        let map = SemanticMap::empty();
        let prev = Pose2::new(0.0, 0.0, 0.0);
        let delta = Pose2::new(1.0, 0.0, 0.0);
        let reckoned = compose(&prev, &delta);
        let frame = ObservationFrame {
            timestamp: 0.0,
            motion: crate::filter::MotionIncrement {
                delta,
                covariance: nalgebra::Matrix3::identity(),
            },
            gps: Some(crate::observe::GpsFix {
                position: reckoned.translation(),
                timestamp: 0.0,
            }),
            lane_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
            sign_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
        };
        let est = baseline_deterministic_step(
            &prev,
            &frame,
            &map,
            &cfg,
            &DeterministicWeights::default(),
        )
        .unwrap();
        assert!(crate::pose::pose_approx_eq(&est, &reckoned, 1e-9));
    }

    #[test]
    fn experiment_config_rejects_bad_methods() {
        let mut cfg = ExperimentConfig::default();
        cfg.methods = vec!["full".into(), "warp-drive".into()];
        assert!(matches!(cfg.validate(), Err(EvalError::UnknownMethod(_))));
        cfg.methods = vec!["full".into(), "full".into()];
        assert!(matches!(cfg.validate(), Err(EvalError::BadConfig(_))));
        cfg.methods = vec![];
        assert!(cfg.validate().is_err());
    }

    fn tiny_experiment(methods: Vec<String>) -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                length_m: 60.0,
                ..ScenarioConfig::default()
            },
            obs: ObsConfig {
                lon_extent_m: 8.0,
                lat_extent_m: 14.0,
                resolution: 0.25,
                sign_visible_m: 30.0,
            },
            filter: FilterConfig {
                grid: crate::observe::GridGeometry {
                    lat_range: 0.5,
                    lon_range: 1.0,
                    theta_range: 1.0_f64.to_radians(),
                    lat_step: 0.25,
                    lon_step: 0.25,
                    theta_step: 1.0_f64.to_radians(),
                },
                ..FilterConfig::default()
            },
            seeds: vec![1, 2],
            methods,
            burn_in: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn run_experiment_produces_reports_for_each_method_and_seed() {
        let cfg = tiny_experiment(vec!["full".into(), "dynamics".into(), "deterministic".into()]);
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.methods.len(), 3);
        for m in &report.methods {
            assert_eq!(m.snippets.len(), 2);
            for s in &m.snippets {
                assert!(s.frames > cfg.burn_in);
                assert!(s.lateral.median <= s.lateral.p95);
                if m.method == "deterministic" {
                    assert!(s.belief_sum_err_max.is_none());
                } else {
                    assert!(s.belief_sum_err_max.unwrap() <= 1e-9);
                    assert!(s.min_belief.unwrap() >= 0.0);
                }
            }
        }
        assert!(report.storage.map_bytes > 0);
        assert!(report.storage.area_km2 > 0.0);
        assert!(report.timing.frames_total > 0);
    }

    #[test]
    fn run_experiment_is_deterministic_in_its_serialized_report() {
        let cfg = tiny_experiment(vec!["gps".into()]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn gates_skip_when_methods_are_missing() {
        let cfg = tiny_experiment(vec!["gps".into()]);
        let report = run_experiment(&cfg).unwrap();
        let gates = check_gates(&report);
        assert!(gates.iter().any(|g| g.name == "belief-hygiene"));
        assert!(gates.iter().all(|g| g.name != "fusion-beats-baselines"));
        assert!(gates.iter().all(|g| g.name != "ablation-ordering"));
    }

    #[test]
    fn report_text_mentions_every_method() {
        let cfg = tiny_experiment(vec!["full".into(), "dynamics".into()]);
        let report = run_experiment(&cfg).unwrap();
        let text = render_report_text(&report);
        assert!(text.contains("method full"));
        assert!(text.contains("method dynamics"));
        assert!(text.contains("storage:"));
        assert!(text.contains("timing:"));
    }
}
