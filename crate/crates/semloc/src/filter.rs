//! Histogram Bayes filter over the pose search lattice: motion prediction
//! with a truncated Gaussian transition kernel, multiplicative measurement
//! updates in log space, and a soft-argmax pose readout.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::SemanticMap;
use crate::observe::{
    gps_likelihood, lane_likelihood, sign_likelihood, GridGeometry, LikelihoodGrid,
    ObserveError, SearchGrid,
};
use crate::pose::{compose, inverse_compose, wrap_angle, Pose2};
use crate::sim::ObservationFrame;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter config invalid: {0}")]
    BadConfig(String),
    #[error("motion covariance must be a finite symmetric positive-definite 3x3 matrix")]
    BadCovariance,
    #[error("likelihood factor lattice does not match the belief lattice")]
    GridMismatch,
    #[error("belief carries no probability mass")]
    DegenerateBelief,
    #[error(transparent)]
    Observe(#[from] ObserveError),
}

/// A normalized probability mass function over the cells of a search grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    pub grid: SearchGrid,
    pub values: Vec<f64>,
}

impl BeliefGrid {
    /// The maximum-entropy belief: equal mass on every cell.
    pub fn uniform(grid: SearchGrid) -> BeliefGrid {
        let n = grid.len();
        BeliefGrid {
            grid,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cell coordinates (lat, lon, theta) of the largest mass; ties break
    /// toward the lowest linear index.
    pub fn argmax_cell(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (idx, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = idx;
            }
        }
        self.grid.unravel(best)
    }

    /// Shannon entropy in nats over the nonzero cells.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for &v in &self.values {
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        h
    }
}

/// An odometry increment: the vehicle-frame rigid motion since the previous
/// frame together with its covariance over (longitudinal, lateral, heading).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionIncrement {
    pub delta: Pose2,
    pub covariance: Matrix3<f64>,
}

impl MotionIncrement {
    /// Builds an increment, rejecting covariances that are not finite,
    /// symmetric, and positive-definite.
    pub fn new(delta: Pose2, covariance: Matrix3<f64>) -> Result<Self, FilterError> {
        let inc = MotionIncrement { delta, covariance };
        inc.precision()?;
        Ok(inc)
    }

    /// Validates the covariance and returns its inverse.
    fn precision(&self) -> Result<Matrix3<f64>, FilterError> {
        let c = &self.covariance;
        if !c.iter().all(|v| v.is_finite()) {
            return Err(FilterError::BadCovariance);
        }
        for r in 0..3 {
            for s in (r + 1)..3 {
                let scale = c[(r, r)].abs().max(c[(s, s)].abs()).max(1e-12);
                if (c[(r, s)] - c[(s, r)]).abs() > 1e-9 * scale {
                    return Err(FilterError::BadCovariance);
                }
            }
        }
        let chol = nalgebra::Cholesky::new(*c).ok_or(FilterError::BadCovariance)?;
        let inv = chol.inverse();
        if !inv.iter().all(|v| v.is_finite()) {
            return Err(FilterError::BadCovariance);
        }
        Ok(inv)
    }
}

/// Tuning knobs for the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Peakedness exponent of the soft-argmax readout (>= 1). Higher values
    /// bias the estimate toward the single best cell.
    pub alpha: f64,
    /// GPS position noise scale in meters.
    pub sigma_gps: f64,
    /// Softmax temperature applied to lane correlation scores.
    pub lane_temperature: f64,
    /// Softmax temperature applied to sign correlation scores.
    pub sign_temperature: f64,
    /// Truncation radius of the motion kernel in Mahalanobis sigmas.
    pub motion_window: f64,
    /// Search lattice geometry.
    pub grid: GridGeometry,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: 4.0,
            sigma_gps: 2.0,
            lane_temperature: 300.0,
            sign_temperature: 30.0,
            motion_window: 3.0,
            grid: GridGeometry::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(FilterError::BadConfig(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("sigma_gps", self.sigma_gps),
            ("lane_temperature", self.lane_temperature),
            ("sign_temperature", self.sign_temperature),
            ("motion_window", self.motion_window),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FilterError::BadConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        self.grid.validate()?;
        Ok(())
    }
}

/// Motion-prediction output: the propagated belief plus the approximate
/// fraction of probability mass that fell outside the new lattice.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub belief: BeliefGrid,
    pub leakage: f64,
}

/// Inclusive index range of lattice nodes within `half` of `center`, where
/// node `n` sits at offset `(n - mid) * step`. Returns an empty range
/// (lo > hi) when the interval misses the lattice entirely.
fn index_window(center: f64, half: f64, step: f64, mid: f64, n: usize) -> (usize, usize) {
    let lo = ((center - half) / step + mid).floor();
    let hi = ((center + half) / step + mid).ceil();
    if hi < 0.0 || lo > (n - 1) as f64 {
        return (1, 0);
    }
    (lo.max(0.0) as usize, hi.min((n - 1) as f64) as usize)
}

/// Propagates the belief through one motion increment onto a re-anchored
/// copy of the lattice.
///
/// Every source cell scatters its mass onto nearby destination cells,
/// weighted by an unnormalized Gaussian in the pose residual between the
/// destination hypothesis and the source hypothesis composed with the
/// increment. The kernel is truncated where the Mahalanobis distance
/// exceeds `motion_window`; the result is renormalized, and the mass
/// lost to truncation and grid clipping is reported as `leakage`.
///
/// If every destination cell receives zero mass (the increment moved the
/// belief entirely off the lattice) the result falls back to uniform with
/// leakage 1.0.
pub fn predict(
    prev: &BeliefGrid,
    inc: &MotionIncrement,
    new_anchor: Pose2,
    motion_window: f64,
) -> Result<Prediction, FilterError> {
    if !(motion_window.is_finite() && motion_window > 0.0) {
        return Err(FilterError::BadConfig(format!(
            "motion_window must be > 0, got {motion_window}"
        )));
    }
    let p = inc.precision()?;
    let (p00, p01, p02) = (p[(0, 0)], p[(0, 1)], p[(0, 2)]);
    let (p11, p12, p22) = (p[(1, 1)], p[(1, 2)], p[(2, 2)]);

    let old = &prev.grid;
    let new = old.with_anchor(new_anchor);
    let mut acc = vec![0.0f64; new.len()];

    // Candidate half-widths: the truncation ellipsoid projected onto the
    // grid axes. Translation axes share a norm bound because the residual
    // is evaluated in the rotated predicted-pose frame.
    let c = &inc.covariance;
    let trans_half = motion_window * (c[(0, 0)].max(0.0) + c[(1, 1)].max(0.0)).sqrt();
    let theta_half = motion_window * c[(2, 2)].max(0.0).sqrt();
    let win2 = motion_window * motion_window;

    // Predicted offsets are affine in the source offset: for a source cell
    // at heading slice k with translation t, the predicted offset in the
    // new anchor frame is slice_base[k].translation + M * t, with M the
    // rotation by the anchor heading change.
    let m_ang = old.anchor.theta - new.anchor.theta;
    let (sin_m, cos_m) = m_ang.sin_cos();
    let slice_base: Vec<Pose2> = (0..old.n_theta)
        .map(|k| {
            let cell = compose(&old.anchor, &Pose2::new(0.0, 0.0, old.theta_offset(k)));
            let moved = compose(&cell, &inc.delta);
            inverse_compose(&moved, &new.anchor)
        })
        .collect();

    let lat_mid = ((new.n_lat - 1) / 2) as f64;
    let lon_mid = ((new.n_lon - 1) / 2) as f64;
    let theta_mid = ((new.n_theta - 1) / 2) as f64;

    for k_o in 0..old.n_theta {
        let base = slice_base[k_o];
        // Rotation into the predicted-pose frame, R(-base.theta).
        let (sin_c, cos_c) = base.theta.sin_cos();
        // Along a fixed destination row the residual moves by one lon step
        // per cell, so the exponent is a quadratic in the column index and
        // the Gaussian follows a two-multiply recurrence; only the row
        // entry point needs real exponentials.
        let u = cos_c * new.lon_step;
        let v = -sin_c * new.lon_step;
        let quad = p00 * u * u + p11 * v * v + 2.0 * p01 * u * v;
        let h = (-quad).exp();
        let e_th = p02 * u + p12 * v;
        let (k_lo, k_hi) =
            index_window(base.theta, theta_half, new.theta_step, theta_mid, new.n_theta);
        let theta_rows: Vec<(usize, f64, f64)> = (k_lo..=k_hi)
            .filter_map(|k_n| {
                let r_th = wrap_angle(new.theta_offset(k_n) - base.theta);
                let th_term = p22 * r_th * r_th;
                (th_term <= win2).then_some((k_n, r_th, th_term))
            })
            .collect();
        for i_o in 0..old.n_lat {
            let y_o = old.lat_offset(i_o);
            let row = old.index(i_o, 0, k_o);
            for j_o in 0..old.n_lon {
                let bel = prev.values[row + j_o];
                if bel == 0.0 {
                    continue;
                }
                let x_o = old.lon_offset(j_o);
                let x_c = base.x + cos_m * x_o - sin_m * y_o;
                let y_c = base.y + sin_m * x_o + cos_m * y_o;

                let (i_lo, i_hi) =
                    index_window(y_c, trans_half, new.lat_step, lat_mid, new.n_lat);
                let (j_lo, j_hi) =
                    index_window(x_c, trans_half, new.lon_step, lon_mid, new.n_lon);
                if i_lo > i_hi || j_lo > j_hi {
                    continue;
                }
                let dx0 = new.lon_offset(j_lo) - x_c;
                let span = (j_hi - j_lo) as f64;

                for &(k_n, r_th, th_term) in &theta_rows {
                    for i_n in i_lo..=i_hi {
                        let dy = new.lat_offset(i_n) - y_c;
                        let out_row = new.index(i_n, 0, k_n) + j_lo;
                        let rx0 = cos_c * dx0 + sin_c * dy;
                        let ry0 = -sin_c * dx0 + cos_c * dy;
                        // The exponent is a parabola in the column index.
                        // Start at its lattice argmin — the only place it
                        // is guaranteed small — and march outward both
                        // ways; m2 is monotone away from the vertex, so
                        // stopping at the truncation boundary visits
                        // exactly the nodes the full scan would keep. The
                        // entry residual is evaluated directly (offsets
                        // first, then products) because the quadratic's
                        // coefficients cancel catastrophically when the
                        // precision is much sharper than a cell.
                        let cross0 = p00 * rx0 * u
                            + p11 * ry0 * v
                            + p01 * (rx0 * v + ry0 * u)
                            + e_th * r_th;
                        let tv = (-cross0 / quad).round().clamp(0.0, span);
                        let t0 = tv as usize;
                        let dx_v = dx0 + tv * new.lon_step;
                        let rx = cos_c * dx_v + sin_c * dy;
                        let ry = -sin_c * dx_v + cos_c * dy;
                        let m2_v = p00 * rx * rx
                            + p11 * ry * ry
                            + th_term
                            + 2.0 * (p01 * rx * ry + (p02 * rx + p12 * ry) * r_th);
                        if !(m2_v <= win2) {
                            continue;
                        }
                        let wv = bel * (-0.5 * m2_v).exp();
                        let cross_v = p00 * rx * u
                            + p11 * ry * v
                            + p01 * (rx * v + ry * u)
                            + e_th * r_th;

                        // Rightward from the vertex node (inclusive).
                        let mut m2 = m2_v;
                        let mut d1 = quad + 2.0 * cross_v;
                        let mut w = wv;
                        let mut g = (-0.5 * d1).exp();
                        for t in t0..=(j_hi - j_lo) {
                            if m2 > win2 {
                                break;
                            }
                            acc[out_row + t] += w;
                            w *= g;
                            g *= h;
                            m2 += d1;
                            d1 += quad + quad;
                        }

                        // Leftward from the node before the vertex.
                        if t0 > 0 {
                            let mut d1 = quad - 2.0 * cross_v;
                            let mut m2 = m2_v + d1;
                            let mut w = wv * (-0.5 * d1).exp();
                            let mut g = w / wv * h;
                            for t in (0..t0).rev() {
                                if m2 > win2 {
                                    break;
                                }
                                acc[out_row + t] += w;
                                d1 += quad + quad;
                                m2 += d1;
                                w *= g;
                                g *= h;
                            }
                        }
                    }
                }
            }
        }
    }

    // Reference kernel mass: the scatter total for a source cell at the
    // lattice center evaluated on an unbounded lattice. Interior cells
    // deposit approximately this much, so the shortfall of the actual
    // total estimates the clipped fraction.
    let k_ref = {
        let base = slice_base[(old.n_theta - 1) / 2];
        let (sin_c, cos_c) = base.theta.sin_cos();
        // Clamp each axis to a few grid spans: beyond that the reference
        // only measures kernel mass the grid could never hold anyway.
        let clamp_span = |center: f64, half: f64, step: f64, n: usize| -> (i64, i64) {
            let cap = 2.0 * n as f64;
            let lo = ((center - half) / step).floor().max(-cap);
            let hi = ((center + half) / step).ceil().min(cap);
            (lo as i64, hi as i64)
        };
        let (k_lo, k_hi) = clamp_span(base.theta, theta_half, new.theta_step, new.n_theta);
        let (i_lo, i_hi) = clamp_span(base.y, trans_half, new.lat_step, new.n_lat);
        let (j_lo, j_hi) = clamp_span(base.x, trans_half, new.lon_step, new.n_lon);
        let mut total = 0.0;
        for k in k_lo..=k_hi {
            let r_th = k as f64 * new.theta_step - base.theta;
            for i in i_lo..=i_hi {
                let dy = i as f64 * new.lat_step - base.y;
                for j in j_lo..=j_hi {
                    let dx = j as f64 * new.lon_step - base.x;
                    let rx = cos_c * dx + sin_c * dy;
                    let ry = -sin_c * dx + cos_c * dy;
                    let m2 = p00 * rx * rx
                        + p11 * ry * ry
                        + p22 * r_th * r_th
                        + 2.0 * (p01 * rx * ry + (p02 * rx + p12 * ry) * r_th);
                    if m2 <= win2 {
                        total += (-0.5 * m2).exp();
                    }
                }
            }
        }
        total
    };

    let total: f64 = acc.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Ok(Prediction {
            belief: BeliefGrid::uniform(new),
            leakage: 1.0,
        });
    }
    let prev_mass = prev.sum();
    let leakage = if k_ref > 0.0 {
        (1.0 - total / (k_ref * prev_mass)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let inv = 1.0 / total;
    for v in &mut acc {
        *v *= inv;
    }
    Ok(Prediction {
        belief: BeliefGrid {
            grid: new,
            values: acc,
        },
        leakage,
    })
}

/// Measurement-update output. `degraded` flags a total conflict between the
/// prior and the factors: every cell underflowed to zero mass and the
/// posterior was reset to the prior instead of renormalizing garbage.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub belief: BeliefGrid,
    pub degraded: bool,
}

/// Multiplies the prior by each likelihood factor and renormalizes.
///
/// Factors combine in log space; the joint log-weight is shifted by its
/// maximum over the prior's support so a single exponential per cell
/// suffices and never overflows. Cells with zero prior stay zero. Factor
/// order does not affect the result.
pub fn update(prior: &BeliefGrid, factors: &[LikelihoodGrid]) -> Result<UpdateOutcome, FilterError> {
    for f in factors {
        if f.grid != prior.grid {
            return Err(FilterError::GridMismatch);
        }
    }
    if factors.is_empty() {
        return Ok(UpdateOutcome {
            belief: prior.clone(),
            degraded: false,
        });
    }
    let n = prior.values.len();
    let mut joint = vec![0.0f64; n];
    for f in factors {
        for (j, lw) in joint.iter_mut().zip(&f.log_weights) {
            *j += *lw;
        }
    }
    let mut shift = f64::NEG_INFINITY;
    for (j, p) in joint.iter().zip(&prior.values) {
        if *p > 0.0 && *j > shift {
            shift = *j;
        }
    }
    if !shift.is_finite() {
        return Ok(UpdateOutcome {
            belief: prior.clone(),
            degraded: true,
        });
    }
    let mut post = vec![0.0f64; n];
    let mut z = 0.0f64;
    for i in 0..n {
        let p = prior.values[i];
        if p == 0.0 {
            continue;
        }
        let v = p * (joint[i] - shift).exp();
        post[i] = v;
        z += v;
    }
    if !(z > 0.0) || !z.is_finite() {
        return Ok(UpdateOutcome {
            belief: prior.clone(),
            degraded: true,
        });
    }
    let inv = 1.0 / z;
    for v in &mut post {
        *v *= inv;
    }
    Ok(UpdateOutcome {
        belief: BeliefGrid {
            grid: prior.grid.clone(),
            values: post,
        },
        degraded: false,
    })
}

/// Reads a continuous pose estimate out of the belief: the mass-weighted
/// mean of the cell poses with weights Bel^alpha, using a circular mean
/// for the heading. alpha = 1 is the posterior mean; larger alpha
/// approaches the argmax cell.
pub fn soft_argmax(belief: &BeliefGrid, alpha: f64) -> Result<Pose2, FilterError> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(FilterError::BadConfig(format!(
            "alpha must be >= 1, got {alpha}"
        )));
    }
    let g = &belief.grid;
    let (sin_a, cos_a) = g.anchor.theta.sin_cos();
    let mut wsum = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    let (mut sin_th, mut cos_th) = (0.0, 0.0);
    for k in 0..g.n_theta {
        let th = g.anchor.theta + g.theta_offset(k);
        let (s_k, c_k) = th.sin_cos();
        for i in 0..g.n_lat {
            let lat = g.lat_offset(i);
            let row = g.index(i, 0, k);
            for j in 0..g.n_lon {
                let v = belief.values[row + j];
                if v == 0.0 {
                    continue;
                }
                let w = if alpha == 1.0 { v } else { v.powf(alpha) };
                let lon = g.lon_offset(j);
                wsum += w;
                x += w * (g.anchor.x + cos_a * lon - sin_a * lat);
                y += w * (g.anchor.y + sin_a * lon + cos_a * lat);
                sin_th += w * s_k;
                cos_th += w * c_k;
            }
        }
    }
    if !(wsum > 0.0) || !wsum.is_finite() {
        return Err(FilterError::DegenerateBelief);
    }
    Ok(Pose2::new(x / wsum, y / wsum, sin_th.atan2(cos_th)))
}

/// Mutable filter state carried between frames: the current belief and the
/// soft-argmax estimate it yielded.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub belief: BeliefGrid,
    pub estimate: Pose2,
}

/// Starts the filter with a uniform belief on a lattice anchored at the
/// initial pose guess.
pub fn init(anchor: Pose2, cfg: &FilterConfig) -> Result<FilterState, FilterError> {
    cfg.validate()?;
    let grid = SearchGrid::new(anchor, &cfg.grid)?;
    Ok(FilterState {
        belief: BeliefGrid::uniform(grid),
        estimate: anchor,
    })
}

/// Concentration and location of one likelihood factor's surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorDiagnostics {
    pub entropy: f64,
    pub peak: Pose2,
}

/// Health indicators collected over one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Probability mass the prediction pushed off the lattice.
    pub leakage: f64,
    /// True when the measurement update conflicted totally with the prior
    /// and was skipped.
    pub degraded: bool,
    /// |sum - 1| of the posterior before the caller sees it.
    pub belief_sum_error: f64,
    pub min_belief: f64,
    pub posterior_entropy: f64,
    pub lane: Option<FactorDiagnostics>,
    pub sign: Option<FactorDiagnostics>,
    pub gps: Option<FactorDiagnostics>,
}

/// Output of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub estimate: Pose2,
    pub diagnostics: StepDiagnostics,
}

/// Posterior cells below this fraction of the peak are zeroed after each
/// update. The transition kernel already truncates at several sigma, so
/// mass this small is numerically meaningless; dropping it keeps the
/// belief's support — and therefore prediction cost — bounded instead of
/// smearing over the whole lattice as steps accumulate.
const SUPPORT_PRUNE_REL: f64 = 1e-12;

fn prune_support(belief: &mut BeliefGrid) {
    let peak = belief.max_value();
    if !(peak > 0.0) {
        return;
    }
    let cut = peak * SUPPORT_PRUNE_REL;
    let mut total = 0.0;
    for v in &mut belief.values {
        if *v < cut {
            *v = 0.0;
        } else {
            total += *v;
        }
    }
    if total > 0.0 {
        for v in &mut belief.values {
            *v /= total;
        }
    }
}

fn factor_diagnostics(f: &LikelihoodGrid) -> FactorDiagnostics {
    let (i, j, k) = f.argmax_cell();
    FactorDiagnostics {
        entropy: f.entropy(),
        peak: f.grid.cell_pose(i, j, k),
    }
}

/// Selects which observation modalities a filter step consumes. Masked-out
/// channels are treated as absent, which is how baseline and ablation
/// variants share one step implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityMask {
    pub lane: bool,
    pub sign: bool,
    pub gps: bool,
}

impl ModalityMask {
    pub fn all() -> Self {
        ModalityMask {
            lane: true,
            sign: true,
            gps: true,
        }
    }

    pub fn none() -> Self {
        ModalityMask {
            lane: false,
            sign: false,
            gps: false,
        }
    }
}

/// Advances the filter by one frame: re-anchors the lattice at the
/// dead-reckoned pose, convolves the belief with the motion kernel,
/// multiplies in a likelihood factor per available modality (lane raster,
/// sign raster, GPS fix), prunes negligible support, and reads out the
/// pose estimate.
pub fn step(
    state: &mut FilterState,
    frame: &ObservationFrame,
    map: &SemanticMap,
    cfg: &FilterConfig,
) -> Result<StepResult, FilterError> {
    step_masked(state, frame, map, cfg, ModalityMask::all())
}

/// `step` with some modalities ignored; see `ModalityMask`.
pub fn step_masked(
    state: &mut FilterState,
    frame: &ObservationFrame,
    map: &SemanticMap,
    cfg: &FilterConfig,
    mask: ModalityMask,
) -> Result<StepResult, FilterError> {
    let new_anchor = compose(&state.estimate, &frame.motion.delta);
    let predicted = predict(&state.belief, &frame.motion, new_anchor, cfg.motion_window)?;
    let grid = &predicted.belief.grid;

    let mut factors = Vec::with_capacity(3);
    let mut lane = None;
    let mut sign = None;
    let mut gps = None;
    if mask.lane && frame.lane_obs.count_nonzero() > 0 {
        let f = lane_likelihood(&frame.lane_obs, map, grid, cfg.lane_temperature)?;
        lane = Some(factor_diagnostics(&f));
        factors.push(f);
    }
    if mask.sign && frame.sign_obs.count_nonzero() > 0 {
        let f = sign_likelihood(&frame.sign_obs, map, grid, cfg.sign_temperature)?;
        sign = Some(factor_diagnostics(&f));
        factors.push(f);
    }
    if let (true, Some(fix)) = (mask.gps, &frame.gps) {
        let f = gps_likelihood(fix, &map.frame.utm_to_map, grid, cfg.sigma_gps)?;
        gps = Some(factor_diagnostics(&f));
        factors.push(f);
    }

    let outcome = update(&predicted.belief, &factors)?;
    let mut belief = outcome.belief;
    prune_support(&mut belief);
    let estimate = soft_argmax(&belief, cfg.alpha)?;

    let diagnostics = StepDiagnostics {
        leakage: predicted.leakage,
        degraded: outcome.degraded,
        belief_sum_error: (belief.sum() - 1.0).abs(),
        min_belief: belief.min_value(),
        posterior_entropy: belief.entropy(),
        lane,
        sign,
        gps,
    };
    state.belief = belief;
    state.estimate = estimate;
    Ok(StepResult {
        estimate,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observe::SearchGrid;
    use crate::pose::{pose_approx_eq, Point2};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(
        lat_range: f64,
        lon_range: f64,
        theta_range: f64,
        lat_step: f64,
        lon_step: f64,
        theta_step: f64,
    ) -> GridGeometry {
        GridGeometry {
            lat_range,
            lon_range,
            theta_range,
            lat_step,
            lon_step,
            theta_step,
        }
    }

    fn small_grid(anchor: Pose2) -> SearchGrid {
        // 11 lat x 21 lon x 3 theta cells.
        let geom = geometry(0.25, 0.5, 1.0_f64.to_radians(), 0.05, 0.05, 1.0_f64.to_radians());
        SearchGrid::new(anchor, &geom).unwrap()
    }

    /// Three longitudinal cells at -0.05, 0, +0.05 m; single lat/theta.
    fn line3_grid(anchor: Pose2) -> SearchGrid {
        let geom = geometry(0.0, 0.05, 0.0, 0.05, 0.05, 1.0);
        SearchGrid::new(anchor, &geom).unwrap()
    }

    fn diag_cov(sx: f64, sy: f64, sth: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(sx * sx, sy * sy, sth * sth))
    }

    /// Brute-force transition: for every destination cell, sum the kernel
    /// against every source cell using full map-frame pose math, keeping
    /// only residuals within `window` Mahalanobis sigmas. No index windows,
    /// no zero-skipping.
    fn dense_predict_oracle(
        prev: &BeliefGrid,
        inc: &MotionIncrement,
        new_anchor: Pose2,
        window: f64,
    ) -> Vec<f64> {
        let old = &prev.grid;
        let new = old.with_anchor(new_anchor);
        let p = inc.covariance.try_inverse().unwrap();
        let win2 = window * window;
        let mut out = vec![0.0f64; new.len()];
        for k_n in 0..new.n_theta {
            for i_n in 0..new.n_lat {
                for j_n in 0..new.n_lon {
                    let target = new.cell_pose(i_n, j_n, k_n);
                    let mut s = 0.0;
                    for k_o in 0..old.n_theta {
                        for i_o in 0..old.n_lat {
                            for j_o in 0..old.n_lon {
                                let source = old.cell_pose(i_o, j_o, k_o);
                                let predicted = compose(&source, &inc.delta);
                                let r = inverse_compose(&target, &predicted);
                                let v = Vector3::new(r.x, r.y, r.theta);
                                let m2 = (v.transpose() * p * v)[(0, 0)];
                                if m2 <= win2 {
                                    s += prev.values[old.index(i_o, j_o, k_o)]
                                        * (-0.5 * m2).exp();
                                }
                            }
                        }
                    }
                    out[new.index(i_n, j_n, k_n)] = s;
                }
            }
        }
        let total: f64 = out.iter().sum();
        for v in &mut out {
            *v /= total;
        }
        out
    }

    fn single_hot(grid: SearchGrid, i: usize, j: usize, k: usize) -> BeliefGrid {
        let mut values = vec![0.0; grid.len()];
        values[grid.index(i, j, k)] = 1.0;
        BeliefGrid { grid, values }
    }

    #[test]
    fn motion_increment_rejects_asymmetric_covariance() {
        let mut c = diag_cov(0.1, 0.1, 0.01);
        c[(0, 1)] = 0.5;
        assert!(matches!(
            MotionIncrement::new(Pose2::identity(), c),
            Err(FilterError::BadCovariance)
        ));
    }

    #[test]
    fn motion_increment_rejects_indefinite_covariance() {
        let c = Matrix3::from_diagonal(&Vector3::new(0.01, -0.01, 0.01));
        assert!(matches!(
            MotionIncrement::new(Pose2::identity(), c),
            Err(FilterError::BadCovariance)
        ));
    }

    #[test]
    fn init_produces_uniform_belief_anchored_at_guess() {
        let cfg = FilterConfig::default();
        let anchor = Pose2::new(12.0, -3.0, 0.4);
        let state = init(anchor, &cfg).unwrap();
        let n = state.belief.grid.len();
        assert_eq!(n, 31 * 301 * 5);
        assert!((state.belief.sum() - 1.0).abs() < 1e-9);
        for &v in &state.belief.values {
            assert_eq!(v, 1.0 / n as f64);
        }
        assert_eq!(state.estimate, anchor);
        // The mean of a uniform belief is the anchor itself.
        let mean = soft_argmax(&state.belief, 1.0).unwrap();
        assert!(pose_approx_eq(&mean, &anchor, 1e-9));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = FilterConfig::default();
        cfg.alpha = 0.5;
        assert!(cfg.validate().is_err());
        cfg = FilterConfig::default();
        cfg.sigma_gps = 0.0;
        assert!(cfg.validate().is_err());
        cfg = FilterConfig::default();
        cfg.lane_temperature = -1.0;
        assert!(cfg.validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
    }

    #[test]
    fn predict_identity_motion_keeps_belief() {
        let grid = small_grid(Pose2::new(4.0, -2.0, 0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut values: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
        let t: f64 = values.iter().sum();
        for v in &mut values {
            *v /= t;
        }
        let prev = BeliefGrid { grid: grid.clone(), values };
        let inc =
            MotionIncrement::new(Pose2::identity(), diag_cov(1e-8, 1e-8, 1e-8)).unwrap();
        let pred = predict(&prev, &inc, grid.anchor, 3.0).unwrap();
        for (a, b) in pred.belief.values.iter().zip(&prev.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(pred.leakage < 1e-9);
    }

    #[test]
    fn predict_matches_dense_oracle_on_small_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..3 {
            let anchor = Pose2::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1.0..1.0),
            );
            let grid = small_grid(anchor);
            let mut values: Vec<f64> =
                (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
            // Sprinkle exact zeros: the production skip must not change sums.
            for v in values.iter_mut().step_by(7) {
                *v = 0.0;
            }
            let t: f64 = values.iter().sum();
            for v in &mut values {
                *v /= t;
            }
            let prev = BeliefGrid { grid: grid.clone(), values };
            let delta = Pose2::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.02..0.02),
            );
            let inc = MotionIncrement::new(
                delta,
                diag_cov(
                    rng.gen_range(0.05..0.2),
                    rng.gen_range(0.05..0.2),
                    rng.gen_range(0.005..0.02),
                ),
            )
            .unwrap();
            let new_anchor = if case == 0 {
                anchor
            } else {
                compose(&anchor, &delta)
            };
            let pred = predict(&prev, &inc, new_anchor, 1e12).unwrap();
            let oracle = dense_predict_oracle(&prev, &inc, new_anchor, 1e12);
            for (idx, (a, b)) in pred.belief.values.iter().zip(&oracle).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-12,
                    "case {case} cell {idx}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn predict_moves_single_hot_mass_forward() {
        // Wider longitudinal span so a +1 m move stays on the lattice when
        // the anchor is held fixed: 11 x 61 x 3 cells.
        let geom = geometry(0.25, 1.5, 1.0_f64.to_radians(), 0.05, 0.05, 1.0_f64.to_radians());
        let anchor = Pose2::new(2.0, 1.0, -0.2);
        let grid = SearchGrid::new(anchor, &geom).unwrap();
        let prev = single_hot(grid.clone(), 5, 30, 1);
        let inc = MotionIncrement::new(
            Pose2::new(1.0, 0.0, 0.0),
            diag_cov(0.1, 0.1, 0.5_f64.to_radians()),
        )
        .unwrap();

        // Anchor held fixed: the bump lands 20 columns forward.
        let pred = predict(&prev, &inc, anchor, 3.0).unwrap();
        assert_eq!(pred.belief.argmax_cell(), (5, 50, 1));
        assert!((pred.belief.sum() - 1.0).abs() < 1e-9);

        // Anchor moved with the increment: the bump stays centered.
        let followed = compose(&anchor, &inc.delta);
        let pred2 = predict(&prev, &inc, followed, 3.0).unwrap();
        assert_eq!(pred2.belief.argmax_cell(), (5, 30, 1));
    }

    #[test]
    fn predict_truncated_window_matches_truncated_oracle() {
        // The production index windows only prune candidates; membership is
        // decided by the exact Mahalanobis test, so a dense scan with the
        // same cutoff must agree to rounding error.
        let anchor = Pose2::new(0.0, 0.0, 0.0);
        let grid = small_grid(anchor);
        let prev = single_hot(grid.clone(), 5, 10, 1);
        let inc = MotionIncrement::new(
            Pose2::new(0.1, 0.02, 0.0),
            diag_cov(0.06, 0.06, 0.008),
        )
        .unwrap();
        let pred = predict(&prev, &inc, anchor, 3.0).unwrap();
        let oracle = dense_predict_oracle(&prev, &inc, anchor, 3.0);
        for (a, b) in pred.belief.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((pred.belief.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_uniform_stays_uniform_within_theta_slices() {
        let anchor = Pose2::new(3.0, -1.0, 0.5);
        let grid = small_grid(anchor);
        let prev = BeliefGrid::uniform(grid.clone());
        // Pure translation: with the anchor following the increment the two
        // lattices stay exactly aligned, so truncation cuts every interior
        // cell identically.
        let delta = Pose2::new(2.0, 0.1, 0.0);
        let inc = MotionIncrement::new(delta, diag_cov(0.06, 0.06, 0.01)).unwrap();
        let pred = predict(&prev, &inc, compose(&anchor, &delta), 3.0).unwrap();
        let g = &pred.belief.grid;
        // Interior cells of each heading slice carry equal mass; edges lose
        // kernel support and may not.
        for k in 0..g.n_theta {
            let reference = pred.belief.values[g.index(5, 10, k)];
            for i in 4..=6 {
                for j in 6..=14 {
                    let v = pred.belief.values[g.index(i, j, k)];
                    assert!(
                        (v - reference).abs() <= 1e-9 * reference,
                        "slice {k} cell ({i},{j}): {v} vs {reference}"
                    );
                }
            }
        }
    }

    #[test]
    fn predict_reports_full_leakage_when_motion_leaves_grid() {
        let anchor = Pose2::identity();
        let grid = small_grid(anchor);
        let prev = single_hot(grid.clone(), 5, 10, 1);
        // A 100 m jump with the anchor left in place: nothing lands.
        let inc = MotionIncrement::new(
            Pose2::new(100.0, 0.0, 0.0),
            diag_cov(0.1, 0.1, 0.01),
        )
        .unwrap();
        let pred = predict(&prev, &inc, anchor, 3.0).unwrap();
        assert_eq!(pred.leakage, 1.0);
        // Fallback is uniform, still a valid distribution.
        assert!((pred.belief.sum() - 1.0).abs() < 1e-9);
        let n = pred.belief.values.len();
        for &v in &pred.belief.values {
            assert_eq!(v, 1.0 / n as f64);
        }
    }

    #[test]
    fn update_with_no_factors_returns_prior() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.2, 0.5, 0.3],
        };
        let out = update(&prior, &[]).unwrap();
        assert_eq!(out.belief.values, prior.values);
        assert!(!out.degraded);
    }

    #[test]
    fn update_with_uniform_factor_keeps_prior() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.2, 0.5, 0.3],
        };
        let factor = LikelihoodGrid::uniform(grid);
        let out = update(&prior, &[factor]).unwrap();
        for (a, b) in out.belief.values.iter().zip(&prior.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn update_of_uniform_prior_returns_the_factor() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid::uniform(grid.clone());
        let factor = LikelihoodGrid::from_log_weights(
            grid,
            vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()],
        );
        let expected = factor.values.clone();
        let out = update(&prior, &[factor]).unwrap();
        for (a, b) in out.belief.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn update_three_cell_example() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.2, 0.5, 0.3],
        };
        let factor = LikelihoodGrid::from_log_weights(
            grid,
            vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()],
        );
        let out = update(&prior, &[factor]).unwrap();
        let expected = [1.0 / 3.0, 5.0 / 12.0, 0.25];
        for (a, b) in out.belief.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(!out.degraded);
    }

    #[test]
    fn update_is_factor_order_invariant() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.1, 0.6, 0.3],
        };
        let f1 = LikelihoodGrid::from_log_weights(grid.clone(), vec![-0.3, -1.2, -0.7]);
        let f2 = LikelihoodGrid::from_log_weights(grid.clone(), vec![-2.0, -0.1, -0.5]);
        let ab = update(&prior, &[f1.clone(), f2.clone()]).unwrap();
        let ba = update(&prior, &[f2, f1]).unwrap();
        // Log-weight addition is commutative, so a two-factor swap is exact.
        assert_eq!(ab.belief.values, ba.belief.values);
    }

    #[test]
    fn update_zero_prior_cells_stay_zero() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.0, 0.7, 0.3],
        };
        let factor =
            LikelihoodGrid::from_log_weights(grid, vec![5.0, -1.0, -1.0]);
        let out = update(&prior, &[factor]).unwrap();
        assert_eq!(out.belief.values[0], 0.0);
        assert!((out.belief.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn update_total_conflict_resets_to_prior_and_flags() {
        let grid = line3_grid(Pose2::identity());
        let prior = BeliefGrid {
            grid: grid.clone(),
            values: vec![1.0, 0.0, 0.0],
        };
        // The factor puts literally zero weight where the prior lives.
        let factor = LikelihoodGrid::from_log_weights(
            grid,
            vec![f64::NEG_INFINITY, 0.0, 0.0],
        );
        let out = update(&prior, &[factor]).unwrap();
        assert!(out.degraded);
        assert_eq!(out.belief.values, prior.values);
    }

    #[test]
    fn update_rejects_mismatched_grids() {
        let prior = BeliefGrid::uniform(line3_grid(Pose2::identity()));
        let other = LikelihoodGrid::uniform(line3_grid(Pose2::new(1.0, 0.0, 0.0)));
        assert!(matches!(
            update(&prior, &[other]),
            Err(FilterError::GridMismatch)
        ));
    }

    #[test]
    fn soft_argmax_single_hot_returns_cell_pose() {
        let anchor = Pose2::new(7.0, -2.0, 0.9);
        let grid = small_grid(anchor);
        let belief = single_hot(grid.clone(), 2, 17, 0);
        let expected = grid.cell_pose(2, 17, 0);
        for alpha in [1.0, 2.0, 8.0, 64.0] {
            let est = soft_argmax(&belief, alpha).unwrap();
            assert!(pose_approx_eq(&est, &expected, 1e-9), "alpha {alpha}");
        }
    }

    #[test]
    fn soft_argmax_two_equal_cells_average_to_midpoint() {
        let anchor = Pose2::new(1.0, 2.0, 0.25);
        // Cells at -0.5 and +0.5 m longitudinal: 1 lat x 3 lon x 1 theta
        // with 0.5 m steps; the middle cell stays empty.
        let geom = geometry(0.0, 0.5, 0.0, 0.5, 0.5, 1.0);
        let grid = SearchGrid::new(anchor, &geom).unwrap();
        let belief = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.5, 0.0, 0.5],
        };
        let est = soft_argmax(&belief, 1.0).unwrap();
        assert!(pose_approx_eq(&est, &anchor, 1e-12));
    }

    #[test]
    fn soft_argmax_weighted_pair_lands_at_weighted_mean() {
        // Mass 0.25 at 0 m and 0.75 at +0.05 m longitudinal: the mean
        // sits at +0.0375 m.
        let grid = line3_grid(Pose2::identity());
        let belief = BeliefGrid {
            grid: grid.clone(),
            values: vec![0.0, 0.25, 0.75],
        };
        let est = soft_argmax(&belief, 1.0).unwrap();
        assert!((est.x - 0.0375).abs() < 1e-9);
        assert!(est.y.abs() < 1e-12);
        assert!(est.theta.abs() < 1e-12);
    }

    #[test]
    fn soft_argmax_high_alpha_approaches_argmax_cell() {
        let anchor = Pose2::new(-3.0, 8.0, -1.2);
        let grid = small_grid(anchor);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut values: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
        let hot = grid.index(7, 13, 2);
        values[hot] = 3.0;
        let t: f64 = values.iter().sum();
        for v in &mut values {
            *v /= t;
        }
        let belief = BeliefGrid { grid: grid.clone(), values };
        let est = soft_argmax(&belief, 64.0).unwrap();
        let peak = grid.cell_pose(7, 13, 2);
        // Within half a cell of the max cell on every axis.
        let offset = inverse_compose(&est, &peak);
        assert!(offset.x.abs() < 0.025);
        assert!(offset.y.abs() < 0.025);
        assert!(offset.theta.abs() < 0.5_f64.to_radians());
    }

    #[test]
    fn soft_argmax_rejects_alpha_below_one() {
        let belief = BeliefGrid::uniform(line3_grid(Pose2::identity()));
        assert!(soft_argmax(&belief, 0.99).is_err());
    }

    #[test]
    fn predict_update_cycle_keeps_belief_normalized_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let anchor = Pose2::new(0.0, 0.0, 0.1);
        let grid = small_grid(anchor);
        let mut belief = BeliefGrid::uniform(grid.clone());
        let mut est = anchor;
        for step_idx in 0..25 {
            let delta = Pose2::new(
                rng.gen_range(0.5..2.5),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.01..0.01),
            );
            let inc = MotionIncrement::new(delta, diag_cov(0.05, 0.05, 0.008)).unwrap();
            let new_anchor = compose(&est, &delta);
            let pred = predict(&belief, &inc, new_anchor, 3.0).unwrap();
            let scores: Vec<f64> = (0..pred.belief.grid.len())
                .map(|_| rng.gen_range(-3.0..0.0))
                .collect();
            let factor = LikelihoodGrid::from_log_weights(pred.belief.grid.clone(), scores);
            let out = update(&pred.belief, &[factor]).unwrap();
            let sum = out.belief.sum();
            assert!(
                (sum - 1.0).abs() <= 1e-9,
                "step {step_idx}: sum drifted to {sum}"
            );
            assert!(out.belief.min_value() >= 0.0);
            est = soft_argmax(&out.belief, 4.0).unwrap();
            belief = out.belief;
        }
        // The estimate should have tracked the dead-reckoned anchor chain
        // loosely; mostly this asserts nothing blew up.
        assert!(est.translation().distance(&Point2::new(0.0, 0.0)) > 5.0);
    }

    fn step_config() -> FilterConfig {
        FilterConfig {
            grid: geometry(0.25, 0.5, 1.0_f64.to_radians(), 0.05, 0.05, 1.0_f64.to_radians()),
            ..FilterConfig::default()
        }
    }

    fn blank_frame(delta: Pose2, cov: Matrix3<f64>) -> ObservationFrame {
        ObservationFrame {
            timestamp: 0.0,
            motion: MotionIncrement {
                delta,
                covariance: cov,
            },
            gps: None,
            lane_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
            sign_obs: crate::raster::Raster::centered_zeros(0.5, 3, 3),
        }
    }

    #[test]
    fn step_without_sensors_dead_reckons() {
        // A sharply peaked belief pushed by near-exact odometry with no
        // measurements must ride the dead-reckoned chain.
        let cfg = step_config();
        let anchor = Pose2::new(10.0, -4.0, 0.3);
        let mut state = init(anchor, &cfg).unwrap();
        let grid = state.belief.grid.clone();
        state.belief = single_hot(grid, 5, 10, 1);
        let tiny = diag_cov(1e-8, 1e-8, 1e-8);
        let mut reckoned = anchor;
        for n in 0..5 {
            // Deltas are exact multiples of the lattice steps.
            let delta = Pose2::new(0.10 + 0.05 * n as f64, -0.05, 0.0);
            reckoned = compose(&reckoned, &delta);
            let map = SemanticMap::empty();
            let res = step(&mut state, &blank_frame(delta, tiny), &map, &cfg).unwrap();
            assert!(
                pose_approx_eq(&res.estimate, &reckoned, 1e-9),
                "step {n}: {:?} vs {:?}",
                res.estimate,
                reckoned
            );
            assert!(res.diagnostics.lane.is_none());
            assert!(res.diagnostics.sign.is_none());
            assert!(res.diagnostics.gps.is_none());
            assert!(!res.diagnostics.degraded);
            assert!(res.diagnostics.belief_sum_error <= 1e-9);
        }
    }

    #[test]
    fn step_with_gps_pulls_estimate_toward_fix() {
        let cfg = step_config();
        let anchor = Pose2::new(0.0, 0.0, 0.0);
        let mut state = init(anchor, &cfg).unwrap();
        let map = SemanticMap::empty();
        // Fix sits forward-left of the dead-reckoned pose (identity map
        // frame, so map coordinates equal UTM coordinates).
        let delta = Pose2::new(0.1, 0.0, 0.0);
        let reckoned = compose(&anchor, &delta);
        let fix_pos = Point2::new(reckoned.x + 0.2, reckoned.y + 0.1);
        let mut frame = blank_frame(delta, diag_cov(0.05, 0.05, 0.008));
        frame.gps = Some(crate::observe::GpsFix {
            position: fix_pos,
            timestamp: 0.0,
        });
        let res = step(&mut state, &frame, &map, &cfg).unwrap();
        assert!(res.diagnostics.gps.is_some());
        let before = reckoned.translation().distance(&fix_pos);
        let after = res.estimate.translation().distance(&fix_pos);
        assert!(after < before, "estimate did not move toward fix: {after} vs {before}");
    }

    #[test]
    fn prune_support_drops_negligible_cells_and_renormalizes() {
        let grid = small_grid(Pose2::identity());
        let mut belief = BeliefGrid::uniform(grid);
        belief.values[0] = 1.0;
        belief.values[1] = 1e-20;
        let z: f64 = belief.values.iter().sum();
        for v in &mut belief.values {
            *v /= z;
        }
        prune_support(&mut belief);
        assert_eq!(belief.values[1], 0.0);
        assert!(belief.values[2] > 0.0, "moderate cells survive");
        assert!((belief.sum() - 1.0).abs() < 1e-12);
    }
}
