//! Lightweight semantic localization against a sparse HD map.
//!
//! The library estimates a vehicle's planar pose (x, y, heading) by fusing
//! four cues inside a histogram Bayes filter over a local search grid:
//!
//! * lane-boundary matching — BEV lane detections correlated against the
//!   map's inverse truncated distance field (FFT-accelerated),
//! * traffic-sign matching — sparse sign detections correlated against a
//!   sparse geo-registered sign raster,
//! * GPS — an isotropic Gaussian position cue,
//! * vehicle dynamics — odometry increments that transport the belief.
//!
//! The map itself stays vector/sparse (polylines + nonzero sign cells) and
//! is rasterized on demand, which keeps storage orders of magnitude below a
//! dense grid. A synthetic highway simulator and an evaluation harness with
//! error decomposition, ablations, and deterministic reports round out the
//! toolkit.

pub mod eval;
pub mod filter;
pub mod map;
pub mod observe;
pub mod pose;
pub mod raster;
pub mod sim;

pub use eval::{ExperimentConfig, Method, RunReport};
pub use filter::{BeliefGrid, FilterConfig, FilterState, ModalityMask, MotionIncrement};
pub use map::{LaneGraph, SemanticMap, SignMap};
pub use observe::{GpsFix, LikelihoodGrid, SearchGrid};
pub use pose::{Point2, Pose2};
pub use raster::{Raster, Rect};
pub use sim::{NoiseConfig, ObsConfig, ObservationFrame, Scenario, ScenarioConfig};
