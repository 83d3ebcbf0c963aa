//! End-to-end tests that drive the `semloc` binary the way a user would:
//! build a map, simulate a drive, localize against the log, evaluate a
//! small suite, and render plots. Scenarios are kept short so the whole
//! file runs in well under a minute.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semloc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawning semloc")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Scenario config for a short snippet: 200 m instead of the default 2 km,
/// with a compact observation raster to keep matching cheap.
const SHORT_SCENARIO: &str = "\
[scenario]
length_m = 200.0
lane_count = 3
sign_spacing_m = 80.0
drive_lane = 1
speed_range = [25.0, 30.0]

[obs]
lon_extent_m = 12.0
lat_extent_m = 16.0
resolution = 0.05
sign_visible_m = 40.0
";

/// Filter config matching the shipped suite: a narrow longitudinal search
/// window so dash-period aliases of the lane matcher stay out of the grid.
const SHORT_FILTER: &str = "\
sigma_gps = 3.0

[grid]
lat_range = 0.75
lon_range = 2.5
theta_range = 0.017453292519943295
lat_step = 0.05
lon_step = 0.05
theta_step = 0.017453292519943295
";

#[test]
fn map_build_then_info_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scenario.toml"), SHORT_SCENARIO).unwrap();

    let out = semloc(
        &[
            "map-build",
            "--config",
            "scenario.toml",
            "--seed",
            "9",
            "--out",
            "map.bin",
        ],
        dir.path(),
    );
    assert_success(&out, "map-build");
    assert!(dir.path().join("map.bin").exists());

    let out = semloc(
        &["map-info", "--map", "map.bin", "--compare-dense"],
        dir.path(),
    );
    assert_success(&out, "map-info");
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("MiB/km²"), "missing density line:\n{text}");
    assert!(text.contains("ratio"), "missing dense comparison:\n{text}");
    // The compact map must be strictly smaller than its dense counterpart.
    let ratio: f64 = text
        .lines()
        .find(|l| l.contains("ratio"))
        .and_then(|l| l.split("ratio").nth(1))
        .and_then(|t| t.trim().trim_end_matches('x').parse().ok())
        .expect("parsing ratio");
    assert!(ratio > 1.0, "dense ratio {ratio} not > 1");
}

#[test]
fn simulate_then_localize_tracks_noiseless_truth() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.toml"), SHORT_SCENARIO).unwrap();

    let out = semloc(
        &[
            "simulate",
            "--config",
            "sim.toml",
            "--seed",
            "3",
            "--noiseless",
            "--out",
            "log.bin",
            "--map-out",
            "map.bin",
            "--truth-out",
            "truth.csv",
        ],
        dir.path(),
    );
    assert_success(&out, "simulate");

    fs::write(dir.path().join("filter.toml"), SHORT_FILTER).unwrap();
    let out = semloc(
        &[
            "localize",
            "--method",
            "full",
            "--map",
            "map.bin",
            "--log",
            "log.bin",
            "--config",
            "filter.toml",
            "--out",
            "trace.csv",
        ],
        dir.path(),
    );
    assert_success(&out, "localize");

    let truth = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let truth_rows: Vec<&str> = truth.lines().skip(1).collect();
    let trace_rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(trace_rows.len(), truth_rows.len(), "one estimate per frame");

    // Noiseless log, exact initialization: the last estimate should sit
    // within a couple of grid cells of the true pose.
    let parse_xy = |row: &str, xi: usize, yi: usize| {
        let f: Vec<&str> = row.split(',').collect();
        (
            f[xi].parse::<f64>().unwrap(),
            f[yi].parse::<f64>().unwrap(),
        )
    };
    let header: Vec<&str> = truth.lines().next().unwrap().split(',').collect();
    let tx = header.iter().position(|h| *h == "x").unwrap();
    let ty = header.iter().position(|h| *h == "y").unwrap();
    let (gx, gy) = parse_xy(truth_rows.last().unwrap(), tx, ty);
    let (ex, ey) = parse_xy(trace_rows.last().unwrap(), 2, 3);
    let err = ((gx - ex).powi(2) + (gy - ey).powi(2)).sqrt();
    assert!(err < 0.3, "final estimate {err:.3} m from truth");
}

#[test]
fn localize_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = semloc(
        &[
            "localize",
            "--method",
            "psychic",
            "--map",
            "missing.bin",
            "--log",
            "missing.bin",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("method"), "unhelpful error:\n{err}");
}

/// A two-seed suite over cheap methods; used for the determinism and
/// plotting tests below.
const TINY_SUITE: &str = "\
seeds = [5, 6]
methods = [\"gps\", \"dynamics\"]
burn_in = 5

[scenario]
length_m = 200.0
lane_count = 3
sign_spacing_m = 80.0
drive_lane = 1
speed_range = [25.0, 30.0]
";

#[test]
fn eval_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), TINY_SUITE).unwrap();

    for run in ["a", "b"] {
        let out = semloc(
            &["eval", "--suite", "suite.toml", "--out", run, "--check"],
            dir.path(),
        );
        assert_success(&out, "eval");
    }
    let a = fs::read(dir.path().join("a/report.json")).unwrap();
    let b = fs::read(dir.path().join("b/report.json")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same config and seeds must give identical reports");

    // The text report ends with a wall-clock timing block; everything above
    // it must also be reproducible.
    let strip_timing = |path: &Path| {
        let text = fs::read_to_string(path).unwrap();
        text.split("timing:").next().unwrap().to_string()
    };
    assert_eq!(
        strip_timing(&dir.path().join("a/report.txt")),
        strip_timing(&dir.path().join("b/report.txt"))
    );
}

#[test]
fn eval_then_plot_renders_charts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), TINY_SUITE).unwrap();

    let out = semloc(
        &["eval", "--suite", "suite.toml", "--out", "run"],
        dir.path(),
    );
    assert_success(&out, "eval");

    let out = semloc(
        &["plot", "--run", "run/report.json", "--out", "plots"],
        dir.path(),
    );
    assert_success(&out, "plot");
    let pngs = fs::read_dir(dir.path().join("plots"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    assert!(pngs > 0, "plot produced no images");
}

#[test]
fn bench_correlate_reports_tight_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let out = semloc(
        &[
            "bench-correlate",
            "--pairs",
            "5",
            "--obs-h",
            "40",
            "--obs-w",
            "64",
            "--lat-lags",
            "5",
            "--lon-lags",
            "9",
        ],
        dir.path(),
    );
    assert_success(&out, "bench-correlate");
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let disc: f64 = text
        .lines()
        .find(|l| l.contains("max relative discrepancy"))
        .and_then(|l| l.split(':').nth(1))
        .and_then(|t| t.trim().parse().ok())
        .expect("parsing discrepancy");
    assert!(disc < 1e-6, "discrepancy {disc:e} too large");
}
