//! `semloc` — command-line front end for the semantic localization toolkit:
//! build synthetic maps, simulate sensor logs, localize against a map,
//! run multi-method evaluation suites, benchmark the correlator, and render
//! plot images from the outputs. All behavior is driven by flags and
//! declarative TOML config files; environment variables are never consulted.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use semloc::eval::{
    baseline_deterministic_step, check_gates, render_report_text,
    run_experiment, ExperimentConfig, Method, RunReport,
};
use semloc::filter::{init, step_masked, FilterConfig, StepDiagnostics};
use semloc::map::io::{load_map, save_map};
use semloc::map::{self, dense_raster_equivalent_bytes, geometry_area_km2, storage_report};
use semloc::observe::{correlate_fft, correlate_spatial};
use semloc::pose::Pose2;
use semloc::raster::Raster;
use semloc::sim::{
    gen_scenario, log::LogReader, log::LogWriter, sensor_stream, NoiseConfig, ObsConfig,
    ScenarioConfig,
};

mod plot;

#[derive(Parser)]
#[command(name = "semloc", version, about = "Semantic localization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic highway scenario and save its semantic map.
    MapBuild(MapBuildArgs),
    /// Print size and content statistics for a saved map.
    MapInfo(MapInfoArgs),
    /// Simulate a drive over a generated scenario and record the sensor log.
    Simulate(SimulateArgs),
    /// Run a localization method over a recorded sensor log.
    Localize(LocalizeArgs),
    /// Run a multi-method evaluation suite and write reports.
    Eval(EvalArgs),
    /// Benchmark frequency-domain against spatial correlation.
    BenchCorrelate(BenchArgs),
    /// Render plot images from evaluation and localization outputs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct MapBuildArgs {
    /// Config TOML with a [scenario] section (same format as `simulate`);
    /// defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output map file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapInfoArgs {
    #[arg(long)]
    map: PathBuf,
    /// Also print the size of an equivalent dense raster and the ratio.
    #[arg(long)]
    compare_dense: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config TOML with [scenario], [noise], [obs] sections;
    /// defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output sensor log file.
    #[arg(long)]
    out: PathBuf,
    /// Also save the scenario's map here.
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Also save the ground-truth trajectory as CSV here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Zero all sensor noise regardless of the config file.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Localization method: dynamics | gps | lane | lane+sign | lane+gps |
    /// full | deterministic.
    #[arg(long, default_value = "full")]
    method: String,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Filter config TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial pose "x,y,theta" in map coordinates; defaults to the log's
    /// first GPS fix with heading 0.
    #[arg(long)]
    init: Option<String>,
    /// Write the estimated trajectory and step diagnostics as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write belief heatmap snapshots into this directory.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    /// Snapshot period in frames.
    #[arg(long, default_value_t = 100)]
    heatmap_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Suite config: a TOML file, or a directory containing suite.toml.
    #[arg(long)]
    suite: PathBuf,
    /// Output directory for report.json and report.txt.
    #[arg(long, default_value = "eval-out")]
    out: PathBuf,
    /// Comma-separated method list overriding the config file.
    #[arg(long)]
    methods: Option<String>,
    /// Evaluate acceptance gates and exit nonzero if any fail.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Random pairs for the exactness check.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    /// Observation height (cells) for the timing comparison.
    #[arg(long, default_value_t = 600)]
    obs_h: usize,
    /// Observation width (cells) for the timing comparison.
    #[arg(long, default_value_t = 1200)]
    obs_w: usize,
    #[arg(long, default_value_t = 31)]
    lat_lags: usize,
    #[arg(long, default_value_t = 101)]
    lon_lags: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// Evaluation report JSON to chart.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Localization trace CSV (from `localize --out`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Ground-truth CSV (from `simulate --truth-out`) to overlay.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for the images.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MapBuild(a) => map_build(a),
        Cmd::MapInfo(a) => map_info(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Localize(a) => localize(a),
        Cmd::Eval(a) => eval(a),
        Cmd::BenchCorrelate(a) => bench_correlate(a),
        Cmd::Plot(a) => plot_cmd(a),
    }
}

/// Loads a TOML config file, or the type's default when no path is given.
fn load_toml_or_default<T: Default + for<'de> Deserialize<'de>>(
    path: &Option<PathBuf>,
) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn map_build(a: MapBuildArgs) -> Result<()> {
    // Same file format as `simulate` (and the [scenario] section of an eval
    // suite), so one config can drive every stage.
    let cfg: SimulateFileConfig = load_toml_or_default(&a.config)?;
    let cfg = cfg.scenario;
    let scenario = gen_scenario(&cfg, a.seed).context("generating scenario")?;
    let bytes = save_map(&a.out, &scenario.map).context("saving map")?;
    let area = geometry_area_km2(&scenario.map);
    println!(
        "built map: seed {}, {:.0} m of road, {} lane polylines, {} sign cells",
        a.seed,
        cfg.length_m,
        scenario.map.lanes.boundaries.len(),
        scenario.map.signs.raster.cells.len(),
    );
    println!(
        "saved {} ({} bytes, {:.4} km², {:.3} MiB/km²)",
        a.out.display(),
        bytes,
        area,
        storage_report(&scenario.map, area).mib_per_km2
    );
    Ok(())
}

fn map_info(a: MapInfoArgs) -> Result<()> {
    let m = load_map(&a.map).with_context(|| format!("loading map {}", a.map.display()))?;
    let bytes = map::io::serialized_size(&m);
    let area = geometry_area_km2(&m);
    let vertices: usize = m.lanes.boundaries.iter().map(|p| p.len()).sum();
    println!("map: {}", a.map.display());
    println!("  description: {}", m.frame.description);
    println!(
        "  lanes: {} polylines, {} vertices",
        m.lanes.boundaries.len(),
        vertices
    );
    println!(
        "  signs: {} nonzero cells at {:.2} m/cell",
        m.signs.raster.cells.len(),
        m.signs.resolution
    );
    if let Some(b) = m.geometry_bbox() {
        println!(
            "  extent: {:.1} m x {:.1} m ({:.4} km²)",
            b.width(),
            b.height(),
            area
        );
    }
    if area > 0.0 {
        let sr = storage_report(&m, area);
        println!("  serialized: {} bytes = {:.4} MiB/km²", sr.bytes, sr.mib_per_km2);
        if a.compare_dense {
            let dense = dense_raster_equivalent_bytes(&m, m.signs.resolution);
            println!(
                "  dense raster at {:.2} m/cell: {} bytes, ratio {:.1}x",
                m.signs.resolution,
                dense,
                dense as f64 / bytes as f64
            );
        }
    } else {
        println!("  serialized: {bytes} bytes (no geometry, no areal density)");
    }
    Ok(())
}

/// On-disk simulate config: scenario geometry, sensor noise, observation
/// raster shape.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SimulateFileConfig {
    scenario: ScenarioConfig,
    noise: NoiseConfig,
    obs: ObsConfig,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateFileConfig = load_toml_or_default(&a.config)?;
    if a.noiseless {
        cfg.noise = NoiseConfig::noiseless();
    }
    let scenario = gen_scenario(&cfg.scenario, a.seed).context("generating scenario")?;
    if let Some(map_out) = &a.map_out {
        let bytes = save_map(map_out, &scenario.map).context("saving map")?;
        println!("saved map {} ({} bytes)", map_out.display(), bytes);
    }
    if let Some(truth_out) = &a.truth_out {
        write_truth_csv(truth_out, &scenario.truth)?;
        println!(
            "saved truth {} ({} poses)",
            truth_out.display(),
            scenario.truth.len()
        );
    }
    let stream = sensor_stream(&scenario, &cfg.noise, &cfg.obs, a.seed)?;
    let mut writer = LogWriter::create(&a.out).context("creating log")?;
    for frame in stream {
        writer.append(&frame)?;
    }
    let frames = writer.finish()?;
    let bytes = fs::metadata(&a.out).map(|m| m.len()).unwrap_or(0);
    println!(
        "recorded {} frames to {} ({} bytes)",
        frames,
        a.out.display(),
        bytes
    );
    Ok(())
}

fn write_truth_csv(path: &Path, truth: &[Pose2]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["frame", "t", "x", "y", "theta"])?;
    for (i, p) in truth.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.1}", i as f64 / semloc::sim::FRAME_RATE_HZ),
            format!("{}", p.x),
            format!("{}", p.y),
            format!("{}", p.theta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_init_pose(s: &str) -> Result<Pose2> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("--init expects \"x,y,theta\", got {s:?}");
    }
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().with_context(|| format!("parsing {p:?}")))
        .collect::<Result<_>>()?;
    Ok(Pose2::new(vals[0], vals[1], vals[2]))
}

fn localize(a: LocalizeArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let m = load_map(&a.map).with_context(|| format!("loading map {}", a.map.display()))?;
    let cfg: FilterConfig = load_toml_or_default(&a.config)?;
    cfg.validate()?;

    let start = match &a.init {
        Some(s) => parse_init_pose(s)?,
        None => {
            // Fall back to the first GPS fix in the log, heading 0.
            let mut found = None;
            for frame in LogReader::open(&a.log)? {
                let f = frame?;
                if let Some(fix) = f.gps {
                    let p = semloc::pose::transform_point(&m.frame.utm_to_map, &fix.position);
                    found = Some(Pose2::new(p.x, p.y, 0.0));
                    break;
                }
            }
            let p = found.context(
                "log contains no GPS fix to initialize from; pass --init \"x,y,theta\"",
            )?;
            eprintln!(
                "note: initialized from first GPS fix at ({:.2}, {:.2}) with heading 0",
                p.x, p.y
            );
            p
        }
    };

    if let Some(dir) = &a.heatmap_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        if a.heatmap_every == 0 {
            bail!("--heatmap-every must be >= 1");
        }
    }

    let mut trace = match &a.out {
        Some(p) => {
            let mut w = csv::Writer::from_path(p)
                .with_context(|| format!("creating {}", p.display()))?;
            w.write_record([
                "frame",
                "t",
                "x",
                "y",
                "theta",
                "belief_sum_error",
                "min_belief",
                "entropy",
                "leakage",
                "degraded",
            ])?;
            Some(w)
        }
        None => None,
    };

    let mut filter_state = if method == Method::Deterministic {
        None
    } else {
        Some(init(start, &cfg)?)
    };
    let mut det_estimate = start;
    let det_weights = semloc::eval::DeterministicWeights::default();

    let t0 = Instant::now();
    let mut frames = 0usize;
    let mut estimate = start;
    for frame in LogReader::open(&a.log)? {
        let frame = frame?;
        let diagnostics: Option<StepDiagnostics> = match &mut filter_state {
            Some(state) => {
                let res = step_masked(state, &frame, &m, &cfg, method.mask())?;
                estimate = res.estimate;
                Some(res.diagnostics)
            }
            None => {
                det_estimate =
                    baseline_deterministic_step(&det_estimate, &frame, &m, &cfg, &det_weights)?;
                estimate = det_estimate;
                None
            }
        };
        if let Some(w) = &mut trace {
            let d = diagnostics.as_ref();
            w.write_record([
                frames.to_string(),
                format!("{:.1}", frame.timestamp),
                format!("{}", estimate.x),
                format!("{}", estimate.y),
                format!("{}", estimate.theta),
                d.map(|d| format!("{:e}", d.belief_sum_error)).unwrap_or_default(),
                d.map(|d| format!("{:e}", d.min_belief)).unwrap_or_default(),
                d.map(|d| format!("{}", d.posterior_entropy)).unwrap_or_default(),
                d.map(|d| format!("{:e}", d.leakage)).unwrap_or_default(),
                d.map(|d| format!("{}", d.degraded)).unwrap_or_default(),
            ])?;
        }
        if let (Some(dir), Some(state)) = (&a.heatmap_dir, &filter_state) {
            if frames % a.heatmap_every == 0 {
                let path = dir.join(format!("belief_{frames:06}.png"));
                plot::belief_heatmap(&state.belief, &path)?;
            }
        }
        frames += 1;
    }
    if let Some(w) = &mut trace {
        w.flush()?;
    }
    let dt = t0.elapsed().as_secs_f64();
    if frames == 0 {
        bail!("log {} contains no frames", a.log.display());
    }
    println!(
        "localized {} frames with method {} in {:.1} s ({:.1} ms/frame)",
        frames,
        method.name(),
        dt,
        1000.0 * dt / frames as f64
    );
    println!(
        "final pose: ({:.3}, {:.3}, {:.4} rad)",
        estimate.x, estimate.y, estimate.theta
    );
    if let Some(p) = &a.out {
        println!("trace written to {}", p.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let suite_file = if a.suite.is_dir() {
        a.suite.join("suite.toml")
    } else {
        a.suite.clone()
    };
    let text = fs::read_to_string(&suite_file)
        .with_context(|| format!("reading suite config {}", suite_file.display()))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", suite_file.display()))?;
    if let Some(methods) = &a.methods {
        cfg.methods = methods.split(',').map(|s| s.trim().to_string()).collect();
    }
    cfg.validate()?;

    let n_frames_hint = (cfg.scenario.length_m / cfg.scenario.speed_range.0 * 10.0) as usize;
    println!(
        "running suite: {} seeds x {:.0} m (~{} frames each), methods: {}",
        cfg.seeds.len(),
        cfg.scenario.length_m,
        n_frames_hint,
        cfg.methods.join(", ")
    );

    let report = run_experiment(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let json_path = a.out.join("report.json");
    let txt_path = a.out.join("report.txt");
    write_report_files(&report, &json_path, &txt_path)?;

    print!("{}", render_report_text(&report));
    println!("report written to {} and {}", json_path.display(), txt_path.display());

    let gates = check_gates(&report);
    let mut failed = 0usize;
    for g in &gates {
        println!(
            "gate {:<28} {}  ({})",
            g.name,
            if g.passed { "pass" } else { "FAIL" },
            g.detail
        );
        if !g.passed {
            failed += 1;
        }
    }
    if a.check && failed > 0 {
        bail!("{failed} acceptance gate(s) failed");
    }
    Ok(())
}

/// Writes the machine-readable JSON report (deterministic bytes for a given
/// config and seeds) and the human-readable text report (includes timing).
fn write_report_files(report: &RunReport, json_path: &Path, txt_path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    fs::write(json_path, json).with_context(|| format!("writing {}", json_path.display()))?;
    let mut f = fs::File::create(txt_path)
        .with_context(|| format!("writing {}", txt_path.display()))?;
    f.write_all(render_report_text(report).as_bytes())?;
    Ok(())
}

fn bench_correlate(a: BenchArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let random_raster = |rng: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize| {
        let mut r = Raster::zeros(semloc::pose::Point2::new(0.0, 0.0), 0.05, w, h);
        for v in &mut r.values {
            *v = rng.gen::<f64>();
        }
        r
    };

    // Exactness: many small random pairs, worst relative discrepancy.
    println!("exactness: {} random pairs", a.pairs);
    let mut worst = 0.0f64;
    for _ in 0..a.pairs {
        let ow = rng.gen_range(8..48);
        let oh = rng.gen_range(8..48);
        let lat = rng.gen_range(1..16);
        let lon = rng.gen_range(1..16);
        let obs = random_raster(&mut rng, ow, oh);
        let crop = random_raster(&mut rng, ow + lon - 1, oh + lat - 1);
        let s = correlate_spatial(&obs, &crop, lat, lon)?;
        let f = correlate_fft(&obs, &crop, lat, lon)?;
        let scale = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (x, y) in s.values.iter().zip(f.values.iter()) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    println!("  max relative discrepancy: {worst:.3e}");

    // Speed: one dense pair at the requested observation size.
    println!(
        "timing: obs {}x{} cells, {}x{} lags",
        a.obs_h, a.obs_w, a.lat_lags, a.lon_lags
    );
    let obs = random_raster(&mut rng, a.obs_w, a.obs_h);
    let crop = random_raster(&mut rng, a.obs_w + a.lon_lags - 1, a.obs_h + a.lat_lags - 1);
    let t0 = Instant::now();
    let s = correlate_spatial(&obs, &crop, a.lat_lags, a.lon_lags)?;
    let t_spatial = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let f = correlate_fft(&obs, &crop, a.lat_lags, a.lon_lags)?;
    let t_fft = t0.elapsed().as_secs_f64();
    let scale = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let disc = s
        .values
        .iter()
        .zip(f.values.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale));
    println!("  spatial: {t_spatial:.3} s");
    println!("  fft:     {t_fft:.3} s");
    println!("  speedup: {:.1}x, discrepancy {disc:.3e}", t_spatial / t_fft);
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    if a.run.is_none() && a.trace.is_none() {
        bail!("nothing to plot: pass --run and/or --trace");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(run) = &a.run {
        let text = fs::read_to_string(run)
            .with_context(|| format!("reading report {}", run.display()))?;
        let report: RunReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing report {}", run.display()))?;
        let written = plot::report_charts(&report, &a.out)?;
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    if let Some(trace) = &a.trace {
        let est = read_pose_csv(trace)?;
        let truth = match &a.truth {
            Some(p) => Some(read_pose_csv(p)?),
            None => None,
        };
        let written = plot::trajectory_charts(&est, truth.as_deref(), &a.out)?;
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

/// Reads (t, pose) rows from a trace or truth CSV (columns t, x, y, theta).
fn read_pose_csv(path: &Path) -> Result<Vec<(f64, Pose2)>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} lacks column {name:?}", path.display()))
    };
    let (ct, cx, cy, cth) = (col("t")?, col("x")?, col("y")?, col("theta")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .context("short row")?
                .parse::<f64>()
                .context("non-numeric field")
        };
        out.push((get(ct)?, Pose2::new(get(cx)?, get(cy)?, get(cth)?)));
    }
    if out.is_empty() {
        bail!("{} contains no rows", path.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_pose_parses_three_components() {
        let p = parse_init_pose(" 1.5, -2.0 , 0.3 ").unwrap();
        assert_eq!((p.x, p.y, p.theta), (1.5, -2.0, 0.3));
        assert!(parse_init_pose("1,2").is_err());
        assert!(parse_init_pose("a,b,c").is_err());
    }
}
