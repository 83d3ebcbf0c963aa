//! Static chart rendering on plain RGB images: per-method bar charts from
//! an evaluation report, trajectory overlays, signed error curves, and
//! belief heatmaps. Charts carry no rasterized text; each image gets a
//! sidecar `.legend.txt` naming its series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use semloc::filter::BeliefGrid;
use semloc::pose::Pose2;
use semloc::RunReport;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Distinguishable series colors, reused cyclically.
const PALETTE: [Rgb<u8>; 8] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
];

fn blank(w: u32, h: u32) -> RgbImage {
    RgbImage::from_pixel(w, h, BG)
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0..=y1.min(img.height() - 1) {
        for x in x0..=x1.min(img.width() - 1) {
            img.put_pixel(x, y, c);
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    // Bresenham over all octants.
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One horizontal-bar chart: a bar per (label, value), values ≥ 0,
/// linear scale from 0 to the max. Returns the legend text.
fn bar_chart(path: &Path, rows: &[(String, f64)]) -> Result<String> {
    let (w, h) = (640u32, (60 + rows.len() * 36) as u32);
    let mut img = blank(w, h);
    let max = rows.iter().map(|r| r.1).fold(0.0f64, f64::max).max(1e-300);
    let (left, right, top) = (20u32, 20u32, 20u32);
    let span = (w - left - right) as f64;
    // Vertical grid lines at quarters.
    for q in 0..=4 {
        let x = left + (span * q as f64 / 4.0) as u32;
        draw_line(&mut img, x as i64, top as i64, x as i64, (h - 20) as i64, GRID);
    }
    let mut legend = String::new();
    for (i, (label, value)) in rows.iter().enumerate() {
        let y0 = top + (i as u32) * 36 + 6;
        let len = (span * (value / max)).round().max(1.0) as u32;
        let color = PALETTE[i % PALETTE.len()];
        fill_rect(&mut img, left, y0, left + len, y0 + 22, color);
        let _ = writeln!(
            legend,
            "bar {} (rgb {},{},{}): {} = {:.6}",
            i + 1,
            color[0],
            color[1],
            color[2],
            label,
            value
        );
    }
    draw_line(&mut img, left as i64, top as i64, left as i64, (h - 20) as i64, AXIS);
    draw_line(
        &mut img,
        left as i64,
        (h - 20) as i64,
        (w - right) as i64,
        (h - 20) as i64,
        AXIS,
    );
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(legend)
}

/// Bar charts for the headline per-method metrics of a report. Returns the
/// paths written.
pub fn report_charts(report: &RunReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let metrics: [(&str, Box<dyn Fn(&semloc::eval::MethodReport) -> f64>); 6] = [
        ("lateral_median_m", Box::new(|m| m.pooled_lateral.median)),
        ("lateral_p95_m", Box::new(|m| m.pooled_lateral.p95)),
        ("longitudinal_median_m", Box::new(|m| m.pooled_longitudinal.median)),
        ("longitudinal_p95_m", Box::new(|m| m.pooled_longitudinal.p95)),
        ("smoothness_max", Box::new(|m| m.pooled_smoothness.max)),
        ("failure_rate", Box::new(|m| m.failure_rate)),
    ];
    let mut legend = String::new();
    for (name, get) in &metrics {
        let rows: Vec<(String, f64)> = report
            .methods
            .iter()
            .map(|m| (m.method.clone(), get(m)))
            .collect();
        let path = out.join(format!("{name}.png"));
        let chart_legend = bar_chart(&path, &rows)?;
        let _ = writeln!(legend, "{name}.png:\n{chart_legend}");
        written.push(path);
    }
    let legend_path = out.join("charts.legend.txt");
    fs::write(&legend_path, legend)?;
    written.push(legend_path);
    Ok(written)
}

/// Trajectory overlay (and, when ground truth is given, signed error
/// curves). Estimate in red, truth in green. Returns the paths written.
pub fn trajectory_charts(
    est: &[(f64, Pose2)],
    truth: Option<&[(f64, Pose2)]>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    // Overlay with equal-aspect autoscale over all drawn points.
    let (w, h) = (800u32, 800u32);
    let mut img = blank(w, h);
    let mut pts: Vec<(f64, f64)> = est.iter().map(|(_, p)| (p.x, p.y)).collect();
    if let Some(t) = truth {
        pts.extend(t.iter().map(|(_, p)| (p.x, p.y)));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let margin = 30.0;
    let scale = ((w as f64 - 2.0 * margin) / (x1 - x0).max(1e-9))
        .min((h as f64 - 2.0 * margin) / (y1 - y0).max(1e-9));
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        (
            (margin + (x - x0) * scale) as i64,
            // Image y grows downward; map y grows upward.
            (h as f64 - margin - (y - y0) * scale) as i64,
        )
    };
    let draw_poly = |img: &mut RgbImage, series: &[(f64, Pose2)], c: Rgb<u8>| {
        for pair in series.windows(2) {
            let (ax, ay) = to_px(pair[0].1.x, pair[0].1.y);
            let (bx, by) = to_px(pair[1].1.x, pair[1].1.y);
            draw_line(img, ax, ay, bx, by, c);
        }
    };
    if let Some(t) = truth {
        draw_poly(&mut img, t, Rgb([44, 160, 44]));
    }
    draw_poly(&mut img, est, Rgb([214, 39, 40]));
    let traj_path = out.join("trajectory.png");
    img.save(&traj_path)
        .with_context(|| format!("writing {}", traj_path.display()))?;
    fs::write(
        out.join("trajectory.legend.txt"),
        "red: estimated trajectory\ngreen: ground truth\n",
    )?;
    written.push(traj_path);

    if let Some(t) = truth {
        let n = est.len().min(t.len());
        let samples: Vec<(f64, f64, f64)> = (0..n)
            .map(|i| {
                let s = semloc::eval::decompose_error(&est[i].1, &t[i].1);
                (est[i].0, s.signed_lateral_m, s.signed_longitudinal_m)
            })
            .collect();
        let (w, h) = (800u32, 400u32);
        let mut img = blank(w, h);
        let max_abs = samples
            .iter()
            .flat_map(|s| [s.1.abs(), s.2.abs()])
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let mid = h as f64 / 2.0;
        let sy = (h as f64 / 2.0 - 20.0) / max_abs;
        let sx = (w as f64 - 40.0) / (n.max(2) - 1) as f64;
        draw_line(&mut img, 20, mid as i64, (w - 20) as i64, mid as i64, AXIS);
        let series: [(Rgb<u8>, fn(&(f64, f64, f64)) -> f64); 2] = [
            (Rgb([31, 119, 180]), |s| s.1),
            (Rgb([255, 127, 14]), |s| s.2),
        ];
        for (color, pick) in series {
            for (i, pair) in samples.windows(2).enumerate() {
                let ax = 20.0 + i as f64 * sx;
                let bx = 20.0 + (i + 1) as f64 * sx;
                draw_line(
                    &mut img,
                    ax as i64,
                    (mid - pick(&pair[0]) * sy) as i64,
                    bx as i64,
                    (mid - pick(&pair[1]) * sy) as i64,
                    color,
                );
            }
        }
        let err_path = out.join("errors.png");
        img.save(&err_path)
            .with_context(|| format!("writing {}", err_path.display()))?;
        fs::write(
            out.join("errors.legend.txt"),
            format!(
                "blue: signed lateral error\norange: signed longitudinal error\nfull scale: +/- {max_abs:.3} m\n"
            ),
        )?;
        written.push(err_path);
    }
    Ok(written)
}

/// Renders the belief collapsed over heading (max across the theta slices)
/// as an upscaled heat map: dark blue = no mass, red = the peak.
pub fn belief_heatmap(belief: &BeliefGrid, path: &Path) -> Result<()> {
    let g = &belief.grid;
    let mut collapsed = vec![0.0f64; g.n_lat * g.n_lon];
    for k in 0..g.n_theta {
        for i in 0..g.n_lat {
            for j in 0..g.n_lon {
                let v = belief.values[g.index(i, j, k)];
                let slot = i * g.n_lon + j;
                if v > collapsed[slot] {
                    collapsed[slot] = v;
                }
            }
        }
    }
    let peak = collapsed.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let scale = 6u32;
    let mut img = RgbImage::new(g.n_lon as u32 * scale, g.n_lat as u32 * scale);
    for i in 0..g.n_lat {
        for j in 0..g.n_lon {
            let t = (collapsed[i * g.n_lon + j] / peak).clamp(0.0, 1.0);
            let c = heat_color(t);
            // Lateral offsets grow upward in the vehicle frame; image rows
            // grow downward.
            let row0 = (g.n_lat - 1 - i) as u32 * scale;
            let col0 = j as u32 * scale;
            fill_rect(&mut img, col0, row0, col0 + scale - 1, row0 + scale - 1, c);
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Blue → cyan → yellow → red ramp on t in [0, 1].
fn heat_color(t: f64) -> Rgb<u8> {
    let stops: [(f64, [f64; 3]); 4] = [
        (0.0, [15.0, 25.0, 80.0]),
        (0.33, [0.0, 160.0, 190.0]),
        (0.66, [235.0, 220.0, 50.0]),
        (1.0, [200.0, 30.0, 30.0]),
    ];
    let mut c = stops[stops.len() - 1].1;
    for w in stops.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            c = [
                c0[0] + f * (c1[0] - c0[0]),
                c0[1] + f * (c1[1] - c0[1]),
                c0[2] + f * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    Rgb([c[0] as u8, c[1] as u8, c[2] as u8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_color_endpoints_are_blue_and_red() {
        let lo = heat_color(0.0);
        let hi = heat_color(1.0);
        assert!(lo[2] > lo[0], "low end should be blueish, got {lo:?}");
        assert!(hi[0] > hi[2], "high end should be reddish, got {hi:?}");
    }

    #[test]
    fn bar_chart_writes_a_png_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.png");
        let legend = bar_chart(
            &path,
            &[("full".into(), 0.02), ("gps".into(), 0.5), ("dynamics".into(), 2.4)],
        )
        .unwrap();
        assert!(path.exists());
        assert!(legend.contains("dynamics = 2.4"));
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.width(), 640);
    }
}
