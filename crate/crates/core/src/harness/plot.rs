use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{read_csv, SummaryRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Summary files in `dir` and its immediate subdirectories, labelled by directory name.
pub fn find_summaries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    let own = dir.join("summary.csv");
    if own.is_file() {
        let label = dir.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
        found.push((label, own));
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    for sub in subdirs {
        let file = sub.join("summary.csv");
        if file.is_file() {
            found.push((sub.file_name().unwrap_or_default().to_string_lossy().into_owned(), file));
        }
    }
    Ok(found)
}

/// Mean ± std moving-average curves as a standalone SVG document.
pub fn render_svg(series: &[(String, Vec<SummaryRow>)]) -> Result<String> {
    let points = series.iter().flat_map(|(_, rows)| rows.iter());
    let (mut x_max, mut y_min, mut y_max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for r in points {
        x_max = x_max.max(r.timestep as f64);
        y_min = y_min.min(r.mean_moving_average - r.std_moving_average);
        y_max = y_max.max(r.mean_moving_average + r.std_moving_average);
    }
    if !y_min.is_finite() {
        return Err(Error::InvalidConfig("nothing to plot".into()));
    }
    if y_max - y_min < 1e-12 {
        y_max += 0.5;
        y_min -= 0.5;
    }
    let x_max = x_max.max(1.0);
    let sx = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (sx(0.0), sy(y_min), sx(x_max), sy(y_max));
    let _ = writeln!(svg, r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">timesteps (0 to {x_max})</text>"#, (x0 + x1) / 2.0, HEIGHT - 20.0);
    let _ = writeln!(svg, r#"<text x="{x0:.1}" y="{:.1}">{y_max:.3}</text><text x="{x0:.1}" y="{:.1}">{y_min:.3}</text>"#, y1 - 6.0, y0 + 16.0);
    for (k, (label, rows)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", sx(r.timestep as f64), sy(r.mean_moving_average + r.std_moving_average))).collect();
        let lower: Vec<String> = rows.iter().rev().map(|r| format!("{:.1},{:.1}", sx(r.timestep as f64), sy(r.mean_moving_average - r.std_moving_average))).collect();
        let _ = writeln!(svg, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let mean: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", sx(r.timestep as f64), sy(r.mean_moving_average))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, mean.join(" "));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{label}</text>"#, x1 - 120.0, y1 + 16.0 * (k as f64 + 1.0));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `plot.svg` into `dir` from every summary found there. Returns its path.
pub fn plot_dir(dir: &Path) -> Result<PathBuf> {
    let found = find_summaries(dir)?;
    if found.is_empty() {
        return Err(Error::InvalidConfig(format!("no summary.csv under {}", dir.display())));
    }
    let series = found.into_iter().map(|(label, path)| Ok((label, read_csv(&path)?))).collect::<Result<Vec<_>>>()?;
    let out = dir.join("plot.svg");
    std::fs::write(&out, render_svg(&series)?)?;
    Ok(out)
}
