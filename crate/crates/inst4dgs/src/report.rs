//! `metrics.json`, `metrics.csv` and SVG plots from a metrics bundle.

use std::fmt::Write as _;
use std::path::Path;

use inst4dgs_core::metrics::{Metric, MetricsBundle, SceneMetrics, METRICS_VERSION};

use crate::error::{Error, Result};
use crate::files;

pub const CSV_HEADER: &str =
    "scene,miou_instance,macc,miou_dynamic,psnr,ssim,traj_rmse,perm_accuracy";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn cell(m: Metric) -> String {
    m.display()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn metrics_csv(bundle: &MetricsBundle) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &bundle.scenes {
        let row = [
            s.miou_instance,
            s.macc,
            s.miou_dynamic,
            s.psnr,
            s.ssim,
            s.traj_rmse,
            s.perm_accuracy,
        ]
        .map(cell)
        .join(",");
        writeln!(out, "{},{row}", csv_escape(&s.scene)).expect("string write");
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Series<'a> {
    name: &'a str,
    points: Vec<(f64, f64)>,
}

fn thin(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points;
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let last = *points.last().expect("non-empty");
    let mut out: Vec<_> = points.into_iter().step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Self-contained line chart; `log_y` plots `log10(y)`.
fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    log_y: bool,
) -> String {
    let tf = |y: f64| if log_y { y.max(1e-12).log10() } else { y };
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (x, tf(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    if let Some(&(x, y)) = finite.first() {
        (x0, x1, y0, y1) = (x, x, y, y);
        for &(x, y) in &finite {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
    }
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        xml_escape(x_label)
    )
    .expect("string write");
    let y_text = if log_y {
        format!("log10 {y_label}")
    } else {
        y_label.to_string()
    };
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(&y_text)
    )
    .expect("string write");
    for (v, x, y, anchor) in [
        (x0, px(x0), HEIGHT - MARGIN + 16.0, "start"),
        (x1, px(x1), HEIGHT - MARGIN + 16.0, "end"),
    ] {
        writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{v:.6}</text>"#
        )
        .expect("string write");
    }
    for (v, y) in [(y0, py(y0)), (y1, py(y1) + 10.0)] {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{v:.6}</text>"#,
            MARGIN - 4.0
        )
        .expect("string write");
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| (x, tf(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )
            .expect("string write");
        }
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            xml_escape(s.name)
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn loss_svg(bundle: &MetricsBundle) -> String {
    let series: Vec<Series<'_>> = bundle
        .scenes
        .iter()
        .map(|s: &SceneMetrics| Series {
            name: &s.scene,
            points: thin(s.loss_history.iter().map(|&(x, y)| (x as f64, y)).collect()),
        })
        .collect();
    line_plot("Training loss", "step", "loss", &series, true)
}

pub fn traj_error_svg(bundle: &MetricsBundle) -> String {
    let series: Vec<Series<'_>> = bundle
        .scenes
        .iter()
        .map(|s| Series {
            name: &s.scene,
            points: s
                .traj_error_per_timestep
                .iter()
                .enumerate()
                .map(|(t, &e)| (t as f64, e))
                .collect(),
        })
        .collect();
    line_plot("Trajectory error", "timestep", "RMSE", &series, false)
}

pub fn read_bundle(path: &Path) -> Result<MetricsBundle> {
    let b: MetricsBundle = files::read_json(path)?;
    if b.version != METRICS_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: b.version,
            expected: METRICS_VERSION,
        });
    }
    Ok(b)
}

pub fn write_bundle(path: &Path, bundle: &MetricsBundle) -> Result<()> {
    files::write_json(path, bundle)
}

/// Writes all report files into `dir`.
pub fn emit_report(bundle: &MetricsBundle, dir: &Path) -> Result<()> {
    write_bundle(&dir.join("metrics.json"), bundle)?;
    files::write(&dir.join("metrics.csv"), metrics_csv(bundle).as_bytes())?;
    files::write(&dir.join("loss.svg"), loss_svg(bundle).as_bytes())?;
    files::write(
        &dir.join("traj_error.svg"),
        traj_error_svg(bundle).as_bytes(),
    )
}
