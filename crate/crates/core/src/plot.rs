//! Static SVG renderings of traces.

use std::fmt::Write as _;

use crate::camera::{Scenario, CORNERS};
use crate::metrics::pixel_errors;
use crate::trace::Trace;

const COLORS: [&str; CORNERS] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
const W: f64 = 640.0;
const H: f64 = 360.0;

fn polyline(out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str, extra: &str) {
    let mut s = String::new();
    for (x, y) in pts {
        if x.is_finite() && y.is_finite() {
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
    }
    let _ = writeln!(
        out,
        r#"<polyline class="feature" points="{}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>"#,
        s.trim_end()
    );
}

/// Corner trajectories in the image plane. Each corner is one polyline;
/// circles mark the start, crosses the desired position. `overlays` are drawn
/// dashed underneath (typically demonstrations).
pub fn feature_svg(trace: &Trace, scenario: &Scenario, overlays: &[&Trace]) -> String {
    let intr = &scenario.intrinsics;
    let sx = W / intr.width;
    let sy = H / intr.height;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{W}" height="{H}" fill="white" stroke="#444"/>"##
    );
    for demo in overlays {
        for (c, color) in COLORS.iter().enumerate() {
            let pts = demo
                .samples
                .iter()
                .map(|s| (s.pixels[2 * c] * sx, s.pixels[2 * c + 1] * sy));
            let mut tmp = String::new();
            polyline(
                &mut tmp,
                pts,
                color,
                r#" stroke-dasharray="4 3" opacity="0.5""#,
            );
            out.push_str(&tmp.replace("class=\"feature\"", "class=\"overlay\""));
        }
    }
    for (c, color) in COLORS.iter().enumerate() {
        let pts = trace
            .samples
            .iter()
            .map(|s| (s.pixels[2 * c] * sx, s.pixels[2 * c + 1] * sy));
        polyline(&mut out, pts, color, "");
    }
    if let Some(first) = trace.samples.first() {
        for (c, color) in COLORS.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<circle class="start" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                first.pixels[2 * c] * sx,
                first.pixels[2 * c + 1] * sy,
            );
        }
    }
    let goal = scenario.desired_features();
    for (c, color) in COLORS.iter().enumerate() {
        let x = goal.pixels[2 * c] * sx;
        let y = goal.pixels[2 * c + 1] * sy;
        let _ = writeln!(
            out,
            r#"<path class="goal" d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{}" stroke-width="2"/>"#,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0,
            color
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Mean corner pixel error against time, with the tracking threshold drawn
/// as a horizontal line.
pub fn error_svg(trace: &Trace, scenario: &Scenario, threshold_px: f64) -> String {
    let errs = pixel_errors(trace, &scenario.intrinsics);
    let t0 = trace.samples.first().map_or(0.0, |s| s.t);
    let t1 = trace.samples.last().map_or(1.0, |s| s.t).max(t0 + 1e-9);
    let emax = errs.iter().copied().fold(threshold_px * 2.0, f64::max);
    let px = |t: f64| 40.0 + (t - t0) / (t1 - t0) * (W - 60.0);
    let py = |e: f64| H - 30.0 - e / emax * (H - 50.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<line class="threshold" x1="40" y1="{y:.2}" x2="{x2}" y2="{y:.2}" stroke="#888" stroke-dasharray="6 4"/>"##,
        y = py(threshold_px),
        x2 = W - 20.0
    );
    let _ = writeln!(
        out,
        r#"<text x="4" y="16" font-size="12">max {emax:.1} px</text>"#
    );
    polyline(
        &mut out,
        trace
            .samples
            .iter()
            .zip(&errs)
            .map(|(s, e)| (px(s.t), py(*e))),
        "#000000",
        "",
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_episode, ControllerKind, RunConfig};

    #[test]
    fn feature_plot_has_four_polylines_and_markers() {
        let s = Scenario::default().with_duration(0.5);
        let tr = run_episode(&s, &RunConfig::new(ControllerKind::Vs, 2.0), None).unwrap();
        let svg = feature_svg(&tr, &s, &[]);
        assert_eq!(svg.matches("class=\"feature\"").count(), 4);
        assert_eq!(svg.matches("class=\"start\"").count(), 4);
        assert_eq!(svg.matches("class=\"goal\"").count(), 4);
        let with_demo = feature_svg(&tr, &s, &[&tr]);
        assert_eq!(with_demo.matches("class=\"feature\"").count(), 4);
        assert_eq!(with_demo.matches("class=\"overlay\"").count(), 4);
    }

    #[test]
    fn empty_trace_still_renders() {
        let s = Scenario::default();
        let svg = error_svg(&Trace::new(0.01), &s, 5.0);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(
            feature_svg(&Trace::new(0.01), &s, &[])
                .matches("class=\"start\"")
                .count(),
            0
        );
    }
}
