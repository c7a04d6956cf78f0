//! Hand-written SVG plots of a report.

use std::fmt::Write;

use super::{Arm, ExperimentReport, RoadConfig};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;

/// Maps world coordinates into a square pixel box, y up.
struct Frame {
    min: [f64; 2],
    scale: f64,
    origin: [f64; 2],
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>, origin: [f64; 2], size: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0, -1.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let scale = (size - 2.0 * MARGIN) / span;
        // centre the shorter axis
        let pad = [0.5 * (span - (hi[0] - lo[0])), 0.5 * (span - (hi[1] - lo[1]))];
        Self { min: [lo[0] - pad[0], hi[1] + pad[1]], scale, origin: [origin[0] + MARGIN, origin[1] + MARGIN] }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (self.origin[0] + (p[0] - self.min[0]) * self.scale, self.origin[1] + (self.min[1] - p[1]) * self.scale)
    }

    fn polyline(&self, points: impl Iterator<Item = [f64; 2]>) -> String {
        let mut s = String::new();
        for p in points {
            let (x, y) = self.px(p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }
}

fn colour(vehicle: usize, vehicles: usize, shade: f64) -> String {
    let hue = 360.0 * vehicle as f64 / vehicles.max(1) as f64;
    // shade 0 is lightest, 1 darkest
    format!("hsl({hue:.0},70%,{:.0}%)", 82.0 - 52.0 * shade)
}

fn road_extent(road: &RoadConfig) -> f64 {
    road.arm_length + road.lanes as f64 * road.lane_width
}

/// Road boundaries (solid) and centre lines (dotted).
fn road(frame: &Frame, road: &RoadConfig, reach: f64) -> String {
    let half = road.lanes as f64 * road.lane_width;
    let mut s = String::new();
    let arms = road.kind.arms();
    for arm in Arm::ALL {
        let d = arm.outward();
        let n = [-d[1], d[0]];
        let at = |along: f64, side: f64| [d[0] * along + n[0] * side, d[1] * along + n[1] * side];
        if arms.contains(&arm) {
            for side in [-half, half] {
                let (x1, y1) = frame.px(at(half, side));
                let (x2, y2) = frame.px(at(reach, side));
                let _ = writeln!(s, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="2.5"/>"#);
            }
            let (x1, y1) = frame.px(at(half, 0.0));
            let (x2, y2) = frame.px(at(reach, 0.0));
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="gray" stroke-width="0.8" stroke-dasharray="2 4"/>"#
            );
        } else {
            let (x1, y1) = frame.px(at(half, -half));
            let (x2, y2) = frame.px(at(half, half));
            let _ = writeln!(s, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="2.5"/>"#);
        }
    }
    s
}

fn positions(states: &[nalgebra::DVector<f64>]) -> impl Iterator<Item = [f64; 2]> + '_ {
    states.iter().map(|x| [x[0], x[1]])
}

fn all_points(report: &ExperimentReport) -> Vec<[f64; 2]> {
    let reach = road_extent(&report.road);
    let mut pts = vec![[-reach, -reach], [reach, reach]];
    for iterate in &report.iterates {
        for t in iterate {
            pts.extend(positions(&t.states));
        }
    }
    pts
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Every iterate's paths, darker for later iterations, with references
/// dashed, starts as circles and ends as diamonds.
pub fn trajectory_fan(report: &ExperimentReport) -> String {
    let points = all_points(report);
    let reach = points.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let frame = Frame::fit(points.into_iter(), [0.0, 0.0], SIZE);
    let mut s = open(SIZE, SIZE);
    s += &road(&frame, &report.road, reach);
    let n = report.trajectories.len();
    let last = report.iterates.len().saturating_sub(1).max(1) as f64;
    for (k, iterate) in report.iterates.iter().enumerate() {
        for (i, t) in iterate.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<polyline class="iterate" data-vehicle="{i}" data-iteration="{k}" points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
                frame.polyline(positions(&t.states)),
                colour(i, n, k as f64 / last)
            );
        }
    }
    for (i, r) in report.references.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<polyline class="reference" points="{}" fill="none" stroke="{}" stroke-width="1" stroke-dasharray="6 4"/>"#,
            frame.polyline(positions(r)),
            colour(i, n, 0.5)
        );
    }
    for (i, t) in report.trajectories.iter().enumerate() {
        let c = colour(i, n, 1.0);
        if let (Some(first), Some(end)) = (t.states.first(), t.states.last()) {
            let (x, y) = frame.px([first[0], first[1]]);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{c}"/>"#);
            let (x, y) = frame.px([end[0], end[1]]);
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{c}" transform="rotate(45 {x:.2} {y:.2})"/>"#, x - 4.0, y - 4.0);
        }
    }
    s + "</svg>\n"
}

/// Vehicle footprints at a few time steps, one panel per step.
pub fn snapshots(report: &ExperimentReport) -> String {
    let panel = SIZE * 0.6;
    let horizon = report.trajectories.first().map_or(0, |t| t.inputs.len());
    let steps: Vec<usize> = (0..5).map(|k| k * horizon / 4).collect();
    let mut s = open(panel * steps.len() as f64, panel + 20.0);
    let reach = road_extent(&report.road);
    let n = report.trajectories.len();
    for (col, &tau) in steps.iter().enumerate() {
        let ox = col as f64 * panel;
        let frame = Frame::fit([[-reach, -reach], [reach, reach]].into_iter(), [ox, 0.0], panel);
        let _ = writeln!(s, r#"<g class="snapshot" data-tau="{tau}">"#);
        s += &road(&frame, &report.road, reach);
        for (i, t) in report.trajectories.iter().enumerate() {
            let c = colour(i, n, 0.8);
            let trail = positions(&t.states[..=tau.min(t.states.len() - 1)]);
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="0.8" opacity="0.6"/>"#, frame.polyline(trail));
            let Some(x) = t.states.get(tau) else { continue };
            let (cx, cy) = frame.px([x[0], x[1]]);
            let (l, w) = (report.vehicle_length * frame.scale, report.vehicle_width * frame.scale);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{l:.2}" height="{w:.2}" fill="{c}" transform="rotate({:.2} {cx:.2} {cy:.2})"/>"#,
                cx - l / 2.0,
                cy - w / 2.0,
                -x[2].to_degrees()
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13">τ = {tau}</text></g>"#,
            ox + MARGIN,
            panel + 12.0
        );
    }
    s + "</svg>\n"
}

/// Pairwise distances over time with the safety distance as a gray line.
pub fn distance_plot(report: &ExperimentReport) -> String {
    let (w, h) = (SIZE * 1.25, SIZE * 0.75);
    let (left, bottom) = (56.0, 40.0);
    let steps = report.distances.first().map_or(0, |d| d.distances.len());
    let t_max = (steps as f64 * report.tau_s).max(report.tau_s);
    let d_max = report
        .distances
        .iter()
        .flat_map(|d| d.distances.iter().copied())
        .fold(2.0 * report.d_safe, f64::max)
        .min(20.0 * report.d_safe);
    let x = |t: f64| left + (w - left - MARGIN) * t / t_max;
    let y = |d: f64| MARGIN + (h - bottom - MARGIN) * (1.0 - d.min(d_max) / d_max);
    let mut s = open(w, h);
    let _ = writeln!(
        s,
        r#"<polyline points="{left},{MARGIN} {left},{:.2} {:.2},{:.2}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - MARGIN,
        h - bottom
    );
    for k in 0..=5 {
        let t = t_max * k as f64 / 5.0;
        let d = d_max * k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{t:.1}</text>"#, x(t), h - bottom + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{d:.1}</text>"#, left - 6.0, y(d) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">time [s]</text>"#, 0.5 * (left + w), h - 6.0);
    let _ = writeln!(
        s,
        r#"<line class="d-safe" x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="2"/>"#,
        y(report.d_safe),
        w - MARGIN,
        y(report.d_safe)
    );
    let n = report.distances.len();
    for (k, series) in report.distances.iter().enumerate() {
        let pts: Vec<String> = series
            .distances
            .iter()
            .enumerate()
            .map(|(j, &d)| format!("{:.2},{:.2}", x((j + 1) as f64 * report.tau_s), y(d)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="pair" data-pair="{}-{}" points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            series.pair.0,
            series.pair.1,
            pts.join(" "),
            colour(k, n, 0.7)
        );
    }
    s + "</svg>\n"
}
