//! Overhead SVG plots of a scene with an executed path or a planned
//! trajectory.

use std::fmt::Write as _;

use hsi_core::geom::OrientedBox;
use hsi_core::scheduler::TraceRow;
use hsi_core::{Scene, Trajectory, Vec2};

const PX_PER_M: f64 = 50.0;
const MARGIN: f64 = 20.0;

struct Canvas {
    min: Vec2,
    max: Vec2,
    body: String,
}

impl Canvas {
    fn new(scene: &Scene) -> Self {
        let b = scene.bounds();
        Self {
            min: b.min(),
            max: b.max(),
            body: String::new(),
        }
    }

    /// Scene meters to SVG pixels, y up.
    fn px(&self, p: Vec2) -> (f64, f64) {
        (
            MARGIN + (p.x - self.min.x) * PX_PER_M,
            MARGIN + (self.max.y - p.y) * PX_PER_M,
        )
    }

    fn polygon(&mut self, corners: &[Vec2], fill: &str, stroke: &str) {
        let pts: Vec<String> = corners
            .iter()
            .map(|&c| {
                let (x, y) = self.px(c);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{fill}" stroke="{stroke}" stroke-width="1"/>"#,
            pts.join(" ")
        );
    }

    fn footprint(&mut self, b: &OrientedBox, fill: &str, stroke: &str) {
        // bottom corners in winding order
        let v = b.vertices();
        let corners: Vec<Vec2> = [0, 1, 3, 2].iter().map(|&i| v[i].xy()).collect();
        self.polygon(&corners, fill, stroke);
    }

    fn polyline(&mut self, points: impl Iterator<Item = Vec2>, stroke: &str, dash: bool) {
        let pts: Vec<String> = points
            .map(|p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let dash = if dash {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
    }

    fn marker(&mut self, p: Vec2, fill: &str, label: Option<&str>) {
        let (x, y) = self.px(p);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{fill}"/>"#
        );
        if let Some(l) = label {
            let l = escape(l);
            let _ = writeln!(
                self.body,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" font-family="sans-serif">{l}</text>"#,
                x + 6.0,
                y - 6.0
            );
        }
    }

    fn finish(self) -> String {
        let w = 2.0 * MARGIN + (self.max.x - self.min.x) * PX_PER_M;
        let h = 2.0 * MARGIN + (self.max.y - self.min.y) * PX_PER_M;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
             <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{:.0}\" height=\"{:.0}\" fill=\"#fafafa\" stroke=\"#999\"/>\n{}</svg>\n",
            w - 2.0 * MARGIN,
            h - 2.0 * MARGIN,
            self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn draw_scene(c: &mut Canvas, scene: &Scene) {
    for o in scene.obstacles() {
        c.footprint(o, "#555", "#333");
    }
    for o in scene.objects() {
        c.footprint(&o.bbox, "#cfe3f7", "#3a78b5");
        c.marker(o.center_xy(), "#3a78b5", Some(&o.id));
    }
}

/// Executed root path with a marker at every action transition.
pub fn trace_svg(scene: &Scene, rows: &[TraceRow], transitions: &[usize]) -> String {
    let mut c = Canvas::new(scene);
    draw_scene(&mut c, scene);
    c.polyline(rows.iter().map(|r| Vec2::new(r.x, r.y)), "#d2691e", false);
    if let Some(first) = rows.first() {
        c.marker(Vec2::new(first.x, first.y), "#2e8b57", Some("start"));
    }
    for (n, &i) in transitions.iter().enumerate() {
        if let Some(r) = rows.get(i) {
            c.marker(Vec2::new(r.x, r.y), "#b22222", Some(&format!("{}", n + 1)));
        }
    }
    c.finish()
}

/// Planned trajectory from start to end.
pub fn trajectory_svg(scene: &Scene, trajectory: &Trajectory) -> String {
    let mut c = Canvas::new(scene);
    draw_scene(&mut c, scene);
    c.polyline(trajectory.points().iter().copied(), "#d2691e", true);
    c.marker(trajectory.start(), "#2e8b57", Some("start"));
    c.marker(trajectory.end(), "#b22222", Some("end"));
    c.finish()
}
