//! SVG rendering of instances, solutions and dissection grids.

use std::fmt::Write;

use cvrp_qptas::instance::PerturbedInstance;
use cvrp_qptas::{Dissection, InstanceF64, Solution};

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 24.0;

/// Maps original coordinates onto the canvas, y pointing up.
struct View {
    min: [f64; 2],
    scale: f64,
    width: f64,
    height: f64,
}

impl View {
    fn new(inst: &InstanceF64) -> Self {
        let all = || inst.points.iter().chain(std::iter::once(&inst.depot));
        let lo = |a: usize| all().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = |a: usize| all().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        let min = [lo(0), lo(1)];
        let span = (hi(0) - min[0]).max(hi(1) - min[1]);
        let scale = if span > 0.0 {
            (CANVAS - 2.0 * MARGIN) / span
        } else {
            1.0
        };
        let width = (hi(0) - min[0]) * scale + 2.0 * MARGIN;
        let height = (hi(1) - min[1]) * scale + 2.0 * MARGIN;
        View {
            min,
            scale,
            width,
            height,
        }
    }

    fn at(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            self.height - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }
}

/// Distinct hue per tour index (golden-angle spacing).
pub fn tour_color(i: usize) -> String {
    format!("hsl({:.1},70%,42%)", (i as f64 * 137.508) % 360.0)
}

/// Renders the depot, the customers, the tours of `sol` (if any) and,
/// optionally, the lines of a dissection mapped back to original units.
pub fn plot(
    inst: &InstanceF64,
    sol: Option<&Solution>,
    overlay: Option<(&PerturbedInstance, &Dissection)>,
) -> String {
    let v = View::new(inst);
    let (w, h) = (v.width, v.height);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some((p, d)) = overlay {
        let _ = writeln!(s, r##"<g class="dissection" stroke="#9aa" fill="none">"##);
        let lines = d.root_side as i64;
        for k in 0..=lines {
            let Some(level) = d.line_level_index(k) else {
                continue;
            };
            let width = (1.6 - 0.3 * level as f64).max(0.3);
            let c = k as f64;
            for (a, b) in [
                (
                    [d.origin[0] + c, d.origin[1]],
                    [d.origin[0] + c, d.origin[1] + lines as f64],
                ),
                (
                    [d.origin[0], d.origin[1] + c],
                    [d.origin[0] + lines as f64, d.origin[1] + c],
                ),
            ] {
                let (x1, y1) = v.at(p.to_original(a));
                let (x2, y2) = v.at(p.to_original(b));
                let _ = writeln!(
                    s,
                    r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke-width="{width:.2}" data-level="{level}"/>"#
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    if let Some(sol) = sol {
        for (i, t) in sol.tours.iter().enumerate() {
            let pts: Vec<String> = std::iter::once(inst.depot)
                .chain(t.customers.iter().map(|&c| inst.points[c]))
                .chain(std::iter::once(inst.depot))
                .map(|p| {
                    let (x, y) = v.at(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="tour" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                pts.join(" "),
                tour_color(i)
            );
        }
    }

    for (i, &p) in inst.points.iter().enumerate() {
        let (x, y) = v.at(p);
        let _ = writeln!(
            s,
            r#"<circle class="customer" cx="{x:.2}" cy="{y:.2}" r="3.5" fill="black"><title>{i}</title></circle>"#
        );
    }
    let (x, y) = v.at(inst.depot);
    let _ = writeln!(
        s,
        r#"<rect class="depot" x="{:.2}" y="{:.2}" width="10" height="10" fill="crimson"/>"#,
        x - 5.0,
        y - 5.0
    );
    s.push_str("</svg>\n");
    s
}
