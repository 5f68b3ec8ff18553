//! Scatter-plus-fit figure of median improvement against DoF, one panel per
//! (task, budget). Uses only `rect`, `line` and `text` elements.

use std::fmt::Write as _;

use crate::table::Panel;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const MARKER: f64 = 8.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.08 * span } else { lo.abs().max(1.0) * 0.5 };
    (lo - pad, hi + pad)
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 20.0 {
        format!("{v:.0}")
    } else if span >= 2.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64) {
    let fit = &panel.fit;
    let xs: Vec<f64> = panel.points.iter().map(|p| p.dof as f64).collect();
    let (x_min, x_max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let line_at = |x: f64| fit.intercept + fit.slope * x;
    let ys = panel
        .points
        .iter()
        .map(|p| p.median_pct)
        .chain([line_at(x_min), line_at(x_max)]);
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (x0, x1) = padded(x_min, x_max);
    let (y0, y1) = padded(y_lo, y_hi);

    let left = ox + MARGIN_L;
    let right = ox + PANEL_W - MARGIN_R;
    let top = MARGIN_T;
    let bottom = PANEL_H - MARGIN_B;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let w = |out: &mut String, s: String| out.push_str(&s);
    w(out, format!(
        "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>\n",
        right - left,
        bottom - top
    ));
    w(out, format!(
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{} task, |D| = {}</text>\n",
        (left + right) / 2.0,
        escape(panel.task.name()),
        panel.budget
    ));

    for x in &xs {
        let px = sx(*x);
        w(out, format!(
            "<line x1=\"{px:.2}\" y1=\"{bottom:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\n",
            bottom + 4.0
        ));
        w(out, format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{x}</text>\n",
            bottom + 16.0
        ));
    }
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let py = sy(y);
        w(out, format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{left:.2}\" y2=\"{py:.2}\" stroke=\"#444\"/>\n",
            left - 4.0
        ));
        w(out, format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            left - 6.0,
            py + 4.0,
            tick_label(y, y1 - y0)
        ));
    }
    if y0 < 0.0 && y1 > 0.0 {
        let pz = sy(0.0);
        w(out, format!(
            "<line x1=\"{left:.2}\" y1=\"{pz:.2}\" x2=\"{right:.2}\" y2=\"{pz:.2}\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n"
        ));
    }
    w(out, format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">DoF</text>\n",
        (left + right) / 2.0,
        PANEL_H - 12.0
    ));
    w(out, format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 {:.2} {:.2})\">median improvement (%)</text>\n",
        ox + 16.0,
        (top + bottom) / 2.0,
        ox + 16.0,
        (top + bottom) / 2.0
    ));

    w(out, format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#c33\" stroke-width=\"2\"/>\n",
        sx(x_min),
        sy(line_at(x_min)),
        sx(x_max),
        sy(line_at(x_max))
    ));
    for p in &panel.points {
        w(out, format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{MARKER}\" height=\"{MARKER}\" fill=\"#236\"/>\n",
            sx(p.dof as f64) - MARKER / 2.0,
            sy(p.median_pct) - MARKER / 2.0
        ));
    }
    w(out, format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">R2={:.3}  slope={:.3}  n={}</text>\n",
        left + 8.0,
        top + 16.0,
        fit.r_squared,
        fit.slope,
        fit.n_points
    ));
}

/// A standalone SVG document with one panel per entry, left to right.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PANEL_H}\" viewBox=\"0 0 {width} {PANEL_H}\" font-family=\"sans-serif\">"
    )
    .unwrap();
    writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{PANEL_H}\" fill=\"white\"/>").unwrap();
    for (k, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, k as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::GroupPoint;
    use selfmodel_core::env::TaskKind;
    use selfmodel_core::harness::fit_r_squared;

    #[test]
    fn six_points_one_line_and_annotation() {
        let dofs = [2usize, 4, 6, 8, 12, 16];
        let points: Vec<GroupPoint> = dofs
            .iter()
            .map(|d| GroupPoint {
                preset: format!("p{d}"),
                dof: *d,
                median_pct: 3.0 * *d as f64 + if d % 4 == 0 { 5.0 } else { -5.0 },
                n: 5,
            })
            .collect();
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.dof as f64, p.median_pct)).collect();
        let fit = fit_r_squared(&xy).unwrap();
        let panel = Panel {
            task: TaskKind::Walk,
            budget: 1000,
            points,
            fit,
        };
        let svg = render(&[panel]);
        assert_eq!(svg.matches("fill=\"#236\"").count(), 6);
        assert_eq!(svg.matches("stroke=\"#c33\"").count(), 1);
        assert!(svg.contains(&format!("R2={:.3}", fit.r_squared)));
        for tag in svg.split('<').skip(1) {
            let name: String = tag.chars().take_while(|c| c.is_ascii_alphabetic() || *c == '/').collect();
            assert!(
                ["svg", "/svg", "rect", "line", "text", "/text"].contains(&name.as_str()),
                "unexpected element {name}"
            );
        }
    }
}
