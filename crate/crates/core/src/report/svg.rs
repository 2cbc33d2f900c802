//! Static SVG renderings of the forest plot and the borrowing heatmap.

use std::fmt::Write;

use super::{sig6, ForestRow, HeatmapMatrix};
use crate::data::Endpoint;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Posterior effect means with 95% intervals, one row per method, and the
/// EHSS in a right-hand column.
pub fn forest(rows: &[ForestRow], endpoint: Endpoint) -> String {
    let (left, plot_w, right, row_h, top) = (130.0, 360.0, 90.0, 26.0, 40.0);
    let width = left + plot_w + right;
    let height = top + row_h * rows.len() as f64 + 50.0;
    let mut lo = rows.iter().map(|r| r.ci_low).fold(0.0, f64::min);
    let mut hi = rows.iter().map(|r| r.ci_high).fold(0.0, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-9);
    lo -= pad;
    hi += pad;
    let x = |v: f64| left + (v - lo) / (hi - lo) * plot_w;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" {FONT} text-anchor=\"middle\">Treatment effect (posterior mean, 95% CrI)</text>",
        left + plot_w / 2.0
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" {FONT}>EHSS</text>", left + plot_w + 20.0);
    let zero = x(0.0);
    let bottom = top + row_h * rows.len() as f64;
    let _ = writeln!(
        s,
        "<line x1=\"{zero}\" y1=\"{}\" x2=\"{zero}\" y2=\"{bottom}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        top - 8.0
    );
    for (i, r) in rows.iter().enumerate() {
        let y = top + row_h * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>",
            left - 10.0,
            y + 4.0,
            escape(r.method.display_name())
        );
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\" stroke-width=\"1.5\"/>",
            x(r.ci_low),
            x(r.ci_high)
        );
        let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"black\"/>", x(r.effect_mean));
        let ehss = r.ehss.map_or_else(|| "-".to_string(), |e| format!("{e:.1}"));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT}>{ehss}</text>", left + plot_w + 20.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{}\" y2=\"{bottom}\" stroke=\"black\"/>",
        left + plot_w
    );
    for t in ticks(lo, hi) {
        let _ = writeln!(
            s,
            "<line x1=\"{0}\" y1=\"{bottom}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/><text x=\"{0}\" y=\"{2}\" {FONT} text-anchor=\"middle\">{3}</text>",
            x(t),
            bottom + 5.0,
            bottom + 18.0,
            sig6(t)
        );
    }
    let unit = match endpoint {
        Endpoint::Binary => "difference in response probability",
        Endpoint::Continuous => "difference in mean change",
    };
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{unit}</text>",
        left + plot_w / 2.0,
        bottom + 38.0
    );
    s.push_str("</svg>\n");
    s
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

/// White-to-blue ramp on [0, 1].
fn ramp(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 69.0), lerp(255.0, 148.0))
}

/// Methods by sources grid with the value printed in each cell, and the
/// per-method legend underneath.
pub fn heatmap(h: &HeatmapMatrix) -> String {
    let (left, top, cell_w, cell_h) = (80.0, 40.0, 56.0, 30.0);
    let width = left + cell_w * h.sources.len() as f64 + 40.0;
    let legend_top = top + cell_h * h.methods.len() as f64 + 20.0;
    let height = legend_top + 18.0 * h.methods.len() as f64 + 20.0;
    let width = width.max(560.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for (j, src) in h.sources.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>",
            left + cell_w * (j as f64 + 0.5),
            top - 10.0,
            escape(src)
        );
    }
    for (i, m) in h.methods.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>",
            left - 8.0,
            y + cell_h / 2.0 + 4.0,
            escape(m.display_name())
        );
        for (j, &v) in h.values[i].iter().enumerate() {
            let xx = left + cell_w * j as f64;
            let ink = if v > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<rect x=\"{xx}\" y=\"{y}\" width=\"{cell_w}\" height=\"{cell_h}\" fill=\"{}\" stroke=\"white\"/><text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\" fill=\"{ink}\">{v:.2}</text>",
                ramp(v),
                xx + cell_w / 2.0,
                y + cell_h / 2.0 + 4.0
            );
        }
    }
    for (i, (m, sem)) in h.methods.iter().zip(&h.semantics).enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"10\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}: {}</text>",
            legend_top + 18.0 * i as f64,
            escape(m.display_name()),
            escape(sem)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = ticks(-0.1, 0.7);
        assert!(t.contains(&0.0));
        assert!(t.iter().all(|&v| (-0.1..=0.7 + 1e-12).contains(&v)));
        assert!(t.len() >= 3);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#ffffff");
        assert_eq!(ramp(1.0), "#084594");
    }
}
