//! Minimal SVG line charts: axes, linear or log scales, a legend.

use std::fmt::Write;

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

#[derive(Clone, Copy, Debug)]
struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values.filter_map(|v| transform(v, log)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        Self { log, lo, hi }
    }

    /// Position in `[0, 1]` of a transformed value.
    fn unit(&self, t: f64) -> f64 {
        (t - self.lo) / (self.hi - self.lo)
    }

    /// `(transformed position, label)` pairs.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let span = (self.hi - self.lo).round() as i64;
            let step = (span / 8 + 1).max(1);
            let mut out = Vec::new();
            let mut k = self.lo.round() as i64;
            while k as f64 <= self.hi + 1e-9 {
                out.push((k as f64, format!("1e{k}")));
                k += step;
            }
            return out;
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .into_iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let mut v = (self.lo / step).ceil() * step;
        while v <= self.hi + 1e-9 * step {
            out.push((v, format_tick(v, step)));
            v += step;
        }
        out
    }
}

fn transform(v: f64, log: bool) -> Option<f64> {
    if !v.is_finite() {
        return None;
    }
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        Some(v)
    }
}

fn format_tick(v: f64, step: f64) -> String {
    let v = if v.abs() < 1e-9 * step { 0.0 } else { v };
    if step >= 1.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else if (1e-3..1e6).contains(&step) {
        let digits = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.digits$}")
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the panels side by side in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

fn render_panel(out: &mut String, p: &Panel, x0: f64) {
    let pts = || p.series.iter().flat_map(|s| s.points.iter());
    let xa = Axis::fit(pts().map(|q| q.0), p.log_x);
    let ya = Axis::fit(pts().map(|q| q.1), p.log_y);
    let (left, top) = (x0 + MARGIN_L, MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let px = |t: f64| left + xa.unit(t) * w;
    let py = |t: f64| top + (1.0 - ya.unit(t)) * h;

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        left + w / 2.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333"/>"##
    );
    for (t, label) in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            top,
            top + h,
            top + h + 14.0,
            escape(&label)
        );
    }
    for (t, label) in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + w,
            left - 4.0,
            y + 4.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        PANEL_H - 10.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        x0 + 16.0,
        top + h / 2.0,
        escape(&p.y_label)
    );

    for (k, s) in p.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter_map(|&(x, y)| Some((transform(x, p.log_x)?, transform(y, p.log_y)?)))
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if coords.len() == 1 {
            let (cx, cy) = coords[0].split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        } else if !coords.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = top + 14.0 + 14.0 * k as f64;
        let lx = left + w - 130.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 22.0,
            escape(&s.label)
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(log: bool, pts: Vec<(f64, f64)>) -> Panel {
        Panel {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: log,
            log_y: log,
            series: vec![Series { label: "s".into(), points: pts }],
        }
    }

    #[test]
    fn renders_well_formed_document() {
        let svg = render(&[panel(true, vec![(1.0, 10.0), (100.0, 0.01)]), panel(false, vec![(0.0, 1.0), (3.0, 2.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains(">1e-2<") && svg.contains(">1e2<"));
    }

    #[test]
    fn log_axis_drops_non_positive_points() {
        let svg = render(&[panel(true, vec![(1.0, 0.0), (2.0, 1.0)])]);
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan() {
        let svg = render(&[panel(false, vec![(0.0, 5.0), (0.0, 5.0)]), panel(true, vec![])]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
