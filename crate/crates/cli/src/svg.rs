//! Minimal SVG line-panel renderer for FoM mosaics and overlays.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Series<'a> {
    pub color: &'a str,
    pub width: f64,
    /// `(x, y)` points; `None` breaks the line.
    pub points: Vec<Option<(f64, f64)>>,
}

pub struct Panel<'a> {
    pub title: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: Vec<Series<'a>>,
    /// Vertical markers: `(x, color, dashed)`.
    pub markers: Vec<(f64, &'a str, bool)>,
}

pub struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" font-family="sans-serif">{}</text>"#,
            escape(s)
        );
    }

    /// Draws `p` in the box with top-left `(x0, y0)` and size `w × h`.
    pub fn panel(&mut self, x0: f64, y0: f64, w: f64, h: f64, p: &Panel) {
        let (top, left) = (y0 + 14.0, x0 + 34.0);
        let (pw, ph) = (w - 40.0, h - 30.0);
        let (xa, xb) = p.x_range;
        let (ya, yb) = p.y_range;
        let sx = |x: f64| {
            left + if xb > xa {
                (x - xa) / (xb - xa) * pw
            } else {
                0.0
            }
        };
        let sy = |y: f64| {
            top + ph
                - if yb > ya {
                    (y.clamp(ya, yb) - ya) / (yb - ya) * ph
                } else {
                    0.0
                }
        };
        self.text(x0 + 4.0, y0 + 10.0, 10.0, &p.title);
        let _ = writeln!(
            self.body,
            r##"<rect x="{left:.1}" y="{top:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888" stroke-width="0.5"/>"##
        );
        for (v, anchor) in [(ya, top + ph), (yb, top + 8.0)] {
            self.text(x0 + 2.0, anchor, 8.0, &tick(v));
        }
        self.text(left, top + ph + 10.0, 8.0, &tick(xa));
        self.text(left + pw - 16.0, top + ph + 10.0, 8.0, &tick(xb));
        for &(x, color, dashed) in &p.markers {
            let dash = if dashed {
                r#" stroke-dasharray="3,2""#
            } else {
                ""
            };
            let _ = writeln!(
                self.body,
                r#"<line x1="{0:.1}" y1="{top:.1}" x2="{0:.1}" y2="{1:.1}" stroke="{color}" stroke-width="0.7"{dash}/>"#,
                sx(x),
                top + ph
            );
        }
        for s in &p.series {
            for run in s.points.split(Option::is_none) {
                if run.is_empty() {
                    continue;
                }
                let mut pts = String::new();
                for (x, y) in run.iter().flatten() {
                    let _ = write!(pts, "{:.1},{:.1} ", sx(*x), sy(*y));
                }
                let _ = writeln!(
                    self.body,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
                    pts.trim_end(),
                    s.color,
                    s.width
                );
            }
        }
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
