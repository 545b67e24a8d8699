//! Small static-SVG emitter for training curves, path overlays, and
//! metric bars. No timestamps or external resources: byte-identical
//! output for identical inputs.

use gridnav_core::grid::OccupancyGrid;
use std::fmt::Write as _;

pub const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let escaped = content.replace('&', "&amp;").replace('<', "&lt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif">{escaped}</text>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Overlaid x-y curves with axes and a legend.
pub fn plot_curves(series: &[(String, Vec<(f64, f64)>)], y_label: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 45.0);
    let mut svg = Svg::new(w, h);
    let xs: Vec<f64> = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect();
    let xmax = xs.iter().cloned().fold(1.0f64, f64::max);
    let ymax = ys.iter().cloned().fold(1e-9f64, f64::max).max(1.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + x / xmax * pw;
    let sy = |y: f64| mt + (1.0 - y / (ymax * 1.05)) * ph;

    svg.line(ml, mt, ml, h - mb, "#000", 1.0);
    svg.line(ml, h - mb, w - mr, h - mb, "#000", 1.0);
    for k in 0..=5 {
        let y = ymax * 1.05 * k as f64 / 5.0;
        svg.line(ml - 4.0, sy(y), ml, sy(y), "#000", 1.0);
        svg.text(8.0, sy(y) + 4.0, 11.0, &format!("{y:.2}"));
        let x = xmax * k as f64 / 5.0;
        svg.line(sx(x), h - mb, sx(x), h - mb + 4.0, "#000", 1.0);
        svg.text(sx(x) - 12.0, h - mb + 18.0, 11.0, &format!("{x:.0}"));
    }
    svg.text(ml + pw / 2.0 - 25.0, h - 8.0, 12.0, "episode");
    svg.text(8.0, mt - 6.0, 12.0, y_label);

    for (i, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let scaled: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (sx(x), sy(y))).collect();
        svg.polyline(&scaled, color, 1.5);
        let ly = mt + 16.0 * i as f64 + 10.0;
        svg.line(w - mr - 130.0, ly - 4.0, w - mr - 110.0, ly - 4.0, color, 2.0);
        svg.text(w - mr - 105.0, ly, 11.0, label);
    }
    svg.finish()
}

/// Map background with agent paths; start marked by a green square and
/// the final position by a blue one.
pub fn plot_paths(grid: &OccupancyGrid, paths: &[(String, Vec<(f64, f64)>)]) -> String {
    let scale = 18.0;
    let w = grid.width_m() * scale;
    let h = grid.height_m() * scale;
    let mut svg = Svg::new(w, h + 20.0 * paths.len() as f64 + 8.0);
    // Row 0 is drawn at the bottom: flip y for display.
    let tx = |x: f64| x * scale;
    let ty = |y: f64| h - y * scale;
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if grid.occupied(r as i64, c as i64) {
                let (cx, cy) = grid.cell_center(r, c);
                let half = grid.cell_size() * scale / 2.0;
                svg.rect(tx(cx) - half, ty(cy) - half, 2.0 * half, 2.0 * half, "#444444");
            }
        }
    }
    let mark = 5.0;
    for (i, (label, pts)) in paths.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (tx(x), ty(y))).collect();
        svg.polyline(&scaled, color, 1.6);
        let (sx0, sy0) = scaled[0];
        let (gx, gy) = *scaled.last().unwrap();
        svg.rect(sx0 - mark, sy0 - mark, 2.0 * mark, 2.0 * mark, "#2ca02c");
        svg.rect(gx - mark, gy - mark, 2.0 * mark, 2.0 * mark, "#1f77b4");
        let ly = h + 14.0 + 20.0 * i as f64;
        svg.line(8.0, ly - 4.0, 28.0, ly - 4.0, color, 2.0);
        svg.text(32.0, ly, 11.0, label);
    }
    svg.finish()
}

/// Grouped bars: mean SPL and mean success per report.
pub fn plot_bars(entries: &[(String, f64, f64)]) -> String {
    let (w, h) = (120.0 + entries.len() as f64 * 140.0, 360.0);
    let (ml, mb, mt) = (60.0, 60.0, 30.0);
    let ph = h - mb - mt;
    let mut svg = Svg::new(w, h);
    svg.line(ml, mt, ml, h - mb, "#000", 1.0);
    svg.line(ml, h - mb, w - 10.0, h - mb, "#000", 1.0);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = h - mb - v * ph;
        svg.line(ml - 4.0, y, ml, y, "#000", 1.0);
        svg.text(22.0, y + 4.0, 11.0, &format!("{v:.1}"));
    }
    for (i, (label, spl, success)) in entries.iter().enumerate() {
        let x0 = ml + 30.0 + i as f64 * 140.0;
        let bar = 40.0;
        svg.rect(x0, h - mb - spl * ph, bar, spl * ph, PALETTE[1]);
        svg.rect(x0 + bar + 8.0, h - mb - success * ph, bar, success * ph, PALETTE[2]);
        svg.text(x0 - 2.0, h - mb - spl * ph - 5.0, 10.0, &format!("{spl:.2}"));
        svg.text(
            x0 + bar + 6.0,
            h - mb - success * ph - 5.0,
            10.0,
            &format!("{success:.2}"),
        );
        svg.text(x0, h - mb + 16.0, 11.0, label);
    }
    svg.text(ml + 10.0, mt - 10.0, 11.0, "SPL (blue) / success (green)");
    svg.finish()
}
