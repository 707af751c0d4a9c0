//! Minimal self-contained SVG figures: bar charts, a 2x2 heatmap and line
//! panels. No external assets, deterministic output.

use std::fmt::Write as _;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="#333" stroke-width="0.5"/>"##
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64) {
        let _ = writeln!(
            self.body,
            r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#333" stroke-width="1"/>"##
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, dashed: bool) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
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

/// Plot box inside a canvas.
#[derive(Clone, Copy)]
pub struct Frame {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Frame {
    fn axes(&self, c: &mut Canvas, title: &str) {
        c.line(self.x, self.y + self.h, self.x + self.w, self.y + self.h);
        c.line(self.x, self.y, self.x, self.y + self.h);
        c.text(self.x + self.w / 2.0, self.y - 8.0, 13.0, "middle", title);
    }
}

const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

/// Labelled bars with their counts printed above.
pub fn bars(c: &mut Canvas, f: Frame, title: &str, items: &[(String, f64)]) {
    f.axes(c, title);
    let max = items.iter().map(|i| i.1).fold(0.0, f64::max).max(1.0);
    let slot = f.w / items.len().max(1) as f64;
    for (k, (label, v)) in items.iter().enumerate() {
        let bh = v / max * (f.h - 16.0);
        let x = f.x + slot * k as f64 + slot * 0.15;
        c.rect(x, f.y + f.h - bh, slot * 0.7, bh, PALETTE[k % PALETTE.len()]);
        c.text(x + slot * 0.35, f.y + f.h - bh - 3.0, 10.0, "middle", &format!("{v}"));
        c.text(x + slot * 0.35, f.y + f.h + 13.0, 10.0, "middle", label);
    }
}

/// Histogram of (bucket, count) pairs with bucket labels every few bars.
pub fn histogram(c: &mut Canvas, f: Frame, title: &str, xlabel: &str, data: &[(usize, usize)]) {
    f.axes(c, title);
    let max = data.iter().map(|d| d.1).max().unwrap_or(1).max(1) as f64;
    let lo = data.first().map_or(0, |d| d.0);
    let hi = data.last().map_or(0, |d| d.0);
    let span = (hi - lo + 1) as f64;
    let bw = f.w / span;
    for &(b, n) in data {
        let bh = n as f64 / max * f.h;
        c.rect(f.x + (b - lo) as f64 * bw, f.y + f.h - bh, bw, bh, PALETTE[0]);
    }
    let step = ((span / 8.0).ceil() as usize).max(1);
    for b in (lo..=hi).step_by(step) {
        c.text(f.x + ((b - lo) as f64 + 0.5) * bw, f.y + f.h + 13.0, 10.0, "middle", &b.to_string());
    }
    c.text(f.x + f.w / 2.0, f.y + f.h + 28.0, 11.0, "middle", xlabel);
}

/// 2x2 confusion heatmap. `cells[r][c]` holds counts with rows = actual,
/// columns = predicted, class order (0, 1).
pub fn heatmap(c: &mut Canvas, f: Frame, title: &str, labels: [&str; 2], cells: [[u64; 2]; 2]) {
    c.text(f.x + f.w / 2.0, f.y - 8.0, 13.0, "middle", title);
    let max = cells.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let (cw, ch) = (f.w / 2.0, f.h / 2.0);
    for (r, row) in cells.iter().enumerate() {
        for (k, &n) in row.iter().enumerate() {
            let t = n as f64 / max;
            // white -> blue
            let shade = |base: f64| (255.0 - t * (255.0 - base)).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(31.0), shade(119.0), shade(180.0));
            let (x, y) = (f.x + k as f64 * cw, f.y + r as f64 * ch);
            c.rect(x, y, cw, ch, &fill);
            c.text(x + cw / 2.0, y + ch / 2.0 + 5.0, 16.0, "middle", &n.to_string());
        }
        c.text(f.x - 6.0, f.y + (r as f64 + 0.5) * ch, 11.0, "end", labels[r]);
    }
    for (k, l) in labels.iter().enumerate() {
        c.text(f.x + (k as f64 + 0.5) * cw, f.y + f.h + 15.0, 11.0, "middle", l);
    }
    c.text(f.x + f.w / 2.0, f.y + f.h + 30.0, 11.0, "middle", "predicted");
    c.text(f.x - 6.0, f.y - 8.0, 11.0, "end", "actual");
}

/// Line panel with one or more named series over x = 1..n. Missing points
/// (NaN) break nothing; they are skipped.
pub fn lines(c: &mut Canvas, f: Frame, title: &str, series: &[(&str, Vec<f64>)]) {
    f.axes(c, title);
    let finite = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    for (k, (name, ys)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = ys
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(i, y)| (f.x + i as f64 / (n - 1) as f64 * f.w, f.y + f.h - (y - lo) / (hi - lo) * f.h))
            .collect();
        c.polyline(&pts, PALETTE[k % PALETTE.len()], k % 2 == 1);
        c.text(f.x + f.w - 4.0, f.y + 14.0 + 14.0 * k as f64, 11.0, "end", name);
    }
    c.text(f.x - 4.0, f.y + 4.0, 10.0, "end", &format!("{hi:.3}"));
    c.text(f.x - 4.0, f.y + f.h, 10.0, "end", &format!("{lo:.3}"));
    c.text(f.x + f.w / 2.0, f.y + f.h + 15.0, 11.0, "middle", "epoch");
}
