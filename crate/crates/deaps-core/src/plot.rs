//! Minimal deterministic SVG charts.
//!
//! Reports need a handful of line charts and score-density plots, nothing
//! more, so this renders them directly as strings. Output depends only on
//! the inputs, which keeps generated files diffable across runs.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// A named polyline for [`line_chart`].
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A named sample set for [`density_chart`].
#[derive(Debug, Clone)]
pub struct DensityGroup {
    pub label: String,
    pub values: Vec<f64>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Compact tick label: up to four decimals with trailing zeros trimmed.
fn fmt_tick(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Pads a degenerate range so scaling never divides by zero.
fn pad_range(min: f64, max: f64) -> (f64, f64) {
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    if max > min {
        (min, max)
    } else {
        (min - 1.0, max + 1.0)
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn sx(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min)
            * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min)
                * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Opens the document and draws title, axes, grid, ticks, and axis labels.
fn chart_skeleton(title: &str, x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    let ticks = 5usize;
    for k in 0..=ticks {
        let f = k as f64 / ticks as f64;
        let xv = frame.x_min + f * (frame.x_max - frame.x_min);
        let yv = frame.y_min + f * (frame.y_max - frame.y_min);
        let px = frame.sx(xv);
        let py = frame.sy(yv);
        s.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_TOP,
            HEIGHT - MARGIN_BOTTOM
        ));
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        ));
        s.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 16.0,
            fmt_tick(xv)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            py + 4.0,
            fmt_tick(yv)
        ));
    }

    s.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"#333333\"/>\n",
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    let ly = (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0;
    s.push_str(&format!(
        "<text x=\"18\" y=\"{ly:.2}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 18 {ly:.2})\">{}</text>\n",
        escape(y_label)
    ));
    s
}

fn legend(labels: &[&str]) -> String {
    let mut s = String::new();
    let x = WIDTH - MARGIN_RIGHT - 150.0;
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            x + 22.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
            x + 28.0,
            y + 4.0,
            escape(label)
        ));
    }
    s
}

/// Renders one or more series as polylines with point markers.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (x_min, x_max) = pad_range(
        xs.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_min, y_max) = pad_range(
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let frame = Frame { x_min, x_max, y_min, y_max };

    let mut svg = chart_skeleton(title, x_label, y_label, &frame);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                frame.sx(x),
                frame.sy(y)
            ));
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    svg.push_str(&legend(&labels));
    svg.push_str("</svg>\n");
    svg
}

/// Silverman's rule of thumb, with fallbacks for degenerate samples.
fn bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = quantile(0.75) - quantile(0.25);

    let spread = if iqr > 0.0 {
        sigma.min(iqr / 1.34)
    } else {
        sigma
    };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Renders Gaussian kernel density estimates of each group as filled curves.
pub fn density_chart(title: &str, x_label: &str, groups: &[DensityGroup]) -> String {
    let all = groups.iter().flat_map(|g| g.values.iter().copied());
    let (lo, hi) = pad_range(
        all.clone().fold(f64::INFINITY, f64::min),
        all.fold(f64::NEG_INFINITY, f64::max),
    );
    let widths: Vec<f64> = groups.iter().map(|g| bandwidth(&g.values)).collect();
    let max_h = widths.iter().copied().fold(0.0, f64::max);
    let (x_min, x_max) = (lo - 3.0 * max_h, hi + 3.0 * max_h);

    const GRID: usize = 200;
    let mut curves: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut peak = 0.0f64;
    for (g, &h) in groups.iter().zip(&widths) {
        let mut curve = Vec::with_capacity(GRID + 1);
        for k in 0..=GRID {
            let x = x_min + (x_max - x_min) * k as f64 / GRID as f64;
            let mut dens = 0.0;
            if !g.values.is_empty() {
                for &v in &g.values {
                    let u = (x - v) / h;
                    dens += (-0.5 * u * u).exp();
                }
                dens /= g.values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt();
            }
            peak = peak.max(dens);
            curve.push((x, dens));
        }
        curves.push(curve);
    }
    let y_max = if peak > 0.0 { peak * 1.05 } else { 1.0 };
    let frame = Frame { x_min, x_max, y_min: 0.0, y_max };

    let mut svg = chart_skeleton(title, x_label, "density", &frame);
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<String> = curve
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
            .collect();
        // Close the polygon along the baseline.
        pts.push(format!("{:.2},{:.2}", frame.sx(x_max), frame.sy(0.0)));
        pts.push(format!("{:.2},{:.2}", frame.sx(x_min), frame.sy(0.0)));
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.35\" \
             stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    let labels: Vec<&str> = groups.iter().map(|g| g.label.as_str()).collect();
    svg.push_str(&legend(&labels));
    svg.push_str("</svg>\n");
    svg
}
