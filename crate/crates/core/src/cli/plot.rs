//! Minimal SVG bar and line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#4477aa", "#ee6677", "#228833", "#ccbb44"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_max(series: &[Series]) -> f64 {
    let m = series.iter().flat_map(|s| &s.values).filter(|v| v.is_finite()).fold(0.0f64, |a, &b| a.max(b));
    if m > 0.0 {
        m * 1.1
    } else {
        1.0
    }
}

fn frame(title: &str, y_label: &str, top: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, y1) = (LEFT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>", WIDTH - RIGHT);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for t in 0..=4 {
        let v = top * t as f64 / 4.0;
        let y = y0 - (y0 - y1) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{v:.1}</text>",
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn legend(s: &mut String, series: &[Series]) {
    for (k, ser) in series.iter().enumerate() {
        let x = WIDTH - RIGHT - 150.0;
        let y = TOP + 14.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
            y - 9.0,
            COLORS[k % COLORS.len()],
            x + 14.0,
            y,
            escape(&ser.name)
        );
    }
}

fn y_of(v: f64, top: f64) -> f64 {
    let v = if v.is_finite() { v } else { 0.0 };
    HEIGHT - BOTTOM - (HEIGHT - BOTTOM - TOP) * v / top
}

/// Grouped bars, one group per label.
pub fn bar_chart_svg(title: &str, labels: &[String], series: &[Series], y_label: &str) -> String {
    let top = y_max(series);
    let mut s = frame(title, y_label, top);
    let plot_w = WIDTH - LEFT - RIGHT;
    let group_w = plot_w / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let gx = LEFT + group_w * g as f64 + group_w * 0.1;
        for (k, ser) in series.iter().enumerate() {
            let v = ser.values.get(g).copied().unwrap_or(f64::NAN);
            let y = y_of(v, top);
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                gx + bar_w * k as f64,
                HEIGHT - BOTTOM - y,
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            gx + group_w * 0.4,
            HEIGHT - BOTTOM + 16.0,
            escape(label)
        );
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// One polyline per series over shared x values.
pub fn line_chart_svg(title: &str, x_label: &str, xs: &[f64], series: &[Series], y_label: &str) -> String {
    let top = y_max(series);
    let mut s = frame(title, y_label, top);
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |x: f64| LEFT + 20.0 + (WIDTH - LEFT - RIGHT - 40.0) * (x - lo) / span;
    for &x in xs {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{x}</text>",
            x_of(x),
            HEIGHT - BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> =
            xs.iter().zip(&ser.values).map(|(&x, &v)| format!("{:.1},{:.1}", x_of(x), y_of(v, top))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>");
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}
