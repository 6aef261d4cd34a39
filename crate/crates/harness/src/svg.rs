//! Static SVG line plots, rendered in-process with no timestamps or other
//! non-deterministic content: identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::{HarnessError, Result};

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub name: String,
    /// (x, y) points; in log-y mode points with y <= 0 are dropped.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PlotAxes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
}

pub fn emit_plot(series: &[PlotSeries], axes: &PlotAxes) -> Result<String> {
    if series.is_empty() {
        return Err(HarnessError::Config("plot needs at least one series".into()));
    }
    let transform = |y: f64| if axes.log_y { y.log10() } else { y };
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut any_point = false;
    for s in series {
        for &(x, y) in &s.points {
            if axes.log_y && y <= 0.0 {
                continue;
            }
            any_point = true;
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(transform(y));
            y_max = y_max.max(transform(y));
        }
    }
    if !any_point {
        return Err(HarnessError::Config("plot series contain no drawable points".into()));
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, ty: f64| {
        let px = MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let py = MARGIN_TOP + (y_max - ty) / (y_max - y_min) * plot_h;
        (px, py)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="28" font-family="sans-serif" font-size="18" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        xml_escape(&axes.title)
    );

    // frame
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black" stroke-width="1"/>"#
    );

    // x ticks
    for i in 0..=5 {
        let x = x_min + (x_max - x_min) * i as f64 / 5.0;
        let (px, _) = to_px(x, y_min);
        let y0 = MARGIN_TOP + plot_h;
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0:.1}" x2="{px:.2}" y2="{:.1}" stroke="black" stroke-width="1"/>"#,
            y0 + 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            y0 + 22.0,
            format_tick(x)
        );
    }
    // y ticks
    for i in 0..=5 {
        let ty = y_min + (y_max - y_min) * i as f64 / 5.0;
        let py = MARGIN_TOP + (y_max - ty) / (y_max - y_min) * plot_h;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black" stroke-width="1"/>"#,
            MARGIN_LEFT - 6.0
        );
        let value = if axes.log_y { 10f64.powf(ty) } else { ty };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 10.0,
            py + 4.0,
            format_tick(value)
        );
    }
    // axis labels
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        xml_escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="22" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 22 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        xml_escape(&axes.y_label)
    );

    // one polyline per series, palette cycling in roster order
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            if axes.log_y && y <= 0.0 {
                continue;
            }
            let (px, py) = to_px(x, transform(y));
            let _ = write!(path, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.trim_end()
        );
        // legend entry
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 20.0;
        let lx = WIDTH - MARGIN_RIGHT + 16.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"#,
            lx + 26.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13">{}</text>"#,
            lx + 32.0,
            ly + 4.0,
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
