//! Minimal standalone SVG line charts.

use std::fmt::Write;

use crate::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One x column shared by one or more named y columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub x: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    /// Axis labels including units, e.g. `"time (days)"`.
    pub x_label: String,
    pub y_label: String,
    /// Dashed vertical marker, e.g. a train/test split.
    pub marker_x: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// `[lo, hi]` widened when degenerate.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// Renders a line chart with one polyline per y column and a legend.
pub fn emit_plot(series: &Series, style: &PlotStyle) -> Result<String, CliError> {
    let n = series.x.len();
    if n == 0 || series.columns.is_empty() {
        return Err(CliError::Domain("cannot plot an empty series".into()));
    }
    for (name, ys) in &series.columns {
        if ys.len() != n {
            return Err(CliError::Domain(format!(
                "column `{name}` has {} values for {n} x values",
                ys.len()
            )));
        }
    }
    let all_finite = series
        .x
        .iter()
        .chain(series.columns.iter().flat_map(|c| c.1.iter()))
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(CliError::Domain("plot values must be finite".into()));
    }

    let (x0, x1) = range(series.x.iter().copied());
    let (y0, y1) = range(series.columns.iter().flat_map(|c| c.1.iter().copied()));
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        escape(&style.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + ph,
            MARGIN_TOP + ph + 5.0,
            MARGIN_TOP + ph + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        escape(&style.y_label)
    );

    if let Some(m) = style.marker_x.filter(|m| (x0..=x1).contains(m)) {
        let px = sx(m);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{MARGIN_TOP}" x2="{px:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="5,4"/>"#,
            MARGIN_TOP + ph
        );
    }

    for (k, (name, ys)) in series.columns.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = series
            .x
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 20.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 25.0,
            lx + 32.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn style() -> PlotStyle {
        PlotStyle {
            title: "t".into(),
            x_label: "time (days)".into(),
            y_label: "volume (mm³)".into(),
            marker_x: None,
        }
    }

    #[test]
    fn two_point_series_has_one_polyline_with_two_vertices() {
        let s = Series {
            x: vec![0.0, 1.0],
            columns: vec![("v".into(), vec![1.0, 2.0])],
        };
        let svg = emit_plot(&s, &style()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }

    #[test]
    fn two_columns_give_two_polylines_and_legend_entries() {
        let s = Series {
            x: vec![0.0, 1.0, 2.0],
            columns: vec![("a".into(), vec![1.0, 2.0, 3.0]), ("b".into(), vec![3.0, 2.0, 1.0])],
        };
        let svg = emit_plot(&s, &style()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains("time (days)") && svg.contains("volume (mm³)"));
        assert_eq!(svg, emit_plot(&s, &style()).unwrap());
    }

    #[test]
    fn empty_or_ragged_series_is_rejected() {
        let empty = Series {
            x: vec![],
            columns: vec![("a".into(), vec![])],
        };
        assert!(emit_plot(&empty, &style()).is_err());
        let ragged = Series {
            x: vec![0.0, 1.0],
            columns: vec![("a".into(), vec![1.0])],
        };
        assert!(emit_plot(&ragged, &style()).is_err());
    }

    #[test]
    fn constant_series_and_marker() {
        let s = Series {
            x: vec![0.0, 1.0],
            columns: vec![("a".into(), vec![5.0, 5.0])],
        };
        let mut st = style();
        st.marker_x = Some(0.5);
        let svg = emit_plot(&s, &st).unwrap();
        assert!(svg.contains("stroke-dasharray"));
        assert!(!svg.contains("NaN"));
    }
}
